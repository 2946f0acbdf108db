//! Static SVG figures: line charts for robustness sweeps, loss curves, and
//! ablation summaries.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{AdvError, Result};

/// One named line of `(x, y)` points.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// Renders a multi-series line chart to an SVG file. Output is a pure
/// function of the inputs.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    y_range: Option<(f64, f64)>,
) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(AdvError::Config("line_chart: no data to plot".into()));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let points = series.iter().flat_map(|s| s.points.iter());
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if let Some((lo, hi)) = y_range {
        y_min = lo;
        y_max = hi;
    } else {
        let pad = ((y_max - y_min) * 0.08).max(1e-9);
        y_min -= pad;
        y_max += pad;
    }
    if x_min == x_max {
        x_min -= 0.5;
        x_max += 0.5;
    }

    let root = SVGBackend::new(path, (760, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| AdvError::Data(format!("plot: {e}")))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(x_min..x_max, y_min..y_max)
        .map_err(|e| AdvError::Data(format!("plot: {e}")))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(|e| AdvError::Data(format!("plot: {e}")))?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| AdvError::Data(format!("plot: {e}")))?
            .label(s.name.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
        chart
            .draw_series(
                s.points.iter().map(|&(x, y)| Circle::new((x, y), 3, color.filled())),
            )
            .map_err(|e| AdvError::Data(format!("plot: {e}")))?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(|e| AdvError::Data(format!("plot: {e}")))?;
    root.present().map_err(|e| AdvError::Data(format!("plot: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_renders_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let series = vec![
            Series { name: "a".into(), points: vec![(1.0, 90.0), (2.0, 92.0), (3.0, 91.0)] },
            Series { name: "b".into(), points: vec![(1.0, 50.0), (2.0, 55.0), (3.0, 52.0)] },
        ];
        let p1 = dir.path().join("c1.svg");
        let p2 = dir.path().join("c2.svg");
        line_chart(&p1, "t", "x", "y", &series, Some((0.0, 100.0))).unwrap();
        line_chart(&p2, "t", "x", "y", &series, Some((0.0, 100.0))).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        assert!(!b1.is_empty());
        assert_eq!(b1, std::fs::read(&p2).unwrap());
    }

    #[test]
    fn empty_series_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(line_chart(&dir.path().join("x.svg"), "t", "x", "y", &[], None).is_err());
    }
}
