//! Metrics and experiment protocols: accuracy/PSNR/MAE/generalizability,
//! the defense table, generalizability matrix, cross-model transfer,
//! robustness sweep, and the residual-block ablation.

mod metrics;
mod plots;
mod protocols;
mod report;

pub use metrics::{accuracy, generalizability, mae, predict_all, psnr, PsnrStats};
pub use plots::{line_chart, Series};
pub use protocols::{
    ablation_figures, ablation_residual_blocks, build_combined_pairs, cross_model_transfer,
    default_sweep_grids, defense_table, generalizability_matrix, robustness_sweep, table_attacks,
    AblationArm, AblationReport, AblationTiming, EvalContext, GeneralizabilityMatrix, SweepCell,
    SweepReport,
};
pub use report::{EvaluationReport, Provenance, ReportRow, TensorPath};
