//! Adam optimizer over flat parameter slices.

/// Adaptive-moment gradient descent. Moment buffers are allocated lazily on
/// the first step and keyed by position, so the same parameter walk order
/// must be used on every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update step. `params[i]` and `grads[i]` must be the same tensor
    /// across calls (same walk order, same lengths).
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]]) {
        assert_eq!(params.len(), grads.len(), "param/grad walk mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.t as i32);
        let lr_t = self.lr as f64 * bc2.sqrt() / bc1;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), g.len(), "param/grad length mismatch");
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p[i] -= (lr_t * m[i] as f64 / ((v[i] as f64).sqrt() + self.eps as f64)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Adam on a quadratic bowl converges toward the minimum.
    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![5.0f32, -3.0];
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            let g: Vec<f32> = p.iter().map(|&x| 2.0 * x).collect();
            opt.step(&mut [&mut p[..]], &[&g[..]]);
        }
        assert!(p.iter().all(|&x| x.abs() < 1e-2), "did not converge: {p:?}");
    }

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction, the first Adam step has magnitude ~lr
        let mut p = vec![1.0f32];
        let mut opt = Adam::new(0.05, 0.9, 0.999);
        opt.step(&mut [&mut p[..]], &[&[0.3f32][..]]);
        assert!((p[0] - (1.0 - 0.05)).abs() < 1e-3, "step was {}", 1.0 - p[0]);
    }
}
