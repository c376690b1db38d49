use crate::error::{shape_err, Result};

/// Adam hyperparameters. Defaults: lr 4e-4, no weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction. Moment buffers are laid out like the parameter
/// list passed to [`Adam::new`].
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Changes the step size for later updates; moment estimates are kept.
    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter. `grads[i]` may be `None` for a
    /// parameter that received no gradient; it is treated as zero.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return shape_err(
                "adam",
                format!(
                    "{} params / {} grads for {} slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            );
        }
        for (i, p) in params.iter().enumerate() {
            let ok = p.len() == self.m[i].len() && grads[i].is_none_or(|g| g.len() == p.len());
            if !ok {
                return shape_err("adam", format!("parameter {i} size mismatch"));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                let mut g = grads[i].map_or(0.0, |g| g[k]);
                if weight_decay != 0.0 {
                    g += weight_decay * p[k];
                }
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut adam = Adam::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        adam.step(&mut [&mut p], &[Some(&[0.0, 0.0, 0.0])]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so Δ = −lr·g/(|g| + ε).
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg, &[2]);
        let mut p = vec![0.0, 0.0];
        let g = [2.5, -0.01];
        adam.step(&mut [&mut p], &[Some(&g)]).unwrap();
        for (pv, gv) in p.iter().zip(g) {
            let want = -cfg.lr * gv / (gv.abs() + cfg.eps);
            assert!((pv - want).abs() < 1e-15);
            assert!((pv.abs() - cfg.lr).abs() < 1e-9);
        }
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            &[1],
        );
        let mut w = vec![0.0];
        for _ in 0..200 {
            let g = [2.0 * (w[0] - 3.0)];
            adam.step(&mut [&mut w], &[Some(&g)]).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 0.05, "w = {}", w[0]);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.0; 3];
        assert!(adam.step(&mut [&mut p], &[None]).is_err());
    }
}
