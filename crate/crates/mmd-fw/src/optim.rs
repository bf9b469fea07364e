//! First-order optimizers shared by the MAP search, the LMO inner loop and
//! the baselines.

/// Adam hyperparameters. The default learning rate of 0.005 is the one used
/// throughout the experiment configurations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Adam state for one parameter vector. `step` moves `x` in the direction
/// that *decreases* the objective whose gradient is passed in.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, dim: usize) -> Self {
        Adam {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(x.len(), grad.len());
        debug_assert_eq!(x.len(), self.m.len());
        let c = &self.config;
        self.t += 1;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            x[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.05), 2);
        for _ in 0..2000 {
            let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            adam.step(&mut x, &grad);
        }
        assert!(x[0].abs() < 1e-3, "x = {x:?}");
        assert!(x[1].abs() < 1e-3, "x = {x:?}");
    }

    #[test]
    fn adam_step_size_is_bounded_by_learning_rate() {
        let mut x = vec![0.0];
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.01), 1);
        let before = x[0];
        adam.step(&mut x, &[1e6]);
        // Adam normalizes by the gradient scale, so one step moves at most ~lr.
        assert!((x[0] - before).abs() < 0.011);
    }
}
