use serde::{Deserialize, Serialize};

use super::{Param, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected first and second moment estimates. Moment
/// buffers are matched to parameters by visiting order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter handed to `visit`,
    /// then zeroes all gradients.
    pub fn step<S: Scalar>(&mut self, lr: f64, visit: impl FnOnce(&mut dyn FnMut(&str, &mut Param<S>))) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let mut slot = 0;
        let moments = &mut self.moments;
        visit(&mut |_name, p| {
            if !p.trainable {
                p.zero_grad();
                return;
            }
            if moments.len() == slot {
                moments.push((vec![0.0; p.value.len()], vec![0.0; p.value.len()]));
            }
            let (m, v) = &mut moments[slot];
            assert_eq!(m.len(), p.value.len(), "parameter order changed between steps");
            for i in 0..p.value.len() {
                let g = p.grad[i].as_f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                p.value[i] -= S::of_f64(update);
            }
            p.zero_grad();
            slot += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut p = Param::<f64>::new(&[3], vec![1.0, 2.0, 3.0]);
        p.grad = vec![0.5, -2.0, 0.0];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(0.1, |f| f("p", &mut p));
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] - 2.1).abs() < 1e-6);
        assert_eq!(p.value[2], 3.0);
        assert!(p.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::<f64>::new(&[2], vec![3.0, -4.0]);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..2000 {
            p.grad = p.value.iter().map(|v| 2.0 * v).collect();
            adam.step(0.05, |f| f("p", &mut p));
        }
        assert!(p.value.iter().all(|v| v.abs() < 1e-2), "{:?}", p.value);
    }

    #[test]
    fn buffers_are_left_alone() {
        let mut b = Param::<f64>::buffer(&[1], 5.0);
        b.grad = vec![1.0];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(0.1, |f| f("b", &mut b));
        assert_eq!(b.value, vec![5.0]);
    }
}
