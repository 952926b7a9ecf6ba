//! Adaptive-moment (Adam) optimizer.
//!
//! One instance spans every trainable parameter (backbone plus sampler);
//! moment buffers are keyed positionally against the update order, which the
//! trainer keeps stable. Shadow parameters never enter the optimizer.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step_count: u64,
    pub first_moments: Vec<Mat<T>>,
    pub second_moments: Vec<Mat<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step_count: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
        }
    }

    /// Applies one update to `(parameter, gradient)` pairs. Moment buffers
    /// are allocated on the first call and must stay congruent afterwards.
    pub fn step(&mut self, params_and_grads: &mut [(&mut Mat<T>, &Mat<T>)]) -> Result<()> {
        if self.first_moments.is_empty() {
            for (p, _) in params_and_grads.iter() {
                self.first_moments.push(Mat::zeros(p.rows(), p.cols()));
                self.second_moments.push(Mat::zeros(p.rows(), p.cols()));
            }
        }
        if self.first_moments.len() != params_and_grads.len() {
            return Err(Error::shape(
                "optimizer slots",
                self.first_moments.len(),
                params_and_grads.len(),
            ));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = T::from_f64(self.cfg.learning_rate);
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let eps = T::from_f64(self.cfg.epsilon);
        let wd = T::from_f64(self.cfg.weight_decay);
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);

        for (i, (param, grad)) in params_and_grads.iter_mut().enumerate() {
            if param.shape() != grad.shape() || param.shape() != self.first_moments[i].shape() {
                return Err(Error::shape(
                    "optimizer gradient shape",
                    format!("{:?}", param.shape()),
                    format!("{:?}", grad.shape()),
                ));
            }
            let m = &mut self.first_moments[i];
            let v = &mut self.second_moments[i];
            for k in 0..param.len() {
                let p = param.data()[k];
                let mut g = grad.data()[k];
                if wd != T::zero() {
                    g = g + wd * p;
                }
                let mk = b1 * m.data()[k] + (T::one() - b1) * g;
                let vk = b2 * v.data()[k] + (T::one() - b2) * g * g;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let m_hat = mk / bias1;
                let v_hat = vk / bias2;
                param.data_mut()[k] = p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_bitwise_unchanged() {
        let mut adam: Adam<f32> = Adam::new(AdamConfig::default());
        let mut p = Mat::from_vec(1, 3, vec![1.5f32, -2.25, 0.125]);
        let before = p.clone();
        let g = Mat::zeros(1, 3);
        for _ in 0..5 {
            adam.step(&mut [(&mut p, &g)]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut adam: Adam<f64> = Adam::new(AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        });
        let mut p = Mat::scalar(4.0);
        for _ in 0..2000 {
            let g = Mat::scalar(2.0 * (p.item() - 1.0));
            adam.step(&mut [(&mut p, &g)]).unwrap();
        }
        assert!((p.item() - 1.0).abs() < 1e-3, "ended at {}", p.item());
    }

    #[test]
    fn slot_count_is_enforced_after_first_step() {
        let mut adam: Adam<f64> = Adam::new(AdamConfig::default());
        let mut a = Mat::zeros(2, 2);
        let mut b = Mat::zeros(1, 2);
        let ga = Mat::zeros(2, 2);
        let gb = Mat::zeros(1, 2);
        adam.step(&mut [(&mut a, &ga), (&mut b, &gb)]).unwrap();
        assert!(matches!(
            adam.step(&mut [(&mut a, &ga)]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn weight_decay_shrinks_parameters() {
        let mut adam: Adam<f64> = Adam::new(AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        });
        let mut p = Mat::scalar(1.0);
        let g = Mat::scalar(0.0);
        adam.step(&mut [(&mut p, &g)]).unwrap();
        assert!(p.item() < 1.0);
    }
}
