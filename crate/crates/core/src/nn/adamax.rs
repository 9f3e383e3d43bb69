use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamaxConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adamax: Adam with the second moment replaced by an exponentially weighted
/// infinity norm.
///
/// ```text
/// m_t = beta1 m + (1 - beta1) g
/// u_t = max(beta2 u, |g| + eps)
/// p  -= lr / (1 - beta1^t) * m_t / u_t
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adamax {
    pub config: AdamaxConfig,
    first_moment: Vec<Array2<f64>>,
    inf_norm: Vec<Array2<f64>>,
    step: u64,
}

impl Adamax {
    pub fn new(config: AdamaxConfig) -> Self {
        Self {
            config,
            first_moment: Vec::new(),
            inf_norm: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn inf_norm(&self) -> &[Array2<f64>] {
        &self.inf_norm
    }

    /// Apply one update. `params` and `grads` must line up one-to-one and keep
    /// the same order and shapes from step to step.
    pub fn step(&mut self, params: Vec<(String, &mut Array2<f64>)>, grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!(
                    "{name}: parameter {:?} vs gradient {:?}",
                    p.dim(),
                    g.dim()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
            self.inf_norm = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
        } else if self.first_moment.len() != grads.len() {
            return Err(Error::State("parameter list changed between steps".into()));
        }

        self.step += 1;
        let AdamaxConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let step_size = learning_rate / (1.0 - beta1.powi(self.step as i32));
        for (i, (_, p)) in params.into_iter().enumerate() {
            Zip::from(p)
                .and(&grads[i])
                .and(&mut self.first_moment[i])
                .and(&mut self.inf_norm[i])
                .for_each(|p, &g, m, u| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *u = (beta2 * *u).max(g.abs() + eps);
                    *p -= step_size * *m / *u;
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn one(p: &mut Array2<f64>) -> Vec<(String, &mut Array2<f64>)> {
        vec![("w".to_string(), p)]
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = array![[1.0, -2.0, 3.5]];
        let before = p.clone();
        let mut opt = Adamax::new(AdamaxConfig::default());
        for _ in 0..10 {
            opt.step(one(&mut p), &[Array2::zeros((1, 3))]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(opt.steps(), 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // By hand: m = (1-b1) g, mhat = g, u = |g| + eps, update = lr g / (|g| + eps).
        let lr = 1e-3;
        let eps = 1e-8;
        let g = array![[0.5, -4.0, 1e-3]];
        let mut p = Array2::zeros((1, 3));
        let mut opt = Adamax::new(AdamaxConfig::default());
        opt.step(one(&mut p), &[g.clone()]).unwrap();
        for (pv, gv) in p.iter().zip(g.iter()) {
            let expected = -lr * gv / (gv.abs() + eps);
            assert!((pv - expected).abs() < 1e-15, "{pv} vs {expected}");
            assert!((pv.abs() - lr).abs() < lr * 1e-4);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut p = array![[1.0, 2.0]];
        let mut opt = Adamax::new(AdamaxConfig {
            learning_rate: 0.0,
            ..AdamaxConfig::default()
        });
        opt.step(one(&mut p), &[array![[3.0, -1.0]]]).unwrap();
        assert_eq!(p, array![[1.0, 2.0]]);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = array![[1.0]];
        let mut opt = Adamax::new(AdamaxConfig::default());
        let err = opt
            .step(vec![("layer3.weight".into(), &mut p)], &[array![[f64::NAN]]])
            .unwrap_err();
        assert!(err.to_string().contains("layer3.weight"));
        assert_eq!(p, array![[1.0]]);
    }

    proptest! {
        #[test]
        fn inf_norm_nonnegative_and_nondecreasing_without_decay(
            grads in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 1..20)
        ) {
            let mut p = Array2::zeros((1, 4));
            let mut opt = Adamax::new(AdamaxConfig { beta2: 1.0, ..AdamaxConfig::default() });
            let mut prev = Array2::<f64>::zeros((1, 4));
            for g in grads {
                let g = Array2::from_shape_vec((1, 4), g).unwrap();
                opt.step(one(&mut p), &[g]).unwrap();
                let u = &opt.inf_norm()[0];
                for (a, b) in u.iter().zip(prev.iter()) {
                    prop_assert!(*a >= 0.0);
                    prop_assert!(a >= b);
                }
                prev = u.clone();
            }
        }
    }
}
