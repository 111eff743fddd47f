//! AdamW: Adam moments with decoupled weight decay.
//!
//! Update per parameter, after incrementing the step counter:
//!
//! ```text
//! m = b1*m + (1-b1)*g          v = b2*v + (1-b2)*g^2
//! m_hat = m / (1 - b1^t)       v_hat = v / (1 - b2^t)
//! theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "bad AdamW settings: {self:?}"
            )))
        }
    }
}

/// One named parameter block paired with its gradient for an optimizer step.
pub struct ParamBlockMut<'a> {
    pub name: &'a str,
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
}

struct BlockMoments {
    name: String,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Per-parameter first/second moments plus the step counter. Built against a
/// fixed list of named blocks; every later step must present the same blocks
/// in the same order.
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    moments: Vec<BlockMoments>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, blocks: &[(String, usize)]) -> Result<Self> {
        config.validate()?;
        let moments = blocks
            .iter()
            .map(|(name, len)| BlockMoments {
                name: name.clone(),
                m: vec![0.0; *len],
                v: vec![0.0; *len],
            })
            .collect();
        Ok(Self {
            config,
            step: 0,
            moments,
        })
    }

    /// Applies one decoupled-weight-decay update to every block.
    ///
    /// A non-finite gradient entry aborts before touching any parameter and
    /// names the offending block.
    pub fn step(&mut self, blocks: &mut [ParamBlockMut<'_>]) -> Result<()> {
        if blocks.len() != self.moments.len() {
            return Err(Error::ShapeMismatch {
                context: "AdamWState::step",
                expected: format!("{} blocks", self.moments.len()),
                actual: format!("{} blocks", blocks.len()),
            });
        }
        for (block, st) in blocks.iter().zip(&self.moments) {
            if block.name != st.name || block.values.len() != st.m.len() {
                return Err(Error::ShapeMismatch {
                    context: "AdamWState::step",
                    expected: format!("block `{}` of {} values", st.name, st.m.len()),
                    actual: format!("block `{}` of {} values", block.name, block.values.len()),
                });
            }
            if block.grad.len() != block.values.len() {
                return Err(Error::ShapeMismatch {
                    context: "AdamWState::step",
                    expected: format!("gradient of {} values", block.values.len()),
                    actual: format!("gradient of {} values", block.grad.len()),
                });
            }
            if !block.grad.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: block.name.to_string(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);

        for (block, st) in blocks.iter_mut().zip(&mut self.moments) {
            for ((theta, &g), (m, v)) in block
                .values
                .iter_mut()
                .zip(block.grad)
                .zip(st.m.iter_mut().zip(st.v.iter_mut()))
            {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *theta -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps)
                    + c.learning_rate * c.weight_decay * *theta;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_block_state(cfg: AdamWConfig, len: usize) -> AdamWState {
        AdamWState::new(cfg, &[("w".to_string(), len)]).unwrap()
    }

    #[test]
    fn zero_gradient_applies_pure_weight_decay() {
        let cfg = AdamWConfig {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            ..AdamWConfig::default()
        };
        let mut state = single_block_state(cfg, 1);
        let mut theta = [1.0];
        let grad = [0.0];
        state
            .step(&mut [ParamBlockMut {
                name: "w",
                values: &mut theta,
                grad: &grad,
            }])
            .unwrap();
        assert!((theta[0] - 0.999999).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_parameter_against_it() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut state = single_block_state(cfg, 1);
        let mut theta = [0.0];
        let grad = [2.5];
        for _ in 0..50 {
            state
                .step(&mut [ParamBlockMut {
                    name: "w",
                    values: &mut theta,
                    grad: &grad,
                }])
                .unwrap();
        }
        assert!(theta[0] < 0.0);
    }

    #[test]
    fn degenerates_to_scaled_sign_step_with_zero_betas() {
        // With wd=0 and beta1=beta2=0: step = lr * g / (|g| + eps).
        let cfg = AdamWConfig {
            learning_rate: 0.5,
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        for &g in &[3.0f64, -0.2, 1e-3] {
            let mut state = single_block_state(cfg, 1);
            let mut theta = [1.0];
            let grad = [g];
            state
                .step(&mut [ParamBlockMut {
                    name: "w",
                    values: &mut theta,
                    grad: &grad,
                }])
                .unwrap();
            let expected = 1.0 - 0.5 * g / (g.abs() + 1e-8);
            assert!((theta[0] - expected).abs() < 1e-15, "g={g}");
        }
    }

    #[test]
    fn blocks_update_independently() {
        let cfg = AdamWConfig::default();
        let mut joint =
            AdamWState::new(cfg, &[("a".to_string(), 2), ("b".to_string(), 3)]).unwrap();
        let mut a = [1.0, -2.0];
        let mut b = [0.5, 0.0, 3.0];
        let ga = [0.1, -0.4];
        let gb = [1.0, 0.0, -2.0];
        joint
            .step(&mut [
                ParamBlockMut {
                    name: "a",
                    values: &mut a,
                    grad: &ga,
                },
                ParamBlockMut {
                    name: "b",
                    values: &mut b,
                    grad: &gb,
                },
            ])
            .unwrap();

        let mut sa = single_block_state(cfg, 2);
        let mut a2 = [1.0, -2.0];
        sa.step(&mut [ParamBlockMut {
            name: "w",
            values: &mut a2,
            grad: &ga,
        }])
        .unwrap();
        let mut sb = single_block_state(cfg, 3);
        let mut b2 = [0.5, 0.0, 3.0];
        sb.step(&mut [ParamBlockMut {
            name: "w",
            values: &mut b2,
            grad: &gb,
        }])
        .unwrap();

        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn non_finite_gradient_names_the_block() {
        let mut state =
            AdamWState::new(AdamWConfig::default(), &[("pe.dense1.w".to_string(), 1)]).unwrap();
        let mut theta = [1.0];
        let grad = [f64::NAN];
        let err = state
            .step(&mut [ParamBlockMut {
                name: "pe.dense1.w",
                values: &mut theta,
                grad: &grad,
            }])
            .unwrap_err();
        match err {
            Error::NonFiniteGradient { block } => assert_eq!(block, "pe.dense1.w"),
            other => panic!("unexpected error: {other}"),
        }
        // Parameter untouched on failure.
        assert_eq!(theta[0], 1.0);
    }
}
