//! Gradient-ascent update rules over a list of flat parameter blocks.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    PlainSgd,
    #[default]
    AdaptiveMoments,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        MomentConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Ascent optimizer with per-block state. Blocks are matched by position on
/// every call, so callers must pass them in a fixed order.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        cfg: MomentConfig,
        step: i32,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, cfg: MomentConfig) -> Self {
        match kind {
            OptimizerKind::PlainSgd => Optimizer::Sgd { learning_rate },
            OptimizerKind::AdaptiveMoments => Optimizer::Adam {
                learning_rate,
                cfg,
                step: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
        }
    }

    /// One ascent step: `params[b] += update(grads[b])` for every block.
    pub fn ascend(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient block count");
        match self {
            Optimizer::Sgd { learning_rate } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, dx) in p.iter_mut().zip(g) {
                        *x += *learning_rate * dx;
                    }
                }
            }
            Optimizer::Adam {
                learning_rate,
                cfg,
                step,
                m,
                v,
            } => {
                if m.is_empty() {
                    *m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    *v = m.clone();
                }
                *step += 1;
                let bias1 = 1.0 - cfg.beta1.powi(*step);
                let bias2 = 1.0 - cfg.beta2.powi(*step);
                for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (mb, vb) = (&mut m[b], &mut v[b]);
                    for i in 0..g.len() {
                        mb[i] = cfg.beta1 * mb[i] + (1.0 - cfg.beta1) * g[i];
                        vb[i] = cfg.beta2 * vb[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                        let m_hat = mb[i] / bias1;
                        let v_hat = vb[i] / bias2;
                        p[i] += *learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(OptimizerKind::PlainSgd, 0.5, MomentConfig::default());
        let mut x = vec![1.0, 2.0];
        opt.ascend(&mut [&mut x], &[vec![2.0, -4.0]]);
        assert_eq!(x, vec![2.0, 0.0]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut opt = Optimizer::new(OptimizerKind::AdaptiveMoments, 0.1, MomentConfig::default());
        let mut x = vec![0.0, 0.0, 0.0];
        opt.ascend(&mut [&mut x], &[vec![3.0, -1e-3, 0.0]]);
        assert!((x[0] - 0.1).abs() < 1e-8);
        assert!((x[1] + 0.1).abs() < 1e-5);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn adam_climbs_concave_quadratic() {
        // maximise -(x - 3)^2
        let mut opt = Optimizer::new(OptimizerKind::AdaptiveMoments, 0.05, MomentConfig::default());
        let mut x = vec![0.0];
        for _ in 0..2000 {
            let g = vec![-2.0 * (x[0] - 3.0)];
            opt.ascend(&mut [&mut x], &[g]);
        }
        assert!((x[0] - 3.0).abs() < 1e-2);
    }
}
