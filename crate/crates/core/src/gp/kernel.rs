use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A covariance function with log-scale hyperparameters.
pub trait Kernel: Clone + Send + Sync {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64;

    /// Kernel value, writing d k / d (log param) into `grad`.
    fn eval_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64;

    fn log_params(&self) -> Vec<f64>;

    fn set_log_params(&mut self, params: &[f64]);

    fn n_params(&self) -> usize {
        self.log_params().len()
    }

    /// Rejects inputs of the wrong dimension. The default accepts any.
    fn check_dim(&self, _d: usize) -> Result<()> {
        Ok(())
    }
}

/// Squared-exponential kernels.
///
/// `k(x, x') = s * exp(-0.5 * sum_d (x_d - x'_d)^2 / l_d^2)` with a single
/// lengthscale (isotropic) or one per input dimension (ARD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    RbfIso {
        log_signal_variance: f64,
        log_lengthscale: f64,
    },
    RbfArd {
        log_signal_variance: f64,
        log_lengthscales: Vec<f64>,
    },
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

impl KernelSpec {
    pub fn rbf_iso(signal_variance: f64, lengthscale: f64) -> Result<Self> {
        Ok(KernelSpec::RbfIso {
            log_signal_variance: positive("signal variance", signal_variance)?,
            log_lengthscale: positive("lengthscale", lengthscale)?,
        })
    }

    pub fn rbf_ard(signal_variance: f64, lengthscales: &[f64]) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::InvalidArgument("ARD kernel needs at least one lengthscale".into()));
        }
        Ok(KernelSpec::RbfArd {
            log_signal_variance: positive("signal variance", signal_variance)?,
            log_lengthscales: lengthscales
                .iter()
                .map(|&l| positive("lengthscale", l))
                .collect::<Result<_>>()?,
        })
    }

    pub fn signal_variance(&self) -> f64 {
        match self {
            KernelSpec::RbfIso { log_signal_variance, .. } | KernelSpec::RbfArd { log_signal_variance, .. } => {
                log_signal_variance.exp()
            }
        }
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        match self {
            KernelSpec::RbfIso { log_lengthscale, .. } => vec![log_lengthscale.exp()],
            KernelSpec::RbfArd { log_lengthscales, .. } => log_lengthscales.iter().map(|l| l.exp()).collect(),
        }
    }

    /// Dimension-checked evaluation.
    pub fn try_eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                expected: a.len(),
                got: b.len(),
            });
        }
        self.check_dim(a.len())?;
        Ok(self.eval(a, b))
    }
}

/// Free-function form of [`KernelSpec::try_eval`].
pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    spec.try_eval(a, b)
}

impl Kernel for KernelSpec {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::RbfIso {
                log_signal_variance,
                log_lengthscale,
            } => {
                let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                let inv_l2 = (-2.0 * log_lengthscale).exp();
                (log_signal_variance - 0.5 * r2 * inv_l2).exp()
            }
            KernelSpec::RbfArd {
                log_signal_variance,
                log_lengthscales,
            } => {
                let q: f64 = a
                    .iter()
                    .zip(b)
                    .zip(log_lengthscales)
                    .map(|((x, y), ll)| (x - y) * (x - y) * (-2.0 * ll).exp())
                    .sum();
                (log_signal_variance - 0.5 * q).exp()
            }
        }
    }

    fn eval_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            KernelSpec::RbfIso {
                log_signal_variance,
                log_lengthscale,
            } => {
                let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                let scaled = r2 * (-2.0 * log_lengthscale).exp();
                let k = (log_signal_variance - 0.5 * scaled).exp();
                grad[0] = k;
                grad[1] = k * scaled;
                k
            }
            KernelSpec::RbfArd {
                log_signal_variance,
                log_lengthscales,
            } => {
                let mut q = 0.0;
                for (d, ((x, y), ll)) in a.iter().zip(b).zip(log_lengthscales).enumerate() {
                    let t = (x - y) * (x - y) * (-2.0 * ll).exp();
                    grad[d + 1] = t;
                    q += t;
                }
                let k = (log_signal_variance - 0.5 * q).exp();
                grad[0] = k;
                for g in &mut grad[1..] {
                    *g *= k;
                }
                k
            }
        }
    }

    fn log_params(&self) -> Vec<f64> {
        match self {
            KernelSpec::RbfIso {
                log_signal_variance,
                log_lengthscale,
            } => vec![*log_signal_variance, *log_lengthscale],
            KernelSpec::RbfArd {
                log_signal_variance,
                log_lengthscales,
            } => std::iter::once(*log_signal_variance).chain(log_lengthscales.iter().copied()).collect(),
        }
    }

    fn set_log_params(&mut self, params: &[f64]) {
        match self {
            KernelSpec::RbfIso {
                log_signal_variance,
                log_lengthscale,
            } => {
                *log_signal_variance = params[0];
                *log_lengthscale = params[1];
            }
            KernelSpec::RbfArd {
                log_signal_variance,
                log_lengthscales,
            } => {
                *log_signal_variance = params[0];
                log_lengthscales.copy_from_slice(&params[1..]);
            }
        }
    }

    fn n_params(&self) -> usize {
        match self {
            KernelSpec::RbfIso { .. } => 2,
            KernelSpec::RbfArd { log_lengthscales, .. } => 1 + log_lengthscales.len(),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            KernelSpec::RbfArd { log_lengthscales, .. } if log_lengthscales.len() != d => Err(Error::Dimension {
                expected: log_lengthscales.len(),
                got: d,
            }),
            _ => Ok(()),
        }
    }
}
