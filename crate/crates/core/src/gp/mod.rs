//! Exact Gaussian-process regression.
//!
//! Posterior prediction with a constant prior mean `m`:
//!
//! ```text
//! mean(x*) = m + k(x*, X) (K + s2 I)^-1 (y - m)
//! var(x*)  = k(x*, x*) - k(x*, X) (K + s2 I)^-1 k(X, x*)
//! ```
//!
//! The `(K + s2 I)` system is factorized once at fit time. Hyperparameters
//! are optimized on a log scale by evidence maximization, and
//! [`blr_posterior`] provides the weight-space view used to cross-check the
//! function-space equations.

mod blr;
mod condition;
mod io;
mod kernel;
mod model;
mod optimize;

pub use blr::{blr_posterior, BlrPosterior};
pub use condition::ConditionedGp;
pub use io::{gp_from_toml, gp_to_toml, load_gp, save_gp};
pub use kernel::{kernel_eval, Kernel, KernelSpec};
pub use model::{gp_fit, gp_predict, log_marginal_likelihood, GpHyper, Prediction, TrainedGp};
pub use optimize::{optimize_hyperparameters, OptimizeOptions, OptimizeReport};

/// Default hyperparameters for targets `y` over `d` inputs: signal variance
/// `var(y)`, lengthscale `sqrt(d)`, noise `0.1 var(y)`, prior mean `mean(y)`.
pub fn default_hyper(y: &[f64], d: usize) -> GpHyper<KernelSpec> {
    let n = y.len().max(1) as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = if y.len() > 1 {
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let var = if var > 1e-12 { var } else { 1.0 };
    GpHyper {
        kernel: KernelSpec::rbf_iso(var, (d.max(1) as f64).sqrt()).expect("positive defaults"),
        noise_variance: 0.1 * var,
        prior_mean: mean,
    }
}
