use super::kernel::Kernel;
use super::model::{gp_fit, GpHyper};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    /// Maximum number of accepted ascent steps.
    pub budget: usize,
    /// Stop when the gradient's Euclidean norm falls below this.
    pub grad_tol: f64,
    /// Largest change of any log-parameter in one step.
    pub max_log_step: f64,
    /// Log-parameters are kept inside `[-bound, bound]`.
    pub log_bound: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            budget: 100,
            grad_tol: 1e-6,
            max_log_step: 2.0,
            log_bound: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_grad_norm: f64,
}

fn objective<K: Kernel>(x: &[Vec<f64>], y: &[f64], h: &GpHyper<K>) -> Option<(f64, Vec<f64>)> {
    let gp = gp_fit(x, y, h).ok()?;
    let (v, g) = gp.log_marginal_likelihood();
    (v.is_finite() && g.iter().all(|d| d.is_finite())).then_some((v, g))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maximizes the log marginal likelihood over log-hyperparameters (kernel
/// parameters and noise; the prior mean is held fixed).
///
/// Gradient ascent with Barzilai-Borwein step lengths and Armijo backtracking.
/// Only improving steps are accepted, so the result never scores below `init`.
pub fn optimize_hyperparameters<K: Kernel>(
    x: &[Vec<f64>],
    y: &[f64],
    init: &GpHyper<K>,
    options: &OptimizeOptions,
) -> Result<(GpHyper<K>, OptimizeReport)> {
    if options.budget == 0 {
        return Err(Error::InvalidArgument("optimization budget must be at least 1".into()));
    }
    if init.noise_variance <= 0.0 {
        return Err(Error::InvalidArgument("optimization needs a positive initial noise variance".into()));
    }
    let (mut value, mut grad) = objective(x, y, init)
        .ok_or_else(|| Error::Numerical("non-finite log marginal likelihood at initial hyperparameters".into()))?;
    let initial_objective = value;
    let mut params = init.log_params();
    let mut current = init.clone();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;

    while iterations < options.budget {
        let gnorm = norm(&grad);
        if gnorm < options.grad_tol {
            break;
        }
        let mut step = match &prev {
            Some((p_old, g_old)) => {
                let s: Vec<f64> = params.iter().zip(p_old).map(|(a, b)| a - b).collect();
                let dg: Vec<f64> = grad.iter().zip(g_old).map(|(a, b)| a - b).collect();
                let sy: f64 = s.iter().zip(&dg).map(|(a, b)| a * b).sum();
                let ss: f64 = s.iter().map(|a| a * a).sum();
                // ascent: curvature along s is -sy
                if sy < 0.0 {
                    ss / -sy
                } else {
                    1.0 / gnorm
                }
            }
            None => 1.0 / gnorm,
        };
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        step = step.min(options.max_log_step / gmax);

        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = params
                .iter()
                .zip(&grad)
                .map(|(p, g)| (p + step * g).clamp(-options.log_bound, options.log_bound))
                .collect();
            let ascent: f64 = trial.iter().zip(&params).zip(&grad).map(|((t, p), g)| (t - p) * g).sum();
            let h = current.with_log_params(&trial);
            if let Some((v, g)) = objective(x, y, &h) {
                if v > value && v >= value + 1e-4 * ascent {
                    accepted = Some((trial, h, v, g));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, h, v, g)) = accepted else { break };
        prev = Some((std::mem::replace(&mut params, trial), std::mem::replace(&mut grad, g)));
        current = h;
        value = v;
        iterations += 1;
    }

    let report = OptimizeReport {
        iterations,
        initial_objective,
        final_objective: value,
        final_grad_norm: norm(&grad),
    };
    Ok((current, report))
}
