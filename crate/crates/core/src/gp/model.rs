use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::Kernel;
use crate::error::{Error, Result};

/// Jitter ladder relative to the mean kernel diagonal: 1e-10, 1e-9, ..., 1e-4.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;
/// Smallest accepted squared pivot relative to its diagonal entry.
const MIN_RELATIVE_PIVOT: f64 = 1e2 * f64::EPSILON;
/// Negative predictive variances down to this are rounding noise.
const VARIANCE_FLOOR: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper<K> {
    pub kernel: K,
    /// Observation noise variance (>= 0).
    pub noise_variance: f64,
    /// Constant prior mean.
    pub prior_mean: f64,
}

impl<K: Kernel> GpHyper<K> {
    pub fn new(kernel: K, noise_variance: f64, prior_mean: f64) -> Result<Self> {
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be finite and non-negative, got {noise_variance}"
            )));
        }
        if !prior_mean.is_finite() {
            return Err(Error::InvalidArgument("prior mean must be finite".into()));
        }
        Ok(GpHyper {
            kernel,
            noise_variance,
            prior_mean,
        })
    }

    /// Kernel log-parameters followed by log noise variance.
    pub fn log_params(&self) -> Vec<f64> {
        let mut p = self.kernel.log_params();
        p.push(self.noise_variance.ln());
        p
    }

    pub fn with_log_params(&self, params: &[f64]) -> Self {
        let mut out = self.clone();
        let nk = self.kernel.n_params();
        out.kernel.set_log_params(&params[..nk]);
        out.noise_variance = params[nk].exp();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// An exact GP conditioned on its training set.
#[derive(Debug, Clone)]
pub struct TrainedGp<K> {
    hyper: GpHyper<K>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    /// Factor of `K + (noise + jitter) I`; `None` without training points.
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

pub(crate) fn check_inputs<K: Kernel>(kernel: &K, x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    for row in x {
        if row.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite input".into()));
        }
    }
    if !x.is_empty() {
        kernel.check_dim(d)?;
    }
    Ok(d)
}

pub(crate) fn gram<K: Kernel>(kernel: &K, x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = kernel.eval(&x[i], &x[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky with escalating diagonal jitter. Returns the factor and the
/// jitter that was needed.
pub(crate) fn factorize_with_jitter(mut a: DMatrix<f64>, kernel_trace: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = a.nrows();
    let scale = if kernel_trace > 0.0 && kernel_trace.is_finite() {
        kernel_trace / n as f64
    } else {
        1.0
    };
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mut jitter = 0.0;
    let mut next = JITTER_START * scale;
    loop {
        if let Some(chol) = Cholesky::new(a.clone()) {
            let l = chol.l_dirty();
            let well_posed = (0..n).all(|i| l[(i, i)] * l[(i, i)] > MIN_RELATIVE_PIVOT * (diag[i] + jitter));
            if well_posed {
                return Ok((chol, jitter));
            }
        }
        if next > JITTER_MAX * scale * (1.0 + 1e-12) {
            return Err(Error::NotPositiveDefinite);
        }
        for i in 0..n {
            a[(i, i)] = diag[i] + next;
        }
        jitter = next;
        next *= 10.0;
    }
}

/// Fits the posterior: factorizes `K + noise I` and solves for the weights.
pub fn gp_fit<K: Kernel>(x: &[Vec<f64>], y: &[f64], hyper: &GpHyper<K>) -> Result<TrainedGp<K>> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite target".into()));
    }
    check_inputs(&hyper.kernel, x)?;
    if x.is_empty() {
        return Ok(TrainedGp {
            hyper: hyper.clone(),
            x: Vec::new(),
            y: Vec::new(),
            chol: None,
            alpha: DVector::zeros(0),
            jitter: 0.0,
        });
    }
    let mut k = gram(&hyper.kernel, x);
    let trace = k.trace();
    for i in 0..x.len() {
        k[(i, i)] += hyper.noise_variance;
    }
    let (chol, jitter) = factorize_with_jitter(k, trace)?;
    let resid = DVector::from_iterator(y.len(), y.iter().map(|v| v - hyper.prior_mean));
    let alpha = chol.solve(&resid);
    Ok(TrainedGp {
        hyper: hyper.clone(),
        x: x.to_vec(),
        y: y.to_vec(),
        chol: Some(chol),
        alpha,
        jitter,
    })
}

/// Free-function form of [`TrainedGp::predict`].
pub fn gp_predict<K: Kernel>(model: &TrainedGp<K>, x: &[f64]) -> Result<Prediction> {
    model.predict(x)
}

impl<K: Kernel> TrainedGp<K> {
    pub fn hyper(&self) -> &GpHyper<K> {
        &self.hyper
    }

    pub fn x_train(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn y_train(&self) -> &[f64] {
        &self.y
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.x.first().map(Vec::len)
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Lower-triangular `L` with `L L^T = K + (noise + jitter) I`.
    pub fn gram_factor(&self) -> DMatrix<f64> {
        self.chol.as_ref().map_or_else(|| DMatrix::zeros(0, 0), |c| c.l())
    }

    pub(crate) fn check_query(&self, x: &[f64]) -> Result<()> {
        match self.input_dim() {
            Some(d) if d != x.len() => Err(Error::Dimension {
                expected: d,
                got: x.len(),
            }),
            _ => {
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite query".into()));
                }
                self.hyper.kernel.check_dim(x.len())
            }
        }
    }

    pub(crate) fn cross_cov(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.hyper.kernel.eval(xi, x)))
    }

    /// `L^{-1} k(X, x)`.
    pub(crate) fn whiten(&self, kx: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => c
                .l_dirty()
                .solve_lower_triangular(kx)
                .expect("cholesky factor has a non-zero diagonal"),
            None => DVector::zeros(0),
        }
    }

    /// Posterior mean and latent variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_query(x)?;
        let prior_var = self.hyper.kernel.eval(x, x);
        if self.x.is_empty() {
            return Ok(Prediction {
                mean: self.hyper.prior_mean,
                variance: prior_var,
            });
        }
        let kx = self.cross_cov(x);
        let mean = self.hyper.prior_mean + kx.dot(&self.alpha);
        let v = self.whiten(&kx);
        let variance = clamp_variance(prior_var - v.norm_squared(), prior_var)?;
        Ok(Prediction { mean, variance })
    }

    /// Log marginal likelihood and its gradient over
    /// `[kernel log-params..., log noise]`.
    pub fn log_marginal_likelihood(&self) -> (f64, Vec<f64>) {
        let n = self.x.len();
        let np = self.hyper.kernel.n_params() + 1;
        let Some(chol) = &self.chol else {
            return (0.0, vec![0.0; np]);
        };
        let resid: f64 = self
            .y
            .iter()
            .zip(self.alpha.iter())
            .map(|(y, a)| (y - self.hyper.prior_mean) * a)
            .sum();
        let l = chol.l_dirty();
        let log_det_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
        let value = -0.5 * resid - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

        // dL/dtheta = 0.5 tr((a a^T - K^-1) dK/dtheta)
        let kinv = chol.inverse();
        let mut grad = vec![0.0; np];
        let mut kg = vec![0.0; np - 1];
        for j in 0..n {
            for i in j..n {
                let w = self.alpha[i] * self.alpha[j] - kinv[(i, j)];
                let weight = if i == j { 0.5 * w } else { w };
                self.hyper.kernel.eval_grad(&self.x[i], &self.x[j], &mut kg);
                for (g, d) in grad.iter_mut().zip(&kg) {
                    *g += weight * d;
                }
            }
        }
        let trace_w: f64 = (0..n).map(|i| self.alpha[i] * self.alpha[i] - kinv[(i, i)]).sum();
        grad[np - 1] = 0.5 * self.hyper.noise_variance * trace_w;
        (value, grad)
    }
}

pub(crate) fn clamp_variance(v: f64, prior_var: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= VARIANCE_FLOOR * prior_var.abs().max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("negative predictive variance {v:.3e}")))
    }
}

/// Free-function form of [`TrainedGp::log_marginal_likelihood`].
pub fn log_marginal_likelihood<K: Kernel>(model: &TrainedGp<K>) -> (f64, Vec<f64>) {
    model.log_marginal_likelihood()
}
