use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::Kernel;
use super::model::{check_inputs, clamp_variance, factorize_with_jitter, Prediction, TrainedGp};
use crate::error::{Error, Result};

/// A fitted GP further conditioned on extra observations, using the fitted
/// posterior as the prior. Predictions equal those of a single GP fitted on
/// the union of both training sets under the same hyperparameters.
#[derive(Debug, Clone)]
pub struct ConditionedGp<'a, K> {
    base: &'a TrainedGp<K>,
    extra_x: Vec<Vec<f64>>,
    /// `L^{-1} k(X, H)` for the base factor `L`, one column per extra point.
    whitened: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl<'a, K: Kernel> ConditionedGp<'a, K> {
    pub fn new(base: &'a TrainedGp<K>, x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension { expected: x.len(), got: y.len() });
        }
        let d = check_inputs(&base.hyper().kernel, x)?;
        if let Some(bd) = base.input_dim() {
            if !x.is_empty() && d != bd {
                return Err(Error::Dimension { expected: bd, got: d });
            }
        }
        let m = x.len();
        let n = base.n_train();
        let mut whitened = DMatrix::zeros(n, m);
        let mut resid = DVector::zeros(m);
        for (j, (xj, yj)) in x.iter().zip(y).enumerate() {
            let kx = base.cross_cov(xj);
            let w = base.whiten(&kx);
            whitened.set_column(j, &w);
            let mean = base.hyper().prior_mean + kx.dot(base.alpha());
            resid[j] = yj - mean;
        }
        if m == 0 {
            return Ok(ConditionedGp { base, extra_x: Vec::new(), whitened, chol: None, alpha: resid });
        }
        let kernel = &base.hyper().kernel;
        let mut ks = DMatrix::zeros(m, m);
        for j in 0..m {
            for i in j..m {
                let v = kernel.eval(&x[i], &x[j]) - whitened.column(i).dot(&whitened.column(j));
                ks[(i, j)] = v;
                ks[(j, i)] = v;
            }
        }
        let trace = ks.trace();
        for i in 0..m {
            ks[(i, i)] += base.hyper().noise_variance;
        }
        let (chol, _) = factorize_with_jitter(ks, trace)?;
        let alpha = chol.solve(&resid);
        Ok(ConditionedGp { base, extra_x: x.to_vec(), whitened, chol: Some(chol), alpha })
    }

    pub fn base(&self) -> &TrainedGp<K> {
        self.base
    }

    pub fn n_extra(&self) -> usize {
        self.extra_x.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let Some(chol) = &self.chol else {
            return self.base.predict(x);
        };
        self.base.check_query(x)?;
        if x.len() != self.extra_x[0].len() {
            return Err(Error::Dimension { expected: self.extra_x[0].len(), got: x.len() });
        }
        let kernel = &self.base.hyper().kernel;
        let prior_var = kernel.eval(x, x);
        let kx = self.base.cross_cov(x);
        let w = self.base.whiten(&kx);
        let base_mean = self.base.hyper().prior_mean + kx.dot(self.base.alpha());
        let base_var = prior_var - w.norm_squared();

        let cross = DVector::from_iterator(
            self.extra_x.len(),
            self.extra_x
                .iter()
                .enumerate()
                .map(|(j, h)| kernel.eval(h, x) - self.whitened.column(j).dot(&w)),
        );
        let mean = base_mean + cross.dot(&self.alpha);
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&cross)
            .expect("cholesky factor has a non-zero diagonal");
        let variance = clamp_variance(base_var - v.norm_squared(), prior_var)?;
        Ok(Prediction { mean, variance })
    }
}
