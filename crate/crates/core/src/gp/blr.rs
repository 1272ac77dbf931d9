use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Gaussian posterior over linear-model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BlrPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl BlrPosterior {
    /// Mean and latent variance of `phi^T theta` under the posterior.
    pub fn project(&self, phi: &DVector<f64>) -> (f64, f64) {
        (phi.dot(&self.mean), (phi.transpose() * &self.covariance * phi)[(0, 0)])
    }
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym_err = (m - m.transpose()).amax();
    if sym_err > 1e-10 * m.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
    }
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| Error::InvalidArgument(format!("{what} is not positive definite")))
}

/// Posterior of `y = phi(x)^T theta + eps`, `eps ~ N(0, noise)`,
/// `theta ~ N(m0, s0)` given design matrix `phi` (N x M):
///
/// `S_N = (S0^-1 + phi^T phi / noise)^-1`,
/// `m_N = S_N (S0^-1 m0 + phi^T y / noise)`.
pub fn blr_posterior(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    m0: &DVector<f64>,
    s0: &DMatrix<f64>,
    noise_variance: f64,
) -> Result<BlrPosterior> {
    let m = m0.len();
    if s0.nrows() != m || s0.ncols() != m {
        return Err(Error::Dimension { expected: m, got: s0.nrows() });
    }
    if phi.nrows() != y.len() {
        return Err(Error::Dimension { expected: phi.nrows(), got: y.len() });
    }
    if phi.nrows() > 0 && phi.ncols() != m {
        return Err(Error::Dimension { expected: m, got: phi.ncols() });
    }
    if !(noise_variance > 0.0) {
        return Err(Error::InvalidArgument("noise variance must be positive".into()));
    }
    let s0_inv = spd_inverse(s0, "prior covariance")?;
    if phi.nrows() == 0 {
        return Ok(BlrPosterior { mean: m0.clone(), covariance: s0.clone() });
    }
    let precision = &s0_inv + phi.transpose() * phi / noise_variance;
    let covariance = spd_inverse(&(0.5 * (&precision + precision.transpose())), "posterior precision")?;
    let mean = &covariance * (&s0_inv * m0 + phi.transpose() * y / noise_variance);
    Ok(BlrPosterior { mean, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_case() {
        let post = blr_posterior(
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 1.0),
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
            1.0,
        )
        .unwrap();
        assert!((post.covariance[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((post.mean[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_data_and_no_information_limits() {
        let m0 = DVector::from_vec(vec![0.3, -1.0]);
        let s0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let empty = blr_posterior(&DMatrix::zeros(0, 2), &DVector::zeros(0), &m0, &s0, 1.0).unwrap();
        assert_eq!(empty.mean, m0);
        assert_eq!(empty.covariance, s0);

        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 2.0, -1.0, 1.0]);
        let y = DVector::from_vec(vec![4.0, -3.0, 9.0]);
        let vague = blr_posterior(&phi, &y, &m0, &s0, 1e12).unwrap();
        assert!((vague.mean - &m0).amax() < 1e-9);
        assert!((vague.covariance - &s0).amax() < 1e-9);
    }

    #[test]
    fn rejects_non_spd_prior() {
        let s0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = blr_posterior(&DMatrix::zeros(0, 2), &DVector::zeros(0), &DVector::zeros(2), &s0, 1.0);
        assert!(r.is_err());
    }
}
