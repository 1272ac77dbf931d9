//! Cox proportional hazards: partial likelihood, Newton fitting, Breslow
//! cumulative baseline hazard and per-window conversion probabilities.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::{format_number, ConversionLabel, PatientId};
use crate::error::{Error, Result};
use crate::preprocess::HORIZONS;

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub z: Vec<f64>,
    /// Event or censoring time in months.
    pub time: f64,
    pub event: bool,
}

/// Handling of tied event times in the partial likelihood.
///
/// `Exact` is the marginal likelihood of continuous event times that were
/// only observed up to their tie group: the probability that every tied event
/// precedes every other member of the risk set. Subjects censored at a tied
/// time are taken to be at risk until after those events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    Breslow,
    Efron,
    #[default]
    Exact,
}

impl std::str::FromStr for Ties {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "breslow" => Ok(Ties::Breslow),
            "efron" => Ok(Ties::Efron),
            "exact" => Ok(Ties::Exact),
            _ => Err(Error::Config(format!("unknown ties method `{s}` (breslow|efron|exact)"))),
        }
    }
}

/// Right-continuous step function with jumps at `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineHazard {
    pub times: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl BaselineHazard {
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFitReport {
    pub iterations: usize,
    pub grad_inf_norm: f64,
    pub log_partial_likelihood: f64,
    pub null_log_partial_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxModel {
    pub beta: Vec<f64>,
    pub baseline: BaselineHazard,
    pub ties: Ties,
    pub report: CoxFitReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub ties: Ties,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub divergence_norm: f64,
    /// L2 penalty `penalty/2 * |beta|^2` subtracted from the log partial
    /// likelihood. Zero gives the plain estimator.
    pub penalty: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            ties: Ties::default(),
            max_iterations: 100,
            grad_tol: 1e-8,
            divergence_norm: 50.0,
            penalty: 0.0,
        }
    }
}

fn check_records(records: &[SurvivalRecord]) -> Result<usize> {
    let Some(first) = records.first() else {
        return Err(Error::NoEvents);
    };
    let p = first.z.len();
    for r in records {
        if r.z.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: r.z.len(),
            });
        }
        if !(r.time > 0.0 && r.time.is_finite()) {
            return Err(Error::InvalidArgument(format!("survival time must be positive, got {}", r.time)));
        }
        if r.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite covariate".into()));
        }
    }
    if !records.iter().any(|r| r.event) {
        return Err(Error::NoEvents);
    }
    Ok(p)
}

/// Records sorted by descending time; groups of equal time are contiguous.
fn by_time_desc(records: &[SurvivalRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));
    idx
}

/// Log partial likelihood with gradient and Hessian. Risk sets are
/// `{j : time_j >= t}`.
pub fn log_partial_likelihood(
    beta: &[f64],
    records: &[SurvivalRecord],
    ties: Ties,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let p = check_records(records)?;
    if beta.len() != p {
        return Err(Error::Dimension {
            expected: p,
            got: beta.len(),
        });
    }
    let b = DVector::from_column_slice(beta);
    let zs: Vec<DVector<f64>> = records.iter().map(|r| DVector::from_column_slice(&r.z)).collect();
    let eta: Vec<f64> = zs.iter().map(|z| z.dot(&b)).collect();
    // Centre the linear predictor for stable exponentials.
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

    let mut value = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let (mut s0, mut s1, mut s2) = (0.0, DVector::<f64>::zeros(p), DMatrix::<f64>::zeros(p, p));

    let order = by_time_desc(records);
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut j = i;
        let (mut c0, mut c1, mut c2) = (0.0, DVector::<f64>::zeros(p), DMatrix::<f64>::zeros(p, p));
        let (mut d0, mut d1, mut d2) = (0.0, DVector::<f64>::zeros(p), DMatrix::<f64>::zeros(p, p));
        let mut events = Vec::new();
        while j < order.len() && records[order[j]].time == t {
            let k = order[j];
            let zk = &zs[k];
            if records[k].event {
                events.push(k);
                d0 += w[k];
                d1.axpy(w[k], zk, 1.0);
                d2.ger(w[k], zk, zk, 1.0);
            } else {
                c0 += w[k];
                c1.axpy(w[k], zk, 1.0);
                c2.ger(w[k], zk, zk, 1.0);
            }
            j += 1;
        }
        // Risk-set members outside the tie group's events.
        let others = (s0 + c0, &s1 + &c1, &s2 + &c2);
        if ties == Ties::Exact {
            if !events.is_empty() && others.0 > 0.0 {
                let ew: Vec<f64> = events.iter().map(|&k| w[k]).collect();
                let ez: Vec<&DVector<f64>> = events.iter().map(|&k| &zs[k]).collect();
                let (v, g, h) = exact_group(&ew, &ez, others.0, &others.1, &others.2);
                value += v;
                grad += g;
                hess += h;
            }
        } else {
            for &k in &events {
                value += eta[k];
                grad += &zs[k];
            }
            let d = events.len();
            for m in 0..d {
                let phi = match ties {
                    Ties::Efron => m as f64 / d as f64,
                    _ => 0.0,
                };
                let a = others.0 + (1.0 - phi) * d0;
                let bm = &others.1 + &d1 * (1.0 - phi);
                let cm = &others.2 + &d2 * (1.0 - phi);
                value -= a.ln() + shift;
                grad.axpy(-1.0 / a, &bm, 1.0);
                hess -= cm / a - (&bm * bm.transpose()) / (a * a);
            }
        }
        s0 = others.0 + d0;
        s1 = others.1 + d1;
        s2 = others.2 + d2;
        i = j;
    }
    Ok((value, grad, hess))
}

/// `x / (e^x - 1)` and its derivative, stable for all `x >= 0`.
fn q_and_derivative(x: f64) -> (f64, f64) {
    if x < 1e-4 {
        return (1.0 - x / 2.0 + x * x / 12.0, -0.5 + x / 6.0);
    }
    let em = (-x).exp();
    let one_minus = -(-x).exp_m1();
    (x * em / one_minus, em * (one_minus - x) / (one_minus * one_minus))
}

/// Log of the probability that subjects with relative risks `r` fail before
/// a competing pool of total risk `s`, with its gradient and Hessian in beta.
///
/// The probability is `int_0^inf prod_i (1 - exp(-r_i u)) s exp(-s u) du`,
/// evaluated on a uniform grid in `log u` around the integrand's mode.
fn exact_group(
    r: &[f64],
    z: &[&DVector<f64>],
    s: f64,
    s1: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = s1.len();
    let log_s = s.ln();
    let log_integrand = |v: f64| -> f64 {
        let u = v.exp();
        r.iter().map(|ri| (-(-ri * u).exp_m1()).ln()).sum::<f64>() - s * u + v + log_s
    };
    // Slope and curvature of the log integrand in `v = log u`.
    let slope_curvature = |v: f64| -> (f64, f64) {
        let u = v.exp();
        let (mut slope, mut curv) = (1.0 - s * u, -s * u);
        for ri in r {
            let (q, dq) = q_and_derivative(ri * u);
            slope += q;
            curv += ri * u * dq;
        }
        (slope, curv)
    };
    // The slope decreases strictly, so the mode is its unique root: bracket
    // it, then take Newton steps that stay inside the bracket.
    let centre = -(s + r.iter().sum::<f64>()).ln();
    let (mut lo, mut hi) = (centre - 1.0, centre + 1.0);
    while slope_curvature(lo).0 <= 0.0 {
        lo -= 2.0 * (hi - lo);
    }
    while slope_curvature(hi).0 >= 0.0 {
        hi += 2.0 * (hi - lo);
    }
    let mut mode = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (slope, curv) = slope_curvature(mode);
        if slope > 0.0 {
            lo = mode;
        } else {
            hi = mode;
        }
        let newton = mode - slope / curv;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let done = (next - mode).abs() < 1e-12 * (1.0 + mode.abs());
        mode = next;
        if done {
            break;
        }
    }
    let (_, curvature) = slope_curvature(mode);
    let step = 0.25 / (-curvature).sqrt();
    let peak = log_integrand(mode);

    // Moments of the normalised integrand over the grid.
    let mut mass = 0.0;
    let mut m1 = DVector::<f64>::zeros(p);
    let mut m2 = DMatrix::<f64>::zeros(p, p);
    let mut event_curv = vec![0.0; r.len()];
    let mut pool = 0.0;
    let mut visit = |v: f64| -> bool {
        let lw = log_integrand(v) - peak;
        if lw < -46.0 {
            return false;
        }
        let weight = lw.exp();
        let u = v.exp();
        let mut score = s1 * (1.0 / s - u);
        for (k, (ri, zi)) in r.iter().zip(z).enumerate() {
            let x = ri * u;
            let (q, dq) = q_and_derivative(x);
            score.axpy(q, zi, 1.0);
            event_curv[k] += weight * x * dq;
        }
        pool += weight * (1.0 / s - u);
        mass += weight;
        m2.ger(weight, &score, &score, 1.0);
        m1.axpy(weight, &score, 1.0);
        true
    };
    visit(mode);
    for dir in [-1.0, 1.0] {
        let mut k = 1.0;
        while visit(mode + dir * k * step) {
            k += 1.0;
        }
    }
    let grad = &m1 / mass;
    let mut hess = s2 * (pool / mass) - (s1 * s1.transpose()) / (s * s) + &m2 / mass - &grad * grad.transpose();
    for (c, zi) in event_curv.iter().zip(z) {
        hess.ger(c / mass, zi, zi, 1.0);
    }
    (peak + (mass * step).ln(), grad, hess)
}

/// Cumulative baseline hazard at `beta`:
/// `H0(t) = sum over event times t_i <= t of d_i / sum_{time_j >= t_i} exp(z_j . beta)`.
pub fn breslow_baseline(beta: &[f64], records: &[SurvivalRecord]) -> Result<BaselineHazard> {
    let p = check_records(records)?;
    if beta.len() != p {
        return Err(Error::Dimension {
            expected: p,
            got: beta.len(),
        });
    }
    let risk: Vec<f64> = records
        .iter()
        .map(|r| r.z.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let order = by_time_desc(records);
    let mut jumps = Vec::new();
    let mut s0 = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut d = 0usize;
        while i < order.len() && records[order[i]].time == t {
            s0 += risk[order[i]];
            d += records[order[i]].event as usize;
            i += 1;
        }
        if d > 0 {
            jumps.push((t, d as f64 / s0));
        }
    }
    jumps.reverse();
    let mut acc = 0.0;
    let (times, cumulative) = jumps
        .into_iter()
        .map(|(t, h)| {
            acc += h;
            (t, acc)
        })
        .unzip();
    Ok(BaselineHazard { times, cumulative })
}

const NEWTON_STEP_TOL: f64 = 1e-6;
const SINGULAR_RATIO: f64 = 1e-10;

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn cox_fit(records: &[SurvivalRecord], options: &CoxOptions) -> Result<CoxModel> {
    let p = check_records(records)?;
    for c in 0..p {
        let v0 = records[0].z[c];
        if records.iter().all(|r| r.z[c] == v0) {
            return Err(Error::InvalidArgument(format!("covariate column {c} is constant")));
        }
    }
    if !(options.penalty >= 0.0 && options.penalty.is_finite()) {
        return Err(Error::InvalidArgument("Cox penalty must be finite and non-negative".into()));
    }
    let objective = |b: &DVector<f64>| -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let (v, g, h) = log_partial_likelihood(b.as_slice(), records, options.ties)?;
        if options.penalty == 0.0 {
            return Ok((v, g, h));
        }
        let lambda = options.penalty;
        Ok((v - 0.5 * lambda * b.norm_squared(), g - b * lambda, h - DMatrix::identity(p, p) * lambda))
    };
    let mut beta = DVector::zeros(p);
    let (null_value, mut grad, mut hess) = objective(&beta)?;
    let mut value = null_value;
    let mut iterations = 0;
    let mut stalled_gradient = false;
    while iterations < options.max_iterations {
        let info = -&hess;
        // Rank deficiency is judged relative to the largest eigenvalue, since
        // round-off can leave a collinear information matrix barely positive.
        let eig = info.clone().symmetric_eigen().eigenvalues;
        let singular = !(eig.min() > SINGULAR_RATIO * eig.max().max(0.0));
        let dir = if singular {
            let ridge = 1e-8 * (1.0 + info.diagonal().amax());
            match (info + DMatrix::identity(p, p) * ridge).cholesky() {
                Some(ch) => ch.solve(&grad),
                None => return Err(Error::Numerical("singular information matrix in Cox fit".into())),
            }
        } else {
            match info.cholesky() {
                Some(ch) => ch.solve(&grad),
                None => return Err(Error::Numerical("information matrix is not positive definite".into())),
            }
        };
        if inf_norm(&grad) < options.grad_tol {
            if singular {
                let norm = beta.norm();
                return Err(if norm > 1.0 {
                    Error::MonotoneLikelihood(norm)
                } else {
                    Error::Numerical("singular information matrix: collinear covariates".into())
                });
            }
            // A vanishing gradient with a non-vanishing Newton step signals divergence.
            if inf_norm(&dir) < NEWTON_STEP_TOL {
                break;
            }
        }
        stalled_gradient = inf_norm(&grad) < options.grad_tol;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &beta + &dir * step;
            let norm = trial.norm();
            if norm > options.divergence_norm {
                return Err(Error::MonotoneLikelihood(norm));
            }
            let (v, g, h) = objective(&trial)?;
            if v.is_finite() && v >= value - 1e-12 * (1.0 + value.abs()) {
                beta = trial;
                value = v;
                grad = g;
                hess = h;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    let norm = beta.norm();
    if norm > options.divergence_norm || !norm.is_finite() || (iterations == options.max_iterations && stalled_gradient) {
        return Err(Error::MonotoneLikelihood(norm));
    }
    let beta: Vec<f64> = beta.iter().copied().collect();
    if options.penalty > 0.0 {
        value = log_partial_likelihood(&beta, records, options.ties)?.0;
    }
    let baseline = breslow_baseline(&beta, records)?;
    Ok(CoxModel {
        beta,
        baseline,
        ties: options.ties,
        report: CoxFitReport {
            iterations,
            grad_inf_norm: inf_norm(&grad),
            log_partial_likelihood: value,
            null_log_partial_likelihood: null_value,
        },
    })
}

impl CoxModel {
    pub fn risk_score(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.beta.len() {
            return Err(Error::Dimension {
                expected: self.beta.len(),
                got: z.len(),
            });
        }
        Ok(z.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>().exp())
    }

    pub fn survival(&self, t: f64, z: &[f64]) -> Result<f64> {
        Ok((-self.baseline.eval(t) * self.risk_score(z)?).exp())
    }
}

/// `P_w = 1 - S(t_w | z)` at 6, 12, 18 and 24 months. With `normalize` the
/// four values are rescaled to sum to one (left as zeros if all are zero).
pub fn conversion_probabilities(model: &CoxModel, z: &[f64], normalize: bool) -> Result<[f64; 4]> {
    let r = model.risk_score(z)?;
    let mut out = HORIZONS.map(|t| (1.0 - (-model.baseline.eval(t as f64) * r).exp()).clamp(0.0, 1.0));
    if normalize {
        let s: f64 = out.iter().sum();
        if s > 0.0 {
            out.iter_mut().for_each(|v| *v /= s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateMode {
    #[default]
    Levels,
    FirstDifferences,
}

impl std::str::FromStr for CovariateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "levels" => Ok(CovariateMode::Levels),
            "first_differences" => Ok(CovariateMode::FirstDifferences),
            _ => Err(Error::Config(format!("unknown covariate mode `{s}` (levels|first_differences)"))),
        }
    }
}

/// Averaged four-window score forecast for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientScores {
    pub patient_id: PatientId,
    pub scores: [f64; 4],
    /// Score at the anchor visit; required for first differences.
    pub baseline: Option<f64>,
}

pub fn covariates(scores: &PatientScores, mode: CovariateMode) -> Result<Vec<f64>> {
    match mode {
        CovariateMode::Levels => Ok(scores.scores.to_vec()),
        CovariateMode::FirstDifferences => {
            let base = scores.baseline.ok_or_else(|| {
                Error::InvalidArgument(format!("patient {} has no baseline score", scores.patient_id))
            })?;
            let s = scores.scores;
            Ok(vec![s[0] - base, s[1] - s[0], s[2] - s[1], s[3] - s[2]])
        }
    }
}

/// One record per patient; `labels[i]` must belong to `forecasts[i]`.
/// Converters get time `6 * first_window` with an event; others are censored at 24.
pub fn build_survival_records(
    forecasts: &[PatientScores],
    labels: &[(PatientId, ConversionLabel)],
    mode: CovariateMode,
) -> Result<Vec<SurvivalRecord>> {
    if forecasts.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "patient mismatch: {} forecasts, {} labels",
            forecasts.len(),
            labels.len()
        )));
    }
    forecasts
        .iter()
        .zip(labels)
        .map(|(f, (id, label))| {
            if &f.patient_id != id {
                return Err(Error::InvalidArgument(format!("patient mismatch: {} vs {}", f.patient_id, id)));
            }
            if label.baseline_excluded {
                return Err(Error::InvalidArgument(format!("patient {id} has AD at baseline")));
            }
            Ok(SurvivalRecord {
                z: covariates(f, mode)?,
                time: label.event_time() as f64,
                event: label.converted,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRow {
    pub patient_id: PatientId,
    pub probabilities: [f64; 4],
    pub converted: bool,
}

/// `patient_id, P_6, P_12, P_18, P_24, change_in_cs`.
pub fn write_probabilities<W: Write>(rows: &[ProbabilityRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patient_id", "P_6", "P_12", "P_18", "P_24", "change_in_cs"])?;
    for r in rows {
        let mut rec = vec![r.patient_id.0.clone()];
        rec.extend(r.probabilities.iter().map(|&p| format_number(p)));
        rec.push((r.converted as u8).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<probability writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rec(z: &[f64], time: f64, event: bool) -> SurvivalRecord {
        SurvivalRecord {
            z: z.to_vec(),
            time,
            event,
        }
    }

    fn three() -> Vec<SurvivalRecord> {
        vec![rec(&[0.5], 1.0, true), rec(&[-1.0], 2.0, true), rec(&[2.0], 3.0, true)]
    }

    #[test]
    fn null_partial_likelihood_counts_risk_sets() {
        for ties in [Ties::Breslow, Ties::Efron, Ties::Exact] {
            let (v, _, _) = log_partial_likelihood(&[0.0], &three(), ties).unwrap();
            assert!((v + (6.0f64).ln()).abs() < 1e-12);
            assert!((v + 1.791759).abs() < 1e-6);
        }
    }

    #[test]
    fn breslow_and_efron_differ_only_with_ties() {
        let tied = vec![
            rec(&[0.3], 6.0, true),
            rec(&[-0.2], 6.0, true),
            rec(&[1.0], 12.0, true),
            rec(&[0.1], 24.0, false),
        ];
        let (b, _, _) = log_partial_likelihood(&[0.0], &tied, Ties::Breslow).unwrap();
        let (e, _, _) = log_partial_likelihood(&[0.0], &tied, Ties::Efron).unwrap();
        assert!((b + 2.0 * 4f64.ln() + 2f64.ln()).abs() < 1e-12);
        assert!((e + 4f64.ln() + 3f64.ln() + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_ties_without_ties_match_breslow() {
        let r = vec![
            rec(&[0.3, 1.0], 6.0, true),
            rec(&[-0.2, 0.4], 12.0, false),
            rec(&[1.0, -0.5], 12.0, true),
            rec(&[0.1, 0.0], 18.0, true),
            rec(&[-0.7, 0.2], 24.0, false),
        ];
        let beta = [0.4, -0.9];
        let (vb, gb, hb) = log_partial_likelihood(&beta, &r, Ties::Breslow).unwrap();
        let (ve, ge, he) = log_partial_likelihood(&beta, &r, Ties::Exact).unwrap();
        assert!((vb - ve).abs() < 1e-10, "{vb} vs {ve}");
        assert!((gb - ge).amax() < 1e-9);
        assert!((hb - he).amax() < 1e-8);
    }

    #[test]
    fn exact_ties_match_closed_form_for_pairs() {
        // Two tied events with risks a, b against a pool s:
        // P = 1 - s/(s+a) - s/(s+b) + s/(s+a+b).
        let (za, zb, zc, zd) = (0.8, -0.3, 0.5, -1.1);
        let r = vec![
            rec(&[za], 6.0, true),
            rec(&[zb], 6.0, true),
            rec(&[zc], 6.0, false),
            rec(&[zd], 12.0, false),
        ];
        for beta in [0.0, 0.7, -1.3] {
            let (a, b) = ((za * beta).exp(), (zb * beta).exp());
            let s = (zc * beta).exp() + (zd * beta).exp();
            let expected = (1.0 - s / (s + a) - s / (s + b) + s / (s + a + b)).ln();
            let (v, _, _) = log_partial_likelihood(&[beta], &r, Ties::Exact).unwrap();
            assert!((v - expected).abs() < 1e-10, "{v} vs {expected}");
        }
    }

    #[test]
    fn exact_ties_with_no_competitors_contribute_nothing() {
        let r = vec![rec(&[0.2], 6.0, true), rec(&[1.0], 12.0, true), rec(&[-0.4], 12.0, true)];
        let (v, g, h) = log_partial_likelihood(&[0.9], &r, Ties::Exact).unwrap();
        let only_first = 0.2 * 0.9 - ((0.2f64 * 0.9).exp() + 0.9f64.exp() + (-0.4f64 * 0.9).exp()).ln();
        assert!((v - only_first).abs() < 1e-10);
        assert!(g[0].is_finite() && h[(0, 0)] <= 0.0);
    }

    #[test]
    fn identical_covariates_give_zero_gradient() {
        let r = vec![rec(&[1.0, 2.0], 1.0, true), rec(&[1.0, 2.0], 2.0, false), rec(&[1.0, 2.0], 2.0, true)];
        let (_, g, _) = log_partial_likelihood(&[0.0, 0.0], &r, Ties::Efron).unwrap();
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn no_events_is_an_error() {
        let r = vec![rec(&[1.0], 1.0, false), rec(&[0.0], 2.0, false)];
        assert!(matches!(log_partial_likelihood(&[0.0], &r, Ties::Breslow), Err(Error::NoEvents)));
        assert!(matches!(cox_fit(&r, &CoxOptions::default()), Err(Error::NoEvents)));
    }

    #[test]
    fn baseline_sums() {
        let h = breslow_baseline(&[0.0], &three()).unwrap();
        assert!((h.eval(3.0) - (1.0 / 3.0 + 0.5 + 1.0)).abs() < 1e-12);
        assert!((h.eval(3.0) - 1.833333).abs() < 1e-6);
        assert_eq!(h.eval(0.5), 0.0);
        assert_eq!(h.eval(0.0), 0.0);
        assert!((h.eval(1.5) - 1.0 / 3.0).abs() < 1e-12);
    }

    fn random_records(seed: u64, n: usize, p: usize, beta: &[f64], h0: f64, discretize: bool) -> Vec<SurvivalRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
                let rate = h0 * z.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp();
                let u: f64 = rng.random::<f64>();
                let t = -(1.0 - u).ln() / rate;
                let c = 24.0 * rng.random::<f64>() / 0.3;
                let obs = t.min(c).min(24.0);
                let time = if discretize { (obs / 6.0).ceil().max(1.0) * 6.0 } else { obs.max(1e-3) };
                SurvivalRecord {
                    z,
                    time,
                    event: t <= c && t <= 24.0,
                }
            })
            .collect()
    }

    #[test]
    fn independent_covariates_fit_near_zero() {
        let r = random_records(11, 500, 4, &[0.0; 4], 0.5, false);
        let m = cox_fit(&r, &CoxOptions::default()).unwrap();
        for b in &m.beta {
            assert!(b.abs() < 0.15, "{:?}", m.beta);
        }
    }

    #[test]
    fn doubling_a_column_halves_its_coefficient() {
        let r = random_records(5, 300, 2, &[0.7, -0.4], 0.05, true);
        let m = cox_fit(&r, &CoxOptions::default()).unwrap();
        let doubled: Vec<_> = r
            .iter()
            .map(|x| SurvivalRecord {
                z: vec![2.0 * x.z[0], x.z[1]],
                ..x.clone()
            })
            .collect();
        let m2 = cox_fit(&doubled, &CoxOptions::default()).unwrap();
        assert!((m2.beta[0] - m.beta[0] / 2.0).abs() < 1e-8);
        assert!((m2.beta[1] - m.beta[1]).abs() < 1e-8);
    }

    #[test]
    fn constant_column_is_reported() {
        let r = vec![rec(&[1.0, 0.2], 1.0, true), rec(&[1.0, -0.4], 2.0, false)];
        let err = cox_fit(&r, &CoxOptions::default()).unwrap_err();
        assert!(err.to_string().contains("constant"));
    }

    #[test]
    fn separation_is_monotone_likelihood() {
        let r = vec![
            rec(&[3.0], 1.0, true),
            rec(&[2.0], 2.0, true),
            rec(&[1.0], 3.0, true),
            rec(&[0.0], 4.0, false),
        ];
        let res = cox_fit(&r, &CoxOptions::default());
        assert!(matches!(res, Err(Error::MonotoneLikelihood(_))), "{res:?}");

        let penalized = CoxOptions {
            penalty: 0.1,
            ..Default::default()
        };
        let m = cox_fit(&r, &penalized).unwrap();
        assert!(m.beta[0] > 0.0 && m.beta[0].is_finite());
        let (_, g, _) = log_partial_likelihood(&m.beta, &r, m.ties).unwrap();
        assert!((g[0] - 0.1 * m.beta[0]).abs() < 1e-7);
    }

    #[test]
    fn penalty_handles_collinear_columns_symmetrically() {
        let base = random_records(9, 200, 1, &[0.8], 0.05, true);
        let r: Vec<_> = base
            .iter()
            .map(|x| SurvivalRecord {
                z: vec![x.z[0], x.z[0]],
                ..x.clone()
            })
            .collect();
        assert!(cox_fit(&r, &CoxOptions::default()).is_err());
        let m = cox_fit(
            &r,
            &CoxOptions {
                penalty: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((m.beta[0] - m.beta[1]).abs() < 1e-6);
        let single = cox_fit(&base, &CoxOptions::default()).unwrap();
        assert!((m.beta[0] + m.beta[1] - single.beta[0]).abs() < 0.01);
    }

    fn brute_force_1d(r: &[SurvivalRecord], ties: Ties) -> f64 {
        let f = |b: f64| log_partial_likelihood(&[b], r, ties).unwrap().0;
        let (mut lo, mut hi) = (-10.0, 10.0);
        let mut best = lo;
        for _ in 0..6 {
            let step = (hi - lo) / 200.0;
            best = (0..=200).map(|i| lo + i as f64 * step).fold(lo, |a, b| if f(b) > f(a) { b } else { a });
            lo = best - step;
            hi = best + step;
        }
        best
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        let cases = vec![
            vec![
                rec(&[0.5], 1.0, true),
                rec(&[-1.0], 2.0, true),
                rec(&[2.0], 3.0, true),
                rec(&[0.0], 3.0, false),
                rec(&[1.5], 4.0, true),
            ],
            vec![
                rec(&[1.0], 6.0, true),
                rec(&[-0.5], 6.0, true),
                rec(&[0.3], 12.0, false),
                rec(&[0.8], 12.0, true),
                rec(&[-1.2], 24.0, false),
                rec(&[0.9], 24.0, false),
            ],
        ];
        for r in cases {
            for ties in [Ties::Breslow, Ties::Efron, Ties::Exact] {
                let m = cox_fit(&r, &CoxOptions { ties, ..Default::default() }).unwrap();
                let b = brute_force_1d(&r, ties);
                assert!((m.beta[0] - b).abs() < 1e-3, "{ties:?}: {} vs {b}", m.beta[0]);
                assert!(m.report.log_partial_likelihood >= m.report.null_log_partial_likelihood);
            }
        }
    }

    #[test]
    fn probability_rules() {
        let zero = CoxModel {
            beta: vec![0.0; 4],
            baseline: BaselineHazard {
                times: vec![30.0],
                cumulative: vec![1.0],
            },
            ties: Ties::Efron,
            report: CoxFitReport {
                iterations: 0,
                grad_inf_norm: 0.0,
                log_partial_likelihood: 0.0,
                null_log_partial_likelihood: 0.0,
            },
        };
        assert_eq!(conversion_probabilities(&zero, &[1.0; 4], false).unwrap(), [0.0; 4]);
        assert_eq!(conversion_probabilities(&zero, &[1.0; 4], true).unwrap(), [0.0; 4]);

        let r = random_records(3, 200, 4, &[0.5, 0.0, -0.3, 0.0], 0.04, true);
        let m = cox_fit(&r, &CoxOptions::default()).unwrap();
        let p = conversion_probabilities(&m, &[0.0; 4], false).unwrap();
        for (w, t) in HORIZONS.iter().enumerate() {
            assert!((p[w] - (1.0 - (-m.baseline.eval(*t as f64)).exp())).abs() < 1e-15);
        }
        let n = conversion_probabilities(&m, &[0.3; 4], true).unwrap();
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(conversion_probabilities(&m, &[0.0; 3], false).is_err());
    }

    #[test]
    fn shifting_covariates_leaves_probabilities_unchanged() {
        let r = random_records(9, 300, 2, &[0.8, -0.5], 0.04, true);
        let m = cox_fit(&r, &CoxOptions::default()).unwrap();
        let c = [3.0, -1.5];
        let shifted: Vec<_> = r
            .iter()
            .map(|x| SurvivalRecord {
                z: vec![x.z[0] + c[0], x.z[1] + c[1]],
                ..x.clone()
            })
            .collect();
        let m2 = cox_fit(&shifted, &CoxOptions::default()).unwrap();
        for z in [[0.0, 0.0], [1.2, -0.7], [-2.0, 0.5]] {
            let a = conversion_probabilities(&m, &z, false).unwrap();
            let b = conversion_probabilities(&m2, &[z[0] + c[0], z[1] + c[1]], false).unwrap();
            for w in 0..4 {
                assert!((a[w] - b[w]).abs() < 1e-6);
            }
        }
    }

    fn label(first_window: Option<u8>) -> ConversionLabel {
        let mut per_window = [false; 4];
        if let Some(w) = first_window {
            for p in per_window.iter_mut().skip(w as usize - 1) {
                *p = true;
            }
        }
        ConversionLabel {
            per_window,
            converted: first_window.is_some(),
            first_window,
            baseline_excluded: false,
        }
    }

    #[test]
    fn survival_records_from_labels() {
        let f = vec![
            PatientScores {
                patient_id: "a".into(),
                scores: [10.0, 12.0, 15.0, 19.0],
                baseline: Some(9.0),
            },
            PatientScores {
                patient_id: "b".into(),
                scores: [5.0; 4],
                baseline: Some(5.0),
            },
        ];
        let labels = vec![("a".into(), label(Some(2))), ("b".into(), label(None))];
        let r = build_survival_records(&f, &labels, CovariateMode::Levels).unwrap();
        assert_eq!((r[0].time, r[0].event), (12.0, true));
        assert_eq!((r[1].time, r[1].event), (24.0, false));
        assert_eq!(r[0].z, vec![10.0, 12.0, 15.0, 19.0]);
        let d = build_survival_records(&f, &labels, CovariateMode::FirstDifferences).unwrap();
        assert_eq!(d[0].z, vec![1.0, 2.0, 3.0, 4.0]);

        let swapped = vec![labels[1].clone(), labels[0].clone()];
        assert!(build_survival_records(&f, &swapped, CovariateMode::Levels).is_err());
        assert!(build_survival_records(&f[..1], &labels, CovariateMode::Levels).is_err());
    }

    #[test]
    fn probability_table_layout() {
        let rows = vec![ProbabilityRow {
            patient_id: "p1".into(),
            probabilities: [0.1, 0.2, 0.25, 0.5],
            converted: true,
        }];
        let mut buf = Vec::new();
        write_probabilities(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "patient_id,P_6,P_12,P_18,P_24,change_in_cs\np1,0.1,0.2,0.25,0.5,1\n"
        );
    }

    fn arb_records() -> impl Strategy<Value = Vec<SurvivalRecord>> {
        proptest::collection::vec(
            (proptest::collection::vec(-2.0f64..2.0, 2), 1u8..5, proptest::bool::ANY),
            3..12,
        )
        .prop_map(|v| {
            let mut r: Vec<_> = v
                .into_iter()
                .map(|(z, t, e)| SurvivalRecord {
                    z,
                    time: 6.0 * t as f64,
                    event: e,
                })
                .collect();
            r[0].event = true;
            r
        })
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(
            r in arb_records(),
            beta in proptest::collection::vec(-1.0f64..1.0, 2),
            ties in proptest::sample::select(vec![Ties::Breslow, Ties::Efron, Ties::Exact]),
        ) {
            let (_, g, h) = log_partial_likelihood(&beta, &r, ties).unwrap();
            let eps = 1e-5;
            for i in 0..2 {
                let mut up = beta.clone();
                up[i] += eps;
                let mut dn = beta.clone();
                dn[i] -= eps;
                let (vu, gu, _) = log_partial_likelihood(&up, &r, ties).unwrap();
                let (vd, gd, _) = log_partial_likelihood(&dn, &r, ties).unwrap();
                let fd = (vu - vd) / (2.0 * eps);
                prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "grad {} vs {}", fd, g[i]);
                for j in 0..2 {
                    let fdh = (gu[j] - gd[j]) / (2.0 * eps);
                    prop_assert!((fdh - h[(j, i)]).abs() <= 1e-5 * (1.0 + h[(j, i)].abs()));
                }
            }
            let eig = h.clone().symmetric_eigen().eigenvalues;
            prop_assert!(eig.max() <= 1e-10);
        }

        #[test]
        fn baseline_is_monotone_and_probabilities_ordered(
            r in arb_records(),
            beta in proptest::collection::vec(-1.0f64..1.0, 2),
            z in proptest::collection::vec(-3.0f64..3.0, 2),
        ) {
            let h = breslow_baseline(&beta, &r).unwrap();
            prop_assert_eq!(h.eval(0.0), 0.0);
            prop_assert!(h.cumulative.windows(2).all(|w| w[0] <= w[1]));
            let m = CoxModel {
                beta: beta.clone(),
                baseline: h,
                ties: Ties::Efron,
                report: CoxFitReport { iterations: 0, grad_inf_norm: 0.0, log_partial_likelihood: 0.0, null_log_partial_likelihood: 0.0 },
            };
            let p = conversion_probabilities(&m, &z, false).unwrap();
            prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
