//! Seeded synthetic cohorts and survival data with known generating parameters.
//!
//! Each patient follows a linear latent score trajectory `s(t) = b + r t`.
//! Features are a fixed random linear map of `(s(t), r, c)` where `c` is a
//! static per-patient vector, plus noise. The recorded score adds a hidden
//! per-patient offset that no feature reveals, so only a patient's own past
//! scores can expose it.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{format_number, ClinicalStatus, Cohort, FeatureGroup, Patient, PatientId, VisitRecord, ADAS_MAX};
use crate::error::{Error, Result};
use crate::survival::SurvivalRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub months: Vec<u32>,
    pub extra_months: Vec<u32>,
    /// CN, MCI, AD.
    pub proportions: [f64; 3],
    pub group_means: [f64; 3],
    pub group_sds: [f64; 3],
    /// Median score increase per month by group.
    pub slope_medians: [f64; 3],
    /// Log-scale spread of the per-patient slope.
    pub slope_log_sd: f64,
    pub offset_sd: f64,
    pub noise_sd: f64,
    pub feature_dim: usize,
    pub static_dim: usize,
    pub feature_noise_sd: f64,
    pub missing_rate: f64,
    pub mci_threshold: f64,
    pub ad_threshold: f64,
    /// The last this-many patients keep only their first three visits.
    pub under_visit_patients: usize,
    pub hazard_beta: Vec<f64>,
    pub baseline_rate: f64,
    pub censor_rate: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_patients: 200,
            months: vec![0, 6, 12, 18, 24],
            extra_months: Vec::new(),
            proportions: [0.35, 0.45, 0.20],
            group_means: [8.780, 15.735, 33.010],
            group_sds: [4.4512, 7.5023, 11.7477],
            slope_medians: [0.03, 0.25, 0.45],
            slope_log_sd: 0.4,
            offset_sd: 4.0,
            noise_sd: 1.0,
            feature_dim: 12,
            static_dim: 4,
            feature_noise_sd: 0.1,
            missing_rate: 0.05,
            mci_threshold: 18.0,
            ad_threshold: 30.0,
            under_visit_patients: 0,
            hazard_beta: vec![1.0, -0.5, 0.0, 0.0],
            baseline_rate: DEFAULT_BASELINE_RATE,
            censor_rate: 0.2,
            seed: 0,
        }
    }
}

/// Monthly baseline hazard of the synthetic survival data.
pub const DEFAULT_BASELINE_RATE: f64 = 0.2;

/// Largest share of the score range a trajectory may traverse over the schedule.
const MAX_SPAN_FRACTION: f64 = 0.8;

/// Months 30 to 60 in steps of 6, extending the default schedule so every
/// patient has several anchor visits with four observed future scores.
pub fn extended_months() -> Vec<u32> {
    (5..=10).map(|i| 6 * i).collect()
}

impl CohortSpec {
    /// Long follow-up with hidden per-patient offsets.
    pub fn offset_cohort(n_patients: usize, seed: u64) -> Self {
        CohortSpec {
            n_patients,
            extra_months: extended_months(),
            seed,
            ..Default::default()
        }
    }

    /// No offsets, noise or masking: targets are exact linear functions of the features.
    pub fn noiseless(n_patients: usize, seed: u64) -> Self {
        CohortSpec {
            n_patients,
            extra_months: extended_months(),
            offset_sd: 0.0,
            noise_sd: 0.0,
            feature_noise_sd: 0.0,
            missing_rate: 0.0,
            seed,
            ..Default::default()
        }
    }

    pub fn schedule(&self) -> Vec<u32> {
        let mut m: Vec<u32> = self.months.iter().chain(&self.extra_months).copied().collect();
        m.sort_unstable();
        m.dedup();
        m
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("cohort spec: {m}")));
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if self.months.is_empty() {
            return bad("visit schedule is empty");
        }
        let sum: f64 = self.proportions.iter().sum();
        if self.proportions.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return bad("group proportions must be non-negative and sum to 1");
        }
        let sds = self.group_sds.iter().chain([
            &self.slope_log_sd,
            &self.offset_sd,
            &self.noise_sd,
            &self.feature_noise_sd,
        ]);
        if sds.into_iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("standard deviations must be non-negative");
        }
        if self.slope_medians.iter().any(|s| !(*s > 0.0)) {
            return bad("slope medians must be positive");
        }
        for (name, r) in [("missing_rate", self.missing_rate), ("censor_rate", self.censor_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.feature_dim < 2 + self.static_dim {
            return bad("feature_dim must be at least 2 + static_dim");
        }
        if !(self.mci_threshold < self.ad_threshold) {
            return bad("mci_threshold must be below ad_threshold");
        }
        if self.under_visit_patients > self.n_patients {
            return bad("under_visit_patients exceeds n_patients");
        }
        Ok(())
    }
}

/// Latent values of one generated patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientTruth {
    pub patient_id: PatientId,
    pub group: ClinicalStatus,
    pub baseline: f64,
    pub slope: f64,
    pub offset: f64,
    pub static_latent: Vec<f64>,
}

impl PatientTruth {
    /// Score at `month` before the offset, noise and clamping.
    pub fn latent_score(&self, month: u32) -> f64 {
        self.baseline + self.slope * month as f64
    }
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub cohort: Cohort,
    pub truth: Vec<PatientTruth>,
    /// Row-major `feature_dim x (2 + static_dim)` map from latent state to features.
    pub feature_map: Vec<Vec<f64>>,
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        mean
    } else {
        Normal::new(mean, sd).expect("valid sd").sample(rng)
    }
}

fn status_of(score: f64, spec: &CohortSpec) -> ClinicalStatus {
    if score >= spec.ad_threshold {
        ClinicalStatus::Ad
    } else if score >= spec.mci_threshold {
        ClinicalStatus::Mci
    } else {
        ClinicalStatus::Cn
    }
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<SynthCohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latent_dim = 2 + spec.static_dim;
    let scale = 1.0 / (latent_dim as f64).sqrt();
    let feature_map: Vec<Vec<f64>> = (0..spec.feature_dim)
        .map(|_| (0..latent_dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let schedule = spec.schedule();
    let t_max = *schedule.last().expect("non-empty schedule") as f64;
    let groups = ClinicalStatus::ALL;

    let mut patients = Vec::with_capacity(spec.n_patients);
    let mut truth = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let u: f64 = rng.random();
        let g = if u < spec.proportions[0] {
            0
        } else if u < spec.proportions[0] + spec.proportions[1] {
            1
        } else {
            2
        };
        let slope = (spec.slope_medians[g] * normal(&mut rng, 0.0, spec.slope_log_sd).exp())
            .min(MAX_SPAN_FRACTION * ADAS_MAX / t_max.max(1.0));
        let baseline = normal(&mut rng, spec.group_means[g], spec.group_sds[g]).clamp(0.0, ADAS_MAX - slope * t_max);
        let offset = normal(&mut rng, 0.0, spec.offset_sd);
        let static_latent: Vec<f64> = (0..spec.static_dim).map(|_| rng.sample(StandardNormal)).collect();
        let id = PatientId(format!("S{:04}", i + 1));
        let t = PatientTruth {
            patient_id: id.clone(),
            group: groups[g],
            baseline,
            slope,
            offset,
            static_latent,
        };

        let months: &[u32] = if i >= spec.n_patients - spec.under_visit_patients {
            &schedule[..schedule.len().min(3)]
        } else {
            &schedule
        };
        let mut status = groups[g];
        let visits = months
            .iter()
            .map(|&m| {
                let s = t.latent_score(m);
                let latent: Vec<f64> = [s / 10.0, t.slope * 10.0].into_iter().chain(t.static_latent.iter().copied()).collect();
                let mut features = Vec::with_capacity(spec.feature_dim);
                let mut missing = Vec::with_capacity(spec.feature_dim);
                for row in &feature_map {
                    let v = row.iter().zip(&latent).map(|(a, b)| a * b).sum::<f64>()
                        + normal(&mut rng, 0.0, spec.feature_noise_sd);
                    let masked = spec.missing_rate > 0.0 && rng.random::<f64>() < spec.missing_rate;
                    features.push(if masked { 0.0 } else { v });
                    missing.push(masked);
                }
                let truth_score = s + t.offset;
                status = status.max(status_of(truth_score, spec));
                let observed = (truth_score + normal(&mut rng, 0.0, spec.noise_sd)).clamp(0.0, ADAS_MAX);
                VisitRecord {
                    month: m,
                    features,
                    missing,
                    adas13: Some(observed),
                    cs: Some(status),
                }
            })
            .collect();
        patients.push(Patient { id, visits });
        truth.push(t);
    }
    let cohort = Cohort {
        feature_names: (1..=spec.feature_dim).map(|j| format!("MRI_{j:02}")).collect(),
        feature_groups: vec![FeatureGroup::Mri; spec.feature_dim],
        patients,
    };
    Ok(SynthCohort {
        cohort,
        truth,
        feature_map,
    })
}

/// `patient_id,group,baseline,slope,offset,static_1..static_m`.
pub fn write_truth<W: Write>(truth: &[PatientTruth], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let m = truth.first().map_or(0, |t| t.static_latent.len());
    let mut header: Vec<String> = ["patient_id", "group", "baseline", "slope", "offset"].map(String::from).to_vec();
    header.extend((1..=m).map(|j| format!("static_{j}")));
    w.write_record(&header)?;
    for t in truth {
        let mut row = vec![
            t.patient_id.0.clone(),
            t.group.label().to_string(),
            format_number(t.baseline),
            format_number(t.slope),
            format_number(t.offset),
        ];
        row.extend(t.static_latent.iter().map(|&v| format_number(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<truth writer>", e))?;
    Ok(())
}

/// Visits at which a subject may still be followed.
const SURVIVAL_VISITS: [f64; 4] = [6.0, 12.0, 18.0, 24.0];

/// Expected censored fraction when each subject drops out after any of the
/// first three visits with probability `q`.
fn expected_censoring(rates: &[f64], q: f64) -> f64 {
    let last_visit = [q, (1.0 - q) * q, (1.0 - q).powi(2) * q, (1.0 - q).powi(3)];
    rates
        .iter()
        .map(|r| {
            SURVIVAL_VISITS
                .iter()
                .zip(last_visit)
                .map(|(t, pk)| pk * (-r * t).exp())
                .sum::<f64>()
        })
        .sum::<f64>()
        / rates.len() as f64
}

/// Proportional-hazards data with standard normal covariates and exponential
/// event times of rate `baseline_rate * exp(z . beta)`.
///
/// Subjects are seen every 6 months up to 24, and an event is recorded at the
/// first visit after it occurs. After each of the first three visits a
/// subject drops out independently with probability `q`; a dropout is
/// censored at the last visit attended, and anyone event-free at 24 is
/// censored there. `q` is solved so that the expected censored fraction over
/// the drawn covariates equals `censor_rate`. Rates outside the range that
/// dropout can reach for this baseline are rejected.
pub fn generate_survival_data_with(
    beta: &[f64],
    n: usize,
    censor_rate: f64,
    baseline_rate: f64,
    seed: u64,
) -> Result<Vec<SurvivalRecord>> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 subjects, got {n}")));
    }
    if !(0.0..1.0).contains(&censor_rate) {
        return Err(Error::InvalidArgument(format!(
            "censor_rate must lie in [0, 1) so that events occur, got {censor_rate}"
        )));
    }
    if !(baseline_rate > 0.0 && baseline_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!("baseline_rate must be positive, got {baseline_rate}")));
    }
    if beta.is_empty() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("beta must be a non-empty finite vector".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..beta.len()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let rates: Vec<f64> = zs
        .iter()
        .map(|z| baseline_rate * z.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let (floor, ceiling) = (expected_censoring(&rates, 0.0), expected_censoring(&rates, 1.0));
    if censor_rate < floor || censor_rate > ceiling {
        return Err(Error::InvalidArgument(format!(
            "censor_rate {censor_rate} is unreachable with baseline_rate {baseline_rate}: \
             dropout yields between {floor:.3} and {ceiling:.3}"
        )));
    }
    // Censoring increases with q, so bisect.
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if expected_censoring(&rates, mid) < censor_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    Ok(zs
        .into_iter()
        .zip(rates)
        .map(|(z, rate)| {
            let u: f64 = rng.random();
            let t = -(1.0 - u).ln() / rate;
            let mut last = 0;
            while last < 3 && rng.random::<f64>() >= q {
                last += 1;
            }
            let follow_up = SURVIVAL_VISITS[last];
            let detected = 6.0 * (t / 6.0).ceil().max(1.0);
            let event = detected <= follow_up;
            SurvivalRecord {
                z,
                time: if event { detected } else { follow_up },
                event,
            }
        })
        .collect())
}

pub fn generate_survival_data(beta: &[f64], n: usize, censor_rate: f64, seed: u64) -> Result<Vec<SurvivalRecord>> {
    generate_survival_data_with(beta, n, censor_rate, DEFAULT_BASELINE_RATE, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{ingest_reader, schema_for, write_cohort, Schema};

    fn csv_bytes(s: &SynthCohort) -> Vec<u8> {
        let schema = schema_for(&s.cohort, &Schema::default());
        let mut buf = Vec::new();
        write_cohort(&s.cohort, &schema, &mut buf).unwrap();
        buf
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = CohortSpec {
            n_patients: 30,
            ..Default::default()
        };
        let a = csv_bytes(&generate_cohort(&spec).unwrap());
        let b = csv_bytes(&generate_cohort(&spec).unwrap());
        assert_eq!(a, b);
        let c = csv_bytes(&generate_cohort(&CohortSpec { seed: 1, ..spec }).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn round_trips_through_ingestion() {
        let s = generate_cohort(&CohortSpec {
            n_patients: 25,
            missing_rate: 0.2,
            ..Default::default()
        })
        .unwrap();
        let schema = schema_for(&s.cohort, &Schema::default());
        let back = ingest_reader(csv_bytes(&s).as_slice(), &schema).unwrap();
        assert_eq!(back, s.cohort);
    }

    #[test]
    fn noiseless_targets_are_linear_in_features() {
        let s = generate_cohort(&CohortSpec::noiseless(20, 3)).unwrap();
        for (p, t) in s.cohort.patients.iter().zip(&s.truth) {
            for v in &p.visits {
                assert_eq!(v.adas13.unwrap(), t.latent_score(v.month));
                assert!(v.missing.iter().all(|m| !m));
            }
        }
        // Least squares of latent state on features is exact.
        let m = nalgebra::DMatrix::from_fn(12, 6, |i, j| s.feature_map[i][j]);
        assert_eq!(m.rank(1e-10), 6);
    }

    #[test]
    fn group_means_follow_the_spec() {
        let spec = CohortSpec {
            n_patients: 1500,
            proportions: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            ..Default::default()
        };
        let s = generate_cohort(&spec).unwrap();
        for (g, cs) in ClinicalStatus::ALL.iter().enumerate() {
            let b: Vec<f64> = s.truth.iter().filter(|t| t.group == *cs).map(|t| t.baseline).collect();
            assert!(b.len() >= 400);
            let b = &b[..b.len().min(500)];
            let mean = b.iter().sum::<f64>() / b.len() as f64;
            let tol = 3.0 * spec.group_sds[g] / (b.len() as f64).sqrt();
            assert!((mean - spec.group_means[g]).abs() < tol, "{cs:?}: {mean}");
        }
    }

    #[test]
    fn statuses_never_regress() {
        let s = generate_cohort(&CohortSpec::offset_cohort(60, 5)).unwrap();
        for p in &s.cohort.patients {
            assert!(p.visits.windows(2).all(|w| w[0].cs <= w[1].cs));
        }
        assert!(s.cohort.patients.iter().any(|p| p.visits[0].cs < p.visits.last().unwrap().cs));
    }

    #[test]
    fn under_visit_injection() {
        let s = generate_cohort(&CohortSpec {
            n_patients: 10,
            under_visit_patients: 3,
            ..Default::default()
        })
        .unwrap();
        let short = s.cohort.patients.iter().filter(|p| p.visits.len() == 3).count();
        assert_eq!(short, 3);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            CohortSpec {
                proportions: [0.5, 0.5, 0.5],
                ..Default::default()
            },
            CohortSpec {
                missing_rate: 1.5,
                ..Default::default()
            },
            CohortSpec {
                noise_sd: -1.0,
                ..Default::default()
            },
        ] {
            assert!(generate_cohort(&spec).is_err());
        }
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn null_covariates_are_unrelated_to_times() {
        let r = generate_survival_data(&[0.0; 4], 2000, 0.2, 17).unwrap();
        let times: Vec<f64> = r.iter().map(|x| x.time).collect();
        for j in 0..4 {
            let z: Vec<f64> = r.iter().map(|x| x.z[j]).collect();
            assert!(spearman(&z, &times).abs() < 0.1);
        }
    }

    #[test]
    fn survival_data_rules() {
        assert!(generate_survival_data(&[1.0], 100, 1.0, 0).is_err());
        assert!(generate_survival_data(&[1.0], 5, 0.2, 0).is_err());
        let r = generate_survival_data(&[1.0, -0.5], 500, 0.2, 0).unwrap();
        assert!(r.iter().all(|x| [6.0, 12.0, 18.0, 24.0].contains(&x.time)));
        assert!(r.iter().any(|x| x.event) && r.iter().any(|x| !x.event));
        assert_eq!(r, generate_survival_data(&[1.0, -0.5], 500, 0.2, 0).unwrap());
        // Administrative censoring alone exceeds 1%.
        assert!(generate_survival_data(&[1.0, -0.5], 500, 0.01, 0).is_err());
    }

    #[test]
    fn realised_censoring_tracks_the_requested_rate() {
        for (rate, seed) in [(0.1, 1), (0.2, 2), (0.3, 3)] {
            let r = generate_survival_data(&[1.0, -0.5, 0.0, 0.0], 4000, rate, seed).unwrap();
            let censored = r.iter().filter(|x| !x.event).count() as f64 / r.len() as f64;
            // Binomial sd at n = 4000 is below 0.008.
            assert!((censored - rate).abs() < 0.03, "{rate}: {censored}");
        }
    }
}
