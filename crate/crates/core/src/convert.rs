//! Conversion prediction from averaged score forecasts: Cox probabilities per
//! window feed a linear classifier, evaluated with patient-level folds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::{svm_predict, svm_train, PredictionRow, SvmOptions};
use crate::cohort::{align_windows, label_conversion, Cohort, ConversionLabel, PatientId};
use crate::error::{Error, Result};
use crate::eval::{classification_metrics, kfold_split, ClassificationMetrics};
use crate::forecast::{ensemble_average, HorizonForecast};
use crate::survival::{
    build_survival_records, conversion_probabilities, cox_fit, CoxModel, CoxOptions, CovariateMode, PatientScores,
    ProbabilityRow, Ties,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertConfig {
    pub folds: usize,
    pub ties: Ties,
    pub mode: CovariateMode,
    pub normalize: bool,
    pub c: f64,
    pub epochs: usize,
    pub balanced: bool,
    /// Anchor visit whose forecasts are averaged.
    pub anchor_month: u32,
    /// L2 penalty used to refit a fold whose plain Cox fit diverges or is
    /// singular. The averaged horizon scores are strongly collinear.
    pub fallback_penalty: f64,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        ConvertConfig {
            folds: 10,
            ties: Ties::default(),
            mode: CovariateMode::default(),
            normalize: false,
            c: 1.0,
            epochs: 500,
            balanced: false,
            anchor_month: 0,
            fallback_penalty: 0.1,
        }
    }
}

impl ConvertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("convert.folds must be at least 2".into()));
        }
        if !(self.c > 0.0) {
            return Err(Error::Config("convert.c must be positive".into()));
        }
        if !(self.fallback_penalty > 0.0 && self.fallback_penalty.is_finite()) {
            return Err(Error::Config("convert.fallback_penalty must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("convert.epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertReport {
    pub probabilities: Vec<ProbabilityRow>,
    pub predictions: Vec<PredictionRow>,
    pub metrics: ClassificationMetrics,
    /// Fitted model per fold; folds without events in training have none.
    pub cox_models: Vec<(usize, CoxModel)>,
    /// Folds whose Cox model needed the fallback penalty.
    pub penalized_folds: Vec<usize>,
    /// Patients left out, with the reason.
    pub excluded: Vec<(PatientId, String)>,
}

/// Labels every patient with an aligned grid. Baseline-AD patients and
/// patients without a full grid are reported as excluded.
pub fn conversion_labels(
    cohort: &Cohort,
    tolerance: u32,
) -> (Vec<(PatientId, ConversionLabel)>, Vec<(PatientId, String)>) {
    let mut labels = Vec::new();
    let mut excluded = Vec::new();
    for p in &cohort.patients {
        let label = align_windows(&p.visits, tolerance).and_then(|g| label_conversion(&p.id, &g));
        match label {
            Ok(l) if l.baseline_excluded => excluded.push((p.id.clone(), "AD at baseline".into())),
            Ok(l) => labels.push((p.id.clone(), l)),
            Err(e) => excluded.push((p.id.clone(), e.to_string())),
        }
    }
    (labels, excluded)
}

/// Per-patient ensemble of the forecasts made at `anchor_month`.
pub fn averaged_scores(forecasts: &[HorizonForecast], cohort: &Cohort, anchor_month: u32) -> Result<Vec<PatientScores>> {
    let mut by_patient: BTreeMap<&PatientId, Vec<&HorizonForecast>> = BTreeMap::new();
    for f in forecasts.iter().filter(|f| f.anchor_month == anchor_month) {
        by_patient.entry(&f.patient_id).or_default().push(f);
    }
    let mut out = Vec::new();
    for p in &cohort.patients {
        let Some(fs) = by_patient.get(&p.id) else { continue };
        out.push(PatientScores {
            patient_id: p.id.clone(),
            scores: ensemble_average(fs)?,
            baseline: p.visit_at(anchor_month).and_then(|v| v.adas13),
        });
    }
    Ok(out)
}

fn probabilities_for(model: Option<&CoxModel>, records_z: &[Vec<f64>], normalize: bool) -> Result<Vec<[f64; 4]>> {
    records_z
        .iter()
        .map(|z| match model {
            Some(m) => conversion_probabilities(m, z, normalize),
            None => Ok([0.0; 4]),
        })
        .collect()
}

/// Cox model and classifier trained on the other folds score each fold's patients.
pub fn run_convert(
    cohort: &Cohort,
    forecasts: &[HorizonForecast],
    tolerance: u32,
    config: &ConvertConfig,
    seed: u64,
) -> Result<ConvertReport> {
    config.validate()?;
    let (labels, mut excluded) = conversion_labels(cohort, tolerance);
    let scores = averaged_scores(forecasts, cohort, config.anchor_month)?;
    let score_of: BTreeMap<&PatientId, &PatientScores> = scores.iter().map(|s| (&s.patient_id, s)).collect();

    let mut kept_scores = Vec::new();
    let mut kept_labels = Vec::new();
    for (id, label) in labels {
        match score_of.get(&id) {
            Some(s) => {
                kept_scores.push((*s).clone());
                kept_labels.push((id, label));
            }
            None => excluded.push((id, "no forecast at the anchor visit".into())),
        }
    }
    let records = build_survival_records(&kept_scores, &kept_labels, config.mode)?;
    let ids: Vec<PatientId> = kept_labels.iter().map(|(id, _)| id.clone()).collect();
    if ids.len() < 2 {
        return Err(Error::InvalidArgument("fewer than two labelled patients with forecasts".into()));
    }
    let plan = kfold_split(&ids, config.folds.min(ids.len()), seed)?;
    let cox_options = CoxOptions {
        ties: config.ties,
        ..Default::default()
    };
    let svm_options = SvmOptions {
        c: config.c,
        epochs: config.epochs,
        seed,
        balanced: config.balanced,
    };

    let mut probs = vec![[0.0; 4]; ids.len()];
    let mut predictions: Vec<Option<PredictionRow>> = vec![None; ids.len()];
    let mut cox_models = Vec::new();
    let mut penalized_folds = Vec::new();
    for fold in 0..plan.k {
        let (test, train) = plan.split_rows(fold, &ids);
        let train_records: Vec<_> = train.iter().map(|&i| records[i].clone()).collect();
        let model = match cox_fit(&train_records, &cox_options) {
            Ok(m) => Some(m),
            Err(Error::NoEvents) => None,
            Err(Error::MonotoneLikelihood(_) | Error::Numerical(_)) => {
                penalized_folds.push(fold);
                let penalized = CoxOptions {
                    penalty: config.fallback_penalty,
                    ..cox_options
                };
                Some(cox_fit(&train_records, &penalized)?)
            }
            Err(e) => return Err(e),
        };
        let z_train: Vec<Vec<f64>> = train.iter().map(|&i| records[i].z.clone()).collect();
        let z_test: Vec<Vec<f64>> = test.iter().map(|&i| records[i].z.clone()).collect();
        let p_train = probabilities_for(model.as_ref(), &z_train, config.normalize)?;
        let p_test = probabilities_for(model.as_ref(), &z_test, config.normalize)?;
        let x_train: Vec<Vec<f64>> = p_train.iter().map(|p| p.to_vec()).collect();
        let y_train: Vec<i8> = train.iter().map(|&i| if records[i].event { 1 } else { -1 }).collect();
        let classifier = match svm_train(&x_train, &y_train, &svm_options) {
            Ok(c) => Some(c),
            Err(Error::SingleClass) => None,
            Err(e) => return Err(e),
        };
        for (&i, p) in test.iter().zip(p_test) {
            probs[i] = p;
            let (label, score) = match &classifier {
                Some(c) => svm_predict(c, &p)?,
                // Only one class in the training folds: predict it.
                None => (y_train[0], 0.0),
            };
            predictions[i] = Some(PredictionRow {
                patient_id: ids[i].clone(),
                truth: records[i].event,
                predicted: label > 0,
                score,
            });
        }
        if let Some(m) = model {
            cox_models.push((fold, m));
        }
    }
    let predictions: Vec<PredictionRow> = predictions.into_iter().map(|p| p.expect("every patient tested once")).collect();
    let metrics = classification_metrics(
        &predictions.iter().map(|p| p.predicted).collect::<Vec<_>>(),
        &predictions.iter().map(|p| p.truth).collect::<Vec<_>>(),
    )?;
    let probabilities = ids
        .iter()
        .zip(&probs)
        .zip(&records)
        .map(|((id, p), r)| ProbabilityRow {
            patient_id: id.clone(),
            probabilities: *p,
            converted: r.event,
        })
        .collect();
    Ok(ConvertReport {
        probabilities,
        predictions,
        metrics,
        cox_models,
        penalized_folds,
        excluded,
    })
}
