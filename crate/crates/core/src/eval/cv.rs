use std::collections::BTreeMap;

use rayon::prelude::*;

use super::folds::{kfold_split, FoldPlan};
use super::metrics::Summary;
use crate::cohort::PatientId;
use crate::error::Result;
use crate::forecast::{
    forecast, personalize, train_source, train_target, HistoryRow, HorizonForecast, ModelKind, SourceOptions,
    TargetOrSource,
};
use crate::preprocess::{NormParams, NormalizeScope, SupervisedSet, HORIZONS};

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub normalize_scope: NormalizeScope,
    pub source: SourceOptions,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 10,
            seed: 0,
            normalize_scope: NormalizeScope::PerFold,
            source: SourceOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train_rows: usize,
    pub n_test_rows: usize,
    /// Pooled over all test rows and the four horizons.
    pub mae: BTreeMap<ModelKind, f64>,
    pub horizon_mae: BTreeMap<ModelKind, [f64; 4]>,
    /// Test rows with a non-empty history, and how many of them had a pGP
    /// error no larger than the sGP error (pooled over horizons).
    pub post_first_rows: usize,
    pub pgp_not_worse: usize,
    pub forecasts: Vec<HorizonForecast>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
    pub summary: BTreeMap<ModelKind, Summary>,
}

impl EvalReport {
    pub fn per_fold_mae(&self, kind: ModelKind) -> Vec<f64> {
        self.folds.iter().map(|f| f.mae[&kind]).collect()
    }

    /// Folds in which `a` has a strictly lower MAE than `b`.
    pub fn folds_better(&self, a: ModelKind, b: ModelKind) -> usize {
        self.folds.iter().filter(|f| f.mae[&a] < f.mae[&b]).count()
    }

    pub fn forecasts(&self) -> impl Iterator<Item = &HorizonForecast> {
        self.folds.iter().flat_map(|f| &f.forecasts)
    }
}

/// Earlier rows of the patient, with each target kept only if it was
/// observed by `anchor`.
pub fn causal_history(set: &SupervisedSet, rows: &[usize], anchor: u32) -> Vec<HistoryRow> {
    rows.iter()
        .filter(|&&s| set.anchor_month[s] < anchor)
        .map(|&s| HistoryRow {
            x: set.x[s].clone(),
            targets: std::array::from_fn(|h| {
                (set.anchor_month[s] + HORIZONS[h] <= anchor).then_some(set.y[s][h])
            }),
        })
        .collect()
}

fn fit_norm(set: &SupervisedSet, rows: &[usize]) -> Result<NormParams> {
    NormParams::fit(&set.x, rows, |r, c| set.missing[r][c])
}

fn run_fold(set: &SupervisedSet, plan: &FoldPlan, fold: usize, config: &CvConfig) -> Result<FoldResult> {
    let (test_rows, train_rows) = plan.split_rows(fold, &set.patient_of_row);
    let normalized = match config.normalize_scope {
        NormalizeScope::PerFold => set.normalize_with(&fit_norm(set, &train_rows)?),
        NormalizeScope::Global => set.clone(),
    };
    let source = train_source(&normalized.subset(&train_rows), &config.source)?;
    let hypers = source.hypers();

    let mut patients: Vec<PatientId> = Vec::new();
    for &r in &test_rows {
        if !patients.contains(&set.patient_of_row[r]) {
            patients.push(set.patient_of_row[r].clone());
        }
    }

    let kinds = ModelKind::ALL;
    let mut abs_err: BTreeMap<ModelKind, [Vec<f64>; 4]> = kinds.iter().map(|&k| (k, Default::default())).collect();
    let mut forecasts = Vec::new();
    let (mut post_first_rows, mut pgp_not_worse) = (0, 0);
    for pid in &patients {
        let mut rows: Vec<usize> = test_rows.iter().copied().filter(|&r| &set.patient_of_row[r] == pid).collect();
        rows.sort_by_key(|&r| set.anchor_month[r]);
        for &r in &rows {
            let anchor = set.anchor_month[r];
            let x = &normalized.x[r];
            let history = causal_history(&normalized, &rows, anchor);
            let s = forecast(&source, pid, x, anchor)?;
            let p = forecast(&personalize(&source, &history)?, pid, x, anchor)?;
            let has_target = history.iter().any(|h| h.targets.iter().any(Option::is_some));
            let target = if has_target { Some(train_target(&history, &hypers)?) } else { None };
            let t = forecast(&TargetOrSource { target, source: &source }, pid, x, anchor)?;

            let err = |f: &HorizonForecast, h: usize| (f.horizons[h].mean - set.y[r][h]).abs();
            if !history.is_empty() {
                post_first_rows += 1;
                let es: f64 = (0..4).map(|h| err(&s, h)).sum();
                let ep: f64 = (0..4).map(|h| err(&p, h)).sum();
                pgp_not_worse += (ep <= es) as usize;
            }
            for f in [&s, &p, &t] {
                let e = abs_err.get_mut(&f.kind).expect("all kinds present");
                for (h, eh) in e.iter_mut().enumerate() {
                    eh.push(err(f, h));
                }
            }
            forecasts.extend([s, p, t]);
        }
    }

    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mae = abs_err
        .iter()
        .map(|(&k, e)| (k, mean(&e.iter().flatten().copied().collect::<Vec<_>>())))
        .collect();
    let horizon_mae = abs_err.iter().map(|(&k, e)| (k, std::array::from_fn(|h| mean(&e[h])))).collect();
    Ok(FoldResult {
        fold,
        n_train_rows: train_rows.len(),
        n_test_rows: test_rows.len(),
        mae,
        horizon_mae,
        post_first_rows,
        pgp_not_worse,
        forecasts,
    })
}

/// Patient-independent k-fold evaluation of the three forecasters.
/// `set` holds unnormalized features; normalization follows `config`.
pub fn run_cv(set: &SupervisedSet, config: &CvConfig) -> Result<EvalReport> {
    let plan = kfold_split(&set.patients(), config.k, config.seed)?;
    let prepared;
    let set = match config.normalize_scope {
        NormalizeScope::Global => {
            let all: Vec<usize> = (0..set.len()).collect();
            prepared = set.normalize_with(&fit_norm(set, &all)?);
            &prepared
        }
        NormalizeScope::PerFold => set,
    };
    let folds: Vec<FoldResult> = (0..plan.k)
        .into_par_iter()
        .map(|f| run_fold(set, &plan, f, config))
        .collect::<Result<_>>()?;
    let summary = ModelKind::ALL
        .iter()
        .map(|&k| (k, Summary::of(&folds.iter().map(|f| f.mae[&k]).collect::<Vec<_>>())))
        .collect();
    Ok(EvalReport { plan, folds, summary })
}
