//! Four-horizon score forecasting with source, personalized and target GPs.
//!
//! Each horizon is an independent single-output GP over the anchor-visit
//! features. The personalized model conditions the source posterior on the
//! patient's own past (input, score) pairs; the target model is fitted on
//! those pairs alone under the source hyperparameters.

use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{format_number, PatientId, ADAS_MAX};
use crate::error::{Error, Result};
use crate::gp::{
    default_hyper, gp_fit, optimize_hyperparameters, ConditionedGp, GpHyper, KernelSpec, OptimizeOptions,
    OptimizeReport, Prediction, TrainedGp,
};
use crate::preprocess::{SupervisedSet, HORIZONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "sGP")]
    Source,
    #[serde(rename = "pGP")]
    Personalized,
    #[serde(rename = "tGP")]
    Target,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Source, ModelKind::Personalized, ModelKind::Target];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Source => "sGP",
            ModelKind::Personalized => "pGP",
            ModelKind::Target => "tGP",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sGP" => Ok(ModelKind::Source),
            "pGP" => Ok(ModelKind::Personalized),
            "tGP" => Ok(ModelKind::Target),
            _ => Err(Error::InvalidArgument(format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonEntry {
    /// Mean clamped to the score range.
    pub mean: f64,
    pub raw_mean: f64,
    pub variance: f64,
    /// The model had no data for this horizon and the source model answered.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonForecast {
    pub patient_id: PatientId,
    pub anchor_month: u32,
    pub kind: ModelKind,
    pub horizons: [HorizonEntry; 4],
}

impl HorizonForecast {
    pub fn means(&self) -> [f64; 4] {
        self.horizons.map(|h| h.mean)
    }
}

/// A model answering per-horizon predictive queries.
pub trait HorizonPredictor {
    fn kind(&self) -> ModelKind;

    /// Prediction for horizon index `h` (0..4) and whether it came from a fallback.
    fn predict_horizon(&self, h: usize, x: &[f64]) -> Result<(Prediction, bool)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceOptions {
    /// Initial hyperparameters; `None` derives them per horizon from the targets.
    pub hyper_init: Option<GpHyper<KernelSpec>>,
    pub optimize: OptimizeOptions,
    /// Evidence optimization runs on at most this many evenly spaced rows.
    pub max_optimize_rows: usize,
}

impl Default for SourceOptions {
    fn default() -> Self {
        SourceOptions {
            hyper_init: None,
            optimize: OptimizeOptions {
                budget: 40,
                ..OptimizeOptions::default()
            },
            max_optimize_rows: 200,
        }
    }
}

/// One population GP per horizon, all trained on the same rows.
#[derive(Debug, Clone)]
pub struct SourceModel {
    pub horizons: [TrainedGp<KernelSpec>; 4],
    pub reports: [OptimizeReport; 4],
}

impl SourceModel {
    pub fn input_dim(&self) -> Option<usize> {
        self.horizons[0].input_dim()
    }

    pub fn hypers(&self) -> [GpHyper<KernelSpec>; 4] {
        [0, 1, 2, 3].map(|h| self.horizons[h].hyper().clone())
    }
}

fn evenly_spaced(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn train_source(train: &SupervisedSet, options: &SourceOptions) -> Result<SourceModel> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("cannot train a source model on zero rows".into()));
    }
    let d = train.width();
    let fitted: Vec<(TrainedGp<KernelSpec>, OptimizeReport)> = (0..4)
        .into_par_iter()
        .map(|h| {
            let y: Vec<f64> = train.y.iter().map(|r| r[h]).collect();
            let mut init = options.hyper_init.clone().unwrap_or_else(|| default_hyper(&y, d));
            init.prior_mean = mean(&y);
            let sub = evenly_spaced(train.len(), options.max_optimize_rows.max(1));
            let xs: Vec<Vec<f64>> = sub.iter().map(|&r| train.x[r].clone()).collect();
            let ys: Vec<f64> = sub.iter().map(|&r| y[r]).collect();
            let (hyper, report) = optimize_hyperparameters(&xs, &ys, &init, &options.optimize)?;
            Ok((gp_fit(&train.x, &y, &hyper)?, report))
        })
        .collect::<Result<_>>()?;
    let mut it = fitted.into_iter();
    let mut next = || it.next().expect("four horizons");
    let (g0, r0) = next();
    let (g1, r1) = next();
    let (g2, r2) = next();
    let (g3, r3) = next();
    Ok(SourceModel {
        horizons: [g0, g1, g2, g3],
        reports: [r0, r1, r2, r3],
    })
}

impl HorizonPredictor for SourceModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Source
    }

    fn predict_horizon(&self, h: usize, x: &[f64]) -> Result<(Prediction, bool)> {
        Ok((self.horizons[h].predict(x)?, false))
    }
}

/// A past visit of the patient being forecast. `targets[h]` is the observed
/// score at that visit plus `HORIZONS[h]` months, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub x: Vec<f64>,
    pub targets: [Option<f64>; 4],
}

fn horizon_history(history: &[HistoryRow], h: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    history
        .iter()
        .filter_map(|r| r.targets[h].map(|y| (r.x.clone(), y)))
        .unzip()
}

fn check_history_dim(history: &[HistoryRow], d: Option<usize>) -> Result<()> {
    if let Some(d) = d {
        if let Some(bad) = history.iter().find(|r| r.x.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: bad.x.len(),
            });
        }
    }
    Ok(())
}

/// Source posterior conditioned on the patient's history.
#[derive(Debug, Clone)]
pub struct PersonalizedModel<'a> {
    horizons: [ConditionedGp<'a, KernelSpec>; 4],
}

pub fn personalize<'a>(source: &'a SourceModel, history: &[HistoryRow]) -> Result<PersonalizedModel<'a>> {
    check_history_dim(history, source.input_dim())?;
    let build = |h: usize| {
        let (x, y) = horizon_history(history, h);
        ConditionedGp::new(&source.horizons[h], &x, &y)
    };
    Ok(PersonalizedModel {
        horizons: [build(0)?, build(1)?, build(2)?, build(3)?],
    })
}

impl PersonalizedModel<'_> {
    pub fn history_sizes(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|h| self.horizons[h].n_extra())
    }
}

impl HorizonPredictor for PersonalizedModel<'_> {
    fn kind(&self) -> ModelKind {
        ModelKind::Personalized
    }

    fn predict_horizon(&self, h: usize, x: &[f64]) -> Result<(Prediction, bool)> {
        Ok((self.horizons[h].predict(x)?, false))
    }
}

/// GPs fitted on the patient's own history under fixed hyperparameters.
/// Horizons without any observed target have no model.
#[derive(Debug, Clone)]
pub struct TargetModel {
    horizons: [Option<TrainedGp<KernelSpec>>; 4],
}

pub fn train_target(history: &[HistoryRow], hypers: &[GpHyper<KernelSpec>; 4]) -> Result<TargetModel> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let d = history[0].x.len();
    check_history_dim(history, Some(d))?;
    let build = |h: usize| -> Result<Option<TrainedGp<KernelSpec>>> {
        let (x, y) = horizon_history(history, h);
        if y.is_empty() {
            return Ok(None);
        }
        let hyper = GpHyper {
            prior_mean: mean(&y),
            ..hypers[h].clone()
        };
        gp_fit(&x, &y, &hyper).map(Some)
    };
    Ok(TargetModel {
        horizons: [build(0)?, build(1)?, build(2)?, build(3)?],
    })
}

impl TargetModel {
    pub fn has_horizon(&self, h: usize) -> bool {
        self.horizons[h].is_some()
    }
}

impl HorizonPredictor for TargetModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Target
    }

    fn predict_horizon(&self, h: usize, x: &[f64]) -> Result<(Prediction, bool)> {
        match &self.horizons[h] {
            Some(gp) => Ok((gp.predict(x)?, false)),
            None => Err(Error::EmptyHistory),
        }
    }
}

/// Target model that answers with the source model where it has no data,
/// as on a patient's first visit.
pub struct TargetOrSource<'a> {
    pub target: Option<TargetModel>,
    pub source: &'a SourceModel,
}

impl HorizonPredictor for TargetOrSource<'_> {
    fn kind(&self) -> ModelKind {
        ModelKind::Target
    }

    fn predict_horizon(&self, h: usize, x: &[f64]) -> Result<(Prediction, bool)> {
        match &self.target {
            Some(t) if t.has_horizon(h) => t.predict_horizon(h, x),
            _ => Ok((self.source.horizons[h].predict(x)?, true)),
        }
    }
}

/// Four-horizon forecast at anchor `anchor_month`, means clamped to `[0, 85]`.
pub fn forecast(
    predictor: &impl HorizonPredictor,
    patient_id: &PatientId,
    x: &[f64],
    anchor_month: u32,
) -> Result<HorizonForecast> {
    let mut horizons = [HorizonEntry {
        mean: 0.0,
        raw_mean: 0.0,
        variance: 0.0,
        fallback: false,
    }; 4];
    for (h, entry) in horizons.iter_mut().enumerate() {
        let (p, fallback) = predictor.predict_horizon(h, x)?;
        *entry = HorizonEntry {
            mean: p.mean.clamp(0.0, ADAS_MAX),
            raw_mean: p.mean,
            variance: p.variance.max(0.0),
            fallback,
        };
    }
    Ok(HorizonForecast {
        patient_id: patient_id.clone(),
        anchor_month,
        kind: predictor.kind(),
        horizons,
    })
}

/// Per-horizon mean of the forecasts' means. All forecasts must share patient
/// and anchor, and each model kind may appear once.
pub fn ensemble_average(forecasts: &[&HorizonForecast]) -> Result<[f64; 4]> {
    let Some(first) = forecasts.first() else {
        return Err(Error::InvalidArgument("ensemble of zero forecasts".into()));
    };
    for (i, f) in forecasts.iter().enumerate() {
        if f.patient_id != first.patient_id || f.anchor_month != first.anchor_month {
            return Err(Error::InvalidArgument("ensemble members differ in patient or anchor".into()));
        }
        if forecasts[..i].iter().any(|g| g.kind == f.kind) {
            return Err(Error::InvalidArgument(format!("model kind {} appears twice", f.kind)));
        }
    }
    let n = forecasts.len() as f64;
    let mut out = [0.0; 4];
    for (h, o) in out.iter_mut().enumerate() {
        *o = forecasts.iter().map(|f| f.horizons[h].mean).sum::<f64>() / n;
    }
    Ok(out)
}

fn forecast_header() -> Vec<String> {
    let mut h = vec!["patient_id".to_string(), "anchor_month".into(), "model_kind".into()];
    for m in HORIZONS {
        h.push(format!("mean_{m}"));
        h.push(format!("var_{m}"));
    }
    h
}

/// `patient_id, anchor_month, model_kind, mean_6, var_6, ..., mean_24, var_24`.
pub fn write_forecasts<W: Write>(forecasts: &[HorizonForecast], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(forecast_header())?;
    for f in forecasts {
        let mut row = vec![f.patient_id.0.clone(), f.anchor_month.to_string(), f.kind.label().to_string()];
        for e in &f.horizons {
            row.push(format_number(e.mean));
            row.push(format_number(e.variance));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<forecast writer>", e))?;
    Ok(())
}

pub fn read_forecasts<R: Read>(reader: R) -> Result<Vec<HorizonForecast>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != forecast_header() {
        return Err(Error::Config("unexpected forecast table header".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let num = |c: usize| -> Result<f64> {
            rec[c].parse().map_err(|_| Error::Parse {
                row,
                column: header[c].clone(),
                message: format!("non-numeric value `{}`", &rec[c]),
            })
        };
        let mut horizons = [HorizonEntry {
            mean: 0.0,
            raw_mean: 0.0,
            variance: 0.0,
            fallback: false,
        }; 4];
        for (h, e) in horizons.iter_mut().enumerate() {
            let m = num(3 + 2 * h)?;
            *e = HorizonEntry {
                mean: m,
                raw_mean: m,
                variance: num(4 + 2 * h)?,
                fallback: false,
            };
        }
        out.push(HorizonForecast {
            patient_id: PatientId(rec[0].to_string()),
            anchor_month: rec[1].parse().map_err(|_| Error::Parse {
                row,
                column: "anchor_month".into(),
                message: format!("bad month `{}`", &rec[1]),
            })?,
            kind: rec[2].parse()?,
            horizons,
        });
    }
    Ok(out)
}
