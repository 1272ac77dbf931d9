//! Patient filters, imputation, feature selection, z-normalization and
//! assembly of the four-horizon supervised dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, FeatureGroup, Patient, PatientId, GRID_MONTHS};
use crate::error::{Error, Result};

/// Forecast offsets in months from the anchor visit.
pub const HORIZONS: [u32; 4] = [6, 12, 18, 24];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeScope {
    Global,
    #[default]
    PerFold,
}

impl std::str::FromStr for NormalizeScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(NormalizeScope::Global),
            "per_fold" | "per-fold" => Ok(NormalizeScope::PerFold),
            _ => Err(Error::Config(format!("normalize scope must be `global` or `per_fold`, got `{s}`"))),
        }
    }
}

/// Outcome of one patient filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub stage: String,
    pub before: usize,
    pub after: usize,
    pub removed: Vec<(PatientId, String)>,
}

impl FilterReport {
    pub fn dropped(&self) -> usize {
        self.before - self.after
    }
}

fn apply_filter(
    cohort: &Cohort,
    stage: &str,
    mut reject: impl FnMut(&Patient) -> Option<String>,
) -> (Cohort, FilterReport) {
    let mut removed = Vec::new();
    let out = cohort.retain_patients(|p| match reject(p) {
        Some(reason) => {
            removed.push((p.id.clone(), reason));
            false
        }
        None => true,
    });
    let report = FilterReport {
        stage: stage.to_string(),
        before: cohort.patients.len(),
        after: out.patients.len(),
        removed,
    };
    (out, report)
}

pub fn filter_min_visits(cohort: &Cohort, min_visits: usize) -> (Cohort, FilterReport) {
    apply_filter(cohort, "min_visits", |p| {
        (p.visits.len() < min_visits).then(|| format!("{} visits < {min_visits}", p.visits.len()))
    })
}

pub fn filter_required_months(cohort: &Cohort, required: &[u32], tolerance: u32) -> (Cohort, FilterReport) {
    apply_filter(cohort, "required_months", |p| {
        let absent: Vec<String> = required
            .iter()
            .filter(|&&m| !p.visits.iter().any(|v| v.month.abs_diff(m) <= tolerance))
            .map(|m| m.to_string())
            .collect();
        (!absent.is_empty()).then(|| format!("missing months {}", absent.join(" ")))
    })
}

/// Fraction of masked feature cells over all of a patient's visits.
pub fn missing_fraction(p: &Patient) -> f64 {
    let total: usize = p.visits.iter().map(|v| v.missing.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let masked: usize = p.visits.iter().map(|v| v.missing_count()).sum();
    masked as f64 / total as f64
}

pub fn filter_missingness(cohort: &Cohort, max_missing_fraction: f64) -> (Cohort, FilterReport) {
    apply_filter(cohort, "missingness", |p| {
        let f = missing_fraction(p);
        (f > max_missing_fraction).then(|| format!("missing fraction {f:.4} > {max_missing_fraction}"))
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FillReport {
    /// Patient-columns with no observed value at any visit.
    pub fully_missing: Vec<(PatientId, String)>,
}

/// Per patient and column, fills masked cells from the most recent earlier
/// observation, or from the first later one for leading gaps.
///
/// ADAS-Cog13 and clinical status are carried forward only; leading gaps in
/// those stay missing.
pub fn forward_fill(cohort: &Cohort) -> (Cohort, FillReport) {
    let mut out = cohort.clone();
    let mut report = FillReport::default();
    for p in &mut out.patients {
        for c in 0..cohort.width() {
            let Some(first) = p.visits.iter().position(|v| !v.missing[c]) else {
                if !p.visits.is_empty() {
                    report.fully_missing.push((p.id.clone(), cohort.feature_names[c].clone()));
                }
                continue;
            };
            let mut last = p.visits[first].features[c];
            for v in p.visits.iter_mut() {
                if v.missing[c] {
                    v.features[c] = last;
                    v.missing[c] = false;
                } else {
                    last = v.features[c];
                }
            }
        }
        let (mut adas, mut cs) = (None, None);
        for v in p.visits.iter_mut() {
            adas = v.adas13.or(adas);
            cs = v.cs.or(cs);
            v.adas13 = adas;
            v.cs = cs;
        }
    }
    (out, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub group: FeatureGroup,
    /// Regexes over column names; each must match at least one column of the group.
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub groups: Vec<GroupSelection>,
    /// Group the score column is counted under in the selection report.
    #[serde(default)]
    pub label_group: Option<FeatureGroup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub per_group: BTreeMap<FeatureGroup, usize>,
    pub n_inputs: usize,
    /// Inputs plus the label column when it is counted.
    pub n_columns: usize,
}

pub fn select_features(cohort: &Cohort, selection: &FeatureSelection) -> Result<(Cohort, SelectionReport)> {
    if selection.groups.is_empty() {
        return Err(Error::InvalidArgument("no features selected".into()));
    }
    let mut keep = vec![false; cohort.width()];
    let mut unmatched = Vec::new();
    for gs in &selection.groups {
        for pat in &gs.patterns {
            let re = Regex::new(pat).map_err(|e| Error::Config(format!("pattern `{pat}`: {e}")))?;
            let mut any = false;
            for (c, name) in cohort.feature_names.iter().enumerate() {
                if cohort.feature_groups[c] == gs.group && re.is_match(name) {
                    keep[c] = true;
                    any = true;
                }
            }
            if !any {
                unmatched.push(format!("{}:{pat}", gs.group.name()));
            }
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "configured columns absent from cohort: {}",
            unmatched.join(", ")
        )));
    }
    let cols: Vec<usize> = (0..cohort.width()).filter(|&c| keep[c]).collect();
    if cols.is_empty() {
        return Err(Error::InvalidArgument("no features selected".into()));
    }

    let mut per_group = BTreeMap::new();
    for &c in &cols {
        *per_group.entry(cohort.feature_groups[c]).or_insert(0) += 1;
    }
    if let Some(g) = selection.label_group {
        *per_group.entry(g).or_insert(0) += 1;
    }
    let report = SelectionReport {
        per_group,
        n_inputs: cols.len(),
        n_columns: cols.len() + usize::from(selection.label_group.is_some()),
    };

    let pick = |src: &[f64]| cols.iter().map(|&c| src[c]).collect::<Vec<_>>();
    let out = Cohort {
        feature_names: cols.iter().map(|&c| cohort.feature_names[c].clone()).collect(),
        feature_groups: cols.iter().map(|&c| cohort.feature_groups[c]).collect(),
        patients: cohort
            .patients
            .iter()
            .map(|p| Patient {
                id: p.id.clone(),
                visits: p
                    .visits
                    .iter()
                    .map(|v| crate::cohort::VisitRecord {
                        month: v.month,
                        features: pick(&v.features),
                        missing: cols.iter().map(|&c| v.missing[c]).collect(),
                        adas13: v.adas13,
                        cs: v.cs,
                    })
                    .collect(),
            })
            .collect(),
    };
    Ok((out, report))
}

/// Per-column centring and scaling learned from a subset of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Columns with zero spread over the fit rows; these map to zero.
    pub constant: Vec<bool>,
}

impl NormParams {
    /// Sample (N-1) statistics over `fit_rows`, skipping cells for which
    /// `is_missing(row, col)` holds.
    pub fn fit(
        rows: &[Vec<f64>],
        fit_rows: &[usize],
        is_missing: impl Fn(usize, usize) -> bool,
    ) -> Result<NormParams> {
        if fit_rows.is_empty() {
            return Err(Error::InvalidArgument("z-normalization needs at least one fit row".into()));
        }
        let d = rows.get(fit_rows[0]).map_or(0, Vec::len);
        let mut mean = vec![0.0; d];
        let mut sd = vec![0.0; d];
        let mut constant = vec![false; d];
        for c in 0..d {
            let vals: Vec<f64> = fit_rows
                .iter()
                .filter(|&&r| !is_missing(r, c))
                .map(|&r| rows[r][c])
                .collect();
            if vals.is_empty() {
                constant[c] = true;
                continue;
            }
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            mean[c] = m;
            let s = var.sqrt();
            // spread at rounding level of the mean counts as constant
            if s <= 1e-12 * m.abs().max(1e-300) || s == 0.0 {
                constant[c] = true;
            } else {
                sd[c] = s;
            }
        }
        Ok(NormParams { mean, sd, constant })
    }

    pub fn apply_value(&self, col: usize, v: f64) -> f64 {
        if self.constant[col] {
            0.0
        } else {
            (v - self.mean[col]) / self.sd[col]
        }
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(c, &v)| self.apply_value(c, v)).collect()
    }
}

/// Z-normalizes every column of `x` with statistics computed on `fit_rows`.
pub fn z_normalize(x: &[Vec<f64>], fit_rows: &[usize]) -> Result<(Vec<Vec<f64>>, NormParams)> {
    let params = NormParams::fit(x, fit_rows, |_, _| false)?;
    let out = x.iter().map(|r| params.apply_row(r)).collect();
    Ok((out, params))
}

/// One row per (patient, anchor visit) with all four future scores observed.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedSet {
    pub feature_names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub missing: Vec<Vec<bool>>,
    /// Scores at anchor + 6, 12, 18, 24 months.
    pub y: Vec<[f64; 4]>,
    pub patient_of_row: Vec<PatientId>,
    pub anchor_month: Vec<u32>,
    /// Score observed at the anchor visit itself, when present.
    pub anchor_score: Vec<Option<f64>>,
    pub norm_params: Option<NormParams>,
}

impl SupervisedSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    /// Distinct patients in first-appearance order.
    pub fn patients(&self) -> Vec<PatientId> {
        let mut out: Vec<PatientId> = Vec::new();
        for p in &self.patient_of_row {
            if out.last() != Some(p) && !out.contains(p) {
                out.push(p.clone());
            }
        }
        out
    }

    pub fn rows_of(&self, patient: &PatientId) -> Vec<usize> {
        (0..self.len()).filter(|&r| &self.patient_of_row[r] == patient).collect()
    }

    /// Applies `params` to every row; masked cells become 0 (the fit mean).
    pub fn normalize_with(&self, params: &NormParams) -> SupervisedSet {
        let x = self
            .x
            .iter()
            .zip(&self.missing)
            .map(|(row, miss)| {
                row.iter()
                    .enumerate()
                    .map(|(c, &v)| if miss[c] { 0.0 } else { params.apply_value(c, v) })
                    .collect()
            })
            .collect();
        SupervisedSet {
            x,
            norm_params: Some(params.clone()),
            ..self.clone()
        }
    }

    pub fn normalized(&self, fit_rows: &[usize]) -> Result<SupervisedSet> {
        let params = NormParams::fit(&self.x, fit_rows, |r, c| self.missing[r][c])?;
        Ok(self.normalize_with(&params))
    }

    pub fn subset(&self, rows: &[usize]) -> SupervisedSet {
        SupervisedSet {
            feature_names: self.feature_names.clone(),
            x: rows.iter().map(|&r| self.x[r].clone()).collect(),
            missing: rows.iter().map(|&r| self.missing[r].clone()).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            patient_of_row: rows.iter().map(|&r| self.patient_of_row[r].clone()).collect(),
            anchor_month: rows.iter().map(|&r| self.anchor_month[r]).collect(),
            anchor_score: rows.iter().map(|&r| self.anchor_score[r]).collect(),
            norm_params: self.norm_params.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub patients_without_rows: Vec<PatientId>,
}

pub fn build_supervised(cohort: &Cohort) -> (SupervisedSet, BuildReport) {
    let mut set = SupervisedSet {
        feature_names: cohort.feature_names.clone(),
        x: Vec::new(),
        missing: Vec::new(),
        y: Vec::new(),
        patient_of_row: Vec::new(),
        anchor_month: Vec::new(),
        anchor_score: Vec::new(),
        norm_params: None,
    };
    let mut report = BuildReport::default();
    for p in &cohort.patients {
        let before = set.len();
        for v in &p.visits {
            let targets: Option<Vec<f64>> = HORIZONS
                .iter()
                .map(|h| p.visit_at(v.month + h).and_then(|t| t.adas13))
                .collect();
            let Some(targets) = targets else { continue };
            set.x.push(v.features.clone());
            set.missing.push(v.missing.clone());
            set.y.push(targets.try_into().expect("four horizons"));
            set.patient_of_row.push(p.id.clone());
            set.anchor_month.push(v.month);
            set.anchor_score.push(v.adas13);
        }
        if set.len() == before {
            report.patients_without_rows.push(p.id.clone());
        }
    }
    (set, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub min_visits: usize,
    pub required_months: Vec<u32>,
    pub month_tolerance: u32,
    pub max_missing: f64,
    pub normalize_scope: NormalizeScope,
    pub selection: Option<FeatureSelection>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_visits: 4,
            required_months: GRID_MONTHS.to_vec(),
            month_tolerance: 0,
            max_missing: 0.90,
            normalize_scope: NormalizeScope::PerFold,
            selection: None,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_visits < 1 {
            return Err(Error::Config("min_visits must be at least 1".into()));
        }
        if !(self.max_missing > 0.0 && self.max_missing <= 1.0) {
            return Err(Error::Config("max_missing must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PreprocessOutput {
    pub cohort: Cohort,
    pub filters: Vec<FilterReport>,
    pub fill: FillReport,
    pub selection: Option<SelectionReport>,
}

impl PreprocessOutput {
    /// `stage,before,after,dropped` lines.
    pub fn waterfall_csv(&self) -> String {
        let mut s = String::from("stage,before,after,dropped\n");
        for f in &self.filters {
            let _ = writeln!(s, "{},{},{},{}", f.stage, f.before, f.after, f.dropped());
        }
        s
    }
}

/// Filters, fill and selection in order: minimum visits, required months,
/// missingness, forward fill, feature selection.
pub fn preprocess(cohort: &Cohort, config: &PreprocessConfig) -> Result<PreprocessOutput> {
    config.validate()?;
    let (c, r1) = filter_min_visits(cohort, config.min_visits);
    let (c, r2) = filter_required_months(&c, &config.required_months, config.month_tolerance);
    let (c, r3) = filter_missingness(&c, config.max_missing);
    let (c, fill) = forward_fill(&c);
    let (c, selection) = match &config.selection {
        Some(sel) => {
            let (c, rep) = select_features(&c, sel)?;
            (c, Some(rep))
        }
        None => (c, None),
    };
    Ok(PreprocessOutput {
        cohort: c,
        filters: vec![r1, r2, r3],
        fill,
        selection,
    })
}
