//! Longitudinal patient records, delimited-file ingestion and conversion labels.
//!
//! A [`Cohort`] is a set of patients, each with an ordered list of visits.
//! Every visit carries a feature vector of the cohort's width together with a
//! missing-value mask; masked cells hold `0.0` and must never be read as data.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Months of the five-slot conversion grid.
pub const GRID_MONTHS: [u32; 5] = [0, 6, 12, 18, 24];

/// Upper bound of the ADAS-Cog13 scale.
pub const ADAS_MAX: f64 = 85.0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub String);

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PatientId {
    fn from(s: &str) -> Self {
        PatientId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum ClinicalStatus {
    Cn = 1,
    Mci = 2,
    Ad = 3,
}

impl ClinicalStatus {
    pub const ALL: [ClinicalStatus; 3] = [ClinicalStatus::Cn, ClinicalStatus::Mci, ClinicalStatus::Ad];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ClinicalStatus::Cn),
            2 => Some(ClinicalStatus::Mci),
            3 => Some(ClinicalStatus::Ad),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ClinicalStatus::Cn => "CN",
            ClinicalStatus::Mci => "MCI",
            ClinicalStatus::Ad => "AD",
        }
    }

    fn parse(cell: &str) -> Option<Self> {
        match cell.trim().to_ascii_uppercase().as_str() {
            "1" | "1.0" | "CN" | "NL" => Some(ClinicalStatus::Cn),
            "2" | "2.0" | "MCI" => Some(ClinicalStatus::Mci),
            "3" | "3.0" | "AD" | "DEMENTIA" => Some(ClinicalStatus::Ad),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureGroup {
    Cognitive,
    #[serde(rename = "MRI")]
    Mri,
    #[serde(rename = "DTI")]
    Dti,
    Genetics,
    Demographics,
    #[serde(rename = "CSF")]
    Csf,
    Other,
}

impl FeatureGroup {
    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Cognitive => "Cognitive",
            FeatureGroup::Mri => "MRI",
            FeatureGroup::Dti => "DTI",
            FeatureGroup::Genetics => "Genetics",
            FeatureGroup::Demographics => "Demographics",
            FeatureGroup::Csf => "CSF",
            FeatureGroup::Other => "Other",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub month: u32,
    pub features: Vec<f64>,
    /// `true` marks a non-informative cell.
    pub missing: Vec<bool>,
    pub adas13: Option<f64>,
    pub cs: Option<ClinicalStatus>,
}

impl VisitRecord {
    pub fn feature(&self, column: usize) -> Option<f64> {
        (!self.missing[column]).then(|| self.features[column])
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub id: PatientId,
    /// Sorted by strictly increasing month.
    pub visits: Vec<VisitRecord>,
}

impl Patient {
    pub fn months(&self) -> impl Iterator<Item = u32> + '_ {
        self.visits.iter().map(|v| v.month)
    }

    pub fn visit_at(&self, month: u32) -> Option<&VisitRecord> {
        self.visits
            .binary_search_by_key(&month, |v| v.month)
            .ok()
            .map(|i| &self.visits[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub feature_names: Vec<String>,
    pub feature_groups: Vec<FeatureGroup>,
    pub patients: Vec<Patient>,
}

impl Cohort {
    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn patient(&self, id: &PatientId) -> Option<&Patient> {
        self.patients.iter().find(|p| &p.id == id)
    }

    pub fn n_visits(&self) -> usize {
        self.patients.iter().map(|p| p.visits.len()).sum()
    }

    /// Keeps the patients for which `keep` holds, preserving order.
    pub fn retain_patients(&self, mut keep: impl FnMut(&Patient) -> bool) -> Cohort {
        Cohort {
            feature_names: self.feature_names.clone(),
            feature_groups: self.feature_groups.clone(),
            patients: self.patients.iter().filter(|p| keep(p)).cloned().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width();
        if self.feature_groups.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: self.feature_groups.len(),
            });
        }
        let mut seen = HashSet::new();
        for p in &self.patients {
            if !seen.insert(&p.id) {
                return Err(Error::InvalidArgument(format!("duplicate patient id `{}`", p.id)));
            }
            for pair in p.visits.windows(2) {
                if pair[0].month >= pair[1].month {
                    return Err(Error::DuplicateVisit {
                        patient: p.id.0.clone(),
                        month: pair[1].month,
                    });
                }
            }
            for v in &p.visits {
                if v.features.len() != d || v.missing.len() != d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: v.features.len().min(v.missing.len()),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A regex rule assigning matching feature columns to a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPattern {
    pub group: FeatureGroup,
    pub pattern: String,
}

/// Column mapping for ingestion.
///
/// Every column other than the four named ones is a feature. Its group comes
/// from `columns` when listed there, else from the first matching entry of
/// `group_patterns`, else [`FeatureGroup::Other`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub patient_id: String,
    pub month: String,
    pub adas13: String,
    pub cs: String,
    #[serde(default = "default_sentinels")]
    pub missing_sentinels: Vec<f64>,
    /// Allowed distance in months when matching a visit to a grid month.
    #[serde(default)]
    pub month_tolerance: u32,
    #[serde(default)]
    pub columns: BTreeMap<String, FeatureGroup>,
    #[serde(default)]
    pub group_patterns: Vec<GroupPattern>,
}

fn default_sentinels() -> Vec<f64> {
    vec![-999999.0, -9999999.0]
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            patient_id: "RID".into(),
            month: "M".into(),
            adas13: "ADAS13".into(),
            cs: "DX".into(),
            missing_sentinels: default_sentinels(),
            month_tolerance: 0,
            columns: BTreeMap::new(),
            group_patterns: Vec::new(),
        }
    }
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("schema: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    fn is_sentinel(&self, value: f64) -> bool {
        self.missing_sentinels.iter().any(|&s| s == value)
    }

    fn group_resolver(&self) -> Result<impl Fn(&str) -> FeatureGroup + '_> {
        let compiled = self
            .group_patterns
            .iter()
            .map(|gp| {
                Regex::new(&gp.pattern)
                    .map(|re| (re, gp.group))
                    .map_err(|e| Error::Config(format!("group pattern `{}`: {e}", gp.pattern)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(move |name: &str| {
            self.columns.get(name).copied().unwrap_or_else(|| {
                compiled
                    .iter()
                    .find(|(re, _)| re.is_match(name))
                    .map(|(_, g)| *g)
                    .unwrap_or(FeatureGroup::Other)
            })
        })
    }
}

pub fn ingest_cohort(path: impl AsRef<Path>, schema: &Schema) -> Result<Cohort> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &Schema) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column `{name}` not found in header")))
    };
    let id_col = find(&schema.patient_id)?;
    let month_col = find(&schema.month)?;
    let adas_col = find(&schema.adas13)?;
    let cs_col = find(&schema.cs)?;
    let reserved = [id_col, month_col, adas_col, cs_col];

    let feature_cols: Vec<usize> = (0..headers.len()).filter(|c| !reserved.contains(c)).collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].to_string()).collect();
    let resolve = schema.group_resolver()?;
    let feature_groups = feature_names.iter().map(|n| resolve(n)).collect();

    let mut order: Vec<PatientId> = Vec::new();
    let mut by_patient: HashMap<PatientId, Vec<VisitRecord>> = HashMap::new();
    let mut seen: HashSet<(PatientId, u32)> = HashSet::new();

    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let cell = |c: usize| record.get(c).unwrap_or("");
        let perr = |c: usize, message: String| Error::Parse {
            row,
            column: headers[c].to_string(),
            message,
        };

        let id = cell(id_col);
        if id.is_empty() {
            return Err(perr(id_col, "empty patient id".into()));
        }
        let id = PatientId(id.to_string());
        let month = parse_month(cell(month_col)).map_err(|m| perr(month_col, m))?;

        let adas13 = match parse_number(cell(adas_col), schema).map_err(|m| perr(adas_col, m))? {
            Some(v) if !(0.0..=ADAS_MAX).contains(&v) => {
                return Err(perr(adas_col, format!("ADAS-Cog13 {v} outside [0, {ADAS_MAX}]")))
            }
            other => other,
        };
        let cs_cell = cell(cs_col);
        let cs = if cs_cell.is_empty() || cs_cell.parse::<f64>().is_ok_and(|v| schema.is_sentinel(v)) {
            None
        } else {
            Some(ClinicalStatus::parse(cs_cell).ok_or_else(|| perr(cs_col, format!("unknown clinical status `{cs_cell}`")))?)
        };

        let mut features = Vec::with_capacity(feature_cols.len());
        let mut missing = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            match parse_number(cell(c), schema).map_err(|m| perr(c, m))? {
                Some(v) => {
                    features.push(v);
                    missing.push(false);
                }
                None => {
                    features.push(0.0);
                    missing.push(true);
                }
            }
        }

        if !seen.insert((id.clone(), month)) {
            return Err(Error::DuplicateVisit {
                patient: id.0,
                month,
            });
        }
        let visits = by_patient.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        visits.push(VisitRecord {
            month,
            features,
            missing,
            adas13,
            cs,
        });
    }

    if order.is_empty() {
        return Err(Error::NoRecords);
    }
    let patients = order
        .into_iter()
        .map(|id| {
            let mut visits = by_patient.remove(&id).unwrap_or_default();
            visits.sort_by_key(|v| v.month);
            Patient { id, visits }
        })
        .collect();
    Ok(Cohort {
        feature_names,
        feature_groups,
        patients,
    })
}

fn parse_month(cell: &str) -> std::result::Result<u32, String> {
    if let Ok(m) = cell.parse::<u32>() {
        return Ok(m);
    }
    match cell.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(v as u32),
        Ok(v) => Err(format!("month must be a non-negative integer, got {v}")),
        Err(_) => Err(format!("non-numeric month `{cell}`")),
    }
}

/// `Ok(None)` for empty cells and sentinels.
fn parse_number(cell: &str, schema: &Schema) -> std::result::Result<Option<f64>, String> {
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| format!("non-numeric value `{cell}`"))?;
    if schema.is_sentinel(v) || v.is_nan() {
        Ok(None)
    } else if !v.is_finite() {
        Err(format!("non-finite value `{cell}`"))
    } else {
        Ok(Some(v))
    }
}

/// Writes `cohort` in the ingestion format described by `schema`.
///
/// Masked cells are written as the first configured sentinel (empty when no
/// sentinel is configured); missing scores and statuses as empty cells.
pub fn write_cohort<W: Write>(cohort: &Cohort, schema: &Schema, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let missing_cell = schema
        .missing_sentinels
        .first()
        .map(|s| format_number(*s))
        .unwrap_or_default();

    let mut header = vec![
        schema.patient_id.clone(),
        schema.month.clone(),
        schema.adas13.clone(),
        schema.cs.clone(),
    ];
    header.extend(cohort.feature_names.iter().cloned());
    w.write_record(&header)?;

    let mut row = Vec::with_capacity(header.len());
    for p in &cohort.patients {
        for v in &p.visits {
            row.clear();
            row.push(p.id.0.clone());
            row.push(v.month.to_string());
            row.push(v.adas13.map(format_number).unwrap_or_default());
            row.push(v.cs.map(|c| c.code().to_string()).unwrap_or_default());
            for (x, &m) in v.features.iter().zip(&v.missing) {
                row.push(if m { missing_cell.clone() } else { format_number(*x) });
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<cohort writer>", e))?;
    Ok(())
}

pub fn write_cohort_file(cohort: &Cohort, schema: &Schema, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_cohort(cohort, schema, std::io::BufWriter::new(file))
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_number(x: f64) -> String {
    format!("{x}")
}

/// Schema describing a cohort written by [`write_cohort`], with every feature
/// column pinned to its current group.
pub fn schema_for(cohort: &Cohort, base: &Schema) -> Schema {
    Schema {
        columns: cohort
            .feature_names
            .iter()
            .cloned()
            .zip(cohort.feature_groups.iter().copied())
            .collect(),
        group_patterns: Vec::new(),
        ..base.clone()
    }
}

/// The visits of one patient at the grid months `0, 6, 12, 18, 24`.
#[derive(Debug, Clone, Copy)]
pub struct WindowGrid<'a> {
    pub slots: [&'a VisitRecord; 5],
}

/// Selects the grid visits, matching each grid month within `tolerance`
/// months (closest visit wins, earlier on ties). Other visits are ignored.
pub fn align_windows(visits: &[VisitRecord], tolerance: u32) -> Result<WindowGrid<'_>> {
    let mut slots = Vec::with_capacity(GRID_MONTHS.len());
    for &target in &GRID_MONTHS {
        let hit = visits
            .iter()
            .filter(|v| v.month.abs_diff(target) <= tolerance)
            .min_by_key(|v| (v.month.abs_diff(target), v.month))
            .ok_or(Error::MissingMonth(target))?;
        slots.push(hit);
    }
    Ok(WindowGrid {
        slots: slots.try_into().expect("five grid slots"),
    })
}

/// Conversion outcome over the four 6-month windows ending at months 6..24.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConversionLabel {
    pub per_window: [bool; 4],
    pub converted: bool,
    /// 1-based window index of the first AD status.
    pub first_window: Option<u8>,
    /// Baseline status is already AD; such patients are out of scope.
    pub baseline_excluded: bool,
}

impl ConversionLabel {
    /// Event time in months for survival analysis (24 when censored).
    pub fn event_time(&self) -> u32 {
        self.first_window.map_or(24, |w| 6 * w as u32)
    }
}

/// Labels conversion from grid statuses. The first AD status fixes the
/// window; later reversions are ignored.
pub fn label_conversion(patient: &PatientId, grid: &WindowGrid<'_>) -> Result<ConversionLabel> {
    let mut cs = [ClinicalStatus::Cn; 5];
    for (slot, visit) in cs.iter_mut().zip(grid.slots) {
        *slot = visit.cs.ok_or_else(|| Error::MissingStatus {
            patient: patient.0.clone(),
            month: visit.month,
        })?;
    }
    Ok(label_from_statuses(&cs))
}

pub fn label_from_statuses(cs: &[ClinicalStatus; 5]) -> ConversionLabel {
    if cs[0] == ClinicalStatus::Ad {
        return ConversionLabel {
            baseline_excluded: true,
            ..Default::default()
        };
    }
    let mut label = ConversionLabel::default();
    if let Some(w) = cs[1..].iter().position(|&c| c == ClinicalStatus::Ad) {
        label.per_window[w] = true;
        label.converted = true;
        label.first_window = Some(w as u8 + 1);
    }
    label
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> Schema {
        Schema {
            patient_id: "RID".into(),
            month: "M".into(),
            adas13: "ADAS13".into(),
            cs: "DX".into(),
            ..Default::default()
        }
    }

    fn visit(month: u32, cs: Option<ClinicalStatus>) -> VisitRecord {
        VisitRecord {
            month,
            features: vec![],
            missing: vec![],
            adas13: Some(10.0),
            cs,
        }
    }

    #[test]
    fn sentinel_cells_are_masked() {
        let csv = "RID,M,ADAS13,DX,f1,f2\n1,0,10,1,-9999999,2.5\n1,6,11,1,-999999,3\n";
        let c = ingest_reader(csv.as_bytes(), &schema()).unwrap();
        let v = &c.patients[0].visits[0];
        assert!(v.missing[0]);
        assert!(!v.missing[1]);
        assert_eq!(v.features[1], 2.5);
        assert!(c.patients[0].visits[1].missing[0]);
    }

    #[test]
    fn empty_file_has_no_records() {
        let csv = "RID,M,ADAS13,DX,f1\n";
        assert!(matches!(ingest_reader(csv.as_bytes(), &schema()), Err(Error::NoRecords)));
    }

    #[test]
    fn two_patients_three_visits() {
        let mut csv = String::from("RID,M,ADAS13,DX,f1\n");
        for p in ["a", "b"] {
            for m in [12, 0, 6] {
                csv.push_str(&format!("{p},{m},5,2,{m}.5\n"));
            }
        }
        let c = ingest_reader(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(c.patients.len(), 2);
        for p in &c.patients {
            assert_eq!(p.months().collect::<Vec<_>>(), vec![0, 6, 12]);
            assert!(p.visits.iter().all(|v| v.missing.iter().all(|m| !m)));
        }
        c.validate().unwrap();
    }

    #[test]
    fn duplicate_rows_and_bad_cells_report_location() {
        let dup = "RID,M,ADAS13,DX,f1\n1,0,5,1,1\n1,0,6,1,2\n";
        assert!(matches!(
            ingest_reader(dup.as_bytes(), &schema()),
            Err(Error::DuplicateVisit { month: 0, .. })
        ));
        let bad = "RID,M,ADAS13,DX,f1\n1,0,5,1,1\n1,6,5,1,abc\n";
        match ingest_reader(bad.as_bytes(), &schema()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "f1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn groups_resolve_from_table_then_patterns() {
        let mut s = schema();
        s.columns.insert("APOE4".into(), FeatureGroup::Genetics);
        s.group_patterns.push(GroupPattern {
            group: FeatureGroup::Mri,
            pattern: "^ST\\d+".into(),
        });
        let csv = "RID,M,ADAS13,DX,APOE4,ST12,AGE\n1,0,5,1,1,2,70\n";
        let c = ingest_reader(csv.as_bytes(), &s).unwrap();
        assert_eq!(
            c.feature_groups,
            vec![FeatureGroup::Genetics, FeatureGroup::Mri, FeatureGroup::Other]
        );
    }

    #[test]
    fn grid_skips_off_grid_months() {
        let visits: Vec<_> = [0, 3, 6, 12, 18, 24, 36].iter().map(|&m| visit(m, None)).collect();
        let g = align_windows(&visits, 0).unwrap();
        assert_eq!(g.slots.map(|v| v.month), [0, 6, 12, 18, 24]);

        let short: Vec<_> = [0, 6, 12].iter().map(|&m| visit(m, None)).collect();
        let err = align_windows(&short, 0).unwrap_err();
        assert_eq!(err.to_string(), "missing month 18");
    }

    #[test]
    fn grid_tolerance() {
        let visits: Vec<_> = [0, 7, 12, 17, 24].iter().map(|&m| visit(m, None)).collect();
        assert!(align_windows(&visits, 0).is_err());
        let g = align_windows(&visits, 1).unwrap();
        assert_eq!(g.slots.map(|v| v.month), [0, 7, 12, 17, 24]);
    }

    #[test]
    fn conversion_labels() {
        use ClinicalStatus::*;
        let l = label_from_statuses(&[Mci, Mci, Mci, Ad, Ad]);
        assert!(l.converted);
        assert_eq!(l.first_window, Some(3));
        assert_eq!(l.per_window, [false, false, true, false]);
        assert_eq!(l.event_time(), 18);

        let l = label_from_statuses(&[Cn; 5]);
        assert!(!l.converted && l.first_window.is_none());
        assert_eq!(l.event_time(), 24);

        let l = label_from_statuses(&[Ad; 5]);
        assert!(l.baseline_excluded && !l.converted);

        // reversion after the first AD visit is ignored
        let l = label_from_statuses(&[Mci, Ad, Cn, Ad, Mci]);
        assert_eq!(l.first_window, Some(1));
        assert_eq!(l.per_window, [true, false, false, false]);
    }

    #[test]
    fn missing_status_is_an_error() {
        let visits: Vec<_> = GRID_MONTHS
            .iter()
            .map(|&m| visit(m, (m != 12).then_some(ClinicalStatus::Cn)))
            .collect();
        let g = align_windows(&visits, 0).unwrap();
        assert!(matches!(
            label_conversion(&"p".into(), &g),
            Err(Error::MissingStatus { month: 12, .. })
        ));
    }

    fn status() -> impl Strategy<Value = ClinicalStatus> {
        prop_oneof![
            Just(ClinicalStatus::Cn),
            Just(ClinicalStatus::Mci),
            Just(ClinicalStatus::Ad)
        ]
    }

    proptest! {
        #[test]
        fn first_window_is_first_ad(cs in proptest::array::uniform5(status())) {
            let l = label_from_statuses(&cs);
            prop_assert_eq!(l.converted, l.first_window.is_some());
            prop_assert_eq!(l.converted, l.per_window.iter().any(|&b| b));
            prop_assert!(l.per_window.iter().filter(|&&b| b).count() <= 1);
            if let Some(w) = l.first_window {
                let w = w as usize;
                prop_assert_eq!(cs[w], ClinicalStatus::Ad);
                prop_assert!(cs[..w].iter().all(|&c| c != ClinicalStatus::Ad));
            }
        }

        #[test]
        fn aligned_grid_is_a_subset(extra in proptest::collection::btree_set(0u32..60, 0..8)) {
            let mut months: std::collections::BTreeSet<u32> = GRID_MONTHS.into_iter().collect();
            months.extend(extra);
            let visits: Vec<_> = months.iter().map(|&m| visit(m, None)).collect();
            let g = align_windows(&visits, 0).unwrap();
            for s in g.slots {
                prop_assert!(visits.iter().any(|v| std::ptr::eq(v, s)));
            }
        }

        #[test]
        fn write_then_ingest_is_identity(
            cells in proptest::collection::vec(
                (proptest::option::of(-1e6f64..1e6), proptest::option::of(0.0f64..85.0), proptest::option::of(status())),
                1..30
            )
        ) {
            let d = 3;
            let mut patients = Vec::new();
            for (i, chunk) in cells.chunks(d).enumerate() {
                let visits = chunk.iter().enumerate().map(|(j, (f, adas, cs))| {
                    let features: Vec<f64> = (0..d).map(|k| if k == j % d { f.unwrap_or(0.0) } else { k as f64 * 0.25 }).collect();
                    let missing: Vec<bool> = (0..d).map(|k| k == j % d && f.is_none()).collect();
                    VisitRecord { month: 6 * j as u32, features, missing, adas13: *adas, cs: *cs }
                }).collect();
                patients.push(Patient { id: PatientId(format!("p{i}")), visits });
            }
            let cohort = Cohort {
                feature_names: (0..d).map(|k| format!("f{k}")).collect(),
                feature_groups: vec![FeatureGroup::Mri, FeatureGroup::Other, FeatureGroup::Csf],
                patients,
            };
            let s = schema_for(&cohort, &schema());
            let mut buf = Vec::new();
            write_cohort(&cohort, &s, &mut buf).unwrap();
            let back = ingest_reader(buf.as_slice(), &s).unwrap();
            prop_assert_eq!(back, cohort);
        }
    }
}
