use std::collections::BTreeMap;

use serde::Serialize;

use super::metrics::Summary;
use crate::cohort::{align_windows, ClinicalStatus, Cohort, PatientId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub month: u32,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    /// Score summary over all visits carrying each status.
    pub per_group: BTreeMap<ClinicalStatus, Summary>,
    /// Statuses each patient visited; a patient may belong to several groups.
    pub membership: Vec<(PatientId, Vec<ClinicalStatus>)>,
    /// Mean and SD of the score per month, per group.
    pub trajectories: BTreeMap<ClinicalStatus, Vec<TrajectoryPoint>>,
}

impl GroupStats {
    pub fn patients_in(&self, cs: ClinicalStatus) -> usize {
        self.membership.iter().filter(|(_, g)| g.contains(&cs)).count()
    }
}

pub fn group_stats(cohort: &Cohort) -> GroupStats {
    let mut scores: BTreeMap<ClinicalStatus, Vec<f64>> = BTreeMap::new();
    let mut by_month: BTreeMap<ClinicalStatus, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    let mut membership = Vec::new();
    for p in &cohort.patients {
        let mut groups: Vec<ClinicalStatus> = Vec::new();
        for v in &p.visits {
            let Some(cs) = v.cs else { continue };
            if !groups.contains(&cs) {
                groups.push(cs);
            }
            if let Some(s) = v.adas13 {
                scores.entry(cs).or_default().push(s);
                by_month.entry(cs).or_default().entry(v.month).or_default().push(s);
            }
        }
        groups.sort();
        membership.push((p.id.clone(), groups));
    }
    GroupStats {
        per_group: scores.iter().map(|(&g, v)| (g, Summary::of(v))).collect(),
        membership,
        trajectories: by_month
            .into_iter()
            .map(|(g, months)| {
                let pts = months
                    .into_iter()
                    .map(|(month, v)| TrajectoryPoint {
                        month,
                        summary: Summary::of(&v),
                    })
                    .collect();
                (g, pts)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowDiffStats {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub median: f64,
    pub sd: f64,
    pub count: usize,
}

impl WindowDiffStats {
    fn of(values: &mut [f64]) -> WindowDiffStats {
        if values.is_empty() {
            return WindowDiffStats {
                mean: 0.0,
                max: 0.0,
                min: 0.0,
                median: 0.0,
                sd: 0.0,
                count: 0,
            };
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * (values[n / 2 - 1] + values[n / 2])
        };
        let s = Summary::of(values);
        WindowDiffStats {
            mean: s.mean,
            max: values[n - 1],
            min: values[0],
            median,
            sd: s.sd,
            count: n,
        }
    }
}

/// Statistics of the score change across each 6-month window of the grid,
/// over patients whose grid aligns and whose two bounding scores exist.
pub fn window_diff_stats(cohort: &Cohort, tolerance: u32) -> [WindowDiffStats; 4] {
    let mut diffs: [Vec<f64>; 4] = Default::default();
    for p in &cohort.patients {
        let Ok(grid) = align_windows(&p.visits, tolerance) else { continue };
        for (w, d) in diffs.iter_mut().enumerate() {
            if let (Some(a), Some(b)) = (grid.slots[w].adas13, grid.slots[w + 1].adas13) {
                d.push(b - a);
            }
        }
    }
    diffs.map(|mut d| WindowDiffStats::of(&mut d))
}
