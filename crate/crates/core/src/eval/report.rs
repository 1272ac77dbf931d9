//! Delimited-text renderings of evaluation results.

use std::fmt::Write;

use super::cv::EvalReport;
use super::kmeans::KMeansResult;
use super::metrics::ClassificationMetrics;
use super::stats::{GroupStats, WindowDiffStats};
use crate::cohort::format_number;
use crate::forecast::ModelKind;
use crate::preprocess::HORIZONS;

fn n(x: f64) -> String {
    format_number(x)
}

/// `fold,sGP,pGP,tGP`, one line per fold.
pub fn mae_folds_csv(report: &EvalReport) -> String {
    let mut s = String::from("fold,sGP,pGP,tGP\n");
    for f in &report.folds {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            f.fold + 1,
            n(f.mae[&ModelKind::Source]),
            n(f.mae[&ModelKind::Personalized]),
            n(f.mae[&ModelKind::Target])
        );
    }
    s
}

/// `model,mean,sd,display` with `display` as `mean±sd` to two decimals.
pub fn mae_summary_csv(report: &EvalReport) -> String {
    let mut s = String::from("model,mean,sd,display\n");
    for (k, v) in &report.summary {
        let _ = writeln!(s, "{k},{},{},{:.2}±{:.2}", n(v.mean), n(v.sd), v.mean, v.sd);
    }
    s
}

/// `fold,model,mae_6,mae_12,mae_18,mae_24`.
pub fn mae_horizons_csv(report: &EvalReport) -> String {
    let mut s = String::from("fold,model");
    for h in HORIZONS {
        let _ = write!(s, ",mae_{h}");
    }
    s.push('\n');
    for f in &report.folds {
        for (k, m) in &f.horizon_mae {
            let _ = writeln!(s, "{},{k},{},{},{},{}", f.fold + 1, n(m[0]), n(m[1]), n(m[2]), n(m[3]));
        }
    }
    s
}

/// `model,fold,mae` long-format series for a per-fold comparison plot.
pub fn fold_mae_series_csv(report: &EvalReport) -> String {
    let mut s = String::from("model,fold,mae\n");
    for k in ModelKind::ALL {
        for f in &report.folds {
            let _ = writeln!(s, "{k},{},{}", f.fold + 1, n(f.mae[&k]));
        }
    }
    s
}

/// `group,mean,sd,count,sd_undefined,patients`.
pub fn group_stats_csv(stats: &GroupStats) -> String {
    let mut s = String::from("group,mean,sd,count,sd_undefined,patients\n");
    for (g, v) in &stats.per_group {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            g.label(),
            n(v.mean),
            n(v.sd),
            v.count,
            v.sd_undefined,
            stats.patients_in(*g)
        );
    }
    s
}

/// `patient_id,groups` with groups joined by `|`.
pub fn membership_csv(stats: &GroupStats) -> String {
    let mut s = String::from("patient_id,groups\n");
    for (p, g) in &stats.membership {
        let labels: Vec<&str> = g.iter().map(|c| c.label()).collect();
        let _ = writeln!(s, "{p},{}", labels.join("|"));
    }
    s
}

/// `group,month,mean,sd,count` trajectory series.
pub fn trajectories_csv(stats: &GroupStats) -> String {
    let mut s = String::from("group,month,mean,sd,count\n");
    for (g, pts) in &stats.trajectories {
        for p in pts {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                g.label(),
                p.month,
                n(p.summary.mean),
                n(p.summary.sd),
                p.summary.count
            );
        }
    }
    s
}

/// `window,mean,max,min,median,sd,count`.
pub fn window_diff_csv(stats: &[WindowDiffStats; 4]) -> String {
    let mut s = String::from("window,mean,max,min,median,sd,count\n");
    for (w, d) in stats.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            w + 1,
            n(d.mean),
            n(d.max),
            n(d.min),
            n(d.median),
            n(d.sd),
            d.count
        );
    }
    s
}

/// `cluster,centroid,size` followed by nothing else; assignments are written separately.
pub fn centroids_csv(result: &KMeansResult) -> String {
    let mut s = String::from("cluster,centroid,size\n");
    for (j, c) in result.centroids.iter().enumerate() {
        let size = result.assignments.iter().filter(|&&a| a == j).count();
        let coords: Vec<String> = c.iter().map(|&v| n(v)).collect();
        let _ = writeln!(s, "{j},{},{size}", coords.join(" "));
    }
    s
}

/// `metric,value` lines: confusion counts, then the four rates and flags.
pub fn metrics_csv(m: &ClassificationMetrics) -> String {
    let c = m.confusion;
    let mut s = String::from("metric,value\n");
    for (k, v) in [("tp", c.tp), ("fp", c.fp), ("fn", c.fn_), ("tn", c.tn)] {
        let _ = writeln!(s, "{k},{v}");
    }
    for (k, v) in [
        ("precision", m.precision),
        ("recall", m.recall),
        ("f1", m.f1),
        ("accuracy", m.accuracy),
    ] {
        let _ = writeln!(s, "{k},{}", n(v));
    }
    for (k, v) in [
        ("precision_undefined", m.precision_undefined),
        ("recall_undefined", m.recall_undefined),
        ("f1_undefined", m.f1_undefined),
        ("accuracy_undefined", m.accuracy_undefined),
    ] {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}
