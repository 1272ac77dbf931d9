//! Linear soft-margin classifier trained by averaged stochastic subgradient descent.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::{format_number, PatientId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub epochs: usize,
    pub final_objective: f64,
    /// Best objective after each epoch; non-increasing.
    pub objective_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub w: Vec<f64>,
    pub b: f64,
    pub c: f64,
    pub report: TrainingReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmOptions {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Scale each sample's penalty by the inverse frequency of its class.
    pub balanced: bool,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            c: 1.0,
            epochs: 500,
            seed: 0,
            balanced: false,
        }
    }
}

const AVG_DECAY: f64 = 3.0;

fn score(w: &[f64], b: f64, x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b
}

/// `0.5 |w|^2 + sum_i c_i max(0, 1 - y_i (w.x_i + b))`.
pub fn svm_objective(w: &[f64], b: f64, x: &[Vec<f64>], y: &[i8], penalties: &[f64]) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = x
        .iter()
        .zip(y)
        .zip(penalties)
        .map(|((xi, &yi), ci)| ci * (1.0 - yi as f64 * score(w, b, xi)).max(0.0))
        .sum();
    reg + loss
}

fn penalties(y: &[i8], c: f64, balanced: bool) -> Vec<f64> {
    if !balanced {
        return vec![c; y.len()];
    }
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&v| v > 0).count() as f64;
    let neg = n - pos;
    y.iter()
        .map(|&v| c * n / (2.0 * if v > 0 { pos } else { neg }))
        .collect()
}

pub fn svm_train(x: &[Vec<f64>], y: &[i8], options: &SvmOptions) -> Result<LinearClassifier> {
    if !(options.c > 0.0 && options.c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {}", options.c)));
    }
    if options.epochs == 0 {
        return Err(Error::InvalidArgument("training needs at least one epoch".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(Error::InvalidArgument(format!("labels must be -1 or +1, got {bad}")));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(Error::SingleClass);
    }
    let p = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(Error::Dimension {
            expected: p,
            got: r.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature".into()));
    }

    let n = x.len();
    let nf = n as f64;
    let cs = penalties(y, options.c, options.balanced);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut order: Vec<usize> = (0..n).collect();

    let (mut w, mut b) = (vec![0.0; p], 0.0);
    let mut best = (vec![0.0; p], 0.0, svm_objective(&w, b, x, y, &cs));
    let mut history = Vec::with_capacity(options.epochs);
    let (mut w_avg, mut b_avg) = (vec![0.0; p], 0.0);
    let mut t = 0usize;
    for _ in 0..options.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            // The per-sample objective is (1/n)-strongly convex.
            let eta = nf / (t as f64 + nf);
            let yi = y[i] as f64;
            let active = yi * score(&w, b, &x[i]) < 1.0;
            let shrink = 1.0 - eta / nf;
            for (wj, xj) in w.iter_mut().zip(&x[i]) {
                *wj *= shrink;
                if active {
                    *wj += eta * cs[i] * yi * xj;
                }
            }
            if active {
                b += eta * cs[i] * yi;
            }
            // Polynomial-decay averaging of the iterates.
            let a = (AVG_DECAY + 1.0) / (t as f64 + AVG_DECAY);
            for (m, wj) in w_avg.iter_mut().zip(&w) {
                *m += a * (wj - *m);
            }
            b_avg += a * (b - b_avg);
        }
        let obj = svm_objective(&w_avg, b_avg, x, y, &cs);
        if obj < best.2 {
            best = (w_avg.clone(), b_avg, obj);
        }
        history.push(best.2);
    }
    let (w, b, final_objective) = best;
    Ok(LinearClassifier {
        w,
        b,
        c: options.c,
        report: TrainingReport {
            epochs: options.epochs,
            final_objective,
            objective_history: history,
        },
    })
}

/// Label (+1 convert, -1 not) and margin score; a score of exactly 0 maps to +1.
pub fn svm_predict(model: &LinearClassifier, x: &[f64]) -> Result<(i8, f64)> {
    if x.len() != model.w.len() {
        return Err(Error::Dimension {
            expected: model.w.len(),
            got: x.len(),
        });
    }
    let s = score(&model.w, model.b, x);
    Ok((if s >= 0.0 { 1 } else { -1 }, s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub patient_id: PatientId,
    pub truth: bool,
    pub predicted: bool,
    pub score: f64,
}

/// `patient_id, ground_truth_conversion, predicted_conversion, margin_score`.
pub fn write_predictions<W: Write>(rows: &[PredictionRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patient_id", "ground_truth_conversion", "predicted_conversion", "margin_score"])?;
    for r in rows {
        w.write_record([
            r.patient_id.0.clone(),
            (r.truth as u8).to_string(),
            (r.predicted as u8).to_string(),
            format_number(r.score),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<prediction writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn separable() -> (Vec<Vec<f64>>, Vec<i8>) {
        (vec![vec![2.0, 2.0], vec![3.0, 3.0], vec![-2.0, -2.0], vec![-3.0, -3.0]], vec![1, 1, -1, -1])
    }

    #[test]
    fn separable_data_is_fitted() {
        let (x, y) = separable();
        let m = svm_train(&x, &y, &SvmOptions::default()).unwrap();
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(svm_predict(&m, xi).unwrap().0, yi);
        }
        // Optimum is w = (1/4, 1/4), b = 0 with objective 1/16.
        assert!(m.report.final_objective < 0.0625 + 1e-2, "{:?}", m);
    }

    #[test]
    fn label_flip_negates_the_model() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()]).collect();
        let y: Vec<i8> = x.iter().map(|r| if r[0] + 0.5 * r[1] > 0.1 { 1 } else { -1 }).collect();
        let neg: Vec<i8> = y.iter().map(|v| -v).collect();
        let opts = SvmOptions { epochs: 50, seed: 4, ..Default::default() };
        let a = svm_train(&x, &y, &opts).unwrap();
        let b = svm_train(&x, &neg, &opts).unwrap();
        for (p, q) in a.w.iter().zip(&b.w) {
            assert!((p + q).abs() < 1e-6);
        }
        assert!((a.b + b.b).abs() < 1e-6);
    }

    #[test]
    fn duplicated_data_with_half_penalty_keeps_the_boundary() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 1.3).sin() * 2.0, (i as f64 * 0.9).cos()]).collect();
        let y: Vec<i8> = x.iter().map(|r| if r[0] - r[1] > 0.0 { 1 } else { -1 }).collect();
        let opts = SvmOptions { epochs: 2000, ..Default::default() };
        let a = svm_train(&x, &y, &opts).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<i8> = y.iter().chain(&y).copied().collect();
        let b = svm_train(&x2, &y2, &SvmOptions { c: 0.5, ..opts }).unwrap();
        let cs = vec![1.0; x.len()];
        let oa = svm_objective(&a.w, a.b, &x, &y, &cs);
        let ob = svm_objective(&b.w, b.b, &x, &y, &cs);
        assert!((oa - ob).abs() < 1e-2 * oa, "{oa} vs {ob}");
        for xi in &x {
            let (sa, sb) = (svm_predict(&a, xi).unwrap().1, svm_predict(&b, xi).unwrap().1);
            assert!((sa - sb).abs() < 0.05, "{sa} vs {sb}");
        }
    }

    #[test]
    fn constant_features_give_the_majority_class() {
        let x = vec![vec![0.25; 4]; 10];
        let y = vec![1, 1, 1, 1, 1, 1, 1, -1, -1, -1];
        let m = svm_train(&x, &y, &SvmOptions::default()).unwrap();
        assert_eq!(svm_predict(&m, &[0.25; 4]).unwrap().0, 1);
        let flipped: Vec<i8> = y.iter().map(|v| -v).collect();
        let m = svm_train(&x, &flipped, &SvmOptions::default()).unwrap();
        assert_eq!(svm_predict(&m, &[0.25; 4]).unwrap().0, -1);
    }

    #[test]
    fn rejects_bad_input() {
        let (x, _) = separable();
        assert!(matches!(svm_train(&x, &[1, 1, 1, 1], &SvmOptions::default()), Err(Error::SingleClass)));
        let (x, y) = separable();
        assert!(svm_train(&x, &y, &SvmOptions { c: 0.0, ..Default::default() }).is_err());
        assert!(svm_train(&x, &[1, 2, -1, -1], &SvmOptions::default()).is_err());
    }

    fn fixed(w: Vec<f64>, b: f64) -> LinearClassifier {
        LinearClassifier {
            w,
            b,
            c: 1.0,
            report: TrainingReport {
                epochs: 0,
                final_objective: 0.0,
                objective_history: vec![],
            },
        }
    }

    #[test]
    fn prediction_rules() {
        let m = fixed(vec![1.0, 0.0, 0.0, 0.0], 0.0);
        assert_eq!(svm_predict(&m, &[0.9, 5.0, -2.0, 1.0]).unwrap(), (1, 0.9));
        assert_eq!(svm_predict(&m, &[0.0, 1.0, 1.0, 1.0]).unwrap(), (1, 0.0));
        assert!(svm_predict(&m, &[0.0; 3]).is_err());
    }

    #[test]
    fn balanced_weights_favour_the_minority() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0]).collect();
        let y: Vec<i8> = (0..20).map(|i| if i >= 16 || i == 10 { 1 } else { -1 }).collect();
        let plain = svm_train(&x, &y, &SvmOptions::default()).unwrap();
        let bal = svm_train(&x, &y, &SvmOptions { balanced: true, ..Default::default() }).unwrap();
        let count = |m: &LinearClassifier| x.iter().filter(|r| svm_predict(m, r).unwrap().0 == 1).count();
        assert!(count(&bal) >= count(&plain));
    }

    #[test]
    fn prediction_table_layout() {
        let rows = vec![PredictionRow {
            patient_id: "p".into(),
            truth: true,
            predicted: false,
            score: -0.5,
        }];
        let mut buf = Vec::new();
        write_predictions(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "patient_id,ground_truth_conversion,predicted_conversion,margin_score\np,1,0,-0.5\n"
        );
    }

    proptest! {
        #[test]
        fn training_invariants(
            pts in proptest::collection::vec((proptest::collection::vec(-3.0f64..3.0, 4), proptest::bool::ANY), 4..30),
            c in 0.05f64..5.0,
            seed in 0u64..1000,
        ) {
            let x: Vec<Vec<f64>> = pts.iter().map(|p| p.0.clone()).collect();
            let mut y: Vec<i8> = pts.iter().map(|p| if p.1 { 1 } else { -1 }).collect();
            y[0] = 1;
            y[1] = -1;
            let opts = SvmOptions { c, epochs: 20, seed, balanced: false };
            let a = svm_train(&x, &y, &opts).unwrap();
            let b = svm_train(&x, &y, &opts).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.report.final_objective <= c * x.len() as f64);
            prop_assert!(a.report.objective_history.windows(2).all(|w| w[1] <= w[0]));
            for xi in &x {
                let (l, s) = svm_predict(&a, xi).unwrap();
                let reflected: Vec<f64> = {
                    let wn: f64 = a.w.iter().map(|v| v * v).sum();
                    if wn == 0.0 { continue; }
                    xi.iter().zip(&a.w).map(|(v, w)| v - 2.0 * s * w / wn).collect()
                };
                let (_, s2) = svm_predict(&a, &reflected).unwrap();
                prop_assert!((s + s2).abs() < 1e-9 * (1.0 + s.abs()));
                prop_assert_eq!(l, if s >= 0.0 { 1 } else { -1 });
            }
        }
    }
}
