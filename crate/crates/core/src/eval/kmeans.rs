use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub sse: f64,
    /// Within-cluster SSE after each Lloyd iteration.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn sse(values: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    values.iter().zip(assignments).map(|(x, &a)| dist2(x, &centroids[a])).sum()
}

/// Squared-Euclidean k-means with seeded farthest-point initialization.
pub fn kmeans(values: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let n = values.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the {n} points")));
    }
    let d = values[0].len();
    if let Some(r) = values.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: r.len(),
        });
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![values[rng.random_range(0..n)].clone()];
    let mut min_d: Vec<f64> = values.iter().map(|x| dist2(x, &centroids[0])).collect();
    while centroids.len() < k {
        let far = (0..n).fold(0, |b, i| if min_d[i] > min_d[b] { i } else { b });
        centroids.push(values[far].clone());
        for (m, x) in min_d.iter_mut().zip(values) {
            *m = m.min(dist2(x, &centroids[centroids.len() - 1]));
        }
    }

    let mut assignments: Vec<usize> = values.iter().map(|x| nearest(x, &centroids).0).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in values.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n).fold(0, |b, i| {
                    let di = dist2(&values[i], &centroids[assignments[i]]);
                    let db = dist2(&values[b], &centroids[assignments[b]]);
                    if di > db {
                        i
                    } else {
                        b
                    }
                });
                centroids[j] = values[far].clone();
                counts[assignments[far]] -= 1;
                assignments[far] = j;
                counts[j] = 1;
            }
        }
        let next: Vec<usize> = values.iter().map(|x| nearest(x, &centroids).0).collect();
        let changed = next != assignments;
        assignments = next;
        history.push(sse(values, &assignments, &centroids));
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        sse: sse(values, &assignments, &centroids),
        assignments,
        centroids,
        sse_history: history,
        iterations,
    })
}
