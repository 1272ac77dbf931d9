use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::PatientId;
use crate::error::{Error, Result};

/// Patient-level fold assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<PatientId, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, patient: &PatientId) -> Option<usize> {
        self.assignments.get(patient).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Row indices of the test and training partitions for `fold`, given the
    /// owning patient of every row.
    pub fn split_rows(&self, fold: usize, patient_of_row: &[PatientId]) -> (Vec<usize>, Vec<usize>) {
        (0..patient_of_row.len()).partition(|&r| self.fold_of(&patient_of_row[r]) == Some(fold))
    }
}

/// Seeded shuffle of the distinct patients followed by round-robin assignment.
pub fn kfold_split(patients: &[PatientId], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<PatientId> = patients.to_vec();
    ids.sort();
    ids.dedup();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > ids.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the {} patients", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let assignments = ids.into_iter().enumerate().map(|(i, p)| (p, i % k)).collect();
    Ok(FoldPlan { k, seed, assignments })
}
