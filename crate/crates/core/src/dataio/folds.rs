use rand::Rng;

use crate::rng::{derive_seed, stream, tag};
use crate::{Error, Result};

/// Roles of one leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub test_subject: u32,
    pub validation_subject: u32,
    pub train_subjects: Vec<u32>,
    /// Seed for everything random inside this fold.
    pub seed: u64,
}

/// One fold per subject, in the order given. The validation subject is drawn
/// uniformly from the others with the fold's own seed.
pub fn plan_loso_folds(subjects: &[u32], seed: u64) -> Result<Vec<FoldPlan>> {
    if subjects.len() < 3 {
        return Err(Error::invalid(format!("LOSO needs at least 3 subjects, got {}", subjects.len())));
    }
    let mut sorted = subjects.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate subject id"));
    }
    Ok(subjects
        .iter()
        .map(|&test| {
            let fold_seed = derive_seed(seed, &[tag::FOLD, test as u64]);
            let others: Vec<u32> = subjects.iter().copied().filter(|&s| s != test).collect();
            let validation = others[stream(fold_seed).random_range(0..others.len())];
            FoldPlan {
                test_subject: test,
                validation_subject: validation,
                train_subjects: others.into_iter().filter(|&s| s != validation).collect(),
                seed: fold_seed,
            }
        })
        .collect())
}
