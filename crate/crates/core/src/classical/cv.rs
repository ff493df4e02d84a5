//! Stratified k-fold splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassicalError;
use crate::corpus::Label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold number of every index.
pub fn fold_assignment(labels: &[Label], k: usize, seed: u64) -> Result<Vec<usize>, ClassicalError> {
    if k < 2 {
        return Err(ClassicalError::InvalidFolds(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(labels.len());
    for class in [Label::Included, Label::Excluded] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(ClassicalError::ClassTooSmall {
                label: class,
                size: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut fold = vec![0; labels.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(fold)
}

/// Dealing each shuffled class round-robin keeps every fold's count of a
/// class within one of its proportional share.
pub fn stratified_kfold(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Fold>, ClassicalError> {
    let assignment = fold_assignment(labels, k, seed)?;
    Ok((0..k)
        .map(|f| {
            let (test, train) = (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_divisibility() {
        let labels: Vec<Label> = (0..16)
            .map(|i| if i < 8 { Label::Included } else { Label::Excluded })
            .collect();
        for fold in stratified_kfold(&labels, 4, 1).unwrap() {
            let inc = fold.test.iter().filter(|&&i| labels[i] == Label::Included).count();
            assert_eq!((fold.test.len(), inc), (4, 2));
            assert_eq!(fold.train.len(), 12);
        }
    }

    #[test]
    fn small_class_rejected() {
        let labels = [Label::Included, Label::Excluded, Label::Excluded, Label::Excluded];
        assert!(matches!(
            stratified_kfold(&labels, 2, 0),
            Err(ClassicalError::ClassTooSmall { label: Label::Included, .. })
        ));
        assert_eq!(stratified_kfold(&labels, 1, 0), Err(ClassicalError::InvalidFolds(1)));
    }
}
