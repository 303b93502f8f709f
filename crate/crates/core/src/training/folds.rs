//! Stratified k-fold splits.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One cross-validation split, as sample positions in the dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split of binary `labels`.
///
/// Each class is shuffled and dealt round-robin over the folds. Negatives
/// continue the deal where the positives stopped, which keeps fold sizes
/// within one of each other as well as per-class counts.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidLabel(f64::from(bad)));
    }
    let mut rng = Rng::derive(seed, "folds");
    let mut assignment = vec![0usize; labels.len()];
    let mut offset = 0;
    for class in [1u8, 0u8] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Stratification {
                k,
                class,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok((0..k)
        .map(|fold| {
            let (test, train) = (0..labels.len()).partition(|&i| assignment[i] == fold);
            FoldSplit {
                fold_index: fold,
                train,
                test,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, pos: usize) -> Vec<u8> {
        (0..n).map(|i| u8::from(i < pos)).collect()
    }

    #[test]
    fn one_of_each_class_per_fold() {
        let l = labels(20, 10);
        let folds = stratified_kfold(&l, 10, 3).unwrap();
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.test.iter().filter(|&&i| l[i] == 1).count(), 1);
        }
    }

    #[test]
    fn folds_partition_samples() {
        let l = labels(97, 41);
        let folds = stratified_kfold(&l, 10, 5).unwrap();
        let mut seen = vec![0u32; 97];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            assert_eq!(f.train.len() + f.test.len(), 97);
            assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn imbalanced_counts_differ_by_at_most_one() {
        let l = labels(97, 41);
        let folds = stratified_kfold(&l, 10, 5).unwrap();
        let pos: Vec<usize> = folds
            .iter()
            .map(|f| f.test.iter().filter(|&&i| l[i] == 1).count())
            .collect();
        assert!(pos.iter().all(|c| [4, 5].contains(c)), "{pos:?}");
        assert_eq!(pos.iter().sum::<usize>(), 41);
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert!(
            sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1,
            "{sizes:?}"
        );
    }

    #[test]
    fn deterministic_in_seed() {
        let l = labels(50, 20);
        assert_eq!(
            stratified_kfold(&l, 5, 9).unwrap(),
            stratified_kfold(&l, 5, 9).unwrap()
        );
        assert_ne!(
            stratified_kfold(&l, 5, 9).unwrap(),
            stratified_kfold(&l, 5, 10).unwrap()
        );
    }

    #[test]
    fn too_few_members_is_an_error() {
        let err = stratified_kfold(&labels(30, 4), 5, 1).unwrap_err();
        assert!(matches!(
            err,
            Error::Stratification {
                k: 5,
                class: 1,
                count: 4
            }
        ));
        assert!(matches!(
            stratified_kfold(&labels(30, 10), 1, 1),
            Err(Error::Config(_))
        ));
    }
}
