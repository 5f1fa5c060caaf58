//! Seeded minibatch order over one split.

use rand::seq::SliceRandom;
use sigseg_synthdoc::{seed, Manifest, ManifestEntry, Split};

use crate::error::{Result, TrainError};

/// Shuffles `0..len` with `epoch_seed` and chunks it into batches of `batch`;
/// the last batch may be short.
pub fn batch_order(len: usize, batch: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seed::rng(epoch_seed));
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Batches of manifest entries from `split`, in a permutation fixed by
/// `epoch_seed`.
pub fn split_loader(
    manifest: &Manifest,
    split: Split,
    batch: usize,
    epoch_seed: u64,
) -> Result<impl Iterator<Item = Vec<&ManifestEntry>>> {
    if batch == 0 {
        return Err(TrainError::Config("batch size must be at least 1".into()));
    }
    let entries: Vec<&ManifestEntry> = manifest.entries(split).collect();
    if entries.is_empty() {
        return Err(TrainError::Config(format!("split {split} is empty")));
    }
    let order = batch_order(entries.len(), batch, epoch_seed);
    Ok(order
        .into_iter()
        .map(move |b| b.into_iter().map(|i| entries[i]).collect()))
}

/// Seed for the shuffle of `epoch` (1-based) in `stage`.
pub fn epoch_seed(run_seed: u64, stage: u64, epoch: usize) -> u64 {
    seed::derive(seed::derive(run_seed, stage), epoch as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_by_four_and_seventeen_by_four() {
        let b = batch_order(16, 4, 1);
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|x| x.len() == 4));
        let b = batch_order(17, 4, 1);
        assert_eq!(b.len(), 5);
        assert_eq!(b[4].len(), 1);
    }

    #[test]
    fn order_depends_on_seed_only() {
        assert_eq!(batch_order(30, 4, 9), batch_order(30, 4, 9));
        assert_ne!(batch_order(30, 4, 9), batch_order(30, 4, 10));
        assert_ne!(epoch_seed(0, 1, 1), epoch_seed(0, 1, 2));
        assert_ne!(epoch_seed(0, 1, 1), epoch_seed(0, 2, 1));
    }
}
