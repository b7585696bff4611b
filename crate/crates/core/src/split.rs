//! Class rebalancing and stratified train/validation splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub val: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self { train: 4, val: 1 }
    }
}

impl SplitRatio {
    /// `(train, val)` counts for `n` items; train share rounded half away
    /// from zero.
    pub fn counts(&self, n: usize) -> (usize, usize) {
        let total = (self.train + self.val).max(1) as f64;
        let train = (n as f64 * self.train as f64 / total).round() as usize;
        let train = train.min(n);
        (train, n - train)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("requested {requested} negatives but only {available} are available")]
    NotEnoughNegatives { requested: usize, available: usize },
}

/// Indices of the selected items, partitioned into train and validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Keeps every positive, subsamples `n_negatives` negatives without
/// replacement (all when `None`), then splits each class by `ratio`. Both
/// output lists are sorted.
pub fn rebalance_and_split(
    labels: &[bool],
    n_negatives: Option<usize>,
    ratio: SplitRatio,
    seed: u64,
) -> Result<Split, SplitError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if let Some(n) = n_negatives {
        if n > negatives.len() {
            return Err(SplitError::NotEnoughNegatives {
                requested: n,
                available: negatives.len(),
            });
        }
        negatives.shuffle(&mut rng);
        negatives.truncate(n);
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
    };
    for class in [&mut positives, &mut negatives] {
        class.shuffle(&mut rng);
        let (n_train, _) = ratio.counts(class.len());
        split.train.extend_from_slice(&class[..n_train]);
        split.val.extend_from_slice(&class[n_train..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_counts() {
        let r = SplitRatio::default();
        assert_eq!(r.counts(3270), (2616, 654));
        assert_eq!(r.counts(4000), (3200, 800));
        assert_eq!(r.counts(10), (8, 2));
    }

    #[test]
    fn too_many_negatives_rejected() {
        let labels = [true, false, false];
        assert_eq!(
            rebalance_and_split(&labels, Some(3), SplitRatio::default(), 1),
            Err(SplitError::NotEnoughNegatives {
                requested: 3,
                available: 2
            })
        );
    }

    #[test]
    fn small_split_is_a_partition() {
        let labels: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let s = rebalance_and_split(&labels, None, SplitRatio::default(), 9).unwrap();
        assert_eq!(s.train.len(), 16);
        assert_eq!(s.val.len(), 4);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(s.train.iter().filter(|&&i| labels[i]).count(), 8);
        assert_eq!(s, rebalance_and_split(&labels, None, SplitRatio::default(), 9).unwrap());
    }
}
