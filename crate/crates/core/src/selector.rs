//! Balanced hard/easy subset selection.
//!
//! Per iteration the active pool is sorted by error term (descending, ties on
//! id ascending) and split by label. The longer label list is truncated to
//! the shorter one's length, the first K of each list become the hard
//! examples, and K more of each are drawn from the shuffled remainders as the
//! easy examples. At most 4K examples are selected.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pool::{ExampleRecord, PoolState};

/// Portable generator used for every random choice in training and
/// selection: ChaCha with 8 rounds, seeded through `seed_from_u64`.
pub type SelectionRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SelectionRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under the same seed.
pub fn stream_rng(seed: u64, stream: u64) -> SelectionRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Partition number K for a new chunk: its count of positives, floored at 1.
pub fn compute_partition_number(new_chunk: &[ExampleRecord]) -> Result<usize> {
    if new_chunk.is_empty() {
        return Err(Error::contract("cannot derive a partition number from an empty chunk"));
    }
    let positives = new_chunk.iter().filter(|r| r.label.is_positive()).count();
    Ok(positives.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    HardPositive,
    HardNegative,
    EasyPositive,
    EasyNegative,
}

/// The four selected id lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelectedSubset {
    pub hard_positives: Vec<String>,
    pub hard_negatives: Vec<String>,
    pub easy_positives: Vec<String>,
    pub easy_negatives: Vec<String>,
}

impl SelectedSubset {
    pub fn len(&self) -> usize {
        self.hard_positives.len() + self.hard_negatives.len() + self.easy_positives.len() + self.easy_negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All ids in partition order: hard positives, hard negatives, easy
    /// positives, easy negatives.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hard_positives
            .iter()
            .chain(&self.hard_negatives)
            .chain(&self.easy_positives)
            .chain(&self.easy_negatives)
            .map(String::as_str)
    }

    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        let has = |v: &[String]| v.iter().any(|x| x == id);
        if has(&self.hard_positives) {
            Some(Partition::HardPositive)
        } else if has(&self.hard_negatives) {
            Some(Partition::HardNegative)
        } else if has(&self.easy_positives) {
            Some(Partition::EasyPositive)
        } else if has(&self.easy_negatives) {
            Some(Partition::EasyNegative)
        } else {
            None
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.partition_of(id).is_some()
    }

    pub fn is_hard(&self, id: &str) -> bool {
        matches!(
            self.partition_of(id),
            Some(Partition::HardPositive | Partition::HardNegative)
        )
    }

    pub fn is_easy(&self, id: &str) -> bool {
        matches!(
            self.partition_of(id),
            Some(Partition::EasyPositive | Partition::EasyNegative)
        )
    }
}

impl fmt::Display for SelectedSubset {
    /// `hard_pos=a,b\thard_neg=...\teasy_pos=...\teasy_neg=...`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "hard_pos={}\thard_neg={}\teasy_pos={}\teasy_neg={}",
            self.hard_positives.join(","),
            self.hard_negatives.join(","),
            self.easy_positives.join(","),
            self.easy_negatives.join(",")
        )
    }
}

/// Selects up to K hard and K easy examples of each label. Dropped examples
/// never appear; an empty pool yields an empty subset.
pub fn select_subset<R: Rng + ?Sized>(pool: &PoolState, k: usize, rng: &mut R) -> Result<SelectedSubset> {
    if k == 0 {
        return Err(Error::contract("partition number must be >= 1"));
    }
    let mut active: Vec<&ExampleRecord> = pool.records().iter().filter(|r| r.is_active()).collect();
    active.sort_by(|a, b| b.error.total_cmp(&a.error).then_with(|| a.id.cmp(&b.id)));

    let (mut pos, mut neg): (Vec<&ExampleRecord>, Vec<&ExampleRecord>) =
        active.into_iter().partition(|r| r.label.is_positive());
    let balanced = pos.len().min(neg.len());
    pos.truncate(balanced);
    neg.truncate(balanced);

    let hard = k.min(balanced);
    let mut rest_pos = pos.split_off(hard);
    let mut rest_neg = neg.split_off(hard);
    rest_pos.shuffle(rng);
    rest_neg.shuffle(rng);
    rest_pos.truncate(k);
    rest_neg.truncate(k);

    let ids = |v: &[&ExampleRecord]| v.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
    Ok(SelectedSubset {
        hard_positives: ids(&pos),
        hard_negatives: ids(&neg),
        easy_positives: ids(&rest_pos),
        easy_negatives: ids(&rest_neg),
    })
}
