use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15, test: 0.15 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split ratios {all:?} must be in [0,1] and sum to 1")));
        }
        Ok(())
    }
}

/// Indices into the original trial list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// 64-bit FNV-1a.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Content hash of a trial: its label and the bit patterns of its values.
pub fn trial_hash(values: &[f64], label: usize) -> u64 {
    let mut bytes = Vec::with_capacity(values.len() * 8 + 8);
    bytes.extend_from_slice(&(label as u64).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    stable_hash(&bytes)
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-class split: trials of each label are ordered by
/// `mix(hash ⊕ seed)` and cut at the ratios, so the result depends only on
/// trial contents and the seed, never on input order.
pub fn split_indices(hashes: &[u64], labels: &[usize], ratios: SplitRatios, seed: u64) -> Result<Split> {
    ratios.validate()?;
    if hashes.len() != labels.len() {
        return Err(Error::DimMismatch { expected: hashes.len(), got: labels.len() });
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut split = Split::default();
    let seed_key = mix(seed ^ 0x5bd1_e995);
    for class in 0..n_classes {
        let mut members: Vec<(u64, usize)> = (0..labels.len())
            .filter(|&i| labels[i] == class)
            .map(|i| (mix(hashes[i] ^ seed_key), i))
            .collect();
        members.sort_by_key(|&(k, _)| k);
        let n = members.len();
        let n_train = (ratios.train * n as f64).round() as usize;
        let n_val = ((ratios.val * n as f64).round() as usize).min(n - n_train);
        for (rank, &(_, i)) in members.iter().enumerate() {
            if rank < n_train {
                split.train.push(i);
            } else if rank < n_train + n_val {
                split.val.push(i);
            } else {
                split.test.push(i);
            }
        }
    }
    for part in [&mut split.train, &mut split.val, &mut split.test] {
        part.sort_unstable();
    }
    Ok(split)
}
