use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::degrade::degrade;
use super::partition::{fragment_shape, order_fragments, scramble, Episode};
use super::shapes::{Scenario, Split, TargetShape};
use super::{FragmentError, Result};
use crate::geometry::CutMode;

pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.64, 0.16, 0.20);

/// Splits are assigned in blocks of this many consecutive episodes.
const SPLIT_BLOCK: usize = 25;
const BLOCK_TRAIN: usize = 16;
const BLOCK_VAL: usize = 4;

const STREAM_EPISODE: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_DEGRADE: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub shape: TargetShape,
    pub n_samples: usize,
    pub k: usize,
    pub num_bins: usize,
    pub mode: CutMode,
    pub scenario: Scenario,
    pub resolution: usize,
    pub seed: u64,
}

impl DatasetConfig {
    /// 100 normal episodes at 32×32 with a single rotation bin.
    pub fn new(shape: TargetShape, k: usize) -> Self {
        Self {
            shape,
            n_samples: 100,
            k,
            num_bins: 1,
            mode: shape.default_mode(),
            scenario: Scenario::Normal,
            resolution: 32,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FragmentError::InvalidConfig(m));
        if self.num_bins == 0 {
            return bad("bins must be at least 1".into());
        }
        if self.resolution == 0 {
            return bad("resolution must be positive".into());
        }
        if self.k > 12 {
            return bad(format!("k = {} is too large", self.k));
        }
        if self.shape == TargetShape::MondrianSquare && self.mode != CutMode::AxisAligned {
            return bad("mondrian-square requires axis-aligned cuts".into());
        }
        let n = 1usize << self.k;
        let need = match self.scenario {
            Scenario::Normal => 1,
            Scenario::Missing => 2,
            Scenario::Eroded | Scenario::Distorted => 4,
        };
        if n < need {
            return bad(format!("scenario {} needs at least {need} fragments, k = {} gives {n}", self.scenario, self.k));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Episode> {
        self.episodes.iter().filter(move |e| e.split == split)
    }

    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.split(split).map(|e| e.id).collect()
    }
}

/// SplitMix64 finalizer over `(master, stream, index)`; the per-episode seed
/// depends only on its counter, never on generation order.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Each block of 25 consecutive indices gets a seeded shuffle of
/// 16 train / 4 val / 5 test slots, so a full block matches the 64/16/20
/// fractions exactly and later episodes never move earlier ones.
pub fn split_for_index(master: u64, index: usize) -> Split {
    let block = index / SPLIT_BLOCK;
    let mut slots: Vec<usize> = (0..SPLIT_BLOCK).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, STREAM_SPLIT, block as u64));
    slots.shuffle(&mut rng);
    match slots[index % SPLIT_BLOCK] {
        s if s < BLOCK_TRAIN => Split::Train,
        s if s < BLOCK_TRAIN + BLOCK_VAL => Split::Val,
        _ => Split::Test,
    }
}

pub fn generate_episode(config: &DatasetConfig, index: usize) -> Result<Episode> {
    let wrap = |e: FragmentError| FragmentError::Episode { index, source: Box::new(e) };
    let seed = derive_seed(config.seed, STREAM_EPISODE, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = config.shape.polygon();
    let pieces = fragment_shape(&target, config.k, config.mode, &mut rng).map_err(wrap)?;
    let ordered: Vec<_> = order_fragments(&pieces).into_iter().map(|i| pieces[i].clone()).collect();
    let fragments = scramble(&ordered, config.num_bins, config.resolution, &mut rng);
    let episode = Episode {
        id: index,
        shape: config.shape,
        resolution: config.resolution,
        k: config.k,
        num_bins: config.num_bins,
        mode: config.mode,
        scenario: Scenario::Normal,
        split: split_for_index(config.seed, index),
        seed,
        target,
        fragments,
    };
    if config.scenario == Scenario::Normal {
        return Ok(episode);
    }
    let mut drng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DEGRADE, 0));
    degrade(&episode, config.scenario, &mut drng).map_err(wrap)
}

/// Episodes are generated in parallel; each is seeded from its index alone so
/// the result equals sequential generation.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let episodes = (0..config.n_samples)
        .into_par_iter()
        .map(|i| generate_episode(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { config: config.clone(), episodes })
}
