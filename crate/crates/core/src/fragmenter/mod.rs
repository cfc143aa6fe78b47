//! Binary space partitioning of target shapes into assembly episodes.
//!
//! A target polygon is split `K` times level by level into `2^K` fragments,
//! the fragments are sorted into assembly order (bottom to top, then left to
//! right by centroid), each one is re-expressed relative to an anchor point
//! and spun by a random rotation bin, and the result is recorded as an
//! [`Episode`] together with the labels that undo the scrambling.

mod dataset;
mod degrade;
mod format;
mod partition;
mod shapes;

use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use dataset::{derive_seed, generate_dataset, generate_episode, split_for_index, Dataset, DatasetConfig, SPLIT_FRACTIONS};
pub use degrade::{degrade, DISTORTION_JITTER, EROSION_FACTOR_RANGE, EROSION_RATIO_RANGE};
pub use format::{
    episode_from_text, episode_to_text, manifest_for, read_dataset, read_episode, read_manifest, write_dataset, write_episode,
    Manifest, SplitLists, DATASET_FORMAT_VERSION,
};
pub use partition::{fragment_shape, order_fragments, scramble, Episode, EpisodeFragment};
pub use shapes::{Scenario, Split, TargetShape};

#[derive(Debug, Error)]
pub enum FragmentError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("episode {index}: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<FragmentError>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degradation failed: {0}")]
    Degrade(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },
    #[error("unsupported dataset format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T, E = FragmentError> = std::result::Result<T, E>;
