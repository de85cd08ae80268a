use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

/// Which graph of the pair an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Left => f.write_str("g1"),
            Side::Right => f.write_str("g2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("graph has no relation triples")]
    EmptyGraph,

    #[error("line {line}: unknown {side} entity label `{label}`")]
    UnknownLabel {
        line: usize,
        side: Side,
        label: String,
    },

    #[error("line {line}: non-injective seed set ({side} entity `{label}` appears twice)")]
    NonInjectiveSeeds {
        line: usize,
        side: Side,
        label: String,
    },

    #[error("non-finite value in `{tensor}` at epoch {epoch}")]
    NonFinite { tensor: String, epoch: usize },

    #[error("width mismatch: {0}")]
    Width(String),

    #[error("{side}: {count} entities have no text embedding (first: {})", .labels.join(", "))]
    MissingEmbeddings {
        side: Side,
        count: usize,
        /// At most 20 of the missing labels.
        labels: Vec<String>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
