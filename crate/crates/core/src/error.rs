//! Error type shared by every module of the crate.

use crate::morton::MortonKey;
use crate::transport::CollectiveKind;

/// Errors raised anywhere in the crate, from the transport up to the CLI.
#[derive(Debug, thiserror::Error)]
pub enum FmmError {
    #[error("no points")]
    NoPoints,

    #[error("non-finite coordinate in point {index}")]
    NonFinite { index: usize },

    #[error("point ({x}, {y}, {z}) lies outside the bounding cube")]
    OutsideCube { x: f64, y: f64, z: f64 },

    #[error("invalid level {0} (maximum depth is {max})", max = crate::morton::MAX_DEPTH)]
    InvalidLevel(u32),

    #[error("malformed Morton key {0:#018x}")]
    MalformedKey(u64),

    #[error("the root box has no parent")]
    RootHasNoParent,

    #[error("box {0} is at the maximum depth and has no children")]
    NoChildren(MortonKey),

    #[error("keys {0} and {1} are at different levels")]
    LevelMismatch(MortonKey, MortonKey),

    #[error("points are not sorted by Morton key (first violation at index {0})")]
    Unsorted(usize),

    #[error("invalid tree depths: {0}")]
    InvalidDepth(String),

    #[error("box {0} is not a leaf of this tree")]
    NotALeaf(MortonKey),

    #[error("point {index} does not belong to any local root")]
    PointOutsideRoots { index: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("expansion order must be at least 2, got {0}")]
    InvalidOrder(usize),

    #[error("factorization of the {rows}x{cols} {what} matrix failed: {detail}")]
    Factorization {
        what: &'static str,
        rows: usize,
        cols: usize,
        detail: String,
    },

    #[error("unresolved dependency: rank {rank} has no data for existing remote box {key}")]
    UnresolvedDependency { rank: usize, key: MortonKey },

    #[error("too few points: {total} points cannot provide {samples} samples per rank on {ranks} ranks")]
    TooFewPoints {
        total: usize,
        samples: usize,
        ranks: usize,
    },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("collective mismatch: rank {rank} called {got} while {expected} is in progress")]
    CollectiveMismatch {
        rank: usize,
        expected: CollectiveKind,
        got: CollectiveKind,
    },

    #[error("deadlock in {collective}: ranks {finished:?} finished without joining")]
    Deadlock {
        collective: CollectiveKind,
        finished: Vec<usize>,
    },

    #[error("aborted {collective} because rank {failed_rank} failed")]
    Aborted {
        collective: CollectiveKind,
        failed_rank: usize,
    },

    #[error("transport error in {collective}: {detail}")]
    Transport {
        collective: CollectiveKind,
        detail: String,
    },

    #[error("unsupported transport backend {0:?}")]
    UnsupportedBackend(String),

    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<FmmError>,
    },

    #[error("bad point file: {0}")]
    BadFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FmmError {
    /// Attach a phase label, keeping an existing label if there is one.
    pub fn in_phase(self, phase: &'static str) -> Self {
        match self {
            e @ FmmError::Phase { .. } => e,
            e => FmmError::Phase {
                phase,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with phase labels stripped.
    pub fn root_cause(&self) -> &FmmError {
        match self {
            FmmError::Phase { source, .. } => source.root_cause(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, FmmError>;

pub(crate) trait PhaseExt<T> {
    fn phase(self, phase: &'static str) -> Result<T>;
}

impl<T> PhaseExt<T> for Result<T> {
    fn phase(self, phase: &'static str) -> Result<T> {
        self.map_err(|e| e.in_phase(phase))
    }
}
