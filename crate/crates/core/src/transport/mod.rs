//! Collective communication between ranks.
//!
//! The FMM only talks to other ranks through [`Communicator`]. The in-process
//! simulator in [`sim`] is the one backend shipped here; it runs every rank on
//! its own thread and records per-collective statistics.

pub mod sim;

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};

pub use sim::{SimComm, SimWorld};

/// The collectives the FMM uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    NeighborAlltoallv,
    Gatherv,
    Scatterv,
    Allgatherv,
    Alltoallv,
}

impl CollectiveKind {
    pub const ALL: [CollectiveKind; 5] = [
        CollectiveKind::NeighborAlltoallv,
        CollectiveKind::Gatherv,
        CollectiveKind::Scatterv,
        CollectiveKind::Allgatherv,
        CollectiveKind::Alltoallv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CollectiveKind::NeighborAlltoallv => "neighbor_alltoallv",
            CollectiveKind::Gatherv => "gatherv",
            CollectiveKind::Scatterv => "scatterv",
            CollectiveKind::Allgatherv => "allgatherv",
            CollectiveKind::Alltoallv => "alltoallv",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Plain data that can be copied into another rank's buffers.
pub trait Wire: Copy + Send + 'static {}

impl<T: Copy + Send + 'static> Wire for T {}

/// Counters for one kind of collective on one rank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub calls: u64,
    /// Point-to-point messages this rank sent; self-delivery and empty buffers are not messages.
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Seconds spent inside the collective, including waiting for other ranks.
    pub wall_time: f64,
}

impl KindStats {
    fn minus(&self, earlier: &KindStats) -> KindStats {
        KindStats {
            calls: self.calls - earlier.calls,
            messages_sent: self.messages_sent - earlier.messages_sent,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_received: self.bytes_received - earlier.bytes_received,
            wall_time: self.wall_time - earlier.wall_time,
        }
    }
}

/// Per-rank transport statistics, one [`KindStats`] per collective kind.
///
/// Serializes as a map from collective name to its counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransportStats {
    kinds: [KindStats; 5],
}

impl TransportStats {
    /// Counters accumulated since `earlier` was taken.
    pub fn since(&self, earlier: &TransportStats) -> TransportStats {
        TransportStats {
            kinds: std::array::from_fn(|i| self.kinds[i].minus(&earlier.kinds[i])),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (CollectiveKind, &KindStats)> {
        CollectiveKind::ALL.into_iter().map(move |k| (k, &self[k]))
    }

    pub fn total_bytes_sent(&self) -> u64 {
        self.kinds.iter().map(|k| k.bytes_sent).sum()
    }

    pub fn total_calls(&self) -> u64 {
        self.kinds.iter().map(|k| k.calls).sum()
    }
}

impl Serialize for TransportStats {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.kinds.len()))?;
        for (kind, stats) in self.iter() {
            map.serialize_entry(kind.name(), stats)?;
        }
        map.end()
    }
}

impl Index<CollectiveKind> for TransportStats {
    type Output = KindStats;
    fn index(&self, kind: CollectiveKind) -> &KindStats {
        &self.kinds[kind.slot()]
    }
}

impl IndexMut<CollectiveKind> for TransportStats {
    fn index_mut(&mut self, kind: CollectiveKind) -> &mut KindStats {
        &mut self.kinds[kind.slot()]
    }
}

/// The ranks one rank exchanges with in a neighbourhood collective.
///
/// Neighbour lists are sorted, free of duplicates and never contain the
/// owning rank. Graphs must be symmetric across ranks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommGraph {
    neighbors: Vec<usize>,
}

impl CommGraph {
    /// Build from any collection of ranks; `own` is dropped, duplicates removed.
    pub fn new(own: usize, ranks: impl IntoIterator<Item = usize>) -> Self {
        let mut neighbors: Vec<usize> = ranks.into_iter().filter(|&r| r != own).collect();
        neighbors.sort_unstable();
        neighbors.dedup();
        Self { neighbors }
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Position of `rank` in the neighbour list.
    pub fn position(&self, rank: usize) -> Option<usize> {
        self.neighbors.binary_search(&rank).ok()
    }
}

/// Collective operations over a fixed set of ranks.
///
/// Every rank must call the same sequence of collectives. Per-destination
/// buffers are indexed by rank (or by neighbour position for the neighbourhood
/// variant), and results are indexed the same way.
pub trait Communicator {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;

    /// Every rank receives every rank's buffer.
    fn allgatherv<T: Wire>(&self, send: &[T]) -> Result<Vec<Vec<T>>>;

    /// `sends[d]` goes to rank `d`; result `[s]` came from rank `s`.
    fn alltoallv<T: Wire>(&self, sends: Vec<Vec<T>>) -> Result<Vec<Vec<T>>>;

    /// The root receives every rank's buffer; other ranks get `None`.
    fn gatherv<T: Wire>(&self, root: usize, send: &[T]) -> Result<Option<Vec<Vec<T>>>>;

    /// The root supplies one segment per rank; every rank receives its own.
    fn scatterv<T: Wire>(&self, root: usize, segments: Option<Vec<Vec<T>>>) -> Result<Vec<T>>;

    /// `sends[i]` goes to `graph.neighbors()[i]`; result `[i]` came from that neighbour.
    fn neighbor_alltoallv<T: Wire>(&self, graph: &CommGraph, sends: Vec<Vec<T>>) -> Result<Vec<Vec<T>>>;

    /// Statistics accumulated by this rank so far.
    fn stats(&self) -> TransportStats;
}

/// Name of the transport selected by `FMM_BACKEND` (default `sim`).
pub fn backend_from_env() -> Result<String> {
    let name = std::env::var("FMM_BACKEND").unwrap_or_else(|_| "sim".to_string());
    check_backend(&name)?;
    Ok(name)
}

/// Accept only backends this build provides.
pub fn check_backend(name: &str) -> Result<()> {
    match name {
        "sim" => Ok(()),
        other => Err(FmmError::UnsupportedBackend(other.to_string())),
    }
}
