//! Samplesort of particles across ranks and the global root layout.
//!
//! Each rank ends up owning a contiguous run of the `8^global_depth` roots,
//! ordered by Morton index, together with every particle inside them.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{FmmError, Result};
use crate::morton::MortonKey;
use crate::transport::Communicator;

/// A point with its Morton key at the finest tree level and its global index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle<T> {
    pub key: MortonKey,
    pub gid: u64,
    pub pos: [T; 3],
    pub charge: T,
}

impl<T> Particle<T> {
    /// The sort order used everywhere: key first, then global index.
    pub fn order(&self, other: &Self) -> Ordering {
        (self.key, self.gid).cmp(&(other.key, other.gid))
    }
}

/// Number of roots at `global_depth`.
pub fn root_count(global_depth: u32) -> usize {
    1usize << (3 * global_depth)
}

/// Deterministic per-rank sample stream.
fn rank_rng(seed: u64, rank: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rank as u64);
    rng
}

/// Move sorted splitter positions to root boundaries.
///
/// `positions` holds, for each sampled splitter, its location measured in
/// roots (root index plus the fraction through that root). Each splitter snaps
/// to the nearest boundary, then is clamped so every rank receives between
/// `floor(R/P)` and `ceil(R/P)` roots. Returns the `P + 1` boundaries.
pub fn snap_to_roots(positions: &[f64], nroots: usize, ranks: usize) -> Vec<usize> {
    assert!(ranks >= 1 && ranks <= nroots);
    let lo = nroots / ranks;
    let hi = nroots.div_ceil(ranks);
    let mut bounds = Vec::with_capacity(ranks + 1);
    bounds.push(0usize);
    for i in 1..ranks {
        let prev = bounds[i - 1];
        let left = ranks - i;
        let min = (prev + lo).max(nroots.saturating_sub(left * hi));
        let max = (prev + hi).min(nroots - left * lo);
        let want = positions
            .get(i - 1)
            .map(|&p| p.round() as usize)
            .unwrap_or(i * nroots / ranks);
        bounds.push(want.clamp(min, max));
    }
    bounds.push(nroots);
    bounds
}

/// Sort key of a particle as plain integers: `(Morton index at the finest level, gid)`.
pub type SortKey = (u64, u64);

fn sort_key<T>(p: &Particle<T>) -> SortKey {
    (p.key.morton_index(), p.gid)
}

/// Every `m/P`-th entry of `sorted` (`m` samples): entry `i * m / P` for `i = 1..P`.
pub fn choose_splitters<K: Copy>(sorted: &[K], ranks: usize) -> Vec<K> {
    let m = sorted.len();
    (1..ranks).map(|i| sorted[i * m / ranks]).collect()
}

/// Seeded random samples gathered on rank 0, turned into `P - 1` splitters and sent back to every rank.
///
/// Each rank draws `samples_per_rank` particles with replacement from a
/// ChaCha8 stream seeded with `seed`, one stream per rank.
pub fn sample_splitters<C: Communicator, T>(
    comm: &C,
    particles: &[Particle<T>],
    samples_per_rank: usize,
    seed: u64,
) -> Result<Vec<SortKey>> {
    let p = comm.size();
    if samples_per_rank == 0 {
        return Err(FmmError::InvalidConfig("at least one sample per rank is required".into()));
    }
    let samples: Vec<SortKey> = if particles.is_empty() {
        Vec::new()
    } else {
        let mut rng = rank_rng(seed, comm.rank());
        (0..samples_per_rank)
            .map(|_| sort_key(&particles[rng.random_range(0..particles.len())]))
            .collect()
    };
    // Every rank learns the global count from the gather so a shortage fails on all ranks alike.
    let mut payload = vec![(particles.len() as u64, 0)];
    payload.extend(samples);
    let gathered = comm.gatherv(0, &payload)?;
    let segments = gathered.map(|all| {
        let total: u64 = all.iter().map(|seg| seg[0].0).sum();
        let starved = all.iter().any(|seg| seg.len() == 1);
        if starved || total < (samples_per_rank * p) as u64 {
            return vec![vec![(u64::MAX, total)]; p];
        }
        let mut flat: Vec<SortKey> = all.into_iter().flat_map(|seg| seg.into_iter().skip(1)).collect();
        flat.sort_unstable();
        vec![choose_splitters(&flat, p); p]
    });
    let splitters = comm.scatterv(0, segments)?;
    if let [(u64::MAX, total)] = splitters[..] {
        return Err(FmmError::TooFewPoints {
            total: total as usize,
            samples: samples_per_rank,
            ranks: p,
        });
    }
    Ok(splitters)
}

/// Bucket of `key`: the number of splitters not greater than it.
pub fn bucket_of(splitters: &[SortKey], key: SortKey) -> usize {
    splitters.partition_point(|s| *s <= key)
}

fn exchange<C: Communicator, T: Copy + Send + 'static>(
    comm: &C,
    particles: Vec<Particle<T>>,
    dest: impl Fn(&Particle<T>) -> Result<usize>,
) -> Result<Vec<Particle<T>>> {
    let mut sends: Vec<Vec<Particle<T>>> = vec![Vec::new(); comm.size()];
    for particle in particles {
        sends[dest(&particle)?].push(particle);
    }
    let mut mine: Vec<Particle<T>> = comm.alltoallv(sends)?.into_iter().flatten().collect();
    mine.sort_unstable_by(Particle::order);
    Ok(mine)
}

/// Send every particle to the bucket its key falls in, then sort locally.
pub fn redistribute<C: Communicator, T: Copy + Send + 'static>(
    comm: &C,
    particles: Vec<Particle<T>>,
    splitters: &[SortKey],
) -> Result<Vec<Particle<T>>> {
    exchange(comm, particles, |p| Ok(bucket_of(splitters, sort_key(p))))
}

/// Root boundaries from splitters, snapped as in [`snap_to_roots`].
pub fn root_bounds(splitters: &[SortKey], depth: u32, global_depth: u32, ranks: usize) -> Vec<usize> {
    let per_root = (1u64 << (3 * (depth - global_depth))) as f64;
    let positions: Vec<f64> = splitters.iter().map(|s| s.0 as f64 / per_root).collect();
    snap_to_roots(&positions, root_count(global_depth), ranks)
}

/// Result of [`samplesort`] on one rank.
#[derive(Clone, Debug)]
pub struct Sorted<T> {
    /// Local particles in `(key, gid)` order.
    pub particles: Vec<Particle<T>>,
    /// Raw sampled splitters, empty when sampling was skipped.
    pub splitters: Vec<SortKey>,
    /// Root boundaries shared by all ranks; this rank owns roots `bounds[r]..bounds[r+1]`.
    pub bounds: Vec<usize>,
}

/// Samplesort with bucket boundaries snapped to whole roots at `global_depth`.
///
/// With `samples_per_rank == 0` no sampling happens and roots are split evenly.
pub fn samplesort<C: Communicator, T: Copy + Send + 'static>(
    comm: &C,
    particles: Vec<Particle<T>>,
    samples_per_rank: usize,
    seed: u64,
    depth: u32,
    global_depth: u32,
) -> Result<Sorted<T>> {
    let p = comm.size();
    let nroots = root_count(global_depth);
    if p > nroots {
        return Err(FmmError::InvalidConfig(format!(
            "{p} ranks exceed the {nroots} roots at global depth {global_depth}"
        )));
    }
    if depth < global_depth {
        return Err(FmmError::InvalidDepth(format!("key depth {depth} above global depth {global_depth}")));
    }
    let splitters = if samples_per_rank > 0 {
        sample_splitters(comm, &particles, samples_per_rank, seed)?
    } else {
        Vec::new()
    };
    let bounds = root_bounds(&splitters, depth, global_depth, p);
    let particles = exchange(comm, particles, |q| {
        let root = q.key.ancestor(global_depth)?.morton_index() as usize;
        Ok(bounds.partition_point(|&b| b <= root) - 1)
    })?;
    Ok(Sorted {
        particles,
        splitters,
        bounds,
    })
}

/// One root's entry in the layout: key, owning rank and point count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub root: MortonKey,
    pub rank: usize,
    pub count: u64,
}

/// Global map from roots to owning ranks, identical on every rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    global_depth: u32,
    entries: Vec<LayoutEntry>,
    /// `(first root index, rank)` for each rank's run, in increasing order.
    runs: Vec<(usize, usize)>,
}

impl Layout {
    /// Validate a complete list of entries.
    pub fn from_entries(global_depth: u32, ranks: usize, mut entries: Vec<LayoutEntry>) -> Result<Self> {
        let nroots = root_count(global_depth);
        entries.sort_by_key(|e| e.root);
        if entries.len() != nroots {
            return Err(FmmError::InvalidLayout(format!("{} entries for {nroots} roots", entries.len())));
        }
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for (i, e) in entries.iter().enumerate() {
            if e.root.level() != global_depth || e.root.morton_index() != i as u64 {
                return Err(FmmError::InvalidLayout(format!("root {} missing or duplicated", i)));
            }
            if e.rank >= ranks {
                return Err(FmmError::InvalidLayout(format!("root {} assigned to rank {} of {ranks}", e.root, e.rank)));
            }
            match runs.last() {
                Some(&(_, r)) if r == e.rank => {}
                Some(&(_, r)) if r > e.rank => {
                    return Err(FmmError::InvalidLayout(format!("rank {} owns roots after rank {r}", e.rank)))
                }
                _ => runs.push((i, e.rank)),
            }
        }
        let mut seen = vec![false; ranks];
        for &(_, r) in &runs {
            if std::mem::replace(&mut seen[r], true) {
                return Err(FmmError::InvalidLayout(format!("roots of rank {r} are not contiguous")));
            }
        }
        Ok(Self {
            global_depth,
            entries,
            runs,
        })
    }

    pub fn global_depth(&self) -> u32 {
        self.global_depth
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    /// Rank owning the root above `key`; `key` must be at or below the global depth.
    pub fn owner(&self, key: MortonKey) -> Result<usize> {
        let root = key.ancestor(self.global_depth)?;
        let idx = root.morton_index() as usize;
        let run = self.runs.partition_point(|&(start, _)| start <= idx) - 1;
        Ok(self.runs[run].1)
    }

    /// Roots owned by `rank`, in Morton order.
    pub fn roots_of(&self, rank: usize) -> Vec<MortonKey> {
        self.entries.iter().filter(|e| e.rank == rank).map(|e| e.root).collect()
    }

    pub fn total_points(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }

    /// Hex SHA-256 over `(code, rank, count)` of every root, little endian.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.root.code().to_le_bytes());
            h.update((e.rank as u64).to_le_bytes());
            h.update(e.count.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Share every rank's roots and counts with an allgatherv and validate the result.
pub fn build_layout<C: Communicator>(comm: &C, global_depth: u32, local: &[(MortonKey, u64)]) -> Result<Layout> {
    let mine: Vec<(u64, u64, u64)> = local
        .iter()
        .map(|&(root, count)| (root.code(), comm.rank() as u64, count))
        .collect();
    let all = comm.allgatherv(&mine)?;
    let entries = all
        .into_iter()
        .flatten()
        .map(|(code, rank, count)| {
            Ok(LayoutEntry {
                root: MortonKey::from_code(code)?,
                rank: rank as usize,
                count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Layout::from_entries(global_depth, comm.size(), entries)
}
