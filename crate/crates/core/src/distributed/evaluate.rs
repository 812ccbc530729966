//! Runtime: local upward pass, ghost exchange, global stage, local downward pass.

use std::time::Instant;

use serde::Serialize;

use super::setup::RankFmm;
use super::{Fault, NOMINATED_RANK};
use crate::error::{FmmError, PhaseExt, Result};
use crate::ghost::Ghost;
use crate::kernels::p2p_uli;
use crate::morton::MortonKey;
use crate::operators::{d2t, downward, s2u, upward, Expansions, OperatorSet};
use crate::partition::Layout;
use crate::scalar::Real;
use crate::transport::{CollectiveKind, Communicator, TransportStats};
use crate::tree::{BoxHierarchy, InteractionLists};

const OCTANT_ORDER: [usize; 8] = [0, 1, 2, 3, 4, 5, 6, 7];

/// Seconds spent in each runtime phase on one rank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RuntimeTimings {
    pub near_field: f64,
    pub upward: f64,
    pub neighbor_alltoallv: f64,
    pub gatherv: f64,
    /// Coarse-level passes; nonzero on the nominated rank only.
    pub global_stage: f64,
    pub scatterv: f64,
    pub downward: f64,
    pub total: f64,
}

impl RuntimeTimings {
    /// Time outside the three runtime collectives.
    pub fn computation(&self) -> f64 {
        self.near_field + self.upward + self.global_stage + self.downward
    }
}

/// What one rank returns from an evaluation.
#[derive(Clone, Debug)]
pub struct RankOutput<T> {
    /// Potentials of the local points, in local order.
    pub potentials: Vec<T>,
    pub timings: RuntimeTimings,
    /// Transport counters for this evaluation only.
    pub stats: TransportStats,
    /// Bytes of root `u` data this rank contributed to the gather.
    pub gather_payload_bytes: usize,
    pub near_pairs: u64,
    pub v_translations: u64,
}

impl<T: Real> RankFmm<T> {
    /// Collective evaluation of the potentials of all local points.
    pub fn evaluate<C: Communicator>(&mut self, comm: &C) -> Result<RankOutput<T>> {
        let start = Instant::now();
        let before = comm.stats();
        let mut t = RuntimeTimings::default();
        let ops = self.ops.clone();
        let ops = &*ops;
        let gd = self.config.global_depth;
        let depth = self.config.depth();
        let n = self.points.len();

        let mut near = vec![T::zero(); n];
        let mut near_pairs = 0;
        if self.config.overlap_near_field {
            let clock = Instant::now();
            near_pairs = self.near_field(&mut near).phase("near_field")?;
            t.near_field = clock.elapsed().as_secs_f64();
        }

        let clock = Instant::now();
        self.exp.clear();
        self.ghost_u.clear();
        s2u(ops, &self.tree, &self.points, &self.charges, &mut self.exp);
        upward(ops, self.tree.boxes(), &mut self.exp, gd, &OCTANT_ORDER).phase("upward")?;
        t.upward = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        self.exchange_v_ghosts(comm).phase("neighbor_alltoallv")?;
        t.neighbor_alltoallv = clock.elapsed().as_secs_f64();
        if let Some(Fault::DropVGhost { rank }) = self.fault {
            if rank == self.rank {
                let mut keys: Vec<MortonKey> = self.ghost_u.keys().copied().collect();
                keys.sort_unstable();
                if let Some(k) = keys.first() {
                    self.ghost_u.remove(k);
                }
            }
        }

        let clock = Instant::now();
        let roots = self.tree.boxes().level(gd).expect("root level");
        let mut payload = Vec::with_capacity(roots.len() * ops.ncoeffs());
        for i in 0..roots.len() {
            payload.extend_from_slice(self.exp.u(gd, i));
        }
        let gather_payload_bytes = payload.len() * std::mem::size_of::<T>();
        let gathered = comm.gatherv(NOMINATED_RANK, &payload).phase("gatherv")?;
        t.gatherv = clock.elapsed().as_secs_f64();

        let segments = match gathered {
            Some(all) => {
                let clock = Instant::now();
                let segments = global_pass(ops, &self.layout, all).phase("global_stage")?;
                t.global_stage = clock.elapsed().as_secs_f64();
                Some(segments)
            }
            None => None,
        };

        let clock = Instant::now();
        let d_roots = comm.scatterv(NOMINATED_RANK, segments).phase("scatterv")?;
        t.scatterv = clock.elapsed().as_secs_f64();
        if d_roots.len() != payload.len() {
            return Err(FmmError::LengthMismatch {
                expected: payload.len(),
                got: d_roots.len(),
            })
            .phase("scatterv");
        }

        let clock = Instant::now();
        for (i, d) in d_roots.chunks(ops.ncoeffs()).enumerate() {
            self.exp.d_mut(gd, i).copy_from_slice(d);
        }
        let ghost_u = &self.ghost_u;
        let remote = |k: &MortonKey| ghost_u.get(k);
        let v_translations = downward(ops, self.tree.boxes(), &self.lists, &mut self.exp, gd + 1..=depth, self.rank, &remote)
            .phase("downward")?;
        let mut far = vec![T::zero(); n];
        d2t(ops, &self.tree, &self.points, &self.exp, &mut far);
        t.downward = clock.elapsed().as_secs_f64();

        if !self.config.overlap_near_field {
            let clock = Instant::now();
            near_pairs = self.near_field(&mut near).phase("near_field")?;
            t.near_field = clock.elapsed().as_secs_f64();
        }
        let potentials = far.into_iter().zip(near).map(|(a, b)| a + b).collect();
        t.total = start.elapsed().as_secs_f64();
        Ok(RankOutput {
            potentials,
            timings: t,
            stats: comm.stats().since(&before),
            gather_payload_bytes,
            near_pairs,
            v_translations,
        })
    }

    fn near_field(&self, out: &mut [T]) -> Result<u64> {
        p2p_uli(self.rank, &self.tree, &self.lists, &self.points, &self.charges, &self.ghost_points, out)
    }

    /// The single runtime neighbourhood exchange: `u` of every box a neighbour asked for.
    fn exchange_v_ghosts<C: Communicator>(&mut self, comm: &C) -> Result<()> {
        let sends: Vec<Vec<T>> = self
            .v_serve
            .iter()
            .map(|boxes| boxes.iter().flat_map(|&(level, i)| self.exp.u(level, i).iter().copied()).collect())
            .collect();
        let received = comm.neighbor_alltoallv(&self.v_graph, sends)?;
        for (i, data) in received.into_iter().enumerate() {
            if data.len() != self.ghost_u.segment_len(i) {
                return Err(FmmError::Transport {
                    collective: CollectiveKind::NeighborAlltoallv,
                    detail: format!(
                        "rank {} expected {} ghost values from rank {}, got {}",
                        self.rank,
                        self.ghost_u.segment_len(i),
                        self.v_graph.neighbors()[i],
                        data.len()
                    ),
                });
            }
            self.ghost_u.segment_mut(i).copy_from_slice(&data);
        }
        Ok(())
    }

    /// Replace the charges, given for every point by global index, and refresh the U-list ghosts.
    pub fn update_charges<C: Communicator>(&mut self, comm: &C, charges: &[f64]) -> Result<()> {
        if charges.len() != self.total_points {
            return Err(FmmError::LengthMismatch {
                expected: self.total_points,
                got: charges.len(),
            });
        }
        for (q, &gid) in self.charges.iter_mut().zip(&self.gids) {
            *q = T::of_f64(charges[gid as usize]);
        }
        self.exp.clear();
        self.ghost_u.clear();
        self.exchange_u_data(comm).phase("update_charges")
    }
}

/// Coarse levels `0..=global_depth` on the nominated rank.
///
/// `gathered[r]` holds the `u` vectors of rank `r`'s roots in Morton order.
/// Returns, per rank, the `d` vectors of its roots in the same layout.
pub fn global_pass<T: Real>(ops: &OperatorSet<T>, layout: &Layout, gathered: Vec<Vec<T>>) -> Result<Vec<Vec<T>>> {
    let n = ops.ncoeffs();
    let gd = layout.global_depth();
    let entries = layout.entries();
    let boxes = BoxHierarchy::from_bottom(
        entries.iter().map(|e| e.root).collect(),
        entries.iter().map(|e| e.count as usize).collect(),
        0,
    )?;
    let lists = InteractionLists::new(&boxes);
    let mut exp = Expansions::new(&boxes, n);
    let ranks = gathered.len();
    let mut cursor = vec![0usize; ranks];
    for (i, e) in entries.iter().enumerate() {
        let seg = gathered.get(e.rank).ok_or_else(|| FmmError::InvalidLayout(format!("no data from rank {}", e.rank)))?;
        let at = cursor[e.rank];
        let u = seg.get(at..at + n).ok_or(FmmError::LengthMismatch {
            expected: at + n,
            got: seg.len(),
        })?;
        exp.u_mut(gd, i).copy_from_slice(u);
        cursor[e.rank] += n;
    }
    for (r, seg) in gathered.iter().enumerate() {
        if cursor[r] != seg.len() {
            return Err(FmmError::LengthMismatch {
                expected: cursor[r],
                got: seg.len(),
            });
        }
    }
    upward(ops, &boxes, &mut exp, 0, &OCTANT_ORDER)?;
    let none = |_: &MortonKey| Ghost::Unresolved;
    downward(ops, &boxes, &lists, &mut exp, 1..=gd, NOMINATED_RANK, &none)?;
    let mut segments: Vec<Vec<T>> = cursor.iter().map(|&len| Vec::with_capacity(len)).collect();
    for (i, e) in entries.iter().enumerate() {
        segments[e.rank].extend_from_slice(exp.d(gd, i));
    }
    Ok(segments)
}
