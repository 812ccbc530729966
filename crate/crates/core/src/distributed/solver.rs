//! Owner of a simulated world and every rank's FMM state.

use std::sync::Arc;

use super::evaluate::RankOutput;
use super::setup::{RankFmm, RankInput};
use super::{Fault, FmmConfig};
use crate::error::{FmmError, Result};
use crate::geometry::Point3;
use crate::operators::OperatorSet;
use crate::partition::Layout;
use crate::scalar::Real;
use crate::transport::{SimWorld, TransportStats};

/// Result of one distributed evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    /// Potentials indexed by the original point index.
    pub potentials: Vec<T>,
    /// Per-rank details; their `potentials` fields are emptied once assembled.
    pub ranks: Vec<RankOutput<T>>,
}

/// A distributed FMM over `P` simulated ranks.
pub struct DistributedSolver<T: Real> {
    world: SimWorld,
    ranks: Vec<RankFmm<T>>,
    config: FmmConfig,
    total_points: usize,
    ops: Arc<OperatorSet<T>>,
    setup_stats: Vec<TransportStats>,
}

/// Contiguous block of `0..n` handed to `rank` before sorting.
pub fn initial_block(n: usize, ranks: usize, rank: usize) -> std::ops::Range<usize> {
    (rank * n / ranks)..((rank + 1) * n / ranks)
}

impl<T: Real> DistributedSolver<T> {
    /// Precompute operators and run setup on `ranks` ranks.
    pub fn new(points: &[Point3], charges: &[f64], ranks: usize, config: FmmConfig) -> Result<Self> {
        config.validate(ranks)?;
        let ops = Arc::new(OperatorSet::new(config.order)?);
        Self::with_operators(points, charges, ranks, config, ops)
    }

    /// Run setup with operators built elsewhere.
    pub fn with_operators(
        points: &[Point3],
        charges: &[f64],
        ranks: usize,
        config: FmmConfig,
        ops: Arc<OperatorSet<T>>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(FmmError::NoPoints);
        }
        if charges.len() != points.len() {
            return Err(FmmError::LengthMismatch {
                expected: points.len(),
                got: charges.len(),
            });
        }
        config.validate(ranks)?;
        let world = SimWorld::new(ranks)?;
        let n = points.len();
        let mut inputs: Vec<RankInput> = (0..ranks)
            .map(|r| {
                let block = initial_block(n, ranks, r);
                RankInput {
                    points: points[block.clone()].to_vec(),
                    charges: charges[block.clone()].to_vec(),
                    first_gid: block.start as u64,
                }
            })
            .collect();
        let ranks_state = world.run_all(&mut inputs, |comm, input| {
            RankFmm::setup(comm, std::mem::take(input), &config, ops.clone())
        })?;
        let setup_stats = world.all_stats();
        Ok(Self {
            world,
            ranks: ranks_state,
            config,
            total_points: n,
            ops,
            setup_stats,
        })
    }

    /// Evaluate all potentials; the result is indexed like the input points.
    pub fn evaluate(&mut self) -> Result<Evaluation<T>> {
        let mut outputs = self.world.run_all(&mut self.ranks, |comm, state| state.evaluate(comm))?;
        let mut potentials = vec![T::zero(); self.total_points];
        for (state, out) in self.ranks.iter().zip(outputs.iter_mut()) {
            for (&gid, &f) in state.gids().iter().zip(&out.potentials) {
                potentials[gid as usize] = f;
            }
            out.potentials = Vec::new();
        }
        Ok(Evaluation {
            potentials,
            ranks: outputs,
        })
    }

    /// Replace every charge (in input order) and refresh the U-list ghosts.
    pub fn update_charges(&mut self, charges: &[f64]) -> Result<()> {
        if charges.len() != self.total_points {
            return Err(FmmError::LengthMismatch {
                expected: self.total_points,
                got: charges.len(),
            });
        }
        self.world
            .run_all(&mut self.ranks, |comm, state| state.update_charges(comm, charges))?;
        Ok(())
    }

    pub fn set_fault(&mut self, fault: Option<Fault>) {
        for r in &mut self.ranks {
            r.set_fault(fault);
        }
    }

    pub fn ranks(&self) -> &[RankFmm<T>] {
        &self.ranks
    }

    pub fn size(&self) -> usize {
        self.ranks.len()
    }

    pub fn config(&self) -> &FmmConfig {
        &self.config
    }

    pub fn total_points(&self) -> usize {
        self.total_points
    }

    pub fn layout(&self) -> &Layout {
        self.ranks[0].layout()
    }

    pub fn operators(&self) -> &Arc<OperatorSet<T>> {
        &self.ops
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    /// Transport counters accumulated during setup, per rank.
    pub fn setup_stats(&self) -> &[TransportStats] {
        &self.setup_stats
    }
}
