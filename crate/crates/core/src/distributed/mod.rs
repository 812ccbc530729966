//! The FMM spread over ranks: setup once, evaluate many times.
//!
//! Setup sorts points across ranks, builds each rank's local trees and works
//! out, once, which remote boxes every rank needs. At runtime a rank exchanges
//! ghost `u` vectors with its neighbours in a single neighbourhood collective,
//! sends its root `u` vectors to a nominated rank that runs the coarse levels,
//! receives its root `d` vectors back, and finishes locally.

mod evaluate;
mod setup;
mod solver;

pub use evaluate::{global_pass, RankOutput, RuntimeTimings};
pub use setup::{RankFmm, RankInput, SetupReport, SetupTimings};
pub use solver::{initial_block, DistributedSolver, Evaluation};

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::morton::MAX_DEPTH;
use crate::operators::ncoeffs;
use crate::partition::root_count;

/// The rank that gathers root `u` vectors and runs the coarse levels.
pub const NOMINATED_RANK: usize = 0;

/// Tree shape and sampling parameters shared by all ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FmmConfig {
    /// Level of the local roots; there are `8^global_depth` of them.
    pub global_depth: u32,
    /// Levels below each local root.
    pub local_depth: u32,
    /// Points per edge of the surface grids.
    pub order: usize,
    /// Splitter samples drawn per rank, capped at `N / P` at setup.
    pub samples_per_rank: usize,
    pub seed: u64,
    /// Compute the near field before the far field instead of after it.
    pub overlap_near_field: bool,
}

impl Default for FmmConfig {
    fn default() -> Self {
        Self {
            global_depth: 1,
            local_depth: 2,
            order: 6,
            samples_per_rank: 64,
            seed: 0,
            overlap_near_field: true,
        }
    }
}

impl FmmConfig {
    pub fn depth(&self) -> u32 {
        self.global_depth + self.local_depth
    }

    /// Check the configuration against a world of `ranks` ranks.
    pub fn validate(&self, ranks: usize) -> Result<()> {
        if self.global_depth < 1 || self.local_depth < 1 {
            return Err(FmmError::InvalidDepth(format!(
                "global depth {} and local depth {} must both be at least 1",
                self.global_depth, self.local_depth
            )));
        }
        if self.depth() > MAX_DEPTH {
            return Err(FmmError::InvalidDepth(format!("total depth {} exceeds {MAX_DEPTH}", self.depth())));
        }
        if self.order < 2 {
            return Err(FmmError::InvalidOrder(self.order));
        }
        let roots = root_count(self.global_depth);
        if ranks == 0 || ranks > roots {
            return Err(FmmError::InvalidConfig(format!(
                "{ranks} ranks cannot share {roots} roots at global depth {}",
                self.global_depth
            )));
        }
        Ok(())
    }
}

/// Bytes one rank sends to the nominated rank: `n_roots * (6 (order - 1)^2 + 2) * bits / 8`.
pub fn global_message_size(n_roots: usize, order: usize, bits: u32) -> usize {
    n_roots * ncoeffs(order) * bits as usize / 8
}

/// Test hook that damages ghost data after the runtime exchange.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Forget the first received V-list ghost on `rank`.
    DropVGhost { rank: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_size_examples() {
        assert_eq!(global_message_size(1, 3, 32), 104);
        assert_eq!(global_message_size(2, 3, 64), 416);
        assert_eq!(global_message_size(1, 2, 32), 32);
        assert_eq!(global_message_size(8, 6, 64), 8 * 152 * 8);
    }

    #[test]
    fn config_validation() {
        let c = FmmConfig::default();
        assert!(c.validate(8).is_ok());
        assert!(c.validate(9).is_err());
        assert!(FmmConfig { local_depth: 0, ..c.clone() }.validate(1).is_err());
        assert!(FmmConfig { order: 1, ..c.clone() }.validate(1).is_err());
        assert!(FmmConfig { global_depth: 10, local_depth: 7, ..c }.validate(1).is_err());
    }
}
