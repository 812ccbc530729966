//! Setup: the sort and every exchange that has to happen before the first evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::{Fault, FmmConfig};
use crate::error::{FmmError, PhaseExt, Result};
use crate::geometry::{fit_domain, BoundingCube, Point3, DEFAULT_MARGIN};
use crate::ghost::{GhostExpansions, GhostPoints};
use crate::morton::{encode, MortonKey};
use crate::operators::{Expansions, OperatorSet};
use crate::partition::{build_layout, samplesort, Layout, Particle, SortKey};
use crate::scalar::Real;
use crate::transport::{CommGraph, Communicator};
use crate::tree::{InteractionLists, UniformTree};

/// The points a rank starts with, before sorting.
#[derive(Clone, Debug, Default)]
pub struct RankInput {
    pub points: Vec<Point3>,
    pub charges: Vec<f64>,
    /// Global index of the first point; the rest follow consecutively.
    pub first_gid: u64,
}

/// Seconds spent in each setup phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SetupTimings {
    pub sort_tree: f64,
    pub layout: f64,
    pub comm_graphs: f64,
    pub u_list: f64,
    pub v_list: f64,
}

impl SetupTimings {
    pub fn total(&self) -> f64 {
        self.sort_tree + self.layout + self.comm_graphs + self.u_list + self.v_list
    }
}

/// Deterministic facts about one rank after setup.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SetupReport {
    pub rank: usize,
    pub points: usize,
    pub roots: usize,
    pub u_degree: usize,
    pub v_degree: usize,
    pub u_ghost_leaves: usize,
    pub u_ghost_points: usize,
    pub v_ghost_boxes: usize,
    /// Remote boxes queried and reported empty, U and V lists together.
    pub absent_ghosts: usize,
}

/// One rank's persistent FMM state.
pub struct RankFmm<T: Real> {
    pub(super) rank: usize,
    pub(super) config: FmmConfig,
    pub(super) total_points: usize,
    pub(super) cube: BoundingCube,
    pub(super) ops: Arc<OperatorSet<T>>,
    pub(super) splitters: Vec<SortKey>,
    pub(super) root_bounds: Vec<usize>,
    pub(super) layout: Layout,
    pub(super) tree: UniformTree,
    pub(super) lists: InteractionLists,
    pub(super) gids: Vec<u64>,
    pub(super) points: Vec<[T; 3]>,
    pub(super) charges: Vec<T>,
    pub(super) u_graph: CommGraph,
    pub(super) v_graph: CommGraph,
    /// Local leaves each U neighbour receives, in the order it asked for them.
    pub(super) u_serve: Vec<Vec<usize>>,
    /// Remote leaves received from each U neighbour with their point counts.
    pub(super) u_expect: Vec<Vec<(MortonKey, usize)>>,
    /// Local `(level, index)` boxes each V neighbour receives.
    pub(super) v_serve: Vec<Vec<(u32, usize)>>,
    pub(super) ghost_points: GhostPoints<T>,
    pub(super) ghost_u: GhostExpansions<T>,
    pub(super) exp: Expansions<T>,
    pub(super) setup_timings: SetupTimings,
    pub(super) report: SetupReport,
    pub(super) fault: Option<Fault>,
}

impl<T: Real> RankFmm<T> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn config(&self) -> &FmmConfig {
        &self.config
    }

    pub fn cube(&self) -> &BoundingCube {
        &self.cube
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tree(&self) -> &UniformTree {
        &self.tree
    }

    pub fn lists(&self) -> &InteractionLists {
        &self.lists
    }

    /// Raw sampled splitters as `(Morton index, gid)`, empty if sampling was skipped.
    pub fn splitters(&self) -> &[SortKey] {
        &self.splitters
    }

    /// `P + 1` root-index bounds: rank `r` owns roots `root_bounds[r]..root_bounds[r + 1]`.
    pub fn root_bounds(&self) -> &[usize] {
        &self.root_bounds
    }

    /// Global indices of the local points, in local (sorted) order.
    pub fn gids(&self) -> &[u64] {
        &self.gids
    }

    pub fn points(&self) -> &[[T; 3]] {
        &self.points
    }

    pub fn charges(&self) -> &[T] {
        &self.charges
    }

    pub fn u_graph(&self) -> &CommGraph {
        &self.u_graph
    }

    pub fn v_graph(&self) -> &CommGraph {
        &self.v_graph
    }

    pub fn ghost_points(&self) -> &GhostPoints<T> {
        &self.ghost_points
    }

    pub fn ghost_expansions(&self) -> &GhostExpansions<T> {
        &self.ghost_u
    }

    pub fn expansions(&self) -> &Expansions<T> {
        &self.exp
    }

    pub fn setup_timings(&self) -> &SetupTimings {
        &self.setup_timings
    }

    pub fn report(&self) -> &SetupReport {
        &self.report
    }

    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    /// Collectively build every rank's state.
    pub fn setup<C: Communicator>(comm: &C, input: RankInput, config: &FmmConfig, ops: Arc<OperatorSet<T>>) -> Result<Self> {
        let rank = comm.rank();
        let p = comm.size();
        config.validate(p).phase("setup")?;
        if ops.order() != config.order {
            return Err(FmmError::InvalidConfig(format!(
                "operators built for order {} but configuration asks for {}",
                ops.order(),
                config.order
            )));
        }
        if input.charges.len() != input.points.len() {
            return Err(FmmError::LengthMismatch {
                expected: input.points.len(),
                got: input.charges.len(),
            });
        }
        let depth = config.depth();
        let gd = config.global_depth;
        let mut timings = SetupTimings::default();

        // Sort and local trees.
        let clock = Instant::now();
        let (cube, total_points) = global_domain(comm, &input).phase("sort_tree")?;
        let particles = input
            .points
            .iter()
            .zip(&input.charges)
            .enumerate()
            .map(|(i, (pt, &q))| {
                Ok(Particle {
                    key: encode(pt, depth, &cube)?,
                    gid: input.first_gid + i as u64,
                    pos: pt.to_array(),
                    charge: q,
                })
            })
            .collect::<Result<Vec<_>>>()
            .phase("sort_tree")?;
        let samples = config.samples_per_rank.min(total_points / p);
        let sorted = samplesort(comm, particles, samples, config.seed, depth, gd).phase("sort_tree")?;
        let roots: Vec<MortonKey> = (sorted.bounds[rank]..sorted.bounds[rank + 1])
            .map(|i| MortonKey::from_morton_index(i as u64, gd))
            .collect();
        let positions: Vec<Point3> = sorted.particles.iter().map(|q| Point3::from_array(q.pos)).collect();
        let tree = UniformTree::new(&positions, cube, gd, config.local_depth, &roots).phase("sort_tree")?;
        let lists = InteractionLists::new(tree.boxes());
        timings.sort_tree = clock.elapsed().as_secs_f64();

        // Layout.
        let clock = Instant::now();
        let root_level = tree.boxes().level(gd).expect("root level");
        let local_roots: Vec<(MortonKey, u64)> = root_level
            .keys()
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, root_level.occupancy(i) as u64))
            .collect();
        let layout = build_layout(comm, gd, &local_roots).phase("layout")?;
        timings.layout = clock.elapsed().as_secs_f64();

        // Neighbourhood graphs: owners of every remote box any local box could interact with.
        let clock = Instant::now();
        let leaves = tree.leaves();
        let mut u_ranks = BTreeSet::new();
        for i in 0..leaves.len() {
            for key in lists.u_list(i) {
                if leaves.index_of(key).is_none() {
                    u_ranks.insert(layout.owner(*key)?);
                }
            }
        }
        let mut v_ranks = BTreeSet::new();
        for level in gd + 1..=depth {
            let boxes = tree.boxes().level(level).expect("level");
            for i in 0..boxes.len() {
                for key in lists.v_list(level, i) {
                    if boxes.index_of(key).is_none() {
                        v_ranks.insert(layout.owner(*key)?);
                    }
                }
            }
        }
        let u_graph = CommGraph::new(rank, u_ranks);
        let v_graph = CommGraph::new(rank, v_ranks);
        timings.comm_graphs = clock.elapsed().as_secs_f64();

        let points: Vec<[T; 3]> = sorted.particles.iter().map(|q| q.pos.map(T::of_f64)).collect();
        let charges: Vec<T> = sorted.particles.iter().map(|q| T::of_f64(q.charge)).collect();
        let gids: Vec<u64> = sorted.particles.iter().map(|q| q.gid).collect();

        // U list: queries only for the neighbours of occupied leaves.
        let clock = Instant::now();
        let mut u_queries: BTreeMap<usize, BTreeSet<MortonKey>> = BTreeMap::new();
        for i in (0..leaves.len()).filter(|&i| leaves.exists(i)) {
            for key in lists.u_list(i) {
                if leaves.index_of(key).is_none() {
                    u_queries.entry(layout.owner(*key)?).or_default().insert(*key);
                }
            }
        }
        let (u_serve, u_replies) = existence_exchange(comm, &u_graph, &u_queries, |key| {
            leaves.index_of(key).map(|i| (i, leaves.occupancy(i) as u64))
        })
        .phase("u_list")?;
        let mut ghost_points = GhostPoints::new();
        let mut u_expect = Vec::with_capacity(u_graph.len());
        let mut absent = 0;
        for replies in &u_replies {
            let mut expect = Vec::new();
            for &(key, count) in replies {
                if count == 0 {
                    ghost_points.mark_absent(key);
                    absent += 1;
                } else {
                    expect.push((key, count as usize));
                }
            }
            u_expect.push(expect);
        }
        let mut state = Self {
            rank,
            config: config.clone(),
            total_points,
            cube,
            splitters: sorted.splitters,
            root_bounds: sorted.bounds,
            layout,
            lists,
            gids,
            points,
            charges,
            u_graph,
            v_graph,
            u_serve,
            u_expect,
            v_serve: Vec::new(),
            ghost_points,
            ghost_u: GhostExpansions::default(),
            exp: Expansions::new(tree.boxes(), ops.ncoeffs()),
            tree,
            ops,
            setup_timings: timings,
            report: SetupReport::default(),
            fault: None,
        };
        state.exchange_u_data(comm).phase("u_list")?;
        state.setup_timings.u_list = clock.elapsed().as_secs_f64();

        // V list: queries for occupied boxes below the roots, then buffers for the replies.
        let clock = Instant::now();
        let boxes = state.tree.boxes();
        let mut v_queries: BTreeMap<usize, BTreeSet<MortonKey>> = BTreeMap::new();
        for level in gd + 1..=depth {
            let at = boxes.level(level).expect("level");
            for i in (0..at.len()).filter(|&i| at.exists(i)) {
                for key in state.lists.v_list(level, i) {
                    if at.index_of(key).is_none() {
                        v_queries.entry(state.layout.owner(*key)?).or_default().insert(*key);
                    }
                }
            }
        }
        let (v_serve, v_replies) = existence_exchange(comm, &state.v_graph, &v_queries, |key| {
            let at = boxes.level(key.level())?;
            at.index_of(key).map(|i| ((key.level(), i), at.occupancy(i) as u64))
        })
        .phase("v_list")?;
        let mut present = Vec::with_capacity(v_replies.len());
        let mut missing = Vec::new();
        for replies in v_replies {
            let (yes, no): (Vec<_>, Vec<_>) = replies.into_iter().partition(|&(_, count)| count > 0);
            present.push(yes.into_iter().map(|(k, _)| k).collect::<Vec<_>>());
            missing.extend(no.into_iter().map(|(k, _)| k));
        }
        absent += missing.len();
        state.ghost_u = GhostExpansions::allocate(state.ops.ncoeffs(), &present, missing);
        state.v_serve = v_serve;
        state.setup_timings.v_list = clock.elapsed().as_secs_f64();

        state.report = SetupReport {
            rank,
            points: state.points.len(),
            roots: roots.len(),
            u_degree: state.u_graph.len(),
            v_degree: state.v_graph.len(),
            u_ghost_leaves: state.ghost_points.nleaves(),
            u_ghost_points: state.ghost_points.npoints(),
            v_ghost_boxes: state.ghost_u.nboxes(),
            absent_ghosts: absent,
        };
        Ok(state)
    }

    /// Send the points and charges of every requested occupied leaf to the U neighbours.
    pub(super) fn exchange_u_data<C: Communicator>(&mut self, comm: &C) -> Result<()> {
        let sends: Vec<Vec<([T; 3], T)>> = self
            .u_serve
            .iter()
            .map(|leaves| {
                leaves
                    .iter()
                    .flat_map(|&i| {
                        let r = self.tree.leaf_range(i);
                        self.points[r.clone()].iter().copied().zip(self.charges[r].iter().copied())
                    })
                    .collect()
            })
            .collect();
        let received = comm.neighbor_alltoallv(&self.u_graph, sends)?;
        self.ghost_points.clear();
        for (n, (data, expect)) in received.iter().zip(&self.u_expect).enumerate() {
            let wanted: usize = expect.iter().map(|&(_, c)| c).sum();
            if data.len() != wanted {
                return Err(FmmError::Transport {
                    collective: crate::transport::CollectiveKind::NeighborAlltoallv,
                    detail: format!(
                        "rank {} expected {wanted} ghost points from rank {}, got {}",
                        self.rank,
                        self.u_graph.neighbors()[n],
                        data.len()
                    ),
                });
            }
            let mut offset = 0;
            for &(key, count) in expect {
                let chunk = &data[offset..offset + count];
                let pts: Vec<[T; 3]> = chunk.iter().map(|r| r.0).collect();
                let qs: Vec<T> = chunk.iter().map(|r| r.1).collect();
                self.ghost_points.insert(key, &pts, &qs);
                offset += count;
            }
        }
        Ok(())
    }
}

/// Global bounding cube and point count from every rank's extremes.
fn global_domain<C: Communicator>(comm: &C, input: &RankInput) -> Result<(BoundingCube, usize)> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (i, p) in input.points.iter().enumerate() {
        if !p.is_finite() {
            return Err(FmmError::NonFinite {
                index: input.first_gid as usize + i,
            });
        }
        for (a, c) in p.to_array().into_iter().enumerate() {
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    let mine = [lo[0], lo[1], lo[2], hi[0], hi[1], hi[2], input.points.len() as f64];
    let all = comm.allgatherv(&mine)?;
    let mut corners = Vec::new();
    let mut total = 0usize;
    for e in &all {
        total += e[6] as usize;
        if e[6] > 0.0 {
            corners.push(Point3::new(e[0], e[1], e[2]));
            corners.push(Point3::new(e[3], e[4], e[5]));
        }
    }
    if total == 0 {
        return Err(FmmError::NoPoints);
    }
    Ok((fit_domain(&corners, DEFAULT_MARGIN)?, total))
}

/// Two neighbourhood exchanges: keys to their owners, then occupancy counts back.
///
/// `lookup` maps a key this rank owns to a local handle and its point count.
/// Returns, per neighbour, the handles of occupied boxes it asked for (in its
/// order) and the counts received for this rank's own queries.
#[allow(clippy::type_complexity)]
fn existence_exchange<C: Communicator, H>(
    comm: &C,
    graph: &CommGraph,
    queries: &BTreeMap<usize, BTreeSet<MortonKey>>,
    lookup: impl Fn(&MortonKey) -> Option<(H, u64)>,
) -> Result<(Vec<Vec<H>>, Vec<Vec<(MortonKey, u64)>>)> {
    let mut sends: Vec<Vec<u64>> = vec![Vec::new(); graph.len()];
    for (owner, keys) in queries {
        let pos = graph.position(*owner).ok_or_else(|| {
            FmmError::InvalidLayout(format!("rank {} needs rank {owner} outside its neighbourhood", comm.rank()))
        })?;
        sends[pos] = keys.iter().map(|k| k.code()).collect();
    }
    let asked = comm.neighbor_alltoallv(graph, sends.clone())?;
    let mut serve = Vec::with_capacity(graph.len());
    let mut replies = Vec::with_capacity(graph.len());
    for (n, codes) in asked.iter().enumerate() {
        let mut handles = Vec::new();
        let mut counts = Vec::with_capacity(codes.len());
        for &code in codes {
            let key = MortonKey::from_code(code)?;
            let (h, count) = lookup(&key).ok_or_else(|| {
                FmmError::InvalidLayout(format!(
                    "rank {} was asked by rank {} for box {key} it does not own",
                    comm.rank(),
                    graph.neighbors()[n]
                ))
            })?;
            if count > 0 {
                handles.push(h);
            }
            counts.push(count);
        }
        serve.push(handles);
        replies.push(counts);
    }
    let answered = comm.neighbor_alltoallv(graph, replies)?;
    let mut results = Vec::with_capacity(graph.len());
    for (codes, counts) in sends.iter().zip(answered) {
        if codes.len() != counts.len() {
            return Err(FmmError::Transport {
                collective: crate::transport::CollectiveKind::NeighborAlltoallv,
                detail: format!("{} replies to {} existence queries", counts.len(), codes.len()),
            });
        }
        results.push(
            codes
                .iter()
                .zip(counts)
                .map(|(&c, n)| Ok((MortonKey::from_code(c)?, n)))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((serve, results))
}
