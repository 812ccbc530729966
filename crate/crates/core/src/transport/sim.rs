//! Deterministic in-process transport: one thread per rank, one shared board.
//!
//! A collective is a rendezvous. Each rank deposits its input on the board;
//! the last rank to arrive computes every rank's output and per-rank message
//! and byte counts, then all ranks pick up their share. Outputs depend only on
//! the inputs, never on thread timing.
//!
//! Misuse is reported instead of hanging. A rank that calls a different
//! collective than the one in progress gets `CollectiveMismatch`; ranks still
//! waiting when another rank has returned get `Deadlock`; a failure on one rank
//! turns into `Aborted` on every rank still inside a collective.

use std::any::Any;
use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Instant;

use super::{CollectiveKind, CommGraph, Communicator, TransportStats, Wire};
use crate::error::{FmmError, Result};

type Payload = Box<dyn Any + Send>;

/// What the last arriver hands each rank: its output plus traffic counters.
struct Delivery {
    output: std::result::Result<Payload, String>,
    messages_sent: u64,
    bytes_sent: u64,
    bytes_received: u64,
}

#[derive(Default)]
struct BoardState {
    kind: Option<CollectiveKind>,
    deposits: Vec<Option<Payload>>,
    arrived: usize,
    deliveries: Vec<Option<Delivery>>,
    delivering: bool,
    picked: usize,
    finished: Vec<bool>,
    failed: Option<usize>,
}

struct Board {
    size: usize,
    state: Mutex<BoardState>,
    cv: Condvar,
}

impl Board {
    fn new(size: usize) -> Self {
        Self {
            size,
            state: Mutex::new(BoardState {
                deposits: (0..size).map(|_| None).collect(),
                deliveries: (0..size).map(|_| None).collect(),
                finished: vec![false; size],
                ..Default::default()
            }),
            cv: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, BoardState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn mark_done(&self, rank: usize, ok: bool) {
        let mut st = self.lock();
        st.finished[rank] = true;
        if !ok && st.failed.is_none() {
            st.failed = Some(rank);
        }
        self.cv.notify_all();
    }

    fn abort_check(st: &BoardState, kind: CollectiveKind) -> Result<()> {
        if let Some(failed_rank) = st.failed {
            return Err(FmmError::Aborted { collective: kind, failed_rank });
        }
        Ok(())
    }

    /// Deposit `input`, wait for the others, and take this rank's delivery.
    fn rendezvous(
        &self,
        rank: usize,
        kind: CollectiveKind,
        input: Payload,
        combine: &dyn Fn(Vec<Payload>) -> std::result::Result<Vec<Delivery>, String>,
    ) -> Result<Delivery> {
        let mut st = self.lock();
        // Wait for the previous collective to be fully picked up.
        while st.delivering {
            Self::abort_check(&st, kind)?;
            st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        Self::abort_check(&st, kind)?;
        if let Some(expected) = st.kind {
            if expected != kind {
                st.failed.get_or_insert(rank);
                self.cv.notify_all();
                return Err(FmmError::CollectiveMismatch { rank, expected, got: kind });
            }
        }
        st.kind = Some(kind);
        st.deposits[rank] = Some(input);
        st.arrived += 1;

        if st.arrived == self.size {
            let inputs: Vec<Payload> = st.deposits.iter_mut().map(|d| d.take().expect("every rank deposited")).collect();
            match combine(inputs) {
                Ok(deliveries) => {
                    for (slot, d) in st.deliveries.iter_mut().zip(deliveries) {
                        *slot = Some(d);
                    }
                }
                Err(detail) => {
                    for slot in st.deliveries.iter_mut() {
                        *slot = Some(Delivery {
                            output: Err(detail.clone()),
                            messages_sent: 0,
                            bytes_sent: 0,
                            bytes_received: 0,
                        });
                    }
                }
            }
            st.delivering = true;
            self.cv.notify_all();
        } else {
            while !st.delivering {
                Self::abort_check(&st, kind)?;
                let finished: Vec<usize> = (0..self.size).filter(|&r| st.finished[r] && st.deposits[r].is_none()).collect();
                if !finished.is_empty() {
                    return Err(FmmError::Deadlock { collective: kind, finished });
                }
                st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
            }
        }

        let delivery = st.deliveries[rank].take().expect("delivery present");
        st.picked += 1;
        if st.picked == self.size {
            st.kind = None;
            st.arrived = 0;
            st.picked = 0;
            st.delivering = false;
            self.cv.notify_all();
        }
        Ok(delivery)
    }
}

/// A fixed number of simulated ranks with persistent per-rank statistics.
pub struct SimWorld {
    size: usize,
    stats: Mutex<Vec<TransportStats>>,
}

impl SimWorld {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(FmmError::InvalidConfig("a world needs at least one rank".into()));
        }
        Ok(Self {
            size,
            stats: Mutex::new(vec![TransportStats::default(); size]),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Statistics accumulated by `rank` over every run so far.
    pub fn stats(&self, rank: usize) -> TransportStats {
        self.stats.lock().unwrap_or_else(|e| e.into_inner())[rank].clone()
    }

    pub fn all_stats(&self) -> Vec<TransportStats> {
        self.stats.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Run `f` on every rank concurrently with that rank's `state`.
    ///
    /// Returns one result per rank. A panic on a rank is reported as a
    /// transport error for that rank and aborts the others.
    pub fn run<S, R, F>(&self, states: &mut [S], f: F) -> Vec<Result<R>>
    where
        S: Send,
        R: Send,
        F: Fn(&SimComm<'_>, &mut S) -> Result<R> + Sync,
    {
        assert_eq!(states.len(), self.size, "one state per rank");
        let board = Board::new(self.size);
        let before = self.all_stats();
        let (results, after): (Vec<Result<R>>, Vec<TransportStats>) = std::thread::scope(|scope| {
            let handles: Vec<_> = states
                .iter_mut()
                .enumerate()
                .map(|(rank, state)| {
                    let board = &board;
                    let f = &f;
                    let stats = before[rank].clone();
                    std::thread::Builder::new()
                        .name(format!("rank-{rank}"))
                        .stack_size(8 << 20)
                        .spawn_scoped(scope, move || {
                            let comm = SimComm {
                                rank,
                                board,
                                stats: RefCell::new(stats),
                            };
                            let result = match catch_unwind(AssertUnwindSafe(|| f(&comm, state))) {
                                Ok(r) => r,
                                Err(_) => Err(FmmError::Transport {
                                    collective: CollectiveKind::Allgatherv,
                                    detail: format!("rank {rank} panicked"),
                                }),
                            };
                            // Echoes of another rank's problem do not count as a new failure.
                            let primary_failure = matches!(
                                &result,
                                Err(e) if !matches!(e.root_cause(), FmmError::Aborted { .. } | FmmError::Deadlock { .. })
                            );
                            board.mark_done(rank, !primary_failure);
                            (result, comm.stats.into_inner())
                        })
                        .expect("spawn rank thread")
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("rank thread joined")).unzip()
        });
        *self.stats.lock().unwrap_or_else(|e| e.into_inner()) = after;
        results
    }

    /// Like [`run`](Self::run) but collapses to the first meaningful error.
    ///
    /// Errors that merely echo another rank's failure (`Aborted`, `Deadlock`)
    /// are reported only if nothing more specific happened.
    pub fn run_all<S, R, F>(&self, states: &mut [S], f: F) -> Result<Vec<R>>
    where
        S: Send,
        R: Send,
        F: Fn(&SimComm<'_>, &mut S) -> Result<R> + Sync,
    {
        let results = self.run(states, f);
        let secondary = |e: &FmmError| matches!(e.root_cause(), FmmError::Aborted { .. } | FmmError::Deadlock { .. });
        if results.iter().any(|r| r.is_err()) {
            let mut errors: Vec<FmmError> = results.into_iter().filter_map(|r| r.err()).collect();
            let pos = errors.iter().position(|e| !secondary(e)).unwrap_or(0);
            return Err(errors.swap_remove(pos));
        }
        results.into_iter().collect()
    }
}

/// One rank's handle to the simulated world, valid inside [`SimWorld::run`].
pub struct SimComm<'a> {
    rank: usize,
    board: &'a Board,
    stats: RefCell<TransportStats>,
}

/// One rank's share of a combined collective: output, messages sent, bytes sent, bytes received.
type Routed<O> = (O, u64, u64, u64);

fn bytes<T>(n: usize) -> u64 {
    (n * std::mem::size_of::<T>()) as u64
}

fn downcast<T: 'static>(p: Payload, kind: CollectiveKind) -> std::result::Result<T, String> {
    p.downcast::<T>()
        .map(|b| *b)
        .map_err(|_| format!("ranks passed different payload types to {kind}"))
}

impl SimComm<'_> {
    fn collective<I: Send + 'static, O: Send + 'static>(
        &self,
        kind: CollectiveKind,
        input: I,
        combine: impl Fn(Vec<I>) -> std::result::Result<Vec<Routed<O>>, String>,
    ) -> Result<O> {
        let start = Instant::now();
        let wrapped = |payloads: Vec<Payload>| {
            let inputs = payloads
                .into_iter()
                .map(|p| downcast::<I>(p, kind))
                .collect::<std::result::Result<Vec<I>, String>>()?;
            Ok(combine(inputs)?
                .into_iter()
                .map(|(o, messages_sent, bytes_sent, bytes_received)| Delivery {
                    output: Ok(Box::new(o) as Payload),
                    messages_sent,
                    bytes_sent,
                    bytes_received,
                })
                .collect())
        };
        let result = self.board.rendezvous(self.rank, kind, Box::new(input), &wrapped);
        let mut stats = self.stats.borrow_mut();
        let entry = &mut stats[kind];
        entry.calls += 1;
        entry.wall_time += start.elapsed().as_secs_f64();
        let delivery = result?;
        entry.messages_sent += delivery.messages_sent;
        entry.bytes_sent += delivery.bytes_sent;
        entry.bytes_received += delivery.bytes_received;
        let output = delivery
            .output
            .map_err(|detail| FmmError::Transport { collective: kind, detail })?;
        Ok(*output.downcast::<O>().expect("output type matches input type"))
    }

    fn check_root(&self, root: usize, kind: CollectiveKind) -> Result<()> {
        if root >= self.board.size {
            return Err(FmmError::Transport {
                collective: kind,
                detail: format!("root {root} out of range for {} ranks", self.board.size),
            });
        }
        Ok(())
    }
}

impl Communicator for SimComm<'_> {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.board.size
    }

    fn allgatherv<T: Wire>(&self, send: &[T]) -> Result<Vec<Vec<T>>> {
        self.collective(CollectiveKind::Allgatherv, send.to_vec(), |inputs: Vec<Vec<T>>| {
            let p = inputs.len();
            let total: usize = inputs.iter().map(Vec::len).sum();
            Ok((0..p)
                .map(|r| {
                    let own = inputs[r].len();
                    let messages = if own > 0 { (p - 1) as u64 } else { 0 };
                    (inputs.clone(), messages, bytes::<T>(own) * (p as u64 - 1), bytes::<T>(total - own))
                })
                .collect())
        })
    }

    fn alltoallv<T: Wire>(&self, sends: Vec<Vec<T>>) -> Result<Vec<Vec<T>>> {
        let kind = CollectiveKind::Alltoallv;
        if sends.len() != self.size() {
            return Err(FmmError::Transport {
                collective: kind,
                detail: format!("rank {} supplied {} buffers for {} ranks", self.rank, sends.len(), self.size()),
            });
        }
        self.collective(kind, sends, |mut inputs: Vec<Vec<Vec<T>>>| {
            let p = inputs.len();
            let mut counters = vec![(0u64, 0u64, 0u64); p];
            let mut outputs: Vec<Vec<Vec<T>>> = (0..p).map(|_| Vec::with_capacity(p)).collect();
            for (src, row) in inputs.iter_mut().enumerate() {
                for (dst, buf) in row.drain(..).enumerate() {
                    if src != dst && !buf.is_empty() {
                        counters[src].0 += 1;
                        counters[src].1 += bytes::<T>(buf.len());
                        counters[dst].2 += bytes::<T>(buf.len());
                    }
                    outputs[dst].push(buf);
                }
            }
            Ok(outputs.into_iter().zip(counters).map(|(o, (m, s, r))| (o, m, s, r)).collect())
        })
    }

    fn gatherv<T: Wire>(&self, root: usize, send: &[T]) -> Result<Option<Vec<Vec<T>>>> {
        let kind = CollectiveKind::Gatherv;
        self.check_root(root, kind)?;
        self.collective(kind, (root, send.to_vec()), |inputs: Vec<(usize, Vec<T>)>| {
            if inputs.iter().any(|(r, _)| *r != root) {
                return Err("ranks disagree on the gather root".to_string());
            }
            let p = inputs.len();
            let mut out: Vec<Routed<Option<Vec<Vec<T>>>>> = (0..p).map(|_| (None, 0, 0, 0)).collect();
            let mut gathered = Vec::with_capacity(p);
            let mut received = 0;
            for (src, (_, buf)) in inputs.into_iter().enumerate() {
                if src != root && !buf.is_empty() {
                    out[src].1 = 1;
                    out[src].2 = bytes::<T>(buf.len());
                    received += bytes::<T>(buf.len());
                }
                gathered.push(buf);
            }
            out[root].0 = Some(gathered);
            out[root].3 = received;
            Ok(out)
        })
    }

    fn scatterv<T: Wire>(&self, root: usize, segments: Option<Vec<Vec<T>>>) -> Result<Vec<T>> {
        let kind = CollectiveKind::Scatterv;
        self.check_root(root, kind)?;
        if self.rank == root && segments.as_ref().map(Vec::len) != Some(self.size()) {
            return Err(FmmError::Transport {
                collective: kind,
                detail: format!("root must supply exactly {} segments", self.size()),
            });
        }
        let mine = if self.rank == root { segments } else { None };
        self.collective(kind, (root, mine), |mut inputs: Vec<(usize, Option<Vec<Vec<T>>>)>| {
            if inputs.iter().any(|(r, _)| *r != root) {
                return Err("ranks disagree on the scatter root".to_string());
            }
            let p = inputs.len();
            let segments = inputs[root].1.take().ok_or("root supplied no segments")?;
            let mut sent = (0u64, 0u64);
            let mut out: Vec<Routed<Vec<T>>> = segments
                .into_iter()
                .enumerate()
                .map(|(dst, seg)| {
                    let mut received = 0;
                    if dst != root && !seg.is_empty() {
                        sent.0 += 1;
                        sent.1 += bytes::<T>(seg.len());
                        received = bytes::<T>(seg.len());
                    }
                    (seg, 0, 0, received)
                })
                .collect();
            debug_assert_eq!(out.len(), p);
            out[root].1 = sent.0;
            out[root].2 = sent.1;
            Ok(out)
        })
    }

    fn neighbor_alltoallv<T: Wire>(&self, graph: &CommGraph, sends: Vec<Vec<T>>) -> Result<Vec<Vec<T>>> {
        let kind = CollectiveKind::NeighborAlltoallv;
        if sends.len() != graph.len() {
            return Err(FmmError::Transport {
                collective: kind,
                detail: format!("rank {} supplied {} buffers for {} neighbours", self.rank, sends.len(), graph.len()),
            });
        }
        let input = (graph.neighbors().to_vec(), sends);
        self.collective(kind, input, |mut inputs: Vec<(Vec<usize>, Vec<Vec<T>>)>| {
            let p = inputs.len();
            for (r, (neighbors, _)) in inputs.iter().enumerate() {
                for &n in neighbors {
                    if n >= p || n == r {
                        return Err(format!("rank {r} lists invalid neighbour {n}"));
                    }
                    if inputs[n].0.binary_search(&r).is_err() {
                        return Err(format!("neighbour graph is not symmetric: {r} lists {n} but not the reverse"));
                    }
                }
            }
            let mut out: Vec<Routed<Vec<Vec<T>>>> = inputs
                .iter()
                .map(|(neighbors, _)| ((0..neighbors.len()).map(|_| Vec::new()).collect(), 0, 0, 0))
                .collect();
            let graphs: Vec<Vec<usize>> = inputs.iter().map(|(n, _)| n.clone()).collect();
            for (src, (neighbors, bufs)) in inputs.iter_mut().enumerate() {
                for (&dst, buf) in neighbors.iter().zip(std::mem::take(bufs)) {
                    if !buf.is_empty() {
                        out[src].1 += 1;
                        out[src].2 += bytes::<T>(buf.len());
                        out[dst].3 += bytes::<T>(buf.len());
                    }
                    let pos = graphs[dst].binary_search(&src).expect("checked symmetric");
                    out[dst].0[pos] = buf;
                }
            }
            Ok(out)
        })
    }

    fn stats(&self) -> TransportStats {
        self.stats.borrow().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(p: usize) -> SimWorld {
        SimWorld::new(p).unwrap()
    }

    #[test]
    fn allgatherv_collects_everything() {
        let w = world(4);
        let mut states = vec![(); 4];
        let out = w
            .run_all(&mut states, |c, _| c.allgatherv(&vec![c.rank() as u32; c.rank()]))
            .unwrap();
        for r in out {
            assert_eq!(r, vec![vec![], vec![1], vec![2, 2], vec![3, 3, 3]]);
        }
        let s = w.stats(2)[CollectiveKind::Allgatherv];
        assert_eq!(s.calls, 1);
        assert_eq!(s.messages_sent, 3);
        assert_eq!(s.bytes_sent, 8 * 3);
        assert_eq!(s.bytes_received, 4 * 4);
        assert_eq!(w.stats(0)[CollectiveKind::Allgatherv].messages_sent, 0);
    }

    #[test]
    fn alltoallv_routes_and_counts() {
        let w = world(3);
        let mut states = vec![(); 3];
        let out = w
            .run_all(&mut states, |c, _| {
                let sends = (0..3).map(|d| vec![(c.rank() * 10 + d) as u64; d]).collect();
                c.alltoallv(sends)
            })
            .unwrap();
        for (dst, recv) in out.iter().enumerate() {
            for (src, buf) in recv.iter().enumerate() {
                assert_eq!(buf, &vec![(src * 10 + dst) as u64; dst]);
            }
        }
        let s = w.stats(0)[CollectiveKind::Alltoallv];
        // rank 0 sends nothing to itself, 8 bytes to rank 1 and 16 to rank 2
        assert_eq!((s.messages_sent, s.bytes_sent), (2, 24));
        let s = w.stats(2)[CollectiveKind::Alltoallv];
        assert_eq!((s.messages_sent, s.bytes_sent, s.bytes_received), (1, 8, 32));
    }

    #[test]
    fn gather_then_scatter_round_trip() {
        let w = world(5);
        let mut states = vec![(); 5];
        let out = w
            .run_all(&mut states, |c, _| {
                let g = c.gatherv(0, &[c.rank() as f64; 2])?;
                let segments = g.map(|segs| segs.into_iter().map(|s| s.iter().map(|x| x * 2.0).collect()).collect());
                c.scatterv(0, segments)
            })
            .unwrap();
        for (r, v) in out.iter().enumerate() {
            assert_eq!(v, &vec![2.0 * r as f64; 2]);
        }
        let root = w.stats(0);
        assert_eq!(root[CollectiveKind::Gatherv].bytes_received, 4 * 16);
        assert_eq!(root[CollectiveKind::Gatherv].messages_sent, 0);
        assert_eq!(root[CollectiveKind::Scatterv].messages_sent, 4);
        assert_eq!(w.stats(3)[CollectiveKind::Gatherv].messages_sent, 1);
        assert_eq!(w.stats(3)[CollectiveKind::Scatterv].bytes_received, 16);
    }

    #[test]
    fn neighbor_exchange_on_ring() {
        let p = 6;
        let w = world(p);
        let mut states = vec![(); p];
        let out = w
            .run_all(&mut states, |c, _| {
                let r = c.rank();
                let g = CommGraph::new(r, [(r + 1) % p, (r + p - 1) % p]);
                let sends = g.neighbors().iter().map(|&n| vec![(r, n)]).collect();
                let recv = c.neighbor_alltoallv(&g, sends)?;
                Ok((g, recv))
            })
            .unwrap();
        for (r, (g, recv)) in out.into_iter().enumerate() {
            for (i, &n) in g.neighbors().iter().enumerate() {
                assert_eq!(recv[i], vec![(n, r)]);
            }
        }
        assert_eq!(w.stats(0)[CollectiveKind::NeighborAlltoallv].messages_sent, 2);
    }

    #[test]
    fn asymmetric_graph_rejected() {
        let w = world(3);
        let mut states = vec![(); 3];
        let err = w
            .run_all(&mut states, |c, _| {
                let g = if c.rank() == 0 { CommGraph::new(0, [1]) } else { CommGraph::new(c.rank(), []) };
                let n = g.len();
                c.neighbor_alltoallv(&g, vec![vec![1u8]; n])
            })
            .unwrap_err();
        assert!(matches!(err, FmmError::Transport { collective: CollectiveKind::NeighborAlltoallv, .. }), "{err}");
    }

    #[test]
    fn mismatched_collectives_detected() {
        let w = world(2);
        let mut states = vec![(); 2];
        let results = w.run(&mut states, |c, _| {
            if c.rank() == 0 {
                c.allgatherv(&[1u8]).map(|_| ())
            } else {
                std::thread::sleep(std::time::Duration::from_millis(20));
                c.gatherv(0, &[1u8]).map(|_| ())
            }
        });
        assert!(results.iter().any(|r| matches!(r, Err(FmmError::CollectiveMismatch { .. }))));
        assert!(results.iter().all(|r| r.is_err()));
    }

    #[test]
    fn missing_participant_is_a_deadlock() {
        let w = world(3);
        let mut states = vec![(); 3];
        let results = w.run(&mut states, |c, _| if c.rank() == 1 { Ok(()) } else { c.allgatherv(&[0u8]).map(|_| ()) });
        assert!(results[1].is_ok());
        for r in [0, 2] {
            match &results[r] {
                Err(FmmError::Deadlock { finished, collective }) => {
                    assert_eq!(finished, &vec![1]);
                    assert_eq!(*collective, CollectiveKind::Allgatherv);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn failure_aborts_others() {
        let w = world(3);
        let mut states = vec![(); 3];
        let err = w
            .run_all(&mut states, |c, _| {
                if c.rank() == 2 {
                    return Err(FmmError::InvalidConfig("boom".into()));
                }
                c.allgatherv(&[0u8]).map(|_| ())
            })
            .unwrap_err();
        assert!(matches!(err, FmmError::InvalidConfig(_)));
    }

    #[test]
    fn repeated_collectives_and_stats_deltas() {
        let w = world(4);
        let mut states = vec![0u64; 4];
        w.run_all(&mut states, |c, s| {
            for i in 0..50u64 {
                let all = c.allgatherv(&[i + c.rank() as u64])?;
                *s += all.iter().map(|v| v[0]).sum::<u64>();
            }
            Ok(())
        })
        .unwrap();
        let expected: u64 = (0..50u64).map(|i| 4 * i + 6).sum();
        assert!(states.iter().all(|&s| s == expected));
        let first = w.stats(1);
        w.run_all(&mut states, |c, _| c.allgatherv(&[0u64]).map(|_| ())).unwrap();
        let delta = w.stats(1).since(&first);
        assert_eq!(delta[CollectiveKind::Allgatherv].calls, 1);
        assert_eq!(first[CollectiveKind::Allgatherv].calls, 50);
    }

    #[test]
    fn single_rank_world_sends_nothing() {
        let w = world(1);
        let mut states = vec![()];
        let out = w.run_all(&mut states, |c, _| c.alltoallv(vec![vec![1u32, 2]])).unwrap();
        assert_eq!(out[0], vec![vec![1, 2]]);
        assert_eq!(w.stats(0).total_bytes_sent(), 0);
    }
}
