//! Acceptance run: one PASS or FAIL line per criterion, nonzero exit on any failure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Instant;

use fmm_core::accuracy::frozen_epsilon;
use fmm_core::cli::{self, RunOptions, SweepMode};
use fmm_core::distributed::{global_message_size, DistributedSolver, FmmConfig};
use fmm_core::geometry::{fit_domain, BoundingCube, Point3, DEFAULT_MARGIN};
use fmm_core::input::{generate_charges, generate_points, Distribution, Precision};
use fmm_core::kernels::direct_sum;
use fmm_core::morton::{encode, MortonKey};
use fmm_core::operators::{ncoeffs, OperatorSet};
use fmm_core::partition::{bucket_of, redistribute, sample_splitters, samplesort, Particle, SortKey};
use fmm_core::reference::{relative_l2, ReferenceFmm};
use fmm_core::transport::{CollectiveKind, Communicator, SimWorld};
use fmm_core::tree::{v_transfer_vectors, InteractionLists, UniformTree};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn config(global_depth: u32, local_depth: u32, order: usize) -> FmmConfig {
    FmmConfig {
        global_depth,
        local_depth,
        order,
        samples_per_rank: 64,
        seed: 0,
        overlap_near_field: true,
    }
}

fn uniform(n: usize, seed: u64) -> (Vec<Point3>, Vec<f64>) {
    (
        generate_points(Distribution::UniformCube, n, seed, Precision::F64).unwrap(),
        generate_charges(n, seed),
    )
}

fn oracle_correctness() -> Outcome {
    let start = Instant::now();
    let mut opts = RunOptions::new(Distribution::UniformCube, 4096);
    opts.global_depth = Some(1);
    opts.local_depth = 2;
    opts.order = 6;
    let report = cli::verify(&opts, 8).map_err(err)?;
    let elapsed = start.elapsed().as_secs_f64();
    let r = &report.cases[0].record;
    let eref = r.error_vs_reference.ok_or("no reference error")?;
    let edir = r.error_vs_direct.ok_or("no direct-sum error")?;
    let eps = frozen_epsilon(6, 64).ok_or("no frozen epsilon")?;
    ensure(eref <= 1e-10, || format!("distributed vs reference {eref:.3e} > 1e-10"))?;
    ensure(edir <= eps, || format!("reference vs direct {edir:.3e} > {eps:.1e}"))?;
    ensure(report.passed, || "verify reported failure".into())?;
    ensure(elapsed < 30.0, || format!("took {elapsed:.1}s"))?;
    Ok(format!("dist-vs-ref {eref:.2e}, ref-vs-direct {edir:.3e} <= {eps:.1e}, {elapsed:.2}s"))
}

fn convergence() -> Outcome {
    let start = Instant::now();
    let (points, charges) = uniform(2000, 7);
    let arr: Vec<[f64; 3]> = points.iter().map(|p| p.to_array()).collect();
    let exact = direct_sum(&arr, &arr, &charges).map_err(err)?;
    let mut errors = Vec::new();
    for order in [2, 4, 6, 8] {
        let ops = Arc::new(OperatorSet::<f64>::new(order).map_err(err)?);
        let mut fmm = ReferenceFmm::new(&points, &charges, 3, ops).map_err(err)?;
        errors.push((order, relative_l2(&fmm.evaluate().map_err(err)?, &exact)));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let text: Vec<String> = errors.iter().map(|(o, e)| format!("{o}:{e:.2e}")).collect();
    ensure(errors.windows(2).all(|w| w[1].1 < w[0].1), || format!("not strictly decreasing: {}", text.join(" ")))?;
    ensure(elapsed < 60.0, || format!("took {elapsed:.1}s"))?;
    Ok(format!("{} ({elapsed:.2}s)", text.join(" ")))
}

fn expansion_length() -> Outcome {
    let lengths: Vec<usize> = [2, 3, 6].iter().map(|&o| ncoeffs(o)).collect();
    ensure(lengths == [8, 26, 152], || format!("lengths {lengths:?}"))?;
    let formula = global_message_size(1, 3, 32);
    ensure(formula == 104, || format!("formula gives {formula} bytes"))?;
    // The bytes actually handed to gatherv by each one-root rank.
    let (points, charges) = uniform(4096, 1);
    let mut solver = DistributedSolver::<f32>::new(&points, &charges, 8, config(1, 2, 3)).map_err(err)?;
    let eval = solver.evaluate().map_err(err)?;
    for (r, out) in eval.ranks.iter().enumerate() {
        ensure(out.gather_payload_bytes == 104, || format!("rank {r} payload {} bytes", out.gather_payload_bytes))?;
        if r != 0 {
            let sent = out.stats[CollectiveKind::Gatherv].bytes_sent;
            ensure(sent == 104, || format!("rank {r} sent {sent} bytes to gatherv"))?;
        }
    }
    Ok("n_e = 8, 26, 152; gatherv payload 104 bytes on every rank".into())
}

/// Per-axis position of root `index` among `n` roots per axis: 0 low face, 1 interior, 2 high face.
fn boundary_signature(rank: usize, global_depth: u32) -> [u8; 3] {
    let n = 1u32 << global_depth;
    MortonKey::from_morton_index(rank as u64, global_depth)
        .index()
        .map(|c| if c == 0 { 0 } else if c == n - 1 { 2 } else { 1 })
}

fn neighbor_bound() -> Outcome {
    let mut parts = Vec::new();
    for (p, gd) in [(8usize, 1u32), (64, 2), (512, 3)] {
        let start = Instant::now();
        let (points, charges) = uniform(512 * p, 3);
        let solver = DistributedSolver::<f64>::new(&points, &charges, p, config(gd, 2, 2)).map_err(err)?;
        let elapsed = start.elapsed().as_secs_f64();
        let mut interior = 0;
        for rank in solver.ranks() {
            let (u, v) = (rank.u_graph().len(), rank.v_graph().len());
            ensure(u <= 26 && v <= 26, || format!("P={p} rank {} degrees U {u} V {v}", rank.rank()))?;
            if boundary_signature(rank.rank(), gd) == [1, 1, 1] {
                interior += 1;
                ensure(u == 26 && v == 26, || format!("P={p} interior rank {} degrees U {u} V {v}", rank.rank()))?;
            }
        }
        if p == 512 {
            ensure(interior == 216, || format!("{interior} interior ranks at P=512"))?;
            ensure(elapsed < 120.0, || format!("P=512 setup took {elapsed:.1}s"))?;
        }
        let max_u = solver.ranks().iter().map(|r| r.u_graph().len()).max().unwrap();
        let max_v = solver.ranks().iter().map(|r| r.v_graph().len()).max().unwrap();
        parts.push(format!("P={p}: max U {max_u} V {max_v}, {interior} interior at 26 ({elapsed:.2}s)"));
    }
    Ok(parts.join("; "))
}

fn collective_schedule() -> Outcome {
    let mut checked = 0;
    let cases: Vec<(Distribution, usize, usize, FmmConfig)> = vec![
        (Distribution::UniformCube, 4096, 8, config(1, 2, 4)),
        (Distribution::UniformCube, 4096, 3, config(1, 2, 3)),
        (Distribution::SphereSurface, 4096, 8, config(1, 3, 3)),
        (Distribution::UniformCube, 8192, 64, config(2, 1, 2)),
        (Distribution::UniformCube, 500, 1, config(1, 2, 3)),
    ];
    for (dist, n, p, cfg) in cases {
        let points = generate_points(dist, n, 5, Precision::F64).map_err(err)?;
        let charges = generate_charges(n, 5);
        let mut solver = DistributedSolver::<f64>::new(&points, &charges, p, cfg).map_err(err)?;
        for _ in 0..2 {
            let eval = solver.evaluate().map_err(err)?;
            for (r, out) in eval.ranks.iter().enumerate() {
                let calls: Vec<u64> = CollectiveKind::ALL.iter().map(|&k| out.stats[k].calls).collect();
                let s = &out.stats;
                ensure(
                    s[CollectiveKind::NeighborAlltoallv].calls == 1
                        && s[CollectiveKind::Gatherv].calls == 1
                        && s[CollectiveKind::Scatterv].calls == 1
                        && s.total_calls() == 3,
                    || format!("{dist:?} P={p} rank {r} calls {calls:?}"),
                )?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} rank evaluations with exactly 1 neighbor_alltoallv, 1 gatherv, 1 scatterv"))
}

fn surface_scaling() -> Outcome {
    let mut opts = RunOptions::new(Distribution::UniformCube, 2048);
    opts.local_depth = 2;
    opts.order = 2;
    let report = cli::sweep(&opts, &[8, 64, 512], SweepMode::Weak).map_err(err)?;
    // signature -> P -> distinct V ghost counts
    let mut counts: BTreeMap<[u8; 3], BTreeMap<usize, BTreeSet<usize>>> = BTreeMap::new();
    for case in &report.cases {
        let gd = case.record.global_depth;
        for row in &case.stats {
            counts
                .entry(boundary_signature(row.rank, gd))
                .or_default()
                .entry(row.p)
                .or_default()
                .insert(row.v_ghost_boxes);
        }
    }
    let mut compared = 0;
    for (sig, by_p) in &counts {
        let all: BTreeSet<usize> = by_p.values().flatten().copied().collect();
        ensure(all.len() == 1, || format!("boundary type {sig:?} has V ghost counts {by_p:?}"))?;
        if by_p.len() > 1 {
            compared += 1;
        }
    }
    let interior = counts.get(&[1, 1, 1]).ok_or("no interior ranks")?;
    ensure(interior.len() == 2, || "interior ranks missing at P=64 or P=512".into())?;
    let corner = counts.get(&[0, 0, 0]).ok_or("no corner ranks")?;
    ensure(corner.len() == 3, || "corner ranks missing".into())?;
    let value = |m: &BTreeMap<usize, BTreeSet<usize>>| *m.values().next().unwrap().iter().next().unwrap();
    Ok(format!(
        "interior V ghosts {} at P=64 and 512, corner {} at P=8/64/512, {compared} boundary types compared across P",
        value(interior),
        value(corner)
    ))
}

fn particles(points: &[Point3], cube: &BoundingCube, depth: u32, first: usize) -> Vec<Particle<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| Particle {
            key: encode(p, depth, cube).unwrap(),
            gid: (first + i) as u64,
            pos: p.to_array(),
            charge: 1.0,
        })
        .collect()
}

fn blocks(points: &[Point3], cube: &BoundingCube, depth: u32, p: usize) -> Vec<Vec<Particle<f64>>> {
    (0..p)
        .map(|r| {
            let range = r * points.len() / p..(r + 1) * points.len() / p;
            particles(&points[range.clone()], cube, depth, range.start)
        })
        .collect()
}

fn key_of(q: &Particle<f64>) -> SortKey {
    (q.key.morton_index(), q.gid)
}

fn check_global_order(parts: &[Vec<Particle<f64>>], n: usize) -> Result<(), String> {
    let total: usize = parts.iter().map(Vec::len).sum();
    ensure(total == n, || format!("{total} particles after redistribution, expected {n}"))?;
    let flat: Vec<SortKey> = parts.iter().flatten().map(key_of).collect();
    ensure(flat.windows(2).all(|w| w[0] < w[1]), || "global key order violated".into())
}

fn sort_invariants() -> Outcome {
    let depth = 10;
    let points = generate_points(Distribution::UniformCube, 100_000, 11, Precision::F64).map_err(err)?;
    let cube = fit_domain(&points, DEFAULT_MARGIN).map_err(err)?;
    for p in [2usize, 4, 8] {
        let world = SimWorld::new(p).map_err(err)?;
        let mut states = blocks(&points, &cube, depth, p);
        let raw = world
            .run_all(&mut states, |comm, mine| {
                let splitters = sample_splitters(comm, mine, 64, 1)?;
                redistribute(comm, std::mem::take(mine), &splitters)
            })
            .map_err(err)?;
        check_global_order(&raw, points.len()).map_err(|e| format!("raw splitters P={p}: {e}"))?;
        let mut states = blocks(&points, &cube, depth, p);
        let snapped = world
            .run_all(&mut states, |comm, mine| Ok(samplesort(comm, std::mem::take(mine), 64, 1, depth, 1)?.particles))
            .map_err(err)?;
        check_global_order(&snapped, points.len()).map_err(|e| format!("root-snapped P={p}: {e}"))?;
    }

    let (p, n, b) = (8usize, 800_000usize, 200usize);
    let points = generate_points(Distribution::UniformCube, n, 12, Precision::F64).map_err(err)?;
    let cube = fit_domain(&points, DEFAULT_MARGIN).map_err(err)?;
    let world = SimWorld::new(p).map_err(err)?;
    let mut worst: f64 = 0.0;
    for trial in 0..20u64 {
        let mut states = blocks(&points, &cube, depth, p);
        let histograms = world
            .run_all(&mut states, |comm, mine| {
                let splitters = sample_splitters(comm, mine, b, trial)?;
                let mut counts = vec![0usize; comm.size()];
                for q in mine.iter() {
                    counts[bucket_of(&splitters, key_of(q))] += 1;
                }
                Ok(counts)
            })
            .map_err(err)?;
        let largest = (0..p).map(|k| histograms.iter().map(|h| h[k]).sum::<usize>()).max().unwrap();
        worst = worst.max(largest as f64 / (n / p) as f64);
    }
    ensure(worst <= 1.3, || format!("max bucket {worst:.3}x ideal"))?;
    Ok(format!("order kept for P=2,4,8 on 1e5 points; worst bucket {worst:.3}x ideal over 20 trials (b={b}, P={p}, N=8e5)"))
}

fn list_cardinalities() -> Outcome {
    let depth = 3;
    let n = 1usize << depth;
    let side = 1.0 / n as f64;
    let mut points = Vec::new();
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                points.push(Point3::new((x as f64 + 0.5) * side, (y as f64 + 0.5) * side, (z as f64 + 0.5) * side));
            }
        }
    }
    let cube = BoundingCube::unit();
    points.sort_by_key(|p| encode(p, depth, &cube).unwrap());
    let tree = UniformTree::full(&points, cube, depth).map_err(err)?;
    let lists = InteractionLists::new(tree.boxes());
    let lattice = |level: u32| -> Vec<MortonKey> {
        let m = 1u32 << level;
        let mut keys = Vec::new();
        for x in 0..m {
            for y in 0..m {
                for z in 0..m {
                    keys.push(MortonKey::from_index([x, y, z], level).unwrap());
                }
            }
        }
        keys
    };
    let chebyshev = |a: [u32; 3], b: [u32; 3]| (0..3).map(|i| (a[i] as i64 - b[i] as i64).abs()).max().unwrap();
    let interior = |k: MortonKey, lo: u32, hi: u32| k.index().iter().all(|&c| c >= lo && c <= hi);

    // U lists of leaves against every leaf within Chebyshev distance one.
    let leaves = tree.leaves();
    let all_leaves = lattice(depth);
    let mut interior_u = BTreeSet::new();
    for (i, &key) in leaves.keys().iter().enumerate() {
        let expected: BTreeSet<MortonKey> =
            all_leaves.iter().copied().filter(|&o| chebyshev(o.index(), key.index()) <= 1).collect();
        let got: BTreeSet<MortonKey> = lists.u_list(i).iter().copied().collect();
        ensure(got == expected, || format!("U list of {key:?} differs from the lattice"))?;
        if interior(key, 1, n as u32 - 2) {
            interior_u.insert(got.len());
        }
    }
    ensure(interior_u == BTreeSet::from([27]), || format!("interior |U| values {interior_u:?}"))?;

    // V lists: children of the parent's neighbours that are not adjacent.
    let mut interior_v = BTreeSet::new();
    let mut vectors = BTreeSet::new();
    for level in 2..=depth {
        let boxes = tree.boxes().level(level).unwrap();
        let all = lattice(level);
        let m = 1u32 << level;
        for (i, &key) in boxes.keys().iter().enumerate() {
            let parent = key.parent().unwrap();
            let expected: BTreeSet<MortonKey> = all
                .iter()
                .copied()
                .filter(|&o| chebyshev(o.parent().unwrap().index(), parent.index()) <= 1 && chebyshev(o.index(), key.index()) > 1)
                .collect();
            let got: BTreeSet<MortonKey> = lists.v_list(level, i).iter().copied().collect();
            ensure(got == expected, || format!("V list of {key:?} differs from the lattice"))?;
            if interior(parent, 1, m / 2 - 2) {
                interior_v.insert(got.len());
            }
            for s in got {
                let (a, b) = (s.index(), key.index());
                vectors.insert([0, 1, 2].map(|d| a[d] as i32 - b[d] as i32));
            }
        }
    }
    ensure(interior_v == BTreeSet::from([189]), || format!("interior |V| values {interior_v:?}"))?;
    let table: BTreeSet<[i32; 3]> = v_transfer_vectors().iter().copied().collect();
    ensure(vectors.len() == 316 && vectors == table, || format!("{} distinct transfer vectors", vectors.len()))?;
    Ok("interior |U| = 27, interior |V| = 189, 316 distinct transfer vectors, all lists equal to lattice enumeration".into())
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?];
    let mut outputs = Vec::new();
    for dir in &dirs {
        let mut opts = RunOptions::new(Distribution::UniformCube, 5000);
        opts.order = 5;
        opts.repeats = 2;
        opts.input.seed = 3;
        opts.out = Some(dir.path().join("run"));
        cli::verify(&opts, 8).map_err(err)?;
        let read = |suffix: &str| std::fs::read(cli::with_suffix(&dir.path().join("run"), suffix)).map_err(err);
        outputs.push([read("potentials.bin")?, read("stats.csv")?, read("manifest.json")?]);
    }
    let names = ["potentials", "stats CSV", "manifest"];
    for (i, name) in names.iter().enumerate() {
        ensure(outputs[0][i] == outputs[1][i], || format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "potentials ({} bytes), stats CSV ({} bytes) and manifest ({} bytes) byte-identical",
        outputs[0][0].len(),
        outputs[0][1].len(),
        outputs[0][2].len()
    ))
}

fn non_uniform() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut opts = RunOptions::new(Distribution::SphereSurface, 32768);
    opts.global_depth = Some(1);
    opts.local_depth = 2;
    opts.order = 6;
    opts.out = Some(dir.path().join("sphere"));
    let report = cli::verify(&opts, 8).map_err(err)?;
    let r = &report.cases[0].record;
    ensure(report.passed, || {
        format!("verify failed: dist-vs-ref {:?}, ref-vs-direct {:?}", r.error_vs_reference, r.error_vs_direct)
    })?;
    let csv = std::fs::read_to_string(cli::with_suffix(&dir.path().join("sphere"), "stats.csv")).map_err(err)?;
    let mut rows = csv.lines();
    let header: Vec<&str> = rows.next().ok_or("empty stats")?.split(',').collect();
    let col = header.iter().position(|h| *h == "points").ok_or("no points column")?;
    let per_rank: HashMap<usize, usize> = rows
        .enumerate()
        .map(|(i, l)| (i, l.split(',').nth(col).unwrap().parse().unwrap()))
        .collect();
    ensure(per_rank.len() == 8, || format!("{} stats rows", per_rank.len()))?;
    Ok(format!(
        "dist-vs-ref {:.2e}, ref-vs-direct {:.3e}; points per rank {:?}, imbalance {:.3} (reported)",
        r.error_vs_reference.unwrap(),
        r.error_vs_direct.unwrap(),
        r.points_per_rank,
        r.point_imbalance
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle correctness", oracle_correctness),
        ("convergence in expansion order", convergence),
        ("expansion length and gatherv payload", expansion_length),
        ("neighbor degree bound", neighbor_bound),
        ("runtime collective schedule", collective_schedule),
        ("surface scaling of V ghosts", surface_scaling),
        ("sort invariants", sort_invariants),
        ("interaction-list cardinalities", list_cardinalities),
        ("determinism", determinism),
        ("non-uniform tolerance", non_uniform),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
