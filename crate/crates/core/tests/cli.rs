//! The `fmm` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use fmm_core::input::{read_charges, read_points, read_potentials, Precision};

fn fmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmm"))
        .args(args)
        .env_remove("FMM_BACKEND")
        .output()
        .expect("run fmm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn generate_writes_replayable_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pts");
    let b = dir.path().join("b.pts");
    for path in [&a, &b] {
        let o = fmm(&["generate", "--n", "10000", "--seed", "4", "--charges", "--out", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (bits, points) = read_points(&a).unwrap();
    assert_eq!((bits, points.len()), (Precision::F64, 10000));
    let (_, charges) = read_charges(&dir.path().join("a.pts.charges.bin")).unwrap();
    assert!(charges.iter().all(|q| (0.0..1.0).contains(q)));

    let sphere = dir.path().join("s.pts");
    let o = fmm(&["generate", "--dist", "sphere_surface", "--n", "10000", "--out", sphere.to_str().unwrap()]);
    assert!(o.status.success());
    let (_, points) = read_points(&sphere).unwrap();
    assert!(points.iter().all(|p| (p.distance(&fmm_core::geometry::Point3::new(0.0, 0.0, 0.0)) - 1.0).abs() < 1e-12));

    let o = fmm(&["generate", "--n", "0", "--out", dir.path().join("z").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_passes_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = fmm(&["verify", "--n", "2000", "--p", "8", "--order", "6", "--repeats", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("distributed vs reference") && text.contains("reference vs direct sum"));
    assert!(text.contains("imbalance"));
    let (bits, potentials) = read_potentials(&dir.path().join("v.potentials.bin")).unwrap();
    assert_eq!((bits, potentials.len()), (Precision::F64, 2000));
    let (header, rows) = csv_rows(&dir.path().join("v.stats.csv"));
    assert_eq!(rows.len(), 16);
    let calls = column(&header, "neighbor_alltoallv_calls");
    assert!(rows.iter().all(|r| r[calls] == "1"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["backend"], "sim");
    assert_eq!(manifest["runs"][0]["passed"], true);
    assert_eq!(manifest["runs"][0]["splitters"].as_array().unwrap().len(), 7);
}

#[test]
fn verify_reads_generated_files_and_runs_in_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("p.bin");
    let o = fmm(&["generate", "--n", "3000", "--precision", "f32", "--charges", "--out", pts.to_str().unwrap()]);
    assert!(o.status.success());
    let charges = dir.path().join("p.bin.charges.bin");
    let o = fmm(&[
        "verify",
        "--points",
        pts.to_str().unwrap(),
        "--charges",
        charges.to_str().unwrap(),
        "--precision",
        "f32",
        "--order",
        "4",
        "--p",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn corrupted_ghost_buffer_exits_with_the_phase() {
    let o = fmm(&["verify", "--n", "2000", "--p", "8", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("unresolved dependency") && err.contains("downward"), "{err}");
}

#[test]
fn tolerance_failure_exits_one() {
    // No frozen bound exists for order 9, so the direct-sum comparison cannot pass.
    let o = fmm(&["verify", "--n", "600", "--p", "2", "--order", "9", "--local-depth", "1"]);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("verify: FAIL"));
}

#[test]
fn configuration_errors_exit_two() {
    let o = fmm(&["sweep", "--n", "100", "--p", "8,12"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("8^global_depth"));
    let o = fmm(&["verify", "--n", "1000", "--p", "9", "--global-depth", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_fmm"))
        .args(["verify", "--n", "100", "--p", "1"])
        .env("FMM_BACKEND", "mpi")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mpi"));
}

#[test]
fn weak_sweep_keeps_neighbor_degrees_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("weak");
    let o = fmm(&[
        "sweep", "--n", "32768", "--p", "8,64", "--mode", "weak", "--local-depth", "3", "--order", "2", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = csv_rows(&dir.path().join("weak.stats.csv"));
    assert_eq!(rows.len(), 8 + 64);
    let (p, u, v, pts) = (column(&header, "p"), column(&header, "u_degree"), column(&header, "v_degree"), column(&header, "points"));
    for r in &rows {
        assert!(r[u].parse::<usize>().unwrap() <= 26 && r[v].parse::<usize>().unwrap() <= 26);
    }
    for world in ["8", "64"] {
        let total: usize = rows.iter().filter(|r| r[p] == world).map(|r| r[pts].parse::<usize>().unwrap()).sum();
        assert_eq!(total, 32768 * world.parse::<usize>().unwrap());
    }
    let (_, summary) = csv_rows(&dir.path().join("weak.summary.csv"));
    assert_eq!(summary.len(), 2);
}

#[test]
fn strong_sweep_reports_repeat_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("strong");
    let o = fmm(&[
        "sweep", "--n", "65536", "--p", "8,64", "--mode", "strong", "--repeats", "5", "--order", "3", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    println!("{}", stdout(&o));
    let (header, summary) = csv_rows(&dir.path().join("strong.summary.csv"));
    assert_eq!(summary.len(), 2);
    for name in ["computation_std", "neighbor_alltoallv_std", "gatherv_std", "scatterv_std", "setup_total_std"] {
        let c = column(&header, name);
        for row in &summary {
            assert!(row[c].parse::<f64>().unwrap() >= 0.0);
        }
    }
    let repeats = column(&header, "repeats");
    assert!(summary.iter().all(|r| r[repeats] == "5"));
    let (_, timings) = csv_rows(&dir.path().join("strong.timings.csv"));
    assert_eq!(timings.len(), 5 * (8 + 64));
}
