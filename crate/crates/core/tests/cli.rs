use std::path::Path;
use std::process::{Command, Output};

use pgrad::grid;
use pgrad::harness;

fn pgrad(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgrad"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn constants_table_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = pgrad(
        &["constants", "--p-min", "1.5", "--p-max", "3", "--steps", "4", "--dim", "2", "--regime", "convex", "--space", "lebesgue_q"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "p,C_p,K_p,xi_p,S1,sbar_p,factor,Lambda");
    assert_eq!(lines.len(), 5);
    let p3: Vec<f64> = lines[4].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(p3[0], 3.0);
    assert!((p3[6] - 3f64.powf(2.5)).abs() < 1e-12);
    // The two readings of Lambda differ below p = 2.
    assert!(String::from_utf8(out.stderr).unwrap().contains("p = 1.5"));
}

#[test]
fn constants_rejects_mismatched_space() {
    let dir = tempfile::tempdir().unwrap();
    let out = pgrad(&["constants", "--dim", "2", "--space", "lorentz_N1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_writes_both_grids_and_reads_csv_sources() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["solve", "--dim", "2", "--shape", "box", "--n", "16", "--p", "3", "--eps", "1e-6", "--bc", "dirichlet", "--source", "sine", "--tol", "1e-8"];
    let out = pgrad(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let u = grid::read_grid_csv_path(&dir.path().join("u.csv")).unwrap();
    let g = grid::read_grid_csv_path(&dir.path().join("gradmag.csv")).unwrap();
    assert_eq!(u.shape, vec![16, 16]);
    assert_eq!(u.h, 1.0 / 16.0);
    assert_eq!(g.values.len(), 256);
    let header = std::fs::read_to_string(dir.path().join("u.csv")).unwrap();
    assert!(header.starts_with("# shape: 16,16; h: 0.0625\n"));

    // Feeding the solution back as a source on the same grid.
    let src = dir.path().join("u.csv").to_string_lossy().into_owned();
    let mut again = args.to_vec();
    let slot = again.len() - 3;
    again[slot] = &src;
    let out = pgrad(&again, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut wrong = again.clone();
    wrong[6] = "24";
    assert_eq!(pgrad(&wrong, dir.path()).status.code(), Some(2));
}

#[test]
fn sweep_writes_reports_and_judges_the_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.cfg");
    std::fs::write(
        &cfg,
        "# small sweep\np_list = 1.5, 2, 3\nshape = box\ndim = 2\nbc = dirichlet\nsource = gaussian\n\
         source_width = 0.15\nepsilon = 1e-6\nspace = lebesgue_q\nq = 4\nregime = convex\ngrid_levels = 32, 48\n",
    )
    .unwrap();
    let out = pgrad(&["sweep", "--config", "sweep.cfg", "--out", "reports.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reports = harness::read_csv(&dir.path().join("reports.csv")).unwrap();
    assert_eq!(reports.len(), 6);
    assert!(reports.windows(2).all(|w| w[0].p <= w[1].p));
    assert!(String::from_utf8(out.stderr).unwrap().contains("PASS"));

    std::fs::write(&cfg, "p_list = 3, 2\n").unwrap();
    assert_eq!(pgrad(&["sweep", "--config", "sweep.cfg"], dir.path()).status.code(), Some(2));
}

#[test]
fn check_lemmas_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = pgrad(&["check-lemmas", "--trials", "2000", "--seed", "9"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",PASS")));
    assert!(text.contains("square,2000,0,"));
}
