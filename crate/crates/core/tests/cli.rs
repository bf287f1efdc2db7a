use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_cycle-slip");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn cycle_slip(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &TempDir, body: &str) -> PathBuf {
    let path = dir.path().join("system.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn certify_reports_the_published_bound() {
    let cfg = fixture("pll_beta_0_90.toml");
    let out = cycle_slip(&["certify", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let report = text(&out.stdout);
    assert!(report.contains("r0 = 1"), "{report}");

    let out = cycle_slip(&["certify", cfg.to_str().unwrap(), "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["k"], 2);
    assert_eq!(v["theorem"], "T3");
}

#[test]
fn certify_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(
        &dir,
        "[pll]\nt_filter = 0.1\ns = 0.4\nbeta = 1.5\nh0 = 1.0\n",
    );
    let out = cycle_slip(&["certify", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("line 4"), "{}", text(&out.stderr));

    let cfg = fixture("pll_beta_0_95.toml");
    let out = cycle_slip(&["certify", cfg.to_str().unwrap(), "--k-cap", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stdout).contains("no certificate"));

    let out = cycle_slip(&["certify", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let out = cycle_slip(&["certify", cfg.to_str().unwrap(), "--theorem", "t7"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn certify_writes_the_report_file() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture("pll_beta_0_92.toml");
    let path = dir.path().join("reports/nested/beta92.txt");
    let out = cycle_slip(&["certify", cfg.to_str().unwrap(), "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let saved = std::fs::read_to_string(&path).unwrap();
    assert_eq!(saved, text(&out.stdout));
    assert!(saved.contains("r0 = 2"));
}

#[test]
fn simulate_locked_start_and_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture("pll_beta_0_90.toml");
    let csv = dir.path().join("runs/one/traj.csv");
    let out = cycle_slip(&[
        "simulate",
        cfg.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let line = text(&out.stdout);
    assert!(line.starts_with("slips=0 sup_dev="), "{line}");
    assert!(line.trim_end().ends_with("converged=true"), "{line}");

    let body = std::fs::read_to_string(&csv).unwrap();
    let mut lines = body.lines().skip_while(|l| l.starts_with('#'));
    assert_eq!(lines.next(), Some("t,sigma,sigma_dot"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - 0.9f64.asin()).abs() < 1e-11);
}

#[test]
fn reproduce_is_deterministic() {
    let a = cycle_slip(&["reproduce"]);
    let b = cycle_slip(&["reproduce"]);
    assert_eq!(a.status.code(), Some(0), "{}", text(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let table = text(&a.stdout);
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",ok")), "{table}");

    let out = cycle_slip(&["reproduce", "--json"]);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let r0: Vec<u64> = rows.as_array().unwrap().iter().map(|r| r["r0"].as_u64().unwrap()).collect();
    assert_eq!(r0, [1, 2, 5]);
}

#[test]
fn sweep_mu_table() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "[pll]\nt_filter = 0.1\ns = 0.4\nbeta = 0.9\nh0 = 1.0\n\n\
         [certificate]\ntheorem = \"t4\"\nmu_tilde = 0.01\nstrategy = \"recipe\"\n\n\
         [simulation]\nhorizon = 0.3\nearly_exit = false\n",
    );
    let out = cycle_slip(&["sweep-mu", cfg.to_str().unwrap(), "--mus", "1e-6,1e-5"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("mu,q_mu,pd_ok,sim_slips"));
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[2], "true");
        assert_eq!(cells[3], "0");
    }

    let path = dir.path().join("sweep/mu.csv");
    let out = cycle_slip(&[
        "sweep-mu",
        cfg.to_str().unwrap(),
        "--mu-min",
        "1e-7",
        "--mu-max",
        "1e-5",
        "--points",
        "3",
        "--no-sim",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let body = std::fs::read_to_string(&path).unwrap();
    assert_eq!(body.lines().count(), 4);
    assert!(body.lines().skip(1).all(|l| l.ends_with(',')));
}

#[test]
fn scan_emits_frequency_samples() {
    let cfg = fixture("pll_beta_0_90.toml");
    let out = cycle_slip(&["scan", cfg.to_str().unwrap(), "--points", "200", "--omega-max", "50"]);
    assert_eq!(out.status.code(), Some(0));
    let table = text(&out.stdout);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("omega,pi_value"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (w, v) = l.split_once(',').unwrap();
            (w.parse().unwrap(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|&(_, v)| v >= 0.0));
    assert_eq!(rows.last().unwrap().0, 50.0);
}
