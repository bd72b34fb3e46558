use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weakfarima"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn simulate_writes_expected_columns() {
    let out = ok(&["simulate", "--d", "0.2", "--n", "50", "--seed", "1"]);
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,X,eps"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50);
    assert!(rows[0].starts_with("1,"));
    assert!(rows[49].starts_with("50,"));
}

#[test]
fn simulate_checks_coefficient_counts() {
    let out = run(&["simulate", "--p", "2", "--ar=0.5", "--d", "0.1", "--n", "10"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--ar"));
}

#[test]
fn fit_then_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, fit, inf) = (
        path(dir.path(), "x.csv"),
        path(dir.path(), "fit.json"),
        path(dir.path(), "inf.json"),
    );
    ok(&[
        "simulate",
        "--p",
        "1",
        "--q",
        "1",
        "--d",
        "0.4",
        "--ar=-0.7",
        "--ma=-0.2",
        "--n",
        "1000",
        "--seed",
        "4",
        "--out",
        &sim,
    ]);
    ok(&["fit", "--in", &sim, "--json-out", &fit]);
    let f: serde_json::Value = serde_json::from_slice(&std::fs::read(&fit).unwrap()).unwrap();
    for key in ["theta_hat", "sigma2_hat", "converged", "grad_norm", "n"] {
        assert!(f.get(key).is_some(), "missing {key}");
    }
    assert_eq!(f["n"], 1000);
    assert_eq!(f["converged"], true);

    ok(&[
        "infer",
        "--fit",
        &fit,
        "--in",
        &sim,
        "--r",
        "2",
        "--method",
        "both",
        "--json-out",
        &inf,
    ]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&inf).unwrap()).unwrap();
    assert_eq!(r["r_selected"], 2);
    assert_eq!(r["j_hat"].as_array().unwrap().len(), 3);
    let params = r["parameters"].as_array().unwrap();
    assert_eq!(params.len(), 3);
    assert!(params
        .iter()
        .all(|p| p.get("standard").is_some() && p.get("modified").is_some()));
    assert!(params.iter().all(|p| p.get("modified_sn").is_none()));
}

#[test]
fn infer_rejects_mismatched_data() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, short, fit) = (
        path(dir.path(), "x.csv"),
        path(dir.path(), "s.csv"),
        path(dir.path(), "fit.json"),
    );
    ok(&["simulate", "--d", "0.1", "--n", "400", "--seed", "2", "--out", &sim]);
    ok(&["simulate", "--d", "0.1", "--n", "300", "--seed", "2", "--out", &short]);
    ok(&["fit", "--in", &sim, "--p", "0", "--q", "0", "--json-out", &fit]);
    let out = run(&["infer", "--fit", &fit, "--in", &short]);
    assert!(!out.status.success());
}

#[test]
fn quantiles_use_and_fill_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = path(dir.path(), "cache");
    let args = [
        "quantiles",
        "--m",
        "1",
        "--paths",
        "2000",
        "--steps",
        "200",
        "--seed",
        "9",
        "--cache-dir",
        &cache,
    ];
    let first = ok(&args);
    let files: Vec<_> = std::fs::read_dir(&cache).unwrap().collect();
    assert_eq!(files.len(), 1);
    assert_eq!(ok(&args), first);
    let table: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let q = table["quantiles"].as_array().unwrap();
    assert!(q[0].as_f64().unwrap() > q[1].as_f64().unwrap());
}

#[test]
fn quantile_cache_follows_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_weakfarima"))
        .args(["quantiles", "--paths", "500", "--steps", "50"])
        .env("WEAKFARIMA_CACHE", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn mc_size_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "mc-size",
        "--noise",
        "weak",
        "--n",
        "400",
        "--N",
        "2",
        "--alphas",
        "0.05",
        "--methods",
        "standard,modified",
        "--seed",
        "1",
    ]);
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "method,param,alpha,rejections,valid,failed,frequency,band_lo,band_hi"
    );
    assert_eq!(lines.len(), 1 + 2 * 3);
    let bad = run(&["mc-size", "--theta0=0.1,0.2", "--N", "1"]);
    assert!(!bad.status.success());
    let bad = run(&[
        "mc-size",
        "--methods",
        "bootstrap",
        "--N",
        "1",
        "--cache-dir",
        &path(dir.path(), "c"),
    ]);
    assert!(!bad.status.success());
}

#[test]
fn report_refuses_nonpositive_prices() {
    let dir = tempfile::tempdir().unwrap();
    let prices = path(dir.path(), "p.csv");
    std::fs::write(&prices, "date,price\n2020-01-01,10\n2020-01-02,0\n").unwrap();
    let out = run(&["report", "--prices", &prices]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("price"));
}
