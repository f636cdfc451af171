use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "[mcmc]\nburn_in = 100\nkeep = 60\nthin = 2\n";

fn fsvar(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsvar"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = fsvar(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Simulated panel plus estimated store in `out/`.
fn pipeline(series: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let series = series.to_string();
    ok(
        &["simulate", "--config", "small.toml", "--seed", "3", "--series", &series, "--periods", "120", "--output-dir", "out"],
        dir.path(),
    );
    ok(&["estimate", "--config", "out/config.toml", "--output-dir", "out"], dir.path());
    dir
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn assert_monotone(rows: &[Vec<String>]) {
    for row in rows {
        let q: Vec<f64> = row[2..].iter().map(|v| v.parse().unwrap()).collect();
        assert!(q.windows(2).all(|w| w[0] <= w[1]), "{row:?}");
    }
}

#[test]
fn estimate_is_byte_identical_across_runs_and_threads() {
    let dir = pipeline(3);
    let p = dir.path();
    ok(&["estimate", "--config", "out/config.toml", "--seed", "42", "--threads", "1", "--output-dir", "a"], p);
    ok(&["estimate", "--config", "out/config.toml", "--seed", "42", "--threads", "1", "--output-dir", "b"], p);
    ok(&["estimate", "--config", "out/config.toml", "--seed", "42", "--threads", "4", "--output-dir", "c"], p);
    let a = std::fs::read(p.join("a/draws.fsv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(p.join("b/draws.fsv")).unwrap());
    assert_eq!(a, std::fs::read(p.join("c/draws.fsv")).unwrap());
    ok(&["estimate", "--config", "out/config.toml", "--seed", "43", "--output-dir", "d"], p);
    assert_ne!(a, std::fs::read(p.join("d/draws.fsv")).unwrap());
}

#[test]
fn irf_table_has_one_row_per_variable_and_horizon() {
    let dir = pipeline(4);
    ok(&["irf", "--output-dir", "out", "--config", "out/config.toml", "--horizon", "36"], dir.path());
    let (header, rows) = read_csv(&dir.path().join("out/irf.csv"));
    assert_eq!(header, ["variable", "time_or_horizon", "p05", "p16", "p50", "p84", "p95"]);
    assert_eq!(rows.len(), 4 * 37);
    assert_monotone(&rows);
    // the equity-tagged first series falls by exactly ten on impact
    let impact: f64 = rows[0][4].parse().unwrap();
    assert!((impact + 10.0).abs() < 1e-10);
}

#[test]
fn golden_headers_and_shapes() {
    let dir = pipeline(2);
    let p = dir.path();
    ok(&["fevd", "--output-dir", "out"], p);
    ok(&["volpath", "--output-dir", "out", "--quantiles", "0.025,0.5,0.975"], p);
    let (header, rows) = read_csv(&p.join("out/fevd.csv"));
    assert_eq!(header, ["variable", "time_or_horizon", "p05", "p16", "p50", "p84", "p95"]);
    assert_eq!(rows.len(), 2 * 118);
    assert_monotone(&rows);
    assert!(rows.iter().flat_map(|r| &r[2..]).all(|v| (0.0..=1.0).contains(&v.parse::<f64>().unwrap())));
    let (header, rows) = read_csv(&p.join("out/volpath.csv"));
    assert_eq!(header, ["variable", "time_or_horizon", "p2.5", "p50", "p97.5"]);
    assert_eq!(rows.len(), 118);
    assert_eq!(rows[0][..2], ["f1".to_string(), "0".to_string()]);
    let (header, _) = read_csv(&p.join("out/panel.csv"));
    assert_eq!(header, ["date", "y1", "y2"]);

    let out = ok(&["summary", "--output-dir", "out"], p);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "parameter,mean,sd,p05,p16,p50,p84,p95,split_rhat"
    );
    assert!(text.lines().any(|l| l.starts_with("f1.phi,")));
}

#[test]
fn multi_step_fevd_rows_per_step() {
    let dir = pipeline(2);
    ok(&["fevd", "--output-dir", "out", "--horizon", "5"], dir.path());
    let (_, rows) = read_csv(&dir.path().join("out/fevd.csv"));
    assert_eq!(rows.len(), 2 * 5);
    assert_eq!(rows[0][1], "1");
    assert_eq!(rows[4][1], "5");
    assert_monotone(&rows);
}

#[test]
fn gir_test_with_zero_cycles_writes_empty_report() {
    let dir = TempDir::new().unwrap();
    ok(&["gir-test", "--cycles", "0", "--output-dir", "gir"], dir.path());
    let (header, rows) = read_csv(&dir.path().join("gir/gir.csv"));
    assert_eq!(header, ["parameter", "ks_statistic", "p_value", "prior_mean", "prior_sd", "chain_mean", "chain_sd"]);
    assert!(rows.is_empty());
}

fn error_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    text.trim_end().to_string()
}

#[test]
fn failures_are_one_categorized_line() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let out = fsvar(&["estimate", "--bogus"], p);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error[usage]: "));

    let out = fsvar(&["irf", "--store", "missing.fsv"], p);
    assert!(!out.status.success());
    assert!(error_line(&out).starts_with("error[io]: "));

    std::fs::write(p.join("bad.toml"), "[model]\nlags = 0\n").unwrap();
    let out = fsvar(&["estimate", "--config", "bad.toml"], p);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).starts_with("error[config]: "));

    std::fs::write(p.join("gaps.csv"), "date,a,b\n2000-01,1,\n2000-02,2,3\n").unwrap();
    let out = fsvar(&["estimate", "--data", "gaps.csv"], p);
    let line = error_line(&out);
    assert!(line.starts_with("error[data]: ") && line.contains("(1, b)"), "{line}");

    std::fs::write(p.join("junk.fsv"), b"not a store").unwrap();
    let out = fsvar(&["summary", "--store", "junk.fsv"], p);
    assert!(error_line(&out).starts_with("error[format]: "));
}
