use std::path::Path;
use std::process::{Command, Output};

fn regbsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regbsde"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const BROWNIAN_MEAN: &str = "
[model]
kind = brownian
x0 = 0.25
drift = 0.1
vol = 1.0
[payoff]
kind = identity
[driver]
kind = zero
[method]
name = plain
[grid]
horizon = 1
steps = 5
[basis]
half_width = 50
[thresholds]
state = 100
[simulation]
paths = 1000
seed = 42
";

const PUT: &str = "
[model]
kind = black_scholes
rate = 0.05
vol = 0.15
spot = 100
[payoff]
kind = geometric_put
strike = 100
[method]
name = max
[grid]
horizon = 1
steps = 10
[basis]
edge = 0.05
[simulation]
paths = 2000
seed = 3
replications = 2
";

fn rows(path: &str) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn missing_steps_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", &PUT.replace("steps = 10\n", ""));
    let out = dir.path().join("out.csv");
    let o = regbsde(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.steps"));
    assert!(!out.exists());
}

#[test]
fn numerical_abort_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "inf.cfg", &BROWNIAN_MEAN.replace("drift = 0.1", "drift = 1e308").replace("horizon = 1", "horizon = 10"));
    let out = dir.path().join("out.csv");
    let o = regbsde(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
}

#[test]
fn zero_driver_single_cell_matches_dumped_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "mean.cfg", BROWNIAN_MEAN);
    let res = dir.path().join("res.csv");
    let dump = dir.path().join("paths.csv");
    assert!(regbsde(&["run", "--config", &cfg, "--out", res.to_str().unwrap()]).status.success());
    assert!(regbsde(&["dump-paths", "--config", &cfg, "--out", dump.to_str().unwrap()]).status.success());

    let res = rows(res.to_str().unwrap());
    assert_eq!(res.len(), 2);
    let y_col = res[0].iter().position(|c| c == "y0").unwrap();
    let y0: f64 = res[1][y_col].parse().unwrap();

    let dump = rows(dump.to_str().unwrap());
    let x_col = dump[0].iter().position(|c| c == "x_T_1").unwrap();
    let xs: Vec<f64> = dump[1..].iter().map(|r| r[x_col].parse().unwrap()).collect();
    assert_eq!(xs.len(), 1000);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    assert!((y0 - mean).abs() <= 1e-12 * mean.abs(), "{y0} vs {mean}");
}

#[test]
fn dump_has_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let text = BROWNIAN_MEAN.replace("paths = 1000", "paths = 3").replace("steps = 5", "steps = 2");
    let cfg = write(dir.path(), "small.cfg", &text);
    let dump = dir.path().join("paths.csv");
    assert!(regbsde(&["dump-paths", "--config", &cfg, "--out", dump.to_str().unwrap()]).status.success());
    let r = rows(dump.to_str().unwrap());
    assert_eq!(r[0], ["path", "x_T_1", "dw_0_1", "dw_1_1"]);
    assert_eq!(r.len(), 4);
    for (m, row) in r[1..].iter().enumerate() {
        assert_eq!(row[0], m.to_string());
        let x: f64 = row[1].parse().unwrap();
        let dw: f64 = row[2].parse::<f64>().unwrap() + row[3].parse::<f64>().unwrap();
        assert!((x - (0.25 + 0.1 + dw)).abs() < 1e-14);
    }
}

#[test]
fn dumps_are_reproducible_and_deterministic_models_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.cfg", BROWNIAN_MEAN);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        assert!(regbsde(&["dump-paths", "--config", &cfg, "--out", p.to_str().unwrap()]).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let frozen = write(dir.path(), "f.cfg", &BROWNIAN_MEAN.replace("vol = 1.0", "vol = 0"));
    let c = dir.path().join("c.csv");
    assert!(regbsde(&["dump-paths", "--config", &frozen, "--out", c.to_str().unwrap()]).status.success());
    for row in &rows(c.to_str().unwrap())[1..] {
        let x: f64 = row[1].parse().unwrap();
        assert!((x - 0.35).abs() < 1e-15, "{x}");
    }
}

fn without_seconds(path: &Path) -> Vec<String> {
    let r = rows(path.to_str().unwrap());
    let sec = r[0].iter().position(|c| c == "seconds").unwrap();
    r.into_iter()
        .map(|mut row| {
            row.remove(sec);
            row.join(",")
        })
        .collect()
}

#[test]
fn runs_are_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "put.cfg", PUT);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let oa = regbsde(&["run", "--config", &cfg, "--out", a.to_str().unwrap(), "--threads", "1"]);
    let ob = regbsde(&["run", "--config", &cfg, "--out", b.to_str().unwrap(), "--threads", "3"]);
    assert!(oa.status.success() && ob.status.success());
    assert_eq!(without_seconds(&a), without_seconds(&b));
}

#[test]
fn sweep_writes_every_point_and_replication() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{PUT}[sweep]\nsteps = 5, 10\nedge = 0.05, 0.1, 0.2\n");
    let cfg = write(dir.path(), "sweep.cfg", &text);
    let out = dir.path().join("s.csv");
    let o = regbsde(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(out.to_str().unwrap());
    assert_eq!(r.len(), 1 + 2 * 3 * 2);
    assert_eq!(r[0][..7], ["steps", "paths", "edge", "n", "replication", "seed", "y0"]);
    assert_eq!(r[1][5], "9");
    assert_eq!(r[2][5], "10");
    for row in &r[1..] {
        let y0: f64 = row[6].parse().unwrap();
        assert!(y0.is_finite() && y0 > 0.0);
    }
    // summary: one line per sweep point after the header
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 1 + 6);
}

#[test]
fn every_method_runs() {
    let dir = tempfile::tempdir().unwrap();
    for (name, extra) in [
        ("plain", ""),
        ("plain_modified", ""),
        ("max", ""),
        ("penalization", "n = 2\n"),
        ("regularization", "n = 2\n"),
    ] {
        let text = PUT.replace("name = max\n", &format!("name = {name}\n{extra}"));
        let cfg = write(dir.path(), "m.cfg", &text);
        let out = dir.path().join(format!("{name}.csv"));
        let o = regbsde(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(rows(out.to_str().unwrap()).len(), 3);
    }
}
