use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = r#"
seed = 3

[partition]
agents = 6

[network]
topology = "ring"
hops = HOPS
total_weight = 0.8
switching = "fixed"

[nonlinearity]
x = { kind = "log_quantizer", rho = RHO }
sector_mode = "linearized"

[cost]
kind = "quadratic"
dim = 2
curvature = [0.5, 3.0]
center_spread = 2.0

[solver]
alpha = ALPHA
eta = 0.05
t_end = 5.0
integrator = "euler"
sample_stride = 5
x0_range = [-1.0, 1.0]

[outputs]
plots = false

[sweep]
alpha = [0.1, 1.0, 100.0]
mode = "spectral"
"#;

fn config(rho: f64, hops: usize, alpha: f64) -> String {
    BASE.replace("RHO", &rho.to_string())
        .replace("HOPS", &hops.to_string())
        .replace("ALPHA", &alpha.to_string())
}

fn linkgt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linkgt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).expect(key);
    line[key.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn validation_reports_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = config(1.0, 1, -1.0).replace("eta = 0.05", "eta = 0.0");
    let path = write(dir.path(), "bad.toml", &bad);
    let o = linkgt(&["bounds", "--config", &path]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("alpha") && err.contains("eta"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = config(1.0, 1, 0.2).replace("[solver]", "[solver]\nalfa = 1.0");
    let path = write(dir.path(), "typo.toml", &text);
    let o = linkgt(&["run", "--config", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alfa"));
}

#[test]
fn missing_source_is_a_usage_error() {
    assert_eq!(linkgt(&["bounds"]).status.code(), Some(2));
}

#[test]
fn verify_passes_and_catches_the_injected_fault() {
    let o = linkgt(&["verify", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = linkgt(&["verify", "--seed", "9", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(4));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("zero-eigenvalue")).unwrap();
    assert!(!line.contains(" 0 failed"), "{line}");
}

#[test]
fn presets_are_listed_and_shown() {
    let o = linkgt(&["preset", "list"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 4);
    let o = linkgt(&["preset", "show", "fig5-sensitivity"]);
    assert!(stdout(&o).contains("[sweep]"));
    assert_eq!(linkgt(&["preset", "show", "nope"]).status.code(), Some(2));
}

#[test]
fn runs_repeat_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.toml", &config(1.0, 1, 0.2));
    let mut traces = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = linkgt(&["run", "--config", &path, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["report.txt", "bounds.txt", "metadata.toml"] {
            assert!(out.join(f).exists(), "{f}");
        }
        traces.push(fs::read(out.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn divergent_run_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.toml", &config(1.0, 1, 1e4).replace("t_end = 5.0", "t_end = 50.0"));
    let o = linkgt(&["run", "--config", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn bounds_shrink_with_coarser_links_and_grow_with_neighbourhood() {
    let dir = tempfile::tempdir().unwrap();
    let tight = |rho: f64, hops: usize| {
        let path = write(dir.path(), &format!("b{rho}_{hops}.toml"), &config(rho, hops, 0.2));
        let o = linkgt(&["bounds", "--config", &path]);
        assert_eq!(o.status.code(), Some(0));
        let text = stdout(&o);
        (field(&text, "alpha_bar_tight:"), field(&text, "eigen_ratio:"))
    };
    assert!(tight(1.6, 1).0 < tight(0.25, 1).0);
    assert!(tight(1.0, 2).1 < tight(1.0, 1).1);
}

#[test]
fn sweep_writes_its_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.toml", &config(1.0, 1, 0.2));
    let out = dir.path().join("s");
    let o = linkgt(&["sweep", "--config", &path, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sweep.csv", "frontiers.csv", "summary.txt", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let rows = fs::read_to_string(out.join("sweep.csv")).unwrap();
    // three alphas, four gain regimes each
    assert_eq!(rows.lines().count(), 1 + 3 * 4);
    for line in rows.lines().skip(1) {
        let stable = line.contains(",true,false,") || line.contains(",true,true,");
        assert_eq!(stable, !line.contains(",1.000000000000e2,"), "{line}");
    }
}
