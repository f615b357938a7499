use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use snlab_core::config::ExperimentConfig;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn tiny_text() -> String {
    std::fs::read_to_string(configs().join("tiny.ini")).unwrap()
}

/// `tiny.ini` with `key = value` lines replaced.
fn tiny_with(dir: &Path, overrides: &[(&str, &str)]) -> PathBuf {
    let mut lines: Vec<String> = tiny_text().lines().map(str::to_string).collect();
    for (k, v) in overrides {
        let pos = lines
            .iter()
            .position(|l| l.split('=').next().map(str::trim) == Some(*k))
            .unwrap_or_else(|| panic!("no key {k} in tiny.ini"));
        lines[pos] = format!("{k} = {v}");
    }
    let path = dir.join("custom.ini");
    std::fs::write(&path, lines.join("\n")).unwrap();
    path
}

fn snlab(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_snlab"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn summary_value(record: &str, key: &str) -> f64 {
    let prefix = format!("{key} = ");
    let line = record.lines().find(|l| l.starts_with(&prefix)).unwrap_or_else(|| panic!("no {key}"));
    line[prefix.len()..].trim().parse().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn duality_check_on_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = snlab(&["duality-check"], None, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let record = read(dir.path(), "run.record");
    assert!(summary_value(&record, "max_residual") <= 1e-10);
    let csv = read(dir.path(), "duality.csv");
    assert_eq!(csv.lines().next(), Some("draw,lhs,rhs,residual"));
    assert_eq!(csv.lines().count(), 1 + 20);
}

#[test]
fn overlapping_leader_and_follower_regions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_with(dir.path(), &[("followers", "0.5:0.6, 0.8:0.9")]);
    let out = snlab(&["nash-solve"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("G_0 ∩ G_i = ∅"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn zero_data_sweep_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_with(dir.path(), &[("initial_amplitude", "0, 0"), ("target_amplitude", "0, 0")]);
    let out_dir = dir.path().join("out");
    let out = snlab(&["epsilon-sweep"], Some(&cfg), &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&out_dir, "sweep.csv");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let cells: Vec<f64> = row.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert!(cells.iter().all(|&c| c == 0.0), "{row}");
    }
}

#[test]
fn csv_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("tiny.ini");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, extra) in [(&a, None), (&b, None), (&c, Some("2"))] {
        let mut args = vec!["leader-solve"];
        if let Some(n) = extra {
            args.extend(["--parallel", n]);
        }
        assert_eq!(snlab(&args, Some(&cfg), out).status.code(), Some(0));
    }
    for name in ["leader.csv", "terminal.csv"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
        assert_eq!(read(&a, name), read(&c, name), "{name} with parallel sweeps");
    }
}

#[test]
fn record_echo_parses_back_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("tiny.ini");
    assert_eq!(snlab(&["observability"], Some(&cfg), dir.path()).status.code(), Some(0));
    let record = read(dir.path(), "run.record");
    let start = record.find("[config]\n").unwrap() + "[config]\n".len();
    let end = start + record[start..].find("\n[").unwrap();
    let echoed = ExperimentConfig::parse(&record[start..end]).unwrap();
    assert_eq!(echoed, ExperimentConfig::parse(&tiny_text()).unwrap());
}

#[test]
fn weights_report_on_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = snlab(&["weights-report"], None, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "inequalities.csv");
    assert!(csv.starts_with(snlab_core::lattice_weights::InequalityReport::CSV_HEADER));
    assert!(csv.lines().nth(1).unwrap().ends_with(",true"));
    let c = ExperimentConfig::default();
    assert_eq!(read(dir.path(), "weights.csv").lines().count(), 2 + c.noise_steps * c.substeps);
}

#[test]
fn seed_flag_overrides_the_configured_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("tiny.ini");
    let out = snlab(&["observability", "--seed", "7"], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let record = read(dir.path(), "run.record");
    assert!(record.lines().any(|l| l == "seed = 7"));
}

#[test]
fn oracle_comparison_passes_on_tiny() {
    let dir = tempfile::tempdir().unwrap();
    let out = snlab(&["oracle-compare"], Some(&configs().join("tiny.ini")), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "oracle.csv");
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.ini");
    std::fs::write(&unknown, format!("{}\nbogus = 1\n", tiny_text())).unwrap();
    assert_eq!(snlab(&["nash-solve"], Some(&unknown), &dir.path().join("o1")).status.code(), Some(2));

    let weak = tiny_with(
        dir.path(),
        &[("scenario", "second"), ("alpha", "1e6, 1e6"), ("beta", "1, 1")],
    );
    let out = snlab(&["nash-solve"], Some(&weak), &dir.path().join("o2"));
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta_i"));

    let strict = tiny_with(dir.path(), &[("cg_tol", "1e-2")]);
    let out = snlab(&["oracle-compare"], Some(&strict), &dir.path().join("o3"));
    assert_eq!(out.status.code(), Some(4));
    assert!(read(&dir.path().join("o3"), "run.record").contains("status = invariant failure"));
}
