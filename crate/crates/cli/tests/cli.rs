use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use volterra_lab_cli::report::verify;

fn bin(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_volterra-lab"));
    c.args(args);
    match threads {
        Some(t) => c.env("VLAB_THREADS", t),
        None => c.env_remove("VLAB_THREADS"),
    };
    c.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("lab.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn gram_run_writes_checksummed_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gram");
    let o = bin(&["gram", "--out", out.to_str().unwrap(), "--seed", "5"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("gram.csv")).unwrap();
    assert!(csv.starts_with("t,det,det_exact\n"));
    assert!(verify(&csv));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for key in ["experiment", "config", "seed", "version", "started_at", "wall_seconds"] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
    assert_eq!(m["experiment"], "gram");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["gram"]["n_probes"], 20);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let cfg = write_config(
        dir.path(),
        &format!(
            "seed = 11\nout = {:?}\n[markov-approx]\nn_paths = 40\nn_t = 16\nn_s = 16\nbasis = 4\n",
            out.to_string_lossy()
        ),
    );
    let o = bin(&["markov-approx", "--config", &cfg, "--n-list", "1,2,4"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("markov.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",40,11")));
}

#[test]
fn validation_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["heston"], None);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), "[gram]\nhorizon = -1.0\n");
    let o = bin(&["gram", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));
    let cfg = write_config(dir.path(), "[gram]\nhorizn = 1.0\n");
    assert_eq!(bin(&["gram", "--config", &cfg], None).status.code(), Some(2));
    let o = bin(&["gram", "--phi", "one", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--phi"));
    assert_eq!(
        bin(&["gram", "--out", dir.path().to_str().unwrap()], Some("zero"))
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn numerical_abort_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[lq]\ncap = 1e-9\nn_grid = 10\nn_paths = 10\n");
    let o = bin(&["lq", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[starter]\nn_paths = 3000\nn_t = 50\n");
    let mut seen = Vec::new();
    for t in ["1", "3"] {
        let out = dir.path().join(format!("s{t}"));
        let o = bin(&["starter", "--config", &cfg, "--out", out.to_str().unwrap()], Some(t));
        assert!(o.status.success());
        seen.push((
            fs::read(out.join("starter.csv")).unwrap(),
            fs::read(out.join("starter_residual.csv")).unwrap(),
        ));
    }
    assert_eq!(seen[0], seen[1]);
}
