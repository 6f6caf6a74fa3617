use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ehfl() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ehfl"));
    cmd.env_remove("EHFL_OUT_DIR");
    cmd
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let text = fs::read_to_string(configs().join("benchmark.cfg")).unwrap();
    let text = text.replace("N = 100", "N = 10").replace("T = 500", "T = 8");
    let text = text.replacen("seed = 1\n", &format!("seed = 1\n{extra}"), 1);
    let path = dir.join("small.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_metrics_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let o = ehfl()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--algorithm", "mifa", "--seed", "7", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 9);
    assert!(metrics.lines().nth(1).unwrap().starts_with("mifa-G5-d1-k20-S30-seed7,mifa,10,5,30,8,20,1,7,0,"));
    assert!(out.join("run.json").exists());
}

#[test]
fn environment_overrides_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let env_dir = tmp.path().join("from_env");
    let o = ehfl()
        .env("EHFL_OUT_DIR", &env_dir)
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(tmp.path().join("from_flag"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env_dir.join("metrics.csv").exists());
    assert!(!tmp.path().join("from_flag").exists());
}

#[test]
fn hard_config_error_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(small_config(tmp.path(), "")).unwrap().replace("kappa = 20", "kappa = 31");
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, text).unwrap();
    let o = ehfl().args(["run", "--config"]).arg(&cfg).args(["--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kappa"));

    let o = ehfl()
        .args(["run", "--config", "/nonexistent.cfg", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));

    let typo = small_config(tmp.path(), "detla = 0.5\n");
    let o = ehfl().args(["run", "--config"]).arg(&typo).args(["--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(small_config(tmp.path(), "")).unwrap().replace("gamma = 0.05", "gamma = 1e200");
    let cfg = tmp.path().join("diverge.cfg");
    fs::write(&cfg, text).unwrap();
    let o = ehfl().args(["run", "--config"]).arg(&cfg).args(["--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn sweep_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let grid = tmp.path().join("g.grid");
    fs::write(&grid, "repeats = 2\n[axes]\nalgorithm = [\"fedavg\", \"fedbacys\"]\nG = [2, 5]\n").unwrap();
    let out = tmp.path().join("sweep");
    let o = ehfl()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--grid")
        .arg(&grid)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("6/6 cells completed"));
    let summary = fs::read_to_string(out.join("energy_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 7);
    assert!(summary.lines().nth(1).unwrap().starts_with("fedavg,-,1,20,30,1,"));
}

#[test]
fn analyze_reports_minimal_epoch_length() {
    let o = ehfl()
        .args(["analyze", "--N", "100", "--G", "5", "--S", "30", "--kappa", "20", "--delta", "1.0", "--epsilon", "0.5"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("minimal S for epsilon = 0.5: 20"));
    assert!(text.contains("convergence condition: satisfied"));
    assert!(text.contains("participation threshold 1/(6 sqrt N) = 0.0166666667"));
}
