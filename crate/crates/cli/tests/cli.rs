use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coxq_cli::report::{read_report, COVARIANCES_HEADER, EXPONENTS_HEADER, MOMENTS_HEADER};
use coxq_cli::{execute, Command as Sub, Invocation};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn coxq(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_coxq"));
    cmd.args(args).env_remove("COXQ_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn oracles_for_alpha_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = config("oracles.toml");
    let o = coxq(&["oracles", "--config", cfg.to_str().unwrap(), "--out", out, "--set", "service.alpha=1.0", "--set", "oracles.times=[1.0]"], &[]);
    let csv = fs::read_to_string(dir.path().join("oracles.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("Lambda,1,,0.75,")), "{csv}");
    assert!(dir.path().join("manifest.json").exists());
    // the alpha = 1 exponent fits are not part of this check; only config errors exit 1
    assert_ne!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_alpha_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("oracles.toml")).unwrap().replace("alpha = 0.5\n", "");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let o = coxq(&["oracles", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("alpha"), "{err}");
    assert!(err.contains("bad.toml:"), "{err}");
}

#[test]
fn regime_mismatch_cites_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("clt_quenched.toml");
    let o = coxq(&["clt-quenched", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--set", "arrivals.beta=1.5"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("regime table"));
}

#[test]
fn unknown_subcommand_exits_one() {
    let o = coxq(&["frobnicate", "--config", "x.toml"], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn threads_do_not_change_the_report() {
    let cfg = config("clt_annealed_sub.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let common = ["--set", "run.replications=300", "--set", "run.epsilons=[1e-2]", "--set", "checks.gaussian_times=[]"];
    let run = |dir: &Path, envs: &[(&str, &str)], extra: &[&str]| {
        let mut args = vec!["clt-annealed-sub", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()];
        args.extend(common);
        args.extend(extra);
        coxq(&args, envs)
    };
    let oa = run(a.path(), &[("COXQ_THREADS", "1")], &[]);
    let ob = run(b.path(), &[], &["--threads", "3"]);
    assert_ne!(oa.status.code(), Some(1), "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(oa.status.code(), ob.status.code());
    assert_eq!(fs::read(a.path().join("report.json")).unwrap(), fs::read(b.path().join("report.json")).unwrap());
    let ma: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value = serde_json::from_slice(&fs::read(b.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["threads"], 1);
    assert_eq!(mb["threads"], 3);
    assert_eq!(ma["config_hash"], mb["config_hash"]);
}

#[test]
fn set_override_changes_the_config_hash() {
    let cfg = config("oracles.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let base = ["oracles", "--config", cfg.to_str().unwrap(), "--set", "oracles.times=[1.0]"];
    coxq(&[&base[..], &["--out", a.path().to_str().unwrap()]].concat(), &[]);
    coxq(&[&base[..], &["--out", b.path().to_str().unwrap(), "--set", "service.alpha=0.7"]].concat(), &[]);
    let ra = read_report(&a.path().join("report.json")).unwrap();
    let rb = read_report(&b.path().join("report.json")).unwrap();
    assert_ne!(ra.config_hash, rb.config_hash);
    assert_eq!(rb.config.service.unwrap().alpha, 0.7);
}

#[test]
fn report_round_trips_and_headers_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = execute(&Invocation {
        command: Sub::CltQuenched,
        config: config("clt_quenched.toml"),
        out: dir.path().to_path_buf(),
        seed: Some(7),
        set: vec!["run.replications=200".into(), "run.epsilons=[1e-2]".into(), "checks.gaussian_times=[]".into()],
        threads: None,
    })
    .unwrap();
    assert_eq!(read_report(&dir.path().join("report.json")).unwrap(), outcome.report);
    assert_eq!(outcome.report.config.run.seed, Some(7));
    assert_eq!(first_line(&dir.path().join("moments.csv")), MOMENTS_HEADER.join(","));
    assert_eq!(first_line(&dir.path().join("covariances.csv")), COVARIANCES_HEADER.join(","));
    assert_eq!(first_line(&dir.path().join("exponents.csv")), EXPONENTS_HEADER.join(","));
    assert_eq!(
        MOMENTS_HEADER[..6],
        ["epsilon", "t", "mean_count", "count_variance", "dispersion_index", "dispersion_se"]
    );
}
