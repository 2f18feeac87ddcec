use std::path::{Path, PathBuf};
use std::process::Command;

use mvtd_harness::commands;
use mvtd_harness::config::parse_config;
use mvtd_harness::error::HarnessError;
use mvtd_harness::manifest::{OutputDir, RunManifest, MANIFEST_FILE};

fn tmp(name: &str) -> PathBuf {
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&p);
    p
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn mvtd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mvtd")).args(args).output().unwrap()
}

const CHAIN5: &str = "seed = 5\n[mdp]\nkind = \"named\"\nname = \"chain5\"\n";

#[test]
fn auto_zeta_uses_tail_length() {
    let cfg = parse_config(&format!("{CHAIN5}[critic]\nt = 10001\nk = 5001\nzeta = \"auto\"\n")).unwrap();
    let r = cfg.resolve().unwrap();
    assert!((r.zeta().unwrap() - 0.0141421356).abs() < 1e-9);
    assert!((r.beta() - r.system.as_ref().unwrap().beta_check_max.unwrap()).abs() < 1e-15);
}

#[test]
fn tail_start_must_precede_horizon() {
    let cfg = parse_config(&format!("{CHAIN5}[critic]\nt = 100\nk = 100\n")).unwrap();
    assert!(matches!(cfg.resolve(), Err(HarnessError::ConstraintViolation(_))));
    let dir = tmp("bad_k");
    let path = write_config(&dir, &format!("{CHAIN5}[critic]\nt = 100\nk = 200\n"));
    let out = mvtd(&["critic", "--config", path.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oversized_step_is_refused_unless_overridden() {
    let dir = tmp("big_beta");
    let path = write_config(&dir, &format!("{CHAIN5}[critic]\nt = 200\nbeta = 0.5\nreplications = 2\n"));
    let o = dir.join("o");
    let args = ["critic", "--config", path.to_str().unwrap(), "--out", o.to_str().unwrap()];
    assert_eq!(mvtd(&args).status.code(), Some(3));
    let mut forced = args.to_vec();
    forced.push("--override-step-size");
    assert_eq!(mvtd(&forced).status.code(), Some(0));
}

#[test]
fn unknown_keys_are_parse_errors() {
    let dir = tmp("typo");
    let path = write_config(&dir, &format!("{CHAIN5}[critic]\nbta = 0.1\n"));
    let out = mvtd(&["fixed-point", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn fixed_point_report_for_one_state() {
    let cfg = parse_config("[mdp]\nkind = \"named\"\nname = \"one-state\"\n").unwrap();
    let r = cfg.resolve().unwrap();
    let mut out = OutputDir::create(tmp("one_state")).unwrap();
    let report = commands::fixed_point_report(&r, &mut out).unwrap();
    assert!(report.contains("w_bar = (2.000000, 4.000000)"), "{report}");
    assert!(report.contains("mu = 0.109612"), "{report}");
}

#[test]
fn critic_csv_is_deterministic_and_replayable() {
    let dir = tmp("determinism");
    let path = write_config(&dir, &format!("{CHAIN5}[critic]\nt = 2048\nreplications = 3\n"));
    let (a, b, c) = (dir.join("a"), dir.join("b"), dir.join("c"));
    for o in [&a, &b] {
        let out = mvtd(&["critic", "--config", path.to_str().unwrap(), "--out", o.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |d: &Path| std::fs::read(d.join("critic.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let manifest = a.join(MANIFEST_FILE);
    let out = mvtd(&["critic", "--config", manifest.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(read(&a), read(&c));
    let m = RunManifest::load(&manifest).unwrap();
    assert_eq!(m.files.len(), 2);
    assert_eq!(m.seed, 5);
}

#[test]
fn critic_csv_header() {
    let dir = tmp("header");
    let path = write_config(&dir, &format!("{CHAIN5}[critic]\nt = 64\nreplications = 2\n"));
    let o = dir.join("o");
    assert!(mvtd(&["critic", "--config", path.to_str().unwrap(), "--out", o.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(o.join("critic.csv")).unwrap();
    assert!(text.starts_with("run_id,t,variant,err_last,err_tail,bound_T1,bound_T2,projected_flag\n"));
}

#[test]
fn verify_rejects_unknown_suite() {
    assert_eq!(mvtd(&["verify", "--suite", "nope", "--out", tmp("nope").to_str().unwrap()]).status.code(), Some(2));
}
