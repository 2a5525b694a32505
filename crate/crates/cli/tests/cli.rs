use awac_cli::{run, Cli, CliError, ValidateReport};
use awac_core::ppo::load_policy;
use clap::Parser;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/table2_normalized_team_performance.csv")
}

fn cli(args: &[&str]) -> Result<String, CliError> {
    let parsed = Cli::try_parse_from(std::iter::once("awac").chain(args.iter().copied())).unwrap();
    run(&parsed)
}

fn out(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn train_zero_steps_writes_untrained_checkpoint_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("run");
    cli(&["train", "--total-steps", "0", "--seed", "3", "--out-dir", &out(&d)]).unwrap();
    for f in ["policy.json", "metrics.csv", "manifest.json", "config.toml"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let p = load_policy(&d.join("policy.json")).unwrap();
    assert_eq!(p.obs_dim(), 6);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["ppo"]["total_steps"], 0);
    assert_eq!(fs::read_to_string(d.join("metrics.csv")).unwrap().lines().count(), 1);
}

#[test]
fn timestamped_run_directory_under_runs_root() {
    let tmp = tempfile::tempdir().unwrap();
    cli(&["train", "--total-steps", "0", "--seed", "9", "--runs-root", &out(tmp.path())]).unwrap();
    let names: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 1);
    assert!(names[0].starts_with("train-") && names[0].ends_with("-seed9"), "{names:?}");
}

#[test]
fn train_and_bench_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let run_train = |name: &str| {
        let d = tmp.path().join(name);
        cli(&["train", "--total-steps", "4096", "--seed", "11", "--out-dir", &out(&d)]).unwrap();
        (fs::read(d.join("metrics.csv")).unwrap(), fs::read(d.join("policy.json")).unwrap())
    };
    assert_eq!(run_train("a"), run_train("b"));

    let run_bench = |name: &str| {
        let d = tmp.path().join(name);
        cli(&["bench", "--teams", "6", "--seed", "2", "--out-dir", &out(&d)]).unwrap();
        (fs::read(d.join("raw.csv")).unwrap(), fs::read(d.join("normalized.csv")).unwrap())
    };
    let (raw, norm) = run_bench("c");
    assert_eq!((raw.clone(), norm), run_bench("d"));
    let header = String::from_utf8(raw).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "team,A,B,C,D,E,F,G,H");
}

#[test]
fn bench_with_strategies_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("b");
    let text = cli(&[
        "bench",
        "--strategies",
        "fixed-equal,random,awac-isps",
        "--teams",
        "5",
        "--out-dir",
        &out(&d),
    ])
    .unwrap();
    assert!(text.contains("fixed-equal"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["anova"]["df_between"], 2);
    assert_eq!(report["pairwise"].as_array().unwrap().len(), 3);
    assert!(d.join("report.txt").exists());
}

fn validate(args: &[&str]) -> ValidateReport {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("v");
    let mut all = vec!["validate", "--out-dir"];
    let o = out(&d);
    all.push(&o);
    all.extend_from_slice(args);
    cli(&all).unwrap();
    serde_json::from_str(&fs::read_to_string(d.join("validate.json")).unwrap()).unwrap()
}

#[test]
fn random_against_random_has_zero_difference() {
    let r = validate(&["--policy", "random", "--episodes", "200"]);
    assert_eq!(r.test.mean_diff, 0.0);
    assert_eq!(r.ties, 200);
    assert!(r.test.degenerate);
}

#[test]
fn single_episode_reports_insufficient_n() {
    let r = validate(&["--policy", "random", "--episodes", "1"]);
    assert!(r.insufficient_n);
    assert!(r.test.p_value.is_none());
}

#[test]
fn cli_flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[validate]\nepisodes = 7\nseed = 5\n").unwrap();
    let c = out(&cfg);
    assert_eq!(validate(&["--config", &c, "--policy", "random"]).episodes, 7);
    let r = validate(&["--config", &c, "--policy", "random", "--episodes", "3", "--seed", "8"]);
    assert_eq!((r.episodes, r.seed), (3, 8));
}

#[test]
fn stats_on_fixture_reports_each_column_set() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("s");
    let f = out(&fixture());
    cli(&[
        "stats",
        "--csv",
        &f,
        "--columns",
        "A,D,F,H",
        "--columns",
        "B,C,E,G",
        "--out-dir",
        &out(&d),
    ])
    .unwrap();
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("stats.json")).unwrap()).unwrap();
    let f0 = reports[0]["anova"]["f_stat"].as_f64().unwrap();
    let f1 = reports[1]["anova"]["f_stat"].as_f64().unwrap();
    assert!((f0 - 2.2137).abs() < 1e-3 && (f1 - 2.3585).abs() < 1e-3, "{f0} {f1}");
}

#[test]
fn policy_trained_for_another_shape_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("t");
    cli(&["train", "--total-steps", "0", "--total-views", "8", "--out-dir", &out(&d)]).unwrap();
    let p = out(&d.join("policy.json"));
    let err = cli(&["validate", "--policy", &p, "--out-dir", &out(&tmp.path().join("v"))]).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn replay_command_verifies_a_log() {
    use awac_core::allocator::{Allocator, TaskKind};
    use awac_core::hpm::HpmParams;
    use awac_core::session::{SessionConfig, SessionEngine};
    let cfg = SessionConfig {
        task_plan: vec![TaskKind::A],
        ..SessionConfig::default()
    };
    let alloc = Allocator::new(cfg.env_config(), HpmParams::default());
    let mut e = SessionEngine::new("r", cfg, alloc, 1).unwrap();
    e.start(0).unwrap();
    e.advance(1_000_000).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("s.jsonl");
    let text: String = e.log().iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    fs::write(&log, text).unwrap();
    let out = cli(&["replay", "--log", log.to_str().unwrap()]).unwrap();
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["finished"], true);
    assert_eq!(v["sets_completed"], 3);
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_awac")).args(args).output().unwrap()
}

#[test]
fn exit_codes_classify_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[ppo]\nnot_a_field = 1\n").unwrap();
    let o = out(&tmp.path().join("o"));
    assert_eq!(bin(&["config", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(bin(&["config", "--config", "/nonexistent/x.toml"]).status.code(), Some(3));
    assert_eq!(
        bin(&["stats", "--csv", "/nonexistent.csv", "--out-dir", &o]).status.code(),
        Some(3)
    );
    let f = out(&fixture());
    assert_eq!(
        bin(&["stats", "--csv", &f, "--columns", "A,Z", "--out-dir", &o]).status.code(),
        Some(2)
    );
    let ragged = tmp.path().join("nan.csv");
    fs::write(&ragged, "team,a,b\nT1,1,NaN\nT2,1,2\n").unwrap();
    assert_eq!(
        bin(&["stats", "--csv", ragged.to_str().unwrap(), "--out-dir", &o]).status.code(),
        Some(4)
    );
    let ok = bin(&["stats", "--csv", &f, "--columns", "A,D,F,H", "--out-dir", &o]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("Between groups"));
}

#[test]
fn shipped_default_config_matches_builtin_defaults() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config/default.toml");
    let cfg = awac_core::config::AppConfig::from_path(&path).unwrap();
    assert_eq!(cfg, awac_core::config::AppConfig::default());
}
