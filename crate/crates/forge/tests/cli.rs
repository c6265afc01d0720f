use std::fs;
use std::path::Path;
use std::process::Command;

use spectral_forge::emit::{digest, from_json, to_json};
use spectral_forge::{emit_report, run, CommandKind, ConfigError, Overrides, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_spectral-forge");

fn small_blocks(out: &Path, seed: u64) -> RunConfig {
    let text = format!(
        "command = \"verify-blocks\"\nout = \"{}\"\nseed = {seed}\n\n[blocks]\ntrials = 10\nhs = [0.1]\nphi_hs = [0.05]\nbound_trials = 1\n",
        out.display()
    );
    RunConfig::from_toml(&text, "test").unwrap()
}

fn small_completeness(out: &Path) -> RunConfig {
    let text = format!(
        "command = \"check-completeness\"\nout = \"{}\"\n\n[completeness]\nms = [8, 16]\n",
        out.display()
    );
    RunConfig::from_toml(&text, "test").unwrap()
}

#[test]
fn emitted_report_parses_back_to_the_same_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_completeness(dir.path());
    let report = run(&cfg).unwrap();
    let (paths, hash) = emit_report(&report, dir.path()).unwrap();
    assert_eq!(paths.len(), 5);
    let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(digest(&text), hash);
    assert_eq!(from_json(&text).unwrap(), report);
    let residuals = fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    assert!(residuals.starts_with("name,step,p,value,bound\n"));
    assert_eq!(residuals.lines().count(), 1 + 4);
    let lambdas = fs::read_to_string(dir.path().join("lambdas.csv")).unwrap();
    assert!(lambdas.starts_with("n,value,j,k,ratio,required,gap_class,source"));
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains(&hash));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = to_json(&run(&small_blocks(dir.path(), 11)).unwrap());
    let b = to_json(&run(&small_blocks(dir.path(), 11)).unwrap());
    assert_eq!(a, b);
    let c = to_json(&run(&small_blocks(dir.path(), 12)).unwrap());
    assert_ne!(a, c);
}

#[test]
fn missing_output_directory_is_reported_by_name() {
    let err = RunConfig::from_toml("command = \"build-flc\"\n", "run.toml").unwrap_err();
    match err {
        ConfigError::Missing { origin, field } => {
            assert_eq!(origin, "run.toml");
            assert_eq!(field, "out");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    let unknown = RunConfig::from_toml("command = \"build-flc\"\nout = \"x\"\n[flc]\nepsilon = 0.1\n", "t");
    assert!(matches!(unknown, Err(ConfigError::Parse { .. })));
    let scale = RunConfig::from_toml("command = \"build-flc\"\nout = \"x\"\ntolerance_scale = -1.0\n", "t");
    assert!(matches!(scale, Err(ConfigError::Invalid { .. })));
}

#[test]
fn flags_override_environment_which_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    fs::write(&file, "command = \"check-completeness\"\nout = \"from-file\"\nseed = 3\n").unwrap();
    let cfg = RunConfig::resolve(Some(&file), &Overrides::default(), Some("from-env".into())).unwrap();
    assert_eq!(cfg.out, Path::new("from-env"));
    assert_eq!(cfg.seed, 3);
    let over = Overrides { out: Some("from-flag".into()), seed: Some(9), ..Default::default() };
    let cfg = RunConfig::resolve(Some(&file), &over, Some("from-env".into())).unwrap();
    assert_eq!(cfg.out, Path::new("from-flag"));
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.command, CommandKind::CheckCompleteness);
}

#[test]
fn binary_writes_artifacts_and_signals_outcome_in_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("blocks");
    let file = dir.path().join("run.toml");
    fs::write(&file, "command = \"verify-blocks\"\nout = \"unused\"\n[blocks]\ntrials = 5\nhs = [0.2]\nphi_hs = []\nsigma = []\nbound_trials = 0\n")
        .unwrap();
    let status = Command::new(BIN)
        .args(["--config", file.to_str().unwrap(), "--seed", "4"])
        .env("SPECTRAL_FORGE_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("verify-blocks:") && stdout.contains("(PASS)"));
    let report = from_json(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.seed, 4);
    assert!(report.pass);

    let failing = Command::new(BIN)
        .args(["check-completeness", "--out", dir.path().join("c").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(failing.status.code(), Some(1));

    let missing = Command::new(BIN).args(["build-flc"]).env_remove("SPECTRAL_FORGE_OUT").output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("out"));
}
