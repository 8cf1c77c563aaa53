use std::path::{Path, PathBuf};
use std::process::Command;

use bpire_cli::{emit_report, parse_config, run_experiment, Experiment, RunError, RunReport};

const BIN: &str = env!("CARGO_BIN_EXE_bpire");

const CONFIG_A: &str = "
[run]
replicas = 20000
seed = 7
grid = 1e-2, 1e-3

[model]
kappa = 2

[atom]
weight = 0.5
offspring = poisson(0.3)
immigration = pareto(2, 1)

[atom]
weight = 0.5
offspring = poisson(0.9)
immigration = pareto(2, 1)
";

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn theorem_report(workers: usize) -> RunReport {
    let mut cfg = parse_config(CONFIG_A, Some(Experiment::Theorem)).unwrap();
    cfg.workers = workers;
    run_experiment(&cfg).unwrap()
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn check_on_config_a() {
    let cfg = parse_config(CONFIG_A, Some(Experiment::Check)).unwrap();
    let report = run_experiment(&cfg).unwrap();
    assert!(report.pass);
    assert_eq!(report.metric("kappa_moment").unwrap().estimate, 0.45);
}

#[test]
fn theorem_writes_expected_files() {
    let report = theorem_report(2);
    assert!((report.summary.constant_theory.unwrap() - 1.0 / 0.55).abs() < 1e-12);
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&report, dir.path()).unwrap();
    let names: Vec<String> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for f in ["report.json", "ratio.csv", "hill.csv"] {
        assert!(names.iter().any(|n| n == f), "{f} missing from {names:?}");
    }
    assert_eq!(written[0].parent().unwrap(), dir.path().join("theorem-7"));
    let ratio = std::fs::read_to_string(dir.path().join("theorem-7/ratio.csv")).unwrap();
    assert!(ratio.starts_with("x,survival,se,ratio,ratio_se\n"));
    assert_eq!(ratio.lines().count(), 3);
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("theorem-7/report.json")).unwrap(),
    )
    .unwrap();
    for key in ["experiment", "seed", "pass", "metrics", "wall_ms"] {
        assert!(json.get(key).is_some(), "report.json lacks {key}");
    }
    assert_eq!(json["experiment"], "theorem");
    assert!(json["conditions"]["moment_A"].as_f64().is_some());
}

#[test]
fn rerun_is_byte_identical_across_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    emit_report(&theorem_report(1), a.path()).unwrap();
    emit_report(&theorem_report(3), b.path()).unwrap();
    let (fa, fb) = (
        csv_bytes(&a.path().join("theorem-7")),
        csv_bytes(&b.path().join("theorem-7")),
    );
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
}

#[test]
fn unwritable_out_dir_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let err = emit_report(&theorem_report(1), &blocker).unwrap_err();
    assert!(matches!(err, RunError::Io { .. }), "{err}");
}

#[test]
fn hypothesis_violation_aborts() {
    let text = CONFIG_A.replace("poisson(0.9)", "poisson(1.4)");
    let cfg = parse_config(&text, Some(Experiment::Theorem)).unwrap();
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, RunError::Hypothesis(_)));
    assert_eq!(err.exit_code(), bpire_cli::EXIT_HYPOTHESIS);
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(&path, text).unwrap();
    path
}

fn bpire(args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BPIRE_WORKERS")
        .output()
        .unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let ok = write_config(dir.path(), CONFIG_A);
    let run = bpire(&["check", "--config", ok.to_str().unwrap(), "--out", out]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(dir.path().join("out/check-7/report.json").exists());

    let run = bpire(&[
        "check",
        "--config",
        ok.to_str().unwrap(),
        "--out",
        out,
        "--seed",
        "99",
    ]);
    assert_eq!(run.status.code(), Some(0));
    assert!(dir.path().join("out/check-99/report.json").exists());

    // A zero tolerance cannot be met by a Monte Carlo ratio.
    let strict = CONFIG_A.replace("[model]", "[tolerance]\ntheorem = 0\n\n[model]");
    let path = write_config(dir.path(), &strict);
    let run = bpire(&[
        "theorem",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out,
        "--workers",
        "2",
    ]);
    assert_eq!(
        run.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );

    let bad = CONFIG_A.replace("poisson(0.9)", "poisson(1.4)");
    let path = write_config(dir.path(), &bad);
    let run = bpire(&["theorem", "--config", path.to_str().unwrap(), "--out", out]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("hypothesis"));

    let typo = CONFIG_A.replace("kappa = 2", "kapa = 2");
    let path = write_config(dir.path(), &typo);
    let run = bpire(&["check", "--config", path.to_str().unwrap(), "--out", out]);
    assert_eq!(run.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&run.stderr).contains("did you mean `kappa`"));

    let run = bpire(&["nonsense", "--config", "x"]);
    assert_eq!(run.status.code(), Some(bpire_cli::EXIT_USAGE));
}

#[test]
fn workers_env_fallback_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), CONFIG_A);
    let mut csvs = Vec::new();
    for w in ["1", "5"] {
        let out = dir.path().join(format!("out{w}"));
        let run = Command::new(BIN)
            .args([
                "theorem",
                "--config",
                path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .env("BPIRE_WORKERS", w)
            .output()
            .unwrap();
        assert!(run.status.code().is_some_and(|c| c <= 1));
        csvs.push(csv_bytes(&out.join("theorem-7")));
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn shipped_configs_parse() {
    let cases = [
        ("config_a.conf", Experiment::Theorem),
        ("lemma1.conf", Experiment::Lemma1),
        ("corollary.conf", Experiment::Corollary),
        ("grey.conf", Experiment::Grey),
        ("sre.conf", Experiment::Sre),
        ("hill.conf", Experiment::Hill),
        ("decay.conf", Experiment::Decay),
        ("oracle_bernoulli.conf", Experiment::Oracle),
        ("oracle_light.conf", Experiment::Oracle),
    ];
    for (file, e) in cases {
        let cfg = bpire_cli::load_config(&configs_dir().join(file), Some(e)).unwrap();
        assert!(cfg.model.check_conditions().unwrap().pass, "{file}");
    }
}

#[test]
fn small_experiments_run() {
    let mut cfg = bpire_cli::load_config(
        &configs_dir().join("oracle_light.conf"),
        Some(Experiment::Oracle),
    )
    .unwrap();
    cfg.replicas = 200_000;
    cfg.workers = 2;
    let report = run_experiment(&cfg).unwrap();
    assert!(report.metric("tv").unwrap().estimate < 0.01);
    assert!(report.metric("stationarity_defect").unwrap().pass);

    let mut cfg =
        bpire_cli::load_config(&configs_dir().join("decay.conf"), Some(Experiment::Decay)).unwrap();
    cfg.replicas = 200_000;
    let report = run_experiment(&cfg).unwrap();
    assert!(report.pass, "{:?}", report.metrics);
    assert_eq!(report.table("decay.csv").unwrap().rows.len(), 10);
}
