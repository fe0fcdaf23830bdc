use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use riarag_cli::{load_config, CliError};
use riarag_core::domain::ProjectCatalog;
use riarag_core::knowledge_store::KbSnapshot;
use riarag_core::qe_env::replay_feedback_with_catalog;
use riarag_core::trainer::{replay_into_kb, RunConfig, Trainer};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_riarag"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"{"episode_count": 3, "tests_per_episode": 8}"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn empty_document_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "{}");
    assert_eq!(load_config(&p, &[]).unwrap(), RunConfig::default());
}

#[test]
fn full_defaults_document_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let text = serde_json::to_string_pretty(&RunConfig::default()).unwrap();
    let p = write_config(dir.path(), &text);
    assert_eq!(load_config(&p, &[]).unwrap(), RunConfig::default());
}

#[test]
fn seed_override_touches_only_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "{}");
    let c = load_config(&p, &["seed=7".into()]).unwrap();
    assert_eq!(c.seed, 7);
    assert_eq!(
        c,
        RunConfig {
            seed: 7,
            ..Default::default()
        }
    );
}

#[test]
fn learning_rate_outside_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "{}");
    match load_config(&p, &["ppo.learning_rate=0.01".into()]) {
        Err(CliError::Validation { key, .. }) => assert_eq!(key, "ppo.learning_rate"),
        other => panic!("{other:?}"),
    }
    let c = load_config(
        &p,
        &[
            "ppo.learning_rate=0.01".into(),
            "ppo.allow_out_of_range_learning_rate=true".into(),
        ],
    )
    .unwrap();
    assert_eq!(c.ppo.learning_rate, 0.01);
}

#[test]
fn unknown_keys_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "{}");
    assert!(matches!(
        load_config(&p, &["ppo.nonsense=1".into()]),
        Err(CliError::UnknownKey(k)) if k == "ppo.nonsense"
    ));
    let q = write_config(dir.path(), r#"{"dqn": {"gamma": 0.5}}"#);
    assert!(matches!(load_config(&q, &[]), Err(CliError::UnknownKey(k)) if k == "gamma"));
    assert!(matches!(
        load_config(&p, &["seed".into()]),
        Err(CliError::BadOverride(_))
    ));
}

#[test]
fn missing_config_exits_1_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = run(&["train", "--config", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("absent.json"), "{err}");
}

#[test]
fn validation_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("o");
    for bad in ["ppo.learning_rate=0.5", "nope=1", "episode_count=0", "seed"] {
        let out = run(&[
            "train",
            "--config",
            s(&p),
            "--out",
            s(&out_dir),
            "--set",
            bad,
        ]);
        assert_eq!(out.status.code(), Some(1), "{bad}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: config:"));
    }
    let garbled = write_config(dir.path(), "{ not json");
    let out = run(&["train", "--config", s(&garbled), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), SMALL);
    let feedback = dir.path().join("fb.jsonl");
    std::fs::write(&feedback, "{\"not\": \"a record\"}\n").unwrap();
    let catalog = dir.path().join("catalog.json");
    std::fs::write(
        &catalog,
        serde_json::to_string(&ProjectCatalog::default()).unwrap(),
    )
    .unwrap();
    let out = run(&[
        "replay",
        "--config",
        s(&p),
        "--out",
        s(&dir.path().join("r")),
        "--input",
        s(&feedback),
        "--catalog",
        s(&catalog),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let missing_ckpt = dir.path().join("none.json");
    let out = run(&[
        "evaluate",
        "--config",
        s(&p),
        "--out",
        s(&dir.path().join("e")),
        "--checkpoint",
        s(&missing_ckpt),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "{}");
    let out = run(&["gradcheck", "--config", s(&p)]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max relative error"), "{text}");
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn train_export_replay_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run_dir = dir.path().join("run");
    let out = run(&["train", "--config", s(&cfg), "--out", s(&run_dir)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "events.jsonl",
        "metrics.csv",
        "ppo_updates.csv",
        "dqn.csv",
        "checkpoint.json",
        "catalog.json",
        "feedback.jsonl",
    ] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let events = run_dir.join("events.jsonl");
    let feedback = run_dir.join("feedback.jsonl");
    let catalog = run_dir.join("catalog.json");
    let inputs = [read(&events), read(&feedback), read(&catalog), read(&cfg)];

    // export re-derives the training CSVs byte for byte
    let ex = dir.path().join("export");
    let out = run(&[
        "export",
        "--config",
        s(&cfg),
        "--out",
        s(&ex),
        "--input",
        s(&events),
    ]);
    assert_eq!(out.status.code(), Some(0));
    for f in ["metrics.csv", "ppo_updates.csv", "dqn.csv"] {
        assert_eq!(read(&ex.join(f)), read(&run_dir.join(f)), "{f}");
    }

    // replay matches a direct in-process replay over the same files
    let rp = dir.path().join("replay");
    let out = run(&[
        "replay",
        "--config",
        s(&cfg),
        "--out",
        s(&rp),
        "--input",
        s(&feedback),
        "--catalog",
        s(&catalog),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let config = load_config(&cfg, &[]).unwrap();
    let cat: ProjectCatalog = serde_json::from_slice(&read(&catalog)).unwrap();
    let mut kb = Trainer::new(config.clone()).unwrap().state.kb;
    let before = kb.snapshot();
    let records = replay_feedback_with_catalog(&feedback, cat.clone()).unwrap();
    let report = replay_into_kb(&mut kb, records, &cat, &config).unwrap();
    assert!(report.edges_touched > 0);
    let cli_snapshot: KbSnapshot =
        serde_json::from_slice(&read(&rp.join("kb_snapshot.json"))).unwrap();
    assert_eq!(cli_snapshot, kb.snapshot());
    assert_ne!(cli_snapshot.graph_edges, before.graph_edges);

    // evaluate runs greedy episodes from the checkpoint
    let ev = dir.path().join("eval");
    let out = run(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--out",
        s(&ev),
        "--checkpoint",
        s(&run_dir.join("checkpoint.json")),
        "--episodes",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(read(&ev.join("eval_metrics.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 3);

    assert_eq!(
        inputs,
        [read(&events), read(&feedback), read(&catalog), read(&cfg)],
        "inputs must not change"
    );
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"episode_count": 4, "tests_per_episode": 8, "seed": 3}"#,
    );
    let whole = dir.path().join("whole");
    let half = dir.path().join("half");
    assert_eq!(
        run(&["train", "--config", s(&cfg), "--out", s(&whole)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run(&[
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(&half),
            "--set",
            "episode_count=2"
        ])
        .status
        .code(),
        Some(0)
    );
    let ckpt = half.join("checkpoint.json");
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&half),
        "--resume",
        s(&ckpt),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "metrics.csv",
        "ppo_updates.csv",
        "dqn.csv",
        "events.jsonl",
        "checkpoint.json",
    ] {
        assert_eq!(read(&whole.join(f)), read(&half.join(f)), "{f}");
    }
    // a resume under a different seed is refused
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&half),
        "--resume",
        s(&ckpt),
        "--set",
        "seed=4",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablate_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"episode_count": 2, "tests_per_episode": 6, "smoothing_window": 2}"#,
    );
    let out_dir = dir.path().join("abl");
    let out = run(&[
        "ablate",
        "--config",
        s(&cfg),
        "--out",
        s(&out_dir),
        "--seeds",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for v in [
        "full",
        "disable_ppo",
        "disable_dqn",
        "scalar_reward",
        "no_feedback",
    ] {
        assert!(text.contains(v), "{v}");
    }
    assert!(out_dir.join("ablation.json").exists());
}
