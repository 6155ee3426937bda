mod common;

use common::tiny_experiment;
use halluc_core::classifier::Arm;
use halluc_core::harness::{
    plot_report, run_experiment, summarize, CellOutcome, RunRecord, SeedPlan,
};
use halluc_core::Error;

#[test]
fn one_seed_run_has_every_cell_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(&dir.path().join("a"));
    let record = run_experiment(&cfg).unwrap();
    // One real-only cell plus one per m.
    assert_eq!(record.cells.len(), 3);
    assert!(
        record.cells.iter().all(|c| c.report().is_some()),
        "{:?}",
        record.cells
    );
    assert_eq!(record.config_hash, cfg.hash());

    let again = run_experiment(&tiny_experiment(&dir.path().join("b"))).unwrap();
    let reports = |r: &RunRecord| {
        r.cells
            .iter()
            .map(|c| c.report().cloned())
            .collect::<Vec<_>>()
    };
    assert_eq!(reports(&record), reports(&again));

    let on_disk = RunRecord::load(&dir.path().join("a/run_record.json")).unwrap();
    assert_eq!(on_disk, record);
}

#[test]
fn zero_hallucinations_reproduce_the_real_only_cell() {
    let dir = tempfile::tempdir().unwrap();
    let record = run_experiment(&tiny_experiment(dir.path())).unwrap();
    let real = record
        .cell(Arm::RealOnly, 2, 1, 0)
        .unwrap()
        .report()
        .unwrap()
        .clone();
    let zero = record
        .cell(Arm::Augmented, 2, 1, 0)
        .unwrap()
        .report()
        .unwrap()
        .clone();
    assert_eq!(zero.with_meta(Arm::RealOnly, 1, 0, 2), real);
}

#[test]
fn resuming_skips_finished_cells_and_refuses_a_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(dir.path());
    let first = run_experiment(&cfg).unwrap();
    let resumed = run_experiment(&cfg).unwrap();
    assert_eq!(first.cells, resumed.cells);
    assert!(
        resumed.checkpoints.is_empty(),
        "nothing should be retrained"
    );

    let mut changed = cfg.clone();
    changed.classifier.steps += 1;
    assert!(matches!(
        run_experiment(&changed),
        Err(Error::HashMismatch { .. })
    ));
}

#[test]
fn a_failing_cell_does_not_take_down_its_siblings() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_experiment(dir.path());
    // 12 samples per class cannot hold 20 shots plus queries.
    cfg.n_shot = vec![1, 20];
    let record = run_experiment(&cfg).unwrap();
    assert_eq!(record.cells.len(), 6);
    for c in &record.cells {
        match (&c.outcome, c.n_shot) {
            (CellOutcome::Ok { .. }, 1) => {}
            (CellOutcome::Failed { kind, .. }, 20) => assert_eq!(kind, "insufficient_samples"),
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn a_failed_pretraining_only_fails_augmented_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_experiment(dir.path());
    cfg.gan.lr_d = 1e30;
    cfg.gan.lr_g = 1e30;
    let record = run_experiment(&cfg).unwrap();
    for c in &record.cells {
        match c.arm {
            Arm::RealOnly => assert!(c.report().is_some()),
            Arm::Augmented => assert!(
                matches!(&c.outcome, CellOutcome::Failed { kind, .. } if kind == "numerical" || kind == "diverged"),
                "{c:?}"
            ),
        }
    }
}

#[test]
fn seed_plans_separate_streams() {
    let a = SeedPlan::new(0, 1);
    let b = SeedPlan::new(0, 2);
    assert_eq!((a.data, a.split, a.pretrain), (b.data, b.split, b.pretrain));
    assert_ne!(a.episode, b.episode);
    assert_ne!(a.finetune, b.finetune);
    assert_ne!(a.pool, a.finetune);
    assert_ne!(SeedPlan::new(1, 1).data, a.data);
}

#[test]
fn summary_and_plots_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let record = run_experiment(&tiny_experiment(&dir.path().join("run"))).unwrap();
    let summary = summarize(&record).unwrap();
    assert!(summary.row(Arm::RealOnly, 1, 0).is_some());
    assert!(summary.row(Arm::Augmented, 1, 5).is_some());
    let out = dir.path().join("report");
    let files = plot_report(&record, &out).unwrap();
    for name in [
        "summary.csv",
        "accuracy_vs_nshot.svg",
        "accuracy_vs_m.svg",
        "report.md",
    ] {
        assert!(
            files.contains(&out.join(name)),
            "{name} missing from {files:?}"
        );
        assert!(std::fs::metadata(out.join(name)).unwrap().len() > 0);
    }
    let svg = std::fs::read_to_string(out.join("accuracy_vs_nshot.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("class=\"series\""));
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_experiment(dir.path());
    cfg.selection.m = vec![50];
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    assert!(!dir.path().join("run_record.json").exists());
}

#[test]
fn config_survives_toml() {
    let cfg = tiny_experiment(std::path::Path::new("runs/x"));
    let text = cfg.to_toml().unwrap();
    let back = halluc_core::harness::ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
}
