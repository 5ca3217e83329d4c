//! End-to-end runs at toy scale: reproducibility, resume, missing seeds,
//! sweeps, rendering and the command-line entry point.

use std::path::Path;
use std::process::Command;

use fairrel::config::{DatasetSpec, InterventionSpec};
use fairrel::layout::*;
use fairrel::run::DesiderataFile;
use fairrel::{
    compare_fairness, render, run_experiment, sweep_imbalance, DatasetKind, ExperimentConfig,
    Preset, RunError, RunOptions,
};
use fairrel_core::interventions::{Algorithm, SelectionRule};

fn tiny(kind: DatasetKind, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Preset::Desk, kind);
    if let DatasetSpec::Synthetic { dag, .. } = &mut cfg.dataset {
        dag.n = 800;
    }
    cfg.train.iterations = 20;
    cfg.train.checkpoint_every = 10;
    cfg.train.hidden = vec![8, 4];
    cfg.seeds = vec![1, 2, 3];
    cfg.interventions = vec![InterventionSpec {
        algorithm: Algorithm::DetCons,
        rule: SelectionRule::default(),
    }];
    cfg.sweep.fractions = vec![0.5, 0.7];
    cfg.sweep.n_out = 300;
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn identical_configs_give_identical_metric_files() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tiny(DatasetKind::SynthNormal, &tmp.path().join("a"));
    let b = tiny(DatasetKind::SynthNormal, &tmp.path().join("b"));
    let ra = run_experiment(&a, RunOptions::default()).unwrap();
    let rb = run_experiment(&b, RunOptions::default()).unwrap();
    assert!(ra.manifest.ok(), "{:?}", ra.manifest);
    for f in [FAIRNESS_FILE, INTERVENTIONS_FILE, DESIDERATA_JSON] {
        assert_eq!(read(&ra.run_dir.join(f)), read(&rb.run_dir.join(f)), "{f}");
    }
    let pred = predictions_file(ra.manifest.seeds[0].best_iteration.unwrap());
    assert_eq!(
        read(&seed_dir(&ra.run_dir, 1).join(&pred)),
        read(&seed_dir(&rb.run_dir, 1).join(&pred))
    );
}

#[test]
fn resume_keeps_finished_seeds_and_reruns_failed_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(DatasetKind::SynthNormal, tmp.path());
    let first = run_experiment(&cfg, RunOptions::default()).unwrap();
    let fairness = read(&first.run_dir.join(FAIRNESS_FILE));

    // Mark seed 2 as failed; seed 1 gets a sentinel file that a rerun
    // would delete with the rest of its directory.
    let mut s2 = read_summary(&first.run_dir, 2).unwrap();
    s2.error = Some("interrupted".into());
    write_json(&seed_dir(&first.run_dir, 2).join(SUMMARY_FILE), &s2).unwrap();
    let sentinel = seed_dir(&first.run_dir, 1).join("sentinel");
    write_text(&sentinel, "x").unwrap();

    let second = run_experiment(&cfg, RunOptions { resume: true }).unwrap();
    assert!(second.manifest.ok());
    assert!(sentinel.exists());
    assert!(read_summary(&second.run_dir, 2).unwrap().ok());
    assert_eq!(read(&second.run_dir.join(FAIRNESS_FILE)), fairness);
}

#[test]
fn single_seed_run_marks_stability_unavailable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(DatasetKind::SynthNormal, tmp.path());
    cfg.seeds = vec![1];
    let out = run_experiment(&cfg, RunOptions::default()).unwrap();
    assert!(out.manifest.ok());
    let d: DesiderataFile = read_json(&out.run_dir.join(DESIDERATA_JSON)).unwrap();
    assert!(d.report.stability.result.is_none());
    assert!(d.report.stability.error.is_some());
    assert!(d.report.credibility.result.is_some());
    let cmp = compare_fairness(&out.run_dir).unwrap();
    assert!(cmp.comparisons.iter().filter(|c| c.aggregation == "seeds").all(|c| c.degenerate));
}

#[test]
fn sweep_covers_every_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(DatasetKind::SynthPareto, tmp.path());
    cfg.interventions.clear();
    let rep = sweep_imbalance(&cfg, RunOptions::default()).unwrap();
    assert_eq!(rep.runs.len(), 2);
    assert_eq!(rep.rows.len(), 4);
    for f in [0.5, 0.7] {
        let n = rep.rows.iter().filter(|r| r.fraction == f).count();
        assert_eq!(n, 2, "fraction {f}");
    }
    let csv = read(&tmp.path().join("sweep.csv"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn render_writes_figures_and_reports_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    match render(tmp.path(), 20) {
        Err(RunError::Missing { files, .. }) => assert!(files.contains(&CONFIG_FILE.to_string())),
        other => panic!("expected a missing-files error, got {other:?}"),
    }
    let cfg = tiny(DatasetKind::SynthNormal, &tmp.path().join("run"));
    let out = run_experiment(&cfg, RunOptions::default()).unwrap();
    let written = render(&out.run_dir, 20).unwrap();
    assert!(written.iter().all(|p| p.exists()));
    let boxes = read(&out.run_dir.join(PLOTS_DIR).join("scores_by_grade.svg"))
        .matches("class=\"box\"")
        .count();
    let grades = read_fairness(&out.run_dir.join(FAIRNESS_FILE)).unwrap();
    assert!(!grades.is_empty());
    let table = fairrel::run::load_seed(&out.run_dir, 1).unwrap().predictions;
    let mut distinct = table.grade.clone();
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(boxes, distinct.len());
}

#[test]
fn cli_run_all_and_failure_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_fairrel");
    let run = tmp.path().join("cli-run");
    let status = Command::new(exe)
        .args(["run-all", "--preset", "desk", "--dataset", "fairtrec-analog"])
        .args(["--n", "800", "--iterations", "20", "--seeds", "1,2"])
        .args(["--intervention", "detconstsort", "--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in [MANIFEST_FILE, FAIRNESS_FILE, INTERVENTIONS_FILE, DESIDERATA_TXT, "compare.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(read_manifest(&run).unwrap().ok());

    let missing = Command::new(exe)
        .arg("render")
        .arg(tmp.path().join("nothing-here"))
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains(CONFIG_FILE));

    let bad = Command::new(exe)
        .args(["train", "--seed", "1", "--dataset", "no-such-dataset"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
