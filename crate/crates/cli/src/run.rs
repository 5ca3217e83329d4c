//! The simulation protocol: per-seed training jobs followed by a run-level
//! aggregation that reads everything back from disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fairrel_core::clickmodel::{click_log_csv, ClickSession};
use fairrel_core::datagen::{sample_synthetic, subsample_imbalanced};
use fairrel_core::dataio::{parse_libsvm, robust_scale_apply, robust_scale_fit, split, Dataset};
use fairrel_core::desiderata::{
    audit_all, format_table, AuditInputs, CheckpointLogits, DesiderataReport, ScoreKind, SeedRun,
};
use fairrel_core::interventions::{evaluate_intervention, reranked_csv, ScoredList};
use fairrel_core::metrics::{
    fairness_report, rank_by_score, FairnessInputs, FairnessReport, RelevanceSource,
};
use fairrel_core::ranker::{predict, train, train_observed, TrainedModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig, InterventionSpec};
use crate::error::RunError;
use crate::layout::*;

/// Scaled train, validation and test splits.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, RunError> {
    match spec {
        DatasetSpec::Synthetic {
            dag,
            data_seed,
            imbalance,
        } => {
            let ds = sample_synthetic(dag, *data_seed)
                .map_err(|e| RunError::stage("generate", e))?
                .dataset;
            match imbalance {
                Some(im) => subsample_imbalanced(&ds, im.majority_fraction, im.n_out, *data_seed)
                    .map_err(|e| RunError::stage("generate", e)),
                None => Ok(ds),
            }
        }
        DatasetSpec::Libsvm {
            path, grade_max, ..
        } => {
            let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
            parse_libsvm(&text, *grade_max).map_err(|e| RunError::format(path, e.to_string()))
        }
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, RunError> {
    let ds = load_dataset(&cfg.dataset)?;
    let [a, b, c] = cfg.split;
    let (tr, va, te) =
        split(&ds, (a, b, c), cfg.dataset.data_seed()).map_err(|e| RunError::stage("split", e))?;
    let scaler = robust_scale_fit(&tr).map_err(|e| RunError::stage("scale", e))?;
    let scale = |d: &Dataset| robust_scale_apply(&scaler, d).map_err(|e| RunError::stage("scale", e));
    Ok(PreparedData {
        train: scale(&tr)?,
        val: scale(&va)?,
        test: scale(&te)?,
    })
}

fn train_seed(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
) -> Result<(TrainedModel, Vec<ClickSession>), RunError> {
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    let mut sessions = Vec::new();
    let model = if cfg.dump_clicks {
        train_observed(&data.train, &data.val, &cfg.pbm, &tc, |_, s| {
            sessions.push(s.clone())
        })
    } else {
        train(&data.train, &data.val, &cfg.pbm, &tc)
    }
    .map_err(|e| RunError::stage("train", e))?;
    Ok((model, sessions))
}

fn write_seed_outputs(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    dir: &Path,
    model: &TrainedModel,
    sessions: &[ClickSession],
) -> Result<(), RunError> {
    for ck in &model.checkpoints {
        let p = predict(&ck.scorer, &data.test).map_err(|e| RunError::stage("predict", e))?;
        PredictionTable {
            item_id: data.test.ids(),
            logit: p.logits,
            softmax: p.softmax,
            grade: data.test.grades(),
            group: data.test.groups(),
        }
        .write(&dir.join(predictions_file(ck.iteration)))?;
    }
    ValLogits {
        item_id: data.val.ids(),
        iterations: model.checkpoints.iter().map(|c| c.iteration).collect(),
        logits: model.checkpoints.iter().map(|c| c.val_logits.clone()).collect(),
    }
    .write(&dir.join(VAL_LOGITS_FILE))?;
    let loss: Vec<Vec<String>> = model
        .loss_history
        .iter()
        .enumerate()
        .map(|(i, l)| vec![(i + 1).to_string(), fmt(*l)])
        .collect();
    write_csv(&dir.join(LOSS_FILE), &["iteration", "loss"], &loss)?;
    model
        .best_checkpoint()
        .scorer
        .save(dir, MODEL_STEM)
        .map_err(|e| RunError::stage("checkpoint", e))?;
    if cfg.dump_clicks {
        write_text(&dir.join(CLICKS_FILE), &click_log_csv(sessions, &data.train.ids()))?;
    }
    Ok(())
}

/// Trains one seed and writes its directory. Failures are recorded in the
/// seed's `summary.json` rather than returned.
pub fn run_seed(cfg: &ExperimentConfig, data: &PreparedData, run: &Path, seed: u64) -> SeedSummary {
    let dir = seed_dir(run, seed);
    let mut summary = SeedSummary {
        seed,
        config_hash: cfg.hash(),
        best_iteration: None,
        checkpoints: Vec::new(),
        error: None,
    };
    let result = (|| {
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| RunError::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| RunError::io(&dir, e))?;
        let (model, sessions) = train_seed(cfg, data, seed)?;
        write_seed_outputs(cfg, data, &dir, &model, &sessions)?;
        Ok::<_, RunError>(model)
    })();
    match result {
        Ok(model) => {
            summary.best_iteration = Some(model.best_checkpoint().iteration);
            summary.checkpoints = model
                .checkpoints
                .iter()
                .map(|c| CheckpointInfo {
                    iteration: c.iteration,
                    val_ndcg: c.val_ndcg,
                })
                .collect();
        }
        Err(e) => summary.error = Some(e.to_string()),
    }
    if let Err(e) = write_json(&dir.join(SUMMARY_FILE), &summary) {
        summary.error.get_or_insert(e.to_string());
    }
    summary
}

/// True when `seed` already finished successfully under this config.
pub fn seed_done(cfg: &ExperimentConfig, run: &Path, seed: u64) -> bool {
    read_summary(run, seed).is_ok_and(|s| s.ok() && s.config_hash == cfg.hash())
}

/// Test predictions of a seed's selected checkpoint plus its validation
/// logits, as read back from disk.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub best_iteration: usize,
    pub predictions: PredictionTable,
    pub val: ValLogits,
}

impl SeedData {
    pub fn scores(&self, kind: ScoreKind) -> &[f64] {
        match kind {
            ScoreKind::Logit => &self.predictions.logit,
            ScoreKind::Softmax => &self.predictions.softmax,
        }
    }
}

pub fn load_seed(run: &Path, seed: u64) -> Result<SeedData, RunError> {
    let summary = read_summary(run, seed)?;
    let dir = seed_dir(run, seed);
    let best_iteration = match (&summary.error, summary.best_iteration) {
        (None, Some(b)) => b,
        (err, _) => {
            return Err(RunError::Stage {
                stage: "load",
                message: format!(
                    "seed {seed} did not finish: {}",
                    err.as_deref().unwrap_or("no checkpoint selected")
                ),
            })
        }
    };
    Ok(SeedData {
        seed,
        best_iteration,
        predictions: PredictionTable::read(&dir.join(predictions_file(best_iteration)))?,
        val: ValLogits::read(&dir.join(VAL_LOGITS_FILE))?,
    })
}

/// Loads every finished seed and checks that all share one test list.
pub fn load_seeds(run: &Path, seeds: &[u64]) -> Result<Vec<SeedData>, RunError> {
    let data: Vec<SeedData> = seeds
        .iter()
        .filter(|&&s| read_summary(run, s).is_ok_and(|x| x.ok()))
        .map(|&s| load_seed(run, s))
        .collect::<Result<_, _>>()?;
    if let Some(first) = data.first() {
        for d in &data[1..] {
            if d.predictions.item_id != first.predictions.item_id
                || d.val.item_id != first.val.item_id
            {
                return Err(RunError::stage(
                    "load",
                    format!("seed {} evaluated a different item list", d.seed),
                ));
            }
        }
    }
    Ok(data)
}

pub fn true_relevance(grades: &[u8]) -> Vec<f64> {
    grades.iter().map(|&g| g as f64).collect()
}

/// (metric name, value) pairs of a report, in output order.
pub fn report_metrics(r: &FairnessReport) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("ndcg_at_k", Some(r.ndcg_at_k)),
        ("demographic_parity", r.demographic_parity),
        ("exposure_fairness", r.exposure_fairness),
        ("individual_fairness", Some(r.individual_fairness)),
        ("group_exposure_0", Some(r.group_exposure[0])),
        ("group_exposure_1", Some(r.group_exposure[1])),
        ("group_relevance_0", Some(r.group_relevance[0])),
        ("group_relevance_1", Some(r.group_relevance[1])),
    ]
}

/// Fairness of the predicted ranking under true and predicted relevance.
/// The ranking sorts items by logit.
pub fn seed_fairness(
    d: &SeedData,
    k: usize,
    normalize: bool,
    score: ScoreKind,
) -> Result<[FairnessReport; 2], RunError> {
    let p = &d.predictions;
    let order = rank_by_score(&p.logit);
    let inputs = FairnessInputs {
        order: &order,
        grades: &p.grade,
        groups: &p.group,
        k,
        normalize,
    };
    let report = |rel: &[f64], src| {
        fairness_report(inputs, rel, src).map_err(|e| RunError::stage("fairness", e))
    };
    Ok([
        report(&true_relevance(&p.grade), RelevanceSource::TrueGrade)?,
        report(d.scores(score), RelevanceSource::Predicted)?,
    ])
}

pub fn fairness_rows(
    seeds: &[SeedData],
    cfg: &ExperimentConfig,
) -> Result<Vec<FairnessRow>, RunError> {
    let mut rows = Vec::new();
    for d in seeds {
        for r in seed_fairness(d, cfg.k, cfg.normalize, cfg.score)? {
            for (metric, value) in report_metrics(&r) {
                rows.push(FairnessRow {
                    seed: d.seed,
                    metric: metric.to_string(),
                    source: r.relevance_source.as_str().to_string(),
                    value,
                });
            }
        }
    }
    Ok(rows)
}

pub fn rule_name(spec: &InterventionSpec) -> &'static str {
    match spec.rule {
        fairrel_core::interventions::SelectionRule::MostUnderrepresented => "most_underrepresented",
        fairrel_core::interventions::SelectionRule::BestScore => "best_score",
    }
}

/// Applies each intervention to every seed's ranking, under both relevance
/// sources. Re-ranked lists go to `<run>/reranked/`.
pub fn intervene_run(
    run: &Path,
    seeds: &[SeedData],
    specs: &[InterventionSpec],
    k: usize,
    normalize: bool,
    score: ScoreKind,
) -> Result<Vec<InterventionRow>, RunError> {
    let mut rows = Vec::new();
    for d in seeds {
        let p = &d.predictions;
        let list = ScoredList {
            scores: &p.logit,
            grades: &p.grade,
            groups: &p.group,
        };
        let truth = true_relevance(&p.grade);
        for spec in specs {
            for (rel, src) in [
                (truth.as_slice(), RelevanceSource::TrueGrade),
                (d.scores(score), RelevanceSource::Predicted),
            ] {
                let rep = evaluate_intervention(list, rel, src, spec.algorithm, spec.rule, k, normalize)
                    .map_err(|e| {
                        RunError::stage(
                            "interventions",
                            format!("seed {} {}: {e}", d.seed, spec.algorithm.as_str()),
                        )
                    })?;
                let name = format!(
                    "seed_{}_{}_{}_{}.csv",
                    d.seed,
                    spec.algorithm.as_str(),
                    rule_name(spec),
                    src.as_str()
                );
                write_text(
                    &run.join("reranked").join(name),
                    &reranked_csv(&rep.reranked, &p.item_id),
                )?;
                let base = InterventionRow {
                    seed: d.seed,
                    algorithm: spec.algorithm.as_str().to_string(),
                    rule: rule_name(spec).to_string(),
                    k,
                    source: src.as_str().to_string(),
                    stage: String::new(),
                    metric: String::new(),
                    value: None,
                };
                rows.push(InterventionRow {
                    stage: "target".into(),
                    metric: "share_group_0".into(),
                    value: Some(rep.targets.p[0]),
                    ..base.clone()
                });
                for (stage, r) in [("pre", &rep.pre), ("post", &rep.post)] {
                    for (metric, value) in report_metrics(r).into_iter().take(4) {
                        rows.push(InterventionRow {
                            stage: stage.into(),
                            metric: metric.into(),
                            value,
                            ..base.clone()
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Desiderata inputs re-derived from the seed files.
pub fn audit_inputs(seeds: &[SeedData], cfg: &ExperimentConfig) -> Result<AuditInputs, RunError> {
    let first = seeds
        .first()
        .ok_or_else(|| RunError::stage("audit", "no finished seeds"))?;
    Ok(AuditInputs {
        runs: seeds
            .iter()
            .map(|d| SeedRun {
                seed: d.seed,
                test_logits: d.predictions.logit.clone(),
                test_softmax: d.predictions.softmax.clone(),
                checkpoints: d
                    .val
                    .iterations
                    .iter()
                    .zip(&d.val.logits)
                    .map(|(&iteration, l)| CheckpointLogits {
                        iteration,
                        logits: l.clone(),
                    })
                    .collect(),
            })
            .collect(),
        grades: first.predictions.grade.clone(),
        groups: first.predictions.group.clone(),
        thresholds: cfg.thresholds,
        score: cfg.score,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiderataFile {
    pub name: String,
    pub seeds: Vec<u64>,
    pub report: DesiderataReport,
}

/// Run-level aggregation: fairness, interventions and desiderata, all read
/// back from the seed directories. Returns the stage errors.
pub fn aggregate(run: &Path, cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut errors = BTreeMap::new();
    let seeds = match load_seeds(run, &cfg.seeds) {
        Ok(s) if s.is_empty() => {
            errors.insert("load".into(), "no finished seeds".into());
            return errors;
        }
        Ok(s) => s,
        Err(e) => {
            errors.insert("load".into(), e.to_string());
            return errors;
        }
    };
    let mut record = |stage: &str, r: Result<(), RunError>| {
        if let Err(e) = r {
            errors.insert(stage.to_string(), e.to_string());
        }
    };
    record(
        "fairness",
        fairness_rows(&seeds, cfg).and_then(|rows| write_fairness(&run.join(FAIRNESS_FILE), &rows)),
    );
    if !cfg.interventions.is_empty() {
        record(
            "interventions",
            intervene_run(run, &seeds, &cfg.interventions, cfg.k, cfg.normalize, cfg.score)
                .and_then(|rows| write_interventions(&run.join(INTERVENTIONS_FILE), &rows)),
        );
    }
    record(
        "desiderata",
        audit_inputs(&seeds, cfg).and_then(|inputs| {
            let report = audit_all(&inputs);
            write_text(
                &run.join(DESIDERATA_TXT),
                &format_table(&[(cfg.name.as_str(), &report)]),
            )?;
            write_json(
                &run.join(DESIDERATA_JSON),
                &DesiderataFile {
                    name: cfg.name.clone(),
                    seeds: seeds.iter().map(|d| d.seed).collect(),
                    report,
                },
            )
        }),
    );
    errors
}

pub fn write_manifest(
    run: &Path,
    cfg: &ExperimentConfig,
    stage_errors: BTreeMap<String, String>,
) -> Result<Manifest, RunError> {
    let manifest = Manifest {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        seeds: collect_seed_entries(run, cfg),
        stage_errors,
    };
    write_json(&run.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep seed directories already finished under the same config.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: Manifest,
}

/// Trains every seed (in parallel), then aggregates and writes the manifest.
/// Seed failures are recorded and the remaining seeds still run.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let run = cfg.output_dir.clone();
    fs::create_dir_all(&run).map_err(|e| RunError::io(&run, e))?;
    write_config(&run, cfg)?;
    let mut stage_errors = BTreeMap::new();
    let pending: Vec<u64> = cfg
        .seeds
        .iter()
        .copied()
        .filter(|&s| !(opts.resume && seed_done(cfg, &run, s)))
        .collect();
    if !pending.is_empty() {
        match prepare_data(cfg) {
            Ok(data) => {
                pending.par_iter().for_each(|&seed| {
                    run_seed(cfg, &data, &run, seed);
                });
            }
            Err(e) => {
                stage_errors.insert("data".to_string(), e.to_string());
            }
        }
    }
    if stage_errors.is_empty() {
        stage_errors.extend(aggregate(&run, cfg));
    }
    let manifest = write_manifest(&run, cfg, stage_errors)?;
    Ok(RunOutcome {
        run_dir: run,
        manifest,
    })
}
