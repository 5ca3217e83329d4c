//! Run-directory layout and the readers/writers for every file in it.
//!
//! ```text
//! <run>/config.json
//! <run>/manifest.json
//! <run>/seed_<s>/summary.json
//! <run>/seed_<s>/predictions_<iteration>.csv
//! <run>/seed_<s>/val_logits.csv
//! <run>/seed_<s>/loss.csv
//! <run>/seed_<s>/model_best.{json,bin}
//! <run>/seed_<s>/clicks.csv            (optional)
//! <run>/fairness.csv
//! <run>/interventions.csv
//! <run>/desiderata.{json,txt}
//! <run>/plots/
//! ```
//!
//! Reals are written with 6 significant digits and JSON objects with
//! sorted keys, so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fairrel_core::{format_sig, Group};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{hex_digest, ExperimentConfig};
use crate::error::RunError;

pub const SIG_DIGITS: usize = 6;
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const VAL_LOGITS_FILE: &str = "val_logits.csv";
pub const LOSS_FILE: &str = "loss.csv";
pub const CLICKS_FILE: &str = "clicks.csv";
pub const MODEL_STEM: &str = "model_best";
pub const FAIRNESS_FILE: &str = "fairness.csv";
pub const INTERVENTIONS_FILE: &str = "interventions.csv";
pub const DESIDERATA_JSON: &str = "desiderata.json";
pub const DESIDERATA_TXT: &str = "desiderata.txt";
pub const PLOTS_DIR: &str = "plots";

pub fn fmt(v: f64) -> String {
    format_sig(v, SIG_DIGITS)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt)
}

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed_{seed}"))
}

pub fn predictions_file(iteration: usize) -> String {
    format!("predictions_{iteration}.csv")
}

pub fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| RunError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| RunError::io(path, e))
}

/// Pretty JSON with sorted object keys and a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let v = serde_json::to_value(value).map_err(|e| RunError::json(path, e))?;
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| RunError::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| RunError::json(path, e))
}

/// CSV text from a header and pre-formatted rows.
pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for r in rows {
        w.write_record(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
    write_text(path, &csv_text(header, rows))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| RunError::csv(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| RunError::csv(path, e))
}

pub fn file_digest(path: &Path) -> Result<String, RunError> {
    let bytes = fs::read(path).map_err(|e| RunError::io(path, e))?;
    Ok(hex_digest(&bytes))
}

pub fn write_config(run: &Path, cfg: &ExperimentConfig) -> Result<(), RunError> {
    write_json(&run.join(CONFIG_FILE), cfg)
}

pub fn read_config(run: &Path) -> Result<ExperimentConfig, RunError> {
    read_json(&run.join(CONFIG_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub iteration: usize,
    pub val_ndcg: f64,
}

/// Written last by a seed job; its presence marks the job as finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub config_hash: String,
    pub best_iteration: Option<usize>,
    pub checkpoints: Vec<CheckpointInfo>,
    pub error: Option<String>,
}

impl SeedSummary {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.best_iteration.is_some()
    }
}

pub fn read_summary(run: &Path, seed: u64) -> Result<SeedSummary, RunError> {
    read_json(&seed_dir(run, seed).join(SUMMARY_FILE))
}

/// Test-set predictions of one checkpoint, in item order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionTable {
    pub item_id: Vec<usize>,
    pub logit: Vec<f64>,
    pub softmax: Vec<f64>,
    pub grade: Vec<u8>,
    pub group: Vec<Group>,
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    item_id: usize,
    logit: f64,
    softmax: f64,
    grade: u8,
    group: Group,
}

pub const PREDICTION_HEADER: [&str; 5] = ["item_id", "logit", "softmax", "grade", "group"];

impl PredictionTable {
    pub fn len(&self) -> usize {
        self.item_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_id.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<(), RunError> {
        let rows: Vec<Vec<String>> = (0..self.len())
            .map(|i| {
                vec![
                    self.item_id[i].to_string(),
                    fmt(self.logit[i]),
                    fmt(self.softmax[i]),
                    self.grade[i].to_string(),
                    self.group[i].to_string(),
                ]
            })
            .collect();
        write_csv(path, &PREDICTION_HEADER, &rows)
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        let mut t = PredictionTable::default();
        for r in read_csv::<PredictionRow>(path)? {
            t.item_id.push(r.item_id);
            t.logit.push(r.logit);
            t.softmax.push(r.softmax);
            t.grade.push(r.grade);
            t.group.push(r.group);
        }
        if t.is_empty() {
            return Err(RunError::format(path, "no prediction rows"));
        }
        Ok(t)
    }
}

/// Validation logits of every checkpoint: one column per iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValLogits {
    pub item_id: Vec<usize>,
    pub iterations: Vec<usize>,
    /// `logits[c][i]`: checkpoint `c`, item `i`.
    pub logits: Vec<Vec<f64>>,
}

impl ValLogits {
    pub fn write(&self, path: &Path) -> Result<(), RunError> {
        let mut header = vec!["item_id".to_string()];
        header.extend(self.iterations.iter().map(|i| format!("iter_{i}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = (0..self.item_id.len())
            .map(|i| {
                std::iter::once(self.item_id[i].to_string())
                    .chain(self.logits.iter().map(|col| fmt(col[i])))
                    .collect()
            })
            .collect();
        write_csv(path, &header, &rows)
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| RunError::csv(path, e))?;
        let header = r.headers().map_err(|e| RunError::csv(path, e))?.clone();
        let mut iterations = Vec::new();
        for h in header.iter().skip(1) {
            let it = h
                .strip_prefix("iter_")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| RunError::format(path, format!("bad column {h:?}")))?;
            iterations.push(it);
        }
        let mut out = ValLogits {
            item_id: Vec::new(),
            logits: vec![Vec::new(); iterations.len()],
            iterations,
        };
        for rec in r.records() {
            let rec = rec.map_err(|e| RunError::csv(path, e))?;
            let parse_err = |f: &str| RunError::format(path, format!("bad value {f:?}"));
            let id = rec.get(0).unwrap_or_default();
            out.item_id.push(id.parse().map_err(|_| parse_err(id))?);
            for (c, f) in rec.iter().skip(1).enumerate() {
                out.logits[c].push(f.parse().map_err(|_| parse_err(f))?);
            }
        }
        Ok(out)
    }
}

/// One line of `fairness.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub seed: u64,
    pub metric: String,
    pub source: String,
    /// `None` when the ratio is undefined (written as `NA`).
    pub value: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawFairnessRow {
    seed: u64,
    metric: String,
    source: String,
    value: String,
}

pub fn parse_value(s: &str) -> Option<f64> {
    if s == "NA" {
        None
    } else {
        s.parse().ok()
    }
}

pub fn write_fairness(path: &Path, rows: &[FairnessRow]) -> Result<(), RunError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.metric.clone(),
                r.source.clone(),
                fmt_opt(r.value),
            ]
        })
        .collect();
    write_csv(path, &["seed", "metric", "source", "value"], &body)
}

pub fn read_fairness(path: &Path) -> Result<Vec<FairnessRow>, RunError> {
    read_csv::<RawFairnessRow>(path)?
        .into_iter()
        .map(|r| {
            let value = parse_value(&r.value);
            if value.is_none() && r.value != "NA" {
                return Err(RunError::format(path, format!("bad value {:?}", r.value)));
            }
            Ok(FairnessRow {
                seed: r.seed,
                metric: r.metric,
                source: r.source,
                value,
            })
        })
        .collect()
}

/// One line of `interventions.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRow {
    pub seed: u64,
    pub algorithm: String,
    pub rule: String,
    pub k: usize,
    pub source: String,
    pub stage: String,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawInterventionRow {
    seed: u64,
    algorithm: String,
    rule: String,
    k: usize,
    source: String,
    stage: String,
    metric: String,
    value: String,
}

pub const INTERVENTION_HEADER: [&str; 8] = [
    "seed", "algorithm", "rule", "k", "source", "stage", "metric", "value",
];

pub fn write_interventions(path: &Path, rows: &[InterventionRow]) -> Result<(), RunError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.algorithm.clone(),
                r.rule.clone(),
                r.k.to_string(),
                r.source.clone(),
                r.stage.clone(),
                r.metric.clone(),
                fmt_opt(r.value),
            ]
        })
        .collect();
    write_csv(path, &INTERVENTION_HEADER, &body)
}

pub fn read_interventions(path: &Path) -> Result<Vec<InterventionRow>, RunError> {
    Ok(read_csv::<RawInterventionRow>(path)?
        .into_iter()
        .map(|r| InterventionRow {
            value: parse_value(&r.value),
            seed: r.seed,
            algorithm: r.algorithm,
            rule: r.rule,
            k: r.k,
            source: r.source,
            stage: r.stage,
            metric: r.metric,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub best_iteration: Option<usize>,
    /// SHA-256 of every file in the seed directory, by file name.
    pub digests: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub seeds: Vec<SeedEntry>,
    /// Errors of run-level stages, by stage name.
    pub stage_errors: BTreeMap<String, String>,
}

impl Manifest {
    pub fn ok(&self) -> bool {
        self.stage_errors.is_empty() && self.seeds.iter().all(|s| s.ok)
    }

    pub fn ok_seeds(&self) -> Vec<u64> {
        self.seeds.iter().filter(|s| s.ok).map(|s| s.seed).collect()
    }
}

/// Scans the seed directories named by `cfg` and digests their files.
pub fn collect_seed_entries(run: &Path, cfg: &ExperimentConfig) -> Vec<SeedEntry> {
    cfg.seeds
        .iter()
        .map(|&seed| {
            let dir = seed_dir(run, seed);
            let summary = read_summary(run, seed);
            let mut digests = BTreeMap::new();
            if let Ok(entries) = fs::read_dir(&dir) {
                for e in entries.flatten() {
                    let p = e.path();
                    if p.is_file() {
                        if let Ok(d) = file_digest(&p) {
                            digests.insert(e.file_name().to_string_lossy().into_owned(), d);
                        }
                    }
                }
            }
            match summary {
                Ok(s) => {
                    let error = if s.config_hash != cfg.hash() {
                        Some("summary written under a different config".to_string())
                    } else {
                        s.error.clone()
                    };
                    SeedEntry {
                        seed,
                        ok: error.is_none() && s.best_iteration.is_some(),
                        error,
                        best_iteration: s.best_iteration,
                        digests,
                    }
                }
                Err(e) => SeedEntry {
                    seed,
                    ok: false,
                    error: Some(e.to_string()),
                    best_iteration: None,
                    digests,
                },
            }
        })
        .collect()
}

pub fn read_manifest(run: &Path) -> Result<Manifest, RunError> {
    read_json(&run.join(MANIFEST_FILE))
}
