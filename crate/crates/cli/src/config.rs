//! Experiment configuration: a single JSON document per run.

use std::path::{Path, PathBuf};

use fairrel_core::clickmodel::PbmConfig;
use fairrel_core::datagen::{DagConfig, UtilityDist};
use fairrel_core::desiderata::{ScoreKind, Thresholds};
use fairrel_core::interventions::{Algorithm, SelectionRule};
use fairrel_core::ranker::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::RunError;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FAIRREL_OUT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

/// Subsample drawn from a synthetic pool with a fixed majority share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imbalance {
    /// Share of group 0 in the subsample.
    pub majority_fraction: f64,
    pub n_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        dag: DagConfig,
        /// Seed for data generation and splitting. Training seeds vary
        /// independently, so every seed sees the same test list.
        data_seed: u64,
        #[serde(default)]
        imbalance: Option<Imbalance>,
    },
    Libsvm {
        path: PathBuf,
        grade_max: u8,
        data_seed: u64,
    },
}

impl DatasetSpec {
    pub fn data_seed(&self) -> u64 {
        match self {
            DatasetSpec::Synthetic { data_seed, .. } | DatasetSpec::Libsvm { data_seed, .. } => {
                *data_seed
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub rule: SelectionRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub n_out: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fractions: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            n_out: 25_000,
        }
    }
}

/// Named datasets with ready-made generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    SynthNormal,
    SynthPareto,
    /// Synthetic stand-in for the binary-graded, 90/10 web corpus setting.
    FairtrecAnalog,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [
        DatasetKind::SynthNormal,
        DatasetKind::SynthPareto,
        DatasetKind::FairtrecAnalog,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::SynthNormal => "synth-normal",
            DatasetKind::SynthPareto => "synth-pareto",
            DatasetKind::FairtrecAnalog => "fairtrec-analog",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Small enough for continuous integration.
    Desk,
    Full,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Preset::Desk),
            "full" => Some(Preset::Full),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub pbm: PbmConfig,
    /// `train.seed` is replaced by each entry of `seeds`.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub k: usize,
    /// Min-max normalize exposure and relevance before the fairness ratios.
    pub normalize: bool,
    pub score: ScoreKind,
    #[serde(default)]
    pub interventions: Vec<InterventionSpec>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub dump_clicks: bool,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, kind: DatasetKind) -> Self {
        let (n, iterations, n_seeds, n_out) = match preset {
            Preset::Desk => (5_000, 200, 5, 2_500),
            Preset::Full => (50_000, 500, 10, 25_000),
        };
        let mut dag = match kind {
            DatasetKind::SynthPareto => DagConfig::new(UtilityDist::pareto()),
            _ => DagConfig::new(UtilityDist::normal()),
        };
        dag.n = n;
        let mut pbm = PbmConfig::default();
        if kind == DatasetKind::FairtrecAnalog {
            dag.n_grades = 2;
            dag.p_group = 0.9;
            pbm.grade_max = 1;
        }
        let train = TrainConfig {
            iterations,
            ..TrainConfig::default()
        };
        let name = kind.as_str().to_string();
        ExperimentConfig {
            output_dir: default_out_root().join(&name),
            name,
            dataset: DatasetSpec::Synthetic {
                dag,
                data_seed: 2024,
                imbalance: None,
            },
            split: [0.7, 0.1, 0.2],
            pbm,
            train,
            seeds: (1..=n_seeds).collect(),
            k: 10,
            normalize: true,
            score: ScoreKind::default(),
            interventions: Vec::new(),
            thresholds: Thresholds::default(),
            dump_clicks: false,
            sweep: SweepConfig {
                n_out,
                ..SweepConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad(format!("seeds must be distinct: {:?}", self.seeds));
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("invalid run name {:?}", self.name));
        }
        self.pbm
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        if let DatasetSpec::Synthetic { dag, .. } = &self.dataset {
            dag.validate().map_err(|e| RunError::Config(e.to_string()))?;
            if dag.n_grades == 0 || dag.n_grades - 1 != self.pbm.grade_max {
                return bad(format!(
                    "pbm.grade_max {} does not match {} generated grades",
                    self.pbm.grade_max, dag.n_grades
                ));
            }
        }
        Ok(())
    }

    /// Canonical JSON: object keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        hex_digest(self.canonical_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| RunError::json(path, e))
    }
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
