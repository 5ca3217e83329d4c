//! Group-imbalance sweep: the full protocol on subsamples with a growing
//! majority share.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::compare::{seed_pairs, Summary};
use crate::config::{DatasetSpec, ExperimentConfig, Imbalance};
use crate::error::RunError;
use crate::layout::*;
use crate::run::{run_experiment, RunOptions};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_METRICS: [&str; 2] = ["exposure_fairness", "individual_fairness"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub metric: String,
    pub n_seeds: usize,
    pub true_mean: f64,
    pub predicted_mean: f64,
    /// Per-seed `predicted − true`, summarized.
    pub delta: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<PathBuf>,
}

impl SweepReport {
    /// Mean deltas of `metric`, in fraction order.
    pub fn deltas(&self, metric: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.fraction, r.delta.mean))
            .collect()
    }
}

/// Config for one sweep point: same protocol, subsampled dataset, own
/// output directory below the base run.
pub fn fraction_config(base: &ExperimentConfig, fraction: f64) -> Result<ExperimentConfig, RunError> {
    let mut cfg = base.clone();
    match &mut cfg.dataset {
        DatasetSpec::Synthetic { imbalance, .. } => {
            *imbalance = Some(Imbalance {
                majority_fraction: fraction,
                n_out: base.sweep.n_out,
            })
        }
        DatasetSpec::Libsvm { .. } => {
            return Err(RunError::Config(
                "the imbalance sweep needs a synthetic dataset".into(),
            ))
        }
    }
    let tag = format!("frac_{}", fmt(fraction));
    cfg.name = format!("{}-{tag}", base.name);
    cfg.output_dir = base.output_dir.join("sweep").join(tag);
    Ok(cfg)
}

pub fn sweep_imbalance(base: &ExperimentConfig, opts: RunOptions) -> Result<SweepReport, RunError> {
    if base.sweep.fractions.is_empty() {
        return Err(RunError::Config("no sweep fractions".into()));
    }
    let mut report = SweepReport {
        rows: Vec::new(),
        runs: Vec::new(),
    };
    for &fraction in &base.sweep.fractions {
        let cfg = fraction_config(base, fraction)?;
        let out = run_experiment(&cfg, opts)?;
        if !out.manifest.ok() {
            return Err(RunError::stage(
                "sweep",
                format!(
                    "fraction {fraction}: run {} reported errors",
                    out.run_dir.display()
                ),
            ));
        }
        let rows = read_fairness(&out.run_dir.join(FAIRNESS_FILE))?;
        for metric in SWEEP_METRICS {
            let (_, t, p) = seed_pairs(&rows, metric);
            let delta: Vec<f64> = p.iter().zip(&t).map(|(p, t)| p - t).collect();
            report.rows.push(SweepRow {
                fraction,
                metric: metric.to_string(),
                n_seeds: t.len(),
                true_mean: Summary::of(&t).mean,
                predicted_mean: Summary::of(&p).mean,
                delta: Summary::of(&delta),
            });
        }
        report.runs.push(out.run_dir);
    }
    let body: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let defined = |v: f64| fmt_opt((r.n_seeds > 0).then_some(v));
            vec![
                fmt(r.fraction),
                r.metric.clone(),
                r.n_seeds.to_string(),
                defined(r.true_mean),
                defined(r.predicted_mean),
                defined(r.delta.mean),
                defined(r.delta.sd),
            ]
        })
        .collect();
    write_csv(
        &base.output_dir.join(SWEEP_FILE),
        &[
            "fraction",
            "metric",
            "n_seeds",
            "true_mean",
            "predicted_mean",
            "delta_mean",
            "delta_sd",
        ],
        &body,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetKind, Preset};

    #[test]
    fn fraction_configs_get_distinct_dirs_and_hashes() {
        let base = ExperimentConfig::preset(Preset::Desk, DatasetKind::SynthNormal);
        let a = fraction_config(&base, 0.5).unwrap();
        let b = fraction_config(&base, 0.9).unwrap();
        assert_ne!(a.output_dir, b.output_dir);
        assert_ne!(a.hash(), b.hash());
        assert!(a.output_dir.ends_with("sweep/frac_0.5"));
    }
}
