//! True-versus-predicted fairness comparison across seeds and items.

use std::collections::BTreeMap;
use std::path::Path;

use fairrel_core::metrics::{individual_gaps, item_exposure, rank_by_score};
use fairrel_core::stats::{kruskal_wallis, wilcoxon_signed_rank, TestResult, WILCOXON_MIN_PAIRS};
use serde::{Deserialize, Serialize};

use crate::error::RunError;
use crate::layout::*;
use crate::run::{load_seeds, true_relevance};

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    /// Mean and sd of `values`; both are 0 when `values` is empty.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary { n, mean: 0.0, sd: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { n, mean, sd }
    }

    pub fn display(&self) -> String {
        if self.n == 0 {
            return "NA".into();
        }
        format!("{:.3} ± {:.3}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub metric: String,
    /// `seeds` pairs one value per seed; `items` pairs per-item values
    /// averaged over seeds.
    pub aggregation: String,
    pub n_pairs: usize,
    pub true_relevance: Summary,
    pub predicted_relevance: Summary,
    pub wilcoxon: Option<TestResult>,
    /// Two-sample Kruskal–Wallis on the same values, ignoring the pairing.
    pub unpaired: Option<TestResult>,
    /// Fewer than the minimum number of usable pairs, or no differences.
    pub degenerate: bool,
    pub error: Option<String>,
}

fn paired(metric: &str, aggregation: &str, t: &[f64], p: &[f64]) -> PairedComparison {
    let mut out = PairedComparison {
        metric: metric.to_string(),
        aggregation: aggregation.to_string(),
        n_pairs: t.len(),
        true_relevance: Summary::of(t),
        predicted_relevance: Summary::of(p),
        wilcoxon: None,
        unpaired: None,
        degenerate: t.len() < WILCOXON_MIN_PAIRS,
        error: None,
    };
    match wilcoxon_signed_rank(t, p) {
        Ok(w) => {
            out.degenerate |= w.degenerate;
            out.wilcoxon = Some(w);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    match kruskal_wallis(&[t, p]) {
        Ok(k) => out.unpaired = Some(k),
        Err(e) => {
            out.error.get_or_insert(e.to_string());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub name: String,
    pub seeds: Vec<u64>,
    pub ndcg_at_k: Summary,
    pub comparisons: Vec<PairedComparison>,
}

impl CompareReport {
    pub fn get(&self, metric: &str, aggregation: &str) -> Option<&PairedComparison> {
        self.comparisons
            .iter()
            .find(|c| c.metric == metric && c.aggregation == aggregation)
    }

    /// Aligned text table: one row per comparison.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{}  (NDCG@k {}, {} seeds)\n",
            self.name,
            self.ndcg_at_k.display(),
            self.seeds.len()
        );
        out.push_str(&format!(
            "{:<22} {:<6} {:>18} {:>18} {:>6} {:>11} {:>11} {:>11}\n",
            "metric", "over", "true", "predicted", "pairs", "W", "p_paired", "p_unpaired"
        ));
        for c in &self.comparisons {
            let w = c.wilcoxon.as_ref();
            let u = c.unpaired.as_ref();
            let flag = if c.degenerate { " (degenerate)" } else { "" };
            out.push_str(&format!(
                "{:<22} {:<6} {:>18} {:>18} {:>6} {:>11} {:>11} {:>11}{flag}\n",
                c.metric,
                c.aggregation,
                c.true_relevance.display(),
                c.predicted_relevance.display(),
                c.n_pairs,
                w.map_or("NA".into(), |w| fmt(w.statistic)),
                w.map_or("NA".into(), |w| fmt(w.p_value)),
                u.map_or("NA".into(), |u| fmt(u.p_value)),
            ));
        }
        out
    }
}

pub const COMPARE_JSON: &str = "compare.json";
pub const COMPARE_TXT: &str = "compare.txt";

/// Per-seed (true, predicted) values of `metric` from `fairness.csv`,
/// keeping only seeds where both are defined.
pub fn seed_pairs(rows: &[FairnessRow], metric: &str) -> (Vec<u64>, Vec<f64>, Vec<f64>) {
    let mut by_seed: BTreeMap<u64, [Option<f64>; 2]> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        let slot = match r.source.as_str() {
            "true" => 0,
            "predicted" => 1,
            _ => continue,
        };
        by_seed.entry(r.seed).or_default()[slot] = r.value;
    }
    let mut seeds = Vec::new();
    let (mut t, mut p) = (Vec::new(), Vec::new());
    for (s, [a, b]) in by_seed {
        if let (Some(a), Some(b)) = (a, b) {
            seeds.push(s);
            t.push(a);
            p.push(b);
        }
    }
    (seeds, t, p)
}

/// Paired tests between fairness under true and predicted relevance.
///
/// Seed-level metrics come from `fairness.csv`. Per-item individual
/// fairness terms are recomputed from each seed's prediction file and
/// averaged over seeds before pairing.
pub fn compare_fairness(run: &Path) -> Result<CompareReport, RunError> {
    let cfg = read_config(run)?;
    let rows = read_fairness(&run.join(FAIRNESS_FILE))?;
    let mut comparisons = Vec::new();
    for metric in ["exposure_fairness", "demographic_parity", "individual_fairness"] {
        let (_, t, p) = seed_pairs(&rows, metric);
        comparisons.push(paired(metric, "seeds", &t, &p));
    }

    let seeds = load_seeds(run, &cfg.seeds)?;
    if let Some(first) = seeds.first() {
        let n = first.predictions.len();
        let (mut t_sum, mut p_sum) = (vec![0.0; n], vec![0.0; n]);
        for d in &seeds {
            let exposure = item_exposure(&rank_by_score(&d.predictions.logit), cfg.k);
            let gaps = |rel: &[f64]| {
                individual_gaps(&exposure, rel, cfg.normalize)
                    .map_err(|e| RunError::stage("compare", e))
            };
            let gt = gaps(&true_relevance(&d.predictions.grade))?;
            let gp = gaps(d.scores(cfg.score))?;
            for i in 0..n {
                t_sum[i] += gt[i];
                p_sum[i] += gp[i];
            }
        }
        let m = seeds.len() as f64;
        let t: Vec<f64> = t_sum.iter().map(|v| v / m).collect();
        let p: Vec<f64> = p_sum.iter().map(|v| v / m).collect();
        comparisons.push(paired("individual_fairness", "items", &t, &p));
    }

    let ndcg: Vec<f64> = rows
        .iter()
        .filter(|r| r.metric == "ndcg_at_k" && r.source == "true")
        .filter_map(|r| r.value)
        .collect();
    let report = CompareReport {
        name: cfg.name.clone(),
        seeds: seeds.iter().map(|d| d.seed).collect(),
        ndcg_at_k: Summary::of(&ndcg),
        comparisons,
    };
    write_json(&run.join(COMPARE_JSON), &report)?;
    write_text(&run.join(COMPARE_TXT), &report.table())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_values_are_degenerate_with_unit_p() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let c = paired("exposure_fairness", "seeds", &v, &v);
        assert!(c.degenerate);
        assert_eq!(c.wilcoxon.unwrap().p_value, 1.0);
    }

    #[test]
    fn too_few_pairs_are_flagged() {
        let c = paired("x", "seeds", &[1.0, 2.0, 3.0], &[1.5, 2.5, 2.0]);
        assert!(c.degenerate);
    }

    #[test]
    fn seed_pairs_drop_undefined_values() {
        let row = |seed, source: &str, value| FairnessRow {
            seed,
            metric: "exposure_fairness".into(),
            source: source.into(),
            value,
        };
        let rows = vec![
            row(1, "true", Some(2.0)),
            row(1, "predicted", Some(1.5)),
            row(2, "true", None),
            row(2, "predicted", Some(1.0)),
        ];
        let (seeds, t, p) = seed_pairs(&rows, "exposure_fairness");
        assert_eq!(seeds, vec![1]);
        assert_eq!((t, p), (vec![2.0], vec![1.5]));
    }

    #[test]
    fn summary_uses_sample_deviation() {
        let s = Summary::of(&[1.0, 2.0, 3.0]);
        assert_eq!((s.n, s.mean, s.sd), (3, 2.0, 1.0));
        assert_eq!(Summary::of(&[]).display(), "NA");
    }
}
