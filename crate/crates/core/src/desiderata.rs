//! Auditors for the five relevance desiderata: credibility, consistency,
//! stability, comparability and availability.
//!
//! Each auditor is a deterministic function of multi-seed prediction dumps.
//! Every result carries its raw statistics next to the boolean verdict, since
//! the thresholds are conventions rather than sharp boundaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{group_relevance, normalize01, MetricError};
use crate::stats::{self, StatsError, TestResult};
use crate::{Group, N_GROUPS};

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("no seed runs supplied")]
    NoRuns,
    #[error("insufficient seeds: need {needed}, got {got}")]
    InsufficientSeeds { needed: usize, got: usize },
    #[error("seed {seed}: insufficient checkpoints: need 2, got {got}")]
    InsufficientCheckpoints { seed: u64, got: usize },
    #[error("seed {seed}: {what} has length {found}, expected {expected}")]
    Length {
        seed: u64,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("fewer than two grade levels have items")]
    TooFewGrades,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Which form of the model output serves as predicted relevance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Logit,
    #[default]
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub alpha: f64,
    pub eps_consistency: f64,
    pub eps_stability: f64,
    pub rho_min: f64,
    pub ratio_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            alpha: 0.05,
            eps_consistency: 0.1,
            eps_stability: 1.0,
            rho_min: 0.3,
            ratio_tol: 0.05,
        }
    }
}

/// Validation-set logits snapshotted at one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLogits {
    pub iteration: usize,
    pub logits: Vec<f64>,
}

/// Everything one training seed contributes to an audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// Test-set logits of the selected checkpoint, one per item.
    pub test_logits: Vec<f64>,
    /// Softmax of `test_logits` over the whole test list.
    pub test_softmax: Vec<f64>,
    /// Validation logits per checkpoint, in training order.
    pub checkpoints: Vec<CheckpointLogits>,
}

impl SeedRun {
    pub fn scores(&self, kind: ScoreKind) -> &[f64] {
        match kind {
            ScoreKind::Logit => &self.test_logits,
            ScoreKind::Softmax => &self.test_softmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditInputs {
    pub runs: Vec<SeedRun>,
    /// True grades of the test items.
    pub grades: Vec<u8>,
    pub groups: Vec<Group>,
    pub thresholds: Thresholds,
    /// Score used by stability, comparability and availability. Credibility
    /// always uses softmax and consistency always uses logits.
    pub score: ScoreKind,
}

impl AuditInputs {
    fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }

    fn check(&self) -> Result<(), AuditError> {
        if self.runs.is_empty() {
            return Err(AuditError::NoRuns);
        }
        let n = self.grades.len();
        for r in &self.runs {
            for (what, len) in [
                ("test_logits", r.test_logits.len()),
                ("test_softmax", r.test_softmax.len()),
                ("groups", self.groups.len()),
            ] {
                if len != n {
                    return Err(AuditError::Length {
                        seed: r.seed,
                        what,
                        expected: n,
                        found: len,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeMedian {
    pub grade: u8,
    pub count: usize,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibilityResult {
    pub kruskal_wallis: TestResult,
    pub medians: Vec<GradeMedian>,
    pub medians_non_decreasing: bool,
    /// Grade levels in `0..=max grade` with no items.
    pub skipped_grades: Vec<u8>,
    pub alpha: f64,
    pub pass: bool,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPoint {
    pub iteration: usize,
    /// `S_n` averaged over seeds.
    pub mean: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    /// `S_n` for every checkpoint before the final one.
    pub curve: Vec<ConsistencyPoint>,
    /// First checkpoint iteration from which the mean curve stays at or
    /// below `epsilon`.
    pub n0: Option<usize>,
    pub per_seed_pass: Vec<bool>,
    pub epsilon: f64,
    pub pass: bool,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    /// Cross-item mean of the per-item standard deviation across seeds.
    pub mean_std: f64,
    pub max_std: f64,
    pub score: ScoreKind,
    pub epsilon: f64,
    pub pass: bool,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparability {
    pub seed: u64,
    pub rho: Option<f64>,
    pub rho_groups: [Option<f64>; N_GROUPS],
    /// `Rel(G0)/Rel(G1)` on normalized predicted scores.
    pub ratio_pred: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparabilityResult {
    /// Seed-averaged Spearman correlation; `None` if undefined for any seed.
    pub rho: Option<f64>,
    pub rho_groups: [Option<f64>; N_GROUPS],
    /// `Rel(G0)/Rel(G1)` on normalized true grades.
    pub ratio_true: Option<f64>,
    pub ratio_pred: Option<f64>,
    /// Seed-averaged `|ratio_true − ratio_pred|`.
    pub ratio_diff: Option<f64>,
    pub per_seed: Vec<SeedComparability>,
    pub score: ScoreKind,
    pub rho_min: f64,
    pub ratio_tol: f64,
    pub individual_pass: bool,
    pub group_pass: bool,
    pub flags: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityResult {
    pub all_defined: bool,
    pub undefined_count: usize,
    /// Two-sample KS between normalized grades and normalized predictions,
    /// one test per seed over its defined predictions.
    pub ks: Vec<TestResult>,
    pub max_p_value: f64,
    pub score: ScoreKind,
    pub alpha: f64,
    pub pass: bool,
    pub seeds: Vec<u64>,
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn credibility_from(
    values: &[&[f64]],
    grades: &[u8],
    alpha: f64,
    seeds: Vec<u64>,
) -> Result<CredibilityResult, AuditError> {
    let max_grade = grades.iter().copied().max().unwrap_or(0);
    let mut by_grade: Vec<Vec<f64>> = vec![Vec::new(); max_grade as usize + 1];
    for v in values {
        for (&x, &g) in v.iter().zip(grades) {
            by_grade[g as usize].push(x);
        }
    }
    let mut medians = Vec::new();
    let mut skipped_grades = Vec::new();
    let mut samples: Vec<&[f64]> = Vec::new();
    for (g, xs) in by_grade.iter_mut().enumerate() {
        if xs.is_empty() {
            skipped_grades.push(g as u8);
            continue;
        }
        xs.sort_by(f64::total_cmp);
        medians.push(GradeMedian {
            grade: g as u8,
            count: xs.len(),
            median: median_sorted(xs),
        });
        samples.push(xs);
    }
    if samples.len() < 2 {
        return Err(AuditError::TooFewGrades);
    }
    let kruskal_wallis = stats::kruskal_wallis(&samples)?;
    let medians_non_decreasing = medians.windows(2).all(|w| w[0].median <= w[1].median);
    let pass = kruskal_wallis.p_value < alpha && medians_non_decreasing;
    Ok(CredibilityResult {
        kruskal_wallis,
        medians,
        medians_non_decreasing,
        skipped_grades,
        alpha,
        pass,
        seeds,
    })
}

/// Softmax scores pooled over all seeds, grouped by true grade, tested with
/// Kruskal–Wallis. Passes when the medians differ significantly and never
/// decrease with grade.
pub fn audit_credibility(inputs: &AuditInputs) -> Result<CredibilityResult, AuditError> {
    inputs.check()?;
    let pooled: Vec<&[f64]> = inputs.runs.iter().map(|r| &r.test_softmax[..]).collect();
    credibility_from(
        &pooled,
        &inputs.grades,
        inputs.thresholds.alpha,
        inputs.seeds(),
    )
}

/// [`audit_credibility`] applied to each seed on its own.
pub fn audit_credibility_per_seed(
    inputs: &AuditInputs,
) -> Result<Vec<CredibilityResult>, AuditError> {
    inputs.check()?;
    inputs
        .runs
        .iter()
        .map(|r| {
            credibility_from(
                &[&r.test_softmax],
                &inputs.grades,
                inputs.thresholds.alpha,
                vec![r.seed],
            )
        })
        .collect()
}

fn mean_squared_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Index of the first point from which every value is `<= eps`.
fn settle_index(values: &[f64], eps: f64) -> Option<usize> {
    let mut n0 = None;
    for (i, &v) in values.iter().enumerate().rev() {
        if v <= eps {
            n0 = Some(i);
        } else {
            break;
        }
    }
    n0
}

/// `S_n`: mean squared difference between checkpoint-`n` validation logits
/// and those of the final checkpoint. The verdict reads the seed-averaged
/// curve.
pub fn audit_consistency(inputs: &AuditInputs) -> Result<ConsistencyResult, AuditError> {
    if inputs.runs.is_empty() {
        return Err(AuditError::NoRuns);
    }
    let eps = inputs.thresholds.eps_consistency;
    let first = &inputs.runs[0];
    let n_ckpt = first.checkpoints.len();
    let mut per_seed_curves = Vec::new();
    for r in &inputs.runs {
        if r.checkpoints.len() < 2 {
            return Err(AuditError::InsufficientCheckpoints {
                seed: r.seed,
                got: r.checkpoints.len(),
            });
        }
        if r.checkpoints.len() != n_ckpt {
            return Err(AuditError::Length {
                seed: r.seed,
                what: "checkpoints",
                expected: n_ckpt,
                found: r.checkpoints.len(),
            });
        }
        let last = &r.checkpoints[n_ckpt - 1].logits;
        let mut curve = Vec::with_capacity(n_ckpt - 1);
        for c in &r.checkpoints[..n_ckpt - 1] {
            if c.logits.len() != last.len() {
                return Err(AuditError::Length {
                    seed: r.seed,
                    what: "checkpoint logits",
                    expected: last.len(),
                    found: c.logits.len(),
                });
            }
            curve.push(mean_squared_diff(&c.logits, last));
        }
        per_seed_curves.push(curve);
    }
    let curve: Vec<ConsistencyPoint> = (0..n_ckpt - 1)
        .map(|i| {
            let per_seed: Vec<f64> = per_seed_curves.iter().map(|c| c[i]).collect();
            ConsistencyPoint {
                iteration: first.checkpoints[i].iteration,
                mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                per_seed,
            }
        })
        .collect();
    let means: Vec<f64> = curve.iter().map(|p| p.mean).collect();
    let n0 = settle_index(&means, eps).map(|i| curve[i].iteration);
    let per_seed_pass = per_seed_curves
        .iter()
        .map(|c| settle_index(c, eps).is_some())
        .collect();
    Ok(ConsistencyResult {
        pass: n0.is_some(),
        curve,
        n0,
        per_seed_pass,
        epsilon: eps,
        seeds: inputs.seeds(),
    })
}

/// Subtracts the list mean and divides by the list standard deviation.
/// A constant list maps to zeros.
pub fn z_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// Per-item population standard deviation of z-normalized scores across
/// seeds, averaged over items.
pub fn audit_stability(inputs: &AuditInputs) -> Result<StabilityResult, AuditError> {
    inputs.check()?;
    let m = inputs.runs.len();
    if m < 2 {
        return Err(AuditError::InsufficientSeeds { needed: 2, got: m });
    }
    let z: Vec<Vec<f64>> = inputs
        .runs
        .iter()
        .map(|r| z_normalize(r.scores(inputs.score)))
        .collect();
    let n = inputs.grades.len();
    let mut sum_std = 0.0;
    let mut max_std: f64 = 0.0;
    for i in 0..n {
        let mean = z.iter().map(|s| s[i]).sum::<f64>() / m as f64;
        let var = z.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / m as f64;
        let sd = var.sqrt();
        sum_std += sd;
        max_std = max_std.max(sd);
    }
    let mean_std = sum_std / n as f64;
    if !mean_std.is_finite() {
        return Err(StatsError::NonFinite.into());
    }
    Ok(StabilityResult {
        mean_std,
        max_std,
        score: inputs.score,
        epsilon: inputs.thresholds.eps_stability,
        pass: mean_std <= inputs.thresholds.eps_stability,
        seeds: inputs.seeds(),
    })
}

fn group_ratio(values: &[f64], groups: &[Group]) -> Result<Option<f64>, AuditError> {
    let rel = group_relevance(values, groups, true)?;
    let r = rel[0] / rel[1];
    Ok((rel[1] != 0.0 && r.is_finite()).then_some(r))
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for v in values {
        sum += v?;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn spearman_opt(x: &[f64], y: &[f64]) -> Result<Option<f64>, AuditError> {
    match stats::spearman(x, y) {
        Ok(r) => Ok(Some(r)),
        Err(StatsError::Constant) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Individual level: Spearman correlation of predictions with grades,
/// overall and per group. Group level: gap between the group relevance
/// ratios under normalized true and predicted relevance. Both are computed
/// per seed and averaged.
pub fn audit_comparability(inputs: &AuditInputs) -> Result<ComparabilityResult, AuditError> {
    inputs.check()?;
    let t = inputs.thresholds;
    let truth: Vec<f64> = inputs.grades.iter().map(|&g| g as f64).collect();
    let ratio_true = group_ratio(&truth, &inputs.groups)?;
    let mut flags = Vec::new();

    let mut members: [Vec<usize>; N_GROUPS] = Default::default();
    for (i, &g) in inputs.groups.iter().enumerate() {
        members[g as usize].push(i);
    }
    let pick = |v: &[f64], idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| v[i]).collect() };

    let mut per_seed = Vec::with_capacity(inputs.runs.len());
    for r in &inputs.runs {
        let pred = r.scores(inputs.score);
        let rho = spearman_opt(pred, &truth)?;
        let mut rho_groups = [None; N_GROUPS];
        for (g, idx) in members.iter().enumerate() {
            rho_groups[g] = spearman_opt(&pick(pred, idx), &pick(&truth, idx))?;
        }
        let ratio_pred = group_ratio(pred, &inputs.groups)?;
        if rho.is_none() {
            flags.push(format!("seed {}: correlation undefined", r.seed));
        }
        if ratio_pred.is_none() {
            flags.push(format!("seed {}: predicted group ratio undefined", r.seed));
        }
        per_seed.push(SeedComparability {
            seed: r.seed,
            rho,
            rho_groups,
            ratio_pred,
        });
    }
    if ratio_true.is_none() {
        flags.push("true group ratio undefined".to_string());
    }

    let rho = mean_defined(per_seed.iter().map(|s| s.rho));
    let mut rho_groups = [None; N_GROUPS];
    for (g, slot) in rho_groups.iter_mut().enumerate() {
        *slot = mean_defined(per_seed.iter().map(|s| s.rho_groups[g]));
    }
    let ratio_pred = mean_defined(per_seed.iter().map(|s| s.ratio_pred));
    let ratio_diff = ratio_true.and_then(|rt| {
        mean_defined(per_seed.iter().map(|s| s.ratio_pred.map(|rp| (rt - rp).abs())))
    });
    Ok(ComparabilityResult {
        individual_pass: rho.is_some_and(|r| r >= t.rho_min),
        group_pass: ratio_diff.is_some_and(|d| d <= t.ratio_tol),
        rho,
        rho_groups,
        ratio_true,
        ratio_pred,
        ratio_diff,
        per_seed,
        score: inputs.score,
        rho_min: t.rho_min,
        ratio_tol: t.ratio_tol,
        flags,
        seeds: inputs.seeds(),
    })
}

/// Every item needs a finite prediction, and the normalized predictions
/// must be indistinguishable from the normalized grades by a two-sample KS
/// test in every seed.
pub fn audit_availability(inputs: &AuditInputs) -> Result<AvailabilityResult, AuditError> {
    inputs.check()?;
    let alpha = inputs.thresholds.alpha;
    let truth: Vec<f64> = inputs.grades.iter().map(|&g| g as f64).collect();
    let truth = normalize01(&truth);
    let mut undefined_count = 0;
    let mut ks = Vec::with_capacity(inputs.runs.len());
    for r in &inputs.runs {
        let defined: Vec<f64> = r
            .scores(inputs.score)
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        undefined_count += inputs.grades.len() - defined.len();
        ks.push(stats::ks_two_sample(&truth, &normalize01(&defined))?);
    }
    let max_p_value = ks.iter().map(|t| t.p_value).fold(0.0, f64::max);
    let min_p_value = ks.iter().map(|t| t.p_value).fold(1.0, f64::min);
    let all_defined = undefined_count == 0;
    Ok(AvailabilityResult {
        pass: all_defined && min_p_value >= alpha,
        all_defined,
        undefined_count,
        ks,
        max_p_value,
        score: inputs.score,
        alpha,
        seeds: inputs.seeds(),
    })
}

/// Outcome of one auditor: its result, or the reason it could not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audited<T> {
    pub result: Option<T>,
    pub error: Option<String>,
}

impl<T> From<Result<T, AuditError>> for Audited<T> {
    fn from(r: Result<T, AuditError>) -> Self {
        match r {
            Ok(v) => Audited {
                result: Some(v),
                error: None,
            },
            Err(e) => Audited {
                result: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Partial,
    Fail,
    /// The auditor could not run (for example, too few seeds).
    Unavailable,
}

impl Verdict {
    fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Partial => "PARTIAL",
            Verdict::Fail => "FAIL",
            Verdict::Unavailable => "n/a",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiderataReport {
    pub thresholds: Thresholds,
    pub credibility: Audited<CredibilityResult>,
    pub consistency: Audited<ConsistencyResult>,
    pub stability: Audited<StabilityResult>,
    pub comparability: Audited<ComparabilityResult>,
    pub availability: Audited<AvailabilityResult>,
}

pub const CRITERIA: [&str; 5] = [
    "Credibility",
    "Consistency",
    "Stability",
    "Comparability",
    "Availability",
];

impl DesiderataReport {
    /// Verdicts in [`CRITERIA`] order. Comparability is `Partial` when only
    /// one of its two levels passes.
    pub fn verdicts(&self) -> [Verdict; 5] {
        fn v<T>(a: &Audited<T>, f: impl Fn(&T) -> Verdict) -> Verdict {
            a.result.as_ref().map_or(Verdict::Unavailable, f)
        }
        [
            v(&self.credibility, |r| Verdict::from_bool(r.pass)),
            v(&self.consistency, |r| Verdict::from_bool(r.pass)),
            v(&self.stability, |r| Verdict::from_bool(r.pass)),
            v(&self.comparability, |r| {
                match (r.individual_pass, r.group_pass) {
                    (true, true) => Verdict::Pass,
                    (false, false) => Verdict::Fail,
                    _ => Verdict::Partial,
                }
            }),
            v(&self.availability, |r| Verdict::from_bool(r.pass)),
        ]
    }
}

/// Runs all five auditors. Failures of one auditor are recorded in its slot
/// and do not prevent the others from running.
pub fn audit_all(inputs: &AuditInputs) -> DesiderataReport {
    DesiderataReport {
        thresholds: inputs.thresholds,
        credibility: audit_credibility(inputs).into(),
        consistency: audit_consistency(inputs).into(),
        stability: audit_stability(inputs).into(),
        comparability: audit_comparability(inputs).into(),
        availability: audit_availability(inputs).into(),
    }
}

/// Aligned text table with one row per dataset and one column per criterion.
pub fn format_table(rows: &[(&str, &DesiderataReport)]) -> String {
    let name_w = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once("Dataset".len()))
        .max()
        .unwrap_or(7);
    let mut out = format!("{:<name_w$}", "Dataset");
    for c in CRITERIA {
        out.push_str(&format!("  {c:>13}"));
    }
    out.push('\n');
    for (name, report) in rows {
        out.push_str(&format!("{name:<name_w$}"));
        for v in report.verdicts() {
            out.push_str(&format!("  {:>13}", v.symbol()));
        }
        out.push('\n');
    }
    out
}
