//! Ranking utility and exposure-based fairness.
//!
//! Exposure follows a log-decaying attention model over the top `k`
//! positions. Group exposure and group relevance are arithmetic means over
//! the group's items, after `[0, 1]` min-max normalization across the list
//! (switchable). Ratios whose denominator vanishes are reported as `None`
//! and flagged rather than clamped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Group, N_GROUPS};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("group {0} has no items")]
    EmptyGroup(Group),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("ranking is not a permutation of {0} items")]
    NotPermutation(usize),
}

/// Where the relevance (or ranking score) of an item comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceSource {
    TrueGrade,
    Predicted,
}

impl RelevanceSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelevanceSource::TrueGrade => "true",
            RelevanceSource::Predicted => "predicted",
        }
    }
}

/// Item indices in descending score order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub source: RelevanceSource,
}

impl Ranking {
    /// Sorts by descending score; ties keep ascending index order.
    pub fn from_scores(scores: &[f64], source: RelevanceSource) -> Self {
        Ranking {
            order: rank_by_score(scores),
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// `1/log2(rank + 1)` for `rank <= k`, zero beyond. Ranks are 1-based.
pub fn attention_weight(rank: usize, k: usize) -> f64 {
    if rank == 0 || rank > k {
        0.0
    } else {
        1.0 / ((rank + 1) as f64).log2()
    }
}

pub fn normalize01(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / range).collect()
}

/// Raw attention each item receives under `order`, indexed by item.
pub fn item_exposure(order: &[usize], k: usize) -> Vec<f64> {
    let mut exp = vec![0.0; order.len()];
    for (pos, &item) in order.iter().enumerate().take(k) {
        exp[item] = attention_weight(pos + 1, k);
    }
    exp
}

fn check_permutation(order: &[usize]) -> Result<(), MetricError> {
    let mut seen = vec![false; order.len()];
    for &i in order {
        if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
            return Err(MetricError::NotPermutation(order.len()));
        }
    }
    Ok(())
}

/// Per-group arithmetic means of `values`.
pub fn group_means(values: &[f64], groups: &[Group]) -> Result<[f64; N_GROUPS], MetricError> {
    if values.len() != groups.len() {
        return Err(MetricError::Length(values.len(), groups.len()));
    }
    let mut sum = [0.0; N_GROUPS];
    let mut count = [0usize; N_GROUPS];
    for (&v, &g) in values.iter().zip(groups) {
        sum[g as usize] += v;
        count[g as usize] += 1;
    }
    let mut out = [0.0; N_GROUPS];
    for g in 0..N_GROUPS {
        if count[g] == 0 {
            return Err(MetricError::EmptyGroup(g as Group));
        }
        out[g] = sum[g] / count[g] as f64;
    }
    Ok(out)
}

pub fn group_exposure(
    order: &[usize],
    groups: &[Group],
    k: usize,
    normalize: bool,
) -> Result<[f64; N_GROUPS], MetricError> {
    if order.len() != groups.len() {
        return Err(MetricError::Length(order.len(), groups.len()));
    }
    check_permutation(order)?;
    let exp = item_exposure(order, k);
    let exp = if normalize { normalize01(&exp) } else { exp };
    group_means(&exp, groups)
}

pub fn group_relevance(
    relevance: &[f64],
    groups: &[Group],
    normalize: bool,
) -> Result<[f64; N_GROUPS], MetricError> {
    if normalize {
        group_means(&normalize01(relevance), groups)
    } else {
        group_means(relevance, groups)
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    let r = num / den;
    (den != 0.0 && r.is_finite()).then_some(r)
}

/// `|Exposure(G0) / Exposure(G1)|`; `None` when group 1 has no exposure.
pub fn demographic_parity(exposure: [f64; N_GROUPS]) -> Option<f64> {
    ratio(exposure[0], exposure[1]).map(f64::abs)
}

/// `(Exposure(G0)/Relevance(G0)) / (Exposure(G1)/Relevance(G1))`.
pub fn exposure_fairness(exposure: [f64; N_GROUPS], relevance: [f64; N_GROUPS]) -> Option<f64> {
    let a = ratio(exposure[0], relevance[0])?;
    let b = ratio(exposure[1], relevance[1])?;
    ratio(a, b)
}

/// `Σ_i |exposure_i − relevance_i|` for a single ranking, after optional
/// `[0, 1]` normalization of both vectors.
pub fn individual_fairness(
    exposure: &[f64],
    relevance: &[f64],
    normalize: bool,
) -> Result<f64, MetricError> {
    Ok(individual_gaps(exposure, relevance, normalize)?.iter().sum())
}

/// Per-item terms of [`individual_fairness`].
pub fn individual_gaps(
    exposure: &[f64],
    relevance: &[f64],
    normalize: bool,
) -> Result<Vec<f64>, MetricError> {
    if exposure.len() != relevance.len() {
        return Err(MetricError::Length(exposure.len(), relevance.len()));
    }
    let (e, r) = if normalize {
        (normalize01(exposure), normalize01(relevance))
    } else {
        (exposure.to_vec(), relevance.to_vec())
    };
    Ok(e.iter().zip(&r).map(|(a, b)| (a - b).abs()).collect())
}

fn gain(grade: u8) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn dcg(ranked_grades: impl Iterator<Item = u8>, k: usize) -> f64 {
    ranked_grades
        .take(k)
        .enumerate()
        .map(|(i, g)| gain(g) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of grades listed in ranked order. Zero when no item is relevant.
pub fn ndcg_at_k(ranked_grades: &[u8], k: usize) -> f64 {
    let mut ideal = ranked_grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter(), k);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(ranked_grades.iter().copied(), k) / idcg
}

/// NDCG@k of the ranking induced by `scores`.
pub fn ndcg_for_scores(scores: &[f64], grades: &[u8], k: usize) -> f64 {
    let ranked: Vec<u8> = rank_by_score(scores).iter().map(|&i| grades[i]).collect();
    ndcg_at_k(&ranked, k)
}

/// Utility and fairness of one ranking, measured with one relevance source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub k: usize,
    pub relevance_source: RelevanceSource,
    pub normalized: bool,
    pub ndcg_at_k: f64,
    pub demographic_parity: Option<f64>,
    pub exposure_fairness: Option<f64>,
    pub individual_fairness: f64,
    pub group_exposure: [f64; N_GROUPS],
    pub group_relevance: [f64; N_GROUPS],
    /// Names of ratios left undefined by a zero denominator.
    pub flags: Vec<String>,
}

/// Inputs shared by every fairness report over one evaluated list.
#[derive(Debug, Clone, Copy)]
pub struct FairnessInputs<'a> {
    pub order: &'a [usize],
    pub grades: &'a [u8],
    pub groups: &'a [Group],
    pub k: usize,
    pub normalize: bool,
}

pub fn fairness_report(
    inputs: FairnessInputs<'_>,
    relevance: &[f64],
    source: RelevanceSource,
) -> Result<FairnessReport, MetricError> {
    let FairnessInputs {
        order,
        grades,
        groups,
        k,
        normalize,
    } = inputs;
    if relevance.len() != order.len() {
        return Err(MetricError::Length(relevance.len(), order.len()));
    }
    if grades.len() != order.len() {
        return Err(MetricError::Length(grades.len(), order.len()));
    }
    let group_exposure = group_exposure(order, groups, k, normalize)?;
    let group_relevance = group_relevance(relevance, groups, normalize)?;
    let exposure = item_exposure(order, k);
    let individual_fairness = individual_fairness(&exposure, relevance, normalize)?;
    let ranked: Vec<u8> = order.iter().map(|&i| grades[i]).collect();

    let demographic_parity = demographic_parity(group_exposure);
    let exposure_fairness = exposure_fairness(group_exposure, group_relevance);
    let mut flags = Vec::new();
    if demographic_parity.is_none() {
        flags.push("demographic_parity".to_string());
    }
    if exposure_fairness.is_none() {
        flags.push("exposure_fairness".to_string());
    }
    Ok(FairnessReport {
        k,
        relevance_source: source,
        normalized: normalize,
        ndcg_at_k: ndcg_at_k(&ranked, k),
        demographic_parity,
        exposure_fairness,
        individual_fairness,
        group_exposure,
        group_relevance,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn attention_weights() {
        assert_eq!(attention_weight(1, 10), 1.0);
        assert_abs_diff_eq!(attention_weight(3, 10), 0.5, epsilon = 1e-15);
        assert_eq!(attention_weight(11, 10), 0.0);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize01(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize01(&[5.0, 5.0]), vec![0.0, 0.0]);
        let unit = [0.0, 0.3, 1.0, 0.7];
        assert_eq!(normalize01(&unit), unit.to_vec());
    }

    #[test]
    fn group_exposure_outside_top_k_is_zero() {
        // Group 0 items ranked 3rd and 4th with k = 2.
        let groups = [1, 1, 0, 0];
        let exp = group_exposure(&[0, 1, 2, 3], &groups, 2, true).unwrap();
        assert_eq!(exp[0], 0.0);
        assert!(exp[1] > 0.0);
    }

    #[test]
    fn single_item_groups_at_ranks_one_and_three() {
        // Item 0 (group 0) at rank 1, item 2 (group 1) at rank 3.
        let raw = item_exposure(&[0, 1, 2], 10);
        let pair = [raw[0], raw[2]];
        assert_abs_diff_eq!(pair[1], 0.5, epsilon = 1e-15);
        let exp = group_means(&pair, &[0, 1]).unwrap();
        assert_eq!(demographic_parity(exp), Some(2.0));
        // Min-max over the pair maps (1.0, 0.5) to (1, 0): ratio undefined.
        let exp = group_means(&normalize01(&pair), &[0, 1]).unwrap();
        assert_eq!(exp, [1.0, 0.0]);
        assert_eq!(demographic_parity(exp), None);
    }

    #[test]
    fn group_relevance_equal_when_identical() {
        let rel = group_relevance(&[0.2, 0.8, 0.2, 0.8], &[0, 0, 1, 1], true).unwrap();
        assert_eq!(rel[0], rel[1]);
        assert_eq!(
            group_relevance(&[1.0, 2.0], &[0, 0], true),
            Err(MetricError::EmptyGroup(1))
        );
    }

    #[test]
    fn ratio_metrics() {
        assert_eq!(demographic_parity([0.4, 0.4]), Some(1.0));
        assert_eq!(demographic_parity([0.4, 0.0]), None);
        assert_eq!(exposure_fairness([0.2, 0.4], [0.1, 0.2]), Some(1.0));
        assert_eq!(exposure_fairness([0.2, 0.4], [0.0, 0.2]), None);
        assert_eq!(exposure_fairness([0.2, 0.0], [0.1, 0.2]), None);
    }

    #[test]
    fn individual_fairness_cases() {
        let v = [0.1, 0.5, 0.9];
        assert_eq!(individual_fairness(&v, &v, true).unwrap(), 0.0);
        assert_eq!(
            individual_fairness(&[1.0, 0.0], &[0.0, 1.0], true).unwrap(),
            2.0
        );
        let base = individual_fairness(&[0.3, 0.6], &[0.2, 0.9], false).unwrap();
        let bumped = individual_fairness(&[0.35, 0.6], &[0.2, 0.9], false).unwrap();
        assert!(bumped - base <= 0.05 + 1e-12);
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at_k(&[4, 3, 2, 0], 10), 1.0);
        let expected = (15.0 / 3f64.log2()) / 15.0;
        assert_abs_diff_eq!(ndcg_at_k(&[0, 4], 2), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(ndcg_at_k(&[0, 4], 2), 0.6309, epsilon = 1e-4);
        assert_eq!(ndcg_at_k(&[0, 0, 0], 10), 0.0);
        assert_eq!(ndcg_for_scores(&[0.1, 0.9], &[0, 4], 2), 1.0);
    }

    #[test]
    fn report_flags_degenerate_ratios() {
        let groups = [0, 0, 1, 1];
        let order = [0, 1, 2, 3];
        let inputs = FairnessInputs {
            order: &order,
            grades: &[4, 3, 0, 0],
            groups: &groups,
            k: 2,
            normalize: true,
        };
        let rep = fairness_report(inputs, &[4.0, 3.0, 0.0, 0.0], RelevanceSource::TrueGrade).unwrap();
        assert_eq!(rep.group_exposure[1], 0.0);
        assert_eq!(rep.demographic_parity, None);
        assert_eq!(rep.exposure_fairness, None);
        assert_eq!(rep.flags, vec!["demographic_parity", "exposure_fairness"]);
        assert_eq!(rep.ndcg_at_k, 1.0);
    }

    #[test]
    fn rejects_non_permutations() {
        assert_eq!(
            group_exposure(&[0, 0], &[0, 1], 2, true),
            Err(MetricError::NotPermutation(2))
        );
    }
}
