//! Post-hoc fair re-ranking of the top `k` (DetCons and DetConstSort) with
//! group targets proportional to mean group relevance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    fairness_report, group_relevance, rank_by_score, FairnessInputs, FairnessReport,
    MetricError, RelevanceSource,
};
use crate::{format_sig, Group, N_GROUPS};

/// Slack for floating-point products such as `0.29 * 100` when taking
/// floors and ceilings of prefix quotas.
const QUOTA_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum InterventionError {
    #[error("invalid target distribution: {0}")]
    Targets(String),
    #[error("infeasible: group {group} has no candidates left for its minimum at position {position}")]
    Infeasible { position: usize, group: Group },
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Desired share of each group among the top positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    pub p: [f64; N_GROUPS],
}

impl TargetDistribution {
    pub fn new(p: [f64; N_GROUPS]) -> Result<Self, InterventionError> {
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(InterventionError::Targets(format!("negative or non-finite share in {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(InterventionError::Targets(format!("shares sum to {sum}")));
        }
        Ok(TargetDistribution { p })
    }

    fn min_count(&self, g: usize, j: usize) -> usize {
        (j as f64 * self.p[g] + QUOTA_EPS).floor() as usize
    }

    fn max_count(&self, g: usize, j: usize) -> usize {
        (j as f64 * self.p[g] - QUOTA_EPS).ceil().max(0.0) as usize
    }

    /// True when `groups_in_order` meets every prefix minimum.
    pub fn prefix_floors_hold(&self, groups_in_order: &[Group]) -> bool {
        let mut count = [0usize; N_GROUPS];
        for (j, &g) in groups_in_order.iter().enumerate() {
            count[g as usize] += 1;
            if (0..N_GROUPS).any(|h| count[h] < self.min_count(h, j + 1)) {
                return false;
            }
        }
        true
    }
}

/// `p_g = Rel(G_g) / Σ_h Rel(G_h)`.
pub fn target_from_relevance(
    relevance: [f64; N_GROUPS],
) -> Result<TargetDistribution, InterventionError> {
    if relevance.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(InterventionError::Targets(format!(
            "group relevance must be finite and non-negative: {relevance:?}"
        )));
    }
    let sum: f64 = relevance.iter().sum();
    if sum <= 0.0 {
        return Err(InterventionError::Targets("all group relevances are zero".into()));
    }
    Ok(TargetDistribution {
        p: relevance.map(|r| r / sum),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub item: usize,
    pub group: Group,
    pub score: f64,
}

/// How a group is chosen among those allowed at a position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Smallest `count_g / p_g`; ties go to the higher next score.
    #[default]
    MostUnderrepresented,
    /// Highest next score.
    BestScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DetCons,
    DetConstSort,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::DetCons => "detcons",
            Algorithm::DetConstSort => "detconstsort",
        }
    }
}

/// Per-group candidate queues in descending score order.
struct Pools {
    queues: Vec<Vec<Candidate>>,
    next: [usize; N_GROUPS],
}

impl Pools {
    fn new(items: &[Candidate]) -> Self {
        let mut queues = vec![Vec::new(); N_GROUPS];
        for c in items {
            queues[c.group as usize].push(*c);
        }
        for q in &mut queues {
            q.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.item.cmp(&b.item)));
        }
        Pools {
            queues,
            next: [0; N_GROUPS],
        }
    }

    fn peek(&self, g: usize) -> Option<&Candidate> {
        self.queues[g].get(self.next[g])
    }

    fn pop(&mut self, g: usize) -> Option<Candidate> {
        let c = self.queues[g].get(self.next[g]).copied();
        if c.is_some() {
            self.next[g] += 1;
        }
        c
    }

    fn total_left(&self) -> usize {
        (0..N_GROUPS)
            .map(|g| self.queues[g].len() - self.next[g])
            .sum()
    }
}

fn choose(
    eligible: &[usize],
    pools: &Pools,
    count: &[usize; N_GROUPS],
    targets: &TargetDistribution,
    rule: SelectionRule,
) -> Option<usize> {
    let next_score = |g: usize| pools.peek(g).map_or(f64::NEG_INFINITY, |c| c.score);
    let better_score = |a: usize, b: usize| next_score(a) > next_score(b);
    let mut best: Option<usize> = None;
    for &g in eligible {
        if pools.peek(g).is_none() {
            continue;
        }
        best = Some(match best {
            None => g,
            Some(b) => {
                let take = match rule {
                    SelectionRule::BestScore => better_score(g, b),
                    SelectionRule::MostUnderrepresented => {
                        let load = |h: usize| count[h] as f64 / targets.p[h];
                        let (lg, lb) = (load(g), load(b));
                        lg < lb || (lg == lb && better_score(g, b))
                    }
                };
                if take {
                    g
                } else {
                    b
                }
            }
        });
    }
    best
}

/// Fills position `j` (1-based) by the DetCons rule.
fn detcons_step(
    j: usize,
    pools: &mut Pools,
    count: &mut [usize; N_GROUPS],
    targets: &TargetDistribution,
    rule: SelectionRule,
) -> Result<Candidate, InterventionError> {
    let below_min: Vec<usize> = (0..N_GROUPS)
        .filter(|&g| count[g] < targets.min_count(g, j))
        .collect();
    let g = if !below_min.is_empty() {
        if let Some(&g) = below_min.iter().find(|&&g| pools.peek(g).is_none()) {
            return Err(InterventionError::Infeasible {
                position: j,
                group: g as Group,
            });
        }
        choose(&below_min, pools, count, targets, rule).expect("non-empty pools")
    } else {
        let below_max: Vec<usize> = (0..N_GROUPS)
            .filter(|&g| count[g] < targets.max_count(g, j))
            .collect();
        match choose(&below_max, pools, count, targets, rule) {
            Some(g) => g,
            // Every group under its ceiling is exhausted; take the best
            // remaining candidate of any group.
            None => {
                let all: Vec<usize> = (0..N_GROUPS).collect();
                choose(&all, pools, count, targets, SelectionRule::BestScore)
                    .expect("candidates remain")
            }
        }
    };
    count[g] += 1;
    Ok(pools.pop(g).expect("chosen group has a candidate"))
}

/// Greedy DetCons: at each position, serve groups below their minimum
/// `floor(j·p_g)` first, otherwise any group below its maximum
/// `ceil(j·p_g)`, picking among them with `rule`.
///
/// Returns `min(k, items.len())` candidates.
pub fn detcons(
    items: &[Candidate],
    targets: &TargetDistribution,
    k: usize,
    rule: SelectionRule,
) -> Result<Vec<Candidate>, InterventionError> {
    let mut pools = Pools::new(items);
    let mut count = [0usize; N_GROUPS];
    let k = k.min(items.len());
    let mut out = Vec::with_capacity(k);
    for j in 1..=k {
        out.push(detcons_step(j, &mut pools, &mut count, targets, rule)?);
    }
    Ok(out)
}

/// DetConstSort: whenever a group's minimum count rises, its next-best
/// candidate is appended and bubbled towards the top past lower-scored
/// items, as long as the displaced item's group still meets its minimum at
/// the shortened prefix. Positions left after the last minimum increase are
/// filled with the DetCons rule.
pub fn detconstsort(
    items: &[Candidate],
    targets: &TargetDistribution,
    k: usize,
    rule: SelectionRule,
) -> Result<Vec<Candidate>, InterventionError> {
    let mut pools = Pools::new(items);
    let k = k.min(items.len());
    let mut list: Vec<Candidate> = Vec::with_capacity(k);
    let mut placed = [0usize; N_GROUPS];

    let prefix_count = |list: &[Candidate], g: Group, len: usize| {
        list[..len].iter().filter(|c| c.group == g).count()
    };

    for j in 1..=k {
        let mut rising: Vec<usize> = (0..N_GROUPS)
            .filter(|&g| targets.min_count(g, j) > placed[g])
            .collect();
        rising.sort_by(|&a, &b| {
            let s = |g: usize| pools.peek(g).map_or(f64::NEG_INFINITY, |c| c.score);
            s(b).total_cmp(&s(a)).then(a.cmp(&b))
        });
        for g in rising {
            while placed[g] < targets.min_count(g, j) {
                let c = pools.pop(g).ok_or(InterventionError::Infeasible {
                    position: list.len() + 1,
                    group: g as Group,
                })?;
                placed[g] += 1;
                list.push(c);
                let mut pos = list.len() - 1;
                while pos > 0 && list[pos].score > list[pos - 1].score {
                    // Moving the earlier item down removes it from prefix `pos`.
                    let h = list[pos - 1].group;
                    let after = prefix_count(&list, h, pos) - 1;
                    if after < targets.min_count(h as usize, pos) {
                        break;
                    }
                    list.swap(pos, pos - 1);
                    pos -= 1;
                }
            }
        }
    }
    let mut count = placed;
    while list.len() < k && pools.total_left() > 0 {
        let j = list.len() + 1;
        list.push(detcons_step(j, &mut pools, &mut count, targets, rule)?);
    }
    Ok(list)
}

pub fn rerank(
    algorithm: Algorithm,
    items: &[Candidate],
    targets: &TargetDistribution,
    k: usize,
    rule: SelectionRule,
) -> Result<Vec<Candidate>, InterventionError> {
    match algorithm {
        Algorithm::DetCons => detcons(items, targets, k, rule),
        Algorithm::DetConstSort => detconstsort(items, targets, k, rule),
    }
}

/// Re-ranked top-k followed by every other item in descending score order.
pub fn full_order(top: &[Candidate], scores: &[f64]) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut order: Vec<usize> = top.iter().map(|c| c.item).collect();
    for &i in &order {
        taken[i] = true;
    }
    order.extend(rank_by_score(scores).into_iter().filter(|&i| !taken[i]));
    order
}

/// CSV with header `position,item_id,group,score`; positions are 1-based.
pub fn reranked_csv(top: &[Candidate], item_ids: &[usize]) -> String {
    let mut out = String::from("position,item_id,group,score\n");
    for (pos, c) in top.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            pos + 1,
            item_ids[c.item],
            c.group,
            format_sig(c.score, 6)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub algorithm: Algorithm,
    pub rule: SelectionRule,
    pub k: usize,
    pub targets: TargetDistribution,
    pub pre: FairnessReport,
    pub post: FairnessReport,
    pub reranked: Vec<Candidate>,
}

/// Inputs describing one scored list.
#[derive(Debug, Clone, Copy)]
pub struct ScoredList<'a> {
    /// Ranking scores (predicted relevance).
    pub scores: &'a [f64],
    pub grades: &'a [u8],
    pub groups: &'a [Group],
}

/// Fairness of the score ranking before and after re-ranking its top `k`.
/// Targets and both reports use `relevance` (with `source`) as the
/// relevance vector.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_intervention(
    list: ScoredList<'_>,
    relevance: &[f64],
    source: RelevanceSource,
    algorithm: Algorithm,
    rule: SelectionRule,
    k: usize,
    normalize: bool,
) -> Result<InterventionReport, InterventionError> {
    let n = list.scores.len();
    for len in [list.grades.len(), list.groups.len(), relevance.len()] {
        if len != n {
            return Err(InterventionError::Length(n, len));
        }
    }
    let targets = target_from_relevance(group_relevance(relevance, list.groups, normalize)?)?;
    let items: Vec<Candidate> = (0..n)
        .map(|i| Candidate {
            item: i,
            group: list.groups[i],
            score: list.scores[i],
        })
        .collect();
    let reranked = rerank(algorithm, &items, &targets, k, rule)?;
    let pre_order = rank_by_score(list.scores);
    let post_order = full_order(&reranked, list.scores);
    let inputs = |order| FairnessInputs {
        order,
        grades: list.grades,
        groups: list.groups,
        k,
        normalize,
    };
    let pre = fairness_report(inputs(&pre_order), relevance, source)?;
    let post = fairness_report(inputs(&post_order), relevance, source)?;
    Ok(InterventionReport {
        algorithm,
        rule,
        k,
        targets,
        pre,
        post,
        reranked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cands(spec: &[(Group, f64)]) -> Vec<Candidate> {
        spec.iter()
            .enumerate()
            .map(|(item, &(group, score))| Candidate { item, group, score })
            .collect()
    }

    fn groups_of(out: &[Candidate]) -> Vec<Group> {
        out.iter().map(|c| c.group).collect()
    }

    #[test]
    fn targets_from_relevance() {
        assert_eq!(target_from_relevance([0.3, 0.3]).unwrap().p, [0.5, 0.5]);
        let t = target_from_relevance([0.6, 0.2]).unwrap();
        assert_abs_diff_eq!(t.p[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(t.p[1], 0.25, epsilon = 1e-15);
        assert_eq!(target_from_relevance([0.4, 0.0]).unwrap().p, [1.0, 0.0]);
        assert!(target_from_relevance([0.0, 0.0]).is_err());
        assert!(TargetDistribution::new([0.7, 0.7]).is_err());
    }

    #[test]
    fn degenerate_target_takes_best_of_one_group() {
        let items = cands(&[(1, 0.99), (0, 0.5), (0, 0.9), (1, 0.95), (0, 0.7)]);
        let t = TargetDistribution::new([1.0, 0.0]).unwrap();
        for alg in [Algorithm::DetCons, Algorithm::DetConstSort] {
            let out = rerank(alg, &items, &t, 3, SelectionRule::default()).unwrap();
            let ids: Vec<usize> = out.iter().map(|c| c.item).collect();
            assert_eq!(ids, vec![2, 4, 1], "{alg:?}");
        }
    }

    #[test]
    fn four_item_fixture_meets_prefix_floors() {
        // A: 0.9, 0.7 ; B: 0.8, 0.6
        let items = cands(&[(0, 0.9), (0, 0.7), (1, 0.8), (1, 0.6)]);
        let t = TargetDistribution::new([0.5, 0.5]).unwrap();
        for alg in [Algorithm::DetCons, Algorithm::DetConstSort] {
            for rule in [SelectionRule::MostUnderrepresented, SelectionRule::BestScore] {
                let out = rerank(alg, &items, &t, 4, rule).unwrap();
                assert!(t.prefix_floors_hold(&groups_of(&out)));
                let ids: Vec<usize> = out.iter().map(|c| c.item).collect();
                assert_eq!(ids, vec![0, 2, 1, 3], "{alg:?} {rule:?}");
            }
        }
    }

    #[test]
    fn constraint_forces_lower_scored_group_up() {
        let items = cands(&[(0, 0.9), (0, 0.8), (0, 0.7), (1, 0.2), (1, 0.1)]);
        let t = TargetDistribution::new([0.5, 0.5]).unwrap();
        let out = detcons(&items, &t, 4, SelectionRule::MostUnderrepresented).unwrap();
        assert_eq!(groups_of(&out), vec![0, 1, 0, 1]);
        let out = detconstsort(&items, &t, 4, SelectionRule::MostUnderrepresented).unwrap();
        assert_eq!(groups_of(&out), vec![0, 1, 0, 1]);
    }

    #[test]
    fn single_group_is_pure_score_sort() {
        let items = cands(&[(0, 0.3), (0, 0.9), (0, 0.5), (0, 0.7)]);
        let t = TargetDistribution::new([1.0, 0.0]).unwrap();
        let out = detconstsort(&items, &t, 4, SelectionRule::default()).unwrap();
        let scores: Vec<f64> = out.iter().map(|c| c.score).collect();
        assert_eq!(scores, vec![0.9, 0.7, 0.5, 0.3]);
    }

    #[test]
    fn exhausted_pool_is_infeasible() {
        let items = cands(&[(0, 0.9), (0, 0.8), (0, 0.7), (1, 0.2)]);
        let t = TargetDistribution::new([0.5, 0.5]).unwrap();
        assert_eq!(
            detcons(&items, &t, 4, SelectionRule::default()),
            Err(InterventionError::Infeasible {
                position: 4,
                group: 1
            })
        );
        assert!(matches!(
            detconstsort(&items, &t, 4, SelectionRule::default()),
            Err(InterventionError::Infeasible { group: 1, .. })
        ));
    }

    #[test]
    fn output_length_is_capped_by_pool() {
        let items = cands(&[(0, 0.9), (1, 0.8)]);
        let t = TargetDistribution::new([0.5, 0.5]).unwrap();
        assert_eq!(detcons(&items, &t, 10, SelectionRule::default()).unwrap().len(), 2);
        assert_eq!(detconstsort(&items, &t, 10, SelectionRule::default()).unwrap().len(), 2);
    }

    #[test]
    fn identity_when_constraints_inactive() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
        let groups = [0, 1, 0, 1, 0, 1];
        let grades = [4, 3, 2, 1, 0, 0];
        let relevance = [1.0, 1.0, 1.0, 1.0, 1.0, 0.0];
        // Targets (0.6, 0.4) from relevance; the alternating ranking already
        // satisfies every prefix floor, so the best-score rule keeps it.
        let rep = evaluate_intervention(
            ScoredList {
                scores: &scores,
                grades: &grades,
                groups: &groups,
            },
            &relevance,
            RelevanceSource::TrueGrade,
            Algorithm::DetCons,
            SelectionRule::BestScore,
            4,
            false,
        )
        .unwrap();
        assert_eq!(rep.pre, rep.post);
    }

    #[test]
    fn csv_dump() {
        let items = cands(&[(0, 0.5), (1, 0.25)]);
        let csv = reranked_csv(&items, &[10, 11]);
        assert_eq!(csv, "position,item_id,group,score\n1,10,0,0.5\n2,11,1,0.25\n");
    }

    #[test]
    fn full_order_appends_remaining_by_score() {
        let scores = [0.1, 0.9, 0.5, 0.7];
        let top = [Candidate {
            item: 2,
            group: 0,
            score: 0.5,
        }];
        assert_eq!(full_order(&top, &scores), vec![2, 1, 3, 0]);
    }
}
