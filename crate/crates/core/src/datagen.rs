//! Synthetic single-query datasets drawn from a four-node causal graph.
//!
//! `G` is a binary group, `U` the latent utility (relevance), `X` and `Y`
//! the observed features:
//!
//! ```text
//! G ──┬──────────► Y
//!     ▼            ▲
//! U ─► X ──────────┘
//! ```
//!
//! `X = w_xg·g + w_xu·U` and `Y = w_yg·g + w_yx·X`, with `g ∈ {0, 1}` the
//! group's numeric encoding: 1 for [`DagConfig::shifted_group`], 0 for the
//! other group. `U` is discretized into equal-width grades.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Pareto};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Dataset, Item};
use crate::Group;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("group {group} has {available} items, {needed} needed")]
    Insufficient {
        group: Group,
        needed: usize,
        available: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UtilityDist {
    Pareto { shape: f64, scale: f64 },
    Normal { mu: f64, sigma: f64 },
}

impl UtilityDist {
    pub fn pareto() -> Self {
        UtilityDist::Pareto {
            shape: 2.0,
            scale: 1.0,
        }
    }

    pub fn normal() -> Self {
        UtilityDist::Normal {
            mu: 2.0,
            sigma: 1.0,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            UtilityDist::Pareto { shape, scale } if shape > 1.0 => shape * scale / (shape - 1.0),
            UtilityDist::Pareto { .. } => f64::INFINITY,
            UtilityDist::Normal { mu, .. } => mu,
        }
    }
}

/// Scale on which utilities are cut into equal-width grade bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradeScale {
    #[default]
    Linear,
    /// Bins of equal width in `ln U`. Requires positive utilities.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagConfig {
    pub dist: UtilityDist,
    pub n: usize,
    /// Probability that an item belongs to group 0.
    pub p_group: f64,
    pub w_xg: f64,
    pub w_xu: f64,
    pub w_yg: f64,
    pub w_yx: f64,
    pub n_grades: u8,
    #[serde(default)]
    pub grade_scale: GradeScale,
    /// Group encoded as 1 in the feature mixes, so its features are shifted
    /// upward at equal utility.
    #[serde(default)]
    pub shifted_group: Group,
}

impl DagConfig {
    pub fn new(dist: UtilityDist) -> Self {
        DagConfig {
            dist,
            n: 50_000,
            p_group: 0.5,
            w_xg: 0.2,
            w_xu: 0.8,
            w_yg: 0.4,
            w_yx: 0.6,
            n_grades: 5,
            // Linear bins over a Pareto(2) range put nearly every item in
            // grade 0; log bins give geometrically decaying grade shares.
            grade_scale: match dist {
                UtilityDist::Pareto { .. } => GradeScale::Log,
                UtilityDist::Normal { .. } => GradeScale::Linear,
            },
            shifted_group: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if !(self.p_group > 0.0 && self.p_group < 1.0) {
            return bad("p_group must lie in (0, 1)");
        }
        if (self.w_xg + self.w_xu - 1.0).abs() > 1e-9 || (self.w_yg + self.w_yx - 1.0).abs() > 1e-9
        {
            return bad("mixing weights of each node must sum to 1");
        }
        if self.n_grades == 0 {
            return bad("n_grades must be positive");
        }
        if self.shifted_group > 1 {
            return bad("shifted_group must be 0 or 1");
        }
        if self.grade_scale == GradeScale::Log && matches!(self.dist, UtilityDist::Normal { .. }) {
            return bad("log grade scale needs positive utilities");
        }
        match self.dist {
            UtilityDist::Pareto { shape, scale } if !(shape > 0.0 && scale > 0.0) => {
                bad("pareto shape and scale must be positive")
            }
            UtilityDist::Normal { sigma, mu } if !(sigma > 0.0 && mu.is_finite()) => {
                bad("normal sigma must be positive")
            }
            _ => Ok(()),
        }
    }
}

impl Default for DagConfig {
    fn default() -> Self {
        DagConfig::new(UtilityDist::normal())
    }
}

/// A generated dataset together with the continuous utility behind each grade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub utility: Vec<f64>,
}

/// JSON sidecar written next to a generated libsvm file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: DagConfig,
    pub seed: u64,
    pub utility: Vec<f64>,
}

pub fn sample_synthetic(cfg: &DagConfig, seed: u64) -> Result<Synthetic, GenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let utility: Vec<f64> = match cfg.dist {
        UtilityDist::Pareto { shape, scale } => {
            let d = Pareto::new(scale, shape).map_err(|e| GenError::Config(e.to_string()))?;
            (0..cfg.n).map(|_| d.sample(&mut rng)).collect()
        }
        UtilityDist::Normal { mu, sigma } => {
            let d = Normal::new(mu, sigma).map_err(|e| GenError::Config(e.to_string()))?;
            (0..cfg.n).map(|_| d.sample(&mut rng)).collect()
        }
    };
    let groups: Vec<Group> = (0..cfg.n)
        .map(|_| if rng.random_bool(cfg.p_group) { 0 } else { 1 })
        .collect();
    let grades = match cfg.grade_scale {
        GradeScale::Linear => discretize(&utility, cfg.n_grades),
        GradeScale::Log => {
            let logs: Vec<f64> = utility.iter().map(|u| u.ln()).collect();
            discretize(&logs, cfg.n_grades)
        }
    };
    let items = utility
        .iter()
        .zip(&groups)
        .zip(&grades)
        .enumerate()
        .map(|(id, ((&u, &group), &grade))| {
            let g = if group == cfg.shifted_group { 1.0 } else { 0.0 };
            let x = cfg.w_xg * g + cfg.w_xu * u;
            let y = cfg.w_yg * g + cfg.w_yx * x;
            Item {
                id,
                features: vec![x, y],
                grade,
                group,
            }
        })
        .collect();
    let dataset = Dataset::new(items, 2, cfg.n_grades - 1)
        .map_err(|e| GenError::Config(e.to_string()))?;
    Ok(Synthetic { dataset, utility })
}

/// Equal-width binning over `[min, max]` into `n_grades` grades.
/// A constant input maps to grade 0.
pub fn discretize(values: &[f64], n_grades: u8) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0; values.len()];
    }
    let top = n_grades.saturating_sub(1) as f64;
    values
        .iter()
        .map(|&v| (n_grades as f64 * (v - lo) / range).floor().clamp(0.0, top) as u8)
        .collect()
}

/// Draws `n_out` items without replacement with `round(n_out·f)` of them
/// from group 0 (the majority) and the rest from group 1. Ids are kept.
pub fn subsample_imbalanced(
    ds: &Dataset,
    majority_fraction: f64,
    n_out: usize,
    seed: u64,
) -> Result<Dataset, GenError> {
    if !(0.5..=0.9).contains(&majority_fraction) {
        return Err(GenError::Config(format!(
            "majority fraction {majority_fraction} outside [0.5, 0.9]"
        )));
    }
    let n0 = (n_out as f64 * majority_fraction).round() as usize;
    let needed = [n0, n_out - n0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n_out);
    for (g, &need) in needed.iter().enumerate() {
        let mut pool: Vec<&Item> = ds.items.iter().filter(|it| it.group as usize == g).collect();
        if pool.len() < need {
            return Err(GenError::Insufficient {
                group: g as Group,
                needed: need,
                available: pool.len(),
            });
        }
        let (picked, _) = pool.partial_shuffle(&mut rng, need);
        chosen.extend(picked.iter().map(|it| (*it).clone()));
    }
    chosen.sort_by_key(|it| it.id);
    Ok(Dataset {
        items: chosen,
        dim: ds.dim,
        grade_max: ds.grade_max,
        split: ds.split,
    })
}
