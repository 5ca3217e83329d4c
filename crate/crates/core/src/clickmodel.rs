//! Position-based click model with result randomization.
//!
//! A user examines rank `r` with probability `(1/r)^eta` up to the
//! selection cutoff and clicks an examined item with a probability that
//! grows exponentially in its grade between `eps_neg` and `eps_pos`.
//! Displayed orders are uniform random permutations of the pool, so the
//! examination propensity at each rank is known exactly.

use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum ClickError {
    #[error("invalid click model config: {0}")]
    Config(String),
    #[error("grade {grade} outside [0, {grade_max}]")]
    Grade { grade: u8, grade_max: u8 },
    #[error("cannot simulate a session over an empty pool")]
    EmptyPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbmConfig {
    /// Position-bias severity.
    pub eta: f64,
    /// Ranks below this are never examined.
    pub cutoff: usize,
    pub eps_pos: f64,
    pub eps_neg: f64,
    pub grade_max: u8,
}

impl Default for PbmConfig {
    fn default() -> Self {
        PbmConfig {
            eta: 1.0,
            cutoff: 10,
            eps_pos: 1.0,
            eps_neg: 0.1,
            grade_max: 4,
        }
    }
}

impl PbmConfig {
    pub fn validate(&self) -> Result<(), ClickError> {
        if !(self.eta >= 0.0) {
            return Err(ClickError::Config("eta must be non-negative".into()));
        }
        if self.cutoff == 0 {
            return Err(ClickError::Config("cutoff must be at least 1".into()));
        }
        if !(0.0 <= self.eps_neg && self.eps_neg <= self.eps_pos && self.eps_pos <= 1.0) {
            return Err(ClickError::Config(
                "need 0 <= eps_neg <= eps_pos <= 1".into(),
            ));
        }
        Ok(())
    }

    /// Examination propensities for ranks `1..=cutoff`.
    pub fn propensities(&self) -> Vec<f64> {
        (1..=self.cutoff)
            .map(|r| examination_propensity(r, self))
            .collect()
    }

    /// Click probabilities indexed by grade.
    pub fn click_table(&self) -> Vec<f64> {
        (0..=self.grade_max)
            .map(|g| click_probability(g, self).expect("grade within range"))
            .collect()
    }
}

/// `(1/rank)^eta` within the cutoff, zero beyond it. Ranks are 1-based.
pub fn examination_propensity(rank: usize, cfg: &PbmConfig) -> f64 {
    if rank == 0 || rank > cfg.cutoff {
        return 0.0;
    }
    (1.0 / rank as f64).powf(cfg.eta)
}

pub fn click_probability(grade: u8, cfg: &PbmConfig) -> Result<f64, ClickError> {
    if grade > cfg.grade_max {
        return Err(ClickError::Grade {
            grade,
            grade_max: cfg.grade_max,
        });
    }
    if cfg.grade_max == 0 {
        return Ok(cfg.eps_pos);
    }
    let gain = (2f64.powi(grade as i32) - 1.0) / (2f64.powi(cfg.grade_max as i32) - 1.0);
    Ok(cfg.eps_neg + (cfg.eps_pos - cfg.eps_neg) * gain)
}

/// One simulated impression.
///
/// Only the examinable prefix (the first `cutoff` ranks of the random
/// permutation) is stored; positions past the cutoff have zero propensity
/// and can never be clicked. `displayed` holds indices into the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickSession {
    pub displayed: Vec<usize>,
    pub clicks: Vec<bool>,
    pub propensities: Vec<f64>,
}

impl ClickSession {
    pub fn n_clicks(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }
}

/// Precomputed per-rank and per-grade probabilities for repeated simulation.
#[derive(Debug, Clone)]
pub struct SessionSimulator {
    propensities: Vec<f64>,
    click_table: Vec<f64>,
}

impl SessionSimulator {
    pub fn new(cfg: &PbmConfig) -> Result<Self, ClickError> {
        cfg.validate()?;
        Ok(SessionSimulator {
            propensities: cfg.propensities(),
            click_table: cfg.click_table(),
        })
    }

    /// Simulates one session over a pool described by its grades.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        grades: &[u8],
        rng: &mut R,
    ) -> Result<ClickSession, ClickError> {
        if grades.is_empty() {
            return Err(ClickError::EmptyPool);
        }
        let depth = self.propensities.len().min(grades.len());
        // The first `depth` entries of a uniform permutation: a uniform
        // sample without replacement, in random order.
        let displayed = index::sample(rng, grades.len(), depth).into_vec();
        let propensities = self.propensities[..depth].to_vec();
        let mut clicks = Vec::with_capacity(depth);
        for (r, &item) in displayed.iter().enumerate() {
            let grade = grades[item] as usize;
            let p_click = *self
                .click_table
                .get(grade)
                .ok_or(ClickError::Grade {
                    grade: grade as u8,
                    grade_max: (self.click_table.len() - 1) as u8,
                })?;
            let examined = rng.random::<f64>() < propensities[r];
            let attracted = rng.random::<f64>() < p_click;
            clicks.push(examined && attracted);
        }
        Ok(ClickSession {
            displayed,
            clicks,
            propensities,
        })
    }
}

pub fn simulate_session<R: Rng + ?Sized>(
    pool: &Dataset,
    cfg: &PbmConfig,
    rng: &mut R,
) -> Result<ClickSession, ClickError> {
    SessionSimulator::new(cfg)?.simulate(&pool.grades(), rng)
}

/// CSV click log: `session_id,position,item_id,clicked,propensity`.
/// Positions are 1-based; `item_ids` maps pool indices to item ids.
pub fn click_log_csv(sessions: &[ClickSession], item_ids: &[usize]) -> String {
    let mut out = String::from("session_id,position,item_id,clicked,propensity\n");
    for (s, sess) in sessions.iter().enumerate() {
        for (r, (&idx, &c)) in sess.displayed.iter().zip(&sess.clicks).enumerate() {
            writeln!(
                out,
                "{s},{},{},{},{}",
                r + 1,
                item_ids[idx],
                c as u8,
                crate::format_sig(sess.propensities[r], 6)
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn propensity_values() {
        let cfg = PbmConfig::default();
        assert_eq!(examination_propensity(1, &cfg), 1.0);
        assert_eq!(examination_propensity(2, &cfg), 0.5);
        assert_eq!(examination_propensity(10, &cfg), 0.1);
        assert_eq!(examination_propensity(11, &cfg), 0.0);
        let steep = PbmConfig {
            eta: 2.0,
            ..cfg
        };
        assert_eq!(examination_propensity(2, &steep), 0.25);
    }

    #[test]
    fn click_probability_curve() {
        let cfg = PbmConfig::default();
        assert!((click_probability(0, &cfg).unwrap() - 0.1).abs() < 1e-15);
        assert!((click_probability(4, &cfg).unwrap() - 1.0).abs() < 1e-15);
        assert!((click_probability(2, &cfg).unwrap() - 0.28).abs() < 1e-15);
        assert_eq!(
            click_probability(5, &cfg),
            Err(ClickError::Grade {
                grade: 5,
                grade_max: 4
            })
        );
    }

    #[test]
    fn config_validation() {
        let bad = PbmConfig {
            eps_neg: 0.5,
            eps_pos: 0.2,
            ..PbmConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(PbmConfig {
            cutoff: 0,
            ..PbmConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn impossible_clicks() {
        let cfg = PbmConfig {
            eps_neg: 0.0,
            ..PbmConfig::default()
        };
        let sim = SessionSimulator::new(&cfg).unwrap();
        let grades = vec![0u8; 50];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert_eq!(sim.simulate(&grades, &mut rng).unwrap().n_clicks(), 0);
        }
    }

    #[test]
    fn certain_clicks() {
        let cfg = PbmConfig {
            eta: 0.0,
            eps_neg: 1.0,
            eps_pos: 1.0,
            ..PbmConfig::default()
        };
        let sim = SessionSimulator::new(&cfg).unwrap();
        let grades: Vec<u8> = (0..30).map(|i| (i % 5) as u8).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = sim.simulate(&grades, &mut rng).unwrap();
            assert_eq!(s.displayed.len(), 10);
            assert!(s.clicks.iter().all(|&c| c));
        }
    }

    #[test]
    fn short_pools_and_distinct_display() {
        let sim = SessionSimulator::new(&PbmConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sim.simulate(&[1, 2, 3], &mut rng).unwrap();
        assert_eq!(s.displayed.len(), 3);
        let mut d = s.displayed.clone();
        d.sort_unstable();
        assert_eq!(d, vec![0, 1, 2]);
        assert_eq!(s.propensities, vec![1.0, 0.5, 1.0 / 3.0]);
        assert_eq!(sim.simulate(&[], &mut rng), Err(ClickError::EmptyPool));
    }

    #[test]
    fn click_log_format() {
        let s = ClickSession {
            displayed: vec![1, 0],
            clicks: vec![true, false],
            propensities: vec![1.0, 0.5],
        };
        assert_eq!(
            click_log_csv(&[s], &[10, 11]),
            "session_id,position,item_id,clicked,propensity\n0,1,11,1,1\n0,2,10,0,0.5\n"
        );
    }
}
