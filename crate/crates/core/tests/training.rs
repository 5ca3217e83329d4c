//! End-to-end training behaviour on small synthetic lists.

use fairrel_core::clickmodel::{PbmConfig, SessionSimulator};
use fairrel_core::datagen::{sample_synthetic, DagConfig, UtilityDist};
use fairrel_core::dataio::{robust_scale_apply, robust_scale_fit, split, Dataset};
use fairrel_core::metrics::ndcg_for_scores;
use fairrel_core::ranker::{ips_listwise_loss, predict, train, MlpScorer, TrainConfig};
use fairrel_core::stats::kruskal_wallis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn prepared(n: usize, seed: u64) -> (Dataset, Dataset, Dataset) {
    let mut cfg = DagConfig::new(UtilityDist::normal());
    cfg.n = n;
    let ds = sample_synthetic(&cfg, seed).unwrap().dataset;
    let (tr, va, te) = split(&ds, (0.7, 0.1, 0.2), seed).unwrap();
    let sc = robust_scale_fit(&tr).unwrap();
    (
        robust_scale_apply(&sc, &tr).unwrap(),
        robust_scale_apply(&sc, &va).unwrap(),
        robust_scale_apply(&sc, &te).unwrap(),
    )
}

/// Mean IPS loss of `model` over a fixed, pre-simulated set of sessions.
fn held_out_loss(model: &MlpScorer, ds: &Dataset, pbm: &PbmConfig, sessions: usize) -> f64 {
    let sim = SessionSimulator::new(pbm).unwrap();
    let grades = ds.grades();
    let logits = model.score_rows(&ds.feature_rows()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut total = 0.0;
    for _ in 0..sessions {
        let s = sim.simulate(&grades, &mut rng).unwrap();
        let z: Vec<f64> = s.displayed.iter().map(|&i| logits[i]).collect();
        total += ips_listwise_loss(&z, &s.clicks, &s.propensities, pbm.cutoff).unwrap();
    }
    total / sessions as f64
}

#[test]
fn held_out_loss_trends_down() {
    let (tr, va, _) = prepared(3000, 1);
    let pbm = PbmConfig::default();
    let cfg = TrainConfig {
        seed: 3,
        ..TrainConfig::default()
    };
    let model = train(&tr, &va, &pbm, &cfg).unwrap();
    let losses: Vec<f64> = model
        .checkpoints
        .iter()
        .map(|c| held_out_loss(&c.scorer, &tr, &pbm, 20_000))
        .collect();
    let first: f64 = losses[..3].iter().sum::<f64>() / 3.0;
    let last: f64 = losses[losses.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(last <= first, "held-out loss rose: {losses:?}");
}

#[test]
fn clicks_without_relevance_signal_learn_nothing() {
    // With eps_pos == eps_neg clicks are independent of grades. Test NDCG of
    // trained scorers should look like that of untrained scorers.
    let (tr, va, te) = prepared(2000, 2);
    let pbm = PbmConfig {
        eps_pos: 0.5,
        eps_neg: 0.5,
        ..PbmConfig::default()
    };
    let grades = te.grades();
    let rows = te.feature_rows();
    let trained: Vec<f64> = (0..8)
        .map(|seed| {
            let cfg = TrainConfig {
                seed,
                iterations: 100,
                ..TrainConfig::default()
            };
            let m = train(&tr, &va, &pbm, &cfg).unwrap();
            let p = predict(&m.best_checkpoint().scorer, &te).unwrap();
            ndcg_for_scores(&p.logits, &grades, 10)
        })
        .collect();
    let untrained: Vec<f64> = (100..140)
        .map(|seed| {
            let m = MlpScorer::new(te.dim, &[256, 128], seed);
            ndcg_for_scores(&m.score_rows(&rows).unwrap(), &grades, 10)
        })
        .collect();
    let r = kruskal_wallis(&[&trained, &untrained]).unwrap();
    assert!(
        r.p_value > 0.01,
        "trained {trained:?} differs from untrained (p = {})",
        r.p_value
    );
}
