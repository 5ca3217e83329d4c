//! Neural scorer trained from simulated clicks with an inverse-propensity
//! weighted listwise softmax cross-entropy.
//!
//! For one session with logits `z` over the top `loss_cutoff` displayed
//! positions, clicks `c` and examination propensities `p`:
//!
//! ```text
//! loss = − Σ_{r: c_r = 1} (1 / p_r) · log softmax(z)_r
//! ```
//!
//! Each training iteration simulates `batch_sessions` sessions on the
//! training pool, averages their loss gradients and takes one plain SGD
//! step. Validation logits are snapshotted every `checkpoint_every`
//! iterations; the checkpoint with the highest validation NDCG@10 is kept
//! as the best model.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clickmodel::{ClickError, ClickSession, PbmConfig, SessionSimulator};
use crate::dataio::Dataset;
use crate::metrics::ndcg_for_scores;

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("clicked position {0} has zero examination propensity")]
    ZeroPropensity(usize),
    #[error("logits, clicks and propensities differ in length")]
    Length,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged at iteration {iteration}: {loss}")]
    Diverged { iteration: usize, loss: f64 },
    #[error(transparent)]
    Click(#[from] ClickError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// One fully connected layer, `out = in · weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Multilayer perceptron with rectified hidden layers and a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpScorer {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
struct ForwardCache {
    /// Input followed by each hidden layer's post-activation output.
    activations: Vec<Array2<f64>>,
    logits: Array1<f64>,
}

impl MlpScorer {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = || rng.random_range(-bound..bound);
                let weight = Array2::from_shape_simple_fn((w[0], w[1]), &mut draw);
                let bias = Array1::from_shape_simple_fn(w[1], &mut draw);
                Dense { weight, bias }
            })
            .collect();
        MlpScorer { layers }
    }

    /// A scorer whose parameters are all zero.
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Self {
        let mut m = MlpScorer::new(input_dim, hidden, 0);
        for l in &mut m.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weight.ncols()));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn score(&self, features: &[f64]) -> Result<f64, RankerError> {
        if features.len() != self.input_dim() {
            return Err(RankerError::Dimension {
                expected: self.input_dim(),
                found: features.len(),
            });
        }
        let x = ArrayView2::from_shape((1, features.len()), features).expect("row shape");
        Ok(self.forward(x).logits[0])
    }

    /// Logits for a row-major `n × d` feature matrix.
    pub fn score_rows(&self, rows: &[f64]) -> Result<Vec<f64>, RankerError> {
        let d = self.input_dim();
        if rows.len() % d != 0 {
            return Err(RankerError::Dimension {
                expected: d,
                found: rows.len(),
            });
        }
        let x = ArrayView2::from_shape((rows.len() / d, d), rows).expect("matrix shape");
        Ok(self.forward(x).logits.to_vec())
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> ForwardCache {
        let mut activations = vec![x.to_owned()];
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            let mut h = activations.last().unwrap().dot(&layer.weight);
            h += &layer.bias;
            h.mapv_inplace(|v| v.max(0.0));
            activations.push(h);
        }
        let out = &self.layers[last];
        let mut logits = activations.last().unwrap().dot(&out.weight).column(0).to_owned();
        logits += out.bias[0];
        ForwardCache {
            activations,
            logits,
        }
    }

    /// Parameter gradients given `dL/dlogits` for the cached batch.
    fn backward(&self, cache: &ForwardCache, dlogits: &Array1<f64>) -> Vec<Dense> {
        let n_layers = self.layers.len();
        let mut grads = Vec::with_capacity(n_layers);
        let mut delta = dlogits.view().insert_axis(Axis(1)).to_owned();
        for li in (0..n_layers).rev() {
            let input = &cache.activations[li];
            let weight_grad = input.t().dot(&delta);
            let bias_grad = delta.sum_axis(Axis(0));
            if li > 0 {
                let mut d_in = delta.dot(&self.layers[li].weight.t());
                // Rectifier derivative from the post-activation values.
                ndarray::Zip::from(&mut d_in)
                    .and(input)
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    });
                delta = d_in;
            }
            grads.push(Dense {
                weight: weight_grad,
                bias: bias_grad,
            });
        }
        grads.reverse();
        grads
    }

    fn sgd_step(&mut self, grads: &[Dense], lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(grads) {
            l.weight.scaled_add(-lr, &g.weight);
            l.bias.scaled_add(-lr, &g.bias);
        }
    }

    /// Flattened parameters: per layer, row-major weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Gradient of `Σ_i dlogits[i] · logit_i` over the rows, flattened in
    /// [`MlpScorer::params`] order.
    pub fn param_gradient(&self, rows: &[f64], dlogits: &[f64]) -> Result<Vec<f64>, RankerError> {
        let d = self.input_dim();
        if rows.len() != dlogits.len() * d {
            return Err(RankerError::Dimension {
                expected: dlogits.len() * d,
                found: rows.len(),
            });
        }
        let x = ArrayView2::from_shape((dlogits.len(), d), rows).expect("matrix shape");
        let cache = self.forward(x);
        let grads = self.backward(&cache, &Array1::from(dlogits.to_vec()));
        let mut out = Vec::with_capacity(self.n_params());
        for g in &grads {
            out.extend(g.weight.iter());
            out.extend(g.bias.iter());
        }
        Ok(out)
    }

    pub fn from_params(sizes: &[usize], params: &[f64]) -> Result<Self, RankerError> {
        let mut layers = Vec::new();
        let mut off = 0;
        for w in sizes.windows(2) {
            let (nw, nb) = (w[0] * w[1], w[1]);
            if off + nw + nb > params.len() {
                return Err(RankerError::Config("parameter vector too short".into()));
            }
            let weight = Array2::from_shape_vec((w[0], w[1]), params[off..off + nw].to_vec())
                .expect("layer shape");
            let bias = Array1::from(params[off + nw..off + nw + nb].to_vec());
            off += nw + nb;
            layers.push(Dense { weight, bias });
        }
        if off != params.len() || layers.is_empty() || *sizes.last().unwrap() != 1 {
            return Err(RankerError::Config("parameter vector does not match sizes".into()));
        }
        Ok(MlpScorer { layers })
    }

    /// Scales the output layer by `c`, which scales every logit by `c`.
    pub fn scale_output(&mut self, c: f64) {
        let out = self.layers.last_mut().unwrap();
        out.weight *= c;
        out.bias *= c;
    }

    /// Writes `<stem>.json` (layer sizes) and `<stem>.bin` (little-endian f64
    /// parameters) into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), RankerError> {
        let manifest = CheckpointManifest {
            layer_sizes: self.layer_sizes(),
            n_params: self.n_params(),
            encoding: "f64-le".into(),
        };
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        let mut f = std::fs::File::create(dir.join(format!("{stem}.bin")))?;
        let bytes: Vec<u8> = self.params().iter().flat_map(|v| v.to_le_bytes()).collect();
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, RankerError> {
        let manifest: CheckpointManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(dir.join(format!("{stem}.bin")))?.read_to_end(&mut bytes)?;
        if bytes.len() != manifest.n_params * 8 {
            return Err(RankerError::Config(format!(
                "expected {} parameters, file holds {} bytes",
                manifest.n_params,
                bytes.len()
            )));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        MlpScorer::from_params(&manifest.layer_sizes, &params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub layer_sizes: Vec<usize>,
    pub n_params: usize,
    pub encoding: String,
}

fn check_aligned(
    logits: &[f64],
    clicks: &[bool],
    propensities: &[f64],
) -> Result<(), RankerError> {
    if logits.len() != clicks.len() || logits.len() != propensities.len() {
        return Err(RankerError::Length);
    }
    Ok(())
}

/// IPS-weighted listwise softmax loss over the first `loss_cutoff` positions.
pub fn ips_listwise_loss(
    logits: &[f64],
    clicks: &[bool],
    propensities: &[f64],
    loss_cutoff: usize,
) -> Result<f64, RankerError> {
    ips_listwise_loss_grad(logits, clicks, propensities, loss_cutoff).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every logit (zero past the cutoff).
pub fn ips_listwise_loss_grad(
    logits: &[f64],
    clicks: &[bool],
    propensities: &[f64],
    loss_cutoff: usize,
) -> Result<(f64, Vec<f64>), RankerError> {
    check_aligned(logits, clicks, propensities)?;
    let m = loss_cutoff.min(logits.len());
    let mut grad = vec![0.0; logits.len()];
    let mut total_weight = 0.0;
    for r in 0..m {
        if clicks[r] {
            if !(propensities[r] > 0.0) {
                return Err(RankerError::ZeroPropensity(r + 1));
            }
            total_weight += 1.0 / propensities[r];
        }
    }
    if total_weight == 0.0 {
        return Ok((0.0, grad));
    }
    let zmax = logits[..m].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = zmax + logits[..m].iter().map(|z| (z - zmax).exp()).sum::<f64>().ln();
    let mut loss = 0.0;
    for r in 0..m {
        let softmax = (logits[r] - lse).exp();
        grad[r] = total_weight * softmax;
        if clicks[r] {
            let w = 1.0 / propensities[r];
            loss -= w * (logits[r] - lse);
            grad[r] -= w;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_sessions: usize,
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub loss_cutoff: usize,
    pub hidden: Vec<usize>,
    /// NDCG cutoff used for checkpoint selection.
    pub select_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_sessions: 256,
            iterations: 500,
            checkpoint_every: 50,
            loss_cutoff: 10,
            hidden: vec![256, 128],
            select_k: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RankerError> {
        if !(self.learning_rate > 0.0)
            || self.batch_sessions == 0
            || self.iterations == 0
            || self.checkpoint_every == 0
            || self.loss_cutoff == 0
            || self.select_k == 0
        {
            return Err(RankerError::Config(
                "all training hyperparameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A model snapshot and its validation-set behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub scorer: MlpScorer,
    pub val_logits: Vec<f64>,
    pub val_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub checkpoints: Vec<Checkpoint>,
    pub best: usize,
    /// Mean per-session loss of every iteration.
    pub loss_history: Vec<f64>,
}

impl TrainedModel {
    pub fn best_checkpoint(&self) -> &Checkpoint {
        &self.checkpoints[self.best]
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("at least one checkpoint")
    }
}

/// Random streams derived from the training seed.
const INIT_STREAM: u64 = 0;
const CLICK_STREAM: u64 = 1;

pub fn train(
    train_ds: &Dataset,
    val_ds: &Dataset,
    pbm: &PbmConfig,
    cfg: &TrainConfig,
) -> Result<TrainedModel, RankerError> {
    train_observed(train_ds, val_ds, pbm, cfg, |_, _| {})
}

/// [`train`] with a callback that sees every simulated session of every
/// iteration (used for click-log dumps).
pub fn train_observed<F>(
    train_ds: &Dataset,
    val_ds: &Dataset,
    pbm: &PbmConfig,
    cfg: &TrainConfig,
    mut on_session: F,
) -> Result<TrainedModel, RankerError>
where
    F: FnMut(usize, &ClickSession),
{
    cfg.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(RankerError::Config("empty train or validation set".into()));
    }
    if val_ds.dim != train_ds.dim {
        return Err(RankerError::Dimension {
            expected: train_ds.dim,
            found: val_ds.dim,
        });
    }
    let sim = SessionSimulator::new(pbm)?;
    let dim = train_ds.dim;
    let grades = train_ds.grades();
    let train_rows = train_ds.feature_rows();
    let val_rows = val_ds.feature_rows();
    let val_grades = val_ds.grades();

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(INIT_STREAM);
    let mut model = MlpScorer::new(dim, &cfg.hidden, init_rng.random());
    let mut click_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    click_rng.set_stream(CLICK_STREAM);

    let mut checkpoints = Vec::new();
    let mut loss_history = Vec::with_capacity(cfg.iterations);
    let mut batch_rows: Vec<f64> = Vec::new();
    let mut batch: Vec<ClickSession> = Vec::with_capacity(cfg.batch_sessions);

    for iteration in 1..=cfg.iterations {
        batch.clear();
        batch_rows.clear();
        for _ in 0..cfg.batch_sessions {
            let mut s = sim.simulate(&grades, &mut click_rng)?;
            on_session(iteration, &s);
            // Sessions without clicks inside the loss window carry no gradient.
            let m = cfg.loss_cutoff.min(s.displayed.len());
            if !s.clicks[..m].iter().any(|&c| c) {
                continue;
            }
            s.displayed.truncate(m);
            s.clicks.truncate(m);
            s.propensities.truncate(m);
            for &i in &s.displayed {
                batch_rows.extend_from_slice(&train_rows[i * dim..(i + 1) * dim]);
            }
            batch.push(s);
        }

        let mut loss_sum = 0.0;
        if !batch.is_empty() {
            let x = ArrayView2::from_shape((batch_rows.len() / dim, dim), &batch_rows)
                .expect("batch shape");
            let cache = model.forward(x);
            let mut dlogits = Array1::zeros(cache.logits.len());
            let mut off = 0;
            for s in &batch {
                let n = s.displayed.len();
                let z = cache.logits.slice(ndarray::s![off..off + n]);
                let (loss, g) = ips_listwise_loss_grad(
                    z.as_slice().expect("contiguous logits"),
                    &s.clicks,
                    &s.propensities,
                    cfg.loss_cutoff,
                )?;
                loss_sum += loss;
                for (j, gj) in g.into_iter().enumerate() {
                    dlogits[off + j] = gj / cfg.batch_sessions as f64;
                }
                off += n;
            }
            let mean_loss = loss_sum / cfg.batch_sessions as f64;
            if !mean_loss.is_finite() {
                return Err(RankerError::Diverged {
                    iteration,
                    loss: mean_loss,
                });
            }
            let grads = model.backward(&cache, &dlogits);
            model.sgd_step(&grads, cfg.learning_rate);
        }
        loss_history.push(loss_sum / cfg.batch_sessions as f64);

        if iteration % cfg.checkpoint_every == 0 || iteration == cfg.iterations {
            let val_logits = model.score_rows(&val_rows)?;
            if val_logits.iter().any(|v| !v.is_finite()) {
                return Err(RankerError::Diverged {
                    iteration,
                    loss: f64::NAN,
                });
            }
            let val_ndcg = ndcg_for_scores(&val_logits, &val_grades, cfg.select_k);
            checkpoints.push(Checkpoint {
                iteration,
                scorer: model.clone(),
                val_logits,
                val_ndcg,
            });
        }
    }

    let best = checkpoints
        .iter()
        .enumerate()
        .fold(0, |best, (i, c)| {
            if c.val_ndcg > checkpoints[best].val_ndcg {
                i
            } else {
                best
            }
        });
    Ok(TrainedModel {
        checkpoints,
        best,
        loss_history,
    })
}

/// Per-item logits and their softmax over the whole list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub logits: Vec<f64>,
    pub softmax: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let zmax = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - zmax).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn predict(model: &MlpScorer, ds: &Dataset) -> Result<Predictions, RankerError> {
    if ds.dim != model.input_dim() {
        return Err(RankerError::Dimension {
            expected: model.input_dim(),
            found: ds.dim,
        });
    }
    let logits = model.score_rows(&ds.feature_rows())?;
    let softmax = softmax(&logits);
    Ok(Predictions { logits, softmax })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Item;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_model_scores_zero() {
        let m = MlpScorer::zeros(3, &[8, 4]);
        assert_eq!(m.score(&[1.0, -2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn score_rejects_wrong_dimension() {
        let m = MlpScorer::new(2, &[4], 1);
        assert!(matches!(
            m.score(&[1.0]),
            Err(RankerError::Dimension { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn output_scaling_scales_logits() {
        let m = MlpScorer::new(2, &[16, 8], 4);
        let rows = [0.1, 0.2, -1.0, 0.5, 2.0, -0.3, 0.0, 0.0];
        let base = m.score_rows(&rows).unwrap();
        let mut scaled = m.clone();
        scaled.scale_output(3.0);
        let out = scaled.score_rows(&rows).unwrap();
        for (a, b) in base.iter().zip(&out) {
            assert_abs_diff_eq!(3.0 * a, b, epsilon = 1e-12);
        }
        assert_eq!(
            crate::metrics::rank_by_score(&base),
            crate::metrics::rank_by_score(&out)
        );
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpScorer::new(2, &[256, 128], 9);
        let b = MlpScorer::new(2, &[256, 128], 9);
        assert_eq!(a.score(&[0.3, 0.7]).unwrap(), b.score(&[0.3, 0.7]).unwrap());
        assert_eq!(a.n_params(), 2 * 256 + 256 + 256 * 128 + 128 + 128 + 1);
        let bound = 1.0 / 2f64.sqrt();
        assert!(a.layers[0].weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn loss_hand_cases() {
        assert_eq!(
            ips_listwise_loss(&[0.3, 0.1], &[false, false], &[1.0, 0.5], 10).unwrap(),
            0.0
        );
        let l = ips_listwise_loss(&[0.0, 0.0], &[true, false], &[1.0, 0.5], 10).unwrap();
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-12);
        let l = ips_listwise_loss(&[0.0, 0.0], &[true, false], &[0.5, 0.5], 10).unwrap();
        assert_abs_diff_eq!(l, 2.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_ignores_positions_past_cutoff() {
        let a = ips_listwise_loss(&[1.0, 0.0, 5.0], &[true, false, true], &[1.0, 0.5, 0.3], 2)
            .unwrap();
        let b = ips_listwise_loss(&[1.0, 0.0], &[true, false], &[1.0, 0.5], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_propensity_click_is_an_error() {
        assert!(matches!(
            ips_listwise_loss(&[0.0, 0.0], &[false, true], &[1.0, 0.0], 10),
            Err(RankerError::ZeroPropensity(2))
        ));
        assert!(matches!(
            ips_listwise_loss(&[0.0], &[false, true], &[1.0, 0.0], 10),
            Err(RankerError::Length)
        ));
    }

    #[test]
    fn params_roundtrip_through_disk() {
        let m = MlpScorer::new(3, &[5, 4], 2);
        let dir = std::env::temp_dir().join(format!("fairrel-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        m.save(&dir, "ckpt").unwrap();
        assert_eq!(MlpScorer::load(&dir, "ckpt").unwrap(), m);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn softmax_properties() {
        let p = softmax(&[1.0, 2.0, 3.0, 3.0]);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(p[2], p[3]);
    }

    fn tiny_dataset(n: usize, offset: usize) -> Dataset {
        let items = (0..n)
            .map(|i| {
                let grade = (i % 5) as u8;
                Item {
                    id: i + offset,
                    features: vec![grade as f64 - 2.0, ((i * 7) % 3) as f64],
                    grade,
                    group: (i % 2) as u8,
                }
            })
            .collect();
        Dataset::new(items, 2, 4).unwrap()
    }

    #[test]
    fn predict_normalizes_and_preserves_order() {
        let ds = tiny_dataset(20, 0);
        let m = MlpScorer::new(2, &[8], 5);
        let p = predict(&m, &ds).unwrap();
        assert_abs_diff_eq!(p.softmax.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(
            crate::metrics::rank_by_score(&p.logits),
            crate::metrics::rank_by_score(&p.softmax)
        );
        // Items 0 and 15 share features.
        assert_eq!(p.logits[0], p.logits[15]);
    }

    #[test]
    fn training_is_reproducible_and_learns_an_easy_signal() {
        let train_ds = tiny_dataset(200, 0);
        let val_ds = tiny_dataset(50, 1000);
        let cfg = TrainConfig {
            iterations: 60,
            checkpoint_every: 20,
            batch_sessions: 32,
            hidden: vec![16, 8],
            learning_rate: 0.05,
            seed: 3,
            ..TrainConfig::default()
        };
        let pbm = PbmConfig::default();
        let a = train(&train_ds, &val_ds, &pbm, &cfg).unwrap();
        let b = train(&train_ds, &val_ds, &pbm, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.checkpoints.iter().map(|c| c.iteration).collect::<Vec<_>>(),
            vec![20, 40, 60]
        );
        let best = a.best_checkpoint();
        assert!(a.checkpoints.iter().all(|c| c.val_ndcg <= best.val_ndcg));
        assert!(best.val_ndcg > 0.9, "ndcg {}", best.val_ndcg);
    }

    #[test]
    fn checkpoint_every_ten_is_supported() {
        let cfg = TrainConfig {
            iterations: 30,
            checkpoint_every: 10,
            batch_sessions: 4,
            hidden: vec![4],
            ..TrainConfig::default()
        };
        let m = train(
            &tiny_dataset(30, 0),
            &tiny_dataset(10, 100),
            &PbmConfig::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(m.checkpoints.len(), 3);
    }
}
