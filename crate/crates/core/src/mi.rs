//! Neural mutual-information estimation with the Donsker–Varadhan bound.
//!
//! A statistics network `F` scores concatenated `(x, y)` pairs. The estimate
//! on a batch is `mean_joint F − log mean_product exp F`. Training ascends
//! that estimate on fresh batches and keeps the best parameters seen, judged
//! either by a fixed monitoring batch or by the exponentially smoothed batch
//! estimate.
//!
//! For provider inspection the network is cut at `split_layer`: the bottom
//! runs at the provider, the activations cross to the label owner, and the
//! top finishes the estimate.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowTensor;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, Matrix, NetCheckpoint, Optimizer, MI_LEARNING_RATE};
use crate::rng::{rng_from, stream, SimRng};

pub const DEFAULT_SAMPLES: usize = 50;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EMA_DECAY: f64 = 0.9;
pub const DEFAULT_MONITOR_SAMPLES: usize = 2000;
pub const DEFAULT_MONITOR_EVERY: usize = 10;

/// Flatten a windowed tensor into a `[T, window]` series.
pub fn window_matrix(w: &WindowTensor) -> Matrix {
    Matrix::from_vec(w.time_steps, w.sample_len(), w.data.clone()).expect("tensor data matches its shape")
}

/// Index pairs for one DV estimate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiSampleBatch {
    /// Shared index for x and y.
    pub joint: Vec<usize>,
    /// Independently drawn (x index, y index).
    pub product: Vec<(usize, usize)>,
}

impl MiSampleBatch {
    pub fn n(&self) -> usize {
        self.joint.len()
    }

    /// Stack joint rows then product rows of `concat(x, y)`.
    pub fn inputs(&self, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        check_series(x, y)?;
        let (dx, dy) = (x.cols(), y.cols());
        let rows = self.joint.len() + self.product.len();
        let mut m = Matrix::zeros(rows, dx + dy);
        let pairs = self.joint.iter().map(|&t| (t, t)).chain(self.product.iter().copied());
        for (r, (tx, ty)) in pairs.enumerate() {
            if tx >= x.rows() || ty >= y.rows() {
                return Err(Error::Batch(format!(
                    "sample index ({tx}, {ty}) out of range for series of length {}",
                    x.rows()
                )));
            }
            let row = m.row_mut(r);
            row[..dx].copy_from_slice(x.row(tx));
            row[dx..].copy_from_slice(y.row(ty));
        }
        Ok(m)
    }
}

fn check_series(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::dim("paired series length", x.rows(), y.rows()));
    }
    Ok(())
}

/// Draw `n` joint and `n` product index pairs uniformly with replacement.
pub fn sample_indices<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Result<MiSampleBatch> {
    if n == 0 {
        return Err(Error::Config("MI sample count must be ≥ 1".into()));
    }
    if len < 2 {
        return Err(Error::Config(format!(
            "MI sampling needs series of length ≥ 2 to decorrelate product pairs, got {len}"
        )));
    }
    let joint = (0..n).map(|_| rng.random_range(0..len)).collect();
    let product = (0..n)
        .map(|_| (rng.random_range(0..len), rng.random_range(0..len)))
        .collect();
    Ok(MiSampleBatch { joint, product })
}

pub fn sample_batch(x: &Matrix, y: &Matrix, n: usize, seed: u64) -> Result<MiSampleBatch> {
    check_series(x, y)?;
    sample_indices(x.rows(), n, &mut rng_from(seed, &[stream::MI_BATCH]))
}

/// `mean(joint) − log mean exp(product)`, stabilized by the product maximum.
pub fn dv_from_outputs(joint: &[f64], product: &[f64]) -> Result<f64> {
    if joint.is_empty() || product.is_empty() {
        return Err(Error::Config("DV estimate needs a non-empty batch".into()));
    }
    let mean_joint = joint.iter().sum::<f64>() / joint.len() as f64;
    Ok(mean_joint - log_mean_exp(product))
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = v.iter().map(|f| (f - max).exp()).sum();
    max + (s / v.len() as f64).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiTrainConfig {
    /// Gradient steps, one fresh batch each.
    pub steps: usize,
    pub learning_rate: f64,
    pub samples: usize,
    pub hidden: usize,
    pub ema_decay: f64,
    pub split_layer: usize,
    /// Size of the fixed batch used to pick the returned parameters. Zero
    /// picks by the smoothed training estimate instead.
    pub monitor_samples: usize,
    pub monitor_every: usize,
}

impl Default for MiTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: MI_LEARNING_RATE,
            samples: DEFAULT_SAMPLES,
            hidden: DEFAULT_HIDDEN,
            ema_decay: DEFAULT_EMA_DECAY,
            split_layer: 1,
            monitor_samples: DEFAULT_MONITOR_SAMPLES,
            monitor_every: DEFAULT_MONITOR_EVERY,
        }
    }
}

impl MiTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.samples == 0 || self.hidden == 0 {
            return Err(Error::Config("mi.steps, mi.samples and mi.hidden must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("mi.learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("mi.ema_decay must be in [0, 1), got {}", self.ema_decay)));
        }
        if self.monitor_samples > 0 && self.monitor_every == 0 {
            return Err(Error::Config("mi.monitor_every must be ≥ 1 when monitoring is on".into()));
        }
        if !(1..3).contains(&self.split_layer) {
            return Err(Error::Config(format!(
                "mi.split_layer must be 1 or 2 for the 3-layer statistics network, got {}",
                self.split_layer
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiModel {
    /// Best parameters seen during training.
    pub statistics_net: DenseNet,
    pub split_layer: usize,
    pub x_dim: usize,
    pub y_dim: usize,
    /// Raw per-step DV estimates.
    pub train_history: Vec<f64>,
    pub smoothed_history: Vec<f64>,
    pub best_step: usize,
    /// Selection value of `statistics_net`: the monitoring-batch estimate, or
    /// the smoothed estimate when monitoring is off.
    pub best_estimate: f64,
    /// Parameters after the last step.
    pub final_net: DenseNet,
}

#[derive(Serialize, Deserialize)]
struct MiCheckpoint {
    split_layer: usize,
    x_dim: usize,
    y_dim: usize,
    best_step: usize,
    best_estimate: f64,
    net: NetCheckpoint,
}

impl MiModel {
    /// Wrap an existing network; checks the split and output width.
    pub fn new(statistics_net: DenseNet, split_layer: usize, x_dim: usize) -> Result<Self> {
        let layers = statistics_net.layer_count();
        if split_layer == 0 || split_layer >= layers {
            return Err(Error::Config(format!(
                "split_layer must be in 1..{layers}, got {split_layer}"
            )));
        }
        if statistics_net.output_dim() != 1 {
            return Err(Error::dim("statistics network output", 1, statistics_net.output_dim()));
        }
        let input = statistics_net.input_dim();
        if x_dim == 0 || x_dim >= input {
            return Err(Error::Config(format!("x_dim {x_dim} must split input width {input}")));
        }
        Ok(Self {
            final_net: statistics_net.clone(),
            statistics_net,
            split_layer,
            x_dim,
            y_dim: input - x_dim,
            train_history: Vec::new(),
            smoothed_history: Vec::new(),
            best_step: 0,
            best_estimate: f64::NEG_INFINITY,
        })
    }

    fn check_dims(&self, x: &Matrix, y: &Matrix) -> Result<()> {
        check_series(x, y)?;
        if x.cols() != self.x_dim || y.cols() != self.y_dim {
            return Err(Error::dim(
                "MI model pair widths",
                format!("(x {}, y {})", self.x_dim, self.y_dim),
                format!("(x {}, y {})", x.cols(), y.cols()),
            ));
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let ckpt = MiCheckpoint {
            split_layer: self.split_layer,
            x_dim: self.x_dim,
            y_dim: self.y_dim,
            best_step: self.best_step,
            best_estimate: self.best_estimate,
            net: self.statistics_net.to_checkpoint(),
        };
        let text = serde_json::to_string(&ckpt)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: MiCheckpoint = serde_json::from_str(&text)?;
        let mut m = Self::new(DenseNet::from_checkpoint(&ckpt.net)?, ckpt.split_layer, ckpt.x_dim)?;
        if m.y_dim != ckpt.y_dim {
            return Err(Error::dim("checkpoint y_dim", ckpt.y_dim, m.y_dim));
        }
        m.best_step = ckpt.best_step;
        m.best_estimate = ckpt.best_estimate;
        Ok(m)
    }
}

fn split_outputs(out: &Matrix, n: usize) -> (Vec<f64>, Vec<f64>) {
    let d = out.data();
    (d[..n].to_vec(), d[n..].to_vec())
}

/// DV estimate of `model` on a given batch.
pub fn dv_estimate(model: &MiModel, x: &Matrix, y: &Matrix, batch: &MiSampleBatch) -> Result<f64> {
    model.check_dims(x, y)?;
    let out = model.statistics_net.predict(&batch.inputs(x, y)?)?;
    let (j, p) = split_outputs(&out, batch.n());
    dv_from_outputs(&j, &p)
}

/// Gradient ascent on the DV estimate with a fresh batch per step.
pub fn train_mi(x: &Matrix, y: &Matrix, cfg: &MiTrainConfig, seed: u64) -> Result<MiModel> {
    cfg.validate()?;
    check_series(x, y)?;
    let mut init_rng = rng_from(seed, &[stream::NN_INIT]);
    let dims = [x.cols() + y.cols(), cfg.hidden, cfg.hidden, 1];
    let acts = [Activation::Relu, Activation::Relu, Activation::Identity];
    let mut net = DenseNet::new(&dims, &acts, &mut init_rng)?;
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    let mut batch_rng: SimRng = rng_from(seed, &[stream::MI_BATCH]);
    let n = cfg.samples;
    let mut model = MiModel::new(net.clone(), cfg.split_layer, x.cols())?;
    let monitor = if cfg.monitor_samples > 0 {
        let b = sample_indices(x.rows(), cfg.monitor_samples, &mut rng_from(seed, &[stream::MI_BATCH, 1]))?;
        Some(b.inputs(x, y)?)
    } else {
        None
    };
    let mut ema = 0.0;
    for step in 0..cfg.steps {
        let batch = sample_indices(x.rows(), n, &mut batch_rng)?;
        let (out, tape) = net.forward(&batch.inputs(x, y)?)?;
        let (j, p) = split_outputs(&out, n);
        let dv = dv_from_outputs(&j, &p)?;
        if !dv.is_finite() {
            return Err(Error::Training {
                step,
                detail: format!("DV estimate became {dv}"),
            });
        }
        ema = if step == 0 { dv } else { cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * dv };
        model.train_history.push(dv);
        model.smoothed_history.push(ema);
        let candidate = match &monitor {
            Some(inputs) if step % cfg.monitor_every == 0 || step + 1 == cfg.steps => {
                let out = net.predict(inputs)?;
                let (j, p) = split_outputs(&out, cfg.monitor_samples);
                Some(dv_from_outputs(&j, &p)?)
            }
            Some(_) => None,
            None => Some(ema),
        };
        if let Some(value) = candidate.filter(|v| *v > model.best_estimate) {
            model.best_estimate = value;
            model.best_step = step;
            model.statistics_net = net.clone();
        }
        // Descend on −DV: joint rows get −1/n, product rows the softmax weight.
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = p.iter().map(|f| (f - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut upstream = Matrix::zeros(2 * n, 1);
        for r in 0..n {
            upstream.set(r, 0, -1.0 / n as f64);
            upstream.set(n + r, 0, weights[r] / total);
        }
        let grads = net.backward(&tape, &upstream)?;
        opt.step(&mut net, &grads).map_err(|e| match e {
            Error::Numeric { layer, detail } => Error::Training {
                step,
                detail: format!("layer {layer}: {detail}"),
            },
            other => other,
        })?;
    }
    model.final_net = net;
    Ok(model)
}

/// Data-quality score: DV estimate of the trained model on a fresh batch of
/// `(provider_view, labels)`.
pub fn score_provider(model: &MiModel, view: &Matrix, labels: &Matrix, n: usize, seed: u64) -> Result<f64> {
    model.check_dims(view, labels)?;
    let batch = sample_indices(view.rows(), n, &mut rng_from(seed, &[stream::SCORE]))?;
    dv_estimate(model, view, labels, &batch)
}

/// Score averaged over several scoring seeds.
pub fn mean_score(model: &MiModel, view: &Matrix, labels: &Matrix, n: usize, seeds: &[u64]) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one scoring seed is required".into()));
    }
    let mut total = 0.0;
    for &s in seeds {
        total += score_provider(model, view, labels, n, s)?;
    }
    Ok(total / seeds.len() as f64)
}

/// Activations handed from the provider-side bottom to the label owner.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMessage {
    pub joint_rows: usize,
    pub activations: Matrix,
}

/// Provider side: run the bottom layers on the pair inputs.
pub fn provider_bottom(model: &MiModel, view: &Matrix, labels: &Matrix, batch: &MiSampleBatch) -> Result<BoundaryMessage> {
    model.check_dims(view, labels)?;
    let (activations, _) = model
        .statistics_net
        .forward_range(0..model.split_layer, &batch.inputs(view, labels)?)?;
    Ok(BoundaryMessage {
        joint_rows: batch.n(),
        activations,
    })
}

/// Label-owner side: finish the forward pass and the DV estimate.
pub fn authority_top(model: &MiModel, msg: &BoundaryMessage) -> Result<f64> {
    let layers = model.statistics_net.layer_count();
    let (out, _) = model
        .statistics_net
        .forward_range(model.split_layer..layers, &msg.activations)?;
    let (j, p) = split_outputs(&out, msg.joint_rows);
    dv_from_outputs(&j, &p)
}

/// Same batch and result as [`score_provider`], computed across the split.
pub fn split_inference(model: &MiModel, view: &Matrix, labels: &Matrix, n: usize, seed: u64) -> Result<f64> {
    let layers = model.statistics_net.layer_count();
    if model.split_layer == 0 || model.split_layer >= layers {
        return Err(Error::Config(format!(
            "split_layer must be in 1..{layers}, got {}",
            model.split_layer
        )));
    }
    let batch = sample_indices(view.rows(), n, &mut rng_from(seed, &[stream::SCORE]))?;
    let msg = provider_bottom(model, view, labels, &batch)?;
    authority_top(model, &msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian_pair(len: usize, noise_sd: f64, seed: u64) -> (Matrix, Matrix) {
        let mut rng = rng_from(seed, &[99]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + noise_sd * normal.sample(&mut rng)).collect();
        (Matrix::from_vec(len, 1, x).unwrap(), Matrix::from_vec(len, 1, y).unwrap())
    }

    fn independent_pair(len: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = rng_from(seed, &[98]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        (Matrix::from_vec(len, 1, x).unwrap(), Matrix::from_vec(len, 1, y).unwrap())
    }

    fn constant_model(c: f64) -> MiModel {
        let mut rng = rng_from(1, &[0]);
        let mut net = DenseNet::new(&[3, 4, 4, 1], &[Activation::Relu, Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let last = &mut net.layers_mut()[2];
        last.weights.data_mut().iter_mut().for_each(|w| *w = 0.0);
        last.bias[0] = c;
        MiModel::new(net, 1, 2).unwrap()
    }

    fn fresh_estimate(model: &MiModel, x: &Matrix, y: &Matrix) -> f64 {
        let batch = sample_batch(x, y, 20_000, 4242).unwrap();
        dv_estimate(model, x, y, &batch).unwrap()
    }

    #[test]
    fn constant_statistic_estimates_zero() {
        let x = Matrix::from_vec(10, 2, (0..20).map(f64::from).collect()).unwrap();
        let y = Matrix::from_vec(10, 1, (0..10).map(f64::from).collect()).unwrap();
        for c in [0.0, 3.5, -700.0] {
            let b = sample_batch(&x, &y, 50, 1).unwrap();
            assert!(dv_estimate(&constant_model(c), &x, &y, &b).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn stable_log_mean_exp_handles_large_values() {
        let v = dv_from_outputs(&[1000.0, 1000.0], &[1000.0, 1000.0]).unwrap();
        assert_eq!(v, 0.0);
        let v = dv_from_outputs(&[0.0], &[800.0, 0.0]).unwrap();
        assert!((v - -(800.0 - 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn sampling_contracts() {
        let (x, y) = independent_pair(300, 1);
        let b = sample_batch(&x, &y, 50, 3).unwrap();
        assert_eq!((b.joint.len(), b.product.len()), (50, 50));
        assert_eq!(b, sample_batch(&x, &y, 50, 3).unwrap());
        assert!(matches!(sample_batch(&x, &y, 0, 3), Err(Error::Config(_))));
        let (x1, y1) = independent_pair(1, 1);
        assert!(matches!(sample_batch(&x1, &y1, 5, 3), Err(Error::Config(_))));
    }

    #[test]
    fn gaussian_pair_recovers_analytic_mi() {
        let truth = 0.5 * (1.0f64 + 1.0 / 0.25).ln();
        let (x, y) = gaussian_pair(5000, 0.5, 2);
        let cfg = MiTrainConfig {
            steps: 2000,
            ..Default::default()
        };
        let estimates: Vec<f64> = (0..5)
            .map(|seed| fresh_estimate(&train_mi(&x, &y, &cfg, seed).unwrap(), &x, &y))
            .collect();
        let mean = estimates.iter().sum::<f64>() / 5.0;
        assert!((mean - truth).abs() < 0.2, "estimates {estimates:?} vs {truth}");
        assert!(estimates.iter().all(|e| *e < truth + 0.1), "{estimates:?}");
    }

    #[test]
    fn independent_pair_estimates_near_zero() {
        let (x, y) = independent_pair(5000, 3);
        let cfg = MiTrainConfig {
            steps: 2000,
            ..Default::default()
        };
        let m = train_mi(&x, &y, &cfg, 5).unwrap();
        let est = fresh_estimate(&m, &x, &y);
        assert!((-0.1..=0.15).contains(&est), "estimate {est}");
    }

    #[test]
    fn identical_pair_beats_independent() {
        let (x, _) = gaussian_pair(2000, 0.0, 4);
        let (xi, yi) = independent_pair(2000, 4);
        let cfg = MiTrainConfig {
            steps: 600,
            ..Default::default()
        };
        let same = train_mi(&x, &x, &cfg, 1).unwrap();
        let indep = train_mi(&xi, &yi, &cfg, 1).unwrap();
        assert!(same.best_estimate > 1.0, "{}", same.best_estimate);
        assert!(same.best_estimate > indep.best_estimate);
    }

    #[test]
    fn longer_training_never_lowers_best() {
        let (x, y) = gaussian_pair(500, 0.5, 5);
        let short = MiTrainConfig {
            steps: 100,
            ..Default::default()
        };
        let long = MiTrainConfig {
            steps: 200,
            ..Default::default()
        };
        let a = train_mi(&x, &y, &short, 9).unwrap();
        let b = train_mi(&x, &y, &long, 9).unwrap();
        assert_eq!(a.train_history[..], b.train_history[..100]);
        assert!(b.best_estimate >= a.best_estimate);
    }

    #[test]
    fn split_matches_unsplit_exactly() {
        let (x, y) = gaussian_pair(300, 0.5, 6);
        let cfg = MiTrainConfig {
            steps: 50,
            ..Default::default()
        };
        let m = train_mi(&x, &y, &cfg, 2).unwrap();
        for seed in 0..5 {
            assert_eq!(
                split_inference(&m, &x, &y, 50, seed).unwrap().to_bits(),
                score_provider(&m, &x, &y, 50, seed).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn invalid_split_is_rejected() {
        let m = constant_model(0.0);
        assert!(MiModel::new(m.statistics_net.clone(), 0, 2).is_err());
        assert!(MiModel::new(m.statistics_net.clone(), 3, 2).is_err());
        let mut bad = m.clone();
        bad.split_layer = 3;
        let x = Matrix::zeros(10, 2);
        let y = Matrix::zeros(10, 1);
        assert!(matches!(split_inference(&bad, &x, &y, 5, 0), Err(Error::Config(_))));
    }

    #[test]
    fn wrong_view_width_is_a_dimension_error() {
        let m = constant_model(0.0);
        let x = Matrix::zeros(10, 3);
        let y = Matrix::zeros(10, 1);
        assert!(matches!(score_provider(&m, &x, &y, 5, 0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (x, y) = gaussian_pair(200, 0.5, 7);
        let cfg = MiTrainConfig {
            steps: 20,
            ..Default::default()
        };
        let m = train_mi(&x, &y, &cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mi.json");
        m.save_json(&path).unwrap();
        let back = MiModel::load_json(&path).unwrap();
        assert_eq!(back.statistics_net, m.statistics_net);
        assert_eq!(back.split_layer, 1);
        assert_eq!(score_provider(&back, &x, &y, 50, 1).unwrap(), score_provider(&m, &x, &y, 50, 1).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn split_equivalence_holds_bitwise(seed in 0u64..10_000, split in 1usize..3, n in 1usize..80) {
            let (x, y) = gaussian_pair(64, 0.3, seed);
            let mut rng = rng_from(seed, &[1]);
            let net = DenseNet::new(&[2, 8, 8, 1], &[Activation::Relu, Activation::Relu, Activation::Identity], &mut rng).unwrap();
            let m = MiModel::new(net, split, 1).unwrap();
            prop_assert_eq!(
                split_inference(&m, &x, &y, n, seed).unwrap().to_bits(),
                score_provider(&m, &x, &y, n, seed).unwrap().to_bits()
            );
        }

        #[test]
        fn constant_shift_of_statistic_cancels(c in -50.0f64..50.0, seed in 0u64..1000) {
            let joint: Vec<f64> = (0..20).map(|i| ((i as u64 * 31 + seed) % 17) as f64 / 5.0).collect();
            let product: Vec<f64> = joint.iter().rev().map(|v| v * 0.7).collect();
            let a = dv_from_outputs(&joint, &product).unwrap();
            let shifted_j: Vec<f64> = joint.iter().map(|v| v + c).collect();
            let shifted_p: Vec<f64> = product.iter().map(|v| v + c).collect();
            prop_assert!((dv_from_outputs(&shifted_j, &shifted_p).unwrap() - a).abs() < 1e-9);
        }
    }
}
