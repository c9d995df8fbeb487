//! Split-model training between one label owner (MA) and one provider (MP)
//! per segment.
//!
//! Each MP runs a bottom network on its own features and sends the embedding
//! (an [`IntermediateBundle`]) to the MA. The MA concatenates bundles by
//! segment id, runs the top network, computes the loss and returns one
//! [`BundleGradient`] per segment. MA-side functions take bundles, never
//! feature tensors.
//!
//! [`CentralizedModel`] is the same computation as one network whose bottom
//! layers are block diagonal. With matching seeds and batch order it follows
//! the federated parameter trajectory exactly.

use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{apply_lazy_policy, historical_view, LazyPolicy, Segment, TrafficDataset, WindowTensor, STATES, STATE_NAMES};
use crate::error::{Error, Result};
use crate::mi::window_matrix;
use crate::nn::{Activation, Dense, DenseNet, Gradients, Matrix, Optimizer, Tape, VFL_LEARNING_RATE};
use crate::rng::{rng_from, stream};
use crate::selection::SelectionMatrix;

pub const VALIDATION_FRACTION: f64 = 0.2;
const TOP_INIT_TAG: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Vfl,
    Central,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vfl" => Ok(Self::Vfl),
            "central" => Ok(Self::Central),
            other => Err(Error::Config(format!("unknown training mode `{other}`; expected vfl or central"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VflConfig {
    pub embedding_dim: usize,
    pub bottom_hidden: usize,
    pub top_hidden: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Run provider forward/backward passes on the rayon pool.
    pub parallel: bool,
}

impl Default for VflConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            bottom_hidden: 32,
            top_hidden: 64,
            batch_size: 16,
            epochs: 50,
            learning_rate: VFL_LEARNING_RATE,
            parallel: false,
        }
    }
}

impl VflConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.bottom_hidden == 0 || self.top_hidden == 0 {
            return Err(Error::Config("vfl layer widths must be ≥ 1".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("vfl.batch_size and vfl.epochs must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("vfl.learning_rate must be > 0, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Embedding from one provider for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct IntermediateBundle {
    pub segment: usize,
    pub batch: Vec<usize>,
    pub z: Matrix,
}

/// Gradient of the loss with respect to one provider's embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleGradient {
    pub segment: usize,
    pub batch: Vec<usize>,
    pub grad: Matrix,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub epoch: usize,
    pub batch: usize,
    pub from: String,
    pub to: String,
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug)]
enum Message {
    Bundle(IntermediateBundle),
    Gradient(BundleGradient),
}

/// In-process queue between parties that logs every message it carries.
#[derive(Clone, Debug, Default)]
pub struct Channel {
    queue: VecDeque<Message>,
    log: Vec<MessageRecord>,
}

impl Channel {
    fn send(&mut self, epoch: usize, batch: usize, msg: Message) {
        let (from, to, kind, shape) = match &msg {
            Message::Bundle(b) => (format!("mp{}", b.segment), "ma".to_string(), "bundle", b.z.shape()),
            Message::Gradient(g) => ("ma".to_string(), format!("mp{}", g.segment), "gradient", g.grad.shape()),
        };
        self.log.push(MessageRecord {
            epoch,
            batch,
            from,
            to,
            kind: kind.into(),
            rows: shape.0,
            cols: shape.1,
        });
        self.queue.push_back(msg);
    }

    fn drain_bundles(&mut self) -> Result<Vec<IntermediateBundle>> {
        self.queue
            .drain(..)
            .map(|m| match m {
                Message::Bundle(b) => Ok(b),
                Message::Gradient(_) => Err(Error::Protocol("gradient found in the bundle phase".into())),
            })
            .collect()
    }

    fn drain_gradients(&mut self) -> Result<Vec<BundleGradient>> {
        self.queue
            .drain(..)
            .map(|m| match m {
                Message::Gradient(g) => Ok(g),
                Message::Bundle(_) => Err(Error::Protocol("bundle found in the gradient phase".into())),
            })
            .collect()
    }

    pub fn log(&self) -> &[MessageRecord] {
        &self.log
    }
}

/// A provider: its segment, its feature series `[T, window]` and its bottom net.
#[derive(Clone, Debug)]
pub struct MpParty {
    pub segment: Segment,
    features: Matrix,
    pub bottom: DenseNet,
    optimizer: Optimizer,
    tape: Option<Tape>,
    pub frozen: bool,
}

impl MpParty {
    pub fn new(segment: Segment, features: Matrix, bottom: DenseNet, learning_rate: f64) -> Result<Self> {
        if features.cols() != bottom.input_dim() {
            return Err(Error::dim(
                format!("features of segment {}", segment.id),
                bottom.input_dim(),
                features.cols(),
            ));
        }
        Ok(Self {
            segment,
            features,
            bottom,
            optimizer: Optimizer::adam(learning_rate)?,
            tape: None,
            frozen: false,
        })
    }

    pub fn time_steps(&self) -> usize {
        self.features.rows()
    }

    /// Swap in different data, e.g. a lazily produced view.
    pub fn set_features(&mut self, features: Matrix) -> Result<()> {
        if features.shape() != self.features.shape() {
            return Err(Error::dim(
                format!("replacement features of segment {}", self.segment.id),
                format!("{:?}", self.features.shape()),
                format!("{:?}", features.shape()),
            ));
        }
        self.features = features;
        Ok(())
    }

    fn rows(&self, batch: &[usize]) -> Result<Matrix> {
        let cols = self.features.cols();
        let mut x = Matrix::zeros(batch.len(), cols);
        for (r, &t) in batch.iter().enumerate() {
            if t >= self.features.rows() {
                return Err(Error::Batch(format!(
                    "index {t} out of range for segment {} with {} samples",
                    self.segment.id,
                    self.features.rows()
                )));
            }
            x.row_mut(r).copy_from_slice(self.features.row(t));
        }
        Ok(x)
    }

    /// Embed a batch and keep the tape for the backward pass.
    pub fn forward(&mut self, batch: &[usize]) -> Result<IntermediateBundle> {
        let (z, tape) = self.bottom.forward(&self.rows(batch)?)?;
        self.tape = Some(tape);
        Ok(IntermediateBundle {
            segment: self.segment.id,
            batch: batch.to_vec(),
            z,
        })
    }

    /// Embed without recording a tape.
    pub fn embed(&self, batch: &[usize]) -> Result<IntermediateBundle> {
        Ok(IntermediateBundle {
            segment: self.segment.id,
            batch: batch.to_vec(),
            z: self.bottom.predict(&self.rows(batch)?)?,
        })
    }

    pub fn backward(&mut self, g: &BundleGradient) -> Result<()> {
        if g.segment != self.segment.id {
            return Err(Error::Protocol(format!(
                "segment {} received the gradient for segment {}",
                self.segment.id, g.segment
            )));
        }
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::Contract(format!("segment {} has no forward pass to differentiate", self.segment.id)))?;
        let grads = self.bottom.backward(&tape, &g.grad)?;
        if !self.frozen {
            self.optimizer.step(&mut self.bottom, &grads)?;
        }
        Ok(())
    }
}

/// The label owner: labels `[T, τ_o·|E|·s]` and the top net.
#[derive(Clone, Debug)]
pub struct MaParty {
    labels: Matrix,
    pub top: DenseNet,
    optimizer: Optimizer,
    tape: Option<Tape>,
    embedding_widths: Vec<usize>,
}

fn ordered_bundles<'a>(bundles: &'a [IntermediateBundle], widths: &[usize], batch: &[usize]) -> Result<Vec<&'a IntermediateBundle>> {
    let mut slots: Vec<Option<&IntermediateBundle>> = vec![None; widths.len()];
    for b in bundles {
        let slot = slots
            .get_mut(b.segment)
            .ok_or_else(|| Error::Protocol(format!("bundle from unknown segment {}", b.segment)))?;
        if slot.is_some() {
            return Err(Error::Protocol(format!("duplicate bundle from segment {}", b.segment)));
        }
        if b.batch != batch {
            return Err(Error::Protocol(format!("bundle from segment {} is for a different batch", b.segment)));
        }
        if b.z.cols() != widths[b.segment] {
            return Err(Error::dim(format!("embedding of segment {}", b.segment), widths[b.segment], b.z.cols()));
        }
        *slot = Some(b);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(k, s)| s.ok_or_else(|| Error::Protocol(format!("missing bundle from segment {k}"))))
        .collect()
}

impl MaParty {
    pub fn new(labels: Matrix, top: DenseNet, embedding_widths: Vec<usize>, learning_rate: f64) -> Result<Self> {
        let total: usize = embedding_widths.iter().sum();
        if top.input_dim() != total {
            return Err(Error::dim("top network input", total, top.input_dim()));
        }
        if top.output_dim() != labels.cols() {
            return Err(Error::dim("top network output", labels.cols(), top.output_dim()));
        }
        Ok(Self {
            labels,
            top,
            optimizer: Optimizer::adam(learning_rate)?,
            tape: None,
            embedding_widths,
        })
    }

    fn concat(&self, bundles: &[IntermediateBundle], batch: &[usize]) -> Result<Matrix> {
        let ordered = ordered_bundles(bundles, &self.embedding_widths, batch)?;
        let parts: Vec<&Matrix> = ordered.iter().map(|b| &b.z).collect();
        Matrix::hconcat(&parts)
    }

    /// Predictions from all K bundles, concatenated by segment id.
    pub fn forward(&mut self, bundles: &[IntermediateBundle], batch: &[usize]) -> Result<Matrix> {
        let (y, tape) = self.top.forward(&self.concat(bundles, batch)?)?;
        self.tape = Some(tape);
        Ok(y)
    }

    pub fn predict(&self, bundles: &[IntermediateBundle], batch: &[usize]) -> Result<Matrix> {
        self.top.predict(&self.concat(bundles, batch)?)
    }

    pub fn targets(&self, batch: &[usize]) -> Result<Matrix> {
        let mut y = Matrix::zeros(batch.len(), self.labels.cols());
        for (r, &t) in batch.iter().enumerate() {
            if t >= self.labels.rows() {
                return Err(Error::Batch(format!("label index {t} out of range ({} samples)", self.labels.rows())));
            }
            y.row_mut(r).copy_from_slice(self.labels.row(t));
        }
        Ok(y)
    }

    /// Loss, top-net update and one gradient per segment.
    pub fn backward(&mut self, predictions: &Matrix, batch: &[usize]) -> Result<(f64, Vec<BundleGradient>)> {
        let targets = self.targets(batch)?;
        let loss = compute_loss(predictions, &targets)?;
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::Contract("MA has no forward pass to differentiate".into()))?;
        let grads = self.top.backward(&tape, &mse_gradient(predictions, &targets))?;
        self.optimizer.step(&mut self.top, &grads)?;
        let mut start = 0;
        let per_segment = self
            .embedding_widths
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let g = grads.input.column_slice(start..start + w);
                start += w;
                BundleGradient {
                    segment: k,
                    batch: batch.to_vec(),
                    grad: g,
                }
            })
            .collect();
        Ok((loss, per_segment))
    }
}

/// Mean squared error over all elements.
pub fn compute_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("loss operands", format!("{:?}", target.shape()), format!("{:?}", pred.shape())));
    }
    let n = pred.data().len() as f64;
    Ok(pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

fn mse_gradient(pred: &Matrix, target: &Matrix) -> Matrix {
    let n = pred.data().len() as f64;
    let data = pred.data().iter().zip(target.data()).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Matrix::from_vec(pred.rows(), pred.cols(), data).expect("same shape")
}

/// MAE and RMSE per traffic state. Columns of the flattened label are
/// `[horizon, road, state]`, so the state is the column index modulo `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMetrics {
    pub mae: [f64; STATES],
    pub rmse: [f64; STATES],
}

impl StateMetrics {
    pub fn compute(pred: &Matrix, target: &Matrix) -> Result<Self> {
        if pred.shape() != target.shape() {
            return Err(Error::dim("metric operands", format!("{:?}", target.shape()), format!("{:?}", pred.shape())));
        }
        let mut abs = [0.0; STATES];
        let mut sq = [0.0; STATES];
        let mut count = [0usize; STATES];
        for r in 0..pred.rows() {
            for (c, (p, t)) in pred.row(r).iter().zip(target.row(r)).enumerate() {
                let s = c % STATES;
                abs[s] += (p - t).abs();
                sq[s] += (p - t) * (p - t);
                count[s] += 1;
            }
        }
        let mut m = Self {
            mae: [0.0; STATES],
            rmse: [0.0; STATES],
        };
        for s in 0..STATES {
            let n = count[s].max(1) as f64;
            m.mae[s] = abs[s] / n;
            m.rmse[s] = (sq[s] / n).sqrt();
        }
        Ok(m)
    }

    pub fn mean_mae(&self) -> f64 {
        self.mae.iter().sum::<f64>() / STATES as f64
    }

    pub fn mean_rmse(&self) -> f64 {
        self.rmse.iter().sum::<f64>() / STATES as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean training-batch MSE during the epoch.
    pub train_loss: f64,
    pub train: StateMetrics,
    pub validation: StateMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub epochs: Vec<EpochRow>,
    pub wall_clock_s: f64,
    pub config_hash: String,
}

impl TrainReport {
    pub fn last(&self) -> &EpochRow {
        self.epochs.last().expect("at least one epoch")
    }

    /// Rows `epoch,split,metric,state,value`. Wall-clock time is left out so
    /// the file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,metric,state,value\n");
        for row in &self.epochs {
            out.push_str(&format!("{},train,loss,all,{:.8e}\n", row.epoch, row.train_loss));
            for (split, m) in [("train", &row.train), ("validation", &row.validation)] {
                for (metric, values) in [("mae", &m.mae), ("rmse", &m.rmse)] {
                    for (s, v) in values.iter().enumerate() {
                        out.push_str(&format!("{},{split},{metric},{},{v:.8e}\n", row.epoch, STATE_NAMES[s]));
                    }
                }
            }
        }
        out
    }
}

/// Per-segment inputs plus labels and the chronological 80/20 split.
#[derive(Clone, Debug)]
pub struct VflData {
    pub segments: Vec<Segment>,
    pub views: Vec<Matrix>,
    pub labels: Matrix,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl VflData {
    pub fn new(segments: Vec<Segment>, views: Vec<Matrix>, labels: Matrix) -> Result<Self> {
        if segments.len() != views.len() || segments.is_empty() {
            return Err(Error::dim("segment views", segments.len(), views.len()));
        }
        let t = labels.rows();
        for (k, v) in views.iter().enumerate() {
            if v.rows() != t {
                return Err(Error::dim(format!("samples in segment {k}"), t, v.rows()));
            }
        }
        let n_train = t - (t as f64 * VALIDATION_FRACTION).round() as usize;
        if n_train == 0 || n_train == t {
            return Err(Error::Config(format!("{t} samples are too few for an 80/20 split")));
        }
        Ok(Self {
            segments,
            views,
            labels,
            train: (0..n_train).collect(),
            validation: (n_train..t).collect(),
        })
    }

    /// Views of the selected providers, or the ground truth when `selection`
    /// is `None`.
    pub fn from_dataset(ds: &TrafficDataset, selection: Option<&SelectionMatrix>) -> Result<Self> {
        let views = (0..ds.network.segment_count())
            .map(|k| {
                let w: &WindowTensor = match selection {
                    None => &ds.truth[k],
                    Some(sel) => {
                        let n = sel.chosen(k);
                        &ds.providers
                            .get(k)
                            .and_then(|row| row.get(n))
                            .ok_or_else(|| Error::Config(format!("segment {k} has no provider {n}")))?
                            .features
                    }
                };
                Ok(window_matrix(w))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ds.network.segments.clone(), views, window_matrix(&ds.labels))
    }
}

/// Initial networks for every party, derived from one seed.
pub fn initial_networks(data: &VflData, cfg: &VflConfig, seed: u64) -> Result<(Vec<DenseNet>, DenseNet)> {
    let bottoms = data
        .views
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let mut rng = rng_from(seed, &[stream::NN_INIT, k as u64]);
            DenseNet::new(
                &[v.cols(), cfg.bottom_hidden, cfg.embedding_dim],
                &[Activation::Relu, Activation::Identity],
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng_from(seed, &[stream::NN_INIT, TOP_INIT_TAG]);
    let k = data.views.len();
    let top = DenseNet::new(
        &[k * cfg.embedding_dim, cfg.top_hidden, cfg.top_hidden, data.labels.cols()],
        &[Activation::Relu, Activation::Relu, Activation::Identity],
        &mut rng,
    )?;
    Ok((bottoms, top))
}

/// Training batches for one epoch from the shared seeded shuffler.
pub fn epoch_batches(train: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = train.to_vec();
    order.shuffle(&mut rng_from(seed, &[stream::SHUFFLE, epoch as u64]));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub struct Federation {
    pub ma: MaParty,
    pub mps: Vec<MpParty>,
    pub channel: Channel,
    parallel: bool,
}

impl Federation {
    pub fn new(data: &VflData, bottoms: Vec<DenseNet>, top: DenseNet, cfg: &VflConfig) -> Result<Self> {
        let widths = bottoms.iter().map(DenseNet::output_dim).collect();
        let mps = data
            .segments
            .iter()
            .zip(&data.views)
            .zip(bottoms)
            .map(|((seg, v), net)| MpParty::new(seg.clone(), v.clone(), net, cfg.learning_rate))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ma: MaParty::new(data.labels.clone(), top, widths, cfg.learning_rate)?,
            mps,
            channel: Channel::default(),
            parallel: cfg.parallel,
        })
    }

    fn provider_forward(&mut self, batch: &[usize]) -> Result<Vec<IntermediateBundle>> {
        if self.parallel {
            self.mps.par_iter_mut().map(|mp| mp.forward(batch)).collect()
        } else {
            self.mps.iter_mut().map(|mp| mp.forward(batch)).collect()
        }
    }

    /// One protocol round: bundles up, loss, gradients down, all parties step.
    pub fn train_batch(&mut self, epoch: usize, batch_id: usize, batch: &[usize]) -> Result<f64> {
        for b in self.provider_forward(batch)? {
            self.channel.send(epoch, batch_id, Message::Bundle(b));
        }
        let bundles = self.channel.drain_bundles()?;
        let pred = self.ma.forward(&bundles, batch)?;
        let (loss, grads) = self.ma.backward(&pred, batch)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step: batch_id,
                detail: format!("loss {loss} in epoch {epoch}"),
            });
        }
        for g in grads {
            self.channel.send(epoch, batch_id, Message::Gradient(g));
        }
        let grads = self.channel.drain_gradients()?;
        let mps = &mut self.mps;
        if self.parallel {
            mps.par_iter_mut().zip(grads.par_iter()).try_for_each(|(mp, g)| mp.backward(g))?;
        } else {
            for (mp, g) in mps.iter_mut().zip(&grads) {
                mp.backward(g)?;
            }
        }
        Ok(loss)
    }

    pub fn predict(&self, indices: &[usize]) -> Result<Matrix> {
        let bundles = self.mps.iter().map(|mp| mp.embed(indices)).collect::<Result<Vec<_>>>()?;
        self.ma.predict(&bundles, indices)
    }

    pub fn metrics(&self, indices: &[usize]) -> Result<StateMetrics> {
        StateMetrics::compute(&self.predict(indices)?, &self.ma.targets(indices)?)
    }

    pub fn freeze_providers(&mut self, frozen: bool) {
        self.mps.iter_mut().for_each(|mp| mp.frozen = frozen);
    }
}

/// A model that can run one epoch over given batches and report metrics.
pub trait Trainable {
    fn train_on(&mut self, epoch: usize, batches: &[Vec<usize>]) -> Result<f64>;
    fn metrics(&self, indices: &[usize]) -> Result<StateMetrics>;
}

impl Trainable for Federation {
    fn train_on(&mut self, epoch: usize, batches: &[Vec<usize>]) -> Result<f64> {
        let mut total = 0.0;
        for (i, b) in batches.iter().enumerate() {
            total += self.train_batch(epoch, i, b)?;
        }
        Ok(total / batches.len() as f64)
    }

    fn metrics(&self, indices: &[usize]) -> Result<StateMetrics> {
        Federation::metrics(self, indices)
    }
}

/// The federation viewed as one network with block-diagonal bottom layers.
/// Off-block weights are held at zero by masking their gradients.
#[derive(Clone, Debug)]
pub struct CentralizedModel {
    pub net: DenseNet,
    masks: Vec<Matrix>,
    input_widths: Vec<usize>,
    embedding_widths: Vec<usize>,
    bottom_layers: usize,
    inputs: Matrix,
    labels: Matrix,
    optimizer: Optimizer,
}

fn block_diagonal(layers: &[&Dense]) -> Result<(Dense, Matrix)> {
    let activation = layers[0].activation;
    if layers.iter().any(|l| l.activation != activation) {
        return Err(Error::Config("bottom layers must share activations to be composed".into()));
    }
    let rows: usize = layers.iter().map(|l| l.output_dim()).sum();
    let cols: usize = layers.iter().map(|l| l.input_dim()).sum();
    let mut w = Matrix::zeros(rows, cols);
    let mut mask = Matrix::zeros(rows, cols);
    let mut bias = Vec::with_capacity(rows);
    let (mut r0, mut c0) = (0, 0);
    for l in layers {
        for i in 0..l.output_dim() {
            for j in 0..l.input_dim() {
                w.set(r0 + i, c0 + j, l.weights.get(i, j));
                mask.set(r0 + i, c0 + j, 1.0);
            }
        }
        bias.extend_from_slice(&l.bias);
        r0 += l.output_dim();
        c0 += l.input_dim();
    }
    Ok((
        Dense {
            weights: w,
            bias,
            activation,
        },
        mask,
    ))
}

impl CentralizedModel {
    pub fn compose(data: &VflData, bottoms: &[DenseNet], top: &DenseNet, learning_rate: f64) -> Result<Self> {
        let depth = bottoms[0].layer_count();
        if bottoms.iter().any(|b| b.layer_count() != depth) {
            return Err(Error::Config("bottom networks must have equal depth to be composed".into()));
        }
        let mut layers = Vec::with_capacity(depth + top.layer_count());
        let mut masks = Vec::with_capacity(depth);
        for d in 0..depth {
            let per: Vec<&Dense> = bottoms.iter().map(|b| &b.layers()[d]).collect();
            let (layer, mask) = block_diagonal(&per)?;
            layers.push(layer);
            masks.push(mask);
        }
        layers.extend(top.layers().iter().cloned());
        let parts: Vec<&Matrix> = data.views.iter().collect();
        Ok(Self {
            net: DenseNet::from_layers(layers)?,
            masks,
            input_widths: bottoms.iter().map(DenseNet::input_dim).collect(),
            embedding_widths: bottoms.iter().map(DenseNet::output_dim).collect(),
            bottom_layers: depth,
            inputs: Matrix::hconcat(&parts)?,
            labels: data.labels.clone(),
            optimizer: Optimizer::adam(learning_rate)?,
        })
    }

    fn rows(m: &Matrix, batch: &[usize]) -> Result<Matrix> {
        let mut x = Matrix::zeros(batch.len(), m.cols());
        for (r, &t) in batch.iter().enumerate() {
            if t >= m.rows() {
                return Err(Error::Batch(format!("index {t} out of range ({} samples)", m.rows())));
            }
            x.row_mut(r).copy_from_slice(m.row(t));
        }
        Ok(x)
    }

    pub fn train_batch(&mut self, batch: &[usize]) -> Result<f64> {
        let x = Self::rows(&self.inputs, batch)?;
        let y = Self::rows(&self.labels, batch)?;
        let (pred, tape) = self.net.forward(&x)?;
        let loss = compute_loss(&pred, &y)?;
        let mut grads: Gradients = self.net.backward(&tape, &mse_gradient(&pred, &y))?;
        for (g, mask) in grads.layers.iter_mut().zip(&self.masks) {
            for (v, m) in g.weights.data_mut().iter_mut().zip(mask.data()) {
                *v *= m;
            }
        }
        self.optimizer.step(&mut self.net, &grads)?;
        Ok(loss)
    }

    /// Split back into per-segment bottoms and the top.
    pub fn decompose(&self) -> (Vec<DenseNet>, DenseNet) {
        let layers = self.net.layers();
        let k = self.input_widths.len();
        let mut bottoms = vec![Vec::with_capacity(self.bottom_layers); k];
        for d in 0..self.bottom_layers {
            let l = &layers[d];
            let in_w: Vec<usize> = if d == 0 {
                self.input_widths.clone()
            } else {
                bottoms.iter().map(|b: &Vec<Dense>| b[d - 1].output_dim()).collect()
            };
            let out_w: Vec<usize> = if d + 1 == self.bottom_layers {
                self.embedding_widths.clone()
            } else {
                // Hidden widths are equal across segments.
                vec![l.output_dim() / k; k]
            };
            let (mut r0, mut c0) = (0, 0);
            for s in 0..k {
                let mut w = Matrix::zeros(out_w[s], in_w[s]);
                for i in 0..out_w[s] {
                    for j in 0..in_w[s] {
                        w.set(i, j, l.weights.get(r0 + i, c0 + j));
                    }
                }
                bottoms[s].push(Dense {
                    weights: w,
                    bias: l.bias[r0..r0 + out_w[s]].to_vec(),
                    activation: l.activation,
                });
                r0 += out_w[s];
                c0 += in_w[s];
            }
        }
        let bottoms = bottoms
            .into_iter()
            .map(|ls| DenseNet::from_layers(ls).expect("slices of a valid net chain"))
            .collect();
        let top = DenseNet::from_layers(layers[self.bottom_layers..].to_vec()).expect("top layers chain");
        (bottoms, top)
    }
}

impl Trainable for CentralizedModel {
    fn train_on(&mut self, epoch: usize, batches: &[Vec<usize>]) -> Result<f64> {
        let mut total = 0.0;
        for (i, b) in batches.iter().enumerate() {
            let loss = self.train_batch(b)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    step: i,
                    detail: format!("loss {loss} in epoch {epoch}"),
                });
            }
            total += loss;
        }
        Ok(total / batches.len() as f64)
    }

    fn metrics(&self, indices: &[usize]) -> Result<StateMetrics> {
        let pred = self.net.predict(&Self::rows(&self.inputs, indices)?)?;
        StateMetrics::compute(&pred, &Self::rows(&self.labels, indices)?)
    }
}

/// Run `cfg.epochs` epochs, recording metrics after each.
pub fn run_epochs<M: Trainable>(model: &mut M, data: &VflData, cfg: &VflConfig, mode: TrainMode, seed: u64) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(&data.train, cfg.batch_size, seed, epoch);
        let train_loss = model.train_on(epoch, &batches)?;
        epochs.push(EpochRow {
            epoch,
            train_loss,
            train: model.metrics(&data.train)?,
            validation: model.metrics(&data.validation)?,
        });
    }
    Ok(TrainReport {
        mode,
        epochs,
        wall_clock_s: start.elapsed().as_secs_f64(),
        config_hash: cfg.hash(),
    })
}

pub fn train_vfl(data: &VflData, cfg: &VflConfig, seed: u64) -> Result<(Federation, TrainReport)> {
    cfg.validate()?;
    let (bottoms, top) = initial_networks(data, cfg, seed)?;
    let mut fed = Federation::new(data, bottoms, top, cfg)?;
    let report = run_epochs(&mut fed, data, cfg, TrainMode::Vfl, seed)?;
    Ok((fed, report))
}

pub fn train_centralized(data: &VflData, cfg: &VflConfig, seed: u64) -> Result<(CentralizedModel, TrainReport)> {
    cfg.validate()?;
    let (bottoms, top) = initial_networks(data, cfg, seed)?;
    let mut model = CentralizedModel::compose(data, &bottoms, &top, cfg.learning_rate)?;
    let report = run_epochs(&mut model, data, cfg, TrainMode::Central, seed)?;
    Ok((model, report))
}

/// Validation metrics with each provider's data passed through its policy.
/// Historical data is the provider's own series `history_lag` samples back.
pub fn evaluate_lazy(
    fed: &Federation,
    data: &VflData,
    policies: &[LazyPolicy],
    history_lag: usize,
    seed: u64,
) -> Result<StateMetrics> {
    if policies.len() != fed.mps.len() {
        return Err(Error::dim("lazy policies", fed.mps.len(), policies.len()));
    }
    let mut lazy = Federation {
        ma: fed.ma.clone(),
        mps: fed.mps.clone(),
        channel: Channel::default(),
        parallel: false,
    };
    for (k, (mp, policy)) in lazy.mps.iter_mut().zip(policies).enumerate() {
        let view = &data.views[k];
        let tensor = WindowTensor {
            time_steps: view.rows(),
            lags: 1,
            roads: vec![0],
            states: view.cols(),
            data: view.data().to_vec(),
        };
        let history = historical_view(&tensor, history_lag);
        let out = apply_lazy_policy(&tensor, *policy, Some(&history), crate::rng::derive_seed(seed, &[k as u64]))?;
        mp.set_features(Matrix::from_vec(view.rows(), view.cols(), out.data)?)?;
    }
    lazy.metrics(&data.validation)
}

/// Parse `mp=3:random:1.0,mp=4:historical:1.0` into one policy per provider.
pub fn parse_lazy_spec(spec: &str, providers: usize) -> Result<Vec<LazyPolicy>> {
    let mut out = vec![LazyPolicy::honest(); providers];
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::Config(format!("bad lazy entry `{item}`; expected mp=<index>:<mode>:<fraction>"));
        let rest = item.strip_prefix("mp=").ok_or_else(bad)?;
        let mut parts = rest.split(':');
        let (idx, mode, frac) = (parts.next(), parts.next(), parts.next());
        if parts.next().is_some() {
            return Err(bad());
        }
        let idx: usize = idx.and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let mode = crate::data::LazyMode::parse(mode.ok_or_else(bad)?)?;
        let frac: f64 = frac.and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if idx >= providers {
            return Err(Error::Config(format!("lazy entry names mp {idx} but there are {providers} providers")));
        }
        out[idx] = LazyPolicy::new(mode, frac)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DatasetShape, DynamicsParams, LazyMode, RoadNetwork};
    use proptest::prelude::*;
    use rand::Rng;

    fn dataset(seed: u64, t: usize) -> TrafficDataset {
        let shape = DatasetShape {
            time_steps: t,
            ..Default::default()
        };
        generate_synthetic(&RoadNetwork::default(), &shape, seed, &DynamicsParams::default()).unwrap()
    }

    fn data(seed: u64, t: usize) -> VflData {
        VflData::from_dataset(&dataset(seed, t), None).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    fn max_rel_diff(a: &DenseNet, b: &DenseNet) -> f64 {
        a.flat_parameters()
            .iter()
            .zip(b.flat_parameters())
            .map(|(x, y)| rel(*x, y))
            .fold(0.0, f64::max)
    }

    #[test]
    fn split_is_chronological_80_20() {
        let d = data(1, 300);
        assert_eq!(d.train.len(), 240);
        assert_eq!(d.validation, (240..300).collect::<Vec<_>>());
    }

    #[test]
    fn zero_bottom_emits_bias() {
        let d = data(1, 40);
        let cfg = VflConfig::default();
        let (mut bottoms, top) = initial_networks(&d, &cfg, 3).unwrap();
        for l in bottoms[0].layers_mut() {
            l.weights.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        bottoms[0].layers_mut()[1].bias = (0..16).map(f64::from).collect();
        let mut fed = Federation::new(&d, bottoms, top, &cfg).unwrap();
        let b = fed.mps[0].forward(&[0, 5, 9]).unwrap();
        assert_eq!(b.z.shape(), (3, 16));
        for r in 0..3 {
            assert_eq!(b.z.row(r), (0..16).map(f64::from).collect::<Vec<_>>().as_slice());
        }
        assert_eq!(fed.mps[1].forward(&[0, 5]).unwrap(), fed.mps[1].forward(&[0, 5]).unwrap());
    }

    #[test]
    fn out_of_range_batch_is_rejected() {
        let d = data(1, 40);
        let (bottoms, top) = initial_networks(&d, &VflConfig::default(), 3).unwrap();
        let mut fed = Federation::new(&d, bottoms, top, &VflConfig::default()).unwrap();
        assert!(matches!(fed.mps[2].forward(&[0, 40]), Err(Error::Batch(_))));
    }

    #[test]
    fn bundle_order_does_not_matter_and_missing_is_named() {
        let d = data(2, 40);
        let (bottoms, top) = initial_networks(&d, &VflConfig::default(), 3).unwrap();
        let mut fed = Federation::new(&d, bottoms, top, &VflConfig::default()).unwrap();
        let batch = vec![1, 2, 3];
        let bundles: Vec<_> = fed.mps.iter_mut().map(|m| m.forward(&batch).unwrap()).collect();
        let y = fed.ma.forward(&bundles, &batch).unwrap();
        assert_eq!(y.shape(), (3, 42));
        let mut reversed = bundles.clone();
        reversed.reverse();
        assert_eq!(fed.ma.forward(&reversed, &batch).unwrap(), y);
        let err = fed.ma.forward(&bundles[..4], &batch).unwrap_err();
        assert!(matches!(err, Error::Protocol(ref m) if m.contains("segment 4")), "{err}");
    }

    #[test]
    fn loss_examples() {
        let y = Matrix::from_rows(&[[1.0, 2.0], [3.0, -4.0]]).unwrap();
        assert_eq!(compute_loss(&y, &y).unwrap(), 0.0);
        let shifted = Matrix::from_vec(2, 2, y.data().iter().map(|v| v + 1.0).collect()).unwrap();
        assert_eq!(compute_loss(&shifted, &y).unwrap(), 1.0);
        let m = StateMetrics::compute(&shifted, &y).unwrap();
        assert_eq!(m.mae, [1.0, 1.0]);
        assert!(compute_loss(&y, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn loss_matches_plain_summation() {
        let mut rng = rng_from(5, &[0]);
        let a: Vec<f64> = (0..84).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..84).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut s = 0.0;
        for i in 0..84 {
            s += (a[i] - b[i]).powi(2);
        }
        let pa = Matrix::from_vec(2, 42, a).unwrap();
        let pb = Matrix::from_vec(2, 42, b).unwrap();
        assert!((compute_loss(&pa, &pb).unwrap() - s / 84.0).abs() < 1e-12);
    }

    #[test]
    fn single_segment_federation_is_a_plain_composition() {
        let ds = dataset(3, 40);
        let d = VflData::new(vec![ds.network.segments[0].clone()], vec![window_matrix(&ds.truth[0])], window_matrix(&ds.labels)).unwrap();
        let cfg = VflConfig::default();
        let (bottoms, top) = initial_networks(&d, &cfg, 1).unwrap();
        let fed = Federation::new(&d, bottoms.clone(), top.clone(), &cfg).unwrap();
        let idx = [0, 1, 2];
        let x = CentralizedModel::rows(&d.views[0], &idx).unwrap();
        let direct = top.predict(&bottoms[0].predict(&x).unwrap()).unwrap();
        assert_eq!(fed.predict(&idx).unwrap(), direct);
    }

    #[test]
    fn bundle_gradients_match_bundle_shapes() {
        let d = data(4, 40);
        let (bottoms, top) = initial_networks(&d, &VflConfig::default(), 3).unwrap();
        let mut fed = Federation::new(&d, bottoms, top, &VflConfig::default()).unwrap();
        let batch = vec![3, 7];
        let bundles: Vec<_> = fed.mps.iter_mut().map(|m| m.forward(&batch).unwrap()).collect();
        let pred = fed.ma.forward(&bundles, &batch).unwrap();
        let (_, grads) = fed.ma.backward(&pred, &batch).unwrap();
        for (b, g) in bundles.iter().zip(&grads) {
            assert_eq!(b.z.shape(), g.grad.shape());
            assert_eq!(b.segment, g.segment);
        }
    }

    #[test]
    fn federation_matches_centralized_after_one_epoch() {
        let d = data(5, 120);
        let cfg = VflConfig {
            epochs: 1,
            ..Default::default()
        };
        let (fed, rv) = train_vfl(&d, &cfg, 9).unwrap();
        let (central, rc) = train_centralized(&d, &cfg, 9).unwrap();
        let (bottoms, top) = central.decompose();
        for (mp, b) in fed.mps.iter().zip(&bottoms) {
            assert!(max_rel_diff(&mp.bottom, b) <= 1e-9);
        }
        assert!(max_rel_diff(&fed.ma.top, &top) <= 1e-9);
        assert!(rel(rv.last().train_loss, rc.last().train_loss) <= 1e-7);
    }

    #[test]
    fn parallel_providers_are_bit_identical() {
        let d = data(6, 80);
        let cfg = VflConfig {
            epochs: 2,
            ..Default::default()
        };
        let par = VflConfig { parallel: true, ..cfg.clone() };
        let (a, ra) = train_vfl(&d, &cfg, 2).unwrap();
        let (b, rb) = train_vfl(&d, &par, 2).unwrap();
        assert_eq!(ra.epochs, rb.epochs);
        assert_eq!(a.ma.top, b.ma.top);
    }

    #[test]
    fn batch_order_changes_the_trajectory() {
        let d = data(7, 80);
        let cfg = VflConfig {
            epochs: 1,
            ..Default::default()
        };
        let (bottoms, top) = initial_networks(&d, &cfg, 1).unwrap();
        let mut a = Federation::new(&d, bottoms.clone(), top.clone(), &cfg).unwrap();
        let mut b = Federation::new(&d, bottoms, top, &cfg).unwrap();
        a.train_on(1, &epoch_batches(&d.train, 16, 1, 1)).unwrap();
        b.train_on(1, &epoch_batches(&d.train, 16, 2, 1)).unwrap();
        assert_ne!(a.ma.top, b.ma.top);
    }

    #[test]
    fn one_epoch_reduces_training_loss() {
        let mut improved = 0;
        for seed in 0..5 {
            let d = data(seed, 300);
            let cfg = VflConfig::default();
            let (bottoms, top) = initial_networks(&d, &cfg, seed).unwrap();
            let mut fed = Federation::new(&d, bottoms, top, &cfg).unwrap();
            let y = fed.ma.targets(&d.train).unwrap();
            let mse0 = compute_loss(&fed.predict(&d.train).unwrap(), &y).unwrap();
            fed.train_on(1, &epoch_batches(&d.train, 16, seed, 1)).unwrap();
            let mse1 = compute_loss(&fed.predict(&d.train).unwrap(), &y).unwrap();
            improved += usize::from(mse1 < mse0);
        }
        assert!(improved >= 4, "{improved}/5");
    }

    #[test]
    fn frozen_providers_still_learn_through_the_top() {
        let d = data(8, 300);
        let cfg = VflConfig::default();
        let (bottoms, top) = initial_networks(&d, &cfg, 8).unwrap();
        let mut fed = Federation::new(&d, bottoms.clone(), top, &cfg).unwrap();
        fed.freeze_providers(true);
        let y = fed.ma.targets(&d.train).unwrap();
        let mse0 = compute_loss(&fed.predict(&d.train).unwrap(), &y).unwrap();
        for e in 1..=3 {
            fed.train_on(e, &epoch_batches(&d.train, 16, 8, e)).unwrap();
        }
        let mse1 = compute_loss(&fed.predict(&d.train).unwrap(), &y).unwrap();
        assert!(mse1 < mse0);
        for (mp, b) in fed.mps.iter().zip(&bottoms) {
            assert_eq!(&mp.bottom, b);
        }
    }

    #[test]
    fn messages_are_logged_per_batch() {
        let d = data(9, 40);
        let cfg = VflConfig::default();
        let (bottoms, top) = initial_networks(&d, &cfg, 1).unwrap();
        let mut fed = Federation::new(&d, bottoms, top, &cfg).unwrap();
        fed.train_batch(1, 0, &[0, 1, 2, 3]).unwrap();
        let log = fed.channel.log();
        assert_eq!(log.len(), 10);
        assert!(log[..5].iter().all(|m| m.kind == "bundle" && m.to == "ma" && m.cols == 16));
        assert!(log[5..].iter().all(|m| m.kind == "gradient" && m.from == "ma" && m.rows == 4));
    }

    #[test]
    fn lazy_spec_parsing() {
        let p = parse_lazy_spec("mp=3:random:1.0,mp=4:historical:0.4", 5).unwrap();
        assert_eq!(p[3].mode, LazyMode::RandomData);
        assert_eq!(p[4].lazy_fraction, 0.4);
        assert_eq!(p[0], LazyPolicy::honest());
        assert!(parse_lazy_spec("mp=9:random:1.0", 5).is_err());
        assert!(parse_lazy_spec("3:random", 5).is_err());
    }

    #[test]
    fn csv_rows_per_epoch() {
        let d = data(10, 60);
        let cfg = VflConfig {
            epochs: 2,
            ..Default::default()
        };
        let (_, r) = train_vfl(&d, &cfg, 1).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 9);
        assert!(csv.contains("2,validation,rmse,density,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn composition_round_trips(seed in 0u64..1000) {
            let d = data(seed, 30);
            let cfg = VflConfig::default();
            let (bottoms, top) = initial_networks(&d, &cfg, seed).unwrap();
            let c = CentralizedModel::compose(&d, &bottoms, &top, 1e-3).unwrap();
            let (b2, t2) = c.decompose();
            prop_assert_eq!(b2, bottoms);
            prop_assert_eq!(t2, top);
        }
    }
}
