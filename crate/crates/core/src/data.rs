//! Synthetic traffic datasets split vertically across road segments.
//!
//! A dataset holds windowed tensors indexed `[t, lag, road, state]`: ground
//! truth features per segment (`τ_i` past steps) and network-wide labels
//! (`τ_o` future steps). Provider views are the truth plus Gaussian noise,
//! optionally corrupted by a lazy policy.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

pub mod io;

pub use io::{load_dataset, save_dataset};

pub const STATE_NAMES: [&str; 2] = ["flow", "density"];
pub const STATES: usize = 2;

/// Round to 9 significant digits so values survive a text round trip.
pub fn quantize(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub road_indices: Vec<usize>,
}

impl Segment {
    pub fn size(&self) -> usize {
        self.road_indices.len()
    }
}

/// Directed roads between intersections, grouped into segments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub intersections: usize,
    /// (from, to) intersection of each road.
    pub roads: Vec<(usize, usize)>,
    pub segments: Vec<Segment>,
}

impl Default for RoadNetwork {
    /// Two rows of four intersections: horizontal roads both ways, vertical
    /// links both ways, one diagonal.
    fn default() -> Self {
        let roads = vec![
            (0, 1),
            (1, 0),
            (1, 2),
            (2, 1),
            (2, 3),
            (3, 2),
            (4, 5),
            (5, 4),
            (5, 6),
            (6, 5),
            (6, 7),
            (7, 6),
            (0, 4),
            (4, 0),
            (1, 5),
            (5, 1),
            (2, 6),
            (6, 2),
            (3, 7),
            (7, 3),
            (1, 6),
        ];
        let groups: [&[usize]; 5] = [
            &[0, 1, 12, 13],
            &[2, 3, 14, 15],
            &[4, 5, 18, 19],
            &[6, 7, 8, 9],
            &[10, 11, 16, 17, 20],
        ];
        let segments = groups
            .iter()
            .enumerate()
            .map(|(id, g)| Segment {
                id,
                road_indices: g.to_vec(),
            })
            .collect();
        Self {
            intersections: 8,
            roads,
            segments,
        }
    }
}

impl RoadNetwork {
    pub fn road_count(&self) -> usize {
        self.roads.len()
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.roads.is_empty() || self.segments.is_empty() {
            return Err(Error::Config("network needs at least one road and one segment".into()));
        }
        for (r, &(a, b)) in self.roads.iter().enumerate() {
            if a >= self.intersections || b >= self.intersections {
                return Err(Error::Config(format!(
                    "road {r} joins intersections ({a}, {b}) but only {} exist",
                    self.intersections
                )));
            }
        }
        let mut owner = vec![None; self.roads.len()];
        for (k, seg) in self.segments.iter().enumerate() {
            if seg.id != k {
                return Err(Error::Config(format!("segment at position {k} has id {}", seg.id)));
            }
            if seg.road_indices.is_empty() {
                return Err(Error::Config(format!("segment {k} has no roads")));
            }
            for &r in &seg.road_indices {
                match owner.get(r) {
                    None => return Err(Error::Config(format!("segment {k} names road {r}, which does not exist"))),
                    Some(Some(other)) => {
                        return Err(Error::Config(format!("road {r} belongs to segments {other} and {k}")))
                    }
                    Some(None) => owner[r] = Some(k),
                }
            }
        }
        if let Some(r) = owner.iter().position(Option::is_none) {
            return Err(Error::Config(format!("road {r} belongs to no segment")));
        }
        Ok(())
    }

    /// Roads sharing an intersection with each road.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let touches = |a: (usize, usize), b: (usize, usize)| a.0 == b.0 || a.0 == b.1 || a.1 == b.0 || a.1 == b.1;
        (0..self.roads.len())
            .map(|r| {
                (0..self.roads.len())
                    .filter(|&q| q != r && touches(self.roads[r], self.roads[q]))
                    .collect()
            })
            .collect()
    }
}

/// Dense `[t, lag, road, state]` tensor over a fixed list of global roads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowTensor {
    pub time_steps: usize,
    pub lags: usize,
    pub roads: Vec<usize>,
    pub states: usize,
    pub data: Vec<f64>,
}

impl WindowTensor {
    pub fn zeros(time_steps: usize, lags: usize, roads: Vec<usize>, states: usize) -> Self {
        let len = time_steps * lags * roads.len() * states;
        Self {
            time_steps,
            lags,
            roads,
            states,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.time_steps, self.lags, self.roads.len(), self.states]
    }

    /// Length of one flattened sample window.
    pub fn sample_len(&self) -> usize {
        self.lags * self.roads.len() * self.states
    }

    pub fn index(&self, t: usize, lag: usize, road: usize, state: usize) -> usize {
        ((t * self.lags + lag) * self.roads.len() + road) * self.states + state
    }

    pub fn get(&self, t: usize, lag: usize, road: usize, state: usize) -> f64 {
        self.data[self.index(t, lag, road, state)]
    }

    /// Flattened window of sample `t`.
    pub fn sample(&self, t: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn sample_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.sample_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseProfile {
    pub const GRID: [f64; 6] = [0.0, 0.01, 0.05, 0.1, 0.2, 0.3];

    pub fn clean(seed: u64) -> Self {
        Self {
            mu: 0.0,
            sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite() && self.mu.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be ≥ 0 and mu finite, got ({}, {})",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LazyMode {
    Honest,
    RandomData,
    HistoricalData,
}

impl LazyMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "honest" => Ok(Self::Honest),
            "random" | "random_data" => Ok(Self::RandomData),
            "historical" | "historical_data" => Ok(Self::HistoricalData),
            other => Err(Error::Config(format!(
                "unknown lazy mode `{other}`; expected honest, random or historical"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Honest => "honest",
            Self::RandomData => "random_data",
            Self::HistoricalData => "historical_data",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LazyPolicy {
    pub mode: LazyMode,
    pub lazy_fraction: f64,
}

impl LazyPolicy {
    pub const FRACTIONS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

    pub fn honest() -> Self {
        Self {
            mode: LazyMode::Honest,
            lazy_fraction: 0.0,
        }
    }

    pub fn new(mode: LazyMode, lazy_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lazy_fraction) {
            return Err(Error::Config(format!("lazy_fraction must be in [0, 1], got {lazy_fraction}")));
        }
        Ok(Self { mode, lazy_fraction })
    }

    /// Number of replaced samples out of `t`: ⌈fraction · t⌉.
    pub fn replaced_count(&self, t: usize) -> usize {
        if self.mode == LazyMode::Honest {
            return 0;
        }
        // Guard against 0.2 * 300 = 60.000000000000007 rounding up.
        let raw = self.lazy_fraction * t as f64;
        ((raw - 1e-9).ceil().max(0.0) as usize).min(t)
    }
}

/// Parameters of the synthetic flow/density process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsParams {
    /// Number of network-wide periodic components.
    pub components: usize,
    pub min_period: f64,
    pub max_period: f64,
    /// Mean reversion of the per-road Ornstein–Uhlenbeck term.
    pub ou_theta: f64,
    pub ou_sigma: f64,
    /// Weight given to the neighbours' mean in each smoothing pass.
    pub spatial_mix: f64,
    pub smoothing_passes: usize,
    pub jam_density: f64,
    pub free_flow_speed: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            components: 3,
            min_period: 20.0,
            max_period: 80.0,
            ou_theta: 0.05,
            ou_sigma: 0.2,
            spatial_mix: 0.5,
            smoothing_passes: 2,
            jam_density: 150.0,
            free_flow_speed: 60.0,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::Config("dynamics.components must be ≥ 1".into()));
        }
        if !(self.min_period > 0.0 && self.max_period >= self.min_period) {
            return Err(Error::Config(format!(
                "dynamics periods must satisfy 0 < min_period ≤ max_period, got [{}, {}]",
                self.min_period, self.max_period
            )));
        }
        if !(0.0..=1.0).contains(&self.ou_theta) || !(self.ou_sigma >= 0.0) {
            return Err(Error::Config("dynamics.ou_theta must be in [0, 1] and ou_sigma ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.spatial_mix) {
            return Err(Error::Config(format!(
                "dynamics.spatial_mix must be in [0, 1], got {}",
                self.spatial_mix
            )));
        }
        if !(self.jam_density > 0.0 && self.free_flow_speed > 0.0) {
            return Err(Error::Config("dynamics.jam_density and free_flow_speed must be > 0".into()));
        }
        Ok(())
    }
}

/// Dataset-level sizes shared by every tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetShape {
    pub time_steps: usize,
    pub dt_s: f64,
    pub input_lags: usize,
    pub horizon: usize,
}

impl Default for DatasetShape {
    fn default() -> Self {
        Self {
            time_steps: 300,
            dt_s: 10.0,
            input_lags: 9,
            horizon: 1,
        }
    }
}

impl DatasetShape {
    pub fn validate(&self) -> Result<()> {
        if self.input_lags == 0 || self.horizon == 0 {
            return Err(Error::Config("input_lags and horizon must be ≥ 1".into()));
        }
        let min = self.input_lags + self.horizon;
        if self.time_steps < min {
            return Err(Error::Config(format!("T must be ≥ {min}, got {}", self.time_steps)));
        }
        if !(self.dt_s > 0.0) {
            return Err(Error::Config(format!("dt_s must be > 0, got {}", self.dt_s)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderView {
    pub noise: NoiseProfile,
    pub features: WindowTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficDataset {
    pub network: RoadNetwork,
    pub shape: DatasetShape,
    pub seed: u64,
    pub dynamics: DynamicsParams,
    /// Noise-free labels `[T, τ_o, |E|, s]`.
    pub labels: WindowTensor,
    /// Noise-free features `[T, τ_i, |K_k|, s]` per segment.
    pub truth: Vec<WindowTensor>,
    /// Provider views per segment.
    pub providers: Vec<Vec<ProviderView>>,
}

impl TrafficDataset {
    pub fn time_steps(&self) -> usize {
        self.shape.time_steps
    }

    pub fn segment(&self, k: usize) -> Result<&Segment> {
        self.network
            .segments
            .get(k)
            .ok_or_else(|| Error::Config(format!("segment {k} out of range (K = {})", self.network.segment_count())))
    }

    /// Attach one provider view per profile for every segment.
    pub fn with_providers(mut self, profiles: &[Vec<NoiseProfile>]) -> Result<Self> {
        if profiles.len() != self.network.segment_count() {
            return Err(Error::dim("provider profile rows", self.network.segment_count(), profiles.len()));
        }
        self.providers = profiles
            .iter()
            .enumerate()
            .map(|(k, row)| {
                row.iter()
                    .map(|&noise| {
                        Ok(ProviderView {
                            noise,
                            features: derive_provider_view(&self, k, noise)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(self)
    }
}

/// Per-road latent series: shared periodic drivers with road-specific
/// amplitude and phase, plus OU noise, smoothed over adjacent roads.
fn latent_series(network: &RoadNetwork, len: usize, seed: u64, dp: &DynamicsParams) -> Vec<Vec<f64>> {
    let mut rng = rng_from(seed, &[stream::DYNAMICS]);
    let roads = network.road_count();
    let periods: Vec<f64> = (0..dp.components)
        .map(|_| rng.random_range(dp.min_period..=dp.max_period))
        .collect();
    let base_phase: Vec<f64> = (0..dp.components)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut series: Vec<Vec<f64>> = (0..roads)
        .map(|_| {
            let amps: Vec<f64> = (0..dp.components).map(|_| rng.random_range(0.5..1.0)).collect();
            let phases: Vec<f64> = base_phase.iter().map(|p| p + rng.random_range(-0.6..0.6)).collect();
            let mut ou = 0.0;
            (0..len)
                .map(|t| {
                    ou += -dp.ou_theta * ou + dp.ou_sigma * normal.sample(&mut rng);
                    let periodic: f64 = (0..dp.components)
                        .map(|c| amps[c] * (std::f64::consts::TAU * t as f64 / periods[c] + phases[c]).sin())
                        .sum();
                    periodic + ou
                })
                .collect()
        })
        .collect();
    let adj = network.adjacency();
    for _ in 0..dp.smoothing_passes {
        let prev = series.clone();
        for (r, s) in series.iter_mut().enumerate() {
            if adj[r].is_empty() {
                continue;
            }
            for (t, v) in s.iter_mut().enumerate() {
                let mean = adj[r].iter().map(|&q| prev[q][t]).sum::<f64>() / adj[r].len() as f64;
                *v = (1.0 - dp.spatial_mix) * prev[r][t] + dp.spatial_mix * mean;
            }
        }
    }
    series
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for x in v {
        *x = quantize((*x - mean) / sd);
    }
}

/// Normalized (flow, density) series per road, length `len`.
fn state_series(network: &RoadNetwork, len: usize, seed: u64, dp: &DynamicsParams) -> Vec<[Vec<f64>; 2]> {
    latent_series(network, len, seed, dp)
        .into_iter()
        .map(|latent| {
            let density: Vec<f64> = latent
                .iter()
                .map(|l| dp.jam_density / (1.0 + (-l).exp()))
                .collect();
            let mut flow: Vec<f64> = density
                .iter()
                .map(|k| dp.free_flow_speed * k * (1.0 - k / dp.jam_density))
                .collect();
            let mut density = density;
            standardize(&mut flow);
            standardize(&mut density);
            [flow, density]
        })
        .collect()
}

fn window(series: &[[Vec<f64>; 2]], roads: &[usize], t_count: usize, lags: usize, offset: usize) -> WindowTensor {
    let mut w = WindowTensor::zeros(t_count, lags, roads.to_vec(), STATES);
    let mut i = 0;
    for t in 0..t_count {
        for lag in 0..lags {
            for &r in roads {
                for s in 0..STATES {
                    w.data[i] = series[r][s][t + offset + lag];
                    i += 1;
                }
            }
        }
    }
    w
}

/// Generate a reproducible dataset. Sample `t` sees steps `t .. t+τ_i` and
/// predicts steps `t+τ_i .. t+τ_i+τ_o` of the underlying series.
pub fn generate_synthetic(
    network: &RoadNetwork,
    shape: &DatasetShape,
    seed: u64,
    dynamics: &DynamicsParams,
) -> Result<TrafficDataset> {
    network.validate()?;
    shape.validate()?;
    dynamics.validate()?;
    let len = shape.time_steps + shape.input_lags + shape.horizon - 1;
    let series = state_series(network, len, seed, dynamics);
    let all: Vec<usize> = (0..network.road_count()).collect();
    let labels = window(&series, &all, shape.time_steps, shape.horizon, shape.input_lags);
    let truth = network
        .segments
        .iter()
        .map(|seg| window(&series, &seg.road_indices, shape.time_steps, shape.input_lags, 0))
        .collect();
    Ok(TrafficDataset {
        network: network.clone(),
        shape: shape.clone(),
        seed,
        dynamics: dynamics.clone(),
        labels,
        truth,
        providers: Vec::new(),
    })
}

/// Ground truth of segment `k` plus i.i.d. N(mu, sigma²) noise.
pub fn derive_provider_view(dataset: &TrafficDataset, k: usize, noise: NoiseProfile) -> Result<WindowTensor> {
    noise.validate()?;
    dataset.segment(k)?;
    let truth = &dataset.truth[k];
    if noise.mu == 0.0 && noise.sigma == 0.0 {
        return Ok(truth.clone());
    }
    add_noise(truth, noise, &[stream::NOISE, k as u64])
}

/// Add N(mu, sigma²) noise to every element, seeded by the profile and tags.
pub fn add_noise(base: &WindowTensor, noise: NoiseProfile, tags: &[u64]) -> Result<WindowTensor> {
    noise.validate()?;
    let mut rng = rng_from(noise.seed, tags);
    let normal = Normal::new(noise.mu, noise.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = base.clone();
    for v in &mut out.data {
        *v = quantize(*v + normal.sample(&mut rng));
    }
    Ok(out)
}

/// The same view `lag` samples earlier, wrapping around at the start.
pub fn historical_view(view: &WindowTensor, lag: usize) -> WindowTensor {
    let t_count = view.time_steps;
    let mut out = view.clone();
    for t in 0..t_count {
        let src = (t + t_count - lag % t_count) % t_count;
        out.sample_mut(t).copy_from_slice(view.sample(src));
    }
    out
}

/// Replace ⌈fraction · T⌉ seeded-random samples of `view` with uniform draws
/// over the view's range or with the history at the same indices.
pub fn apply_lazy_policy(
    view: &WindowTensor,
    policy: LazyPolicy,
    history: Option<&WindowTensor>,
    seed: u64,
) -> Result<WindowTensor> {
    let replaced = policy.replaced_count(view.time_steps);
    if policy.mode == LazyMode::Honest || replaced == 0 {
        return Ok(view.clone());
    }
    let mut rng = rng_from(seed, &[stream::LAZY]);
    let indices = index::sample(&mut rng, view.time_steps, replaced);
    let mut out = view.clone();
    match policy.mode {
        LazyMode::Honest => unreachable!(),
        LazyMode::RandomData => {
            let (lo, hi) = view.min_max();
            for t in indices.iter() {
                for v in out.sample_mut(t) {
                    *v = if hi > lo { quantize(rng.random_range(lo..hi)) } else { lo };
                }
            }
        }
        LazyMode::HistoricalData => {
            let history = history
                .ok_or_else(|| Error::Config("historical_data lazy mode needs a history tensor".into()))?;
            if history.shape() != view.shape() {
                return Err(Error::dim(
                    "history tensor",
                    format!("{:?}", view.shape()),
                    format!("{:?}", history.shape()),
                ));
            }
            for t in indices.iter() {
                out.sample_mut(t).copy_from_slice(history.sample(t));
            }
        }
    }
    Ok(out)
}

/// Number of samples whose windows differ between two equally shaped tensors.
pub fn differing_samples(a: &WindowTensor, b: &WindowTensor) -> usize {
    (0..a.time_steps).filter(|&t| a.sample(t) != b.sample(t)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> TrafficDataset {
        generate_synthetic(&RoadNetwork::default(), &DatasetShape::default(), 7, &DynamicsParams::default()).unwrap()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn default_network_partitions_roads() {
        let n = RoadNetwork::default();
        n.validate().unwrap();
        assert_eq!((n.intersections, n.road_count(), n.segment_count()), (8, 21, 5));
        let mut all: Vec<usize> = n.segments.iter().flat_map(|s| s.road_indices.clone()).collect();
        all.sort();
        assert_eq!(all, (0..21).collect::<Vec<_>>());
    }

    #[test]
    fn overlapping_segments_are_rejected() {
        let mut n = RoadNetwork::default();
        n.segments[1].road_indices.push(0);
        assert!(n.validate().is_err());
    }

    #[test]
    fn generated_shapes() {
        let d = small();
        assert_eq!(d.labels.shape(), [300, 1, 21, 2]);
        for (k, seg) in d.network.segments.iter().enumerate() {
            assert_eq!(d.truth[k].shape(), [300, 9, seg.size(), 2]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(small(), small());
        let other =
            generate_synthetic(&RoadNetwork::default(), &DatasetShape::default(), 8, &DynamicsParams::default()).unwrap();
        assert_ne!(small().labels, other.labels);
    }

    #[test]
    fn too_short_series_names_minimum() {
        let shape = DatasetShape {
            time_steps: 5,
            ..Default::default()
        };
        let err = generate_synthetic(&RoadNetwork::default(), &shape, 7, &DynamicsParams::default()).unwrap_err();
        assert!(err.to_string().contains("T must be ≥ 10"), "{err}");
    }

    #[test]
    fn labels_continue_the_feature_windows() {
        let d = small();
        // Label of sample t equals the last lag of sample t+1's window.
        let seg = &d.network.segments[0];
        for t in 0..50 {
            for (local, &road) in seg.road_indices.iter().enumerate() {
                for s in 0..2 {
                    assert_eq!(d.labels.get(t, 0, road, s), d.truth[0].get(t + 1, 8, local, s));
                }
            }
        }
    }

    #[test]
    fn series_are_normalized_smooth_and_spatially_correlated() {
        let d = small();
        let road_series = |r: usize, s: usize| -> Vec<f64> { (0..300).map(|t| d.labels.get(t, 0, r, s)).collect() };
        let x = road_series(0, 1);
        let mean = x.iter().sum::<f64>() / 300.0;
        assert!(mean.abs() < 0.2);
        let lag1 = pearson(&x[..299], &x[1..]);
        assert!(lag1 > 0.8, "lag-1 autocorrelation {lag1}");
        let adj = d.network.adjacency();
        let neighbour = road_series(adj[0][0], 1);
        assert!(pearson(&x, &neighbour) > 0.3);
    }

    #[test]
    fn clean_view_is_truth() {
        let d = small();
        assert_eq!(derive_provider_view(&d, 2, NoiseProfile::clean(1)).unwrap(), d.truth[2]);
    }

    #[test]
    fn mean_shift_is_constant() {
        let d = small();
        let v = derive_provider_view(&d, 1, NoiseProfile { mu: 0.3, sigma: 0.0, seed: 1 }).unwrap();
        for (a, b) in v.data.iter().zip(&d.truth[1].data) {
            assert!((a - b - 0.3).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_mean_noise_averages_out() {
        let d = small();
        let v = derive_provider_view(&d, 0, NoiseProfile { mu: 0.0, sigma: 0.1, seed: 4 }).unwrap();
        let diffs: Vec<f64> = v.data.iter().zip(&d.truth[0].data).map(|(a, b)| a - b).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * 0.1 / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn noise_matches_profile_within_five_percent() {
        let d = small();
        let v = derive_provider_view(&d, 4, NoiseProfile { mu: 0.2, sigma: 0.3, seed: 11 }).unwrap();
        let diffs: Vec<f64> = v.data.iter().zip(&d.truth[4].data).map(|(a, b)| a - b).collect();
        assert!(diffs.len() >= 10_000);
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((mean - 0.2).abs() < 0.05 * 0.2, "mean {mean}");
        assert!((sd - 0.3).abs() < 0.05 * 0.3, "sd {sd}");
    }

    #[test]
    fn honest_policy_is_identity() {
        let d = small();
        let out = apply_lazy_policy(&d.truth[0], LazyPolicy::honest(), None, 3).unwrap();
        assert_eq!(out, d.truth[0]);
    }

    #[test]
    fn fully_random_replaces_everything() {
        let d = small();
        let p = LazyPolicy::new(LazyMode::RandomData, 1.0).unwrap();
        let out = apply_lazy_policy(&d.truth[0], p, None, 3).unwrap();
        assert!(differing_samples(&out, &d.truth[0]) as f64 >= 0.99 * 300.0);
        let (lo, hi) = d.truth[0].min_max();
        assert!(out.data.iter().all(|v| (lo..=hi).contains(v)));
    }

    #[test]
    fn half_lazy_replaces_exactly_half() {
        let d = small();
        let p = LazyPolicy::new(LazyMode::RandomData, 0.5).unwrap();
        let out = apply_lazy_policy(&d.truth[3], p, None, 9).unwrap();
        assert_eq!(differing_samples(&out, &d.truth[3]), 150);
    }

    #[test]
    fn replaced_counts_on_default_grid() {
        for (f, n) in LazyPolicy::FRACTIONS.iter().zip([0, 60, 120, 180, 240, 300]) {
            assert_eq!(LazyPolicy::new(LazyMode::RandomData, *f).unwrap().replaced_count(300), n);
        }
    }

    #[test]
    fn historical_needs_history() {
        let d = small();
        let p = LazyPolicy::new(LazyMode::HistoricalData, 0.4).unwrap();
        assert!(matches!(apply_lazy_policy(&d.truth[0], p, None, 1), Err(Error::Config(_))));
        let hist = historical_view(&d.truth[0], 100);
        let out = apply_lazy_policy(&d.truth[0], p, Some(&hist), 1).unwrap();
        let changed: Vec<usize> = (0..300).filter(|&t| out.sample(t) != d.truth[0].sample(t)).collect();
        assert_eq!(changed.len(), 120);
        for t in changed {
            assert_eq!(out.sample(t), d.truth[0].sample((t + 200) % 300));
        }
    }

    #[test]
    fn bad_lazy_fraction_rejected() {
        assert!(LazyPolicy::new(LazyMode::RandomData, 1.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn generation_is_a_pure_function_of_seed(seed in 0u64..1000, t in 10usize..40) {
            let shape = DatasetShape { time_steps: t, ..Default::default() };
            let a = generate_synthetic(&RoadNetwork::default(), &shape, seed, &DynamicsParams::default()).unwrap();
            let b = generate_synthetic(&RoadNetwork::default(), &shape, seed, &DynamicsParams::default()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn lazy_policy_replaces_exact_count(f in 0.0f64..=1.0, seed in 0u64..1000) {
            let shape = DatasetShape { time_steps: 40, ..Default::default() };
            let d = generate_synthetic(&RoadNetwork::default(), &shape, 1, &DynamicsParams::default()).unwrap();
            let p = LazyPolicy::new(LazyMode::HistoricalData, f).unwrap();
            let hist = historical_view(&d.truth[0], 7);
            let out = apply_lazy_policy(&d.truth[0], p, Some(&hist), seed).unwrap();
            prop_assert_eq!(differing_samples(&out, &d.truth[0]), p.replaced_count(40));
        }

        #[test]
        fn quantize_is_idempotent(v in -1e6f64..1e6) {
            let q = quantize(v);
            prop_assert_eq!(quantize(q), q);
        }
    }
}
