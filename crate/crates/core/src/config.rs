//! Experiment configuration: one TOML file with every module's parameters.
//!
//! Missing keys take their defaults, so an empty file is a valid config.
//! Unknown keys are rejected with the closest known key as a suggestion.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetShape, DynamicsParams, LazyPolicy, NoiseProfile};
use crate::economics::{CommParams, ComputeParams, CostBreakdown, EconParams};
use crate::error::{Error, Result};
use crate::game::{GameParams, InitRule, RecursionForm, SimulationMode, SimulationOptions, DEFAULT_HONEST_MAE, DEFAULT_LAZY_MAE, DEFAULT_LEARNING_RATE};
use crate::mi::{MiTrainConfig, DEFAULT_SAMPLES};
use crate::vfl::VflConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    MiGrid,
    LazyGrid,
    SelectionCompare,
    LazyMae,
    BetaSweep,
    RhoSweep,
    BoundGap,
    MechanismCompare,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::MiGrid,
        Scenario::LazyGrid,
        Scenario::SelectionCompare,
        Scenario::LazyMae,
        Scenario::BetaSweep,
        Scenario::RhoSweep,
        Scenario::BoundGap,
        Scenario::MechanismCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::MiGrid => "mi_grid",
            Scenario::LazyGrid => "lazy_grid",
            Scenario::SelectionCompare => "selection_compare",
            Scenario::LazyMae => "lazy_mae",
            Scenario::BetaSweep => "beta_sweep",
            Scenario::RhoSweep => "rho_sweep",
            Scenario::BoundGap => "bound_gap",
            Scenario::MechanismCompare => "mechanism_compare",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|s| s.name()).collect();
            Error::Config(format!("unknown scenario `{s}`; valid scenarios: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub time_steps: usize,
    pub dt_s: f64,
    pub input_lags: usize,
    pub horizon: usize,
    /// How far back a historical-data provider reaches.
    pub history_lag: usize,
    pub dynamics: DynamicsParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = DatasetShape::default();
        Self {
            time_steps: s.time_steps,
            dt_s: s.dt_s,
            input_lags: s.input_lags,
            horizon: s.horizon,
            history_lag: 100,
            dynamics: DynamicsParams::default(),
        }
    }
}

impl DataConfig {
    pub fn shape(&self) -> DatasetShape {
        DatasetShape {
            time_steps: self.time_steps,
            dt_s: self.dt_s,
            input_lags: self.input_lags,
            horizon: self.horizon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub mu_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    /// (mu, sigma) of each provider in a segment. Every segment gets the same
    /// ladder in a seeded order.
    pub providers: Vec<[f64; 2]>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mu_grid: NoiseProfile::GRID.to_vec(),
            sigma_grid: NoiseProfile::GRID.to_vec(),
            providers: vec![[0.0, 0.0], [0.0, 0.1], [0.05, 0.1], [0.1, 0.2], [0.2, 0.2], [0.3, 0.3]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Scoring batches averaged per provider.
    pub seeds: usize,
    pub samples: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            seeds: 80,
            samples: DEFAULT_SAMPLES,
        }
    }
}

impl ScoringConfig {
    pub fn seed_list(&self, base: u64) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| crate::rng::derive_seed(base, &[crate::rng::stream::SCORE, i])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LazyConfig {
    pub fractions: Vec<f64>,
    /// Providers that go lazy in the evaluation scenario.
    pub lazy_providers: Vec<usize>,
}

impl Default for LazyConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            lazy_providers: vec![3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    pub rho: f64,
    pub beta: f64,
    pub gamma0: f64,
    pub epsilon0: f64,
    pub cycles: usize,
    pub mode: SimulationMode,
    pub learning_rate: f64,
    pub init: InitRule,
    pub recursion: RecursionForm,
    pub honest_mae: Vec<f64>,
    pub lazy_mae: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            rho: 250.0,
            beta: 11.0,
            gamma0: 0.5,
            epsilon0: 0.5,
            cycles: 500,
            mode: SimulationMode::ClosedForm,
            learning_rate: DEFAULT_LEARNING_RATE,
            init: InitRule::Equilibrium,
            recursion: RecursionForm::Harmonic,
            honest_mae: vec![DEFAULT_HONEST_MAE],
            lazy_mae: DEFAULT_LAZY_MAE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub epsilon0s: Vec<f64>,
    /// (rho, beta) grid for the bound checks.
    pub grid_rhos: Vec<f64>,
    pub grid_betas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            betas: vec![1.0, 2.0, 4.0, 6.0, 8.0, 11.0],
            rhos: vec![100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0],
            epsilon0s: vec![0.3, 0.5, 0.7],
            grid_rhos: vec![100.0, 250.0, 400.0],
            grid_betas: vec![2.0, 6.0, 11.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub mi: MiTrainConfig,
    pub scoring: ScoringConfig,
    pub vfl: VflConfig,
    pub lazy: LazyConfig,
    pub comm: CommParams,
    pub compute: ComputeParams,
    pub econ: EconParams,
    pub game: GameConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::MiGrid,
            seeds: (0..5).collect(),
            output_dir: PathBuf::from("out"),
            jobs: 1,
            data: DataConfig::default(),
            noise: NoiseConfig::default(),
            mi: MiTrainConfig::default(),
            scoring: ScoringConfig::default(),
            vfl: VflConfig::default(),
            lazy: LazyConfig::default(),
            comm: CommParams::default(),
            compute: ComputeParams::default(),
            econ: EconParams::default(),
            game: GameConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn in_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("invalid TOML: {e}")))?;
        if let Some(toml::Value::String(s)) = table.get("scenario") {
            Scenario::parse(s)?;
        }
        let defaults = toml::Table::try_from(Self::default()).expect("defaults serialize");
        check_keys(&table, &defaults, "")?;
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be ≥ 1".into()));
        }
        self.data.shape().validate()?;
        self.data.dynamics.validate()?;
        if self.data.history_lag == 0 {
            return Err(Error::Config("data.history_lag must be ≥ 1".into()));
        }
        for (name, grid) in [("noise.mu_grid", &self.noise.mu_grid), ("noise.sigma_grid", &self.noise.sigma_grid)] {
            if grid.is_empty() || grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Config(format!("{name} must be a non-empty list of values ≥ 0")));
            }
        }
        if self.noise.providers.is_empty() {
            return Err(Error::Config("noise.providers must list at least one provider".into()));
        }
        for [mu, sigma] in &self.noise.providers {
            NoiseProfile { mu: *mu, sigma: *sigma, seed: 0 }.validate()?;
        }
        self.mi.validate()?;
        if self.scoring.seeds == 0 || self.scoring.samples == 0 {
            return Err(Error::Config("scoring.seeds and scoring.samples must be ≥ 1".into()));
        }
        self.vfl.validate()?;
        for &f in &self.lazy.fractions {
            LazyPolicy::new(crate::data::LazyMode::RandomData, f)?;
        }
        let k = crate::data::RoadNetwork::default().segment_count();
        if let Some(&p) = self.lazy.lazy_providers.iter().find(|&&p| p >= k) {
            return Err(Error::Config(format!("lazy.lazy_providers names provider {p}; allowed range is 0..{k}")));
        }
        self.comm.validate()?;
        self.compute.validate()?;
        self.econ.validate()?;
        let g = &self.game;
        if !(g.rho > 0.0 && g.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be > 0, got {}", g.rho)));
        }
        if !(g.beta >= 1.0 && g.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be ≥ 1, got {}", g.beta)));
        }
        in_unit("gamma0", g.gamma0)?;
        in_unit("epsilon0", g.epsilon0)?;
        if g.cycles == 0 {
            return Err(Error::Config("game.cycles must be ≥ 1".into()));
        }
        if let Some(&b) = self.sweep.betas.iter().chain(&self.sweep.grid_betas).find(|b| !(**b >= 1.0)) {
            return Err(Error::Config(format!("sweep.betas: beta must be ≥ 1, got {b}")));
        }
        if let Some(&r) = self.sweep.rhos.iter().chain(&self.sweep.grid_rhos).find(|r| !(**r > 0.0)) {
            return Err(Error::Config(format!("sweep.rhos: rho must be > 0, got {r}")));
        }
        for &e in &self.sweep.epsilon0s {
            in_unit("sweep.epsilon0s", e)?;
        }
        // Builds and validates the options too.
        self.game_options(0)?;
        Ok(())
    }

    pub fn costs(&self) -> Result<CostBreakdown> {
        CostBreakdown::compute(&self.comm, &self.compute, &self.econ)
    }

    pub fn game_params(&self) -> Result<GameParams> {
        let g = &self.game;
        GameParams::new(self.econ.clone(), self.costs()?, g.rho, g.beta, g.gamma0, g.epsilon0)
    }

    pub fn game_options(&self, seed: u64) -> Result<SimulationOptions> {
        let g = &self.game;
        if !(g.learning_rate > 0.0 && g.learning_rate.is_finite()) {
            return Err(Error::Config(format!("game.learning_rate must be > 0, got {}", g.learning_rate)));
        }
        if g.honest_mae.is_empty() {
            return Err(Error::Config("game.honest_mae must not be empty".into()));
        }
        if self.econ.usable(g.lazy_mae) {
            return Err(Error::Config(format!(
                "game.lazy_mae must be ≥ econ.mae_threshold = {}, got {}",
                self.econ.mae_threshold, g.lazy_mae
            )));
        }
        Ok(SimulationOptions {
            mode: g.mode,
            cycles: g.cycles,
            seed,
            learning_rate: g.learning_rate,
            init: g.init,
            recursion: g.recursion,
            honest_mae: g.honest_mae.clone(),
            lazy_mae: g.lazy_mae,
        })
    }

    pub fn provider_profiles(&self) -> Vec<[f64; 2]> {
        self.noise.providers.clone()
    }
}

fn all_paths(table: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if let toml::Value::Table(t) = v {
            all_paths(t, &path, out);
        }
        out.push(path);
    }
}

fn suggest(key: &str, candidates: &[String]) -> Option<String> {
    candidates
        .iter()
        .map(|c| {
            let leaf = c.rsplit('.').next().unwrap_or(c);
            (strsim::jaro_winkler(key, leaf).max(strsim::jaro_winkler(key, c)), c)
        })
        .filter(|(score, _)| *score > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.clone())
}

fn check_keys(user: &toml::Table, known: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match known.get(k) {
            Some(toml::Value::Table(kt)) => {
                if let toml::Value::Table(ut) = v {
                    check_keys(ut, kt, &path)?;
                }
            }
            Some(_) => {}
            None => {
                let mut here: Vec<String> = known.keys().map(|c| if prefix.is_empty() { c.clone() } else { format!("{prefix}.{c}") }).collect();
                let mut everywhere = Vec::new();
                all_paths(&toml::Table::try_from(ExperimentConfig::default()).expect("defaults serialize"), "", &mut everywhere);
                here.extend(everywhere);
                let hint = suggest(k, &here).map(|s| format!("; did you mean `{s}`?")).unwrap_or_default();
                return Err(Error::Config(format!("unknown key `{path}`{hint}")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn beta_below_one_is_rejected() {
        let e = ExperimentConfig::from_toml("[game]\nbeta = 0.5\n").unwrap_err();
        assert!(e.to_string().contains("beta must be ≥ 1"), "{e}");
    }

    #[test]
    fn typo_gets_a_suggestion() {
        let e = ExperimentConfig::from_toml("[game]\ngamm0 = 0.5\n").unwrap_err();
        assert!(e.to_string().contains("`game.gamma0`"), "{e}");
        let e = ExperimentConfig::from_toml("gamm0 = 0.5\n").unwrap_err();
        assert!(e.to_string().contains("gamma0"), "{e}");
        let e = ExperimentConfig::from_toml("[vfl]\nepochz = 3\n").unwrap_err();
        assert!(e.to_string().contains("vfl.epochs"), "{e}");
    }

    #[test]
    fn unknown_scenario_lists_names() {
        let e = ExperimentConfig::from_toml("scenario = \"mi_gird\"\n").unwrap_err();
        let m = e.to_string();
        assert!(m.contains("mi_grid") && m.contains("mechanism_compare"), "{m}");
    }

    #[test]
    fn cross_field_checks() {
        let e = ExperimentConfig::from_toml("[data]\ntime_steps = 5\n").unwrap_err();
        assert!(e.to_string().contains("T must be ≥ 10"), "{e}");
        assert!(ExperimentConfig::from_toml("seeds = []\n").is_err());
        assert!(ExperimentConfig::from_toml("[game]\ngamma0 = 1.5\n").is_err());
        assert!(ExperimentConfig::from_toml("[game]\nlazy_mae = 20.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[lazy]\nlazy_providers = [7]\n").is_err());
    }

    #[test]
    fn nested_values_are_read() {
        let c = ExperimentConfig::from_toml("scenario = \"bound_gap\"\nseeds = [3]\n[game]\nrho = 100.0\n[data.dynamics]\ncomponents = 4\n").unwrap();
        assert_eq!(c.scenario, Scenario::BoundGap);
        assert_eq!(c.seeds, vec![3]);
        assert_eq!(c.game.rho, 100.0);
        assert_eq!(c.data.dynamics.components, 4);
        assert_eq!(c.game.beta, 11.0);
    }

    #[test]
    fn wrong_type_is_a_config_error() {
        assert!(matches!(ExperimentConfig::from_toml("[game]\nrho = \"high\"\n"), Err(Error::Config(_))));
    }
}
