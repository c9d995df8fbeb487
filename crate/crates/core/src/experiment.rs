//! Scenario runner. Each scenario runs once per seed on a worker pool, writes
//! per-seed CSVs, a `summary.json` with its verdicts and a `manifest.json`
//! listing every file with its SHA-256.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Scenario};
use crate::data::{apply_lazy_policy, generate_synthetic, historical_view, LazyMode, LazyPolicy, NoiseProfile, RoadNetwork, TrafficDataset};
use crate::error::{Error, Result};
use crate::game::{check_bounds, harmonic_identity_check, run_mechanism, simulate_repeated_game, GameParams, GameTrajectory, InitRule, Mechanism, SimulationMode};
use crate::mi::{mean_score, train_mi, window_matrix, MiModel};
use crate::rng::{derive_seed, rng_from, stream};
use crate::selection::{agreement, oracle_selection, random_selection, solve_p2, ScoreTable, SelectionMatrix};
use crate::vfl::{evaluate_lazy, train_vfl, StateMetrics, VflData};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            pass,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: Scenario,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub files: Vec<Artifact>,
    pub versions: BTreeMap<String, String>,
    pub wall_clock_s: f64,
    pub passed: bool,
    pub failures: Vec<Check>,
}

/// What a scenario produced: named file contents, a summary and its verdicts.
pub struct ScenarioOutput {
    pub files: Vec<(String, String)>,
    pub summary: Value,
    pub checks: Vec<Check>,
}

pub fn dataset_for(cfg: &ExperimentConfig, seed: u64) -> Result<TrafficDataset> {
    generate_synthetic(&RoadNetwork::default(), &cfg.data.shape(), seed, &cfg.data.dynamics)
}

/// The configured noise ladder, shuffled independently for every segment.
pub fn provider_ladder(cfg: &ExperimentConfig, segments: usize, seed: u64) -> Vec<Vec<NoiseProfile>> {
    (0..segments)
        .map(|k| {
            let mut ladder = cfg.noise.providers.clone();
            ladder.shuffle(&mut rng_from(seed, &[stream::LADDER, k as u64]));
            ladder
                .iter()
                .enumerate()
                .map(|(n, [mu, sigma])| NoiseProfile {
                    mu: *mu,
                    sigma: *sigma,
                    seed: derive_seed(seed, &[stream::LADDER, k as u64, n as u64]),
                })
                .collect()
        })
        .collect()
}

/// One MI model per segment, trained on that segment's ground truth.
pub fn segment_models(cfg: &ExperimentConfig, ds: &TrafficDataset, seed: u64) -> Result<Vec<MiModel>> {
    let y = window_matrix(&ds.labels);
    (0..ds.truth.len())
        .into_par_iter()
        .map(|k| train_mi(&window_matrix(&ds.truth[k]), &y, &cfg.mi, derive_seed(seed, &[stream::NN_INIT, k as u64])))
        .collect()
}

pub fn score_table(cfg: &ExperimentConfig, ds: &TrafficDataset, models: &[MiModel], seed: u64) -> Result<ScoreTable> {
    let y = window_matrix(&ds.labels);
    let seeds = cfg.scoring.seed_list(seed);
    let scores = ds
        .providers
        .par_iter()
        .zip(models)
        .map(|(row, m)| {
            row.iter()
                .map(|v| mean_score(m, &window_matrix(&v.features), &y, cfg.scoring.samples, &seeds))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreTable::new(scores, seeds, cfg.scoring.samples)
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn fmt(v: f64) -> String {
    format!("{v:.8e}")
}

// ---------------------------------------------------------------- mi_grid

/// Scores `[segment][mu index][sigma index]` for one seed.
pub fn mi_grid_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
    let ds = dataset_for(cfg, seed)?;
    let models = segment_models(cfg, &ds, seed)?;
    let y = window_matrix(&ds.labels);
    let seeds = cfg.scoring.seed_list(seed);
    // Every cell reuses the same standard-normal draws.
    let noise_seed = derive_seed(seed, &[stream::NOISE]);
    models
        .par_iter()
        .enumerate()
        .map(|(k, m)| {
            cfg.noise
                .mu_grid
                .iter()
                .map(|&mu| {
                    cfg.noise
                        .sigma_grid
                        .iter()
                        .map(|&sigma| {
                            let view = crate::data::derive_provider_view(&ds, k, NoiseProfile { mu, sigma, seed: noise_seed })?;
                            mean_score(m, &window_matrix(&view), &y, cfg.scoring.samples, &seeds)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTrend {
    /// (location, increase) for every adjacent pair that goes up.
    pub violations: Vec<(String, f64)>,
    pub last_row_below_origin: bool,
    pub last_col_below_origin: bool,
    pub pass: bool,
}

/// Non-increasing along rows and columns, at most two violations of at most
/// 0.05, and the noisiest row and column strictly below the clean cell.
pub fn grid_trend(table: &[Vec<f64>]) -> GridTrend {
    let mut violations = Vec::new();
    for (i, row) in table.iter().enumerate() {
        for j in 1..row.len() {
            if row[j] > row[j - 1] {
                violations.push((format!("row {i} col {}→{j}", j - 1), row[j] - row[j - 1]));
            }
        }
    }
    for j in 0..table[0].len() {
        for i in 1..table.len() {
            if table[i][j] > table[i - 1][j] {
                violations.push((format!("col {j} row {}→{i}", i - 1), table[i][j] - table[i - 1][j]));
            }
        }
    }
    let origin = table[0][0];
    let last_row_below_origin = table.last().unwrap().iter().all(|&v| v < origin);
    let last_col_below_origin = table.iter().all(|r| *r.last().unwrap() < origin);
    let pass = violations.len() <= 2 && violations.iter().all(|(_, d)| *d <= 0.05) && last_row_below_origin && last_col_below_origin;
    GridTrend {
        violations,
        last_row_below_origin,
        last_col_below_origin,
        pass,
    }
}

/// Mean over seeds and segments.
pub fn mean_grid(per_seed: &[Vec<Vec<Vec<f64>>>]) -> Vec<Vec<f64>> {
    let (rows, cols) = (per_seed[0][0].len(), per_seed[0][0][0].len());
    (0..rows)
        .map(|i| (0..cols).map(|j| mean(per_seed.iter().flat_map(|s| s.iter().map(move |seg| seg[i][j])))).collect())
        .collect()
}

fn run_mi_grid(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    let per_seed: Vec<_> = cfg.seeds.par_iter().map(|&s| mi_grid_seed(cfg, s)).collect::<Result<_>>()?;
    let mut files = Vec::new();
    for (&seed, grid) in cfg.seeds.iter().zip(&per_seed) {
        let mut csv = String::from("segment,provider,mu,sigma,seed,score\n");
        for (k, seg) in grid.iter().enumerate() {
            for (i, row) in seg.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let cell = i * row.len() + j;
                    let (mu, sigma) = (cfg.noise.mu_grid[i], cfg.noise.sigma_grid[j]);
                    writeln!(csv, "{k},{cell},{mu},{sigma},{seed},{}", fmt(*v)).unwrap();
                }
            }
        }
        files.push((format!("mi_grid_seed{seed}.csv"), csv));
    }
    let table = mean_grid(&per_seed);
    let mut csv = String::from("mu,sigma,mean_score\n");
    for (i, row) in table.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            writeln!(csv, "{},{},{}", cfg.noise.mu_grid[i], cfg.noise.sigma_grid[j], fmt(*v)).unwrap();
        }
    }
    files.push(("mi_grid_mean.csv".into(), csv));
    let trend = grid_trend(&table);
    let checks = vec![Check::new(
        "monotone_degradation",
        trend.pass,
        format!(
            "{} violations {:?}; noisiest row below clean: {}; noisiest column below clean: {}",
            trend.violations.len(),
            trend.violations,
            trend.last_row_below_origin,
            trend.last_col_below_origin
        ),
    )];
    Ok(ScenarioOutput {
        files,
        summary: json!({ "mean_table": table, "mu_grid": cfg.noise.mu_grid, "sigma_grid": cfg.noise.sigma_grid, "trend": trend }),
        checks,
    })
}

// ---------------------------------------------------------------- lazy_grid

pub const LAZY_MODES: [LazyMode; 2] = [LazyMode::RandomData, LazyMode::HistoricalData];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LazyGridSeed {
    /// Per segment.
    pub honest: Vec<f64>,
    /// `[mode][fraction][segment]`.
    pub lazy: Vec<Vec<Vec<f64>>>,
}

impl LazyGridSeed {
    pub fn honest_mean(&self) -> f64 {
        mean(self.honest.iter().copied())
    }

    pub fn lazy_mean(&self, mode: usize, fraction: usize) -> f64 {
        mean(self.lazy[mode][fraction].iter().copied())
    }
}

pub fn lazy_grid_seed(cfg: &ExperimentConfig, seed: u64) -> Result<LazyGridSeed> {
    let ds = dataset_for(cfg, seed)?;
    let models = segment_models(cfg, &ds, seed)?;
    let y = window_matrix(&ds.labels);
    let seeds = cfg.scoring.seed_list(seed);
    let score = |k: usize, w: &crate::data::WindowTensor| mean_score(&models[k], &window_matrix(w), &y, cfg.scoring.samples, &seeds);
    let honest = (0..models.len()).map(|k| score(k, &ds.truth[k])).collect::<Result<Vec<_>>>()?;
    let lazy = LAZY_MODES
        .iter()
        .enumerate()
        .map(|(mi, &mode)| {
            cfg.lazy
                .fractions
                .iter()
                .enumerate()
                .map(|(fi, &f)| {
                    (0..models.len())
                        .map(|k| {
                            let truth = &ds.truth[k];
                            let history = historical_view(truth, cfg.data.history_lag);
                            let s = derive_seed(seed, &[stream::LAZY, k as u64, mi as u64, fi as u64]);
                            score(k, &apply_lazy_policy(truth, LazyPolicy::new(mode, f)?, Some(&history), s)?)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LazyGridSeed { honest, lazy })
}

fn run_lazy_grid(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    let per_seed: Vec<_> = cfg.seeds.par_iter().map(|&s| lazy_grid_seed(cfg, s)).collect::<Result<_>>()?;
    let mut files = Vec::new();
    for (&seed, r) in cfg.seeds.iter().zip(&per_seed) {
        let mut csv = String::from("segment,mode,fraction,seed,score\n");
        for (k, v) in r.honest.iter().enumerate() {
            writeln!(csv, "{k},honest,0,{seed},{}", fmt(*v)).unwrap();
        }
        for (mi, mode) in LAZY_MODES.iter().enumerate() {
            for (fi, f) in cfg.lazy.fractions.iter().enumerate() {
                for (k, v) in r.lazy[mi][fi].iter().enumerate() {
                    writeln!(csv, "{k},{},{f},{seed},{}", mode.name(), fmt(*v)).unwrap();
                }
            }
        }
        files.push((format!("lazy_grid_seed{seed}.csv"), csv));
    }
    let honest = mean(per_seed.iter().map(LazyGridSeed::honest_mean));
    let mut table = BTreeMap::new();
    let mut below = true;
    for (mi, mode) in LAZY_MODES.iter().enumerate() {
        let row: Vec<f64> = (0..cfg.lazy.fractions.len()).map(|fi| mean(per_seed.iter().map(|r| r.lazy_mean(mi, fi)))).collect();
        below &= row.iter().all(|&v| v < honest);
        table.insert(mode.name().to_string(), row);
    }
    let mut checks = vec![Check::new("lazy_below_honest", below, format!("honest {honest:.4}, lazy {table:?}"))];
    if let Some(full) = cfg.lazy.fractions.iter().position(|&f| f == 1.0) {
        for (mi, mode) in LAZY_MODES.iter().enumerate() {
            let neg = per_seed.iter().filter(|r| r.lazy_mean(mi, full) < 0.0).count();
            let need = (0.9 * per_seed.len() as f64).ceil() as usize;
            checks.push(Check::new(
                &format!("full_{}_negative", mode.name()),
                neg >= need,
                format!("{neg}/{} seeds negative, need {need}", per_seed.len()),
            ));
        }
    }
    Ok(ScenarioOutput {
        files,
        summary: json!({ "honest": honest, "fractions": cfg.lazy.fractions, "lazy": table }),
        checks,
    })
}

// ---------------------------------------------------------------- selection_compare

pub const SELECTION_METHODS: [&str; 4] = ["central", "random", "oracle", "proposed"];

#[derive(Clone, Debug)]
pub struct SelectionSeed {
    pub scores: ScoreTable,
    pub proposed: SelectionMatrix,
    pub oracle: SelectionMatrix,
    pub random: SelectionMatrix,
    /// Final validation metrics per method, when training was requested.
    pub metrics: BTreeMap<String, StateMetrics>,
}

/// Dataset with a shuffled noise ladder per segment.
pub fn selection_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<TrafficDataset> {
    let ds = dataset_for(cfg, seed)?;
    let ladder = provider_ladder(cfg, ds.network.segment_count(), seed);
    ds.with_providers(&ladder)
}

pub fn selection_seed(cfg: &ExperimentConfig, seed: u64, train: bool) -> Result<SelectionSeed> {
    let ds = selection_dataset(cfg, seed)?;
    let models = segment_models(cfg, &ds, seed)?;
    let scores = score_table(cfg, &ds, &models, seed)?;
    let profiles: Vec<Vec<NoiseProfile>> = ds.providers.iter().map(|r| r.iter().map(|v| v.noise).collect()).collect();
    let proposed = solve_p2(&scores);
    let oracle = oracle_selection(&profiles)?;
    let random = random_selection(scores.segments(), scores.providers(), seed)?;
    let mut metrics = BTreeMap::new();
    if train {
        let runs: Vec<(String, StateMetrics)> = SELECTION_METHODS
            .par_iter()
            .map(|&m| {
                let sel = match m {
                    "central" => None,
                    "random" => Some(&random),
                    "oracle" => Some(&oracle),
                    _ => Some(&proposed),
                };
                let data = VflData::from_dataset(&ds, sel)?;
                let (_, report) = train_vfl(&data, &cfg.vfl, seed)?;
                Ok((m.to_string(), report.last().validation.clone()))
            })
            .collect::<Result<_>>()?;
        metrics.extend(runs);
    }
    Ok(SelectionSeed {
        scores,
        proposed,
        oracle,
        random,
        metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionVerdict {
    pub agreement: f64,
    pub proposed_not_worse: usize,
    pub seeds: usize,
    pub mean_mae: BTreeMap<String, f64>,
    pub gap_ratio: f64,
}

pub fn selection_verdict(runs: &[SelectionSeed]) -> SelectionVerdict {
    let agreement = mean(runs.iter().map(|r| agreement(&r.proposed, &r.oracle)));
    let mae = |r: &SelectionSeed, m: &str| r.metrics.get(m).map_or(f64::NAN, StateMetrics::mean_mae);
    let proposed_not_worse = runs.iter().filter(|r| mae(r, "proposed") <= mae(r, "random")).count();
    let mean_mae: BTreeMap<String, f64> = SELECTION_METHODS.iter().map(|m| (m.to_string(), mean(runs.iter().map(|r| mae(r, m))))).collect();
    let gap_ratio = (mean_mae["proposed"] - mean_mae["oracle"]).abs() / (mean_mae["random"] - mean_mae["oracle"]);
    SelectionVerdict {
        agreement,
        proposed_not_worse,
        seeds: runs.len(),
        mean_mae,
        gap_ratio,
    }
}

fn run_selection_compare(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    let runs: Vec<_> = cfg.seeds.par_iter().map(|&s| selection_seed(cfg, s, true)).collect::<Result<_>>()?;
    let mut files = Vec::new();
    for (&seed, r) in cfg.seeds.iter().zip(&runs) {
        let mut csv = String::from("method,segment,provider,score\n");
        for (name, sel) in [("proposed", &r.proposed), ("oracle", &r.oracle), ("random", &r.random)] {
            for (k, n) in sel.choices().into_iter().enumerate() {
                writeln!(csv, "{name},{k},{n},{}", fmt(r.scores.scores[k][n])).unwrap();
            }
        }
        files.push((format!("selection_seed{seed}.csv"), csv));
        let mut csv = String::from("method,metric,state,value\n");
        for (m, met) in &r.metrics {
            for (metric, vals) in [("mae", &met.mae), ("rmse", &met.rmse)] {
                for (s, v) in vals.iter().enumerate() {
                    writeln!(csv, "{m},{metric},{},{}", crate::data::STATE_NAMES[s], fmt(*v)).unwrap();
                }
            }
        }
        files.push((format!("selection_metrics_seed{seed}.csv"), csv));
    }
    let v = selection_verdict(&runs);
    let need = (0.9 * v.seeds as f64).ceil() as usize;
    let checks = vec![
        Check::new("agreement_with_oracle", v.agreement >= 0.9, format!("{:.3} of segments agree", v.agreement)),
        Check::new(
            "proposed_not_worse_than_random",
            v.proposed_not_worse >= need,
            format!("{}/{} seeds, need {need}", v.proposed_not_worse, v.seeds),
        ),
        Check::new("proposed_close_to_oracle", v.gap_ratio <= 0.2, format!("gap ratio {:.4}", v.gap_ratio)),
    ];
    Ok(ScenarioOutput {
        files,
        summary: serde_json::to_value(&v)?,
        checks,
    })
}

// ---------------------------------------------------------------- lazy_mae

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LazyMaeSeed {
    pub honest: StateMetrics,
    pub random: StateMetrics,
    pub historical: StateMetrics,
}

pub fn lazy_mae_seed(cfg: &ExperimentConfig, seed: u64) -> Result<LazyMaeSeed> {
    let ds = dataset_for(cfg, seed)?;
    let data = VflData::from_dataset(&ds, None)?;
    let (fed, _) = train_vfl(&data, &cfg.vfl, seed)?;
    let k = data.views.len();
    let policies = |mode| {
        (0..k)
            .map(|i| {
                if cfg.lazy.lazy_providers.contains(&i) {
                    LazyPolicy::new(mode, 1.0)
                } else {
                    Ok(LazyPolicy::honest())
                }
            })
            .collect::<Result<Vec<_>>>()
    };
    let eval_seed = derive_seed(seed, &[stream::LAZY]);
    Ok(LazyMaeSeed {
        honest: fed.metrics(&data.validation)?,
        random: evaluate_lazy(&fed, &data, &policies(LazyMode::RandomData)?, cfg.data.history_lag, eval_seed)?,
        historical: evaluate_lazy(&fed, &data, &policies(LazyMode::HistoricalData)?, cfg.data.history_lag, eval_seed)?,
    })
}

fn run_lazy_mae(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    let runs: Vec<_> = cfg.seeds.par_iter().map(|&s| lazy_mae_seed(cfg, s)).collect::<Result<_>>()?;
    let mut files = Vec::new();
    for (&seed, r) in cfg.seeds.iter().zip(&runs) {
        let mut csv = String::from("condition,metric,state,value\n");
        for (c, m) in [("honest", &r.honest), ("random_data", &r.random), ("historical_data", &r.historical)] {
            for (metric, vals) in [("mae", &m.mae), ("rmse", &m.rmse)] {
                for (s, v) in vals.iter().enumerate() {
                    writeln!(csv, "{c},{metric},{},{}", crate::data::STATE_NAMES[s], fmt(*v)).unwrap();
                }
            }
        }
        files.push((format!("lazy_mae_seed{seed}.csv"), csv));
    }
    let worse = runs.iter().filter(|r| r.random.mean_mae() > r.honest.mean_mae()).count();
    let d_random = mean(runs.iter().map(|r| r.random.mean_mae() - r.honest.mean_mae()));
    let d_hist = mean(runs.iter().map(|r| r.historical.mean_mae() - r.honest.mean_mae()));
    let checks = vec![
        Check::new("random_lazy_degrades", worse == runs.len(), format!("{worse}/{} seeds", runs.len())),
        Check::new(
            "historical_degrades_less",
            d_hist < d_random,
            format!("mean MAE increase: historical {d_hist:.4}, random {d_random:.4}"),
        ),
    ];
    Ok(ScenarioOutput {
        files,
        summary: json!({
            "honest_mae": mean(runs.iter().map(|r| r.honest.mean_mae())),
            "random_mae": mean(runs.iter().map(|r| r.random.mean_mae())),
            "historical_mae": mean(runs.iter().map(|r| r.historical.mean_mae())),
        }),
        checks,
    })
}

// ---------------------------------------------------------------- game scenarios

fn trajectory_csv(t: &GameTrajectory) -> String {
    let mut buf = Vec::new();
    t.write_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}

fn tag(v: f64) -> String {
    v.to_string().replace('.', "p")
}

/// Final γ and ε from each mode for every value of a swept parameter.
fn sweep(cfg: &ExperimentConfig, name: &str, values: &[f64], set: fn(&mut GameParams, f64)) -> Result<ScenarioOutput> {
    let base = cfg.game_params()?;
    let modes = [SimulationMode::ClosedForm, SimulationMode::Empirical];
    let per_seed: Vec<Vec<(f64, SimulationMode, GameTrajectory, GameParams)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut out = Vec::new();
            for &v in values {
                let mut p = base.clone();
                set(&mut p, v);
                p.validate()?;
                for mode in modes {
                    let opts = crate::game::SimulationOptions {
                        mode,
                        ..cfg.game_options(seed)?
                    };
                    out.push((v, mode, simulate_repeated_game(&p, &opts)?, p.clone()));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut files = Vec::new();
    let mut rows = String::from(&*format!("{name},mode,seed,final_gamma,final_epsilon,cum_u_ma,cum_u_mp,stop_cycle\n"));
    let mut bounds_ok = true;
    let mut bound_notes = Vec::new();
    for (&seed, runs) in cfg.seeds.iter().zip(&per_seed) {
        for (v, mode, t, p) in runs {
            let mode_name = if *mode == SimulationMode::ClosedForm { "closed_form" } else { "empirical" };
            files.push((format!("{name}_seed{seed}_{}_{mode_name}.csv", tag(*v)), trajectory_csv(t)));
            writeln!(
                rows,
                "{v},{mode_name},{seed},{},{},{},{},{}",
                t.final_gamma(),
                t.final_epsilon(),
                t.cumulative_ma(),
                t.cumulative_mp(),
                t.stop_cycle.map_or(String::new(), |c| c.to_string())
            )
            .unwrap();
            if *mode == SimulationMode::ClosedForm {
                let b = check_bounds(t, p);
                if !b.passed() {
                    bounds_ok = false;
                    bound_notes.push(format!("{name}={v}: {:?}", b.clauses.iter().filter(|c| !c.pass).map(|c| &c.clause).collect::<Vec<_>>()));
                }
            }
        }
    }
    files.push((format!("{name}_final.csv"), rows));
    let mean_final = |v: f64, mode: SimulationMode| {
        let gs: Vec<(f64, f64)> = per_seed.iter().flatten().filter(|r| r.0 == v && r.1 == mode).map(|r| (r.2.final_gamma(), r.2.final_epsilon())).collect();
        (mean(gs.iter().map(|g| g.0)), mean(gs.iter().map(|g| g.1)))
    };
    let mut summary = BTreeMap::new();
    for &v in values {
        let (cg, ce) = mean_final(v, SimulationMode::ClosedForm);
        let (eg, ee) = mean_final(v, SimulationMode::Empirical);
        summary.insert(v.to_string(), json!({"closed_form": {"gamma": cg, "epsilon": ce}, "empirical": {"gamma": eg, "epsilon": ee}}));
    }
    let mut checks = vec![Check::new("bounds_hold", bounds_ok, bound_notes.join("; "))];
    if name == "beta" && values.contains(&2.0) && values.contains(&11.0) {
        let (g2, _) = mean_final(2.0, SimulationMode::Empirical);
        let (g11, _) = mean_final(11.0, SimulationMode::Empirical);
        checks.push(Check::new(
            "escalation_lowers_sloth",
            g11 <= g2,
            format!("mean empirical final gamma: beta=11 {g11:.4}, beta=2 {g2:.4}"),
        ));
    }
    Ok(ScenarioOutput {
        files,
        summary: json!({ "mean_final": summary }),
        checks,
    })
}

/// Closed-form bound reports over a (rho, beta) grid, started from
/// (gamma0, epsilon0).
pub fn bound_grid(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(f64, f64, crate::game::BoundReport, crate::game::HarmonicReport)>> {
    let base = cfg.game_params()?;
    let mut out = Vec::new();
    for &rho in &cfg.sweep.grid_rhos {
        for &beta in &cfg.sweep.grid_betas {
            let p = GameParams { rho, beta, ..base.clone() };
            let opts = crate::game::SimulationOptions {
                mode: SimulationMode::ClosedForm,
                init: InitRule::Given,
                ..cfg.game_options(seed)?
            };
            let t = simulate_repeated_game(&p, &opts)?;
            out.push((rho, beta, check_bounds(&t, &p), harmonic_identity_check(&t, &p)));
        }
    }
    Ok(out)
}

fn run_bound_gap(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    let per_seed: Vec<_> = cfg.seeds.par_iter().map(|&s| bound_grid(cfg, s)).collect::<Result<_>>()?;
    let mut files = Vec::new();
    let mut all_pass = true;
    let mut max_residual: f64 = 0.0;
    for (&seed, grid) in cfg.seeds.iter().zip(&per_seed) {
        let mut csv = String::from("rho,beta,i_star,converged,clause,bound,observed,margin,pass,applicable\n");
        for (rho, beta, b, h) in grid {
            all_pass &= b.passed();
            max_residual = max_residual.max(h.max_gamma_residual).max(h.max_epsilon_residual);
            for c in &b.clauses {
                writeln!(
                    csv,
                    "{rho},{beta},{},{},{},{},{},{},{},{}",
                    b.i_star, b.converged, c.clause, c.bound, c.observed, c.margin, c.pass, c.applicable
                )
                .unwrap();
            }
        }
        files.push((format!("bound_gap_seed{seed}.csv"), csv));
    }
    let checks = vec![
        Check::new("bounds_hold", all_pass, String::new()),
        Check::new("harmonic_identity", max_residual < 1e-10, format!("max residual {max_residual:e}")),
    ];
    Ok(ScenarioOutput {
        files,
        summary: json!({ "grid": per_seed[0].iter().map(|(r, b, rep, _)| json!({"rho": r, "beta": b, "report": rep})).collect::<Vec<_>>(), "max_harmonic_residual": max_residual }),
        checks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismSeed {
    pub epsilon0: f64,
    pub final_gamma: BTreeMap<String, f64>,
    pub final_epsilon: BTreeMap<String, f64>,
    pub cumulative_ma: BTreeMap<String, f64>,
}

/// Empirical trajectories of all three mechanisms from (gamma0, epsilon0).
pub fn mechanism_seed(cfg: &ExperimentConfig, epsilon0: f64, seed: u64) -> Result<(MechanismSeed, Vec<(Mechanism, GameTrajectory)>)> {
    let p = GameParams {
        epsilon0,
        ..cfg.game_params()?
    };
    let opts = crate::game::SimulationOptions {
        mode: SimulationMode::Empirical,
        ..cfg.game_options(seed)?
    };
    let mut out = MechanismSeed {
        epsilon0,
        final_gamma: BTreeMap::new(),
        final_epsilon: BTreeMap::new(),
        cumulative_ma: BTreeMap::new(),
    };
    let mut trajs = Vec::new();
    for m in Mechanism::ALL {
        let t = run_mechanism(m, &p, &opts)?;
        out.final_gamma.insert(m.name().into(), t.final_gamma());
        out.final_epsilon.insert(m.name().into(), t.final_epsilon());
        out.cumulative_ma.insert(m.name().into(), t.cumulative_ma());
        trajs.push((m, t));
    }
    Ok((out, trajs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismVerdict {
    pub epsilon0: f64,
    pub seeds: usize,
    pub converged: usize,
    pub bcl_sloth_mean: f64,
    pub beats_sgf: usize,
    pub beats_bcl: usize,
}

pub fn mechanism_verdict(runs: &[MechanismSeed]) -> MechanismVerdict {
    MechanismVerdict {
        epsilon0: runs[0].epsilon0,
        seeds: runs.len(),
        converged: runs.iter().filter(|r| r.final_gamma["proposed"] < 0.05 && r.final_epsilon["proposed"] < 0.1).count(),
        bcl_sloth_mean: mean(runs.iter().map(|r| r.final_gamma["bcl"])),
        beats_sgf: runs.iter().filter(|r| r.cumulative_ma["proposed"] > r.cumulative_ma["sgf"]).count(),
        beats_bcl: runs.iter().filter(|r| r.cumulative_ma["proposed"] > r.cumulative_ma["bcl"]).count(),
    }
}

fn run_mechanism_compare(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    let mut files = Vec::new();
    let mut verdicts = Vec::new();
    let mut checks = Vec::new();
    for &e0 in &cfg.sweep.epsilon0s {
        let runs: Vec<_> = cfg.seeds.par_iter().map(|&s| mechanism_seed(cfg, e0, s)).collect::<Result<_>>()?;
        for (&seed, (_, trajs)) in cfg.seeds.iter().zip(&runs) {
            for (m, t) in trajs {
                files.push((format!("mechanism_seed{seed}_eps{}_{}.csv", tag(e0), m.name()), trajectory_csv(t)));
            }
        }
        let seeds: Vec<MechanismSeed> = runs.into_iter().map(|r| r.0).collect();
        let v = mechanism_verdict(&seeds);
        let n = v.seeds as f64;
        let (need8, need9) = ((0.8 * n).ceil() as usize, (0.9 * n).ceil() as usize);
        checks.push(Check::new(
            &format!("eps{e0}_proposed_converges"),
            v.converged >= need8,
            format!("{}/{} seeds with gamma < 0.05 and epsilon < 0.1, need {need8}", v.converged, v.seeds),
        ));
        checks.push(Check::new(
            &format!("eps{e0}_bcl_sloth_to_one"),
            v.bcl_sloth_mean > 0.95,
            format!("mean final bcl gamma {:.4}", v.bcl_sloth_mean),
        ));
        checks.push(Check::new(
            &format!("eps{e0}_ma_utility_ordering"),
            v.beats_sgf >= need9 && v.beats_bcl >= need9,
            format!("proposed > sgf on {}, > bcl on {} of {} seeds, need {need9}", v.beats_sgf, v.beats_bcl, v.seeds),
        ));
        verdicts.push(v);
    }
    Ok(ScenarioOutput {
        files,
        summary: serde_json::to_value(&verdicts)?,
        checks,
    })
}

// ---------------------------------------------------------------- runner

pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    match cfg.scenario {
        Scenario::MiGrid => run_mi_grid(cfg),
        Scenario::LazyGrid => run_lazy_grid(cfg),
        Scenario::SelectionCompare => run_selection_compare(cfg),
        Scenario::LazyMae => run_lazy_mae(cfg),
        Scenario::BetaSweep => sweep(cfg, "beta", &cfg.sweep.betas, |p, v| p.beta = v),
        Scenario::RhoSweep => sweep(cfg, "rho", &cfg.sweep.rhos, |p, v| p.rho = v),
        Scenario::BoundGap => run_bound_gap(cfg),
        Scenario::MechanismCompare => run_mechanism_compare(cfg),
    }
}

fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<Artifact> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(Artifact {
        path: name.into(),
        sha256: hex::encode(Sha256::digest(contents.as_bytes())),
        bytes: contents.len() as u64,
    })
}

/// Run the configured scenario into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    let out = pool.install(|| run_scenario(cfg))?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(out.files.len() + 2);
    for (name, contents) in &out.files {
        files.push(write(dir, name, contents)?);
    }
    let passed = out.checks.iter().all(|c| c.pass);
    let summary = json!({
        "scenario": cfg.scenario.name(),
        "seeds": cfg.seeds,
        "passed": passed,
        "checks": out.checks,
        "results": out.summary,
    });
    files.push(write(dir, SUMMARY_FILE, &(serde_json::to_string_pretty(&summary)? + "\n"))?);
    files.push(write(dir, "config.toml", &cfg.to_toml())?);
    let manifest = RunManifest {
        scenario: cfg.scenario,
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        files,
        versions: BTreeMap::from([
            ("vflsim".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("manifest_format".to_string(), "1".to_string()),
        ]),
        wall_clock_s: start.elapsed().as_secs_f64(),
        passed,
        failures: out.checks.into_iter().filter(|c| !c.pass).collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Files whose contents no longer match the manifest in `dir`.
pub fn verify_manifest(dir: &Path, manifest: &RunManifest) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for a in &manifest.files {
        let path: PathBuf = dir.join(&a.path);
        match sha256_file(&path) {
            Ok((hash, _)) if hash == a.sha256 => {}
            Ok(_) => bad.push(format!("{}: hash differs", a.path)),
            Err(_) => bad.push(format!("{}: missing", a.path)),
        }
    }
    Ok(bad)
}

/// Artifacts whose hashes differ between two runs.
pub fn compare_manifests(old: &RunManifest, new: &RunManifest) -> Vec<String> {
    let old_files: BTreeMap<&str, &str> = old.files.iter().map(|a| (a.path.as_str(), a.sha256.as_str())).collect();
    let new_files: BTreeMap<&str, &str> = new.files.iter().map(|a| (a.path.as_str(), a.sha256.as_str())).collect();
    let mut diff = Vec::new();
    for (p, h) in &new_files {
        match old_files.get(p) {
            Some(o) if o == h => {}
            Some(_) => diff.push(format!("{p}: hash differs")),
            None => diff.push(format!("{p}: not in the previous manifest")),
        }
    }
    for p in old_files.keys().filter(|p| !new_files.contains_key(*p)) {
        diff.push(format!("{p}: no longer produced"));
    }
    diff
}
