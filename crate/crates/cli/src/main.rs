use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use vflsim_core::config::{ExperimentConfig, Scenario};
use vflsim_core::data::{load_dataset, save_dataset, TrafficDataset};
use vflsim_core::economics::uplink_rate;
use vflsim_core::experiment::{compare_manifests, load_manifest, run_experiment, score_table, selection_dataset, MANIFEST_FILE};
use vflsim_core::game::{check_bounds, harmonic_identity_check, run_mechanism, Mechanism, SimulationMode};
use vflsim_core::mi::MiModel;
use vflsim_core::selection::{oracle_selection, random_selection, solve_p2, ScoreTable, SelectionMatrix};
use vflsim_core::vfl::{evaluate_lazy, parse_lazy_spec, train_centralized, train_vfl, Federation, TrainMode, VflData};
use vflsim_core::{DenseNet, Error};

#[derive(Parser)]
#[command(name = "vflsim", version, about = "Reliable vertical federated learning simulator")]
struct Cli {
    /// TOML experiment config; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Re-run an experiment and compare every artifact hash with the
    /// manifest already in the output directory.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Proposed,
    Oracle,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Vfl,
    Central,
}

#[derive(Clone, Copy, ValueEnum)]
enum GameMode {
    ClosedForm,
    Empirical,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Proposed,
    Sgf,
    Bcl,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a noisy provider ladder per segment.
    GenData,
    /// Train one MI model per segment on the ground truth.
    TrainMi {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score every provider with the segment's MI model.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
    },
    /// Pick one provider per segment.
    Select {
        #[arg(long, value_enum, default_value = "proposed")]
        method: Method,
        /// `scores.json` from `score` (proposed).
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Dataset directory (oracle and random).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the split model on the selected providers.
    TrainVfl {
        #[arg(long)]
        data: PathBuf,
        /// `selection.json`; without it the ground truth is used.
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "vfl")]
        mode: Mode,
    },
    /// Validation metrics of a trained model, optionally with lazy providers.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        selection: Option<PathBuf>,
        /// e.g. "mp=3:random:1.0,mp=4:historical:1.0"
        #[arg(long, default_value = "")]
        lazy: String,
    },
    /// Simulate the repeated supervision game.
    Game {
        #[arg(long, value_enum)]
        mode: Option<GameMode>,
        #[arg(long, value_enum, default_value = "proposed")]
        mechanism: MechanismArg,
    },
    /// Run a whole scenario across seeds.
    Experiment {
        /// mi_grid, lazy_grid, selection_compare, lazy_mae, beta_sweep,
        /// rho_sweep, bound_gap or mechanism_compare.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Print the per-piece energy costs and the resulting currency costs.
    PrintCosts,
}

fn config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Command::Experiment { scenario: Some(s) } = &cli.command {
        cfg.scenario = Scenario::parse(s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> anyhow::Result<&Path> {
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(&cfg.output_dir)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn model_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("mi_segment_{k}.json"))
}

fn load_selection(path: &Path) -> anyhow::Result<SelectionMatrix> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw: SelectionMatrix = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(SelectionMatrix::from_matrix(raw.matrix().to_vec())?)
}

fn vfl_data(ds: &TrafficDataset, selection: Option<&Path>) -> anyhow::Result<VflData> {
    let sel = selection.map(load_selection).transpose()?;
    Ok(VflData::from_dataset(ds, sel.as_ref())?)
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let cfg = config(cli)?;
    let seed = cfg.seeds[0];
    if cli.check && !matches!(cli.command, Command::Experiment { .. }) {
        return Err(Error::Config("--check only applies to `experiment`".into()).into());
    }
    match &cli.command {
        Command::GenData => {
            let ds = selection_dataset(&cfg, seed)?;
            save_dataset(&ds, &cfg.output_dir)?;
            println!("wrote dataset (T = {}, seed {seed}) to {}", ds.time_steps(), cfg.output_dir.display());
        }
        Command::TrainMi { data } => {
            let ds = load_dataset(data)?;
            let dir = out_dir(&cfg)?;
            let models = vflsim_core::experiment::segment_models(&cfg, &ds, seed)?;
            for (k, m) in models.iter().enumerate() {
                m.save_json(&model_path(dir, k))?;
                println!("segment {k}: best DV estimate {:.4} at step {}", m.best_estimate, m.best_step);
            }
        }
        Command::Score { data, models } => {
            let ds = load_dataset(data)?;
            let ms = (0..ds.network.segment_count())
                .map(|k| MiModel::load_json(&model_path(models, k)))
                .collect::<vflsim_core::Result<Vec<_>>>()?;
            let table = score_table(&cfg, &ds, &ms, seed)?;
            let dir = out_dir(&cfg)?;
            let mut csv = String::from("segment,provider,mu,sigma,seed,score\n");
            for (k, row) in table.scores.iter().enumerate() {
                for (n, s) in row.iter().enumerate() {
                    let p = ds.providers[k][n].noise;
                    csv.push_str(&format!("{k},{n},{},{},{seed},{s:.8e}\n", p.mu, p.sigma));
                }
            }
            write(&dir.join("scores.csv"), &csv)?;
            write(&dir.join("scores.json"), &(serde_json::to_string_pretty(&table)? + "\n"))?;
        }
        Command::Select { method, scores, data } => {
            let table = scores
                .as_ref()
                .map(|p| -> anyhow::Result<ScoreTable> {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    let raw: ScoreTable = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                    Ok(ScoreTable::new(raw.scores, raw.scoring_seeds, raw.samples)?)
                })
                .transpose()?;
            let sel = match method {
                Method::Proposed => solve_p2(table.as_ref().ok_or_else(|| Error::Config("--method proposed needs --scores".into()))?),
                Method::Oracle => {
                    let ds = load_dataset(data.as_ref().ok_or_else(|| Error::Config("--method oracle needs --data".into()))?)?;
                    let profiles: Vec<Vec<_>> = ds.providers.iter().map(|r| r.iter().map(|v| v.noise).collect()).collect();
                    oracle_selection(&profiles)?
                }
                Method::Random => {
                    let (k, n) = match (&table, data) {
                        (Some(t), _) => (t.segments(), t.providers()),
                        (None, Some(d)) => {
                            let ds = load_dataset(d)?;
                            (ds.network.segment_count(), ds.providers.first().map_or(0, Vec::len))
                        }
                        (None, None) => bail!(Error::Config("--method random needs --scores or --data".into())),
                    };
                    random_selection(k, n, seed)?
                }
            };
            let dir = out_dir(&cfg)?;
            sel.write_files(table.as_ref(), &dir.join("selection.csv"), &dir.join("selection.json"))?;
            println!("selected providers {:?}", sel.choices());
        }
        Command::TrainVfl { data, selection, mode } => {
            let ds = load_dataset(data)?;
            let d = vfl_data(&ds, selection.as_deref())?;
            let (bottoms, top, report) = match mode {
                Mode::Vfl => {
                    let (fed, r) = train_vfl(&d, &cfg.vfl, seed)?;
                    (fed.mps.iter().map(|m| m.bottom.clone()).collect::<Vec<_>>(), fed.ma.top.clone(), r)
                }
                Mode::Central => {
                    let (m, r) = train_centralized(&d, &cfg.vfl, seed)?;
                    let (b, t) = m.decompose();
                    (b, t, r)
                }
            };
            let dir = out_dir(&cfg)?;
            let model = dir.join("model");
            std::fs::create_dir_all(&model).with_context(|| format!("creating {}", model.display()))?;
            for (k, b) in bottoms.iter().enumerate() {
                b.save_json(&model.join(format!("bottom_{k}.json")))?;
            }
            top.save_json(&model.join("top.json"))?;
            write(&dir.join("train_report.csv"), &report.to_csv())?;
            write(&dir.join("train_report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
            let last = report.last();
            println!(
                "{} epochs ({}): validation MAE flow {:.4} density {:.4}",
                last.epoch,
                if report.mode == TrainMode::Vfl { "vfl" } else { "central" },
                last.validation.mae[0],
                last.validation.mae[1]
            );
        }
        Command::Evaluate { data, model, selection, lazy } => {
            let ds = load_dataset(data)?;
            let d = vfl_data(&ds, selection.as_deref())?;
            let bottoms = (0..d.views.len())
                .map(|k| DenseNet::load_json(&model.join(format!("bottom_{k}.json"))))
                .collect::<vflsim_core::Result<Vec<_>>>()?;
            let top = DenseNet::load_json(&model.join("top.json"))?;
            let fed = Federation::new(&d, bottoms, top, &cfg.vfl)?;
            let policies = parse_lazy_spec(lazy, d.views.len())?;
            let m = evaluate_lazy(&fed, &d, &policies, cfg.data.history_lag, seed)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Game { mode, mechanism } => {
            let p = cfg.game_params()?;
            let mut opts = cfg.game_options(seed)?;
            if let Some(m) = mode {
                opts.mode = match m {
                    GameMode::ClosedForm => SimulationMode::ClosedForm,
                    GameMode::Empirical => SimulationMode::Empirical,
                };
            }
            let kind = match mechanism {
                MechanismArg::Proposed => Mechanism::Proposed,
                MechanismArg::Sgf => Mechanism::Sgf,
                MechanismArg::Bcl => Mechanism::Bcl,
            };
            let t = run_mechanism(kind, &p, &opts)?;
            let dir = out_dir(&cfg)?;
            let mut buf = Vec::new();
            t.write_csv(&mut buf)?;
            write(&dir.join("trajectory.csv"), &String::from_utf8(buf)?)?;
            let q = vflsim_core::game::mechanism_params(kind, &p);
            write(&dir.join("bounds.json"), &(check_bounds(&t, &q).to_json()? + "\n"))?;
            let h = harmonic_identity_check(&t, &q);
            println!(
                "final gamma {:.6} epsilon {:.6}; MA utility {:.1}; stop {:?} at {:?}; harmonic residual {:.2e}",
                t.final_gamma(),
                t.final_epsilon(),
                t.cumulative_ma(),
                t.stop,
                t.stop_cycle,
                h.max_gamma_residual.max(h.max_epsilon_residual)
            );
        }
        Command::Experiment { .. } => {
            let previous = if cli.check {
                let dir = &cfg.output_dir;
                Some(load_manifest(dir).with_context(|| format!("--check needs an earlier run's {MANIFEST_FILE} in {}", dir.display()))?)
            } else {
                None
            };
            let m = run_experiment(&cfg)?;
            println!("{}: {} files in {} ({:.1} s)", cfg.scenario.name(), m.files.len(), cfg.output_dir.display(), m.wall_clock_s);
            if let Some(old) = previous {
                let diff = compare_manifests(&old, &m);
                if !diff.is_empty() {
                    eprintln!("{}", serde_json::to_string_pretty(&serde_json::json!({ "check": "failed", "differences": diff }))?);
                    return Ok(ExitCode::from(1));
                }
                println!("check: all {} artifacts match the previous run", m.files.len());
            }
            if !m.passed {
                eprintln!("{}", serde_json::to_string_pretty(&serde_json::json!({ "scenario": cfg.scenario.name(), "failures": m.failures }))?);
                return Ok(ExitCode::from(1));
            }
        }
        Command::PrintCosts => {
            let c = cfg.costs()?;
            let rate = uplink_rate(&cfg.comm, cfg.comm.distance_m)?;
            println!("R      = {rate:.6e} bit/s (d = {} m)", cfg.comm.distance_m);
            println!("E_t    = {:.6e} J", c.e_t);
            println!("E_p    = {:.6e} J", c.e_p);
            println!("E_r    = {:.6e} J", c.e_r);
            println!("H      = {:.6}", c.h);
            println!("H'     = {:.6}", c.h_prime);
            println!("H - H' = {:.6}", c.lazy_saving(&cfg.econ));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(Error::Config(_) | Error::Parse { .. } | Error::Validation(_) | Error::Io { .. } | Error::Json(_))
        ) || c.downcast_ref::<std::io::Error>().is_some()
            || c.downcast_ref::<serde_json::Error>().is_some()
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}
