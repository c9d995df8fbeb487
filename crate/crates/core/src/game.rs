//! Repeated supervision game between the authority (MA, inspects or trusts)
//! and one provider (MP, slacks or stays honest), with the penalty
//! escalation mechanism that multiplies the fine by β after a detected lazy
//! cycle.
//!
//! Two simulation modes:
//! * closed form: (γ, ε) follow the per-cycle first-order conditions and
//!   freeze once a stop condition holds; realized actions are sampled from
//!   them.
//! * empirical: both agents run multiplicative weights over their two
//!   actions, scoring each action against the opponent's realized move.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::economics::{ma_utility, mp_utility, CostBreakdown, EconParams, MaOutcome, MpOutcome};
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

/// Tolerance under which a stop condition counts as reached.
pub const STOP_TOLERANCE: f64 = 1e-6;
/// Relative slack allowed when a bound holds with equality.
pub const BOUND_RELATIVE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub econ: EconParams,
    pub costs: CostBreakdown,
    pub rho: f64,
    pub beta: f64,
    pub gamma0: f64,
    pub epsilon0: f64,
}

impl GameParams {
    pub fn new(econ: EconParams, costs: CostBreakdown, rho: f64, beta: f64, gamma0: f64, epsilon0: f64) -> Result<Self> {
        let p = Self {
            econ,
            costs,
            rho,
            beta,
            gamma0,
            epsilon0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be ≥ 0, got {}", self.rho)));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be ≥ 1, got {}", self.beta)));
        }
        for (name, v) in [("gamma0", self.gamma0), ("epsilon0", self.epsilon0)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.lazy_saving() > 0.0) {
            return Err(Error::Config("honest cost H must exceed lazy cost H′".into()));
        }
        Ok(())
    }

    pub fn reward(&self) -> f64 {
        self.econ.reward
    }

    pub fn inspection_cost(&self) -> f64 {
        self.econ.inspection_cost
    }

    /// H − H′.
    pub fn lazy_saving(&self) -> f64 {
        self.costs.h - self.costs.h_prime
    }

    /// γ ε ρ (β − 1), the expected extra penalty carried into the next cycle.
    pub fn escalation(&self, gamma: f64, epsilon: f64) -> f64 {
        gamma * epsilon * self.rho * (self.beta - 1.0)
    }

    /// Product γε at which the escalation exactly offsets the reward.
    pub fn boundary_product(&self) -> f64 {
        let k = self.rho * (self.beta - 1.0);
        if k > 0.0 {
            self.reward() / k
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MpAction {
    Sloth,
    Honest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaAction {
    Inspect,
    Trust,
}

impl MpAction {
    pub const ALL: [MpAction; 2] = [MpAction::Sloth, MpAction::Honest];

    pub fn name(self) -> &'static str {
        match self {
            MpAction::Sloth => "sloth",
            MpAction::Honest => "honest",
        }
    }
}

impl MaAction {
    pub const ALL: [MaAction; 2] = [MaAction::Inspect, MaAction::Trust];

    pub fn name(self) -> &'static str {
        match self {
            MaAction::Inspect => "inspect",
            MaAction::Trust => "trust",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffCell {
    pub u_ma: f64,
    pub u_mp: f64,
}

/// 2×2 payoff table, indexed `[ma][mp]` with inspect/sloth first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffTable {
    pub cells: [[PayoffCell; 2]; 2],
}

impl PayoffTable {
    /// Base table when `escalated` is false, repeat-offence table otherwise.
    /// `honest_mae` drives the MA's profit in honest cells.
    pub fn build(p: &GameParams, honest_mae: f64, escalated: bool) -> Self {
        let (e, c, rho, beta) = (&p.econ, &p.costs, p.rho, p.beta);
        let mp = |o| mp_utility(o, e, c, rho, beta);
        let ma = |o| ma_utility(o, e, honest_mae, rho, beta);
        let caught = if escalated {
            PayoffCell {
                u_ma: ma(MaOutcome::InspectCaughtRepeat),
                u_mp: mp(MpOutcome::CaughtRepeat),
            }
        } else {
            PayoffCell {
                u_ma: ma(MaOutcome::InspectCaught),
                u_mp: mp(MpOutcome::Caught),
            }
        };
        Self {
            cells: [
                [
                    caught,
                    PayoffCell {
                        u_ma: ma(MaOutcome::InspectHonest),
                        u_mp: mp(MpOutcome::Honest),
                    },
                ],
                [
                    PayoffCell {
                        u_ma: ma(MaOutcome::UncaughtLazy),
                        u_mp: mp(MpOutcome::UncaughtLazy),
                    },
                    PayoffCell {
                        u_ma: ma(MaOutcome::TrustHonest),
                        u_mp: mp(MpOutcome::Honest),
                    },
                ],
            ],
        }
    }

    pub fn cell(&self, ma: MaAction, mp: MpAction) -> PayoffCell {
        let i = matches!(ma, MaAction::Trust) as usize;
        let j = matches!(mp, MpAction::Honest) as usize;
        self.cells[i][j]
    }

    fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
        values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    pub fn ma_range(&self) -> (f64, f64) {
        Self::range(self.cells.iter().flatten().map(|c| c.u_ma))
    }

    pub fn mp_range(&self) -> (f64, f64) {
        Self::range(self.cells.iter().flatten().map(|c| c.u_mp))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub gamma: f64,
    pub epsilon: f64,
    pub gamma_clamped: bool,
    pub epsilon_clamped: bool,
}

fn clamp_unit(v: f64) -> (f64, bool) {
    if v > 1.0 {
        (1.0, true)
    } else if v < 0.0 {
        (0.0, true)
    } else {
        (v, false)
    }
}

/// One-shot mixed equilibrium γ* = S/(ρ+W), ε* = (H−H′)/(ρ+W).
pub fn one_shot_equilibrium(p: &GameParams) -> Result<Equilibrium> {
    let denom = p.rho + p.reward();
    if !(denom > 0.0) {
        return Err(Error::Domain(format!("rho + W must be > 0, got {denom}")));
    }
    let (gamma, gamma_clamped) = clamp_unit(p.inspection_cost() / denom);
    let (epsilon, epsilon_clamped) = clamp_unit(p.lazy_saving() / denom);
    Ok(Equilibrium {
        gamma,
        epsilon,
        gamma_clamped,
        epsilon_clamped,
    })
}

/// MA's expected utility of inspecting minus trusting against sloth rate
/// `gamma`, on the base table.
pub fn ma_indifference_residual(p: &GameParams, honest_mae: f64, gamma: f64) -> f64 {
    let t = PayoffTable::build(p, honest_mae, false);
    let e = |a| gamma * t.cell(a, MpAction::Sloth).u_ma + (1.0 - gamma) * t.cell(a, MpAction::Honest).u_ma;
    e(MaAction::Inspect) - e(MaAction::Trust)
}

/// MP's expected utility of slacking minus staying honest against
/// inspection rate `epsilon`, on the base table.
pub fn mp_indifference_residual(p: &GameParams, epsilon: f64) -> f64 {
    let t = PayoffTable::build(p, 0.0, false);
    let e = |a| epsilon * t.cell(MaAction::Inspect, a).u_mp + (1.0 - epsilon) * t.cell(MaAction::Trust, a).u_mp;
    e(MpAction::Sloth) - e(MpAction::Honest)
}

/// Inspection rate that actually makes the MP indifferent on the base
/// table: (H − H′)/ρ.
pub fn mp_indifferent_inspection(p: &GameParams) -> f64 {
    p.lazy_saving() / p.rho
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyState {
    pub gamma: f64,
    pub epsilon: f64,
    pub caught_last_cycle: bool,
}

impl StrategyState {
    pub fn new(gamma: f64, epsilon: f64) -> Self {
        Self {
            gamma,
            epsilon,
            caught_last_cycle: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: StrategyState,
    pub gamma_clamped: bool,
    pub epsilon_clamped: bool,
}

/// Next-cycle strategies from the first-order conditions:
/// γ' = S/(a + ρ), ε' = (H−H′)/(a + ρ) with a = γ ε ρ (β−1).
pub fn recursion_step(state: StrategyState, p: &GameParams) -> StepOutcome {
    let denom = p.escalation(state.gamma, state.epsilon) + p.rho;
    let (gamma, gamma_clamped) = clamp_unit(p.inspection_cost() / denom);
    let (epsilon, epsilon_clamped) = clamp_unit(p.lazy_saving() / denom);
    StepOutcome {
        state: StrategyState {
            gamma,
            epsilon,
            caught_last_cycle: state.caught_last_cycle,
        },
        gamma_clamped,
        epsilon_clamped,
    }
}

fn harmonic_update(v: f64, increment: f64) -> (f64, bool) {
    if v == 0.0 {
        return (0.0, false);
    }
    let inv = 1.0 / v + increment;
    if inv <= 1.0 {
        (1.0, inv < 1.0)
    } else {
        (1.0 / inv, false)
    }
}

/// Next-cycle strategies in reciprocal form:
/// 1/γ' = 1/γ + (a − W)/S and 1/ε' = 1/ε + (a − W)/(H − H′).
pub fn harmonic_step(state: StrategyState, p: &GameParams) -> StepOutcome {
    let drive = p.escalation(state.gamma, state.epsilon) - p.reward();
    let (gamma, gamma_clamped) = harmonic_update(state.gamma, drive / p.inspection_cost());
    let (epsilon, epsilon_clamped) = harmonic_update(state.epsilon, drive / p.lazy_saving());
    StepOutcome {
        state: StrategyState {
            gamma,
            epsilon,
            caught_last_cycle: state.caught_last_cycle,
        },
        gamma_clamped,
        epsilon_clamped,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCondition {
    /// γ ε ρ (β−1) has fallen to W.
    ProductAtBoundary,
    GammaZero,
    EpsilonZero,
}

pub fn stop_condition(gamma: f64, epsilon: f64, p: &GameParams) -> Option<StopCondition> {
    if gamma <= STOP_TOLERANCE {
        Some(StopCondition::GammaZero)
    } else if epsilon <= STOP_TOLERANCE {
        Some(StopCondition::EpsilonZero)
    } else if p.escalation(gamma, epsilon) - p.reward() <= STOP_TOLERANCE {
        Some(StopCondition::ProductAtBoundary)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    ClosedForm,
    Empirical,
}

/// Where a closed-form trajectory starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// The one-shot equilibrium.
    Equilibrium,
    /// (gamma0, epsilon0) from the parameters.
    Given,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecursionForm {
    Harmonic,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Proposed,
    Bcl,
    Sgf,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Proposed, Mechanism::Sgf, Mechanism::Bcl];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Proposed => "proposed",
            Mechanism::Bcl => "bcl",
            Mechanism::Sgf => "sgf",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOptions {
    pub mode: SimulationMode,
    pub cycles: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub init: InitRule,
    pub recursion: RecursionForm,
    /// MAE delivered in honest cycles, cycled if shorter than the run.
    pub honest_mae: Vec<f64>,
    /// MAE delivered in lazy cycles; must not beat the usability threshold.
    pub lazy_mae: f64,
}

pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_HONEST_MAE: f64 = 23.0;
pub const DEFAULT_LAZY_MAE: f64 = 30.0;

impl SimulationOptions {
    pub fn closed_form(cycles: usize) -> Self {
        Self {
            mode: SimulationMode::ClosedForm,
            cycles,
            seed: 0,
            learning_rate: DEFAULT_LEARNING_RATE,
            init: InitRule::Equilibrium,
            recursion: RecursionForm::Harmonic,
            honest_mae: vec![DEFAULT_HONEST_MAE],
            lazy_mae: DEFAULT_LAZY_MAE,
        }
    }

    pub fn empirical(cycles: usize, seed: u64) -> Self {
        Self {
            mode: SimulationMode::Empirical,
            seed,
            ..Self::closed_form(cycles)
        }
    }

    fn validate(&self, econ: &EconParams) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::Config("cycles must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.honest_mae.is_empty() || self.honest_mae.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Config("honest MAE series must be non-empty, finite and ≥ 0".into()));
        }
        if econ.usable(self.lazy_mae) {
            return Err(Error::Config(format!(
                "lazy_mae must be ≥ the usability threshold {} so lazy cycles earn no profit, got {}",
                econ.mae_threshold, self.lazy_mae
            )));
        }
        Ok(())
    }

    fn honest_mae_at(&self, cycle_index: usize) -> f64 {
        self.honest_mae[cycle_index % self.honest_mae.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub mp_action: MpAction,
    pub ma_action: MaAction,
    pub u_mp: f64,
    pub u_ma: f64,
    pub cum_u_mp: f64,
    pub cum_u_ma: f64,
    pub gamma_clamped: bool,
    pub epsilon_clamped: bool,
    /// Payoffs of this cycle came from the repeat-offence table.
    pub escalated: bool,
    /// (γ, ε) are frozen because a stop condition already held.
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameTrajectory {
    pub mode: SimulationMode,
    pub records: Vec<CycleRecord>,
    /// First cycle (1-based) at which a stop condition held.
    pub stop_cycle: Option<usize>,
    pub stop: Option<StopCondition>,
}

impl GameTrajectory {
    pub fn last(&self) -> &CycleRecord {
        self.records.last().expect("trajectories have at least one cycle")
    }

    pub fn final_gamma(&self) -> f64 {
        self.last().gamma
    }

    pub fn final_epsilon(&self) -> f64 {
        self.last().epsilon
    }

    pub fn cumulative_ma(&self) -> f64 {
        self.last().cum_u_ma
    }

    pub fn cumulative_mp(&self) -> f64 {
        self.last().cum_u_mp
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cycle,gamma,epsilon,mp_action,ma_action,u_mp,u_ma,cum_u_mp,cum_u_ma,clamped_flags")?;
        for r in &self.records {
            let flags = match (r.gamma_clamped, r.epsilon_clamped) {
                (false, false) => "none",
                (true, false) => "gamma",
                (false, true) => "epsilon",
                (true, true) => "gamma|epsilon",
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.cycle,
                r.gamma,
                r.epsilon,
                r.mp_action.name(),
                r.ma_action.name(),
                r.u_mp,
                r.u_ma,
                r.cum_u_mp,
                r.cum_u_ma,
                flags
            )?;
        }
        Ok(())
    }
}

struct Ledger {
    records: Vec<CycleRecord>,
    cum_mp: f64,
    cum_ma: f64,
}

impl Ledger {
    fn push(&mut self, state: StrategyState, flags: (bool, bool), acts: (MpAction, MaAction), cell: PayoffCell, frozen: bool) {
        self.cum_mp += cell.u_mp;
        self.cum_ma += cell.u_ma;
        self.records.push(CycleRecord {
            cycle: self.records.len() + 1,
            gamma: state.gamma,
            epsilon: state.epsilon,
            mp_action: acts.0,
            ma_action: acts.1,
            u_mp: cell.u_mp,
            u_ma: cell.u_ma,
            cum_u_mp: self.cum_mp,
            cum_u_ma: self.cum_ma,
            gamma_clamped: flags.0,
            epsilon_clamped: flags.1,
            escalated: state.caught_last_cycle,
            frozen,
        });
    }
}

fn draw_actions<R: Rng>(rng: &mut R, gamma: f64, epsilon: f64) -> (MpAction, MaAction) {
    let mp = if rng.random::<f64>() < gamma {
        MpAction::Sloth
    } else {
        MpAction::Honest
    };
    let ma = if rng.random::<f64>() < epsilon {
        MaAction::Inspect
    } else {
        MaAction::Trust
    };
    (mp, ma)
}

fn caught(acts: (MpAction, MaAction)) -> bool {
    acts == (MpAction::Sloth, MaAction::Inspect)
}

pub fn simulate_repeated_game(p: &GameParams, opts: &SimulationOptions) -> Result<GameTrajectory> {
    p.validate()?;
    opts.validate(&p.econ)?;
    match opts.mode {
        SimulationMode::ClosedForm => simulate_closed_form(p, opts, false),
        SimulationMode::Empirical => simulate_empirical(p, opts),
    }
}

fn initial_state(p: &GameParams, init: InitRule) -> Result<(StrategyState, (bool, bool))> {
    Ok(match init {
        InitRule::Equilibrium => {
            let eq = one_shot_equilibrium(p)?;
            (StrategyState::new(eq.gamma, eq.epsilon), (eq.gamma_clamped, eq.epsilon_clamped))
        }
        InitRule::Given => (StrategyState::new(p.gamma0, p.epsilon0), (false, false)),
    })
}

/// `constant` keeps the starting strategies for the whole run.
fn simulate_closed_form(p: &GameParams, opts: &SimulationOptions, constant: bool) -> Result<GameTrajectory> {
    let mut rng = rng_from(opts.seed, &[stream::GAME]);
    let (mut state, mut flags) = initial_state(p, opts.init)?;
    let mut ledger = Ledger {
        records: Vec::with_capacity(opts.cycles),
        cum_mp: 0.0,
        cum_ma: 0.0,
    };
    let mut stop_cycle = None;
    let mut stop = None;
    for i in 0..opts.cycles {
        if stop.is_none() {
            if let Some(c) = stop_condition(state.gamma, state.epsilon, p) {
                stop = Some(c);
                stop_cycle = Some(i + 1);
            }
        }
        let frozen = constant || stop.is_some();
        let acts = draw_actions(&mut rng, state.gamma, state.epsilon);
        let table = PayoffTable::build(p, opts.honest_mae_at(i), state.caught_last_cycle);
        ledger.push(state, flags, acts, table.cell(acts.1, acts.0), frozen && stop_cycle != Some(i + 1));
        let next_caught = caught(acts);
        if frozen {
            flags = (false, false);
        } else {
            let step = match opts.recursion {
                RecursionForm::Harmonic => harmonic_step(state, p),
                RecursionForm::Direct => recursion_step(state, p),
            };
            state = step.state;
            flags = (step.gamma_clamped, step.epsilon_clamped);
        }
        state.caught_last_cycle = next_caught;
    }
    Ok(GameTrajectory {
        mode: SimulationMode::ClosedForm,
        records: ledger.records,
        stop_cycle,
        stop,
    })
}

fn probability_from_logs(log_a: f64, log_b: f64) -> f64 {
    // P(a) = w_a / (w_a + w_b) computed from log-weights.
    if log_a == f64::NEG_INFINITY {
        return 0.0;
    }
    if log_b == f64::NEG_INFINITY {
        return 1.0;
    }
    1.0 / (1.0 + (log_b - log_a).exp())
}

fn normalizer((lo, hi): (f64, f64)) -> Option<(f64, f64)> {
    (hi > lo).then_some((lo, hi - lo))
}

/// Multiplicative weights for both agents. Payoffs are rescaled by the
/// agent's payoff range in the base table of the current cycle, so the
/// escalated table shows up as payoffs outside [0, 1].
fn simulate_empirical(p: &GameParams, opts: &SimulationOptions) -> Result<GameTrajectory> {
    let mut rng = rng_from(opts.seed, &[stream::GAME]);
    let eta = opts.learning_rate;
    let mut log_w_mp = [p.gamma0.ln(), (1.0 - p.gamma0).ln()];
    let mut log_w_ma = [p.epsilon0.ln(), (1.0 - p.epsilon0).ln()];
    let mut ledger = Ledger {
        records: Vec::with_capacity(opts.cycles),
        cum_mp: 0.0,
        cum_ma: 0.0,
    };
    let mut caught_last = false;
    for i in 0..opts.cycles {
        let state = StrategyState {
            gamma: probability_from_logs(log_w_mp[0], log_w_mp[1]),
            epsilon: probability_from_logs(log_w_ma[0], log_w_ma[1]),
            caught_last_cycle: caught_last,
        };
        let acts = draw_actions(&mut rng, state.gamma, state.epsilon);
        let mae = opts.honest_mae_at(i);
        let table = PayoffTable::build(p, mae, caught_last);
        let base = PayoffTable::build(p, mae, false);
        ledger.push(state, (false, false), acts, table.cell(acts.1, acts.0), false);

        if let Some((lo, span)) = normalizer(base.mp_range()) {
            for (k, a) in MpAction::ALL.into_iter().enumerate() {
                log_w_mp[k] += eta * (table.cell(acts.1, a).u_mp - lo) / span;
            }
        }
        if let Some((lo, span)) = normalizer(base.ma_range()) {
            for (k, a) in MaAction::ALL.into_iter().enumerate() {
                log_w_ma[k] += eta * (table.cell(a, acts.0).u_ma - lo) / span;
            }
        }
        // Keep log-weights near zero; only their difference matters.
        for w in [&mut log_w_mp, &mut log_w_ma] {
            let m = w[0].max(w[1]);
            if m.is_finite() {
                w[0] -= m;
                w[1] -= m;
            }
        }
        caught_last = caught(acts);
    }
    Ok(GameTrajectory {
        mode: SimulationMode::Empirical,
        records: ledger.records,
        stop_cycle: None,
        stop: None,
    })
}

/// Parameters a mechanism actually plays with.
pub fn mechanism_params(kind: Mechanism, p: &GameParams) -> GameParams {
    match kind {
        Mechanism::Proposed => p.clone(),
        Mechanism::Sgf => GameParams { beta: 1.0, ..p.clone() },
        Mechanism::Bcl => GameParams {
            rho: 0.0,
            beta: 1.0,
            ..p.clone()
        },
    }
}

/// Run a mechanism. BCL never fines, so inspection is pure cost. SGF keeps
/// the base table forever; in closed form it plays the constant one-shot
/// equilibrium.
pub fn run_mechanism(kind: Mechanism, p: &GameParams, opts: &SimulationOptions) -> Result<GameTrajectory> {
    let q = mechanism_params(kind, p);
    q.validate()?;
    opts.validate(&q.econ)?;
    match (kind, opts.mode) {
        (_, SimulationMode::Empirical) => simulate_empirical(&q, opts),
        (Mechanism::Sgf, SimulationMode::ClosedForm) => simulate_closed_form(&q, opts, true),
        (_, SimulationMode::ClosedForm) => simulate_closed_form(&q, opts, false),
    }
}

pub fn run_baseline(kind: Mechanism, p: &GameParams, opts: &SimulationOptions) -> Result<GameTrajectory> {
    if kind == Mechanism::Proposed {
        return Err(Error::Config("baseline must be bcl or sgf".into()));
    }
    run_mechanism(kind, p, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicReport {
    pub max_gamma_residual: f64,
    pub max_epsilon_residual: f64,
    pub checked_steps: usize,
    /// Cycles i whose step i → i+1 was skipped (clamped, frozen or at zero).
    pub excluded_steps: Vec<usize>,
}

pub fn harmonic_identity_check(traj: &GameTrajectory, p: &GameParams) -> HarmonicReport {
    let mut report = HarmonicReport {
        max_gamma_residual: 0.0,
        max_epsilon_residual: 0.0,
        checked_steps: 0,
        excluded_steps: Vec::new(),
    };
    for pair in traj.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let skip = b.gamma_clamped
            || b.epsilon_clamped
            || b.frozen
            || traj.stop_cycle.is_some_and(|s| a.cycle >= s)
            || a.gamma == 0.0
            || a.epsilon == 0.0
            || b.gamma == 0.0
            || b.epsilon == 0.0;
        if skip {
            report.excluded_steps.push(a.cycle);
            continue;
        }
        let drive = p.escalation(a.gamma, a.epsilon) - p.reward();
        let rg = 1.0 / b.gamma - 1.0 / a.gamma - drive / p.inspection_cost();
        let re = 1.0 / b.epsilon - 1.0 / a.epsilon - drive / p.lazy_saving();
        report.max_gamma_residual = report.max_gamma_residual.max(rg.abs());
        report.max_epsilon_residual = report.max_epsilon_residual.max(re.abs());
        report.checked_steps += 1;
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundClause {
    pub clause: String,
    pub bound: f64,
    pub observed: f64,
    pub margin: f64,
    pub pass: bool,
    pub applicable: bool,
    pub note: String,
}

impl BoundClause {
    fn not_applicable(clause: &str, note: impl Into<String>) -> Self {
        Self {
            clause: clause.into(),
            bound: f64::NAN,
            observed: f64::NAN,
            margin: f64::NAN,
            pass: true,
            applicable: false,
            note: note.into(),
        }
    }

    fn upper(clause: &str, bound: f64, observed: f64, note: impl Into<String>) -> Self {
        let slack = if bound.is_finite() {
            BOUND_RELATIVE_SLACK * bound.abs().max(f64::MIN_POSITIVE)
        } else {
            0.0
        };
        Self {
            clause: clause.into(),
            bound,
            observed,
            margin: bound - observed,
            pass: observed <= bound + slack,
            applicable: true,
            note: note.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Cycle at which the bounds are evaluated.
    pub i_star: usize,
    pub converged: bool,
    pub stop: Option<StopCondition>,
    pub clauses: Vec<BoundClause>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.pass)
    }

    pub fn clause(&self, name: &str) -> Option<&BoundClause> {
        self.clauses.iter().find(|c| c.clause == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn premise_holds(r: &CycleRecord, p: &GameParams) -> bool {
    p.escalation(r.gamma, r.epsilon) > p.reward() && r.gamma > 0.0 && r.epsilon > 0.0
}

/// Check the decreasing-product property and the upper bounds on the
/// finalized γ and ε.
pub fn check_bounds(traj: &GameTrajectory, p: &GameParams) -> BoundReport {
    const NAMES: [&str; 4] = ["product_monotone", "product_boundary", "gamma_bound", "epsilon_bound"];
    let n = traj.records.len();
    let i_star = traj.stop_cycle.unwrap_or(n);
    let mut report = BoundReport {
        i_star,
        converged: traj.stop_cycle.is_some(),
        stop: traj.stop,
        clauses: Vec::new(),
    };
    if n < 2 {
        report.clauses = NAMES
            .iter()
            .map(|c| BoundClause::not_applicable(c, "trajectory shorter than 2 cycles"))
            .collect();
        return report;
    }
    let rec = |cycle: usize| &traj.records[cycle - 1];
    let last = traj.last();

    // Product γ_i ε_i strictly decreasing over every step taken while the premise held.
    let rises: Vec<f64> = (1..i_star.min(n))
        .filter(|&i| premise_holds(rec(i), p))
        .map(|i| rec(i + 1).gamma * rec(i + 1).epsilon - rec(i).gamma * rec(i).epsilon)
        .collect();
    report.clauses.push(if rises.is_empty() {
        BoundClause::not_applicable(NAMES[0], "premise never held before the stop cycle")
    } else {
        let worst = rises.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        BoundClause {
            clause: NAMES[0].into(),
            bound: 0.0,
            observed: worst,
            margin: -worst,
            pass: worst < 0.0,
            applicable: true,
            note: format!("largest one-step change of gamma*epsilon over {} steps", rises.len()),
        }
    });

    report.clauses.push(if report.converged {
        // The run stops once rho (beta - 1) gamma epsilon - W is within the
        // stop tolerance, so the boundary carries the same tolerance.
        BoundClause::upper(
            NAMES[1],
            (p.reward() + STOP_TOLERANCE) / (p.rho * (p.beta - 1.0)),
            last.gamma * last.epsilon,
            "(W + stop tolerance) / (rho (beta - 1))",
        )
    } else {
        BoundClause::not_applicable(NAMES[1], "no stop condition reached")
    });

    let prev = (i_star >= 2).then(|| rec(i_star - 1));
    match prev.filter(|r| premise_holds(r, p)) {
        None => {
            let why = if i_star < 2 {
                "stop condition held from the first cycle"
            } else {
                "premise fails at cycle i* - 1"
            };
            report.clauses.push(BoundClause::not_applicable(NAMES[2], why));
            report.clauses.push(BoundClause::not_applicable(NAMES[3], why));
        }
        Some(r) => {
            let steps = (i_star - 1) as f64;
            let drive = p.escalation(r.gamma, r.epsilon) - p.reward();
            let first = rec(1);
            let bound = |v1: f64, divisor: f64| {
                let denom = 1.0 / v1 + steps * drive / divisor;
                if denom > 0.0 {
                    1.0 / denom
                } else {
                    f64::INFINITY
                }
            };
            let note = match traj.stop {
                Some(StopCondition::GammaZero) => "gamma reached zero",
                Some(StopCondition::EpsilonZero) => "epsilon reached zero",
                Some(StopCondition::ProductAtBoundary) => "product reached the boundary",
                None => "not converged; evaluated at the final cycle",
            };
            report.clauses.push(BoundClause::upper(
                NAMES[2],
                bound(first.gamma, p.inspection_cost()),
                last.gamma,
                note,
            ));
            report.clauses.push(BoundClause::upper(
                NAMES[3],
                bound(first.epsilon, p.lazy_saving()),
                last.epsilon,
                note,
            ));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economics::{CommParams, ComputeParams};
    use proptest::prelude::*;

    fn default_costs() -> CostBreakdown {
        CostBreakdown::compute(&CommParams::default(), &ComputeParams::default(), &EconParams::default()).unwrap()
    }

    fn params(rho: f64, beta: f64) -> GameParams {
        GameParams::new(EconParams::default(), default_costs(), rho, beta, 0.5, 0.5).unwrap()
    }

    /// Costs with a chosen lazy saving H − H′.
    fn params_with(s: f64, saving: f64, rho: f64, beta: f64, g0: f64, e0: f64) -> GameParams {
        let econ = EconParams {
            inspection_cost: s,
            ..Default::default()
        };
        let costs = CostBreakdown {
            e_t: 0.0,
            e_p: 0.0,
            e_r: 0.0,
            h: saving + 1.0,
            h_prime: 1.0,
        };
        GameParams::new(econ, costs, rho, beta, g0, e0).unwrap()
    }

    #[test]
    fn equilibrium_defaults() {
        let p = params(250.0, 11.0);
        let eq = one_shot_equilibrium(&p).unwrap();
        assert_eq!(eq.gamma, 0.75);
        assert!(!eq.gamma_clamped && !eq.epsilon_clamped);
        assert!((eq.epsilon - p.lazy_saving() / 400.0).abs() < 1e-18);
        assert!((eq.epsilon - 0.6325 / 400.0).abs() < 1e-5);
    }

    #[test]
    fn equilibrium_vanishes_with_huge_penalty() {
        let eq = one_shot_equilibrium(&params(1e12, 11.0)).unwrap();
        assert!(eq.gamma < 1e-9 && eq.epsilon < 1e-9);
    }

    #[test]
    fn equilibrium_clamps_when_inspection_is_expensive() {
        let p = params_with(1000.0, 0.6, 100.0, 2.0, 0.5, 0.5);
        let eq = one_shot_equilibrium(&p).unwrap();
        assert_eq!(eq.gamma, 1.0);
        assert!(eq.gamma_clamped);
    }

    #[test]
    fn ma_is_indifferent_at_equilibrium() {
        let p = params(250.0, 11.0);
        let eq = one_shot_equilibrium(&p).unwrap();
        assert!(ma_indifference_residual(&p, 23.0, eq.gamma).abs() < 1e-9);
    }

    #[test]
    fn mp_indifference_needs_inspection_rate_over_penalty() {
        let p = params(250.0, 11.0);
        assert!(mp_indifference_residual(&p, mp_indifferent_inspection(&p)).abs() < 1e-12);
        // At ε* the MP still prefers slacking by (H − H′) W / (ρ + W).
        let eq = one_shot_equilibrium(&p).unwrap();
        let expected = p.lazy_saving() * 150.0 / 400.0;
        assert!((mp_indifference_residual(&p, eq.epsilon) - expected).abs() < 1e-12);
    }

    #[test]
    fn direct_step_example() {
        let p = params_with(100.0, 0.6, 250.0, 11.0, 0.5, 0.5);
        let out = recursion_step(StrategyState::new(0.4, 0.5), &p);
        assert!((out.state.gamma - 100.0 / 750.0).abs() < 1e-15);
        assert!((out.state.epsilon - 0.6 / 750.0).abs() < 1e-15);
    }

    #[test]
    fn direct_step_fixed_point_returns_first_cycle_value() {
        let p = params(250.0, 11.0);
        let gamma = 0.6;
        let eps = p.reward() / (gamma * p.rho * (p.beta - 1.0));
        let out = recursion_step(StrategyState::new(gamma, eps), &p);
        let g1 = p.inspection_cost() / (p.rho + p.reward());
        assert!((out.state.gamma - g1).abs() < 1e-12);
    }

    #[test]
    fn direct_step_without_escalation_is_memoryless() {
        let p = params_with(100.0, 0.6, 250.0, 1.0, 0.5, 0.5);
        for (g, e) in [(0.1, 0.9), (0.7, 0.2), (1.0, 1.0)] {
            let out = recursion_step(StrategyState::new(g, e), &p);
            assert!((out.state.gamma - 100.0 / 250.0).abs() < 1e-15);
        }
    }

    #[test]
    fn harmonic_step_at_fixed_point_keeps_values() {
        let p = params(250.0, 11.0);
        let gamma = 0.6;
        let eps = p.reward() / (gamma * p.rho * (p.beta - 1.0));
        let out = harmonic_step(StrategyState::new(gamma, eps), &p);
        assert_eq!(out.state.gamma, gamma);
        assert_eq!(out.state.epsilon, eps);
    }

    #[test]
    fn harmonic_and_direct_agree_from_equilibrium_gamma() {
        let p = params_with(100.0, 3.0, 250.0, 11.0, 0.5, 0.5);
        let g1 = 100.0 / 400.0;
        let e1 = 3.0 / 400.0;
        let s = StrategyState::new(g1, e1);
        let a = recursion_step(s, &p).state;
        let b = harmonic_step(s, &p).state;
        assert!((a.gamma - b.gamma).abs() < 1e-14);
        assert!((a.epsilon - b.epsilon).abs() < 1e-14);
    }

    #[test]
    fn closed_form_from_equilibrium_with_default_costs_is_stationary() {
        let p = params(250.0, 11.0);
        let t = simulate_repeated_game(&p, &SimulationOptions::closed_form(20)).unwrap();
        assert_eq!(t.stop_cycle, Some(1));
        assert!(t.records.iter().all(|r| r.gamma == 0.75));
    }

    #[test]
    fn closed_form_trajectory_obeys_harmonic_identity() {
        let p = params_with(3000.0, 3000.0, 250.0, 11.0, 0.9, 0.9);
        let opts = SimulationOptions {
            init: InitRule::Given,
            ..SimulationOptions::closed_form(200)
        };
        let t = simulate_repeated_game(&p, &opts).unwrap();
        let h = harmonic_identity_check(&t, &p);
        assert!(h.checked_steps >= 3, "{h:?}");
        assert!(h.max_gamma_residual < 1e-10 && h.max_epsilon_residual < 1e-10, "{h:?}");
    }

    #[test]
    fn clamped_step_is_excluded() {
        // a = 0.81 * 2500 = 2025 > W, and S / (a + rho) = 3000 / 2275 > 1.
        let p = params_with(3000.0, 100.0, 250.0, 11.0, 0.9, 0.9);
        let opts = SimulationOptions {
            init: InitRule::Given,
            recursion: RecursionForm::Direct,
            ..SimulationOptions::closed_form(10)
        };
        let t = simulate_repeated_game(&p, &opts).unwrap();
        assert!(t.records[1].gamma_clamped);
        assert_eq!(t.records[1].gamma, 1.0);
        let h = harmonic_identity_check(&t, &p);
        assert!(h.excluded_steps.contains(&1));
    }

    #[test]
    fn stationarity_freezes_strategies() {
        let p = params(250.0, 11.0);
        let opts = SimulationOptions {
            init: InitRule::Given,
            ..SimulationOptions::closed_form(50)
        };
        let t = simulate_repeated_game(&p, &opts).unwrap();
        let s = t.stop_cycle.unwrap();
        let frozen = &t.records[s - 1];
        for r in &t.records[s..] {
            assert_eq!((r.gamma, r.epsilon), (frozen.gamma, frozen.epsilon));
        }
    }

    #[test]
    fn defaults_converge_below_boundary_product() {
        let p = params(250.0, 11.0);
        assert!((p.boundary_product() - 0.06).abs() < 1e-15);
        let opts = SimulationOptions {
            init: InitRule::Given,
            ..SimulationOptions::closed_form(100)
        };
        let t = simulate_repeated_game(&p, &opts).unwrap();
        assert!(t.final_gamma() * t.final_epsilon() <= 0.06);
        let b = check_bounds(&t, &p);
        assert!(b.passed(), "{b:?}");
    }

    #[test]
    fn product_decreases_with_small_escalation() {
        let p = params_with(100.0, 100.0, 250.0, 2.0, 0.95, 0.95);
        let opts = SimulationOptions {
            init: InitRule::Given,
            ..SimulationOptions::closed_form(100)
        };
        let t = simulate_repeated_game(&p, &opts).unwrap();
        let b = check_bounds(&t, &p);
        let c = b.clause("product_monotone").unwrap();
        assert!(c.applicable && c.pass, "{b:?}");
        assert!(b.passed(), "{b:?}");
    }

    #[test]
    fn multi_step_bound_is_strict() {
        let p = params_with(3000.0, 3000.0, 250.0, 11.0, 0.9, 0.9);
        let opts = SimulationOptions {
            init: InitRule::Given,
            ..SimulationOptions::closed_form(200)
        };
        let t = simulate_repeated_game(&p, &opts).unwrap();
        let b = check_bounds(&t, &p);
        assert!(b.i_star > 2, "{b:?}");
        let g = b.clause("gamma_bound").unwrap();
        assert!(g.applicable && g.pass && g.margin > 0.0, "{b:?}");
        assert!(b.passed());
    }

    #[test]
    fn gamma_at_zero_reports_second_condition() {
        let p = params(250.0, 11.0);
        let t = GameTrajectory {
            mode: SimulationMode::ClosedForm,
            records: simulate_repeated_game(&GameParams { gamma0: 0.0, ..p.clone() }, &SimulationOptions {
                init: InitRule::Given,
                ..SimulationOptions::closed_form(5)
            })
            .unwrap()
            .records,
            stop_cycle: Some(1),
            stop: Some(StopCondition::GammaZero),
        };
        let b = check_bounds(&t, &p);
        assert_eq!(b.stop, Some(StopCondition::GammaZero));
        assert!(b.passed());
    }

    #[test]
    fn short_trajectory_is_not_applicable() {
        let p = params(250.0, 11.0);
        let t = simulate_repeated_game(&p, &SimulationOptions::closed_form(1)).unwrap();
        let b = check_bounds(&t, &p);
        assert!(b.clauses.iter().all(|c| !c.applicable));
    }

    #[test]
    fn empirical_is_deterministic_per_seed() {
        let p = params(250.0, 11.0);
        let a = simulate_repeated_game(&p, &SimulationOptions::empirical(200, 3)).unwrap();
        let b = simulate_repeated_game(&p, &SimulationOptions::empirical(200, 3)).unwrap();
        let c = simulate_repeated_game(&p, &SimulationOptions::empirical(200, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn honest_provider_makes_inspection_fade() {
        let p = GameParams {
            gamma0: 0.0,
            ..params(250.0, 11.0)
        };
        let t = simulate_repeated_game(&p, &SimulationOptions::empirical(500, 1)).unwrap();
        assert!(t.records.iter().all(|r| r.mp_action == MpAction::Honest && r.gamma == 0.0));
        assert!(t.final_epsilon() < 1e-3, "{}", t.final_epsilon());
        let eps: Vec<f64> = t.records.iter().map(|r| r.epsilon).collect();
        assert!(eps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bcl_drives_sloth_to_one() {
        let p = params(250.0, 11.0);
        for seed in 0..5 {
            let t = run_baseline(Mechanism::Bcl, &p, &SimulationOptions::empirical(500, seed)).unwrap();
            assert!(t.final_gamma() > 0.99, "seed {seed}: {}", t.final_gamma());
        }
    }

    #[test]
    fn sgf_closed_form_is_constant_equilibrium() {
        let p = params(250.0, 11.0);
        let opts = SimulationOptions {
            init: InitRule::Equilibrium,
            ..SimulationOptions::closed_form(30)
        };
        let t = run_baseline(Mechanism::Sgf, &p, &opts).unwrap();
        let eq = one_shot_equilibrium(&p).unwrap();
        assert!(t.records.iter().all(|r| r.gamma == eq.gamma && r.epsilon == eq.epsilon));
        assert!(t.records.iter().all(|r| !r.escalated || r.u_ma == -50.0 || r.ma_action == MaAction::Trust
            || r.mp_action == MpAction::Honest));
    }

    #[test]
    fn escalated_cycle_follows_detection() {
        let p = params(250.0, 11.0);
        let t = simulate_repeated_game(&p, &SimulationOptions::empirical(300, 9)).unwrap();
        for w in t.records.windows(2) {
            let detected = w[0].mp_action == MpAction::Sloth && w[0].ma_action == MaAction::Inspect;
            assert_eq!(w[1].escalated, detected);
            if w[1].escalated && w[1].mp_action == MpAction::Sloth && w[1].ma_action == MaAction::Inspect {
                assert_eq!(w[1].u_ma, 2450.0);
            }
        }
    }

    #[test]
    fn larger_escalation_lowers_converged_sloth() {
        let mean = |beta: f64| {
            let p = params(250.0, beta);
            (0..10)
                .map(|s| simulate_repeated_game(&p, &SimulationOptions::empirical(500, s)).unwrap().final_gamma())
                .sum::<f64>()
                / 10.0
        };
        assert!(mean(11.0) <= mean(2.0));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = params(250.0, 11.0);
        assert!(GameParams { beta: 0.5, ..p.clone() }.validate().unwrap_err().to_string().contains("beta must be ≥ 1"));
        assert!(GameParams { gamma0: 1.5, ..p.clone() }.validate().is_err());
        let opts = SimulationOptions {
            lazy_mae: 20.0,
            ..SimulationOptions::empirical(10, 0)
        };
        assert!(simulate_repeated_game(&p, &opts).is_err());
    }

    #[test]
    fn csv_has_header_and_one_row_per_cycle() {
        let p = params(250.0, 11.0);
        let t = simulate_repeated_game(&p, &SimulationOptions::empirical(7, 0)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.starts_with("cycle,gamma,epsilon,mp_action,ma_action,u_mp,u_ma,cum_u_mp,cum_u_ma,clamped_flags"));
    }

    proptest! {
        #[test]
        fn indifference_holds_for_unclamped_equilibria(rho in 10.0f64..2000.0, w in 10.0f64..500.0, s in 1.0f64..300.0) {
            let econ = EconParams { reward: w, inspection_cost: s, ..Default::default() };
            let p = GameParams::new(econ, default_costs(), rho, 11.0, 0.5, 0.5).unwrap();
            let eq = one_shot_equilibrium(&p).unwrap();
            prop_assume!(!eq.gamma_clamped);
            prop_assert!(ma_indifference_residual(&p, 23.0, eq.gamma).abs() < 1e-9);
        }

        #[test]
        fn closed_form_harmonic_residuals_are_tiny(rho in 50.0f64..500.0, beta in 1.5f64..12.0,
                                                   g0 in 0.05f64..1.0, e0 in 0.05f64..1.0,
                                                   s in 50.0f64..3000.0, saving in 0.5f64..3000.0) {
            let p = params_with(s, saving, rho, beta, g0, e0);
            let opts = SimulationOptions { init: InitRule::Given, ..SimulationOptions::closed_form(100) };
            let t = simulate_repeated_game(&p, &opts).unwrap();
            let h = harmonic_identity_check(&t, &p);
            prop_assert!(h.max_gamma_residual < 1e-10 && h.max_epsilon_residual < 1e-10, "{:?}", h);
            let b = check_bounds(&t, &p);
            prop_assert!(b.passed(), "{:?}", b);
        }

        #[test]
        fn frozen_trajectories_stay_frozen(rho in 50.0f64..500.0, beta in 1.0f64..12.0, g0 in 0.0f64..1.0, e0 in 0.0f64..1.0) {
            let p = GameParams { rho, beta, gamma0: g0, epsilon0: e0, ..params(250.0, 11.0) };
            let opts = SimulationOptions { init: InitRule::Given, ..SimulationOptions::closed_form(60) };
            let t = simulate_repeated_game(&p, &opts).unwrap();
            if let Some(s) = t.stop_cycle {
                let f = &t.records[s - 1];
                for r in &t.records[s..] {
                    prop_assert_eq!((r.gamma, r.epsilon), (f.gamma, f.epsilon));
                }
            }
        }
    }
}
