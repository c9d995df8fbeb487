//! Cost and utility model of one provider (MP) and the authority (MA) over a
//! settlement cycle: radio uplink, collection and processing energy, and the
//! payoff entries consumed by the supervision game.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit of the distance fed to the `128.1 + 37.5 log10(d)` path-loss law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnit {
    Km,
    M,
}

/// Unit of `D` in the collection-energy ratio `p * D / R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataUnit {
    Bits,
    Bytes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommParams {
    pub bandwidth_hz: f64,
    pub power_w: f64,
    pub distance_m: f64,
    pub noise_density_dbm_per_hz: f64,
    pub data_size_bytes: f64,
    /// Vehicle collection interval Δt.
    pub collect_interval_s: f64,
    /// TSE sampling interval ΔT.
    pub sample_interval_s: f64,
    pub path_loss_distance: DistanceUnit,
    pub rate_data_unit: DataUnit,
}

impl Default for CommParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 10e6,
            power_w: 0.1,
            distance_m: 300.0,
            noise_density_dbm_per_hz: -174.0,
            data_size_bytes: 80.0,
            collect_interval_s: 0.4,
            sample_interval_s: 10.0,
            path_loss_distance: DistanceUnit::Km,
            rate_data_unit: DataUnit::Bits,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeParams {
    pub capacitance: f64,
    pub cycles_per_byte: f64,
    pub cpu_hz: f64,
    /// Energy of one sub-model run, J.
    pub run_energy_j: f64,
}

impl Default for ComputeParams {
    fn default() -> Self {
        Self {
            capacitance: 1e-26,
            cycles_per_byte: 1.5e4,
            cpu_hz: 1e9,
            run_energy_j: 7.2e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconParams {
    /// Energy to currency coefficient τ_e.
    pub tau_e: f64,
    /// TSE inputs per settlement cycle.
    pub inputs_per_cycle: f64,
    /// Accuracy to currency coefficient τ_a.
    pub tau_a: f64,
    /// Usability threshold x̃ on MAE.
    pub mae_threshold: f64,
    /// Reward W paid per cycle.
    pub reward: f64,
    /// Inspection cost S.
    pub inspection_cost: f64,
    pub providers: usize,
}

impl Default for EconParams {
    fn default() -> Self {
        Self {
            tau_e: 2.44e-4,
            inputs_per_cycle: 8640.0,
            tau_a: 1000.0,
            mae_threshold: 25.0,
            reward: 150.0,
            inspection_cost: 300.0,
            providers: 5,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be > 0 (finite), got {v}")))
    }
}

impl CommParams {
    pub fn validate(&self) -> Result<()> {
        positive("comm.bandwidth_hz", self.bandwidth_hz)?;
        positive("comm.power_w", self.power_w)?;
        positive("comm.distance_m", self.distance_m)?;
        positive("comm.data_size_bytes", self.data_size_bytes)?;
        positive("comm.collect_interval_s", self.collect_interval_s)?;
        positive("comm.sample_interval_s", self.sample_interval_s)?;
        if !self.noise_density_dbm_per_hz.is_finite() {
            return Err(Error::Config("comm.noise_density_dbm_per_hz must be finite".into()));
        }
        Ok(())
    }

    /// Noise power over the band, W.
    pub fn noise_power_w(&self) -> f64 {
        10f64.powf((self.noise_density_dbm_per_hz - 30.0) / 10.0) * self.bandwidth_hz
    }

    fn rate_data_size(&self) -> f64 {
        match self.rate_data_unit {
            DataUnit::Bits => self.data_size_bytes * 8.0,
            DataUnit::Bytes => self.data_size_bytes,
        }
    }
}

impl ComputeParams {
    pub fn validate(&self) -> Result<()> {
        positive("compute.capacitance", self.capacitance)?;
        positive("compute.cycles_per_byte", self.cycles_per_byte)?;
        positive("compute.cpu_hz", self.cpu_hz)?;
        positive("compute.run_energy_j", self.run_energy_j)
    }
}

impl EconParams {
    pub fn validate(&self) -> Result<()> {
        positive("econ.tau_e", self.tau_e)?;
        positive("econ.inputs_per_cycle", self.inputs_per_cycle)?;
        positive("econ.tau_a", self.tau_a)?;
        positive("econ.mae_threshold", self.mae_threshold)?;
        positive("econ.reward", self.reward)?;
        positive("econ.inspection_cost", self.inspection_cost)?;
        if self.providers == 0 {
            return Err(Error::Config("econ.providers must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Usability indicator: 1 when the MAE beats the threshold.
    pub fn usable(&self, mae: f64) -> bool {
        mae < self.mae_threshold
    }

    /// MA profit share `τ_a 𝕀(x < x̃)(x̃ − x) / K`.
    pub fn profit(&self, mae: f64) -> f64 {
        if self.usable(mae) {
            self.tau_a * (self.mae_threshold - mae) / self.providers as f64
        } else {
            0.0
        }
    }
}

/// Shannon rate of the vehicle uplink at distance `d_m` metres, bits/s.
pub fn uplink_rate(comm: &CommParams, d_m: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::Domain(format!("distance must be > 0 m, got {d_m}")));
    }
    let d = match comm.path_loss_distance {
        DistanceUnit::Km => d_m / 1000.0,
        DistanceUnit::M => d_m,
    };
    let path_loss_db = 128.1 + 37.5 * d.log10();
    let gain = 10f64.powf(-path_loss_db / 10.0);
    let snr = comm.power_w * gain / comm.noise_power_w();
    Ok(comm.bandwidth_hz * (1.0 + snr).log2())
}

/// Collection energy per TSE input for a given uplink rate, J.
pub fn collection_cost_at_rate(comm: &CommParams, rate: f64) -> f64 {
    comm.sample_interval_s * comm.power_w * comm.rate_data_size() / (comm.collect_interval_s * rate)
}

/// Collection energy E_t at the configured distance, J.
pub fn collection_cost(comm: &CommParams) -> Result<f64> {
    Ok(collection_cost_at_rate(comm, uplink_rate(comm, comm.distance_m)?))
}

/// Processing energy E_p, J.
pub fn processing_cost(comm: &CommParams, compute: &ComputeParams) -> f64 {
    comm.sample_interval_s / comm.collect_interval_s
        * compute.capacitance
        * compute.cycles_per_byte
        * comm.data_size_bytes
        * compute.cpu_hz
        * compute.cpu_hz
}

/// Per-cycle energy and currency costs of one MP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub e_t: f64,
    pub e_p: f64,
    pub e_r: f64,
    /// Honest cost H = τ_e 𝕋 (E_t + E_p + E_r).
    pub h: f64,
    /// Lazy cost H′ = τ_e 𝕋 E_r.
    pub h_prime: f64,
}

impl CostBreakdown {
    pub fn compute(comm: &CommParams, compute: &ComputeParams, econ: &EconParams) -> Result<Self> {
        let e_t = collection_cost(comm)?;
        let e_p = processing_cost(comm, compute);
        let e_r = compute.run_energy_j;
        let scale = econ.tau_e * econ.inputs_per_cycle;
        Ok(Self {
            e_t,
            e_p,
            e_r,
            h: scale * (e_t + e_p + e_r),
            h_prime: scale * e_r,
        })
    }

    /// Saving from laziness, H − H′ = τ_e 𝕋 (E_t + E_p).
    pub fn lazy_saving(&self, econ: &EconParams) -> f64 {
        econ.tau_e * econ.inputs_per_cycle * (self.e_t + self.e_p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpOutcome {
    Honest,
    Caught,
    UncaughtLazy,
    CaughtRepeat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaOutcome {
    TrustHonest,
    InspectCaught,
    UncaughtLazy,
    InspectHonest,
    InspectCaughtRepeat,
}

pub fn mp_utility(outcome: MpOutcome, econ: &EconParams, costs: &CostBreakdown, rho: f64, beta: f64) -> f64 {
    let w = econ.reward;
    match outcome {
        MpOutcome::Honest => w - costs.h,
        MpOutcome::Caught => w - costs.h_prime - rho,
        MpOutcome::UncaughtLazy => w - costs.h_prime,
        MpOutcome::CaughtRepeat => w - costs.h_prime - beta * rho,
    }
}

/// MA utility. `mae` is the accuracy delivered in that cycle; lazy outcomes
/// use π′ = 0 regardless of it.
pub fn ma_utility(outcome: MaOutcome, econ: &EconParams, mae: f64, rho: f64, beta: f64) -> f64 {
    let (w, s) = (econ.reward, econ.inspection_cost);
    let pi = econ.profit(mae);
    match outcome {
        MaOutcome::TrustHonest => pi - w,
        MaOutcome::InspectCaught => rho - s,
        MaOutcome::UncaughtLazy => -w,
        MaOutcome::InspectHonest => pi - w - s,
        MaOutcome::InspectCaughtRepeat => beta * rho - s,
    }
}
