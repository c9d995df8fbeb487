//! Desk-scale simulator of a vertical-federated-learning pipeline for
//! traffic state estimation.
//!
//! The pieces, bottom up:
//!
//! * [`data`] synthesizes a road network's flow/density series, derives noisy
//!   and lazy provider views, and persists datasets as CSV.
//! * [`nn`] is a small dense-network substrate with exact backprop.
//! * [`mi`] trains Donsker–Varadhan statistics networks and scores providers,
//!   optionally split between provider and label owner.
//! * [`selection`] turns score tables into provider selections.
//! * [`vfl`] runs split training between the label owner and the selected
//!   providers, with a centralized twin for equivalence checks.
//! * [`economics`] and [`game`] model the supervision game and the
//!   penalty-escalation mechanism.
//! * [`config`] and [`experiment`] drive whole scenarios from a TOML file.

pub mod config;
pub mod data;
pub mod economics;
pub mod error;
pub mod experiment;
pub mod game;
pub mod mi;
pub mod nn;
pub mod rng;
pub mod selection;
pub mod vfl;

pub use config::ExperimentConfig;
pub use data::{LazyMode, LazyPolicy, NoiseProfile, RoadNetwork, Segment, TrafficDataset};
pub use economics::{CommParams, ComputeParams, CostBreakdown, EconParams};
pub use error::{Error, Result};
pub use game::{GameParams, GameTrajectory, StrategyState};
pub use mi::{MiModel, MiSampleBatch};
pub use nn::{Activation, DenseNet, Gradients, Matrix, Optimizer};
pub use selection::{ScoreTable, SelectionMatrix};
pub use vfl::TrainReport;
