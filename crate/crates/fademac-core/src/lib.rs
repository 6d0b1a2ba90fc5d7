//! Energy allocation for delay-constrained traffic over fading
//! multiple-access channels.
//!
//! `N` users share a fading MAC and must spend fixed per-user energy
//! budgets within a hard deadline of `T` slots to maximize expected
//! sum-throughput. The crate provides:
//!
//! - the system model and reward function ([`model`]),
//! - channel-gain distributions with sampling and quadrature ([`fading`]),
//! - the optimal offline allocation via iterative water-filling, with a
//!   KKT verifier ([`offline`]),
//! - the optimal online policy via finite-horizon DP on a discretized
//!   energy grid ([`dp`]),
//! - equal-energy, one-shot threshold and certainty-equivalent policies
//!   ([`policies`]),
//! - a seeded Monte Carlo engine with common random numbers ([`sim`]).

pub mod dp;
pub mod error;
pub mod fading;
pub mod model;
pub mod offline;
pub mod policies;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use fading::{FadingDistribution, FadingKind};
pub use model::{
    advance_energy, execute_causal, realized_throughput, sum_throughput, AllocationMatrix,
    CausalPolicy, ChannelRealization, EnergyState, OfflinePolicy, SystemParams, ENERGY_TOL,
};
pub use offline::{
    iterative_water_fill, single_iteration_gap_check, verify_kkt, water_fill, GapCheck, IwfConfig,
    IwfSolution, KktReport, OfflineIwf, WaterFillProblem,
};
pub use dp::{build_value_tables, dp_policy, DpConfig, DpPolicy, ValueTable};
pub use policies::{
    cec_policy, equal_energy_policy, one_shot_policy, one_shot_thresholds, CecPolicy,
    EqualEnergyPolicy, OneShotPolicy, OneShotThresholds,
};
pub use sim::{
    generate_realization, generate_realizations, run_experiment, ExperimentResult, ExperimentSpec,
    PolicyKind, PolicyStats, SolverSettings, Sweep, SweepPointResult,
};
