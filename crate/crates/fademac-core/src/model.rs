//! System model: static parameters, the sum-throughput reward, energy-queue
//! dynamics, and the policy contracts shared by every allocation scheme.
//!
//! All types are immutable values after construction and every operation is
//! a pure function, so they can be evaluated from many threads at once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fading::FadingDistribution;

/// Absolute tolerance for energy comparisons, in joules. All experiments
/// run with O(1)-O(100) joule budgets, so this sits far below solver
/// tolerances while still absorbing round-off.
pub const ENERGY_TOL: f64 = 1e-9;

/// Static description of one problem instance: `N` users transmitting to a
/// single base station over `T` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n_users: usize,
    pub horizon: usize,
    pub bandwidth_hz: f64,
    pub slot_seconds: f64,
    pub noise_watts: f64,
    /// Per-user energy budgets `E_i` in joules.
    pub energy_budgets: Vec<f64>,
    /// Per-user channel-gain distributions.
    pub fading: Vec<FadingDistribution>,
}

impl SystemParams {
    pub fn new(
        n_users: usize,
        horizon: usize,
        bandwidth_hz: f64,
        slot_seconds: f64,
        noise_watts: f64,
        energy_budgets: Vec<f64>,
        fading: Vec<FadingDistribution>,
    ) -> Result<Self> {
        let params = Self {
            n_users,
            horizon,
            bandwidth_hz,
            slot_seconds,
            noise_watts,
            energy_budgets,
            fading,
        };
        params.validate()?;
        Ok(params)
    }

    /// Convenience constructor for the symmetric setups used throughout the
    /// experiments: every user gets the same budget and distribution.
    pub fn symmetric(
        n_users: usize,
        horizon: usize,
        bandwidth_hz: f64,
        slot_seconds: f64,
        noise_watts: f64,
        budget: f64,
        fading: FadingDistribution,
    ) -> Result<Self> {
        Self::new(
            n_users,
            horizon,
            bandwidth_hz,
            slot_seconds,
            noise_watts,
            vec![budget; n_users],
            vec![fading; n_users],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users < 1 {
            return Err(Error::InvalidArgument("n_users must be >= 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        for (name, v) in [
            ("bandwidth_hz", self.bandwidth_hz),
            ("slot_seconds", self.slot_seconds),
            ("noise_watts", self.noise_watts),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if self.energy_budgets.len() != self.n_users {
            return Err(Error::DimensionMismatch(format!(
                "expected {} energy budgets, got {}",
                self.n_users,
                self.energy_budgets.len()
            )));
        }
        if self.fading.len() != self.n_users {
            return Err(Error::DimensionMismatch(format!(
                "expected {} fading distributions, got {}",
                self.n_users,
                self.fading.len()
            )));
        }
        for (i, &b) in self.energy_budgets.iter().enumerate() {
            if !b.is_finite() || b < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "energy budget of user {i} must be non-negative, got {b}"
                )));
            }
        }
        Ok(())
    }

    /// `τ·N_o`, the noise energy per slot appearing in the rate expression.
    #[inline]
    pub fn tau_no(&self) -> f64 {
        self.slot_seconds * self.noise_watts
    }

    /// `τ·W`, the bits-per-log2 scale of the rate expression.
    #[inline]
    pub fn tau_w(&self) -> f64 {
        self.slot_seconds * self.bandwidth_hz
    }
}

/// The `T×N` matrix of channel power gains for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    n_slots: usize,
    n_users: usize,
    gains: Vec<f64>, // row-major [slot * n_users + user]
}

impl ChannelRealization {
    pub fn new(n_slots: usize, n_users: usize, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != n_slots * n_users {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{} = {} gains, got {}",
                n_slots,
                n_users,
                n_slots * n_users,
                gains.len()
            )));
        }
        if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::InvalidArgument(
                "channel gains must be non-negative and finite".into(),
            ));
        }
        Ok(Self {
            n_slots,
            n_users,
            gains,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_slots = rows.len();
        let n_users = rows.first().map_or(0, Vec::len);
        let mut gains = Vec::with_capacity(n_slots * n_users);
        for row in rows {
            if row.len() != n_users {
                return Err(Error::DimensionMismatch("ragged gain rows".into()));
            }
            gains.extend_from_slice(row);
        }
        Self::new(n_slots, n_users, gains)
    }

    #[inline]
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    /// Gains of all users at (0-based) slot `t`.
    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.gains[t * self.n_users..(t + 1) * self.n_users]
    }

    #[inline]
    pub fn gain(&self, t: usize, user: usize) -> f64 {
        self.gains[t * self.n_users + user]
    }

    pub fn matches(&self, params: &SystemParams) -> Result<()> {
        if self.n_slots != params.horizon || self.n_users != params.n_users {
            return Err(Error::DimensionMismatch(format!(
                "realization is {}x{}, system is {}x{}",
                self.n_slots, self.n_users, params.horizon, params.n_users
            )));
        }
        Ok(())
    }
}

/// The `T×N` matrix of consumed energies produced by a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationMatrix {
    n_slots: usize,
    n_users: usize,
    energies: Vec<f64>, // row-major [slot * n_users + user]
}

impl AllocationMatrix {
    pub fn new(n_slots: usize, n_users: usize, energies: Vec<f64>) -> Result<Self> {
        if energies.len() != n_slots * n_users {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{} = {} energies, got {}",
                n_slots,
                n_users,
                n_slots * n_users,
                energies.len()
            )));
        }
        if energies.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::InvalidArgument(
                "allocated energies must be non-negative and finite".into(),
            ));
        }
        Ok(Self {
            n_slots,
            n_users,
            energies,
        })
    }

    pub fn zeros(n_slots: usize, n_users: usize) -> Self {
        Self {
            n_slots,
            n_users,
            energies: vec![0.0; n_slots * n_users],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_slots = rows.len();
        let n_users = rows.first().map_or(0, Vec::len);
        let mut energies = Vec::with_capacity(n_slots * n_users);
        for row in rows {
            if row.len() != n_users {
                return Err(Error::DimensionMismatch("ragged energy rows".into()));
            }
            energies.extend_from_slice(row);
        }
        Self::new(n_slots, n_users, energies)
    }

    #[inline]
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.energies[t * self.n_users..(t + 1) * self.n_users]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.energies[t * self.n_users..(t + 1) * self.n_users]
    }

    #[inline]
    pub fn energy(&self, t: usize, user: usize) -> f64 {
        self.energies[t * self.n_users + user]
    }

    pub fn set(&mut self, t: usize, user: usize, e: f64) {
        self.energies[t * self.n_users + user] = e;
    }

    /// Total energy spent by `user` over all slots.
    pub fn column_sum(&self, user: usize) -> f64 {
        (0..self.n_slots).map(|t| self.energy(t, user)).sum()
    }

    /// Feasibility audit: entries non-negative (by construction) and column
    /// sums within tolerance of the budgets. With `exact_budget` the sums
    /// must meet the budgets, not just stay below them.
    pub fn validate_against(&self, params: &SystemParams, exact_budget: bool) -> Result<()> {
        if self.n_slots != params.horizon || self.n_users != params.n_users {
            return Err(Error::DimensionMismatch(format!(
                "allocation is {}x{}, system is {}x{}",
                self.n_slots, self.n_users, params.horizon, params.n_users
            )));
        }
        for i in 0..self.n_users {
            let total = self.column_sum(i);
            let budget = params.energy_budgets[i];
            if total > budget + ENERGY_TOL {
                return Err(Error::Overdraft {
                    user: i,
                    requested: total,
                    available: budget,
                });
            }
            if exact_budget && (total - budget).abs() > ENERGY_TOL {
                return Err(Error::Inconsistency(format!(
                    "user {i} spent {total} J of a {budget} J budget that should be exhausted"
                )));
            }
        }
        Ok(())
    }
}

/// Remaining energy of each user at the start of a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyState {
    pub levels: Vec<f64>,
}

impl EnergyState {
    /// Initial state: every queue holds its full budget.
    pub fn initial(params: &SystemParams) -> Self {
        Self {
            levels: params.energy_budgets.clone(),
        }
    }

    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument(
                "energy levels must be non-negative and finite".into(),
            ));
        }
        Ok(Self { levels })
    }
}

fn check_lengths(what: &str, len: usize, n_users: usize) -> Result<()> {
    if len != n_users {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {len} entries, expected {n_users}"
        )));
    }
    Ok(())
}

fn check_non_negative(what: &str, values: &[f64]) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{what}[{i}] must be non-negative and finite, got {v}"
            )));
        }
    }
    Ok(())
}

/// Maximum achievable sum-throughput of the MAC in one slot, in bits:
/// `τ·W·log2(1 + Σ_i h_i e_i / (τ·N_o))`.
pub fn sum_throughput(params: &SystemParams, energies: &[f64], gains: &[f64]) -> Result<f64> {
    check_lengths("energies", energies.len(), params.n_users)?;
    check_lengths("gains", gains.len(), params.n_users)?;
    check_non_negative("energies", energies)?;
    check_non_negative("gains", gains)?;
    Ok(slot_rate_bits(params, energies, gains))
}

/// Same slot rate without argument validation, for hot loops.
#[inline]
pub(crate) fn slot_rate_bits(params: &SystemParams, energies: &[f64], gains: &[f64]) -> f64 {
    let s: f64 = gains.iter().zip(energies).map(|(h, e)| h * e).sum();
    params.tau_w() * (1.0 + s / params.tau_no()).log2()
}

/// Slot rate in nats, used only for the iterative water-filling objective
/// trace and the convergence-gap bound (which is stated in nats).
#[inline]
pub(crate) fn slot_rate_nats(params: &SystemParams, energies: &[f64], gains: &[f64]) -> f64 {
    let s: f64 = gains.iter().zip(energies).map(|(h, e)| h * e).sum();
    params.tau_w() * (1.0 + s / params.tau_no()).ln()
}

/// Energy-queue update: subtract the spent energy from every level,
/// clamping away round-off no larger than [`ENERGY_TOL`]. Spending more
/// than a level plus tolerance is an overdraft error naming the user.
pub fn advance_energy(state: &EnergyState, spent: &[f64]) -> Result<EnergyState> {
    check_lengths("spent", spent.len(), state.levels.len())?;
    let mut next = Vec::with_capacity(state.levels.len());
    for (i, (&level, &e)) in state.levels.iter().zip(spent).enumerate() {
        if !e.is_finite() || e < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "spent[{i}] must be non-negative and finite, got {e}"
            )));
        }
        if e > level + ENERGY_TOL {
            return Err(Error::Overdraft {
                user: i,
                requested: e,
                available: level,
            });
        }
        next.push((level - e).clamp(0.0, level));
    }
    Ok(EnergyState { levels: next })
}

/// Total throughput of an allocation over a full realization, in bits.
pub fn realized_throughput(
    params: &SystemParams,
    realization: &ChannelRealization,
    alloc: &AllocationMatrix,
) -> Result<f64> {
    realization.matches(params)?;
    if alloc.n_slots() != params.horizon || alloc.n_users() != params.n_users {
        return Err(Error::DimensionMismatch(format!(
            "allocation is {}x{}, system is {}x{}",
            alloc.n_slots(),
            alloc.n_users(),
            params.horizon,
            params.n_users
        )));
    }
    Ok((0..params.horizon)
        .map(|t| slot_rate_bits(params, alloc.row(t), realization.row(t)))
        .sum())
}

/// Same total in nats, for comparisons against the nats-denominated bound.
pub(crate) fn realized_throughput_nats(
    params: &SystemParams,
    realization: &ChannelRealization,
    alloc: &AllocationMatrix,
) -> f64 {
    (0..params.horizon)
        .map(|t| slot_rate_nats(params, alloc.row(t), realization.row(t)))
        .sum()
}

/// A policy that sees only the current slot's gains. Implementations carry
/// any precomputed per-episode state (value tables, thresholds) but must
/// never look at gains of later slots.
pub trait CausalPolicy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Energy vector to spend at (0-based) `slot`, elementwise within
    /// `[0, state.levels]`.
    fn allocate(
        &self,
        params: &SystemParams,
        slot: usize,
        state: &EnergyState,
        gains: &[f64],
    ) -> Result<Vec<f64>>;
}

/// A policy with full non-causal knowledge of the realization.
pub trait OfflinePolicy: Send + Sync {
    fn name(&self) -> &'static str;

    fn allocate_all(
        &self,
        params: &SystemParams,
        realization: &ChannelRealization,
    ) -> Result<AllocationMatrix>;
}

/// Runs a causal policy slot-by-slot through [`advance_energy`] and records
/// the executed allocation. The recorded row is the effectively subtracted
/// energy, so the result always satisfies the budget feasibility invariant.
pub fn execute_causal(
    params: &SystemParams,
    realization: &ChannelRealization,
    policy: &dyn CausalPolicy,
) -> Result<AllocationMatrix> {
    realization.matches(params)?;
    let mut state = EnergyState::initial(params);
    let mut alloc = AllocationMatrix::zeros(params.horizon, params.n_users);
    for t in 0..params.horizon {
        let requested = policy.allocate(params, t, &state, realization.row(t))?;
        check_lengths("policy allocation", requested.len(), params.n_users)?;
        let next = advance_energy(&state, &requested)?;
        for i in 0..params.n_users {
            // record what actually left the queue (clamps round-off)
            alloc.set(t, i, state.levels[i] - next.levels[i]);
        }
        state = next;
    }
    Ok(alloc)
}
