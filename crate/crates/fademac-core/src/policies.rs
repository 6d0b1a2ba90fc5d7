//! Low-complexity causal policies: the equal-energy baseline, the one-shot
//! threshold policy from the linearized value recursion, and the
//! certainty-equivalent controller built on the offline solver.

use crate::error::{Error, Result};
use crate::fading::FadingDistribution;
use crate::model::{CausalPolicy, ChannelRealization, EnergyState, SystemParams};
use crate::offline::{iterative_water_fill, IwfConfig};

/// Splits each budget evenly over the horizon regardless of channel state.
/// Optimal when the channel is time-invariant.
#[derive(Debug, Clone)]
pub struct EqualEnergyPolicy {
    per_slot: Vec<f64>,
}

pub fn equal_energy_policy(params: &SystemParams) -> EqualEnergyPolicy {
    EqualEnergyPolicy {
        per_slot: params
            .energy_budgets
            .iter()
            .map(|e| e / params.horizon as f64)
            .collect(),
    }
}

impl CausalPolicy for EqualEnergyPolicy {
    fn name(&self) -> &'static str {
        "equal_energy"
    }

    fn allocate(
        &self,
        _params: &SystemParams,
        _slot: usize,
        state: &EnergyState,
        _gains: &[f64],
    ) -> Result<Vec<f64>> {
        // clamp to the level so the last slot absorbs accumulated round-off
        Ok(self
            .per_slot
            .iter()
            .zip(&state.levels)
            .map(|(&e, &level)| e.min(level))
            .collect())
    }
}

/// Backward threshold sequences of the one-shot policy.
///
/// `nu[i][j]` holds the threshold with `j+1` slots gone, i.e. `nu[i][0]`
/// is the coefficient valuing energy at the first slot and `nu[i][T]` is
/// the zero boundary past the deadline. A user transmits at slot `t`
/// (0-based) iff its gain strictly exceeds `nu[i][t + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneShotThresholds {
    nu: Vec<Vec<f64>>,
    horizon: usize,
}

impl OneShotThresholds {
    /// Full threshold sequence of a user, highest (earliest) first; the
    /// last entry is the zero boundary.
    pub fn sequence(&self, user: usize) -> &[f64] {
        &self.nu[user]
    }

    /// Threshold a gain must beat for the user to fire at 0-based `slot`.
    #[inline]
    pub fn firing_threshold(&self, user: usize, slot: usize) -> f64 {
        self.nu[user][slot + 1]
    }

    pub fn n_users(&self) -> usize {
        self.nu.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Builds the thresholds by the backward recursion
/// `nu_prev = E[max(H, nu)]`, seeded with the mean gain one step before
/// the deadline and zero past it.
pub fn one_shot_thresholds(params: &SystemParams) -> Result<OneShotThresholds> {
    params.validate()?;
    let t_slots = params.horizon;
    let mut nu = Vec::with_capacity(params.n_users);
    for dist in &params.fading {
        let mut seq = vec![0.0; t_slots + 1];
        // seq[t_slots] stays 0: past the deadline energy is worthless
        if t_slots >= 1 {
            seq[t_slots - 1] = dist.mean();
        }
        for j in (0..t_slots.saturating_sub(1)).rev() {
            seq[j] = dist.expected_max_with(seq[j + 1])?;
        }
        nu.push(seq);
    }
    Ok(OneShotThresholds {
        nu,
        horizon: t_slots,
    })
}

/// Each user dumps its whole remaining budget into the first slot whose
/// gain strictly beats the threshold, so a user's allocation has at most
/// one nonzero entry.
#[derive(Debug, Clone)]
pub struct OneShotPolicy {
    thresholds: OneShotThresholds,
}

pub fn one_shot_policy(
    thresholds: OneShotThresholds,
    params: &SystemParams,
) -> Result<OneShotPolicy> {
    if thresholds.n_users() != params.n_users || thresholds.horizon() != params.horizon {
        return Err(Error::DimensionMismatch(format!(
            "thresholds are for {} users x {} slots, system is {} x {}",
            thresholds.n_users(),
            thresholds.horizon(),
            params.n_users,
            params.horizon
        )));
    }
    Ok(OneShotPolicy { thresholds })
}

impl CausalPolicy for OneShotPolicy {
    fn name(&self) -> &'static str {
        "one_shot"
    }

    fn allocate(
        &self,
        _params: &SystemParams,
        slot: usize,
        state: &EnergyState,
        gains: &[f64],
    ) -> Result<Vec<f64>> {
        Ok(state
            .levels
            .iter()
            .enumerate()
            .map(|(i, &level)| {
                if gains[i] > self.thresholds.firing_threshold(i, slot) {
                    level
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// Certainty-equivalent controller: at each slot the unknown future gains
/// are replaced by their means, the resulting deterministic problem over
/// the remaining horizon is solved by iterative water-filling with the
/// current energy levels as budgets, and only the first-slot allocation is
/// executed.
#[derive(Debug, Clone)]
pub struct CecPolicy {
    iwf: IwfConfig,
    mean_gains: Vec<f64>,
}

pub fn cec_policy(params: &SystemParams, iwf: IwfConfig) -> CecPolicy {
    CecPolicy {
        iwf,
        mean_gains: params.fading.iter().map(FadingDistribution::mean).collect(),
    }
}

impl CausalPolicy for CecPolicy {
    fn name(&self) -> &'static str {
        "cec"
    }

    fn allocate(
        &self,
        params: &SystemParams,
        slot: usize,
        state: &EnergyState,
        gains: &[f64],
    ) -> Result<Vec<f64>> {
        let remaining = params.horizon - slot;
        // synthetic horizon: the observed gains now, mean gains afterwards
        let mut rows = Vec::with_capacity(remaining);
        rows.push(gains.to_vec());
        for _ in 1..remaining {
            rows.push(self.mean_gains.clone());
        }
        let synthetic = ChannelRealization::from_rows(&rows)?;
        let sub_params = SystemParams {
            horizon: remaining,
            energy_budgets: state.levels.clone(),
            ..params.clone()
        };
        let solution = iterative_water_fill(&sub_params, &synthetic, self.iwf)?;
        Ok(solution.allocation.row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{execute_causal, AllocationMatrix, ENERGY_TOL};
    use crate::offline::OfflineIwf;
    use crate::model::OfflinePolicy;

    fn exp_params(n: usize, t: usize, budget: f64) -> SystemParams {
        SystemParams::symmetric(
            n,
            t,
            1.0,
            1.0,
            1.0,
            budget,
            FadingDistribution::exponential(1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn equal_energy_splits_exactly() {
        let params = exp_params(1, 5, 5.0);
        let policy = equal_energy_policy(&params);
        let real = ChannelRealization::new(5, 1, vec![1.0; 5]).unwrap();
        let alloc = execute_causal(&params, &real, &policy).unwrap();
        for t in 0..5 {
            assert!((alloc.energy(t, 0) - 1.0).abs() <= ENERGY_TOL);
        }
        assert!((alloc.column_sum(0) - 5.0).abs() <= ENERGY_TOL);
        // zero budget allocates nothing
        let p0 = exp_params(1, 3, 0.0);
        let real0 = ChannelRealization::new(3, 1, vec![1.0; 3]).unwrap();
        let alloc0 = execute_causal(&p0, &real0, &equal_energy_policy(&p0)).unwrap();
        assert_eq!(alloc0.column_sum(0), 0.0);
    }

    #[test]
    fn equal_energy_matches_offline_on_constant_channel() {
        // time-invariant channel: the equal split is the offline optimum
        let params = SystemParams::symmetric(
            2,
            4,
            1.0,
            1.0,
            1.0,
            2.0,
            FadingDistribution::deterministic(1.5).unwrap(),
        )
        .unwrap();
        let real = ChannelRealization::new(4, 2, vec![1.5; 8]).unwrap();
        let equal = execute_causal(&params, &real, &equal_energy_policy(&params)).unwrap();
        let offline = OfflineIwf::default().allocate_all(&params, &real).unwrap();
        let eq_rate = crate::model::realized_throughput(&params, &real, &equal).unwrap();
        let off_rate = crate::model::realized_throughput(&params, &real, &offline).unwrap();
        assert!(
            (eq_rate - off_rate).abs() <= 1e-9 * off_rate.max(1.0),
            "equal {eq_rate} vs offline {off_rate}"
        );
    }

    #[test]
    fn threshold_sequences_match_closed_form() {
        // T = 1: [mean, 0]; always transmit at the only slot
        let p1 = exp_params(1, 1, 1.0);
        let th1 = one_shot_thresholds(&p1).unwrap();
        assert_eq!(th1.sequence(0), &[1.0, 0.0]);
        // T = 2: nu_1 = 1 + e^{-1}
        let p2 = exp_params(1, 2, 1.0);
        let th2 = one_shot_thresholds(&p2).unwrap();
        let want1 = 1.0 + (-1.0f64).exp();
        assert!((th2.sequence(0)[0] - want1).abs() < 1e-12);
        assert_eq!(th2.sequence(0)[1], 1.0);
        assert_eq!(th2.sequence(0)[2], 0.0);
        // T = 3: nu_1 = nu_2 + e^{-nu_2} with nu_2 = 1 + e^{-1}
        let p3 = exp_params(1, 3, 1.0);
        let th3 = one_shot_thresholds(&p3).unwrap();
        let want0 = want1 + (-want1).exp();
        assert!((th3.sequence(0)[0] - want0).abs() < 1e-12);
    }

    #[test]
    fn thresholds_decrease_toward_deadline() {
        let dists = [
            FadingDistribution::exponential(0.5).unwrap(),
            FadingDistribution::exponential(1.0).unwrap(),
            FadingDistribution::exponential(2.0).unwrap(),
            FadingDistribution::deterministic(1.3).unwrap(),
        ];
        for dist in dists {
            let params =
                SystemParams::symmetric(1, 6, 1.0, 1.0, 1.0, 1.0, dist.clone()).unwrap();
            let th = one_shot_thresholds(&params).unwrap();
            let seq = th.sequence(0);
            for w in seq.windows(2) {
                assert!(w[0] >= w[1] - 1e-12, "thresholds increased: {seq:?}");
            }
            assert!((seq[params.horizon - 1] - dist.mean()).abs() < 1e-12);
            assert_eq!(seq[params.horizon], 0.0);
        }
    }

    #[test]
    fn one_shot_fires_on_first_crossing() {
        let params = exp_params(1, 2, 1.0);
        let th = one_shot_thresholds(&params).unwrap();
        let policy = one_shot_policy(th, &params).unwrap();
        // 1.5 beats the slot-1 firing threshold of 1.0: spend everything now
        let real = ChannelRealization::new(2, 1, vec![1.5, 0.3]).unwrap();
        let alloc = execute_causal(&params, &real, &policy).unwrap();
        assert_eq!(alloc.energy(0, 0), 1.0);
        assert_eq!(alloc.energy(1, 0), 0.0);
        // 0.5 defers; 0.3 beats the zero boundary at the deadline
        let real2 = ChannelRealization::new(2, 1, vec![0.5, 0.3]).unwrap();
        let alloc2 = execute_causal(&params, &real2, &policy).unwrap();
        assert_eq!(alloc2.energy(0, 0), 0.0);
        assert_eq!(alloc2.energy(1, 0), 1.0);
        // a zero-gain deadline slot does not transmit (strict inequality)
        let real3 = ChannelRealization::new(2, 1, vec![0.5, 0.0]).unwrap();
        let alloc3 = execute_causal(&params, &real3, &policy).unwrap();
        assert_eq!(alloc3.column_sum(0), 0.0);
    }

    #[test]
    fn one_shot_single_spike_property() {
        let params = exp_params(3, 5, 2.0);
        let th = one_shot_thresholds(&params).unwrap();
        let policy = one_shot_policy(th, &params).unwrap();
        for k in 0..50u64 {
            let mut gains = Vec::new();
            for t in 0..5u64 {
                for i in 0..3u64 {
                    let u = crate::rng::substream_uniform(61, k, t, i);
                    gains.push(params.fading[i as usize].sample(u).unwrap());
                }
            }
            let real = ChannelRealization::new(5, 3, gains).unwrap();
            let alloc = execute_causal(&params, &real, &policy).unwrap();
            for i in 0..3 {
                let nonzero: Vec<f64> = (0..5)
                    .map(|t| alloc.energy(t, i))
                    .filter(|e| *e > 0.0)
                    .collect();
                assert!(nonzero.len() <= 1, "user {i} fired twice: {nonzero:?}");
                if let Some(&e) = nonzero.first() {
                    assert!((e - 2.0).abs() <= ENERGY_TOL, "partial spike {e}");
                }
            }
            alloc.validate_against(&params, false).unwrap();
        }
    }

    #[test]
    fn cec_spends_everything_at_deadline() {
        let params = exp_params(2, 3, 1.0);
        let policy = cec_policy(&params, IwfConfig::default());
        let state = EnergyState::new(vec![0.4, 0.9]).unwrap();
        let e = policy
            .allocate(&params, 2, &state, &[0.7, 1.1])
            .unwrap();
        assert!((e[0] - 0.4).abs() <= 1e-9);
        assert!((e[1] - 0.9).abs() <= 1e-9);
    }

    #[test]
    fn cec_splits_evenly_when_observation_equals_mean() {
        // single user, two slots, observed gain = mean gain: water-fill
        // over equal ratios splits the budget in half
        let params = SystemParams::symmetric(
            1,
            2,
            1.0,
            1.0,
            1.0,
            1.0,
            FadingDistribution::deterministic(0.8).unwrap(),
        )
        .unwrap();
        let policy = cec_policy(&params, IwfConfig::default());
        let state = EnergyState::initial(&params);
        let e = policy.allocate(&params, 0, &state, &[0.8]).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-9, "got {e:?}");
    }

    #[test]
    fn cec_front_loads_on_strong_observation() {
        // observed h = 10 vs mean 1: water-fill over ratios [0.1, 1]
        // puts level at 1.05, so 0.95 J goes to the first slot
        let params = exp_params(1, 2, 1.0);
        let policy = cec_policy(&params, IwfConfig::default());
        let state = EnergyState::initial(&params);
        let e = policy.allocate(&params, 0, &state, &[10.0]).unwrap();
        assert!((e[0] - 0.95).abs() < 1e-9, "got {e:?}");
        assert!(e[0] > 0.5);
    }

    #[test]
    fn cec_trajectory_matches_offline_on_deterministic_channel() {
        // every observation equals the mean, so the certainty problem at
        // slot 1 is the true offline problem and later slots re-derive its
        // tail: the full trajectory reproduces the offline allocation
        let params = SystemParams::new(
            2,
            4,
            1.0,
            1.0,
            1.0,
            vec![2.0, 0.5],
            vec![
                FadingDistribution::deterministic(1.5).unwrap(),
                FadingDistribution::deterministic(0.6).unwrap(),
            ],
        )
        .unwrap();
        let mut gains = Vec::new();
        for _ in 0..4 {
            gains.extend_from_slice(&[1.5, 0.6]);
        }
        let real = ChannelRealization::new(4, 2, gains).unwrap();
        let cec = cec_policy(&params, IwfConfig::default());
        let cec_alloc = execute_causal(&params, &real, &cec).unwrap();
        let off_alloc = OfflineIwf::default().allocate_all(&params, &real).unwrap();
        let mut max_diff = 0.0f64;
        for t in 0..4 {
            for i in 0..2 {
                max_diff =
                    max_diff.max((cec_alloc.energy(t, i) - off_alloc.energy(t, i)).abs());
            }
        }
        assert!(max_diff < 1e-6, "CEC deviates from offline by {max_diff}");
    }

    #[test]
    fn policies_stay_budget_feasible() {
        let params = exp_params(2, 5, 3.0);
        let th = one_shot_thresholds(&params).unwrap();
        let policies: Vec<Box<dyn CausalPolicy>> = vec![
            Box::new(equal_energy_policy(&params)),
            Box::new(one_shot_policy(th, &params).unwrap()),
            Box::new(cec_policy(&params, IwfConfig::default())),
        ];
        for k in 0..25u64 {
            let mut gains = Vec::new();
            for t in 0..5u64 {
                for i in 0..2u64 {
                    let u = crate::rng::substream_uniform(77, k, t, i);
                    gains.push(params.fading[i as usize].sample(u).unwrap());
                }
            }
            let real = ChannelRealization::new(5, 2, gains).unwrap();
            for policy in &policies {
                let alloc: AllocationMatrix =
                    execute_causal(&params, &real, policy.as_ref()).unwrap();
                alloc.validate_against(&params, false).unwrap();
            }
        }
    }
}
