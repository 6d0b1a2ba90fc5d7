//! Optimal offline allocation with full non-causal channel knowledge:
//! single-user water-filling, multi-user iterative water-filling, a
//! KKT-residual verifier for the optimality conditions, and the
//! single-sweep convergence-gap check.

use crate::error::{Error, Result};
use crate::model::{
    realized_throughput_nats, AllocationMatrix, ChannelRealization, OfflinePolicy, SystemParams,
    ENERGY_TOL,
};

/// One user's water-filling problem: per-slot interference-plus-noise to
/// gain ratios (`+inf` marks a zero-gain slot) and the energy budget.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterFillProblem {
    pub noise_ratios: Vec<f64>,
    pub budget: f64,
}

/// Water-fills a budget over slots: `e_t = (level - γ_t)^+` with the level
/// chosen so the allocation sums to the budget exactly.
///
/// The level solves the monotone piecewise-linear budget equation by a
/// sort-and-scan over the finite ratios, which gives the root in closed
/// form. Zero-gain slots (`γ_t = +inf`) receive nothing.
pub fn water_fill(problem: &WaterFillProblem) -> Result<(Vec<f64>, f64)> {
    let budget = problem.budget;
    if !budget.is_finite() || budget < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "budget must be non-negative and finite, got {budget}"
        )));
    }
    for (t, &g) in problem.noise_ratios.iter().enumerate() {
        if g.is_nan() || g <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise ratio at slot {t} must be positive (or +inf), got {g}"
            )));
        }
    }
    let n = problem.noise_ratios.len();
    let mut finite: Vec<f64> = problem
        .noise_ratios
        .iter()
        .copied()
        .filter(|g| g.is_finite())
        .collect();
    if finite.is_empty() {
        if budget > ENERGY_TOL {
            return Err(Error::Infeasible(
                "positive budget with zero channel gain in every slot".into(),
            ));
        }
        return Ok((vec![0.0; n], f64::INFINITY));
    }
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if budget == 0.0 {
        return Ok((vec![0.0; n], finite[0]));
    }
    // scan: with the m cheapest slots active the level is
    // (budget + Σ_{j<m} γ_j) / m; stop once it no longer reaches slot m+1
    let mut prefix = 0.0;
    let mut level = finite[0] + budget;
    for m in 1..=finite.len() {
        prefix += finite[m - 1];
        level = (budget + prefix) / m as f64;
        if m == finite.len() || level <= finite[m] {
            break;
        }
    }
    let allocation = problem
        .noise_ratios
        .iter()
        .map(|&g| if g < level { level - g } else { 0.0 })
        .collect();
    Ok((allocation, level))
}

/// Iterative water-filling configuration.
///
/// `objective_tol` plays two roles at convergence: the relative improvement
/// of the nats objective trace must fall below it, and the sweep must move
/// no allocation entry by more than the same value in joules (floored at
/// [`ENERGY_TOL`]). The second condition matters because the objective
/// flattens quadratically near the optimum.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IwfConfig {
    pub max_iters: usize,
    pub objective_tol: f64,
}

impl Default for IwfConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            objective_tol: 1e-9,
        }
    }
}

/// Converged allocation with the per-sweep objective trace (in nats).
#[derive(Debug, Clone, PartialEq)]
pub struct IwfSolution {
    pub allocation: AllocationMatrix,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
}

/// Gauss-Seidel sweeps of per-user water-filling: each pass recomputes the
/// interference-plus-noise to gain ratios with the other users' current
/// allocations held fixed and re-fills the user's budget. The objective
/// cannot decrease across sweeps; iteration stops at `max_iters` or when a
/// sweep improves the nats objective by less than the relative tolerance.
pub fn iterative_water_fill(
    params: &SystemParams,
    realization: &ChannelRealization,
    config: IwfConfig,
) -> Result<IwfSolution> {
    params.validate()?;
    realization.matches(params)?;
    if config.max_iters < 1 {
        return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
    }
    if !(config.objective_tol > 0.0) {
        return Err(Error::InvalidArgument(
            "objective_tol must be positive".into(),
        ));
    }
    let mut alloc = AllocationMatrix::zeros(params.horizon, params.n_users);
    let mut trace = Vec::new();
    let mut iterations = 0;
    for sweep in 0..config.max_iters {
        let previous = alloc.clone();
        iwf_sweep(params, realization, &mut alloc)?;
        let objective = realized_throughput_nats(params, realization, &alloc);
        iterations = sweep + 1;
        let objective_settled = trace
            .last()
            .map(|&prev: &f64| objective - prev < config.objective_tol * objective.abs().max(1.0))
            .unwrap_or(false);
        trace.push(objective);
        // the objective flattens quadratically near the optimum, so it is
        // a weak convergence signal on its own; also require the sweep to
        // leave the allocation in place (within the same tolerance, read
        // in joules) before stopping
        let mut moved = 0.0f64;
        for t in 0..params.horizon {
            for i in 0..params.n_users {
                moved = moved.max((alloc.energy(t, i) - previous.energy(t, i)).abs());
            }
        }
        if objective_settled && moved <= config.objective_tol.max(ENERGY_TOL) {
            break;
        }
    }
    Ok(IwfSolution {
        allocation: alloc,
        iterations,
        objective_trace: trace,
    })
}

/// One Gauss-Seidel sweep over users `1..N`, updating `alloc` in place.
pub fn iwf_sweep(
    params: &SystemParams,
    realization: &ChannelRealization,
    alloc: &mut AllocationMatrix,
) -> Result<()> {
    let n = params.n_users;
    let t_slots = params.horizon;
    let tau_no = params.tau_no();
    for i in 0..n {
        let mut ratios = Vec::with_capacity(t_slots);
        for t in 0..t_slots {
            let h_i = realization.gain(t, i);
            if h_i > 0.0 {
                let interference: f64 = (0..n)
                    .filter(|&k| k != i)
                    .map(|k| realization.gain(t, k) * alloc.energy(t, k))
                    .sum();
                ratios.push((tau_no + interference) / h_i);
            } else {
                ratios.push(f64::INFINITY);
            }
        }
        let (column, _) = water_fill(&WaterFillProblem {
            noise_ratios: ratios,
            budget: params.energy_budgets[i],
        })?;
        for (t, e) in column.into_iter().enumerate() {
            alloc.set(t, i, e);
        }
    }
    Ok(())
}

/// Residuals of the optimality conditions for a feasible allocation.
///
/// `water_levels[i]` is the inferred per-user threshold; the residuals are
/// relative to the marginal-value multiplier `μ_i = τW·ln2 / level_i`:
/// active slots must sit on the common marginal value (stationarity),
/// inactive slots must not exceed it (complementary slackness), and column
/// sums must meet the budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub water_levels: Vec<f64>,
    pub stationarity_residual: f64,
    pub complementary_slackness_residual: f64,
    pub budget_residual: f64,
}

/// Active-slot threshold when inferring water levels, tied to the global
/// energy tolerance.
pub const KKT_ACTIVE_TOL: f64 = 1e-9;

pub fn verify_kkt(
    params: &SystemParams,
    realization: &ChannelRealization,
    alloc: &AllocationMatrix,
) -> Result<KktReport> {
    realization.matches(params)?;
    alloc.validate_against(params, false)?;
    let n = params.n_users;
    let t_slots = params.horizon;
    let tau_no = params.tau_no();
    let c = params.tau_w() * std::f64::consts::LN_2;

    // denominators τN_o + Σ_k h e, shared by every user's derivative
    let denom: Vec<f64> = (0..t_slots)
        .map(|t| {
            tau_no
                + (0..n)
                    .map(|k| realization.gain(t, k) * alloc.energy(t, k))
                    .sum::<f64>()
        })
        .collect();

    let mut water_levels = Vec::with_capacity(n);
    let mut stationarity = 0.0f64;
    let mut comp_slack = 0.0f64;
    let mut budget_res = 0.0f64;
    for i in 0..n {
        let active: Vec<usize> = (0..t_slots)
            .filter(|&t| alloc.energy(t, i) > KKT_ACTIVE_TOL)
            .collect();
        // infer the water level: on active slots the optimum has
        // denom/h equal to the level
        let level = if active.iter().any(|&t| realization.gain(t, i) > 0.0) {
            let (sum, count) = active
                .iter()
                .filter(|&&t| realization.gain(t, i) > 0.0)
                .map(|&t| denom[t] / realization.gain(t, i))
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            sum / count as f64
        } else {
            // nothing spent: the level is the cheapest slot's ratio
            (0..t_slots)
                .map(|t| {
                    let h = realization.gain(t, i);
                    if h > 0.0 {
                        denom[t] / h
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(f64::INFINITY, f64::min)
        };
        water_levels.push(level);
        let mu = if level.is_finite() { c / level } else { 0.0 };
        for t in 0..t_slots {
            let derivative = c * realization.gain(t, i) / denom[t];
            if alloc.energy(t, i) > KKT_ACTIVE_TOL {
                let res = if mu > 0.0 {
                    (derivative - mu).abs() / mu
                } else {
                    1.0
                };
                stationarity = stationarity.max(res);
            } else if mu > 0.0 {
                comp_slack = comp_slack.max((derivative - mu).max(0.0) / mu);
            }
        }
        let spent = alloc.column_sum(i);
        let budget = params.energy_budgets[i];
        budget_res = budget_res.max((spent - budget).abs() / budget.max(1.0));
    }
    Ok(KktReport {
        water_levels,
        stationarity_residual: stationarity,
        complementary_slackness_residual: comp_slack,
        budget_residual: budget_res,
    })
}

/// Gap between the converged objective and the objective after a single
/// sweep, both in nats, together with the `τW·(N-1)·T/2` bound it must
/// stay under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCheck {
    pub gap_nats: f64,
    pub bound_nats: f64,
}

pub fn single_iteration_gap_check(
    params: &SystemParams,
    realization: &ChannelRealization,
) -> Result<GapCheck> {
    let one_sweep = iterative_water_fill(
        params,
        realization,
        IwfConfig {
            max_iters: 1,
            ..IwfConfig::default()
        },
    )?;
    let converged = iterative_water_fill(params, realization, IwfConfig::default())?;
    let gap_nats = converged.objective_trace.last().unwrap() - one_sweep.objective_trace[0];
    let bound_nats =
        params.tau_w() * (params.n_users as f64 - 1.0) * params.horizon as f64 / 2.0;
    Ok(GapCheck {
        gap_nats,
        bound_nats,
    })
}

/// The offline optimum as a policy object for the simulator.
#[derive(Debug, Clone, Default)]
pub struct OfflineIwf {
    pub config: IwfConfig,
}

impl OfflinePolicy for OfflineIwf {
    fn name(&self) -> &'static str {
        "offline_iwf"
    }

    fn allocate_all(
        &self,
        params: &SystemParams,
        realization: &ChannelRealization,
    ) -> Result<AllocationMatrix> {
        Ok(iterative_water_fill(params, realization, self.config)?.allocation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fading::FadingDistribution;
    use crate::rng::substream_uniform;

    fn unit_params(n: usize, t: usize, budgets: Vec<f64>) -> SystemParams {
        SystemParams::new(
            n,
            t,
            1.0,
            1.0,
            1.0,
            budgets,
            vec![FadingDistribution::exponential(1.0).unwrap(); n],
        )
        .unwrap()
    }

    fn random_realization(params: &SystemParams, seed: u64, k: u64) -> ChannelRealization {
        let mut gains = Vec::new();
        for t in 0..params.horizon {
            for i in 0..params.n_users {
                let u = substream_uniform(seed, k, t as u64, i as u64);
                gains.push(params.fading[i].sample(u).unwrap());
            }
        }
        ChannelRealization::new(params.horizon, params.n_users, gains).unwrap()
    }

    #[test]
    fn water_fill_single_slot_takes_everything() {
        let (alloc, level) = water_fill(&WaterFillProblem {
            noise_ratios: vec![0.7],
            budget: 2.0,
        })
        .unwrap();
        assert_eq!(alloc, vec![2.0]);
        assert!((level - 2.7).abs() < 1e-12);
    }

    #[test]
    fn water_fill_symmetric_slots_split_equally() {
        let (alloc, level) = water_fill(&WaterFillProblem {
            noise_ratios: vec![2.0, 2.0, 2.0],
            budget: 6.0,
        })
        .unwrap();
        for e in &alloc {
            assert!((e - 2.0).abs() < 1e-12);
        }
        assert!((level - 4.0).abs() < 1e-12);
    }

    #[test]
    fn water_fill_two_slot_analytic() {
        // solve (L-1) + (L-2) = 3  =>  L = 3, e = [2, 1]
        let (alloc, level) = water_fill(&WaterFillProblem {
            noise_ratios: vec![1.0, 2.0],
            budget: 3.0,
        })
        .unwrap();
        assert!((alloc[0] - 2.0).abs() < 1e-12);
        assert!((alloc[1] - 1.0).abs() < 1e-12);
        assert!((level - 3.0).abs() < 1e-12);
    }

    #[test]
    fn water_fill_skips_dry_slots() {
        // the expensive slot stays dry when the budget is small
        let (alloc, level) = water_fill(&WaterFillProblem {
            noise_ratios: vec![1.0, 10.0],
            budget: 2.0,
        })
        .unwrap();
        assert_eq!(alloc[1], 0.0);
        assert!((alloc[0] - 2.0).abs() < 1e-12);
        assert!((level - 3.0).abs() < 1e-12);
        // zero-gain slot marked +inf never receives energy
        let (alloc, _) = water_fill(&WaterFillProblem {
            noise_ratios: vec![1.0, f64::INFINITY],
            budget: 5.0,
        })
        .unwrap();
        assert_eq!(alloc[1], 0.0);
        assert!((alloc[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn water_fill_infeasible_and_zero_budget() {
        assert!(matches!(
            water_fill(&WaterFillProblem {
                noise_ratios: vec![f64::INFINITY, f64::INFINITY],
                budget: 1.0,
            }),
            Err(Error::Infeasible(_))
        ));
        let (alloc, level) = water_fill(&WaterFillProblem {
            noise_ratios: vec![3.0, 5.0],
            budget: 0.0,
        })
        .unwrap();
        assert_eq!(alloc, vec![0.0, 0.0]);
        assert_eq!(level, 3.0);
    }

    #[test]
    fn water_fill_budget_exhaustion_and_monotonicity() {
        // random problems: budget equality, monotone level and allocations
        for k in 0..50u64 {
            let t = 1 + (substream_uniform(21, k, 0, 0) * 6.0) as usize;
            let ratios: Vec<f64> = (0..t)
                .map(|j| 0.2 + 5.0 * substream_uniform(21, k, 1 + j as u64, 0))
                .collect();
            let budget = 0.1 + 8.0 * substream_uniform(21, k, 99, 0);
            let (alloc, level) = water_fill(&WaterFillProblem {
                noise_ratios: ratios.clone(),
                budget,
            })
            .unwrap();
            let total: f64 = alloc.iter().sum();
            assert!(
                (total - budget).abs() <= 1e-10 * budget.max(1.0),
                "budget equality violated: {total} vs {budget}"
            );
            // allocation non-increasing in the ratio
            for a in 0..t {
                for b in 0..t {
                    if ratios[a] <= ratios[b] {
                        assert!(alloc[a] >= alloc[b] - 1e-12);
                    }
                }
            }
            // a bigger budget raises the level and every allocation
            let (alloc2, level2) = water_fill(&WaterFillProblem {
                noise_ratios: ratios,
                budget: budget + 1.0,
            })
            .unwrap();
            assert!(level2 > level);
            for (e2, e1) in alloc2.iter().zip(&alloc) {
                assert!(e2 + 1e-12 >= *e1);
            }
        }
    }

    #[test]
    fn iwf_single_user_is_plain_water_fill() {
        let params = unit_params(1, 4, vec![2.5]);
        let real = random_realization(&params, 5, 0);
        let sol = iterative_water_fill(&params, &real, IwfConfig::default()).unwrap();
        let ratios: Vec<f64> = (0..4)
            .map(|t| params.tau_no() / real.gain(t, 0))
            .collect();
        let (direct, _) = water_fill(&WaterFillProblem {
            noise_ratios: ratios,
            budget: 2.5,
        })
        .unwrap();
        for t in 0..4 {
            assert!((sol.allocation.energy(t, 0) - direct[t]).abs() < 1e-12);
        }
        assert_eq!(sol.iterations, 2); // second sweep confirms convergence
    }

    #[test]
    fn iwf_symmetric_two_user_case() {
        // equal gains and budgets: every slot gets one joule from each user
        let params = unit_params(2, 2, vec![2.0, 2.0]);
        let real = ChannelRealization::new(2, 2, vec![1.0; 4]).unwrap();
        let sol = iterative_water_fill(&params, &real, IwfConfig::default()).unwrap();
        for t in 0..2 {
            for i in 0..2 {
                assert!(
                    (sol.allocation.energy(t, i) - 1.0).abs() < 1e-9,
                    "slot {t} user {i}: {}",
                    sol.allocation.energy(t, i)
                );
            }
        }
    }

    #[test]
    fn iwf_trace_is_non_decreasing_and_budget_exact() {
        for k in 0..20u64 {
            let params = unit_params(3, 5, vec![1.5, 3.0, 0.7]);
            let real = random_realization(&params, 31, k);
            let sol = iterative_water_fill(&params, &real, IwfConfig::default()).unwrap();
            for w in sol.objective_trace.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0),
                    "objective decreased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
            sol.allocation.validate_against(&params, true).unwrap();
        }
    }

    #[test]
    fn iwf_fixed_point_is_stable() {
        let params = unit_params(2, 5, vec![2.0, 1.0]);
        let real = random_realization(&params, 47, 3);
        let sol = iterative_water_fill(&params, &real, IwfConfig::default()).unwrap();
        // one extra sweep starting from the converged point barely moves it
        let mut resumed = sol.allocation.clone();
        iwf_sweep(&params, &real, &mut resumed).unwrap();
        let mut max_change = 0.0f64;
        for t in 0..5 {
            for i in 0..2 {
                max_change =
                    max_change.max((sol.allocation.energy(t, i) - resumed.energy(t, i)).abs());
            }
        }
        assert!(max_change < 1e-8, "fixed point moved by {max_change}");
    }

    #[test]
    fn kkt_residuals_small_at_convergence() {
        for k in 0..10u64 {
            let params = unit_params(2, 5, vec![1.0, 4.0]);
            let real = random_realization(&params, 13, k);
            let sol = iterative_water_fill(&params, &real, IwfConfig::default()).unwrap();
            let report = verify_kkt(&params, &real, &sol.allocation).unwrap();
            assert!(report.stationarity_residual <= 1e-6, "{report:?}");
            assert!(report.complementary_slackness_residual <= 1e-6, "{report:?}");
            assert!(report.budget_residual <= 1e-6, "{report:?}");
        }
    }

    #[test]
    fn kkt_flags_equal_split_on_unequal_gains() {
        let params = unit_params(1, 2, vec![2.0]);
        let real = ChannelRealization::new(2, 1, vec![4.0, 0.25]).unwrap();
        let equal = AllocationMatrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let report = verify_kkt(&params, &real, &equal).unwrap();
        assert!(
            report.stationarity_residual > 1e-3,
            "equal split should violate stationarity: {report:?}"
        );
    }

    #[test]
    fn kkt_single_slot_is_exact() {
        let params = unit_params(1, 1, vec![3.0]);
        let real = ChannelRealization::new(1, 1, vec![0.8]).unwrap();
        let alloc = AllocationMatrix::new(1, 1, vec![3.0]).unwrap();
        let report = verify_kkt(&params, &real, &alloc).unwrap();
        assert!(report.stationarity_residual <= 1e-12);
        assert!(report.complementary_slackness_residual <= 1e-12);
        assert!(report.budget_residual <= 1e-12);
    }

    #[test]
    fn gap_check_bounds() {
        // one user converges in a single sweep
        let p1 = unit_params(1, 3, vec![2.0]);
        let r1 = random_realization(&p1, 3, 0);
        let g1 = single_iteration_gap_check(&p1, &r1).unwrap();
        assert!(g1.gap_nats.abs() <= 1e-12);
        assert_eq!(g1.bound_nats, 0.0);
        // the symmetric case reaches its fixed point in one sweep
        let p2 = unit_params(2, 2, vec![2.0, 2.0]);
        let r2 = ChannelRealization::new(2, 2, vec![1.0; 4]).unwrap();
        let g2 = single_iteration_gap_check(&p2, &r2).unwrap();
        assert!(g2.gap_nats.abs() <= 1e-12, "gap {}", g2.gap_nats);
        // random two-user instances stay inside the theoretical bound
        for k in 0..20u64 {
            let p = unit_params(2, 5, vec![1.0, 1.0]);
            let r = random_realization(&p, 17, k);
            let g = single_iteration_gap_check(&p, &r).unwrap();
            assert!(g.gap_nats <= g.bound_nats, "gap {} > bound {}", g.gap_nats, g.bound_nats);
            assert!(g.gap_nats >= -1e-9);
            assert!((g.bound_nats - 2.5).abs() < 1e-12);
        }
    }
}
