//! Reduced-scale property suites behind `fademac verify`.
//!
//! Each check prints one PASS / FAIL / SKIP line; the command exits
//! nonzero iff any check fails. The checks honor the solver settings of
//! the supplied config, so a corrupted tolerance is caught here.

use std::sync::Arc;

use fademac_core::rng::substream_uniform;
use fademac_core::{
    build_value_tables, dp_policy, execute_causal, generate_realization, iterative_water_fill,
    one_shot_thresholds, realized_throughput, run_experiment, single_iteration_gap_check,
    verify_kkt, water_fill, CausalPolicy, ChannelRealization, DpConfig, EnergyState,
    ExperimentSpec, FadingDistribution, FadingKind, OfflineIwf, OfflinePolicy, PolicyKind,
    SystemParams, Sweep, WaterFillProblem, ENERGY_TOL,
};

pub enum CheckStatus {
    Pass,
    Skip(String),
    Fail(String),
}

pub struct CheckReport {
    pub name: &'static str,
    pub status: CheckStatus,
}

/// Grid sizes used for DP checks here; verify runs at reduced scale.
fn reduced_dp() -> DpConfig {
    DpConfig {
        energy_grid_points: 21,
        quadrature_order: 8,
        inner_opt_points: 17,
    }
}

fn random_instance(
    template: &SystemParams,
    seed: u64,
    rep: u64,
    n_users: usize,
    horizon: usize,
) -> Result<(SystemParams, ChannelRealization), String> {
    let budgets: Vec<f64> = (0..n_users)
        .map(|i| 0.1 + 9.9 * substream_uniform(seed, rep, 1000, i as u64))
        .collect();
    let fading: Vec<FadingDistribution> = (0..n_users)
        .map(|i| template.fading[i % template.fading.len()].clone())
        .collect();
    let params = SystemParams::new(
        n_users,
        horizon,
        template.bandwidth_hz,
        template.slot_seconds,
        template.noise_watts,
        budgets,
        fading,
    )
    .map_err(|e| e.to_string())?;
    let realization = generate_realization(&params, seed, rep).map_err(|e| e.to_string())?;
    Ok((params, realization))
}

fn check_water_fill_analytic() -> Result<(), String> {
    let (alloc, level) = water_fill(&WaterFillProblem {
        noise_ratios: vec![1.0, 2.0],
        budget: 3.0,
    })
    .map_err(|e| e.to_string())?;
    if (alloc[0] - 2.0).abs() > 1e-10 || (alloc[1] - 1.0).abs() > 1e-10 || (level - 3.0).abs() > 1e-10
    {
        return Err(format!("two-slot analytic case gave {alloc:?}, level {level}"));
    }
    for rep in 0..20u64 {
        let t = 1 + (substream_uniform(2024, rep, 0, 0) * 5.0) as usize;
        let ratios: Vec<f64> = (0..t)
            .map(|j| 0.1 + 4.0 * substream_uniform(2024, rep, 1 + j as u64, 0))
            .collect();
        let budget = 0.1 + 9.0 * substream_uniform(2024, rep, 77, 0);
        let (alloc, _) = water_fill(&WaterFillProblem {
            noise_ratios: ratios,
            budget,
        })
        .map_err(|e| e.to_string())?;
        let total: f64 = alloc.iter().sum();
        if (total - budget).abs() > 1e-10 * budget.max(1.0) {
            return Err(format!("budget equality violated: {total} vs {budget}"));
        }
    }
    Ok(())
}

fn check_iwf_kkt(spec: &ExperimentSpec) -> Result<(), String> {
    for rep in 0..15u64 {
        let n = 1 + (rep % 3) as usize;
        let t = 1 + (rep % spec.params.horizon as u64) as usize;
        let (params, realization) = random_instance(&spec.params, 4242, rep, n, t)?;
        let solution = iterative_water_fill(&params, &realization, spec.solver.iwf)
            .map_err(|e| e.to_string())?;
        let report =
            verify_kkt(&params, &realization, &solution.allocation).map_err(|e| e.to_string())?;
        let worst = report
            .stationarity_residual
            .max(report.complementary_slackness_residual)
            .max(report.budget_residual);
        if worst > 1e-6 {
            return Err(format!(
                "instance {rep} (N={n}, T={t}): residuals {:.3e}/{:.3e}/{:.3e} exceed 1e-6",
                report.stationarity_residual,
                report.complementary_slackness_residual,
                report.budget_residual
            ));
        }
    }
    Ok(())
}

fn check_iwf_trace_monotone(spec: &ExperimentSpec) -> Result<(), String> {
    for rep in 0..8u64 {
        let (params, realization) =
            random_instance(&spec.params, 515, rep, 2, spec.params.horizon)?;
        let solution = iterative_water_fill(&params, &realization, spec.solver.iwf)
            .map_err(|e| e.to_string())?;
        for w in solution.objective_trace.windows(2) {
            if w[1] < w[0] - 1e-12 * w[0].abs().max(1.0) {
                return Err(format!("objective decreased from {} to {}", w[0], w[1]));
            }
        }
    }
    Ok(())
}

fn check_single_sweep_gap(spec: &ExperimentSpec) -> Result<(), String> {
    for rep in 0..10u64 {
        let (params, realization) =
            random_instance(&spec.params, 616, rep, 2, spec.params.horizon)?;
        let gap = single_iteration_gap_check(&params, &realization).map_err(|e| e.to_string())?;
        if gap.gap_nats > gap.bound_nats {
            return Err(format!(
                "gap {} nats exceeds the {} nats bound",
                gap.gap_nats, gap.bound_nats
            ));
        }
    }
    Ok(())
}

fn check_one_shot_thresholds(spec: &ExperimentSpec) -> Result<(), String> {
    let params = &spec.params;
    let thresholds = one_shot_thresholds(params).map_err(|e| e.to_string())?;
    for (i, dist) in params.fading.iter().enumerate() {
        let seq = thresholds.sequence(i);
        // independent recomputation of the recursion
        let horizon = params.horizon;
        let mut want = vec![0.0f64; horizon + 1];
        if horizon >= 1 {
            want[horizon - 1] = dist.mean();
        }
        for j in (0..horizon.saturating_sub(1)).rev() {
            want[j] = match dist.kind() {
                FadingKind::Exponential { rate } => {
                    let nu = want[j + 1];
                    nu + (-rate * nu).exp() / rate
                }
                FadingKind::Deterministic { value } => value.max(want[j + 1]),
                FadingKind::TabulatedInverseCdf { .. } => dist
                    .expected_max_with(want[j + 1])
                    .map_err(|e| e.to_string())?,
            };
        }
        for (t, (&got, &expected)) in seq.iter().zip(&want).enumerate() {
            if (got - expected).abs() > 1e-6 {
                return Err(format!(
                    "user {i}: threshold {t} is {got}, recursion gives {expected}"
                ));
            }
        }
        for w in seq.windows(2) {
            if w[0] < w[1] - 1e-12 {
                return Err(format!("user {i}: thresholds increase toward the deadline"));
            }
        }
    }
    Ok(())
}

fn check_equal_energy_split(point_params: &SystemParams) -> Result<(), String> {
    let policy = fademac_core::equal_energy_policy(point_params);
    let realization = generate_realization(point_params, 99, 0).map_err(|e| e.to_string())?;
    let alloc = execute_causal(point_params, &realization, &policy).map_err(|e| e.to_string())?;
    for i in 0..point_params.n_users {
        let total = alloc.column_sum(i);
        let budget = point_params.energy_budgets[i];
        if (total - budget).abs() > ENERGY_TOL {
            return Err(format!("user {i} spent {total} of {budget}"));
        }
    }
    Ok(())
}

fn check_offline_dominance(spec: &ExperimentSpec) -> Result<(), String> {
    let mut reduced = spec.clone();
    reduced.n_realizations = spec.n_realizations.min(100);
    reduced.solver.dp = reduced_dp();
    if !reduced.policies.contains(&PolicyKind::OfflineIwf) {
        reduced.policies.insert(0, PolicyKind::OfflineIwf);
    }
    // one sweep point suffices at verify scale
    reduced.sweep = match reduced.sweep {
        Some(Sweep::SnrDb { values }) => Some(Sweep::SnrDb {
            values: values[..1].to_vec(),
        }),
        Some(Sweep::NUsers { values, snr_db }) => Some(Sweep::NUsers {
            values: values[..1].to_vec(),
            snr_db,
        }),
        None => None,
    };
    // the engine aborts with an inconsistency error on any per-realization
    // dominance violation
    run_experiment(&reduced).map(|_| ()).map_err(|e| e.to_string())
}

fn check_cec_offline_deterministic(point_params: &SystemParams, spec: &ExperimentSpec) -> CheckStatus {
    let all_deterministic = point_params
        .fading
        .iter()
        .all(|d| matches!(d.kind(), FadingKind::Deterministic { .. }));
    if !all_deterministic {
        return CheckStatus::Skip("requires deterministic fading".into());
    }
    let run = || -> Result<(), String> {
        let realization =
            generate_realization(point_params, 1, 0).map_err(|e| e.to_string())?;
        let cec = fademac_core::cec_policy(point_params, spec.solver.iwf);
        let cec_alloc =
            execute_causal(point_params, &realization, &cec).map_err(|e| e.to_string())?;
        let offline = OfflineIwf {
            config: spec.solver.iwf,
        };
        let off_alloc = offline
            .allocate_all(point_params, &realization)
            .map_err(|e| e.to_string())?;
        let mut max_diff = 0.0f64;
        for t in 0..point_params.horizon {
            for i in 0..point_params.n_users {
                max_diff = max_diff.max((cec_alloc.energy(t, i) - off_alloc.energy(t, i)).abs());
            }
        }
        if max_diff > 1e-6 {
            return Err(format!(
                "CEC trajectory deviates from offline by {max_diff} on a time-invariant channel"
            ));
        }
        Ok(())
    };
    match run() {
        Ok(()) => CheckStatus::Pass,
        Err(e) => CheckStatus::Fail(e),
    }
}

fn check_dp_tables(point_params: &SystemParams, spec: &ExperimentSpec) -> CheckStatus {
    if !spec.policies.contains(&PolicyKind::DpOptimal) {
        return CheckStatus::Skip("dp_optimal not selected".into());
    }
    if point_params.n_users > spec.solver.dp_max_users.min(2) {
        return CheckStatus::Skip("too many users for the exact DP".into());
    }
    let config = reduced_dp();
    let run = || -> Result<(), String> {
        let table = build_value_tables(point_params, &config).map_err(|e| e.to_string())?;
        table.check_invariants().map_err(|e| e.to_string())?;
        let policy =
            dp_policy(Arc::new(table), point_params, &config).map_err(|e| e.to_string())?;
        // the deadline slot spends everything
        let state = EnergyState::initial(point_params);
        let gains = vec![1.0; point_params.n_users];
        let e = policy
            .allocate(point_params, point_params.horizon - 1, &state, &gains)
            .map_err(|e| e.to_string())?;
        for (spent, budget) in e.iter().zip(&point_params.energy_budgets) {
            if (spent - budget).abs() > ENERGY_TOL {
                return Err(format!("deadline slot spent {spent} of {budget}"));
            }
        }
        Ok(())
    };
    match run() {
        Ok(()) => CheckStatus::Pass,
        Err(e) => CheckStatus::Fail(e),
    }
}

fn check_realized_dominates_causal(point_params: &SystemParams, spec: &ExperimentSpec) -> Result<(), String> {
    // spot audit of the executed allocations feeding the statistics
    let thresholds = one_shot_thresholds(point_params).map_err(|e| e.to_string())?;
    let one_shot =
        fademac_core::one_shot_policy(thresholds, point_params).map_err(|e| e.to_string())?;
    let offline = OfflineIwf {
        config: spec.solver.iwf,
    };
    for k in 0..20u64 {
        let realization = generate_realization(point_params, spec.seed, k).map_err(|e| e.to_string())?;
        let causal_alloc =
            execute_causal(point_params, &realization, &one_shot).map_err(|e| e.to_string())?;
        causal_alloc
            .validate_against(point_params, false)
            .map_err(|e| e.to_string())?;
        let off = offline
            .allocate_all(point_params, &realization)
            .map_err(|e| e.to_string())?;
        let causal_bits = realized_throughput(point_params, &realization, &causal_alloc)
            .map_err(|e| e.to_string())?;
        let off_bits =
            realized_throughput(point_params, &realization, &off).map_err(|e| e.to_string())?;
        if causal_bits > off_bits + 1e-9 * off_bits.max(1.0) {
            return Err(format!(
                "realization {k}: one-shot beat the offline optimum ({causal_bits} > {off_bits})"
            ));
        }
    }
    Ok(())
}

/// Runs the whole suite against a parsed experiment spec.
pub fn run_suite(spec: &ExperimentSpec) -> Vec<CheckReport> {
    let point_params = match fademac_core::sim::resolve_sweep_point(spec, 0) {
        Ok((_, p)) => p,
        Err(e) => {
            return vec![CheckReport {
                name: "resolve_sweep_point",
                status: CheckStatus::Fail(e.to_string()),
            }]
        }
    };
    let as_status = |r: Result<(), String>| match r {
        Ok(()) => CheckStatus::Pass,
        Err(e) => CheckStatus::Fail(e),
    };
    vec![
        CheckReport {
            name: "water_fill_analytic",
            status: as_status(check_water_fill_analytic()),
        },
        CheckReport {
            name: "iwf_kkt_residuals",
            status: as_status(check_iwf_kkt(spec)),
        },
        CheckReport {
            name: "iwf_trace_monotone",
            status: as_status(check_iwf_trace_monotone(spec)),
        },
        CheckReport {
            name: "single_sweep_gap_bound",
            status: as_status(check_single_sweep_gap(spec)),
        },
        CheckReport {
            name: "one_shot_threshold_recursion",
            status: as_status(check_one_shot_thresholds(spec)),
        },
        CheckReport {
            name: "equal_energy_budget_equality",
            status: as_status(check_equal_energy_split(&point_params)),
        },
        CheckReport {
            name: "offline_dominance",
            status: as_status(check_offline_dominance(spec)),
        },
        CheckReport {
            name: "one_shot_vs_offline_audit",
            status: as_status(check_realized_dominates_causal(&point_params, spec)),
        },
        CheckReport {
            name: "cec_matches_offline_deterministic",
            status: check_cec_offline_deterministic(&point_params, spec),
        },
        CheckReport {
            name: "dp_value_table_invariants",
            status: check_dp_tables(&point_params, spec),
        },
    ]
}
