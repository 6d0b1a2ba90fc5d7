//! Seeded Monte Carlo engine: runs offline and causal policies over common
//! random channel realizations and aggregates mean sum-throughput with
//! standard errors.
//!
//! Realizations are addressed by counter-based substreams, so every policy
//! at every sweep point consumes identical gains (common random numbers)
//! and evaluation may fan out across workers without perturbing results.
//! Aggregation always reduces in realization-index order.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{build_value_tables, dp_policy, DpConfig, ValueTable};
use crate::error::{Error, Result};
use crate::model::{
    execute_causal, realized_throughput, CausalPolicy, ChannelRealization, OfflinePolicy,
    SystemParams,
};
use crate::offline::{IwfConfig, OfflineIwf};
use crate::policies::{cec_policy, equal_energy_policy, one_shot_policy, one_shot_thresholds};
use crate::rng::substream_uniform;

/// The five policy selectors understood by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    OfflineIwf,
    DpOptimal,
    Cec,
    OneShot,
    EqualEnergy,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::OfflineIwf,
        PolicyKind::DpOptimal,
        PolicyKind::Cec,
        PolicyKind::OneShot,
        PolicyKind::EqualEnergy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::OfflineIwf => "offline_iwf",
            PolicyKind::DpOptimal => "dp_optimal",
            PolicyKind::Cec => "cec",
            PolicyKind::OneShot => "one_shot",
            PolicyKind::EqualEnergy => "equal_energy",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown policy '{s}', expected one of offline_iwf, dp_optimal, cec, one_shot, equal_energy"
                ))
            })
    }
}

/// Optional sweep axis of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Transmit SNR in dB; budgets follow `E_i = 10^(snr/10)·τN_o/h_o_i`.
    SnrDb { values: Vec<f64> },
    /// Number of users; the first user of the base system is the template.
    /// With `snr_db` set the budgets come from the SNR mapping, otherwise
    /// the template's budget is replicated.
    NUsers {
        values: Vec<usize>,
        snr_db: Option<f64>,
    },
}

/// Solver settings shared by all sweep points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub iwf: IwfConfig,
    pub dp: DpConfig,
    /// The exact DP is skipped (with a note) at sweep points with more
    /// users than this; its state space grows exponentially with N.
    pub dp_max_users: usize,
    /// Directory for value-table reuse across runs, keyed by a hash of
    /// the parameters and DP configuration.
    pub dp_cache_dir: Option<PathBuf>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            iwf: IwfConfig::default(),
            dp: DpConfig::default(),
            dp_max_users: 2,
            dp_cache_dir: None,
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub params: SystemParams,
    pub policies: Vec<PolicyKind>,
    pub n_realizations: usize,
    pub seed: u64,
    pub sweep: Option<Sweep>,
    pub solver: SolverSettings,
}

/// Aggregates for one policy at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStats {
    pub policy: PolicyKind,
    pub mean_bits: f64,
    pub stderr_bits: f64,
    pub n_realizations: usize,
    pub runtime_secs: f64,
}

/// A policy that could not be constructed at a sweep point; the others
/// still run.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPolicy {
    pub policy: PolicyKind,
    pub reason: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPointResult {
    pub sweep_value: f64,
    /// Parameters actually used at this point (budgets resolved from SNR,
    /// user count resolved from the sweep axis).
    pub params: SystemParams,
    pub stats: Vec<PolicyStats>,
    pub skipped: Vec<SkippedPolicy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub points: Vec<SweepPointResult>,
}

/// Gains of realization `index`, drawn from the substream keyed by
/// `(seed, index, slot, user)`.
pub fn generate_realization(
    params: &SystemParams,
    seed: u64,
    index: u64,
) -> Result<ChannelRealization> {
    let mut gains = Vec::with_capacity(params.horizon * params.n_users);
    for t in 0..params.horizon {
        for i in 0..params.n_users {
            let u = substream_uniform(seed, index, t as u64, i as u64);
            gains.push(params.fading[i].sample(u)?);
        }
    }
    ChannelRealization::new(params.horizon, params.n_users, gains)
}

/// Stream of `n` reproducible realizations.
pub fn generate_realizations<'a>(
    params: &'a SystemParams,
    n: usize,
    seed: u64,
) -> impl Iterator<Item = Result<ChannelRealization>> + 'a {
    (0..n as u64).map(move |k| generate_realization(params, seed, k))
}

fn snr_budget(snr_db: f64, params: &SystemParams, mean_gain: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sweep SNR value must be finite, got {snr_db}"
        )));
    }
    if mean_gain <= 0.0 {
        return Err(Error::InvalidArgument(
            "SNR sweep needs a positive mean channel gain".into(),
        ));
    }
    Ok(10f64.powf(snr_db / 10.0) * params.tau_no() / mean_gain)
}

/// Resolves sweep point `index` into the sweep value recorded in results
/// and the concrete system parameters.
pub fn resolve_sweep_point(spec: &ExperimentSpec, index: usize) -> Result<(f64, SystemParams)> {
    match &spec.sweep {
        None => Ok((0.0, spec.params.clone())),
        Some(Sweep::SnrDb { values }) => {
            let snr_db = values[index];
            let mut params = spec.params.clone();
            params.energy_budgets = params
                .fading
                .iter()
                .map(|dist| snr_budget(snr_db, &params, dist.mean()))
                .collect::<Result<_>>()?;
            params.validate()?;
            Ok((snr_db, params))
        }
        Some(Sweep::NUsers { values, snr_db }) => {
            let n = values[index];
            if n < 1 {
                return Err(Error::InvalidArgument("swept n_users must be >= 1".into()));
            }
            let template_fading = spec.params.fading[0].clone();
            let budget = match snr_db {
                Some(snr) => snr_budget(*snr, &spec.params, template_fading.mean())?,
                None => spec.params.energy_budgets[0],
            };
            let params = SystemParams::new(
                n,
                spec.params.horizon,
                spec.params.bandwidth_hz,
                spec.params.slot_seconds,
                spec.params.noise_watts,
                vec![budget; n],
                vec![template_fading; n],
            )?;
            Ok((n as f64, params))
        }
    }
}

fn sweep_len(spec: &ExperimentSpec) -> usize {
    match &spec.sweep {
        None => 1,
        Some(Sweep::SnrDb { values }) => values.len(),
        Some(Sweep::NUsers { values, .. }) => values.len(),
    }
}

fn obtain_value_table(params: &SystemParams, solver: &SolverSettings) -> Result<ValueTable> {
    if let Some(dir) = &solver.dp_cache_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            return Err(Error::Io(format!("create cache dir {dir:?}: {e}")));
        }
        let key = ValueTable::cache_key(params, &solver.dp);
        let path = dir.join(format!("dp-{key}.json"));
        if path.exists() {
            match ValueTable::load_cache(&path, params, &solver.dp) {
                Ok(table) => return Ok(table),
                Err(e) => log::warn!("ignoring unusable DP cache {path:?}: {e}"),
            }
        }
        let table = build_value_tables(params, &solver.dp)?;
        if let Err(e) = table.save_cache(&path) {
            log::warn!("could not persist DP cache {path:?}: {e}");
        }
        Ok(table)
    } else {
        build_value_tables(params, &solver.dp)
    }
}

enum Evaluator {
    Offline(OfflineIwf),
    Causal(Box<dyn CausalPolicy>),
}

/// Runs one experiment: per sweep point, constructs the selected policies,
/// evaluates them on `n_realizations` common realizations (offline ones on
/// the full realization, causal ones slot by slot), audits feasibility,
/// enforces per-realization offline dominance, and aggregates means and
/// standard errors in realization-index order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.params.validate()?;
    if spec.n_realizations < 1 {
        return Err(Error::InvalidArgument(
            "n_realizations must be at least 1".into(),
        ));
    }
    if spec.policies.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one policy must be selected".into(),
        ));
    }
    for (a, kind) in spec.policies.iter().enumerate() {
        if spec.policies[..a].contains(kind) {
            return Err(Error::InvalidArgument(format!(
                "policy '{}' selected twice",
                kind.name()
            )));
        }
    }
    let points = (0..sweep_len(spec))
        .map(|pt| run_sweep_point(spec, pt))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult { points })
}

fn run_sweep_point(spec: &ExperimentSpec, index: usize) -> Result<SweepPointResult> {
    let (sweep_value, params) = resolve_sweep_point(spec, index)?;
    let solver = &spec.solver;

    let mut active: Vec<(PolicyKind, Evaluator)> = Vec::new();
    let mut skipped: Vec<SkippedPolicy> = Vec::new();
    let mut dp_build_secs = 0.0f64;
    for &kind in &spec.policies {
        match kind {
            PolicyKind::OfflineIwf => {
                active.push((kind, Evaluator::Offline(OfflineIwf { config: solver.iwf })));
            }
            PolicyKind::EqualEnergy => {
                active.push((
                    kind,
                    Evaluator::Causal(Box::new(equal_energy_policy(&params))),
                ));
            }
            PolicyKind::Cec => {
                active.push((
                    kind,
                    Evaluator::Causal(Box::new(cec_policy(&params, solver.iwf))),
                ));
            }
            PolicyKind::OneShot => {
                match one_shot_thresholds(&params).and_then(|th| one_shot_policy(th, &params)) {
                    Ok(policy) => active.push((kind, Evaluator::Causal(Box::new(policy)))),
                    Err(reason) => skipped.push(SkippedPolicy {
                        policy: kind,
                        reason,
                    }),
                }
            }
            PolicyKind::DpOptimal => {
                if params.n_users > solver.dp_max_users {
                    let reason = Error::Unsupported(format!(
                        "dp_optimal skipped: {} users exceed dp_max_users = {}",
                        params.n_users, solver.dp_max_users
                    ));
                    log::info!("{reason}");
                    skipped.push(SkippedPolicy {
                        policy: kind,
                        reason,
                    });
                    continue;
                }
                let t0 = Instant::now();
                match obtain_value_table(&params, solver) {
                    Ok(table) => {
                        dp_build_secs = t0.elapsed().as_secs_f64();
                        let policy = dp_policy(Arc::new(table), &params, &solver.dp)?;
                        active.push((kind, Evaluator::Causal(Box::new(policy))));
                    }
                    Err(reason @ Error::Capacity(_)) => {
                        log::warn!("dp_optimal unavailable: {reason}");
                        skipped.push(SkippedPolicy {
                            policy: kind,
                            reason,
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    // evaluate the offline policy first so the dominance check can see it
    // regardless of selection order
    let offline_pos = active
        .iter()
        .position(|(kind, _)| *kind == PolicyKind::OfflineIwf);
    let n = spec.n_realizations;
    let seed = spec.seed;
    let outcomes: Vec<(Vec<f64>, Vec<f64>)> = (0..n as u64)
        .into_par_iter()
        .map(|k| -> Result<(Vec<f64>, Vec<f64>)> {
            let realization = generate_realization(&params, seed, k)?;
            let mut bits = vec![0.0f64; active.len()];
            let mut secs = vec![0.0f64; active.len()];
            let mut offline_bits = None;
            let mut order: Vec<usize> = (0..active.len()).collect();
            if let Some(pos) = offline_pos {
                order.retain(|&j| j != pos);
                order.insert(0, pos);
            }
            for j in order {
                let (kind, evaluator) = &active[j];
                let t0 = Instant::now();
                let alloc = match evaluator {
                    Evaluator::Offline(p) => p.allocate_all(&params, &realization)?,
                    Evaluator::Causal(p) => execute_causal(&params, &realization, p.as_ref())?,
                };
                alloc.validate_against(&params, false)?;
                let tp = realized_throughput(&params, &realization, &alloc)?;
                secs[j] = t0.elapsed().as_secs_f64();
                if *kind == PolicyKind::OfflineIwf {
                    offline_bits = Some(tp);
                } else if let Some(off) = offline_bits {
                    if tp - off > 1e-9 * off.abs().max(1.0) {
                        return Err(Error::Inconsistency(format!(
                            "realization {k}: causal policy {} realized {tp} bits, above the \
                             offline optimum {off} (N={}, T={}, seed={seed}, sweep point {index})",
                            kind.name(),
                            params.n_users,
                            params.horizon,
                        )));
                    }
                }
                bits[j] = tp;
            }
            Ok((bits, secs))
        })
        .collect::<Result<Vec<_>>>()?;

    // sequential reduction in realization-index order
    let mut stats = Vec::with_capacity(active.len());
    for (j, (kind, _)) in active.iter().enumerate() {
        let mut sum = 0.0f64;
        for (bits, _) in &outcomes {
            sum += bits[j];
        }
        let mean = sum / n as f64;
        let mut ss = 0.0f64;
        for (bits, _) in &outcomes {
            let d = bits[j] - mean;
            ss += d * d;
        }
        let stderr = if n > 1 {
            (ss / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        let mut runtime: f64 = outcomes.iter().map(|(_, secs)| secs[j]).sum();
        if *kind == PolicyKind::DpOptimal {
            runtime += dp_build_secs;
        }
        stats.push(PolicyStats {
            policy: *kind,
            mean_bits: mean,
            stderr_bits: stderr,
            n_realizations: n,
            runtime_secs: runtime,
        });
    }
    Ok(SweepPointResult {
        sweep_value,
        params,
        stats,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fading::FadingDistribution;

    fn base_spec(policies: Vec<PolicyKind>, n_realizations: usize) -> ExperimentSpec {
        ExperimentSpec {
            params: SystemParams::symmetric(
                2,
                5,
                1e6,
                1.0,
                1.0,
                1.0,
                FadingDistribution::exponential(1.0).unwrap(),
            )
            .unwrap(),
            policies,
            n_realizations,
            seed: 20250809,
            sweep: None,
            solver: SolverSettings::default(),
        }
    }

    #[test]
    fn realizations_are_reproducible_and_distributed() {
        let spec = base_spec(vec![PolicyKind::EqualEnergy], 1);
        let a = generate_realization(&spec.params, 1, 42).unwrap();
        let b = generate_realization(&spec.params, 1, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_realization(&spec.params, 1, 43).unwrap();
        assert_ne!(a, c);
        // deterministic fading gives constant gains
        let det = SystemParams::symmetric(
            2,
            3,
            1.0,
            1.0,
            1.0,
            1.0,
            FadingDistribution::deterministic(0.7).unwrap(),
        )
        .unwrap();
        let r = generate_realization(&det, 9, 0).unwrap();
        assert!(r.row(1).iter().all(|&g| g == 0.7));
        // sample mean of many exponential gains concentrates on 1
        let mut sum = 0.0;
        let mut count = 0usize;
        for real in generate_realizations(&spec.params, 10_000, 5) {
            let real = real.unwrap();
            for t in 0..real.n_slots() {
                sum += real.row(t).iter().sum::<f64>();
                count += real.n_users();
            }
        }
        let mean = sum / count as f64;
        assert!((mean - 1.0).abs() < 0.01, "sample mean {mean}");
    }

    #[test]
    fn common_random_numbers_across_sweep_points() {
        // gains depend only on (seed, k, t, i), not on budgets
        let mut spec = base_spec(vec![PolicyKind::EqualEnergy], 1);
        spec.sweep = Some(Sweep::SnrDb {
            values: vec![-10.0, 10.0],
        });
        let (_, p_low) = resolve_sweep_point(&spec, 0).unwrap();
        let (_, p_high) = resolve_sweep_point(&spec, 1).unwrap();
        assert!((p_low.energy_budgets[0] - 0.1).abs() < 1e-12);
        assert!((p_high.energy_budgets[0] - 10.0).abs() < 1e-12);
        let a = generate_realization(&p_low, spec.seed, 3).unwrap();
        let b = generate_realization(&p_high, spec.seed, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn n_users_sweep_replicates_the_template() {
        let mut spec = base_spec(vec![PolicyKind::EqualEnergy], 1);
        spec.sweep = Some(Sweep::NUsers {
            values: vec![2, 6],
            snr_db: Some(10.0),
        });
        let (v, p) = resolve_sweep_point(&spec, 1).unwrap();
        assert_eq!(v, 6.0);
        assert_eq!(p.n_users, 6);
        assert_eq!(p.energy_budgets, vec![10.0; 6]);
        assert_eq!(p.fading[5], spec.params.fading[0]);
    }

    #[test]
    fn experiment_is_bitwise_deterministic() {
        let spec = base_spec(
            vec![
                PolicyKind::OfflineIwf,
                PolicyKind::Cec,
                PolicyKind::OneShot,
                PolicyKind::EqualEnergy,
            ],
            64,
        );
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            for (sa, sb) in pa.stats.iter().zip(&pb.stats) {
                assert_eq!(sa.mean_bits.to_bits(), sb.mean_bits.to_bits());
                assert_eq!(sa.stderr_bits.to_bits(), sb.stderr_bits.to_bits());
            }
        }
    }

    #[test]
    fn time_invariant_channel_ties_offline_cec_equal() {
        let mut spec = base_spec(
            vec![PolicyKind::OfflineIwf, PolicyKind::Cec, PolicyKind::EqualEnergy],
            1,
        );
        spec.params = SystemParams::symmetric(
            2,
            5,
            1e6,
            1.0,
            1.0,
            2.0,
            FadingDistribution::deterministic(1.0).unwrap(),
        )
        .unwrap();
        let result = run_experiment(&spec).unwrap();
        let stats = &result.points[0].stats;
        let offline = stats[0].mean_bits;
        for s in stats {
            assert!(
                (s.mean_bits - offline).abs() <= 1e-9 * offline,
                "{} diverges: {} vs {}",
                s.policy.name(),
                s.mean_bits,
                offline
            );
        }
    }

    #[test]
    fn stderr_shrinks_like_inverse_sqrt_n() {
        let small = run_experiment(&base_spec(vec![PolicyKind::OneShot], 2000)).unwrap();
        let large = run_experiment(&base_spec(vec![PolicyKind::OneShot], 8000)).unwrap();
        let se_small = small.points[0].stats[0].stderr_bits;
        let se_large = large.points[0].stats[0].stderr_bits;
        let ratio = se_small / se_large;
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "quadrupling n should halve the stderr, ratio {ratio}"
        );
    }

    #[test]
    fn dp_is_skipped_when_user_count_exceeds_cap() {
        let mut spec = base_spec(vec![PolicyKind::DpOptimal, PolicyKind::EqualEnergy], 4);
        spec.params = SystemParams::symmetric(
            3,
            2,
            1.0,
            1.0,
            1.0,
            1.0,
            FadingDistribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        let result = run_experiment(&spec).unwrap();
        let point = &result.points[0];
        assert_eq!(point.stats.len(), 1);
        assert_eq!(point.stats[0].policy, PolicyKind::EqualEnergy);
        assert_eq!(point.skipped.len(), 1);
        assert_eq!(point.skipped[0].policy, PolicyKind::DpOptimal);
        assert!(matches!(point.skipped[0].reason, Error::Unsupported(_)));
    }

    #[test]
    fn dp_capacity_guard_reports_skip() {
        let mut spec = base_spec(vec![PolicyKind::DpOptimal, PolicyKind::EqualEnergy], 2);
        spec.solver.dp.energy_grid_points = 3000; // 3000^2 * 5 cells is over budget
        let result = run_experiment(&spec).unwrap();
        let point = &result.points[0];
        assert_eq!(point.stats.len(), 1);
        assert!(matches!(point.skipped[0].reason, Error::Capacity(_)));
    }

    #[test]
    fn rejects_duplicate_policies_and_empty_selections() {
        let spec = base_spec(vec![PolicyKind::Cec, PolicyKind::Cec], 2);
        assert!(run_experiment(&spec).is_err());
        let empty = base_spec(vec![], 2);
        assert!(run_experiment(&empty).is_err());
    }
}
