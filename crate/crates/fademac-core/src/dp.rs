//! Optimal online policy: backward induction over the finite-horizon
//! Bellman recursion on a discretized energy grid, and a causal policy
//! that executes the resulting value tables.
//!
//! The expected-reward tables `Ū_t(ε)` live on a uniform per-user energy
//! grid and are read back with multilinear interpolation. Expectations
//! over the channel vector use product quadrature from the `fading`
//! module, so table construction is fully deterministic.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CausalPolicy, EnergyState, SystemParams, ENERGY_TOL};

/// Discretization settings for the online DP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Grid resolution per user (levels spanning `[0, E_i]`).
    pub energy_grid_points: usize,
    /// Per-user quadrature order for the expectation over gains.
    pub quadrature_order: usize,
    /// Points per user in the exhaustive grid of the per-slot maximization.
    pub inner_opt_points: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            energy_grid_points: 51,
            quadrature_order: 16,
            inner_opt_points: 33,
        }
    }
}

/// Hard cap on `M^N · T` grid cells; larger systems must fall back to the
/// certainty-equivalent policy.
pub const DP_CELL_BUDGET: usize = 10_000_000;

/// Points per axis of the single refinement pass around the coarse-grid
/// incumbent (spanning plus/minus one coarse step).
const REFINE_POINTS: usize = 9;

/// Version tag of the value-table cache format.
pub const VALUE_TABLE_VERSION: u32 = 1;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = hi - lo;
    (0..n)
        .map(|j| lo + span * j as f64 / (n - 1) as f64)
        .collect()
}

/// Product quadrature over the per-user gain distributions, flattened
/// node-major: node `k` occupies `gains[k*n .. (k+1)*n]`.
struct QuadratureNodes {
    gains: Vec<f64>,
    weights: Vec<f64>,
    n: usize,
}

fn product_quadrature(params: &SystemParams, order: usize) -> Result<QuadratureNodes> {
    let per_user: Vec<Vec<(f64, f64)>> = params
        .fading
        .iter()
        .map(|d| d.quadrature_nodes(order))
        .collect::<Result<_>>()?;
    let mut gains = vec![Vec::new()];
    let mut weights = vec![1.0f64];
    for nodes in &per_user {
        let mut next_g = Vec::with_capacity(gains.len() * nodes.len());
        let mut next_w = Vec::with_capacity(weights.len() * nodes.len());
        for (g, w) in gains.iter().zip(&weights) {
            for &(x, wx) in nodes {
                let mut g2 = g.clone();
                g2.push(x);
                next_g.push(g2);
                next_w.push(w * wx);
            }
        }
        gains = next_g;
        weights = next_w;
    }
    Ok(QuadratureNodes {
        gains: gains.into_iter().flatten().collect(),
        weights,
        n: params.n_users,
    })
}

/// Discretized expected-reward tables `Ū_t` for every slot, in bits.
///
/// `values[t]` is the flattened N-dimensional grid for (0-based) slot `t`,
/// with user 0 on the slowest-varying axis. The entry at the full-budget
/// corner of `values[0]` is the DP's own prediction of the expected total
/// throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    params: SystemParams,
    config: DpConfig,
    axes: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CacheEnvelope {
    version: u32,
    key: String,
    table: ValueTable,
}

impl ValueTable {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn config(&self) -> &DpConfig {
        &self.config
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Raw table of (0-based) slot `t`.
    pub fn slot_values(&self, t: usize) -> &[f64] {
        &self.values[t]
    }

    /// Multilinear interpolation of `Ū_{t+1}` (0-based `slot`) at an
    /// arbitrary energy state, clamped into the grid box.
    pub fn value_at(&self, slot: usize, levels: &[f64]) -> f64 {
        Interpolator::new(&self.axes, &self.values[slot]).at(levels)
    }

    /// `Ū_1` at the full-budget corner: the expected total throughput the
    /// DP predicts for itself.
    pub fn predicted_value_full_budget(&self) -> f64 {
        *self.values[0].last().unwrap()
    }

    /// Stable identity of a (params, config) pair for cache lookups.
    pub fn cache_key(params: &SystemParams, config: &DpConfig) -> String {
        let payload = serde_json::to_string(&(params, config)).expect("serializable inputs");
        let mut hasher = Sha256::new();
        hasher.update(payload.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let envelope = CacheEnvelope {
            version: VALUE_TABLE_VERSION,
            key: Self::cache_key(&self.params, &self.config),
            table: self.clone(),
        };
        let body = serde_json::to_string(&envelope)
            .map_err(|e| Error::Io(format!("serialize value table: {e}")))?;
        std::fs::write(path, body).map_err(|e| Error::Io(format!("write {path:?}: {e}")))
    }

    /// Loads a cached table, rejecting version or key mismatches.
    pub fn load_cache(path: &Path, params: &SystemParams, config: &DpConfig) -> Result<ValueTable> {
        let body =
            std::fs::read_to_string(path).map_err(|e| Error::Io(format!("read {path:?}: {e}")))?;
        let envelope: CacheEnvelope = serde_json::from_str(&body)
            .map_err(|e| Error::Io(format!("parse {path:?}: {e}")))?;
        if envelope.version != VALUE_TABLE_VERSION {
            return Err(Error::Io(format!(
                "cache version {} does not match expected {}",
                envelope.version, VALUE_TABLE_VERSION
            )));
        }
        let key = Self::cache_key(params, config);
        if envelope.key != key {
            return Err(Error::Io(
                "cache key does not match the requested parameters".into(),
            ));
        }
        if &envelope.table.params != params || &envelope.table.config != config {
            return Err(Error::Io("cache contents disagree with its key".into()));
        }
        Ok(envelope.table)
    }

    /// Structural invariants: value zero at the all-zero corner, monotone
    /// along every energy axis, and never below the next slot's table
    /// (more remaining slots cannot hurt). Monotonicity is checked up to
    /// the inner-maximization resolution.
    pub fn check_invariants(&self) -> Result<()> {
        let m = self.config.energy_grid_points;
        let n = self.params.n_users;
        let cells = self.values[0].len();
        for (t, data) in self.values.iter().enumerate() {
            if data[0].abs() > 1e-9 {
                return Err(Error::Inconsistency(format!(
                    "slot {t}: value at the zero-energy corner is {}",
                    data[0]
                )));
            }
            let mut stride = 1usize;
            for axis in (0..n).rev() {
                for cell in 0..cells {
                    let idx = (cell / stride) % m;
                    if idx + 1 < m {
                        let a = data[cell];
                        let b = data[cell + stride];
                        if b < a - 1e-6 * a.abs().max(1.0) {
                            return Err(Error::Inconsistency(format!(
                                "slot {t}: value not monotone along axis {axis} ({a} -> {b})"
                            )));
                        }
                    }
                }
                stride *= m;
            }
        }
        for t in 0..self.values.len().saturating_sub(1) {
            for cell in 0..cells {
                let now = self.values[t][cell];
                let later = self.values[t + 1][cell];
                if now < later - 1e-9 * later.abs().max(1.0) {
                    return Err(Error::Inconsistency(format!(
                        "slot {t}: value {now} below the shorter-horizon value {later}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Multilinear interpolation over the flattened N-dimensional grid.
pub(crate) struct Interpolator<'a> {
    axes: &'a [Vec<f64>],
    inv_step: Vec<f64>,
    data: &'a [f64],
    m: usize,
}

impl<'a> Interpolator<'a> {
    pub(crate) fn new(axes: &'a [Vec<f64>], data: &'a [f64]) -> Self {
        let m = axes[0].len();
        let inv_step = axes
            .iter()
            .map(|axis| {
                let top = *axis.last().unwrap();
                if top > 0.0 {
                    (m - 1) as f64 / top
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            axes,
            inv_step,
            data,
            m,
        }
    }

    #[inline]
    fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let p = (x * self.inv_step[axis]).clamp(0.0, (self.m - 1) as f64);
        let mut i = p as usize;
        if i >= self.m - 1 {
            i = self.m - 2;
        }
        (i, p - i as f64)
    }

    #[inline]
    pub(crate) fn at(&self, point: &[f64]) -> f64 {
        let m = self.m;
        match self.axes.len() {
            1 => {
                let (i, f) = self.locate(0, point[0]);
                self.data[i] * (1.0 - f) + self.data[i + 1] * f
            }
            2 => {
                let (i0, f0) = self.locate(0, point[0]);
                let (i1, f1) = self.locate(1, point[1]);
                let base = i0 * m + i1;
                let v00 = self.data[base];
                let v01 = self.data[base + 1];
                let v10 = self.data[base + m];
                let v11 = self.data[base + m + 1];
                let g0 = 1.0 - f0;
                g0 * (v00 * (1.0 - f1) + v01 * f1) + f0 * (v10 * (1.0 - f1) + v11 * f1)
            }
            n => {
                let located: Vec<(usize, f64)> =
                    (0..n).map(|axis| self.locate(axis, point[axis])).collect();
                let mut strides = vec![1usize; n];
                for axis in (0..n - 1).rev() {
                    strides[axis] = strides[axis + 1] * m;
                }
                let mut acc = 0.0;
                for corner in 0..(1usize << n) {
                    let mut weight = 1.0;
                    let mut offset = 0usize;
                    for (axis, &(idx, frac)) in located.iter().enumerate() {
                        let up = (corner >> axis) & 1 == 1;
                        weight *= if up { frac } else { 1.0 - frac };
                        offset += (idx + up as usize) * strides[axis];
                    }
                    acc += weight * self.data[offset];
                }
                acc
            }
        }
    }
}

/// Exhaustive scan of `τW·log2(1 + Σ a) + B` over the coarse product grid,
/// returning the best value and its flat lattice index. `a[i][j]` holds
/// `h_i · e_ij / (τN_o)` and `B` the interpolated continuation values.
fn coarse_max(a: &[Vec<f64>], b: &[f64], tau_w: f64) -> (f64, usize) {
    let mut best_val = f64::NEG_INFINITY;
    let mut best_idx = 0usize;
    match a.len() {
        1 => {
            for (j, (&aj, &bj)) in a[0].iter().zip(b).enumerate() {
                let v = tau_w * (1.0 + aj).log2() + bj;
                if v > best_val {
                    best_val = v;
                    best_idx = j;
                }
            }
        }
        2 => {
            let p1 = a[1].len();
            for (j0, &a0) in a[0].iter().enumerate() {
                let row = &b[j0 * p1..(j0 + 1) * p1];
                let base = 1.0 + a0;
                for (j1, (&a1v, &bj)) in a[1].iter().zip(row).enumerate() {
                    let v = tau_w * (base + a1v).log2() + bj;
                    if v > best_val {
                        best_val = v;
                        best_idx = j0 * p1 + j1;
                    }
                }
            }
        }
        _ => {
            let n = a.len();
            let mut idx = vec![0usize; n];
            let total: usize = a.iter().map(Vec::len).product();
            for flat in 0..total {
                let mut rem = flat;
                let mut s = 0.0;
                for axis in (0..n).rev() {
                    let len = a[axis].len();
                    idx[axis] = rem % len;
                    rem /= len;
                    s += a[axis][idx[axis]];
                }
                let v = tau_w * (1.0 + s).log2() + b[flat];
                if v > best_val {
                    best_val = v;
                    best_idx = flat;
                }
            }
        }
    }
    (best_val, best_idx)
}

/// Walks every point of a small product grid, handing the scratch point
/// to the callback.
fn for_each_product(axes: &[Vec<f64>], mut f: impl FnMut(&[f64])) {
    let n = axes.len();
    let mut idx = vec![0usize; n];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    loop {
        f(&point);
        let mut axis = n;
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < axes[axis].len() {
                point[axis] = axes[axis][idx[axis]];
                break;
            }
            idx[axis] = 0;
            point[axis] = axes[axis][0];
            if axis == 0 {
                return;
            }
        }
    }
}

/// One refinement window per axis around the incumbent: plus/minus one
/// coarse step, clipped to the feasible box, `REFINE_POINTS` points each.
fn refinement_axes(eps: &[f64], incumbent: &[f64], coarse_points: usize) -> Vec<Vec<f64>> {
    eps.iter()
        .zip(incumbent)
        .map(|(&cap, &e)| {
            if cap > 0.0 {
                let delta = cap / (coarse_points - 1) as f64;
                linspace((e - delta).max(0.0), (e + delta).min(cap), REFINE_POINTS)
            } else {
                vec![0.0]
            }
        })
        .collect()
}

/// Expected value of one grid cell for a non-terminal slot: product
/// quadrature over the gains of the per-state maximization
/// `max_e R(e, h) + Ū_next(ε - e)`.
fn cell_expected_value(
    tau_w: f64,
    inv_tau_no: f64,
    eps: &[f64],
    nodes: &QuadratureNodes,
    next: &Interpolator<'_>,
    inner_points: usize,
) -> f64 {
    let n = eps.len();
    let e_axes: Vec<Vec<f64>> = eps.iter().map(|&e| linspace(0.0, e, inner_points)).collect();
    // continuation values on the coarse lattice are shared by all gain nodes
    let mut b = Vec::with_capacity(e_axes.iter().map(Vec::len).product());
    let mut rem = vec![0.0f64; n];
    for_each_product(&e_axes, |e| {
        for i in 0..n {
            rem[i] = eps[i] - e[i];
        }
        b.push(next.at(&rem));
    });

    let mut a: Vec<Vec<f64>> = e_axes.clone();
    let mut acc = 0.0;
    for (node, &w) in nodes.weights.iter().enumerate() {
        let h = &nodes.gains[node * nodes.n..(node + 1) * nodes.n];
        for i in 0..n {
            let scale = h[i] * inv_tau_no;
            for (aj, &ej) in a[i].iter_mut().zip(&e_axes[i]) {
                *aj = scale * ej;
            }
        }
        let (mut best, best_idx) = coarse_max(&a, &b, tau_w);
        // decode the incumbent and refine around it
        let mut incumbent = vec![0.0f64; n];
        let mut rem_idx = best_idx;
        for axis in (0..n).rev() {
            let len = e_axes[axis].len();
            incumbent[axis] = e_axes[axis][rem_idx % len];
            rem_idx /= len;
        }
        let refine = refinement_axes(eps, &incumbent, inner_points);
        let mut rem_pt = vec![0.0f64; n];
        for_each_product(&refine, |e| {
            let mut s = 0.0;
            for i in 0..n {
                s += h[i] * e[i];
                rem_pt[i] = eps[i] - e[i];
            }
            let v = tau_w * (1.0 + s * inv_tau_no).log2() + next.at(&rem_pt);
            if v > best {
                best = v;
            }
        });
        acc += w * best;
    }
    acc
}

/// Argmax variant used by the executing policy: same coarse grid plus
/// refinement, with ties broken toward larger current expenditure.
fn maximize_for_state(
    tau_w: f64,
    inv_tau_no: f64,
    gains: &[f64],
    eps: &[f64],
    next: &Interpolator<'_>,
    inner_points: usize,
) -> (Vec<f64>, f64) {
    let n = eps.len();
    let e_axes: Vec<Vec<f64>> = eps.iter().map(|&e| linspace(0.0, e, inner_points)).collect();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_spend = -1.0f64;
    let mut best_e = vec![0.0f64; n];
    let mut rem_pt = vec![0.0f64; n];
    let consider = |e: &[f64],
                    rem_pt: &mut [f64],
                    best_val: &mut f64,
                    best_spend: &mut f64,
                    best_e: &mut Vec<f64>| {
        let mut s = 0.0;
        let mut spend = 0.0;
        for i in 0..n {
            s += gains[i] * e[i];
            spend += e[i];
            rem_pt[i] = eps[i] - e[i];
        }
        let v = tau_w * (1.0 + s * inv_tau_no).log2() + next.at(rem_pt);
        if v > *best_val || (v == *best_val && spend > *best_spend) {
            *best_val = v;
            *best_spend = spend;
            best_e.clear();
            best_e.extend_from_slice(e);
        }
    };
    for_each_product(&e_axes, |e| {
        consider(e, &mut rem_pt, &mut best_val, &mut best_spend, &mut best_e)
    });
    let refine = refinement_axes(eps, &best_e.clone(), inner_points);
    for_each_product(&refine, |e| {
        consider(e, &mut rem_pt, &mut best_val, &mut best_spend, &mut best_e)
    });
    (best_e, best_val)
}

/// Builds the expected-reward tables by backward induction.
///
/// The terminal slot spends everything (`U_T = R(ε, h)`); earlier slots
/// trade the current reward against the interpolated continuation value.
/// Cells within a slot are filled in parallel; slots are sequential.
pub fn build_value_tables(params: &SystemParams, config: &DpConfig) -> Result<ValueTable> {
    params.validate()?;
    if config.energy_grid_points < 2 {
        return Err(Error::InvalidArgument(
            "energy_grid_points must be at least 2".into(),
        ));
    }
    if config.quadrature_order < 1 {
        return Err(Error::InvalidArgument(
            "quadrature_order must be at least 1".into(),
        ));
    }
    if config.inner_opt_points < 2 {
        return Err(Error::InvalidArgument(
            "inner_opt_points must be at least 2".into(),
        ));
    }
    let m = config.energy_grid_points;
    let n = params.n_users;
    let t_slots = params.horizon;
    let total_cells = (m as f64).powi(n as i32) * t_slots as f64;
    if total_cells > DP_CELL_BUDGET as f64 {
        return Err(Error::Capacity(format!(
            "value tables need {total_cells:.3e} grid cells, over the {DP_CELL_BUDGET} budget; \
             reduce energy_grid_points or fall back to the certainty-equivalent policy"
        )));
    }
    let cells = m.pow(n as u32);
    let axes: Vec<Vec<f64>> = params
        .energy_budgets
        .iter()
        .map(|&e| linspace(0.0, e, m))
        .collect();
    let nodes = product_quadrature(params, config.quadrature_order)?;
    let tau_w = params.tau_w();
    let inv_tau_no = 1.0 / params.tau_no();

    let cell_levels = |cell: usize| -> Vec<f64> {
        let mut eps = vec![0.0f64; n];
        let mut rem = cell;
        for axis in (0..n).rev() {
            eps[axis] = axes[axis][rem % m];
            rem /= m;
        }
        eps
    };

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); t_slots];
    // terminal slot: every user transmits with all available energy
    values[t_slots - 1] = (0..cells)
        .into_par_iter()
        .map(|cell| {
            let eps = cell_levels(cell);
            let mut acc = 0.0;
            for (node, &w) in nodes.weights.iter().enumerate() {
                let h = &nodes.gains[node * nodes.n..(node + 1) * nodes.n];
                let s: f64 = h.iter().zip(&eps).map(|(hi, ei)| hi * ei).sum();
                acc += w * tau_w * (1.0 + s * inv_tau_no).log2();
            }
            acc
        })
        .collect();
    for t in (0..t_slots - 1).rev() {
        let next_values = &values[t + 1];
        let computed: Vec<f64> = (0..cells)
            .into_par_iter()
            .map(|cell| {
                let eps = cell_levels(cell);
                let next = Interpolator::new(&axes, next_values);
                cell_expected_value(
                    tau_w,
                    inv_tau_no,
                    &eps,
                    &nodes,
                    &next,
                    config.inner_opt_points,
                )
            })
            .collect();
        values[t] = computed;
    }
    let table = ValueTable {
        params: params.clone(),
        config: *config,
        axes,
        values,
    };
    table.check_invariants()?;
    Ok(table)
}

/// Causal policy executing a built value table: argmax of current reward
/// plus interpolated continuation value, spend-everything at the deadline.
#[derive(Clone)]
pub struct DpPolicy {
    table: Arc<ValueTable>,
}

pub fn dp_policy(
    table: Arc<ValueTable>,
    params: &SystemParams,
    config: &DpConfig,
) -> Result<DpPolicy> {
    if table.params() != params || table.config() != config {
        return Err(Error::InvalidArgument(
            "value table was built for different parameters".into(),
        ));
    }
    Ok(DpPolicy { table })
}

impl CausalPolicy for DpPolicy {
    fn name(&self) -> &'static str {
        "dp_optimal"
    }

    fn allocate(
        &self,
        params: &SystemParams,
        slot: usize,
        state: &EnergyState,
        gains: &[f64],
    ) -> Result<Vec<f64>> {
        if slot + 1 == params.horizon {
            // deadline: transmit with all available energy
            return Ok(state.levels.clone());
        }
        let mut levels = state.levels.clone();
        for (i, level) in levels.iter_mut().enumerate() {
            let cap = params.energy_budgets[i];
            if *level < -ENERGY_TOL || *level > cap + ENERGY_TOL {
                log::warn!(
                    "dp policy state {level} J for user {i} lies outside [0, {cap}]; clamping"
                );
            }
            *level = level.clamp(0.0, cap);
        }
        let next = Interpolator::new(&self.table.axes, &self.table.values[slot + 1]);
        let (e, _) = maximize_for_state(
            params.tau_w(),
            1.0 / params.tau_no(),
            gains,
            &levels,
            &next,
            self.table.config.inner_opt_points,
        );
        Ok(e)
    }
}
