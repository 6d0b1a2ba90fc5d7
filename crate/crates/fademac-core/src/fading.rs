//! Channel-gain distributions: sampling, moments and quadrature rules.
//!
//! Gains are drawn by inverse-CDF transform of an externally supplied
//! uniform draw, so the RNG lives in the simulator and everything here is
//! a pure function. The module also provides the expectation primitives
//! used by the threshold recursion (`expected_max_with`) and by the DP
//! value-table construction (`quadrature_nodes`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported Gauss-Laguerre order. The Newton root solver is
/// accurate in f64 well past this, but orders beyond it are never useful
/// for the expectations taken here.
pub const MAX_QUADRATURE_ORDER: usize = 64;

/// Serialized form of a distribution; the cached mean is recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FadingKind {
    /// Exponential with rate `lambda > 0`; mean `1/lambda`.
    Exponential { rate: f64 },
    /// A constant gain (time-invariant channel).
    Deterministic { value: f64 },
    /// Piecewise-linear inverse CDF over `(u, x)` knots with `u` strictly
    /// increasing from 0 to 1 and `x` non-decreasing.
    TabulatedInverseCdf { grid: Vec<(f64, f64)> },
}

/// A channel-gain distribution descriptor with its cached mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FadingKind", into = "FadingKind")]
pub struct FadingDistribution {
    kind: FadingKind,
    mean: f64,
}

impl TryFrom<FadingKind> for FadingDistribution {
    type Error = Error;
    fn try_from(kind: FadingKind) -> Result<Self> {
        FadingDistribution::new(kind)
    }
}

impl From<FadingDistribution> for FadingKind {
    fn from(dist: FadingDistribution) -> FadingKind {
        dist.kind
    }
}

impl FadingDistribution {
    pub fn new(kind: FadingKind) -> Result<Self> {
        let mean = match &kind {
            FadingKind::Exponential { rate } => {
                if !rate.is_finite() || *rate <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "exponential rate must be positive and finite, got {rate}"
                    )));
                }
                1.0 / rate
            }
            FadingKind::Deterministic { value } => {
                if !value.is_finite() || *value < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "deterministic gain must be non-negative and finite, got {value}"
                    )));
                }
                *value
            }
            FadingKind::TabulatedInverseCdf { grid } => validate_tabulated(grid)?,
        };
        Ok(Self { kind, mean })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(FadingKind::Exponential { rate })
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        Self::new(FadingKind::Deterministic { value })
    }

    pub fn tabulated_inverse_cdf(grid: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(FadingKind::TabulatedInverseCdf { grid })
    }

    pub fn kind(&self) -> &FadingKind {
        &self.kind
    }

    /// Mean gain `h_o = ∫ x dF_H(x)`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Inverse-CDF sample for a uniform draw in `[0, 1)`.
    pub fn sample(&self, uniform_draw: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&uniform_draw) {
            return Err(Error::InvalidArgument(format!(
                "uniform draw must lie in [0, 1), got {uniform_draw}"
            )));
        }
        Ok(match &self.kind {
            FadingKind::Exponential { rate } => -(-uniform_draw).ln_1p() / rate,
            FadingKind::Deterministic { value } => *value,
            FadingKind::TabulatedInverseCdf { grid } => interp_inverse_cdf(grid, uniform_draw),
        })
    }

    /// `E[max(H, floor)]`, the building block of the one-shot threshold
    /// recursion. Exact for exponential (`floor + e^{-λ·floor}/λ`) and
    /// deterministic kinds; piecewise-linear exact for tabulated ones.
    pub fn expected_max_with(&self, floor: f64) -> Result<f64> {
        if !floor.is_finite() || floor < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "floor must be non-negative and finite, got {floor}"
            )));
        }
        Ok(match &self.kind {
            FadingKind::Exponential { rate } => floor + (-rate * floor).exp() / rate,
            FadingKind::Deterministic { value } => value.max(floor),
            FadingKind::TabulatedInverseCdf { grid } => {
                let mut acc = 0.0;
                for seg in grid.windows(2) {
                    let (u0, x0) = seg[0];
                    let (u1, x1) = seg[1];
                    let du = u1 - u0;
                    if x1 <= floor {
                        acc += floor * du;
                    } else if x0 >= floor {
                        acc += du * (x0 + x1) * 0.5;
                    } else {
                        // the linear segment crosses the floor
                        let uc = u0 + du * (floor - x0) / (x1 - x0);
                        acc += floor * (uc - u0) + (u1 - uc) * (floor + x1) * 0.5;
                    }
                }
                acc
            }
        })
    }

    /// Nodes and probability weights for `E[f(H)] ≈ Σ w_k f(x_k)`.
    ///
    /// Exponential kinds use the Gauss-Laguerre rule scaled by `1/λ`;
    /// tabulated kinds use equal-weight nodes at the midpoints of `order`
    /// probability strata; a deterministic gain is a single unit-mass node.
    pub fn quadrature_nodes(&self, order: usize) -> Result<Vec<(f64, f64)>> {
        if order < 1 {
            return Err(Error::InvalidArgument(
                "quadrature order must be at least 1".into(),
            ));
        }
        match &self.kind {
            FadingKind::Deterministic { value } => Ok(vec![(*value, 1.0)]),
            FadingKind::Exponential { rate } => {
                if order > MAX_QUADRATURE_ORDER {
                    return Err(Error::Unsupported(format!(
                        "Gauss-Laguerre order {order} exceeds the supported maximum {MAX_QUADRATURE_ORDER}"
                    )));
                }
                let mut pairs = gauss_laguerre(order)?;
                for (x, _) in pairs.iter_mut() {
                    *x /= rate;
                }
                Ok(pairs)
            }
            FadingKind::TabulatedInverseCdf { grid } => {
                let w = 1.0 / order as f64;
                (0..order)
                    .map(|k| {
                        let u = (k as f64 + 0.5) * w;
                        Ok((interp_inverse_cdf(grid, u), w))
                    })
                    .collect()
            }
        }
    }
}

fn validate_tabulated(grid: &[(f64, f64)]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "tabulated inverse CDF needs at least two (u, x) knots".into(),
        ));
    }
    if grid[0].0 != 0.0 || grid[grid.len() - 1].0 != 1.0 {
        return Err(Error::InvalidArgument(
            "tabulated inverse CDF must cover u = 0 to u = 1".into(),
        ));
    }
    for seg in grid.windows(2) {
        if !(seg[1].0 > seg[0].0) {
            return Err(Error::InvalidArgument(
                "tabulated inverse CDF u-knots must be strictly increasing".into(),
            ));
        }
        if seg[1].1 < seg[0].1 {
            return Err(Error::InvalidArgument(
                "tabulated inverse CDF x-values must be non-decreasing".into(),
            ));
        }
    }
    for &(u, x) in grid {
        if !u.is_finite() || !x.is_finite() || x < 0.0 {
            return Err(Error::InvalidArgument(
                "tabulated inverse CDF knots must be finite with x >= 0".into(),
            ));
        }
    }
    // mean = ∫_0^1 x(u) du, exact trapezoid over the linear segments
    let mean = grid
        .windows(2)
        .map(|seg| (seg[1].0 - seg[0].0) * (seg[0].1 + seg[1].1) * 0.5)
        .sum();
    Ok(mean)
}

fn interp_inverse_cdf(grid: &[(f64, f64)], u: f64) -> f64 {
    // grid is validated: u-knots strictly increasing from 0 to 1
    let idx = match grid.binary_search_by(|&(gu, _)| gu.partial_cmp(&u).unwrap()) {
        Ok(i) => return grid[i].1,
        Err(i) => i,
    };
    let (u0, x0) = grid[idx - 1];
    let (u1, x1) = grid[idx];
    x0 + (x1 - x0) * (u - u0) / (u1 - u0)
}

/// Gauss-Laguerre nodes and weights for `∫_0^∞ f(x) e^{-x} dx ≈ Σ w_k f(x_k)`.
///
/// Newton iteration on the Laguerre three-term recurrence; weights come from
/// the standard `w = -1 / (n · L_{n-1}(x) · L_n'(x))` identity and sum to 1.
pub fn gauss_laguerre(n: usize) -> Result<Vec<(f64, f64)>> {
    const MAX_NEWTON: usize = 60;
    const EPS: f64 = 1e-14;
    let nf = n as f64;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut z = 0.0f64;
    for i in 0..n {
        // initial guesses from Stroud & Secrest, as used in the classic
        // gaulag routine
        if i == 0 {
            z = 3.0 / (1.0 + 2.4 * nf);
        } else if i == 1 {
            z += 15.0 / (1.0 + 2.5 * nf);
        } else {
            let ai = i as f64 - 1.0;
            z += (1.0 + 2.55 * ai) / (1.9 * ai) * (z - pairs[i - 2].0);
        }
        let mut p2 = 0.0;
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..MAX_NEWTON {
            let mut p1 = 1.0;
            p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0 - z) * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (p1 - p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Unsupported(format!(
                "Gauss-Laguerre root solve failed to converge for order {n}"
            )));
        }
        let w = -1.0 / (pp * nf * p2);
        pairs.push((z, w));
    }
    Ok(pairs)
}
