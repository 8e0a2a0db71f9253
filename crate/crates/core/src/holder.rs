//! Grid-sampled Hoelder functions on the circle: the (alpha, xi) seminorm,
//! the past-contraction series Q, and the distortion bound it certifies.
//!
//! Functions are stored as M samples at x_k = k/M and interpreted as
//! 1-periodic piecewise-linear interpolants. The seminorm estimator
//! maximizes |dg| / rho^alpha over grid pairs with rho < xi; for alpha = 1
//! this is the exact seminorm of the interpolant, for alpha < 1 a lower
//! estimate whose gap is controlled empirically by grid refinement.

use crate::driving::OmegaPath;
use crate::errors::{QResult, QuenchedError};
use crate::fiber::{circle_dist, iterate, paired_inverse_branches_n, CirclePoint};

/// Hoelder exponent and pairing radius.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HolderParams {
    pub alpha: f64,
    pub xi: f64,
}

impl HolderParams {
    pub fn new(alpha: f64, xi: f64) -> QResult<Self> {
        let mut violations = Vec::new();
        if !(alpha > 0.0 && alpha <= 1.0) {
            violations.push(format!("holder.alpha: must lie in (0,1], got {alpha}"));
        }
        if !(xi > 0.0 && xi <= 0.25) {
            violations.push(format!("holder.xi: must lie in (0,1/4], got {xi}"));
        }
        if violations.is_empty() {
            Ok(HolderParams { alpha, xi })
        } else {
            Err(QuenchedError::config(violations))
        }
    }
}

impl Default for HolderParams {
    fn default() -> Self {
        HolderParams { alpha: 1.0, xi: 0.25 }
    }
}

/// A grid-sampled function on the circle with piecewise-linear evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct HolderFunction {
    values: Vec<f64>,
}

impl HolderFunction {
    pub fn from_values(values: Vec<f64>) -> QResult<Self> {
        let m = values.len();
        if m < 8 || !m.is_power_of_two() {
            return Err(QuenchedError::config(vec![format!(
                "grid: size must be a power of two >= 8, got {m}"
            )]));
        }
        Ok(HolderFunction { values })
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> QResult<Self> {
        HolderFunction::from_values((0..m).map(|k| f(k as f64 / m as f64)).collect())
    }

    pub fn constant(m: usize, c: f64) -> HolderFunction {
        HolderFunction { values: vec![c; m] }
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// 1-periodic piecewise-linear evaluation; exact at grid points.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let m = self.values.len();
        let t = x.rem_euclid(1.0) * m as f64;
        let k = t as usize;
        let frac = t - k as f64;
        let k = k % m;
        let next = (k + 1) & (m - 1); // m is a power of two
        self.values[k] * (1.0 - frac) + self.values[next] * frac
    }

    /// Supremum norm; attained at a grid point for piecewise-linear data.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Grid mean, which equals the integral of the periodic interpolant.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// v_{alpha,xi}: max over grid pairs with rho < xi of |dg| / rho^alpha.
    pub fn holder_seminorm(&self, p: &HolderParams) -> QResult<f64> {
        let m = self.values.len();
        if 1.0 / m as f64 >= p.xi {
            return Err(QuenchedError::config(vec![format!(
                "grid: spacing 1/{m} must be finer than xi = {}",
                p.xi
            )]));
        }
        let max_lag = ((p.xi * m as f64).ceil() as usize).min(m / 2);
        let mut best = 0.0f64;
        for lag in 1..=max_lag {
            let rho = (lag as f64 / m as f64).min(1.0 - lag as f64 / m as f64);
            if rho >= p.xi {
                continue;
            }
            let inv = rho.powf(-p.alpha);
            let mut worst = 0.0f64;
            for k in 0..m {
                let diff = (self.values[(k + lag) % m] - self.values[k]).abs();
                worst = worst.max(diff);
            }
            best = best.max(worst * inv);
        }
        Ok(best)
    }

    /// Full Hoelder norm ||g||_{alpha,xi} = sup + seminorm.
    pub fn holder_norm(&self, p: &HolderParams) -> QResult<f64> {
        Ok(self.sup_norm() + self.holder_seminorm(p)?)
    }

    pub fn scale(&self, s: f64) -> HolderFunction {
        HolderFunction { values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &HolderFunction) -> HolderFunction {
        debug_assert_eq!(self.grid_size(), other.grid_size());
        HolderFunction {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn offset(&self, c: f64) -> HolderFunction {
        HolderFunction { values: self.values.iter().map(|v| v + c).collect() }
    }
}

/// Truncated evaluation of the past-contraction series
/// Q_omega = sum_{j>=1} H_{-j} * gamma_{-j,j}^{-alpha}, with a certified
/// geometric tail bound.
#[derive(Clone, Copy, Debug)]
pub struct QEstimate {
    pub value: f64,
    pub terms_used: usize,
    pub tail_bound: f64,
}

impl QEstimate {
    /// Conservative upper value including the unexplored tail.
    pub fn upper(&self) -> f64 {
        self.value + self.tail_bound
    }
}

/// Sum the series over the past of the path until the worst-case geometric
/// tail drops below tol * partial sum.
pub fn q_series(path: &OmegaPath, p: &HolderParams, tol: f64) -> QResult<QEstimate> {
    if tol <= 0.0 {
        return Err(QuenchedError::Argument(format!("q_series tol must be > 0, got {tol}")));
    }
    let h_max = path.alphabet().max_holder_bound();
    let gamma_min = path.alphabet().min_expansion();
    let decay = gamma_min.powf(-p.alpha); // < 1 since gamma_min >= 2
    let tail_factor = 1.0 / (1.0 - decay);

    let mut log_gamma = 0.0f64;
    let mut partial = 0.0f64;
    let mut j = 0usize;
    loop {
        j += 1;
        let params = path.params(-(j as i64));
        log_gamma += params.expansion().ln();
        partial += params.holder_bound * (-p.alpha * log_gamma).exp();
        let tail = h_max * decay.powi(j as i32) * tail_factor;
        if tail <= tol * partial {
            return Ok(QEstimate { value: partial, terms_used: j, tail_bound: tail });
        }
        if j > 100_000 {
            return Err(QuenchedError::Convergence { steps: j, residual: tail });
        }
    }
}

/// Outcome of a distortion verification over all paired n-step branches.
#[derive(Clone, Copy, Debug)]
pub struct DistortionReport {
    /// max |S phi(y) - S phi(y')| / (rho^alpha * Q); <= 1 when the bound holds.
    pub worst_ratio: f64,
    pub bound: f64,
    pub branches: usize,
}

/// Verify |S_n phi(y_i) - S_n phi(y_i')| <= rho^alpha(x,x') * Q_{sigma^n omega}
/// over every paired n-step branch, where S_n phi = sum_j phi_j o f^j.
///
/// Each phi_j must satisfy v(phi_j) <= H of the symbol at index j.
pub fn distortion_check(
    path: &OmegaPath,
    n: usize,
    phis: &[HolderFunction],
    x: CirclePoint,
    x_prime: CirclePoint,
    p: &HolderParams,
) -> QResult<DistortionReport> {
    if phis.len() != n {
        return Err(QuenchedError::Argument(format!(
            "need exactly n = {n} summand functions, got {}",
            phis.len()
        )));
    }
    let rho = circle_dist(x, x_prime);
    if rho >= p.xi {
        return Err(QuenchedError::Precondition(format!(
            "distortion check needs rho(x,x') < xi, got {rho}"
        )));
    }
    for (j, phi) in phis.iter().enumerate() {
        let h = path.params(j as i64).holder_bound;
        let v = phi.holder_seminorm(p)?;
        if v > h * (1.0 + 1e-12) {
            return Err(QuenchedError::Precondition(format!(
                "summand {j} has seminorm {v} exceeding its symbol bound {h}"
            )));
        }
    }

    let q = q_series(&path.shift(n as i64), p, 1e-10)?;
    let bound = rho.powf(p.alpha) * q.upper();

    let pairs = paired_inverse_branches_n(path, x, x_prime, n);
    let branches = pairs.len();
    let orbit_sum = |y: CirclePoint| -> f64 {
        let orbit = iterate(path, y, n.saturating_sub(1));
        (0..n).map(|j| phis[j].eval(orbit[j].value())).sum()
    };

    let mut worst = 0.0f64;
    for (y, yp) in pairs {
        let diff = (orbit_sum(y) - orbit_sum(yp)).abs();
        if bound > 0.0 {
            worst = worst.max(diff / (bound + 1e-12));
        } else if diff > 1e-12 {
            worst = f64::INFINITY;
        }
    }
    Ok(DistortionReport { worst_ratio: worst, bound, branches })
}
