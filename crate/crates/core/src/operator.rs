//! Twisted transfer operators over the driving path, their cocycle
//! compositions, and the certification harnesses built on them.
//!
//! An operator maps a grid function g to the weighted branch sum
//! (L g)(x) = sum over preimages y of exp(phi(y) + i t psi(y)) g(y),
//! with phi and psi evaluated through their piecewise-linear interpolants.
//! In the interpolation basis this is an M x M matrix with 2d entries per
//! row; only that branch structure is stored, and the dense matrix is
//! materialized on demand for export. Applications reproduce the dense
//! matrix-vector product exactly.
//!
//! The potential is phi(x) = -ln d + eps cos(2 pi x) per symbol, so the
//! untwisted operator applied to 1 returns exactly 1 when eps = 0.

use std::sync::Arc;

use num_complex::Complex64;

use crate::driving::{OmegaPath, SymbolParams};
use crate::errors::{QResult, QuenchedError};
use crate::fiber::wrap;
use crate::holder::{q_series, HolderFunction, HolderParams, QEstimate};
use crate::measures::MeasureStack;
use crate::rng::CounterRng;
use crate::stats::{linear_fit, LineFit};

/// Bundle of everything needed to build operators along a path: the grid
/// resolution, the Hoelder parameters, and per-symbol potential/observable
/// grids (validated against the per-symbol Hoelder bounds on construction).
#[derive(Clone)]
pub struct Dynamics {
    path: OmegaPath,
    m: usize,
    holder: HolderParams,
    phi_grids: Arc<Vec<HolderFunction>>,
    psi_grids: Arc<Vec<HolderFunction>>,
}

impl Dynamics {
    pub fn new(path: OmegaPath, m: usize, holder: HolderParams) -> QResult<Self> {
        if m < 8 || !m.is_power_of_two() {
            return Err(QuenchedError::config(vec![format!(
                "grid: size must be a power of two >= 8, got {m}"
            )]));
        }
        let mut violations = Vec::new();
        let mut phi_grids = Vec::new();
        let mut psi_grids = Vec::new();
        for (s, params) in path.alphabet().symbols().iter().enumerate() {
            let phi = HolderFunction::from_fn(m, |x| params.potential(x))?;
            let psi = HolderFunction::from_fn(m, |x| params.observable(x))?;
            for (name, grid) in [("potential", &phi), ("observable", &psi)] {
                let v = grid.holder_seminorm(&holder)?;
                if v > params.holder_bound * (1.0 + 1e-12) {
                    violations.push(format!(
                        "alphabet[{s}].H: {name} seminorm {v:.6} exceeds declared bound {}",
                        params.holder_bound
                    ));
                }
            }
            phi_grids.push(phi);
            psi_grids.push(psi);
        }
        if !violations.is_empty() {
            return Err(QuenchedError::config(violations));
        }
        Ok(Dynamics {
            path,
            m,
            holder,
            phi_grids: Arc::new(phi_grids),
            psi_grids: Arc::new(psi_grids),
        })
    }

    pub fn path(&self) -> &OmegaPath {
        &self.path
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    pub fn holder(&self) -> &HolderParams {
        &self.holder
    }

    /// Same dynamics along the shifted path sigma^k(omega).
    pub fn shifted(&self, k: i64) -> Dynamics {
        Dynamics { path: self.path.shift(k), ..self.clone() }
    }

    pub fn potential_grid(&self, symbol: usize) -> &HolderFunction {
        &self.phi_grids[symbol]
    }

    pub fn observable_grid(&self, symbol: usize) -> &HolderFunction {
        &self.psi_grids[symbol]
    }

    /// The twisted operator for the symbol at `step`, using the raw
    /// (uncentered) observable as twist direction. |t| <= 1.
    pub fn operator_at(&self, step: i64, t: f64) -> QResult<TransferOperator> {
        if !(t.is_finite() && t.abs() <= 1.0) {
            return Err(QuenchedError::Argument(format!("twist must satisfy |t| <= 1, got {t}")));
        }
        Ok(self.operator_with(step, t, None))
    }

    /// Untwisted operator for the symbol at `step`.
    pub fn untwisted_at(&self, step: i64) -> TransferOperator {
        self.operator_with(step, 0.0, None)
    }

    /// Operator with an explicit twist grid (used for centered observables).
    pub fn operator_with(
        &self,
        step: i64,
        t: f64,
        psi_override: Option<&HolderFunction>,
    ) -> TransferOperator {
        let sid = self.path.symbol(step);
        let params = self.path.alphabet().symbol(sid);
        let psi = psi_override.unwrap_or(&self.psi_grids[sid]);
        TransferOperator::build(params, self.m, &self.phi_grids[sid], psi, t)
    }

    /// L_omega^n applied to the constant 1 (untwisted), plus its sup norm.
    pub fn ones_image(&self, n: usize) -> (Vec<f64>, f64) {
        let mut v = vec![1.0; self.m];
        for step in 0..n as i64 {
            v = self.untwisted_at(step).apply_real(&v);
        }
        let sup = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        (v, sup)
    }

    /// Q at the path's origin with the default tail tolerance.
    pub fn q_at(&self, offset: i64, tol: f64) -> QResult<QEstimate> {
        q_series(&self.path.shift(offset), &self.holder, tol)
    }
}

/// One twisted transfer operator realized through its branch structure:
/// row r holds the d preimages of x_r with their interpolation offsets and
/// complex weights.
#[derive(Clone, Debug)]
pub struct TransferOperator {
    m: usize,
    d: usize,
    idx: Vec<u32>,
    frac: Vec<f64>,
    w_re: Vec<f64>,
    w_im: Vec<f64>,
    real: bool,
}

impl TransferOperator {
    pub fn build(
        params: &SymbolParams,
        m: usize,
        phi: &HolderFunction,
        psi: &HolderFunction,
        t: f64,
    ) -> TransferOperator {
        let d = params.branch_count as usize;
        let mf = m as f64;
        let real = t == 0.0;
        let mut idx = Vec::with_capacity(m * d);
        let mut frac = Vec::with_capacity(m * d);
        let mut w_re = Vec::with_capacity(m * d);
        let mut w_im = Vec::with_capacity(m * d);
        for r in 0..m {
            let x = r as f64 / mf;
            let u = wrap(x - params.offset);
            for i in 0..d {
                let y = wrap((u + i as f64) / d as f64);
                let ty = y * mf;
                let k = (ty as usize) % m;
                let f = ty - ty.floor();
                let mag = phi.eval(y).exp();
                if real {
                    w_re.push(mag);
                    w_im.push(0.0);
                } else {
                    let phase = t * psi.eval(y);
                    w_re.push(mag * phase.cos());
                    w_im.push(mag * phase.sin());
                }
                idx.push(k as u32);
                frac.push(f);
            }
        }
        TransferOperator { m, d, idx, frac, w_re, w_im, real }
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    /// Divide all weights by s (lambda-normalization).
    pub fn scale_by(&mut self, s: f64) {
        let inv = 1.0 / s;
        for w in self.w_re.iter_mut() {
            *w *= inv;
        }
        for w in self.w_im.iter_mut() {
            *w *= inv;
        }
    }

    #[inline]
    fn lerp(g: &[f64], m: usize, k: usize, f: f64) -> f64 {
        g[k] * (1.0 - f) + g[(k + 1) & (m - 1)] * f
    }

    /// Real application; requires an untwisted operator.
    pub fn apply_real(&self, g: &[f64]) -> Vec<f64> {
        debug_assert!(self.real, "apply_real needs an untwisted operator");
        debug_assert_eq!(g.len(), self.m);
        let mut out = vec![0.0; self.m];
        let d = self.d;
        for r in 0..self.m {
            let mut acc = 0.0;
            let base = r * d;
            for i in 0..d {
                let k = self.idx[base + i] as usize;
                acc += self.w_re[base + i] * Self::lerp(g, self.m, k, self.frac[base + i]);
            }
            out[r] = acc;
        }
        out
    }

    pub fn apply_complex(&self, g: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(g.len(), self.m);
        let m = self.m;
        let d = self.d;
        let mut out = vec![Complex64::ZERO; m];
        for r in 0..m {
            let mut acc = Complex64::ZERO;
            let base = r * d;
            for i in 0..d {
                let k = self.idx[base + i] as usize;
                let f = self.frac[base + i];
                let gv = g[k] * (1.0 - f) + g[(k + 1) & (m - 1)] * f;
                acc += Complex64::new(self.w_re[base + i], self.w_im[base + i]) * gv;
            }
            out[r] = acc;
        }
        out
    }

    /// Grid-function application (the matrix-vector product on the
    /// interpolation basis). Grid mismatch is an argument error.
    pub fn apply_fn(&self, g: &HolderFunction) -> QResult<HolderFunction> {
        if g.grid_size() != self.m {
            return Err(QuenchedError::Argument(format!(
                "grid mismatch: operator on {} points, function on {}",
                self.m,
                g.grid_size()
            )));
        }
        if !self.real {
            return Err(QuenchedError::Argument(
                "twisted operators act on complex grids; use apply_complex".into(),
            ));
        }
        HolderFunction::from_values(self.apply_real(g.values()))
    }

    /// Adjoint action on grid weights (untwisted only): redistributes the
    /// mass of u along the branch structure, so that
    /// sum_k (L* u)_k v_k == sum_r u_r (L v)(x_r) exactly.
    pub fn adjoint_apply(&self, u: &[f64]) -> Vec<f64> {
        debug_assert!(self.real);
        debug_assert_eq!(u.len(), self.m);
        let m = self.m;
        let d = self.d;
        let mut out = vec![0.0; m];
        for r in 0..m {
            let base = r * d;
            let ur = u[r];
            for i in 0..d {
                let k = self.idx[base + i] as usize;
                let f = self.frac[base + i];
                let w = self.w_re[base + i] * ur;
                out[k] += w * (1.0 - f);
                out[(k + 1) & (m - 1)] += w * f;
            }
        }
        out
    }

    /// Materialize the dense M x M matrix (row-major).
    pub fn dense(&self) -> Vec<Complex64> {
        let m = self.m;
        let mut a = vec![Complex64::ZERO; m * m];
        for r in 0..m {
            let base = r * self.d;
            for i in 0..self.d {
                let k = self.idx[base + i] as usize;
                let f = self.frac[base + i];
                let w = Complex64::new(self.w_re[base + i], self.w_im[base + i]);
                a[r * m + k] += w * (1.0 - f);
                a[r * m + ((k + 1) & (m - 1))] += w * f;
            }
        }
        a
    }

    /// Dense export as CSV rows `row,col,re,im` (complex as two columns).
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "row,col,re,im")?;
        let dense = self.dense();
        for r in 0..self.m {
            for c in 0..self.m {
                let z = dense[r * self.m + c];
                if z != Complex64::ZERO {
                    writeln!(w, "{r},{c},{},{}", z.re, z.im)?;
                }
            }
        }
        Ok(())
    }
}

/// An ordered operator cocycle L^{t_{n-1}} o ... o L^{t_0} along the path.
pub struct OperatorCocycle {
    ops: Vec<TransferOperator>,
    twists: Vec<f64>,
}

impl OperatorCocycle {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn twists(&self) -> &[f64] {
        &self.twists
    }

    /// Apply to a complex grid: sequential application in path order.
    pub fn apply(&self, g: &[Complex64]) -> Vec<Complex64> {
        let mut v = g.to_vec();
        for op in &self.ops {
            v = op.apply_complex(&v);
        }
        v
    }

    pub fn apply_fn(&self, g: &HolderFunction) -> Vec<Complex64> {
        self.apply(&complexify(g.values()))
    }
}

/// Build the n-step twisted cocycle at the path origin. Twists must lie in
/// [-1, 1] and the raw per-symbol observable is the twist direction.
pub fn compose_cocycle(dynamics: &Dynamics, twists: &[f64]) -> QResult<OperatorCocycle> {
    for (j, t) in twists.iter().enumerate() {
        if !(t.is_finite() && t.abs() <= 1.0) {
            return Err(QuenchedError::Argument(format!(
                "twist {j} out of range: |{t}| > 1"
            )));
        }
    }
    let ops = (0..twists.len())
        .map(|j| dynamics.operator_with(j as i64, twists[j], None))
        .collect();
    Ok(OperatorCocycle { ops, twists: twists.to_vec() })
}

pub fn complexify(g: &[f64]) -> Vec<Complex64> {
    g.iter().map(|v| Complex64::new(*v, 0.0)).collect()
}

pub fn complex_sup_norm(g: &[Complex64]) -> f64 {
    g.iter().fold(0.0f64, |a, z| a.max(z.norm()))
}

/// Hoelder seminorm of a complex grid function (moduli of differences).
pub fn complex_holder_seminorm(g: &[Complex64], p: &HolderParams) -> f64 {
    let m = g.len();
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
            worst = worst.max((g[(k + lag) % m] - g[k]).norm());
        }
        best = best.max(worst * inv);
    }
    best
}

pub fn complex_holder_norm(g: &[Complex64], p: &HolderParams) -> f64 {
    complex_sup_norm(g) + complex_holder_seminorm(g, p)
}

/// One contraction-inequality certificate: the Hoelder norm of a twisted
/// cocycle image against the contracted-seminorm bound
/// ||L^n 1||_inf * (v(g) gamma^{-alpha} + (1 + 2 Q)(1 + T) ||g||_inf).
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct LYReport {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub slack: f64,
}

/// Evaluate both sides of the contraction inequality for a twist vector
/// sampled uniformly from [-T, T]^n (or supplied).
pub fn ly_check(
    dynamics: &Dynamics,
    n: usize,
    t_cap: f64,
    g: &HolderFunction,
    twists: Option<&[f64]>,
    rng: &CounterRng,
) -> QResult<LYReport> {
    if t_cap <= 0.0 || t_cap > 1.0 {
        return Err(QuenchedError::Argument(format!(
            "twist cap must lie in (0, 1], got {t_cap}"
        )));
    }
    let sampled: Vec<f64>;
    let twists = match twists {
        Some(ts) => {
            if ts.len() != n {
                return Err(QuenchedError::Argument(format!(
                    "twist vector length {} != n = {n}",
                    ts.len()
                )));
            }
            ts
        }
        None => {
            sampled = (0..n).map(|j| (rng.uniform_at(j as u64) * 2.0 - 1.0) * t_cap).collect();
            &sampled
        }
    };
    let cocycle = compose_cocycle(dynamics, twists)?;
    let image = cocycle.apply_fn(g);
    let p = dynamics.holder();
    let lhs = complex_holder_norm(&image, p);

    let (_, ones_sup) = dynamics.ones_image(n);
    let v_g = g.holder_seminorm(p)?;
    let sup_g = g.sup_norm();
    let gamma_neg = dynamics.path().gamma_pow_neg_alpha(n, p.alpha);
    let q_shift = dynamics.q_at(n as i64, 1e-10)?;
    let rhs = ones_sup * (v_g * gamma_neg + (1.0 + 2.0 * q_shift.upper()) * (1.0 + t_cap) * sup_g);

    let satisfied = lhs <= rhs * (1.0 + 1e-8);
    Ok(LYReport { lhs, rhs, satisfied, slack: rhs - lhs })
}

/// Norm-bound certificate over a test dictionary: the estimated operator
/// norm (a maximum of Rayleigh-style ratios, hence a lower estimate of the
/// true norm) against 4 (1 + Q) ||L^n 1||_inf.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct NormBoundReport {
    pub norm_estimate: f64,
    pub bound: f64,
    pub certified: bool,
    pub dictionary_size: usize,
}

/// Unit-Hoelder-norm test dictionary: constants, low harmonics, and smooth
/// randomized samples.
pub fn test_dictionary(
    m: usize,
    p: &HolderParams,
    rng: &CounterRng,
    random_members: usize,
) -> Vec<HolderFunction> {
    const TAU: f64 = std::f64::consts::TAU;
    let mut dict: Vec<HolderFunction> = vec![HolderFunction::constant(m, 1.0)];
    for k in 1..=3u32 {
        dict.push(HolderFunction::from_fn(m, |x| (TAU * k as f64 * x).cos()).unwrap());
        dict.push(HolderFunction::from_fn(m, |x| (TAU * k as f64 * x).sin()).unwrap());
    }
    for r in 0..random_members {
        let coeffs: Vec<f64> = (0..8)
            .map(|j| (rng.uniform_at((r * 8 + j) as u64) * 2.0 - 1.0) / (1 + j / 2) as f64)
            .collect();
        dict.push(
            HolderFunction::from_fn(m, |x| {
                (0..4)
                    .map(|k| {
                        coeffs[2 * k] * (TAU * (k + 1) as f64 * x).cos()
                            + coeffs[2 * k + 1] * (TAU * (k + 1) as f64 * x).sin()
                    })
                    .sum()
            })
            .unwrap(),
        );
    }
    dict.into_iter()
        .map(|g| {
            let norm = g.holder_norm(p).expect("dictionary grids are fine enough");
            g.scale(1.0 / norm)
        })
        .collect()
}

/// Certify ||L^{t,n}|| <= 4 (1 + Q_{sigma^n omega}) ||L^n 1||_inf by
/// maximizing over the dictionary.
pub fn norm_bound_check(
    dynamics: &Dynamics,
    n: usize,
    twists: &[f64],
    dictionary: &[HolderFunction],
) -> QResult<NormBoundReport> {
    if twists.len() != n {
        return Err(QuenchedError::Argument(format!(
            "twist vector length {} != n = {n}",
            twists.len()
        )));
    }
    let cocycle = compose_cocycle(dynamics, twists)?;
    let p = dynamics.holder();
    let mut norm_estimate = 0.0f64;
    for g in dictionary {
        let image = cocycle.apply_fn(g);
        // Dictionary members are unit-norm, so the image norm is the ratio.
        norm_estimate = norm_estimate.max(complex_holder_norm(&image, p));
    }
    let (_, ones_sup) = dynamics.ones_image(n);
    let q_shift = dynamics.q_at(n as i64, 1e-10)?;
    let bound = 4.0 * (1.0 + q_shift.upper()) * ones_sup;
    Ok(NormBoundReport {
        norm_estimate,
        bound,
        certified: norm_estimate <= bound * (1.0 + 1e-8),
        dictionary_size: dictionary.len(),
    })
}

/// n-fold normalized application: returns (L g h) / (lambda h o sigma)
/// iterated, so the constant 1 is fixed up to the stack residual.
pub fn normalized_apply(
    stack: &MeasureStack,
    offset: i64,
    g: &HolderFunction,
    n: usize,
) -> QResult<HolderFunction> {
    let mut v = stack.normalized_step_in(offset, g.values().to_vec(), n)?;
    HolderFunction::from_values(std::mem::take(&mut v))
}

/// Fitted decay surrogate for the sup norm of normalized cocycle images of
/// a centered function.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct DecayFit {
    /// Fitted decay rate (-slope of log sup norms); +inf when the image
    /// vanishes immediately.
    pub lambda_hat: f64,
    /// exp(intercept) normalized by max(1, 1/Q) ||g||.
    pub k_hat: f64,
    pub r_squared: f64,
    /// Set when images hit exact zero before n_max; the fit then covers
    /// only the nonzero prefix.
    pub instant_decay: bool,
    pub points_used: usize,
}

/// Fit log ||Lhat^n g||_inf against n for a mu-centered g, starting the
/// normalized cocycle at path offset `base`.
pub fn decay_rate_from(
    stack: &MeasureStack,
    dynamics: &Dynamics,
    base: i64,
    g: &HolderFunction,
    n_max: usize,
) -> QResult<DecayFit> {
    let mean = stack.mu_integral(base, g.values())?;
    if mean.abs() > 1e-9 {
        return Err(QuenchedError::Precondition(format!(
            "decay fit needs a mu-centered function, mean = {mean:.3e}"
        )));
    }
    let mut norms = Vec::with_capacity(n_max);
    let mut v = g.values().to_vec();
    for step in 0..n_max as i64 {
        v = stack.normalized_step(base + step, v)?;
        norms.push(v.iter().fold(0.0f64, |a, x| a.max(x.abs())));
    }
    let usable: Vec<(f64, f64)> = norms
        .iter()
        .enumerate()
        .take_while(|(_, nv)| **nv > 1e-14)
        .map(|(i, nv)| ((i + 1) as f64, nv.ln()))
        .collect();
    let instant_decay = usable.len() < norms.len();
    if usable.len() < 2 {
        // No rate can be fit from fewer than two nonzero norms.
        return Ok(DecayFit {
            lambda_hat: f64::INFINITY,
            k_hat: 0.0,
            r_squared: 1.0,
            instant_decay: true,
            points_used: usable.len(),
        });
    }
    let xs: Vec<f64> = usable.iter().map(|(n, _)| *n).collect();
    let ys: Vec<f64> = usable.iter().map(|(_, l)| *l).collect();
    let LineFit { slope, intercept, r_squared } = linear_fit(&xs, &ys);
    let q = dynamics.q_at(base, 1e-10)?;
    let scale = (1.0f64).max(1.0 / q.value) * g.holder_norm(dynamics.holder())?;
    Ok(DecayFit {
        lambda_hat: -slope,
        k_hat: intercept.exp() / scale,
        r_squared,
        instant_decay,
        points_used: usable.len(),
    })
}

/// Decay fit from the path origin.
pub fn decay_rate(
    stack: &MeasureStack,
    dynamics: &Dynamics,
    g: &HolderFunction,
    n_max: usize,
) -> QResult<DecayFit> {
    decay_rate_from(stack, dynamics, 0, g, n_max)
}
