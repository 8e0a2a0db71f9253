//! Equivariant triplets (lambda, h, nu) and fiber measures mu = h d(nu).
//!
//! h is obtained by pulling the constant function forward from the past
//! (h <- normalized L^n 1 along sigma^{-n} omega), nu by adjoint iteration
//! of grid weights from the future, and lambda as the mass nu(L 1). Both
//! iterations converge geometrically thanks to decay of correlations; the
//! build monitors convergence by doubling the relaxation horizon until h
//! is Cauchy in sup norm, and errors out at the cap instead of assuming
//! convergence.
//!
//! A stack holds a working window of offsets. The measures are represented
//! as grid weights (nu against the normalized grid measure), so adjoint
//! identities hold exactly in quadrature and the normalized operator
//! preserves discrete fiber means to machine precision.

use crate::errors::{QResult, QuenchedError};
use crate::fiber::{wrap, CirclePoint};
use crate::holder::HolderFunction;
#[cfg(test)]
use crate::holder::HolderParams;
use crate::operator::Dynamics;
use crate::rng::CounterRng;

/// The random eigentriplet at one offset.
#[derive(Clone, Debug)]
pub struct EquivariantTriplet {
    pub lambda: f64,
    pub h: HolderFunction,
    /// nu as grid weights >= 0 with total mass 1; nu(h) = 1.
    pub nu: Vec<f64>,
    /// sup norm of L h - lambda h o sigma at this offset.
    pub residual: f64,
}

/// Triplets over a working window of path offsets, with the mu weights
/// derived from them.
pub struct MeasureStack {
    dynamics: Dynamics,
    lo: i64,
    hi: i64,
    /// h, nu, mu weights stored for offsets lo ..= hi+1.
    h: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    /// lambda and eigen residual for offsets lo ..= hi.
    lambda: Vec<f64>,
    residual: Vec<f64>,
    relax_used: usize,
    lambda_folded: bool,
}

impl MeasureStack {
    /// Build triplets for offsets in [lo, hi]. `n_relax` is the initial
    /// relaxation horizon, doubled until successive h estimates agree within
    /// `tol` in sup norm (capped at `relax_cap`).
    pub fn build(
        dynamics: &Dynamics,
        lo: i64,
        hi: i64,
        n_relax: usize,
        tol: f64,
        relax_cap: usize,
    ) -> QResult<MeasureStack> {
        if lo > hi {
            return Err(QuenchedError::Argument(format!("empty window [{lo}, {hi}]")));
        }
        if n_relax == 0 {
            return Err(QuenchedError::Argument("n_relax must be >= 1".into()));
        }
        let mut relax = n_relax;
        let mut previous: Option<Vec<Vec<f64>>> = None;
        loop {
            let (h, nu, lambda) = sweep(dynamics, lo, hi, relax);
            if let Some(prev) = &previous {
                let diff = h
                    .iter()
                    .zip(prev.iter())
                    .map(|(a, b)| {
                        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max)
                    })
                    .fold(0.0f64, f64::max);
                if diff < tol {
                    return Ok(Self::assemble(dynamics.clone(), lo, hi, h, nu, lambda, relax));
                }
                if relax >= relax_cap {
                    return Err(QuenchedError::Convergence { steps: relax, residual: diff });
                }
            }
            previous = Some(h);
            relax = (relax * 2).min(relax_cap.max(relax + 1));
        }
    }

    fn assemble(
        dynamics: Dynamics,
        lo: i64,
        hi: i64,
        h: Vec<Vec<f64>>,
        nu: Vec<Vec<f64>>,
        lambda: Vec<f64>,
        relax_used: usize,
    ) -> MeasureStack {
        let mu = h
            .iter()
            .zip(nu.iter())
            .map(|(hj, nj)| hj.iter().zip(nj.iter()).map(|(a, b)| a * b).collect())
            .collect();
        let mut stack = MeasureStack {
            dynamics,
            lo,
            hi,
            h,
            nu,
            mu,
            lambda,
            residual: Vec::new(),
            relax_used,
            lambda_folded: false,
        };
        stack.residual = (lo..=hi)
            .map(|j| {
                let image = stack.dynamics.untwisted_at(j).apply_real(stack.h_at(j));
                let lam = stack.lambda[(j - lo) as usize];
                let next = stack.h_at(j + 1);
                image
                    .iter()
                    .zip(next.iter())
                    .map(|(a, b)| (a - lam * b).abs())
                    .fold(0.0f64, f64::max)
            })
            .collect();
        stack
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn window(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    pub fn relax_used(&self) -> usize {
        self.relax_used
    }

    pub fn lambda_folded(&self) -> bool {
        self.lambda_folded
    }

    fn slot(&self, offset: i64) -> usize {
        debug_assert!(
            offset >= self.lo && offset <= self.hi + 1,
            "offset {offset} outside stored window [{}, {}]",
            self.lo,
            self.hi + 1
        );
        (offset - self.lo) as usize
    }

    pub fn h_at(&self, offset: i64) -> &[f64] {
        &self.h[self.slot(offset)]
    }

    pub fn nu_at(&self, offset: i64) -> &[f64] {
        &self.nu[self.slot(offset)]
    }

    pub fn mu_at(&self, offset: i64) -> &[f64] {
        &self.mu[self.slot(offset)]
    }

    /// Raw eigenvalue estimate at an offset in [lo, hi].
    pub fn lambda_at(&self, offset: i64) -> f64 {
        debug_assert!(offset >= self.lo && offset <= self.hi);
        self.lambda[(offset - self.lo) as usize]
    }

    /// Effective eigenvalue after an optional normalize-lambda pass.
    pub fn effective_lambda(&self, offset: i64) -> f64 {
        if self.lambda_folded {
            1.0
        } else {
            self.lambda_at(offset)
        }
    }

    pub fn max_eigen_residual(&self) -> f64 {
        self.residual.iter().copied().fold(0.0, f64::max)
    }

    pub fn eigen_residual_at(&self, offset: i64) -> f64 {
        self.residual[(offset - self.lo) as usize]
    }

    pub fn triplet(&self, offset: i64) -> EquivariantTriplet {
        EquivariantTriplet {
            lambda: self.lambda_at(offset),
            h: HolderFunction::from_values(self.h_at(offset).to_vec())
                .expect("stack grids are valid"),
            nu: self.nu_at(offset).to_vec(),
            residual: self.eigen_residual_at(offset),
        }
    }

    /// Fold the eigenvalues into the operators: afterwards every per-step
    /// application divides by lambda, re-estimation returns 1, and iterated
    /// images of 1 stay O(1).
    pub fn normalize_lambda(mut self) -> MeasureStack {
        self.lambda_folded = true;
        self
    }

    /// nu_{j+1}(L_j 1) / effective lambda: equals the stored eigenvalue
    /// before folding and exactly 1 after.
    pub fn reestimate_lambda(&self, offset: i64) -> f64 {
        let ones = vec![1.0; self.dynamics.grid_size()];
        let image = self.dynamics.untwisted_at(offset).apply_real(&ones);
        let next = self.nu_at(offset + 1);
        let mass: f64 = next.iter().zip(image.iter()).map(|(n, v)| n * v).sum();
        mass / if self.lambda_folded { self.lambda_at(offset) } else { 1.0 }
    }

    /// sup norms of (L/lambda)^n 1 for n = 1..=n_max, the boundedness
    /// diagnostic for the normalized cocycle.
    pub fn normalized_ones_sups(&self, n_max: usize) -> Vec<f64> {
        let mut v = vec![1.0; self.dynamics.grid_size()];
        let mut sups = Vec::with_capacity(n_max);
        for j in 0..n_max as i64 {
            v = self.dynamics.untwisted_at(j).apply_real(&v);
            let lam = self.lambda_at(j);
            for x in v.iter_mut() {
                *x /= lam;
            }
            sups.push(v.iter().fold(0.0f64, |a, x| a.max(x.abs())));
        }
        sups
    }

    /// Integral of grid values against mu at an offset.
    pub fn mu_integral(&self, offset: i64, values: &[f64]) -> QResult<f64> {
        if offset < self.lo || offset > self.hi + 1 {
            return Err(QuenchedError::State(format!(
                "offset {offset} outside the built window [{}, {}]",
                self.lo,
                self.hi + 1
            )));
        }
        Ok(self.mu_at(offset).iter().zip(values.iter()).map(|(w, v)| w * v).sum())
    }

    /// One twisted normalized step on a complex grid:
    /// v -> L_j^{i t psi}(v h_j) / (lambda_j h_{j+1}).
    pub fn normalized_twisted_step(
        &self,
        offset: i64,
        v: Vec<num_complex::Complex64>,
        twist: f64,
        psi: &HolderFunction,
    ) -> QResult<Vec<num_complex::Complex64>> {
        if offset < self.lo || offset >= self.hi + 1 {
            return Err(QuenchedError::State(format!(
                "normalized twisted step at {offset} outside [{}, {})",
                self.lo,
                self.hi + 1
            )));
        }
        let h = self.h_at(offset);
        let prod: Vec<num_complex::Complex64> =
            v.iter().zip(h.iter()).map(|(a, b)| a * b).collect();
        let op = self.dynamics.operator_with(offset, twist, Some(psi));
        let mut image = op.apply_complex(&prod);
        let lam = self.lambda_at(offset);
        let h_next = self.h_at(offset + 1);
        for (x, hn) in image.iter_mut().zip(h_next.iter()) {
            *x /= lam * hn;
        }
        Ok(image)
    }

    /// One normalized step: v -> L_j(v h_j) / (lambda_j h_{j+1}).
    pub fn normalized_step(&self, offset: i64, v: Vec<f64>) -> QResult<Vec<f64>> {
        if offset < self.lo || offset >= self.hi + 1 {
            return Err(QuenchedError::State(format!(
                "normalized step at {offset} needs h at {} inside [{}, {}]",
                offset + 1,
                self.lo,
                self.hi + 1
            )));
        }
        let h = self.h_at(offset);
        let prod: Vec<f64> = v.iter().zip(h.iter()).map(|(a, b)| a * b).collect();
        let mut image = self.dynamics.untwisted_at(offset).apply_real(&prod);
        let lam = self.lambda_at(offset);
        let h_next = self.h_at(offset + 1);
        for (x, hn) in image.iter_mut().zip(h_next.iter()) {
            *x /= lam * hn;
        }
        Ok(image)
    }

    /// n normalized steps starting at `offset`.
    pub fn normalized_step_in(&self, offset: i64, v: Vec<f64>, n: usize) -> QResult<Vec<f64>> {
        let mut v = v;
        for j in 0..n as i64 {
            v = self.normalized_step(offset + j, v)?;
        }
        Ok(v)
    }

    /// |integral of g o f_j against mu_j minus integral of g against
    /// mu_{j+1}|: the equivariance residual for one test function.
    pub fn equivariance_residual(&self, offset: i64, g: &HolderFunction) -> QResult<f64> {
        let m = self.dynamics.grid_size();
        let params = self.dynamics.path().params(offset);
        let d = params.branch_count as f64;
        let w = self.mu_at(offset);
        let mut lhs = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let x = k as f64 / m as f64;
            lhs += wk * g.eval(wrap(d * x + params.offset));
        }
        let rhs = self.mu_integral(offset + 1, g.values())?;
        Ok((lhs - rhs).abs())
    }

    /// mu as a piecewise-linear probability density (mean exactly 1).
    pub fn mu_density(&self, offset: i64) -> QResult<HolderFunction> {
        let m = self.dynamics.grid_size() as f64;
        let w = self.mu_at(offset);
        let mut values: Vec<f64> = w.iter().map(|x| (x * m).max(0.0)).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if mean <= 0.0 {
            return Err(QuenchedError::State("mu weights have no mass".into()));
        }
        for v in values.iter_mut() {
            *v /= mean;
        }
        HolderFunction::from_values(values)
    }

    /// Draw N points from mu by inverse CDF of the piecewise-linear density.
    /// Deterministic in (stack, seed); `stratified` uses (i + u_i)/N grids.
    pub fn sample_mu(
        &self,
        offset: i64,
        n: usize,
        rng: &CounterRng,
        stratified: bool,
    ) -> QResult<Vec<CirclePoint>> {
        let density = self.mu_density(offset)?;
        let sampler = InverseCdfSampler::new(&density);
        Ok((0..n)
            .map(|i| {
                let u = if stratified {
                    (i as f64 + rng.uniform_at(i as u64)) / n as f64
                } else {
                    rng.uniform_at(i as u64)
                };
                sampler.sample(u)
            })
            .collect())
    }

    /// Forward walker over mu weights, valid past the stored window.
    pub fn mu_walker(&self, start: i64) -> QResult<MuWalker<'_>> {
        if start < self.lo || start > self.hi + 1 {
            return Err(QuenchedError::State(format!(
                "walker start {start} outside the built window"
            )));
        }
        let m = self.dynamics.grid_size();
        let alphabet = self.dynamics.path().alphabet();
        let transport = alphabet
            .symbols()
            .iter()
            .map(|params| {
                // Pushforward of a density under x -> (dx + b) mod 1 is the
                // branch average: weights 1/d, no potential.
                let flat = HolderFunction::constant(m, -(params.branch_count as f64).ln());
                crate::operator::TransferOperator::build(params, m, &flat, &flat, 0.0)
            })
            .collect();
        Ok(MuWalker { stack: self, offset: start, weights: self.mu_at(start).to_vec(), transport })
    }
}

/// Inverse-CDF sampler for a piecewise-linear circle density.
pub struct InverseCdfSampler {
    cdf: Vec<f64>,
    density: Vec<f64>,
}

impl InverseCdfSampler {
    pub fn new(density: &HolderFunction) -> InverseCdfSampler {
        let vals = density.values();
        let m = vals.len();
        let mut cdf = Vec::with_capacity(m + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for k in 0..m {
            let next = vals[(k + 1) % m];
            acc += (vals[k] + next) / (2.0 * m as f64);
            cdf.push(acc);
        }
        let total = *cdf.last().unwrap();
        for c in cdf.iter_mut() {
            *c /= total;
        }
        InverseCdfSampler { cdf, density: vals.to_vec() }
    }

    pub fn sample(&self, u: f64) -> CirclePoint {
        let m = self.density.len();
        let k = match self.cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i.min(m - 1),
            Err(i) => i.saturating_sub(1).min(m - 1),
        };
        let rho0 = self.density[k];
        let rho1 = self.density[(k + 1) % m];
        let target = (u - self.cdf[k]) * m as f64 * (self.cdf[m]); // cdf normalized to 1
        let drho = rho1 - rho0;
        let s = if drho.abs() < 1e-12 {
            if rho0 > 0.0 {
                target / rho0
            } else {
                0.0
            }
        } else {
            let disc = (rho0 * rho0 + 2.0 * drho * target).max(0.0);
            (disc.sqrt() - rho0) / drho
        };
        CirclePoint::new((k as f64 + s.clamp(0.0, 1.0)) / m as f64)
    }
}

/// Iterates mu weights forward past the stored window by evolving the
/// density with the branch-averaging transfer operator (the pushforward of
/// a measure's density under an expanding map; binning atoms instead would
/// collapse all mass onto periodic points). Used to extend per-offset means
/// far beyond the stored window without storing triplets.
pub struct MuWalker<'a> {
    stack: &'a MeasureStack,
    offset: i64,
    weights: Vec<f64>,
    /// Per-symbol density-transport operators (weights 1/d).
    transport: Vec<crate::operator::TransferOperator>,
}

impl MuWalker<'_> {
    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integral(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values.iter()).map(|(w, v)| w * v).sum()
    }

    /// Advance to the next offset. Inside the stored window the stack's own
    /// weights are used; beyond it the density is transported forward and
    /// renormalized to unit mass.
    pub fn advance(&mut self) {
        let next = self.offset + 1;
        if next <= self.stack.hi + 1 {
            self.weights = self.stack.mu_at(next).to_vec();
        } else {
            let sid = self.stack.dynamics.path().symbol(self.offset);
            let mut pushed = self.transport[sid].apply_real(&self.weights);
            let mass: f64 = pushed.iter().sum();
            for w in pushed.iter_mut() {
                *w /= mass;
            }
            self.weights = pushed;
        }
        self.offset = next;
    }
}

/// The spec-level triplet estimator at the path origin.
pub fn estimate_triplet(
    dynamics: &Dynamics,
    n_relax: usize,
    tol: f64,
) -> QResult<EquivariantTriplet> {
    let stack = MeasureStack::build(dynamics, 0, 0, n_relax, tol, 4096)?;
    Ok(stack.triplet(0))
}

/// Exact mu-distributed orbit segments (x_lo, ..., x_hi) by backward
/// conformal sampling: draw x_hi from mu_hi, then walk inverse branches
/// with probabilities proportional to e^{phi(y)} h(y).
///
/// Forward iteration only reproduces the equilibrium family when the
/// potential is the expanding-derivative one (the measures are then
/// absolutely continuous); for a perturbed potential the family is
/// singular and forward orbits drift off it. The backward walk has no such
/// restriction, and it is numerically stable because inverse branches
/// contract. Requires [lo, hi] inside the stack window.
pub fn sample_mu_orbits(
    stack: &MeasureStack,
    lo: i64,
    hi: i64,
    n_orbits: usize,
    rng: &CounterRng,
) -> QResult<Vec<Vec<f64>>> {
    let (wlo, whi) = stack.window();
    if lo < wlo || hi > whi + 1 || lo >= hi {
        return Err(QuenchedError::State(format!(
            "orbit range [{lo}, {hi}] must sit inside the stack window [{wlo}, {}]",
            whi + 1
        )));
    }
    use rayon::prelude::*;
    let dynamics = stack.dynamics();
    let m = dynamics.grid_size();
    let path = dynamics.path();
    let ends = stack.sample_mu(hi, n_orbits, rng, false)?;
    let steps = (hi - lo) as usize;
    let orbits: Vec<Vec<f64>> = ends
        .par_iter()
        .enumerate()
        .map(|(t, end)| {
            let stream = rng.substream(0x8ac5 ^ t as u64);
            let mut orbit = vec![0.0f64; steps + 1];
            orbit[steps] = end.value();
            let mut x = end.value();
            for (back, j) in (lo..hi).rev().enumerate() {
                let params = path.params(j);
                let sid = path.symbol(j);
                let phi = dynamics.potential_grid(sid);
                let h = stack.h_at(j);
                let d = params.branch_count as usize;
                let u0 = crate::fiber::wrap(x - params.offset);
                let mut weights = Vec::with_capacity(d);
                let mut total = 0.0;
                for i in 0..d {
                    let y = crate::fiber::wrap((u0 + i as f64) / d as f64);
                    let hy = {
                        let t = y * m as f64;
                        let k = (t as usize) % m;
                        let f = t - t.floor();
                        h[k] * (1.0 - f) + h[(k + 1) % m] * f
                    };
                    let w = phi.eval(y).exp() * hy;
                    total += w;
                    weights.push(w);
                }
                let mut u = stream.uniform_at(back as u64) * total;
                let mut branch = d - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        branch = i;
                        break;
                    }
                    u -= w;
                }
                x = crate::fiber::wrap((u0 + branch as f64) / d as f64);
                orbit[(j - lo) as usize] = x;
            }
            orbit
        })
        .collect();
    Ok(orbits)
}

/// One relaxation sweep: backward adjoint iteration for nu and lambda,
/// forward pull of 1 for h, both over [lo-relax, hi+1+relax].
fn sweep(
    dynamics: &Dynamics,
    lo: i64,
    hi: i64,
    relax: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let m = dynamics.grid_size();
    let slots = (hi - lo + 2) as usize;
    let mut nu = vec![Vec::new(); slots];
    let mut lambda = vec![0.0; slots - 1];

    // Backward: uniform weights at hi+1+relax, adjoint steps down to lo.
    let mut u = vec![1.0 / m as f64; m];
    let top = hi + 1 + relax as i64;
    for j in (lo..top).rev() {
        let mut next = dynamics.untwisted_at(j).adjoint_apply(&u);
        let mass: f64 = next.iter().sum();
        for x in next.iter_mut() {
            *x /= mass;
        }
        u = next;
        if j <= hi + 1 {
            if j <= hi {
                lambda[(j - lo) as usize] = mass;
            }
            nu[(j - lo) as usize] = u.clone();
        }
    }
    // The slot hi+1 is written when j == hi+1; with relax >= 1 that always
    // happens, but guard the degenerate case.
    if nu[slots - 1].is_empty() {
        nu[slots - 1] = vec![1.0 / m as f64; m];
    }

    // Forward: constant 1 at lo-relax, operator steps up to hi+1.
    let mut h = vec![Vec::new(); slots];
    let mut v = vec![1.0; m];
    for j in (lo - relax as i64)..=hi {
        if j >= lo {
            h[(j - lo) as usize] = v.clone();
        }
        v = dynamics.untwisted_at(j).apply_real(&v);
        // Keep the iteration O(1) regardless of lambda products.
        let sup = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if sup > 0.0 {
            for x in v.iter_mut() {
                *x /= sup;
            }
        }
    }
    h[slots - 1] = v;

    // Normalize h by nu_j(h_j) = 1.
    for s in 0..slots {
        let mass: f64 = nu[s].iter().zip(h[s].iter()).map(|(a, b)| a * b).sum();
        for x in h[s].iter_mut() {
            *x /= mass;
        }
    }
    (h, nu, lambda)
}
