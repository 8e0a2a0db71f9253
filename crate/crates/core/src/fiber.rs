//! Fiber maps on the unit circle: affine full-branch expanding maps with
//! exact closed-form inverse branches.
//!
//! The circle carries the metric rho(x, y) = min(|x-y|, 1-|x-y|), so the
//! diameter is 1/2 and every bound is stated against that normalization.
//! Each map x -> (d x + b) mod 1 has exactly d full branches and every
//! inverse branch contracts rho by the factor 1/d; all the pairing and
//! distortion inequalities can therefore be checked with zero quadrature
//! error.

use crate::driving::{OmegaPath, SymbolParams};
use crate::errors::{QResult, QuenchedError};

/// A point on the unit circle, canonicalized to [0, 1).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct CirclePoint(f64);

impl CirclePoint {
    pub fn new(x: f64) -> CirclePoint {
        CirclePoint(wrap(x))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Canonical representative in [0, 1). A single wrap after each arithmetic
/// step keeps orbits drift-free.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Circle metric rho(x, y) = min(|x-y|, 1 - |x-y|).
#[inline]
pub fn circle_dist(a: CirclePoint, b: CirclePoint) -> f64 {
    let d = (a.0 - b.0).abs();
    d.min(1.0 - d)
}

/// Signed displacement from a to b wrapped into (-1/2, 1/2].
#[inline]
fn signed_diff(a: CirclePoint, b: CirclePoint) -> f64 {
    let mut d = b.0 - a.0;
    if d > 0.5 {
        d -= 1.0;
    } else if d <= -0.5 {
        d += 1.0;
    }
    d
}

/// One fiber map x -> (d x + b) mod 1.
#[derive(Clone, Copy, Debug)]
pub struct FiberMap {
    pub branch_count: u32,
    pub offset: f64,
}

impl FiberMap {
    pub fn of(params: &SymbolParams) -> FiberMap {
        FiberMap { branch_count: params.branch_count, offset: params.offset }
    }

    #[inline]
    pub fn apply(&self, x: CirclePoint) -> CirclePoint {
        CirclePoint(wrap(self.branch_count as f64 * x.0 + self.offset))
    }

    /// The d preimages y_i = ((x - b + i) / d) mod 1 in branch order.
    pub fn inverse_branches(&self, x: CirclePoint) -> Vec<CirclePoint> {
        let d = self.branch_count as f64;
        let u = wrap(x.0 - self.offset);
        (0..self.branch_count).map(|i| CirclePoint(wrap((u + i as f64) / d))).collect()
    }
}

/// f_omega(x): the map selected by the symbol at index 0.
pub fn apply_map(path: &OmegaPath, x: CirclePoint) -> CirclePoint {
    FiberMap::of(path.params(0)).apply(x)
}

/// Orbit (x, f x, ..., f^n x); step i uses the symbol at index i.
pub fn iterate(path: &OmegaPath, x: CirclePoint, n: usize) -> Vec<CirclePoint> {
    let mut orbit = Vec::with_capacity(n + 1);
    orbit.push(x);
    let mut y = x;
    for i in 0..n as i64 {
        y = FiberMap::of(path.params(i)).apply(y);
        orbit.push(y);
    }
    orbit
}

/// The d preimages of x under f_omega, in branch order.
pub fn inverse_branches(path: &OmegaPath, x: CirclePoint) -> Vec<CirclePoint> {
    FiberMap::of(path.params(0)).inverse_branches(x)
}

/// All D_{omega,n} preimages of x under f_omega^n.
///
/// Enumeration order is the branch word read at step 0 first, i.e. entry
/// j*d0 + i first applies branch i of the step-0 map; positions are
/// consistent between calls, which is what the pairing checks rely on.
pub fn inverse_branches_n(path: &OmegaPath, x: CirclePoint, n: usize) -> Vec<CirclePoint> {
    if n == 0 {
        return vec![x];
    }
    // Preimages under the tail composition first, then one more inverse step.
    let tail = inverse_branches_n(&path.shift(1), x, n - 1);
    let map = FiberMap::of(path.params(0));
    let mut out = Vec::with_capacity(tail.len() * map.branch_count as usize);
    for z in tail {
        out.extend(map.inverse_branches(z));
    }
    out
}

/// The n-step inverse branches of x and x' matched branch-to-branch.
///
/// For the affine family the branch of y continued to x' sits at exactly
/// y + delta / gamma_{omega,n}; each predicted point is located among the
/// enumerated preimages of x' so the pairing stays an enumeration fact
/// rather than a formula.
pub fn paired_inverse_branches_n(
    path: &OmegaPath,
    x: CirclePoint,
    x_prime: CirclePoint,
    n: usize,
) -> Vec<(CirclePoint, CirclePoint)> {
    let ys = inverse_branches_n(path, x, n);
    let mut ys_prime = inverse_branches_n(path, x_prime, n);
    ys_prime.sort_by(|a, b| a.partial_cmp(b).expect("circle points are finite"));
    let gamma: f64 = (0..n as i64).map(|j| path.params(j).expansion()).product();
    let delta = signed_diff(x, x_prime);
    ys.into_iter()
        .map(|y| {
            let predicted = CirclePoint::new(y.value() + delta / gamma);
            (y, nearest_sorted(&ys_prime, predicted))
        })
        .collect()
}

/// Outcome of a pairing verification over all n-step branch pairs.
#[derive(Clone, Copy, Debug)]
pub struct PairingReport {
    /// Worst ratio of measured distance to the pairing bound, <= 1 on success.
    pub worst_ratio: f64,
    pub pairs_checked: usize,
    pub violations: usize,
}

/// Pair the n-step inverse branches of x and x' positionally and verify that
/// intermediate images contract as required: for each pair and each step j,
/// rho(f^j y, f^j y') <= rho(x, x') / gamma_{sigma^j omega, n-j}.
pub fn pairing_check(
    path: &OmegaPath,
    x: CirclePoint,
    x_prime: CirclePoint,
    n: usize,
    xi: f64,
) -> QResult<PairingReport> {
    let rho = circle_dist(x, x_prime);
    if rho >= xi {
        return Err(QuenchedError::Precondition(format!(
            "pairing needs rho(x,x') < xi, got rho = {rho} >= xi = {xi}"
        )));
    }
    // Tail expansion products gamma_{sigma^j omega, n-j} for j = 0..n-1.
    let mut tail_gamma = vec![1.0f64; n + 1];
    for j in (0..n).rev() {
        tail_gamma[j] = tail_gamma[j + 1] * path.params(j as i64).expansion();
    }

    let mut worst: f64 = 0.0;
    let mut violations = 0usize;
    let mut pairs = 0usize;
    for (y, paired) in paired_inverse_branches_n(path, x, x_prime, n) {
        let mut a = y;
        let mut b = paired;
        for j in 0..n {
            let bound = rho / tail_gamma[j] + 1e-12;
            let dist = circle_dist(a, b);
            pairs += 1;
            if dist > bound {
                violations += 1;
            }
            if bound > 0.0 {
                worst = worst.max(dist / bound);
            } else if dist > 0.0 {
                violations += 1;
                worst = f64::INFINITY;
            }
            let map = FiberMap::of(path.params(j as i64));
            a = map.apply(a);
            b = map.apply(b);
        }
    }
    Ok(PairingReport { worst_ratio: worst, pairs_checked: pairs, violations })
}

/// Nearest element of a sorted slice of circle points, circularly.
fn nearest_sorted(sorted: &[CirclePoint], target: CirclePoint) -> CirclePoint {
    let idx = sorted.partition_point(|c| c.value() < target.value());
    let mut best = sorted[idx % sorted.len()];
    let mut best_dist = circle_dist(best, target);
    for cand in [sorted[(idx + sorted.len() - 1) % sorted.len()], sorted[(idx + 1) % sorted.len()]]
    {
        let d = circle_dist(cand, target);
        if d < best_dist {
            best_dist = d;
            best = cand;
        }
    }
    best
}

/// Smallest n such that an interval of length 2 xi expands to cover the
/// circle: gamma_{omega,n} * 2 xi >= 1.
pub fn exactness_time(path: &OmegaPath, xi: f64) -> QResult<usize> {
    if !(0.0 < xi && xi <= 0.25) {
        return Err(QuenchedError::Argument(format!("xi must lie in (0, 1/4], got {xi}")));
    }
    let mut gamma = 1.0f64;
    let mut n = 0usize;
    while gamma * 2.0 * xi < 1.0 {
        gamma *= path.params(n as i64).expansion();
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driving::{Alphabet, OmegaPath, SymbolParams};
    use crate::rng::CounterRng;

    fn sym(d: u32, b: f64) -> SymbolParams {
        SymbolParams {
            branch_count: d,
            offset: b,
            potential_amplitude: 0.0,
            holder_bound: 7.0,
            obs_cos: 1.0,
            obs_sin: 0.0,
        }
    }

    fn const_path(d: u32, b: f64) -> OmegaPath {
        OmegaPath::sample(1, Alphabet::single(sym(d, b)))
    }

    fn mixed_path(seed: u64) -> OmegaPath {
        let alphabet =
            Alphabet::new(vec![sym(2, 0.0), sym(3, 0.3)], vec![0.5, 0.5]).unwrap();
        OmegaPath::sample(seed, alphabet)
    }

    #[test]
    fn direct_evaluations() {
        let p2 = const_path(2, 0.0);
        assert!((apply_map(&p2, CirclePoint::new(0.3)).value() - 0.6).abs() < 1e-15);
        assert!((apply_map(&p2, CirclePoint::new(0.75)).value() - 0.5).abs() < 1e-15);
        let p3 = const_path(3, 0.1);
        assert!((apply_map(&p3, CirclePoint::new(0.5)).value() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn orbits() {
        let p = const_path(2, 0.0);
        let orbit = iterate(&p, CirclePoint::new(0.1), 3);
        let expect = [0.1, 0.2, 0.4, 0.8];
        assert_eq!(orbit.len(), 4);
        for (o, e) in orbit.iter().zip(expect) {
            assert!((o.value() - e).abs() < 1e-15);
        }
        assert_eq!(iterate(&p, CirclePoint::new(0.37), 0).len(), 1);
    }

    #[test]
    fn orbit_cocycle_identity() {
        let rng = CounterRng::new(99);
        for trial in 0..1000u64 {
            let path = mixed_path(200 + trial % 7);
            let x = CirclePoint::new(rng.uniform_at(trial));
            let n = (rng.u64_at(trial.wrapping_add(1 << 32)) % 6) as usize;
            let m = (rng.u64_at(trial.wrapping_add(1 << 33)) % 6) as usize;
            let full = iterate(&path, x, n + m);
            let head = iterate(&path, x, n);
            let tail = iterate(&path.shift(n as i64), *head.last().unwrap(), m);
            assert!((full.last().unwrap().value() - tail.last().unwrap().value()).abs() < 1e-12);
        }
    }

    #[test]
    fn preimages_doubling_and_triple() {
        let p2 = const_path(2, 0.0);
        let ys = inverse_branches(&p2, CirclePoint::new(0.5));
        assert_eq!(ys.len(), 2);
        assert!((ys[0].value() - 0.25).abs() < 1e-15);
        assert!((ys[1].value() - 0.75).abs() < 1e-15);

        let p3 = const_path(3, 0.0);
        let zs = inverse_branches(&p3, CirclePoint::new(0.0));
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0];
        for (z, e) in zs.iter().zip(expect) {
            assert!((z.value() - e).abs() < 1e-15);
        }
    }

    #[test]
    fn left_inverse_recovers_point() {
        let rng = CounterRng::new(5);
        for trial in 0..200u64 {
            let path = mixed_path(trial % 5);
            let x = CirclePoint::new(rng.uniform_at(trial));
            for y in inverse_branches(&path, x) {
                let img = apply_map(&path, y);
                assert!(circle_dist(img, x) < 1e-12);
            }
        }
    }

    #[test]
    fn pairing_diagonal_and_exact_affine_contraction() {
        let p = const_path(2, 0.0);
        let x = CirclePoint::new(0.1);
        let r = pairing_check(&p, x, x, 3, 0.25).unwrap();
        assert_eq!(r.violations, 0);

        // One step: each paired preimage distance is exactly rho / 2.
        let x2 = CirclePoint::new(0.2);
        let ys = inverse_branches(&p, x);
        let yps = inverse_branches(&p, x2);
        for (y, yp) in ys.iter().zip(yps.iter()) {
            assert!((circle_dist(*y, *yp) - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn pairing_mixed_alphabet_never_violates() {
        let rng = CounterRng::new(31);
        for trial in 0..200u64 {
            let path = mixed_path(trial % 11);
            let x = CirclePoint::new(rng.uniform_at(trial));
            let delta = (rng.uniform_at(trial + (1 << 40)) - 0.5) * 0.4; // |delta| < 0.2 < xi
            let xp = CirclePoint::new(x.value() + delta);
            let report = pairing_check(&path, x, xp, 4, 0.25).unwrap();
            assert_eq!(report.violations, 0, "trial {trial}");
            assert!(report.worst_ratio <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn pairing_requires_close_points() {
        let p = const_path(2, 0.0);
        let err =
            pairing_check(&p, CirclePoint::new(0.0), CirclePoint::new(0.4), 2, 0.25).unwrap_err();
        assert!(err.to_string().contains("precondition"));
    }

    #[test]
    fn exactness_times_match_covering_oracle() {
        assert_eq!(exactness_time(&const_path(2, 0.0), 0.25).unwrap(), 1);
        assert_eq!(exactness_time(&const_path(2, 0.0), 0.05).unwrap(), 4);
        assert_eq!(exactness_time(&const_path(3, 0.0), 0.25).unwrap(), 1);

        // Covering oracle: the image of a xi-ball under f^{n} hits every cell
        // of a uniform 1024-point grid.
        for (path, xi) in [(const_path(2, 0.0), 0.05f64), (mixed_path(4), 0.1)] {
            let n = exactness_time(&path, xi).unwrap();
            let center = CirclePoint::new(0.37);
            let mut covered = vec![false; 1024];
            let samples = 1 << 16;
            for s in 0..samples {
                let t = center.value() - xi + 2.0 * xi * (s as f64 / samples as f64);
                let orbit = iterate(&path, CirclePoint::new(t), n);
                let y = orbit.last().unwrap().value();
                covered[(y * 1024.0) as usize % 1024] = true;
            }
            assert!(covered.iter().all(|c| *c), "xi={xi} n={n}");
        }
    }
}
