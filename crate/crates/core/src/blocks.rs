//! The dyadic block harness: exact big-block/gap tilings of [2^n, 2^{n+1}),
//! rate-exponent arithmetic, block sums of the induced process, the
//! characteristic-function factorization probe for gap decay, CLT normality
//! testing, and Gaussian-surrogate variance matching.
//!
//! The harness validates consequences: tiles must tile exactly, the
//! factorization error must decay exponentially in the gap, normalized sums
//! must approach the normal law, and an independent-Gaussian surrogate with
//! matched tile variances must reproduce the L^2 growth of the partial sums
//! up to the predicted rate exponent. The almost-sure coupling itself is a
//! proof device and is not constructed.

use num_complex::Complex64;

use crate::birkhoff::{CenteredObservable, TrajectoryEnsemble};
use crate::errors::{QResult, QuenchedError};
use crate::inducing::InducedSystem;
use crate::rng::CounterRng;
use crate::stats::{ks_vs_standard_normal, linear_fit, mean_square};

/// One tile of the decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum TileKind {
    Gap,
    Interval,
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct Tile {
    pub kind: TileKind,
    pub start: u64,
    pub len: u64,
}

/// The exact tiling of [2^n, 2^{n+1}) into F = 2^f summation intervals
/// separated by gaps: J_0, I_0, J_1, I_1, ..., J_{F-1}, I_{F-1}.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BlockScheme {
    pub n: u32,
    pub beta: f64,
    pub eps: f64,
    pub f: u32,
    pub block_count: u64,
    pub interval_len: u64,
    pub j0_len: u64,
    pub tiles: Vec<Tile>,
}

impl BlockScheme {
    pub fn window_start(&self) -> u64 {
        1u64 << self.n
    }

    pub fn window_end(&self) -> u64 {
        1u64 << (self.n + 1)
    }

    pub fn total_gap_len(&self) -> u64 {
        self.tiles.iter().filter(|t| t.kind == TileKind::Gap).map(|t| t.len).sum()
    }

    /// All tile boundaries including the window end, ascending.
    pub fn boundaries(&self) -> Vec<u64> {
        let mut b: Vec<u64> = self.tiles.iter().map(|t| t.start).collect();
        b.push(self.window_end());
        b
    }
}

/// Gap-length exponent r(j): index of the lowest set bit of j.
pub fn gap_exponent(j: u64) -> u32 {
    debug_assert!(j > 0);
    j.trailing_zeros()
}

/// Build the exact tiling for window level n with parameters (beta, eps).
///
/// Interval length 2^{n-f} - (f+2) 2^{floor(eps n) - 1} must be a positive
/// integer; otherwise the tiling is infeasible at this level and the error
/// names the violated requirement.
pub fn block_decomposition(n: u32, beta: f64, eps: f64) -> QResult<BlockScheme> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(QuenchedError::Argument(format!("beta must lie in (0,1), got {beta}")));
    }
    if !(0.0 < eps && eps < 1.0 - beta) {
        return Err(QuenchedError::Argument(format!(
            "eps must lie in (0, 1 - beta) = (0, {}), got {eps}",
            1.0 - beta
        )));
    }
    let f = (beta * n as f64).floor() as u32;
    let en = (eps * n as f64).floor() as u32;
    if n <= f {
        return Err(QuenchedError::Infeasible(format!(
            "level n = {n}: f = {f} leaves no interval budget 2^(n-f)"
        )));
    }
    // (f + 2) * 2^(en - 1) as an exact integer, if it is one.
    let half_units = (f as u64 + 2) << en; // (f+2) * 2^en = 2 * required
    if half_units % 2 != 0 {
        return Err(QuenchedError::Infeasible(format!(
            "level n = {n}: (f+2) 2^(floor(eps n)-1) = {}/2 is not an integer",
            half_units
        )));
    }
    let deduction = half_units / 2;
    let budget = 1u64 << (n - f);
    if budget <= deduction {
        return Err(QuenchedError::Infeasible(format!(
            "level n = {n}: interval length violates 2^(n-f) > (f+2) 2^(floor(eps n)-1) \
             ({budget} <= {deduction})"
        )));
    }
    let interval_len = budget - deduction;
    let block_count = 1u64 << f;
    let j0_len = 1u64 << (en + f);

    let mut tiles = Vec::with_capacity(2 * block_count as usize);
    let mut cursor = 1u64 << n;
    for j in 0..block_count {
        let gap_len = if j == 0 { j0_len } else { 1u64 << (en + gap_exponent(j)) };
        tiles.push(Tile { kind: TileKind::Gap, start: cursor, len: gap_len });
        cursor += gap_len;
        tiles.push(Tile { kind: TileKind::Interval, start: cursor, len: interval_len });
        cursor += interval_len;
    }
    debug_assert_eq!(cursor, 1u64 << (n + 1), "tiling must exactly exhaust the window");
    Ok(BlockScheme { n, beta, eps, f, block_count, interval_len, j0_len, tiles })
}

/// beta = p / (2p - 2), the exponent-balancing choice.
pub fn default_beta(p: f64) -> QResult<f64> {
    if p <= 2.0 {
        return Err(QuenchedError::Argument(format!("default beta needs p > 2, got {p}")));
    }
    Ok(p / (2.0 * p - 2.0))
}

/// The approximation-rate exponent a_p = p / (4(p-1)) + 1/p.
pub fn rate_exponent(p: f64) -> QResult<f64> {
    if p < 6.0 {
        return Err(QuenchedError::Argument(format!(
            "rate exponent computed only for p >= 6 (smaller p gives weaker rates), got {p}"
        )));
    }
    Ok(p / (4.0 * (p - 1.0)) + 1.0 / p)
}

/// Rate parameters for the harness.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct RateParams {
    pub p: f64,
    pub beta: f64,
    pub a_p: f64,
    pub delta: f64,
}

impl RateParams {
    pub fn new(p: f64, beta: Option<f64>, delta: f64) -> QResult<RateParams> {
        let beta = match beta {
            Some(b) => b,
            None => default_beta(p)?,
        };
        Ok(RateParams { p, beta, a_p: rate_exponent(p)?, delta })
    }
}

/// Cumulative gap-index counts and their growth exponent.
#[derive(Clone, Debug, serde::Serialize)]
pub struct GapCardinalityReport {
    pub levels: Vec<u32>,
    /// #(gap indices <= 2^{level+1}), cumulative over feasible levels.
    pub counts: Vec<u64>,
    pub skipped_infeasible: Vec<u32>,
    pub fitted_exponent: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Count gap indices up to 2^{n+1} for each level and fit the growth
/// exponent, which must stay below beta + 1.5 eps (+ slack).
pub fn gap_cardinality_check(n_max: u32, beta: f64, eps: f64) -> QResult<GapCardinalityReport> {
    let mut cumulative = 0u64;
    let mut levels = Vec::new();
    let mut counts = Vec::new();
    let mut skipped = Vec::new();
    for n in 1..=n_max {
        match block_decomposition(n, beta, eps) {
            Ok(scheme) => {
                cumulative += scheme.total_gap_len();
                levels.push(n);
                counts.push(cumulative);
            }
            Err(QuenchedError::Infeasible(_)) => skipped.push(n),
            Err(e) => return Err(e),
        }
    }
    if counts.len() < 3 {
        return Err(QuenchedError::Argument(format!(
            "need >= 3 feasible levels up to n = {n_max} for an exponent fit"
        )));
    }
    // Fit the upper half of the levels: the small-n counts carry the
    // (f+2)-type corrections that mask the asymptotic exponent.
    let skip = counts.len() / 2;
    let xs: Vec<f64> =
        levels[skip..].iter().map(|n| ((1u64 << (n + 1)) as f64).ln()).collect();
    let ys: Vec<f64> = counts[skip..].iter().map(|c| (*c as f64).ln()).collect();
    let fitted_exponent = linear_fit(&xs, &ys).slope;
    let bound = beta + 1.5 * eps + 0.1;
    Ok(GapCardinalityReport {
        levels,
        counts,
        skipped_infeasible: skipped,
        fitted_exponent,
        bound,
        ok: fitted_exponent <= bound,
    })
}

/// Per-trajectory partial sums of the induced process at a fixed list of
/// induced indices: sums[t][c] = sum of the first indices[c] induced
/// increments along trajectory t.
pub struct IndexedSums {
    pub indices: Vec<u64>,
    pub sums: Vec<Vec<f64>>,
}

impl IndexedSums {
    pub fn column_of(&self, index: u64) -> QResult<usize> {
        self.indices
            .binary_search(&index)
            .map_err(|_| QuenchedError::Argument(format!("no recorded column at index {index}")))
    }

    pub fn n_trajectories(&self) -> usize {
        self.sums.len()
    }

    /// Partial-sum column at an induced index.
    pub fn column(&self, index: u64) -> QResult<Vec<f64>> {
        let c = self.column_of(index)?;
        Ok(self.sums.iter().map(|row| row[c]).collect())
    }

    /// Per-trajectory sums over [from, to) in induced time.
    pub fn range_sums(&self, from: u64, to: u64) -> QResult<Vec<f64>> {
        let a = self.column_of(from)?;
        let b = self.column_of(to)?;
        Ok(self.sums.iter().map(|row| row[b] - row[a]).collect())
    }
}

/// Simulate the induced partial sums at the requested induced indices by
/// recording orbit Birkhoff sums at the matching return times.
///
/// For the derivative potential (all eps = 0) the fiber measures are
/// absolutely continuous and forward simulation samples them exactly; for
/// a perturbed potential the family is singular and exact backward
/// conformal orbits are used instead, which requires the stack window to
/// reach the largest return time.
pub fn induced_checkpoint_sums(
    stack: &crate::measures::MeasureStack,
    obs: &CenteredObservable,
    sys: &InducedSystem,
    n_traj: usize,
    induced_indices: &[u64],
    rng: &CounterRng,
) -> QResult<IndexedSums> {
    let mut indices = induced_indices.to_vec();
    indices.sort_unstable();
    indices.dedup();
    let max_idx = *indices.last().ok_or_else(|| {
        QuenchedError::Argument("need at least one induced checkpoint".into())
    })?;
    if max_idx as usize > sys.return_count() {
        return Err(QuenchedError::Argument(format!(
            "induced index {max_idx} exceeds the {} recorded returns",
            sys.return_count()
        )));
    }
    // Map induced indices to orbit times; index 0 is the empty sum.
    let orbit_checkpoints: Vec<usize> =
        indices.iter().filter(|i| **i > 0).map(|i| sys.m(*i as usize) as usize).collect();

    let flat_potential = stack
        .dynamics()
        .path()
        .alphabet()
        .symbols()
        .iter()
        .all(|s| s.potential_amplitude == 0.0);
    let mu_rng = rng.substream(crate::driving::stream_tags::MU_SAMPLER);
    let raw_sums: Vec<Vec<f64>> = if flat_potential {
        let initial = stack.sample_mu(0, n_traj, &mu_rng, false)?;
        crate::birkhoff::run_ensemble(
            stack.dynamics().path(),
            obs,
            &initial,
            &orbit_checkpoints,
            &rng.substream(crate::driving::stream_tags::TRAJECTORY),
        )?
        .sums
    } else {
        backward_checkpoint_sums(stack, obs, n_traj, &orbit_checkpoints, &mu_rng)?
    };

    let sums: Vec<Vec<f64>> = raw_sums
        .into_iter()
        .map(|row| {
            let mut with_zero = Vec::with_capacity(indices.len());
            let mut c = 0usize;
            for idx in &indices {
                if *idx == 0 {
                    with_zero.push(0.0);
                } else {
                    with_zero.push(row[c]);
                    c += 1;
                }
            }
            with_zero
        })
        .collect();
    Ok(IndexedSums { indices, sums })
}

/// Birkhoff sums at orbit checkpoints over exact backward-sampled orbits,
/// processed in batches to cap the orbit storage.
pub fn backward_checkpoint_sums(
    stack: &crate::measures::MeasureStack,
    obs: &CenteredObservable,
    n_traj: usize,
    orbit_checkpoints: &[usize],
    rng: &CounterRng,
) -> QResult<Vec<Vec<f64>>> {
    let horizon = *orbit_checkpoints.last().ok_or_else(|| {
        QuenchedError::Argument("need at least one orbit checkpoint".into())
    })?;
    let path = stack.dynamics().path();
    let mut sums = Vec::with_capacity(n_traj);
    let batch = 20_000usize;
    let mut start = 0usize;
    while start < n_traj {
        let count = batch.min(n_traj - start);
        let batch_rng = rng.substream(0xb417c4 ^ start as u64);
        let orbits =
            crate::measures::sample_mu_orbits(stack, 0, horizon as i64, count, &batch_rng)?;
        for orbit in &orbits {
            let mut records = Vec::with_capacity(orbit_checkpoints.len());
            let mut s = 0.0;
            let mut next_cp = 0usize;
            for (i, x) in orbit.iter().take(horizon).enumerate() {
                s += obs.eval(path, i as i64, *x)?;
                if next_cp < orbit_checkpoints.len() && i + 1 == orbit_checkpoints[next_cp] {
                    records.push(s);
                    next_cp += 1;
                }
            }
            sums.push(records);
        }
        start += count;
    }
    Ok(sums)
}

/// Per-tile sums X_{n,j} (and gap sums) for one scheme.
pub struct TileSums {
    pub scheme: BlockScheme,
    /// tile_sums[tile][trajectory].
    pub per_tile: Vec<Vec<f64>>,
}

/// Extract per-trajectory tile sums; errors if the data does not cover the
/// scheme's boundaries.
pub fn block_sums(scheme: &BlockScheme, data: &IndexedSums) -> QResult<TileSums> {
    let mut per_tile = Vec::with_capacity(scheme.tiles.len());
    for tile in &scheme.tiles {
        per_tile.push(data.range_sums(tile.start, tile.start + tile.len)?);
    }
    Ok(TileSums { scheme: scheme.clone(), per_tile })
}

/// One probed gap length of the factorization check.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct HProbePoint {
    pub k: u64,
    pub error: f64,
    pub stderr: f64,
    pub significant: bool,
}

/// Factorization-decay report: |E e^{i(P+Q_k)} - E e^{iP} E e^{iQ_k}|
/// against the gap k, with a fitted exponential rate.
#[derive(Clone, Debug, serde::Serialize)]
pub struct HReport {
    pub points: Vec<HProbePoint>,
    pub c_hat: f64,
    pub r_squared: f64,
    pub pass: bool,
    pub significant_points: usize,
    /// Set when fewer than 3 points clear the 3-sigma significance filter,
    /// so the fit had to use noise-dominated points.
    pub widened_confidence: bool,
}

/// Block shape for the factorization probe, in induced time.
#[derive(Clone, Debug)]
pub struct HProbeSpec {
    /// Edges of the pre-gap blocks (adjacent pairs form blocks).
    pub pre_edges: Vec<u64>,
    /// Edges of the post-gap blocks, shifted by k at probe time.
    pub post_edges: Vec<u64>,
    /// Fourier coefficients, one per block, |t| <= 1.
    pub t_values: Vec<f64>,
    pub k_grid: Vec<u64>,
    pub bootstrap: usize,
}

impl HProbeSpec {
    fn n_pre(&self) -> usize {
        self.pre_edges.len().saturating_sub(1)
    }

    fn n_post(&self) -> usize {
        self.post_edges.len().saturating_sub(1)
    }

    pub fn validate(&self) -> QResult<()> {
        if self.t_values.len() != self.n_pre() + self.n_post() {
            return Err(QuenchedError::Argument(format!(
                "need one coefficient per block: {} blocks, {} coefficients",
                self.n_pre() + self.n_post(),
                self.t_values.len()
            )));
        }
        if self.t_values.iter().any(|t| !(t.is_finite() && t.abs() <= 1.0)) {
            return Err(QuenchedError::Argument("coefficients must satisfy |t| <= 1".into()));
        }
        if !self.pre_edges.windows(2).all(|w| w[0] < w[1])
            || !self.post_edges.windows(2).all(|w| w[0] < w[1])
        {
            return Err(QuenchedError::Argument("block edges must be increasing".into()));
        }
        Ok(())
    }

    /// All induced indices the probe needs.
    pub fn required_indices(&self) -> Vec<u64> {
        let mut idx: Vec<u64> = self.pre_edges.clone();
        for k in &self.k_grid {
            idx.extend(self.post_edges.iter().map(|e| e + k));
        }
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

/// Factorization error from precomputed per-trajectory phase pairs.
pub fn factorization_error(phases: &[(f64, f64)]) -> f64 {
    let n = phases.len() as f64;
    let mut joint = Complex64::ZERO;
    let mut pre = Complex64::ZERO;
    let mut post = Complex64::ZERO;
    for (p, q) in phases {
        joint += Complex64::new(0.0, p + q).exp();
        pre += Complex64::new(0.0, *p).exp();
        post += Complex64::new(0.0, *q).exp();
    }
    (joint / n - (pre / n) * (post / n)).norm()
}

/// The factorization error computed exactly through twisted normalized
/// cocycles: E[e^{iS}] = integral of the twisted cocycle image of 1, with
/// the per-orbit-step twist given by the block coefficients (0 in gaps).
/// This is the operator-split route; it has no Monte Carlo noise and
/// serves as the oracle for the statistical probe. The stack window must
/// cover the orbit horizon of the farthest shifted block.
pub fn exact_factorization_error(
    stack: &crate::measures::MeasureStack,
    obs: &CenteredObservable,
    sys: &InducedSystem,
    spec: &HProbeSpec,
    k: u64,
) -> QResult<f64> {
    spec.validate()?;
    let top_induced = spec.post_edges.last().copied().unwrap_or(0) + k;
    if top_induced as usize > sys.return_count() {
        return Err(QuenchedError::Argument(format!(
            "exact probe needs {top_induced} returns, have {}",
            sys.return_count()
        )));
    }
    let horizon = sys.m(top_induced as usize);

    // Twist carried by each orbit step: the coefficient of the block whose
    // induced span contains it.
    let twist_of = |pre: bool, post: bool| -> Vec<f64> {
        let mut tw = vec![0.0; horizon as usize];
        let mut fill = |from: u64, to: u64, t: f64| {
            for ell in from..to {
                let (a, b) = (sys.m(ell as usize), sys.m(ell as usize + 1));
                for i in a..b {
                    tw[i as usize] = t;
                }
            }
        };
        if pre {
            for b in 0..spec.pre_edges.len() - 1 {
                fill(spec.pre_edges[b], spec.pre_edges[b + 1], spec.t_values[b]);
            }
        }
        if post {
            let n_pre = spec.pre_edges.len() - 1;
            for b in 0..spec.post_edges.len() - 1 {
                fill(
                    spec.post_edges[b] + k,
                    spec.post_edges[b + 1] + k,
                    spec.t_values[n_pre + b],
                );
            }
        }
        tw
    };

    let path = stack.dynamics().path();
    let m = stack.dynamics().grid_size();
    let cf = |twists: &[f64]| -> QResult<Complex64> {
        let mut v = vec![Complex64::new(1.0, 0.0); m];
        for (i, t) in twists.iter().enumerate() {
            let psi = obs.grid_at(path, i as i64, m)?;
            v = stack.normalized_twisted_step(i as i64, v, *t, &psi)?;
        }
        let mu = stack.mu_at(horizon);
        Ok(v.iter().zip(mu.iter()).map(|(z, w)| z * w).sum())
    };

    let joint = cf(&twist_of(true, true))?;
    let pre = cf(&twist_of(true, false))?;
    let post = cf(&twist_of(false, true))?;
    Ok((joint - pre * post).norm())
}

/// Run the factorization probe over the gap grid using recorded induced
/// sums. Monte Carlo noise is quantified by bootstrap over trajectories;
/// only points clearing 3 sigma enter the exponential fit.
pub fn h_condition_probe(
    spec: &HProbeSpec,
    data: &IndexedSums,
    rng: &CounterRng,
) -> QResult<HReport> {
    spec.validate()?;
    let n_traj = data.n_trajectories();
    if n_traj < 100 {
        return Err(QuenchedError::Precondition("probe needs >= 100 trajectories".into()));
    }
    let boot_rng = rng.substream(crate::driving::stream_tags::BOOTSTRAP);

    let mut points = Vec::with_capacity(spec.k_grid.len());
    for &k in &spec.k_grid {
        // Per-trajectory phases (P, Q_k).
        let mut phases = vec![(0.0f64, 0.0f64); n_traj];
        for b in 0..spec.n_pre() {
            let block = data.range_sums(spec.pre_edges[b], spec.pre_edges[b + 1])?;
            let t = spec.t_values[b];
            for (ph, x) in phases.iter_mut().zip(block.iter()) {
                ph.0 += t * x;
            }
        }
        for b in 0..spec.n_post() {
            let block =
                data.range_sums(spec.post_edges[b] + k, spec.post_edges[b + 1] + k)?;
            let t = spec.t_values[spec.n_pre() + b];
            for (ph, x) in phases.iter_mut().zip(block.iter()) {
                ph.1 += t * x;
            }
        }
        let error = factorization_error(&phases);
        // Bootstrap standard error.
        let mut boots = Vec::with_capacity(spec.bootstrap);
        for b in 0..spec.bootstrap {
            let stream = boot_rng.substream((k << 20) ^ b as u64);
            let resample: Vec<(f64, f64)> = (0..n_traj)
                .map(|i| phases[(stream.u64_at(i as u64) % n_traj as u64) as usize])
                .collect();
            boots.push(factorization_error(&resample));
        }
        let se = crate::stats::variance(&boots).sqrt();
        points.push(HProbePoint { k, error, stderr: se, significant: error >= 3.0 * se });
    }

    let mut fit_points: Vec<&HProbePoint> = points.iter().filter(|p| p.significant).collect();
    let widened_confidence = fit_points.len() < 3;
    if widened_confidence {
        fit_points = points.iter().take(3).collect();
    }
    let (c_hat, r_squared) = if fit_points.len() >= 2 {
        let xs: Vec<f64> = fit_points.iter().map(|p| p.k as f64).collect();
        let ys: Vec<f64> = fit_points.iter().map(|p| p.error.max(1e-300).ln()).collect();
        let fit = linear_fit(&xs, &ys);
        (-fit.slope, fit.r_squared)
    } else {
        (0.0, 0.0)
    };
    let significant_points = points.iter().filter(|p| p.significant).count();
    Ok(HReport {
        points,
        c_hat,
        r_squared,
        pass: c_hat > 0.0 && r_squared >= 0.8,
        significant_points,
        widened_confidence,
    })
}

/// Outcome of the normality test at one horizon.
#[derive(Clone, Debug, serde::Serialize)]
pub enum CltOutcome {
    Tested(KsReport),
    /// sigma ~ 0: degenerate (coboundary) scale, no test possible.
    Suppressed { n: usize, variance: f64 },
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct KsReport {
    pub n: usize,
    pub ks: f64,
    pub sigma_n: f64,
    pub samples: usize,
}

/// KS distance between S_n / sigma_n over the ensemble and the standard
/// normal, with sigma_n the empirical L^2 norm.
pub fn clt_test(ensemble: &TrajectoryEnsemble, n: usize) -> QResult<CltOutcome> {
    let c = ensemble
        .checkpoint_index(n)
        .ok_or_else(|| QuenchedError::Argument(format!("no checkpoint at n = {n}")))?;
    let column = ensemble.column(c);
    let sigma2 = mean_square(&column);
    let variance = sigma2 / n as f64;
    if variance < 1e-4 {
        return Ok(CltOutcome::Suppressed { n, variance });
    }
    let sigma = sigma2.sqrt();
    let normalized: Vec<f64> = column.iter().map(|s| s / sigma).collect();
    Ok(CltOutcome::Tested(KsReport {
        n,
        ks: ks_vs_standard_normal(&normalized),
        sigma_n: sigma,
        samples: normalized.len(),
    }))
}

/// One dyadic level of the variance-matching table.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct VmCheckpoint {
    pub level: u32,
    /// Horizon 2^{level+1} in induced time.
    pub horizon: u64,
    pub sigma_emp: f64,
    pub sigma_surr: f64,
    pub discrepancy: f64,
}

/// Gaussian-surrogate variance matching across dyadic levels.
#[derive(Clone, Debug, serde::Serialize)]
pub struct VarianceMatchReport {
    pub checkpoints: Vec<VmCheckpoint>,
    pub final_ratio: f64,
    pub ratio_ok: bool,
    pub discrepancy_exponent: f64,
    pub exponent_bound: f64,
    pub exponent_ok: bool,
    /// Worst relative gap between the generated surrogate's RMS and its
    /// exact L^2 norm (a consistency check on the generator).
    pub surrogate_rms_consistency: f64,
}

/// Build the tile-level Gaussian surrogate (independent centered normals
/// with matched tile variances) and compare its partial-sum L^2 growth with
/// the empirical one.
///
/// Schemes need not cover every level: the prefix below the first window
/// and any window whose tiling is infeasible enter the surrogate as single
/// matched-variance spans, so the surrogate always covers [0, top horizon).
pub fn variance_match(
    schemes: &[BlockScheme],
    data: &IndexedSums,
    rate: &RateParams,
    rng: &CounterRng,
) -> QResult<VarianceMatchReport> {
    if schemes.is_empty() {
        return Err(QuenchedError::Argument("variance matching needs >= 1 scheme".into()));
    }
    if !schemes.windows(2).all(|w| w[0].n < w[1].n) {
        return Err(QuenchedError::Argument("schemes must have increasing levels".into()));
    }
    let n_traj = data.n_trajectories();
    let surrogate_rng = rng.substream(crate::driving::stream_tags::SURROGATE);

    // Merged boundary list: 0, the first window start, every tile boundary,
    // and (implicitly) single spans across un-tiled stretches.
    let mut boundaries: Vec<u64> = vec![0, schemes[0].window_start()];
    for scheme in schemes {
        boundaries.extend(scheme.boundaries());
    }
    boundaries.sort_unstable();
    boundaries.dedup();

    // One independent normal per boundary span, variance matched to the
    // empirical span variance. The surrogate's L^2 norm is then exactly
    // sqrt(sum of matched variances); samples are still generated so the
    // construction (not just its second moment) exists and can be checked
    // for independence.
    let mut surr = vec![0.0f64; n_traj];
    let mut surr_var_exact = 0.0f64;
    let mut checkpoints = Vec::with_capacity(schemes.len());
    let mut rms_consistency: f64 = 0.0;
    let mut horizon_iter = schemes.iter().peekable();
    for (span_id, pair) in boundaries.windows(2).enumerate() {
        let span_vals = data.range_sums(pair[0], pair[1])?;
        let var = mean_square(&span_vals);
        let sd = var.sqrt();
        surr_var_exact += var;
        let stream = surrogate_rng.substream(span_id as u64);
        for (t, s) in surr.iter_mut().enumerate() {
            *s += sd * stream.normal_at(t as u64);
        }
        // Emit a checkpoint whenever a window closes at this boundary.
        while let Some(scheme) = horizon_iter.peek() {
            if scheme.window_end() != pair[1] {
                break;
            }
            let horizon = scheme.window_end();
            let sigma_emp = mean_square(&data.column(horizon)?).sqrt();
            let sigma_surr = surr_var_exact.sqrt();
            rms_consistency =
                rms_consistency.max((mean_square(&surr).sqrt() / sigma_surr - 1.0).abs());
            checkpoints.push(VmCheckpoint {
                level: scheme.n,
                horizon,
                sigma_emp,
                sigma_surr,
                discrepancy: (sigma_surr - sigma_emp).abs(),
            });
            horizon_iter.next();
        }
    }

    let last = checkpoints.last().unwrap();
    let final_ratio = last.sigma_surr / last.sigma_emp;
    let ratio_ok = (final_ratio - 1.0).abs() <= 0.05;

    let pts: Vec<(f64, f64)> = checkpoints
        .iter()
        .filter(|c| c.discrepancy > 0.0)
        .map(|c| ((c.horizon as f64).ln(), c.discrepancy.ln()))
        .collect();
    let discrepancy_exponent = if pts.len() >= 2 {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        linear_fit(&xs, &ys).slope
    } else {
        0.0
    };
    let exponent_bound = rate.a_p + rate.delta + 0.1;
    Ok(VarianceMatchReport {
        checkpoints,
        final_ratio,
        ratio_ok,
        discrepancy_exponent,
        exponent_bound,
        exponent_ok: discrepancy_exponent <= exponent_bound,
        surrogate_rms_consistency: rms_consistency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_tiling_level_ten() {
        let s = block_decomposition(10, 0.6, 0.1).unwrap();
        assert_eq!(s.f, 6);
        assert_eq!(s.block_count, 64);
        assert_eq!(s.interval_len, 8);
        assert_eq!(s.j0_len, 128);
        assert_eq!(s.total_gap_len(), 512);
        let total: u64 = s.tiles.iter().map(|t| t.len).sum();
        assert_eq!(total, 1024);
    }

    #[test]
    fn tiles_are_ordered_disjoint_exhaustive() {
        for n in 1..=20u32 {
            let scheme = match block_decomposition(n, 0.6, 0.1) {
                Ok(s) => s,
                Err(QuenchedError::Infeasible(_)) => continue,
                Err(e) => panic!("unexpected error at n = {n}: {e}"),
            };
            let mut cursor = scheme.window_start();
            let mut expect_gap = true;
            for tile in &scheme.tiles {
                assert_eq!(tile.start, cursor, "n = {n}");
                assert!(tile.len > 0);
                assert_eq!(tile.kind == TileKind::Gap, expect_gap);
                cursor += tile.len;
                expect_gap = !expect_gap;
            }
            assert_eq!(cursor, scheme.window_end(), "n = {n}");
        }
    }

    #[test]
    fn infeasible_levels_are_reported() {
        // n = 6, beta = 0.6: f = 3, (f+2) 2^{-1} = 2.5 is not an integer.
        match block_decomposition(6, 0.6, 0.1) {
            Err(QuenchedError::Infeasible(msg)) => {
                assert!(msg.contains("not an integer") || msg.contains("violates"), "{msg}");
            }
            other => panic!("expected infeasible, got {:?}", other.map(|s| s.interval_len)),
        }
    }

    #[test]
    fn gap_exponents_follow_lowest_set_bit() {
        let expect = [0u32, 1, 0, 2, 0, 1, 0];
        for (j, e) in (1..=7u64).zip(expect) {
            assert_eq!(gap_exponent(j), e);
        }
    }

    #[test]
    fn rate_arithmetic() {
        assert!((default_beta(6.0).unwrap() - 0.6).abs() < 1e-15);
        assert!((default_beta(12.0).unwrap() - 12.0 / 22.0).abs() < 1e-15);
        assert!(default_beta(2.0).is_err());

        let a6 = rate_exponent(6.0).unwrap();
        assert!((a6 - (6.0 / 20.0 + 1.0 / 6.0)).abs() < 1e-15);
        let a12 = rate_exponent(12.0).unwrap();
        assert!((a12 - (12.0 / 44.0 + 1.0 / 12.0)).abs() < 1e-15);
        assert!(rate_exponent(5.0).is_err());

        // Monotone decrease toward the limits 1/4 and 1/2.
        let ps = [6.0, 8.0, 12.0, 24.0, 100.0];
        for w in ps.windows(2) {
            assert!(rate_exponent(w[1]).unwrap() < rate_exponent(w[0]).unwrap());
            assert!(default_beta(w[1]).unwrap() < default_beta(w[0]).unwrap());
        }
        assert!(rate_exponent(100.0).unwrap() > 0.25);
        assert!(default_beta(100.0).unwrap() > 0.5);
    }

    #[test]
    fn gap_cardinality_levels() {
        let report = gap_cardinality_check(20, 0.6, 0.1).unwrap();
        assert!(report.ok, "exponent {} > {}", report.fitted_exponent, report.bound);
        assert!(report.fitted_exponent <= 0.85);
        assert!(report.skipped_infeasible.contains(&6));
        // Each level's increment equals the scheme's own gap total.
        let s10 = block_decomposition(10, 0.6, 0.1).unwrap();
        let pos = report.levels.iter().position(|n| *n == 10).unwrap();
        assert_eq!(report.counts[pos] - report.counts[pos - 1], s10.total_gap_len());

        // Small eps pushes the exponent toward beta.
        let tight = gap_cardinality_check(20, 0.6, 0.02).unwrap();
        assert!(tight.fitted_exponent <= 0.6 + 1.5 * 0.02 + 0.1);
    }

    #[test]
    fn factorization_error_zero_cases() {
        // All-zero coefficients: both factors are 1 exactly.
        let phases = vec![(0.0, 1.3), (0.0, -0.4), (0.0, 2.0)];
        let zeroed: Vec<(f64, f64)> = phases.iter().map(|(_, q)| (0.0, *q)).collect();
        // P identically zero: E e^{i(P+Q)} = E e^{iQ} = E e^{iP} E e^{iQ}.
        assert!(factorization_error(&zeroed) < 1e-15);
        let all_zero: Vec<(f64, f64)> = phases.iter().map(|_| (0.0, 0.0)).collect();
        assert!(factorization_error(&all_zero) < 1e-15);
    }

    #[test]
    fn scaling_identity_of_the_probe() {
        // Evaluating at scaled coefficients equals scaling the sums.
        let rng = CounterRng::new(3);
        let sums: Vec<f64> = (0..5000u64).map(|i| rng.normal_at(i)).collect();
        let s = 0.37;
        let t = 0.8;
        let a: Vec<(f64, f64)> =
            sums.iter().map(|x| (t * (s * x), 0.5 * (s * x))).collect();
        let b: Vec<(f64, f64)> =
            sums.iter().map(|x| ((t * s) * x, (0.5 * s) * x)).collect();
        let ea = factorization_error(&a);
        let eb = factorization_error(&b);
        assert!((ea - eb).abs() < 1e-12, "{ea} vs {eb}");
    }
}
