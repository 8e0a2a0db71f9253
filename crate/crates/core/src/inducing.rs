//! The inducing scheme: membership in the good set E, first-return times,
//! induced observables over return blocks, Kac consistency, moment growth
//! of block sup norms, and the variance/moment conditions the block
//! harness needs from the induced process.
//!
//! Membership comes in two flavors. The surrogate rule mirrors the good-set
//! definition: all computable surrogates (4(1+Q), ||h||, ||1/h||, 1/Q, the
//! fitted decay prefactor) capped by C0, intersected with a variance floor
//! (1/n) E(S_n^2) >= Sigma^2/2 checked for L <= n <= N_check. The floor is
//! a truncation of an all-n condition and is flagged as such in reports.
//! The symbol-window test rule depends only on finitely many symbols, which
//! makes P(E) explicit and return gaps geometric in the i.i.d. base; the
//! statistical suites use it so their oracles stay exact.

use rayon::prelude::*;

use crate::birkhoff::{variance_profile_from, CenteredObservable};
use crate::driving::OmegaPath;
use crate::errors::{QResult, QuenchedError};
use crate::holder::HolderFunction;
use crate::measures::MeasureStack;
use crate::operator::decay_rate_from;
#[cfg(test)]
use crate::operator::Dynamics;
use crate::stats::{linear_fit, mean};

/// Membership rule for the good set.
#[derive(Clone, Debug)]
pub enum MembershipRule {
    /// Offsets 0..window must all carry `symbol`.
    SymbolWindow { window: usize, symbol: usize },
    /// The surrogate good-set criteria.
    Surrogate(SurrogateCriteria),
}

/// Thresholds and evaluation knobs for the surrogate good-set rule.
#[derive(Clone, Debug)]
pub struct SurrogateCriteria {
    pub c0: f64,
    /// Variance floor window start L.
    pub l: usize,
    /// Variance floor window end (truncated surrogate for "all n >= L").
    pub n_check: usize,
    /// Asymptotic variance estimate; membership cannot be decided without it.
    pub sigma2: Option<f64>,
    /// Horizon for the decay-prefactor fit.
    pub decay_n_max: usize,
}

/// Values behind one membership decision, for reports.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SurrogateReport {
    pub c_omega: f64,
    pub h_sup: f64,
    pub inv_h_norm: f64,
    pub inv_q: f64,
    pub k_hat: f64,
    pub variance_floor_ok: bool,
    pub member: bool,
}

/// Evaluate the symbol-window rule at a path offset.
pub fn symbol_window_member(
    path: &OmegaPath,
    offset: i64,
    window: usize,
    symbol: usize,
) -> bool {
    (0..window as i64).all(|j| path.symbol(offset + j) == symbol)
}

/// Evaluate the surrogate rule at an offset of a built stack. The stack
/// window must reach offset + max(n_check, decay_n_max).
pub fn surrogate_member(
    stack: &MeasureStack,
    obs: &CenteredObservable,
    offset: i64,
    crit: &SurrogateCriteria,
) -> QResult<SurrogateReport> {
    let sigma2 = crit.sigma2.ok_or_else(|| {
        QuenchedError::State("surrogate membership needs a variance estimate first".into())
    })?;
    let dynamics = stack.dynamics();
    let p = dynamics.holder();
    let q = dynamics.q_at(offset, 1e-10)?;
    let c_omega = 4.0 * (1.0 + q.upper());
    let inv_q = 1.0 / q.value;

    let h = HolderFunction::from_values(stack.h_at(offset).to_vec())?;
    let h_sup = h.sup_norm();
    let inv_h = HolderFunction::from_values(h.values().iter().map(|v| 1.0 / v).collect())?;
    let inv_h_norm = inv_h.holder_norm(p)?;

    // Fitted decay prefactor at this offset (documented surrogate for the
    // non-constructive decay constant).
    let m = dynamics.grid_size();
    let raw = obs.grid_at(dynamics.path(), offset, m)?;
    let mean_here = stack.mu_integral(offset, raw.values())?;
    let g = raw.offset(-mean_here);
    let fit = decay_rate_from(stack, dynamics, offset, &g, crit.decay_n_max)?;
    let k_hat = if fit.instant_decay { 0.0 } else { fit.k_hat };

    let mut member = c_omega <= crit.c0
        && h_sup <= crit.c0
        && inv_h_norm <= crit.c0
        && inv_q <= crit.c0
        && k_hat <= crit.c0;

    // Variance floor over the truncated window [L, N_check].
    let mut variance_floor_ok = true;
    if member {
        let profile = variance_profile_from(stack, obs, offset, crit.n_check, 1e-12)?;
        for n in crit.l..=crit.n_check {
            if profile[n - 1] < 0.5 * sigma2 {
                variance_floor_ok = false;
                break;
            }
        }
        member &= variance_floor_ok;
    }
    Ok(SurrogateReport { c_omega, h_sup, inv_h_norm, inv_q, k_hat, variance_floor_ok, member })
}

/// Membership at an offset under either rule.
pub fn membership(
    stack: &MeasureStack,
    obs: &CenteredObservable,
    offset: i64,
    rule: &MembershipRule,
) -> QResult<bool> {
    match rule {
        MembershipRule::SymbolWindow { window, symbol } => {
            Ok(symbol_window_member(stack.dynamics().path(), offset, *window, *symbol))
        }
        MembershipRule::Surrogate(crit) => {
            Ok(surrogate_member(stack, obs, offset, crit)?.member)
        }
    }
}

/// Return-time data for one realization.
#[derive(Clone, Debug, serde::Serialize)]
pub struct InducedSystem {
    pub base_in_e: bool,
    /// m_1 < m_2 < ... <= n_max (indices with sigma^m omega in E).
    pub returns: Vec<i64>,
    pub n_max: i64,
    /// Set when no return occurred before n_max (partial data).
    pub truncated: bool,
    /// Empirical fraction of E-offsets among 1..=n_max.
    pub p_hat: f64,
}

impl InducedSystem {
    /// m_k with the convention m_0 = 0.
    pub fn m(&self, k: usize) -> i64 {
        if k == 0 {
            0
        } else {
            self.returns[k - 1]
        }
    }

    pub fn return_count(&self) -> usize {
        self.returns.len()
    }

    /// k_n = #{k >= 1 : m_k <= n}.
    pub fn k_n(&self, n: i64) -> usize {
        self.returns.partition_point(|m| *m <= n)
    }

    /// Block bounds [m_k, m_{k+1}) for block index k >= 0.
    pub fn block_bounds(&self, block: usize) -> QResult<(i64, i64)> {
        if block >= self.returns.len() {
            return Err(QuenchedError::Argument(format!(
                "block {block} out of range: only {} returns recorded",
                self.returns.len()
            )));
        }
        Ok((self.m(block), self.m(block + 1)))
    }
}

/// Scan offsets 1..=n_max for E-visits under the symbol-window rule.
pub fn return_times_symbolic(
    path: &OmegaPath,
    window: usize,
    symbol: usize,
    n_max: i64,
) -> InducedSystem {
    let base_in_e = symbol_window_member(path, 0, window, symbol);
    let symbols = path.symbols_in(0..n_max + window as i64);
    let is_member = |offset: i64| -> bool {
        (0..window as i64).all(|j| symbols[(offset + j) as usize] as usize == symbol)
    };
    let returns: Vec<i64> = (1..=n_max).filter(|o| is_member(*o)).collect();
    let p_hat = returns.len() as f64 / n_max as f64;
    let truncated = returns.is_empty();
    InducedSystem { base_in_e, returns, n_max, truncated, p_hat }
}

/// Scan offsets 1..=n_max under an arbitrary rule (parallel for the
/// surrogate rule, which is expensive per offset).
pub fn return_times(
    stack: &MeasureStack,
    obs: &CenteredObservable,
    rule: &MembershipRule,
    n_max: i64,
) -> QResult<InducedSystem> {
    if let MembershipRule::SymbolWindow { window, symbol } = rule {
        return Ok(return_times_symbolic(stack.dynamics().path(), *window, *symbol, n_max));
    }
    let base_in_e = membership(stack, obs, 0, rule)?;
    let flags: Vec<QResult<bool>> =
        (1..=n_max).into_par_iter().map(|o| membership(stack, obs, o, rule)).collect();
    let mut returns = Vec::new();
    for (i, flag) in flags.into_iter().enumerate() {
        if flag? {
            returns.push(i as i64 + 1);
        }
    }
    let p_hat = returns.len() as f64 / n_max as f64;
    let truncated = returns.is_empty();
    Ok(InducedSystem { base_in_e, returns, n_max, truncated, p_hat })
}

/// The induced observable over one return block, evaluated on the grid.
#[derive(Clone, Debug)]
pub struct InducedObservable {
    /// Block sum as a function of the starting point in the block's fiber.
    pub values: HolderFunction,
    /// A = sup |Psi| over the grid.
    pub sup: f64,
    pub block_start: i64,
    pub block_end: i64,
}

/// Orbit-sum evaluation of the induced observable over [from, to) on the
/// grid of the given size.
pub fn induced_block_function(
    path: &OmegaPath,
    obs: &CenteredObservable,
    from: i64,
    to: i64,
    m: usize,
) -> QResult<InducedObservable> {
    let mut values = vec![0.0f64; m];
    for (k, v) in values.iter_mut().enumerate() {
        let mut x = k as f64 / m as f64;
        let mut s = 0.0;
        for j in from..to {
            let params = path.params(j);
            s += obs.kind().eval_raw(params, x) - obs.mean_at(j)?;
            x = crate::fiber::wrap(params.branch_count as f64 * x + params.offset);
        }
        *v = s;
    }
    let f = HolderFunction::from_values(values)?;
    let sup = f.sup_norm();
    Ok(InducedObservable { values: f, sup, block_start: from, block_end: to })
}

/// Psi for the k-th return block of the system.
pub fn induced_observable(
    path: &OmegaPath,
    obs: &CenteredObservable,
    sys: &InducedSystem,
    block: usize,
    m: usize,
) -> QResult<InducedObservable> {
    let (from, to) = sys.block_bounds(block)?;
    induced_block_function(path, obs, from, to, m)
}

/// Kac-consistency report at the largest recorded return.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct KacReport {
    pub n_returns: usize,
    pub m_n_over_n: f64,
    pub inv_p_hat: f64,
    pub k_n_over_n: f64,
    pub p_hat: f64,
    /// |m_n/n - 1/P(E)| and |k_n/n - P(E)|.
    pub deviation_m: f64,
    pub deviation_k: f64,
}

pub fn kac_check(sys: &InducedSystem) -> QResult<KacReport> {
    let n_returns = sys.return_count();
    if n_returns < 100 {
        return Err(QuenchedError::Precondition(format!(
            "Kac check needs >= 100 returns, got {n_returns}"
        )));
    }
    let m_n = *sys.returns.last().unwrap();
    let m_n_over_n = m_n as f64 / n_returns as f64;
    let inv_p_hat = 1.0 / sys.p_hat;
    let k_n = sys.k_n(sys.n_max);
    let k_n_over_n = k_n as f64 / sys.n_max as f64;
    Ok(KacReport {
        n_returns,
        m_n_over_n,
        inv_p_hat,
        k_n_over_n,
        p_hat: sys.p_hat,
        deviation_m: (m_n_over_n - inv_p_hat).abs(),
        deviation_k: (k_n_over_n - sys.p_hat).abs(),
    })
}

/// Moment diagnostics for the block sup norms A = ||Psi||_inf.
#[derive(Clone, Debug, serde::Serialize)]
pub struct MomentReport {
    pub p: f64,
    pub draws: usize,
    /// Empirical p-th moment of A over the draws.
    pub moment_p: f64,
    /// Same over the first half of the draws (stability diagnostic).
    pub moment_p_half: f64,
    /// Fitted growth exponent of max_{k<=n} A_k against n (log-log).
    pub running_max_exponent: f64,
    /// Hill tail-index estimate over the top decile (large = light tail).
    pub hill_tail_index: f64,
    pub max_a: f64,
}

/// Estimate A-moment finiteness from the block sups along one realization:
/// draws are the consecutive return blocks of the induced system.
pub fn moment_check(
    path: &OmegaPath,
    obs: &CenteredObservable,
    sys: &InducedSystem,
    p: f64,
    m: usize,
) -> QResult<MomentReport> {
    if p < 6.0 {
        return Err(QuenchedError::Argument(format!("moment order p must be >= 6, got {p}")));
    }
    let blocks = sys.return_count();
    if blocks < 2 {
        return Err(QuenchedError::Precondition("moment check needs >= 2 blocks".into()));
    }
    let sups: Vec<f64> = (0..blocks - 1)
        .map(|k| induced_observable(path, obs, sys, k, m).map(|io| io.sup))
        .collect::<QResult<Vec<f64>>>()?;
    let draws = sups.len();
    let moment = |xs: &[f64]| xs.iter().map(|a| a.powf(p)).sum::<f64>() / xs.len() as f64;
    let moment_p = moment(&sups);
    let moment_p_half = moment(&sups[..draws / 2]);

    // Running max versus n in log-log coordinates.
    let mut running = 0.0f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, a) in sups.iter().enumerate() {
        running = running.max(*a);
        if running > 0.0 {
            xs.push(((k + 1) as f64).ln());
            ys.push(running.ln());
        }
    }
    let running_max_exponent = if xs.len() >= 2 { linear_fit(&xs, &ys).slope } else { 0.0 };

    // Hill estimator over the top decile.
    let mut sorted = sups.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = (draws / 10).max(2).min(sorted.len());
    let x_k = sorted[top - 1].max(1e-300);
    let hill: f64 =
        sorted[..top].iter().map(|x| (x.max(1e-300) / x_k).ln()).sum::<f64>() / top as f64;
    let hill_tail_index = if hill > 0.0 { 1.0 / hill } else { f64::INFINITY };

    Ok(MomentReport {
        p,
        draws,
        moment_p,
        moment_p_half,
        running_max_exponent,
        hill_tail_index,
        max_a: sorted[0],
    })
}

/// Variance lower-bound report for induced block sums.
#[derive(Clone, Debug, serde::Serialize)]
pub struct GoReport {
    /// Fitted linear-growth coefficients of Var(sum of m blocks), one per
    /// tested start offset.
    pub u_by_offset: Vec<f64>,
    pub u_hat: f64,
    pub go1_ok: bool,
    /// Moment-growth exponent from the A-diagnostics and its cap 1/p.
    pub moment_exponent: f64,
    pub go2_ok: bool,
}

/// Check linear variance growth of induced block sums: for start offsets k
/// and window lengths m, Var(sum_{j=k+1}^{k+m} A_j) should grow like u*m
/// with u >= sigma2/4 (factor-2 slack for Monte Carlo noise on top of the
/// factor-2 in the floor itself).
///
/// `sums_at_returns[t][k]` must hold the trajectory-t Birkhoff sum at
/// orbit time m_k (k = 0 meaning time 0).
pub fn go_conditions_check(
    sums_at_returns: &[Vec<f64>],
    m_grid: &[usize],
    offsets: &[usize],
    sigma2: f64,
    moment: &MomentReport,
) -> QResult<GoReport> {
    let n_traj = sums_at_returns.len();
    if n_traj < 100 {
        return Err(QuenchedError::Precondition("need >= 100 trajectories".into()));
    }
    let k_available = sums_at_returns[0].len();
    let mut u_by_offset = Vec::new();
    for &k in offsets {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &m in m_grid {
            if k + m + 1 >= k_available {
                continue;
            }
            let block: Vec<f64> = sums_at_returns
                .iter()
                .map(|row| row[k + m + 1] - row[k + 1])
                .collect();
            xs.push(m as f64);
            ys.push(crate::stats::variance(&block));
        }
        if xs.len() >= 2 {
            u_by_offset.push(linear_fit(&xs, &ys).slope);
        }
    }
    if u_by_offset.is_empty() {
        return Err(QuenchedError::Argument(
            "no (offset, m) pair fits inside the recorded returns".into(),
        ));
    }
    let u_hat = mean(&u_by_offset);
    let go1_ok = u_hat >= 0.25 * sigma2;
    // Moment condition: the recorded A growth exponent must stay near or
    // below 1/p (slack absorbs fit noise on light-tailed data).
    let go2_ok = moment.running_max_exponent <= 1.0 / moment.p + 0.1;
    Ok(GoReport {
        u_by_offset,
        u_hat,
        go1_ok,
        moment_exponent: moment.running_max_exponent,
        go2_ok,
    })
}

/// Growth of the boundary discrepancy between the raw and induced partial
/// sums (the two block sups at the cut).
#[derive(Clone, Debug, serde::Serialize)]
pub struct TailBoundReport {
    pub n_grid: Vec<i64>,
    pub discrepancy: Vec<f64>,
    pub fitted_exponent: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Discrepancy surrogate D(n) = A(m_{k_n}) + A(n) (0 when n is itself a
/// return time), fitted against n in log-log coordinates; the exponent must
/// not exceed 1/p + 0.1.
pub fn tail_bound_check(
    path: &OmegaPath,
    obs: &CenteredObservable,
    sys: &InducedSystem,
    n_grid: &[i64],
    p: f64,
    m: usize,
) -> QResult<TailBoundReport> {
    let next_return_after = |j: i64| -> i64 {
        match sys.returns.binary_search(&j) {
            Ok(pos) => sys.returns.get(pos + 1).copied().unwrap_or(sys.n_max),
            Err(pos) => sys.returns.get(pos).copied().unwrap_or(sys.n_max),
        }
    };
    let mut discrepancy = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let k_n = sys.k_n(n);
        let m_kn = sys.m(k_n);
        if m_kn == n {
            discrepancy.push(0.0);
            continue;
        }
        let a_at = |j: i64| -> QResult<f64> {
            let to = next_return_after(j);
            Ok(induced_block_function(path, obs, j, to, m)?.sup)
        };
        discrepancy.push(a_at(m_kn)? + a_at(n)?);
    }
    let pts: Vec<(f64, f64)> = n_grid
        .iter()
        .zip(discrepancy.iter())
        .filter(|(_, d)| **d > 0.0)
        .map(|(n, d)| ((*n as f64).ln(), d.ln()))
        .collect();
    let fitted_exponent = if pts.len() >= 2 {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        linear_fit(&xs, &ys).slope
    } else {
        0.0
    };
    let bound = 1.0 / p + 0.1;
    Ok(TailBoundReport {
        n_grid: n_grid.to_vec(),
        discrepancy,
        fitted_exponent,
        bound,
        ok: fitted_exponent <= bound,
    })
}

/// Pointwise residual of the resummation identity at one (x, n):
/// sum_{j<n} psi_j(f^j x) - sum_{j<k_n} Psi_j(F^j x)
///   = Psi at m_{k_n} evaluated along the orbit - Psi at n along the orbit.
/// Both sides are evaluated through independent code paths (direct Birkhoff
/// sum versus per-block induced sums at pushed points).
pub fn resummation_residual(
    path: &OmegaPath,
    obs: &CenteredObservable,
    sys: &InducedSystem,
    x: crate::fiber::CirclePoint,
    n: i64,
) -> QResult<f64> {
    let k_n = sys.k_n(n);
    let m_kn = sys.m(k_n);
    let next = if k_n < sys.return_count() { sys.m(k_n + 1) } else { sys.n_max };
    if n > sys.n_max || next > sys.n_max {
        return Err(QuenchedError::Argument(format!(
            "resummation at n = {n} needs returns beyond the scan horizon"
        )));
    }

    let orbit = crate::fiber::iterate(path, x, next.max(n) as usize);
    let eval_block = |from: i64, to: i64| -> QResult<f64> {
        let mut s = 0.0;
        for j in from..to {
            s += obs.eval(path, j, orbit[j as usize].value())?;
        }
        Ok(s)
    };

    // Left side: direct sum minus the induced partial sums, each block
    // evaluated at the pushed point F^block x along the orbit.
    let direct = crate::birkhoff::birkhoff_sum(path, obs, x, n as usize)?;
    let mut induced_sum = 0.0;
    for block in 0..k_n {
        induced_sum += eval_block(sys.m(block), sys.m(block + 1))?;
    }
    let lhs = direct - induced_sum;

    // Right side: boundary blocks along the same orbit.
    let psi_at_mkn = eval_block(m_kn, next)?;
    let psi_at_n = eval_block(n, next)?;
    let rhs = psi_at_mkn - psi_at_n;
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::birkhoff::{center_observable, Observable};
    use crate::driving::{Alphabet, SymbolParams};
    use crate::holder::HolderParams;
    use crate::rng::CounterRng;

    fn sym(d: u32, b: f64, eps: f64) -> SymbolParams {
        SymbolParams {
            branch_count: d,
            offset: b,
            potential_amplitude: eps,
            holder_bound: 7.0,
            obs_cos: 1.0,
            obs_sin: 0.0,
        }
    }

    fn two_symbol_flat(seed: u64) -> Dynamics {
        let alphabet =
            Alphabet::new(vec![sym(2, 0.0, 0.0), sym(3, 0.3, 0.0)], vec![0.5, 0.5]).unwrap();
        Dynamics::new(OmegaPath::sample(seed, alphabet), 256, HolderParams::default()).unwrap()
    }

    #[test]
    fn symbolic_membership_patterns() {
        let dy = two_symbol_flat(3);
        let path = dy.path();
        let sys = return_times_symbolic(path, 1, 0, 200);
        // Returns exactly match symbol-0 offsets.
        for &r in &sys.returns {
            assert_eq!(path.symbol(r), 0);
        }
        let zeros = (1..=200).filter(|&o| path.symbol(o) == 0).count();
        assert_eq!(sys.return_count(), zeros);
        assert_eq!(sys.k_n(200), zeros);
        // No index strictly between consecutive returns is in E.
        for w in sys.returns.windows(2) {
            for j in w[0] + 1..w[1] {
                assert_ne!(path.symbol(j), 0);
            }
        }
    }

    #[test]
    fn all_e_case_has_unit_gaps() {
        let path = OmegaPath::sample(1, Alphabet::single(sym(2, 0.0, 0.0)));
        let sys = return_times_symbolic(&path, 0, 0, 50);
        // window = 0: every offset is a member.
        assert_eq!(sys.returns, (1..=50).collect::<Vec<i64>>());
        assert_eq!(sys.p_hat, 1.0);
        assert_eq!(sys.k_n(7), 7);
    }

    #[test]
    fn kac_consistency_geometric_returns() {
        let dy = two_symbol_flat(11);
        let sys = return_times_symbolic(dy.path(), 1, 0, 10_000);
        let kac = kac_check(&sys).unwrap();
        // P(E) = 1/2, so m_n/n -> 2 within 10%.
        assert!((kac.m_n_over_n - 2.0).abs() < 0.2, "{:?}", kac);
        assert!(kac.deviation_m <= 0.1 * kac.inv_p_hat);
        assert!(kac.deviation_k <= 0.05);
        // Definition identity: m_{k_n} <= n < m_{k_n + 1}.
        for n in [100i64, 500, 2500] {
            let k = sys.k_n(n);
            assert!(sys.m(k) <= n);
            if k < sys.return_count() {
                assert!(sys.m(k + 1) > n);
            }
        }
    }

    #[test]
    fn induced_blocks_and_sups() {
        let dy = two_symbol_flat(7);
        let stack = MeasureStack::build(&dy, 0, 64, 16, 1e-10, 512).unwrap();
        let obs = center_observable(Observable::Trig, &stack, 256).unwrap();
        let sys = return_times_symbolic(dy.path(), 1, 0, 200);
        let io = induced_observable(dy.path(), &obs, &sys, 0, 256).unwrap();
        let (from, to) = sys.block_bounds(0).unwrap();
        // Spot-check the grid values against direct orbit sums.
        for k in [0usize, 17, 100, 255] {
            let x = k as f64 / 256.0;
            let mut s = 0.0;
            let mut y = x;
            for j in from..to {
                let p = dy.path().params(j);
                s += obs.kind().eval_raw(p, y) - obs.mean_at(j).unwrap();
                y = crate::fiber::wrap(p.branch_count as f64 * y + p.offset);
            }
            assert!((io.values.values()[k] - s).abs() < 1e-12);
        }
        assert!(io.sup > 0.0);
        assert!(induced_observable(dy.path(), &obs, &sys, sys.return_count(), 256).is_err());
    }

    #[test]
    fn resummation_identity_pointwise() {
        let dy = two_symbol_flat(13);
        let stack = MeasureStack::build(&dy, 0, 8, 16, 1e-10, 512).unwrap();
        let obs = center_observable(Observable::Trig, &stack, 600).unwrap();
        let sys = return_times_symbolic(dy.path(), 1, 0, 500);
        let rng = CounterRng::new(50);
        for t in 0..100u64 {
            let x = crate::fiber::CirclePoint::new(rng.uniform_at(t));
            let n = 10 + (rng.u64_at(t + 1000) % 300) as i64;
            let r = resummation_residual(dy.path(), &obs, &sys, x, n).unwrap();
            assert!(r < 1e-9, "trial {t}: residual {r}");
        }
    }

    #[test]
    fn membership_monotone_in_c0_and_threshold_floor() {
        let dy = two_symbol_flat(17);
        let stack = MeasureStack::build(&dy, 0, 96, 24, 1e-10, 2048).unwrap();
        let obs = center_observable(Observable::Trig, &stack, 96).unwrap();
        let base = SurrogateCriteria {
            c0: 1000.0,
            l: 4,
            n_check: 16,
            sigma2: Some(0.5),
            decay_n_max: 12,
        };
        let mut members_small = 0;
        let mut members_large = 0;
        for o in 0..24i64 {
            let small = surrogate_member(&stack, &obs, o, &SurrogateCriteria { c0: 9.0, ..base.clone() })
                .unwrap()
                .member;
            let large = surrogate_member(&stack, &obs, o, &base).unwrap().member;
            // Monotonicity: raising C0 never removes members.
            assert!(!small || large, "offset {o}");
            members_small += small as usize;
            members_large += large as usize;
        }
        assert!(members_large >= members_small);
        // C(omega) = 4(1+Q) >= 4, so C0 = 0.5 rejects everything.
        let tiny = SurrogateCriteria { c0: 0.5, ..base };
        assert!(!surrogate_member(&stack, &obs, 0, &tiny).unwrap().member);
    }

    #[test]
    fn surrogate_requires_variance_estimate() {
        let dy = two_symbol_flat(17);
        let stack = MeasureStack::build(&dy, 0, 32, 16, 1e-10, 512).unwrap();
        let obs = center_observable(Observable::Trig, &stack, 32).unwrap();
        let crit = SurrogateCriteria {
            c0: 100.0,
            l: 4,
            n_check: 8,
            sigma2: None,
            decay_n_max: 8,
        };
        assert!(surrogate_member(&stack, &obs, 0, &crit).is_err());
    }

    #[test]
    fn moment_check_geometric_gaps() {
        let dy = two_symbol_flat(23);
        let stack = MeasureStack::build(&dy, 0, 8, 16, 1e-10, 512).unwrap();
        let obs = center_observable(Observable::Trig, &stack, 4200).unwrap();
        let sys = return_times_symbolic(dy.path(), 1, 0, 4096);
        let report = moment_check(dy.path(), &obs, &sys, 6.0, 256).unwrap();
        // Bounded observable, geometric gaps: 6th moment is finite and the
        // oracle E[gap^6] = sum k^6 2^-k bounds it up to ||psi||^6 ~ 1.5^6.
        let oracle: f64 = (1..200).map(|k| (k as f64).powi(6) * 0.5f64.powi(k)).sum();
        let cap = oracle * 1.5f64.powi(6);
        assert!(report.moment_p <= cap, "moment {} vs cap {cap}", report.moment_p);
        // Stability under doubling the draw count.
        assert!((report.moment_p - report.moment_p_half).abs() <= 0.5 * report.moment_p + 5.0);
        // Light tail: running max grows much slower than n^{1/6}.
        assert!(report.running_max_exponent <= 1.0 / 6.0 + 0.1);
        assert!(report.hill_tail_index > 2.0);
    }

    #[test]
    fn tail_bound_geometric_gaps() {
        let dy = two_symbol_flat(29);
        let stack = MeasureStack::build(&dy, 0, 8, 16, 1e-10, 512).unwrap();
        let obs = center_observable(Observable::Trig, &stack, 10_300).unwrap();
        let sys = return_times_symbolic(dy.path(), 1, 0, 10_000);
        let grid: Vec<i64> = (4..=13).map(|e| 1i64 << e).collect();
        let report = tail_bound_check(dy.path(), &obs, &sys, &grid, 6.0, 256).unwrap();
        assert!(report.ok, "exponent {} > {}", report.fitted_exponent, report.bound);
        // A return time itself has zero discrepancy.
        let at_return = sys.returns[50];
        let r2 = tail_bound_check(dy.path(), &obs, &sys, &[at_return], 6.0, 256).unwrap();
        assert_eq!(r2.discrepancy[0], 0.0);
    }
}
