//! Experiment orchestration: each public `run_*` method is one subcommand
//! pipeline producing a serializable artifact. Everything is a pure
//! function of (config, seed); trajectory work parallelizes over
//! counter-seeded substreams so worker count never changes results.

use serde::Serialize;

use crate::birkhoff::{
    center_observable, run_ensemble, variance_mc, variance_operator, variance_report,
    CenteredObservable, Observable, TrajectoryEnsemble, VarianceReport,
};
use crate::blocks::{
    block_decomposition, clt_test, gap_cardinality_check, h_condition_probe, variance_match,
    BlockScheme, CltOutcome, GapCardinalityReport, HProbeSpec, HReport, IndexedSums, KsReport,
    RateParams, VarianceMatchReport,
};
use crate::config::ExperimentConfig;
use crate::driving::stream_tags;
use crate::errors::{QResult, QuenchedError};
use crate::fiber::CirclePoint;
use crate::holder::HolderFunction;
use crate::inducing::{
    go_conditions_check, kac_check, moment_check, resummation_residual, return_times_symbolic,
    InducedSystem, KacReport, MomentReport,
};
use crate::measures::{sample_mu_orbits, MeasureStack};
use crate::operator::{
    decay_rate, ly_check, norm_bound_check, test_dictionary, Dynamics, LYReport,
};
use crate::rng::CounterRng;

const TAU: f64 = std::f64::consts::TAU;

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub dynamics: Dynamics,
    rng: CounterRng,
}

impl Experiment {
    pub fn new(
        cfg: ExperimentConfig,
        config_hash: String,
        seed_override: Option<u64>,
    ) -> QResult<Experiment> {
        let seed = seed_override.unwrap_or(cfg.monte_carlo.seed);
        let dynamics = cfg.dynamics(seed)?;
        Ok(Experiment { cfg, config_hash, seed, dynamics, rng: CounterRng::new(seed) })
    }

    pub fn from_toml(text: &str, seed_override: Option<u64>) -> QResult<Experiment> {
        let cfg = ExperimentConfig::from_str(text)?;
        let hash = crate::config::config_hash(text.as_bytes());
        Experiment::new(cfg, hash, seed_override)
    }

    fn observable_kind(&self) -> Observable {
        self.cfg.observable.into()
    }

    fn eps_zero(&self) -> bool {
        self.cfg.alphabet.iter().all(|s| s.eps == 0.0)
    }

    pub fn build_stack(&self, hi: i64) -> QResult<MeasureStack> {
        MeasureStack::build(
            &self.dynamics,
            0,
            hi,
            self.cfg.measures.n_relax,
            self.cfg.measures.tol,
            self.cfg.measures.relax_cap,
        )
    }

    // ----- triplet -------------------------------------------------------

    pub fn run_triplet(&self, window_hi: i64) -> QResult<TripletArtifact> {
        let stack = self.build_stack(window_hi)?;
        let dict = trig_dictionary(self.cfg.grid);
        let mut equivariance = Vec::new();
        let mut max_equiv: f64 = 0.0;
        for offset in 0..window_hi {
            let mut worst: f64 = 0.0;
            for (_, g) in &dict {
                worst = worst.max(stack.equivariance_residual(offset, g)?);
            }
            equivariance.push(worst);
            max_equiv = max_equiv.max(worst);
        }
        let lambdas: Vec<(i64, f64)> = (0..=window_hi).map(|o| (o, stack.lambda_at(o))).collect();
        // Normalize-lambda diagnostic: folded eigenvalues re-estimate to 1
        // and the normalized images of 1 stay O(1).
        let folded = self.build_stack(window_hi)?.normalize_lambda();
        let reest_dev = (0..window_hi)
            .map(|o| (folded.reestimate_lambda(o) - 1.0).abs())
            .fold(0.0f64, f64::max);
        let ones_sup_max = folded
            .normalized_ones_sups(window_hi as usize)
            .into_iter()
            .fold(0.0f64, f64::max);
        Ok(TripletArtifact {
            window_hi,
            relax_used: stack.relax_used(),
            lambdas,
            max_eigen_residual: stack.max_eigen_residual(),
            equivariance_residuals: equivariance,
            max_equivariance_residual: max_equiv,
            reestimated_lambda_deviation: reest_dev,
            normalized_ones_sup: ones_sup_max,
        })
    }

    pub fn triplet_csv_rows(&self, stack: &MeasureStack, offset: i64) -> Vec<Vec<f64>> {
        let t = stack.triplet(offset);
        t.h.values()
            .iter()
            .zip(t.nu.iter())
            .map(|(h, nu)| vec![t.lambda, *h, *nu])
            .collect()
    }

    // ----- variance ------------------------------------------------------

    pub fn run_variance(&self) -> QResult<VarianceArtifact> {
        let kind = self.observable_kind();
        let mut flags = Vec::new();
        let mut checkpoints = self.cfg.checkpoints();
        let n_top = *checkpoints.last().unwrap();

        // Operator estimate horizon: capped so the stack stays small.
        let op_horizon = n_top.min(1024);
        let stack = self.build_stack(op_horizon as i64 + 64)?;
        let obs = center_observable(kind, &stack, n_top.max(op_horizon + 64) as i64 + 1)?;
        let sigma2_op = variance_operator(&stack, &obs, op_horizon, 1e-12)?;

        let mu_rng = self.rng.substream(stream_tags::MU_SAMPLER);
        let traj_rng = self.rng.substream(stream_tags::TRAJECTORY);
        let ensemble = if self.eps_zero() {
            let initial =
                stack.sample_mu(0, self.cfg.monte_carlo.n, &mu_rng, false)?;
            run_ensemble(self.dynamics.path(), &obs, &initial, &checkpoints, &traj_rng)?
        } else {
            // Forward orbits only sample the family for the derivative
            // potential; with eps > 0 use exact backward orbits, capped to
            // the stack window.
            flags.push("backward-orbit-sampling".to_string());
            checkpoints.retain(|n| *n <= op_horizon);
            if checkpoints.is_empty() {
                checkpoints.push(op_horizon);
            }
            flags.push(format!("mc-horizon-capped={op_horizon}"));
            backward_ensemble(
                &stack,
                &obs,
                self.cfg.monte_carlo.n,
                &checkpoints,
                &mu_rng,
            )?
        };
        let mut report = variance_report(&ensemble, Some(sigma2_op))?;
        // Degenerate observables have no meaningful operator horizon match;
        // report both estimators as-is.
        let (mc_at_op, se_at_op) = if ensemble.checkpoint_index(op_horizon).is_some() {
            variance_mc(&ensemble, op_horizon)?
        } else {
            (report.sigma2_mc, report.stderr)
        };
        report.sigma2_op = Some(sigma2_op);
        let agreement = (mc_at_op - sigma2_op).abs() <= 3.0 * se_at_op;
        Ok(VarianceArtifact { report, agreement_at_op_horizon: agreement, op_horizon, flags })
    }

    // ----- contraction and norm-bound certification -----------------------

    pub fn run_ly(&self, instances: usize, n_max: usize, t_cap: f64) -> QResult<LyArtifact> {
        let dict_rng = self.rng.substream(stream_tags::DICTIONARY);
        let twist_rng = self.rng.substream(stream_tags::TWISTS);
        let dict = test_dictionary(self.cfg.grid, self.dynamics.holder(), &dict_rng, 8);
        let mut reports = Vec::with_capacity(instances);
        let mut all_satisfied = true;
        let mut min_slack = f64::INFINITY;
        for i in 0..instances {
            let stream = twist_rng.substream(i as u64);
            let n = 1 + (stream.u64_at(0) % n_max as u64) as usize;
            let g = &dict[(stream.u64_at(1) % dict.len() as u64) as usize];
            let r = ly_check(&self.dynamics, n, t_cap, g, None, &stream.substream(2))?;
            all_satisfied &= r.satisfied;
            min_slack = min_slack.min(r.slack);
            reports.push(r);
        }

        let mut norm_certified = true;
        let mut norm_margin = f64::INFINITY;
        let norm_instances = instances / 2;
        for i in 0..norm_instances {
            let stream = twist_rng.substream(1_000_000 + i as u64);
            let n = 1 + (stream.u64_at(0) % n_max as u64) as usize;
            let twists: Vec<f64> =
                (0..n).map(|j| stream.uniform_at(10 + j as u64) * 2.0 - 1.0).collect();
            let r = norm_bound_check(&self.dynamics, n, &twists, &dict)?;
            norm_certified &= r.certified;
            norm_margin = norm_margin.min(r.bound - r.norm_estimate);
        }
        Ok(LyArtifact {
            instances,
            all_satisfied,
            min_slack,
            norm_instances,
            norm_all_certified: norm_certified,
            norm_min_margin: norm_margin,
            reports,
        })
    }

    // ----- decay ----------------------------------------------------------

    pub fn run_decay(&self, n_max: usize) -> QResult<DecayArtifact> {
        let stack = self.build_stack(n_max as i64 + 1)?;
        let raw = HolderFunction::from_fn(self.cfg.grid, |x| {
            (TAU * x).cos() + 0.4 * (2.0 * TAU * x).sin() + 0.2 * (3.0 * TAU * x).cos()
        })?;
        let mean = stack.mu_integral(0, raw.values())?;
        let g = raw.offset(-mean);
        let fit = decay_rate(&stack, &self.dynamics, &g, n_max)?;
        Ok(DecayArtifact {
            n_max,
            lambda_hat: fit.lambda_hat,
            k_hat: fit.k_hat,
            r_squared: fit.r_squared,
            instant_decay: fit.instant_decay,
        })
    }

    // ----- inducing -------------------------------------------------------

    fn induced_system(&self, n_max: i64) -> InducedSystem {
        return_times_symbolic(
            self.dynamics.path(),
            self.cfg.inducing.test_mode_window,
            self.cfg.inducing.test_mode_symbol,
            n_max,
        )
    }

    pub fn run_induce(&self) -> QResult<InduceArtifact> {
        let n_max = self.cfg.inducing.n_max as i64;
        let sys = self.induced_system(n_max);
        if sys.return_count() < 100 {
            return Err(QuenchedError::Precondition(format!(
                "only {} returns before {n_max}; widen the scan or loosen membership",
                sys.return_count()
            )));
        }
        let kac = kac_check(&sys)?;

        // Centering horizon covers every block the diagnostics touch.
        let stack = self.build_stack(8)?;
        let obs = center_observable(self.observable_kind(), &stack, n_max + 64)?;
        let moments = moment_check(self.dynamics.path(), &obs, &sys, self.cfg.rates.p, 256)?;

        // Sigma^2 for the variance floor via the operator route.
        let op_stack = self.build_stack(256 + 64)?;
        let op_obs = center_observable(self.observable_kind(), &op_stack, 256 + 65)?;
        let sigma2 = variance_operator(&op_stack, &op_obs, 256, 1e-12)?;

        // Induced block-sum variances over a return-indexed ensemble. A
        // perturbed potential needs backward orbits, so the stack window
        // must reach the last return used.
        let k_needed = sys.return_count().min(600);
        let indices: Vec<u64> = (0..=k_needed as u64).collect();
        let mc_stack = if self.eps_zero() {
            stack
        } else {
            self.build_stack(sys.m(k_needed) + 1)?
        };
        let data = crate::blocks::induced_checkpoint_sums(
            &mc_stack,
            &obs,
            &sys,
            self.cfg.monte_carlo.n.min(4000),
            &indices,
            &self.rng,
        )?;
        let m_grid: Vec<usize> = [4, 8, 16, 32, 64, 128, 256]
            .into_iter()
            .filter(|m| *m + 101 < k_needed)
            .collect();
        let go = go_conditions_check(&data.sums, &m_grid, &[0, 10, 100], sigma2, &moments)?;

        // Resummation identity spot checks.
        let res_rng = self.rng.substream(stream_tags::DICTIONARY);
        let mut max_residual: f64 = 0.0;
        for t in 0..100u64 {
            let x = CirclePoint::new(res_rng.uniform_at(t));
            let n = 10 + (res_rng.u64_at(1000 + t) % (n_max as u64 / 2)) as i64;
            max_residual =
                max_residual.max(resummation_residual(self.dynamics.path(), &obs, &sys, x, n)?);
        }

        let k_table: Vec<(i64, usize)> =
            [100, 1000, n_max].iter().map(|n| (*n, sys.k_n(*n))).collect();
        Ok(InduceArtifact {
            p_hat: sys.p_hat,
            returns: sys.returns.clone(),
            k_table,
            kac,
            a_moments: moments,
            go1: Go1Summary { u_hat: go.u_hat, ok: go.go1_ok },
            go2: Go2Summary { exponent: go.moment_exponent, ok: go.go2_ok },
            truncated: sys.truncated,
            sigma2_floor_reference: sigma2,
            resummation_max_residual: max_residual,
        })
    }

    // ----- blocks ---------------------------------------------------------

    pub fn run_blocks(
        &self,
        n: u32,
        beta: Option<f64>,
        eps: Option<f64>,
    ) -> QResult<BlocksArtifact> {
        let beta = beta.unwrap_or(self.cfg.beta());
        let eps = eps.unwrap_or(self.cfg.rates.eps_blocks);
        let scheme = block_decomposition(n, beta, eps)?;
        let gap_cardinality = gap_cardinality_check(n.max(12), beta, eps)?;
        Ok(BlocksArtifact { scheme, gap_cardinality })
    }

    // ----- factorization probe ---------------------------------------------

    pub fn hprobe_spec(&self) -> HProbeSpec {
        // Single-increment blocks keep the characteristic functions well
        // away from zero, so the factorization error is measurable.
        HProbeSpec {
            pre_edges: vec![0, 1, 2],
            post_edges: vec![2, 3, 4],
            t_values: vec![0.6, -0.8, 0.5, 0.9],
            k_grid: vec![1, 2, 4, 8, 16],
            bootstrap: 100,
        }
    }

    pub fn run_hprobe(&self, n_traj: usize) -> QResult<HprobeArtifact> {
        let spec = self.hprobe_spec();
        let max_induced = spec.required_indices().last().copied().unwrap_or(48);
        // Scan far enough that the largest induced index has a return.
        let scan = (max_induced as i64 + 1) * 8 + 64;
        let sys = self.induced_system(scan);
        if (sys.return_count() as u64) < max_induced {
            return Err(QuenchedError::Precondition(format!(
                "probe needs {max_induced} returns, found {}",
                sys.return_count()
            )));
        }
        let orbit_horizon = sys.m(max_induced as usize) + 1;
        let stack = self.build_stack(orbit_horizon + 1)?;
        let obs = center_observable(self.observable_kind(), &stack, orbit_horizon + 1)?;
        let data = crate::blocks::induced_checkpoint_sums(
            &stack,
            &obs,
            &sys,
            n_traj,
            &spec.required_indices(),
            &self.rng,
        )?;
        let report = h_condition_probe(&spec, &data, &self.rng)?;
        Ok(HprobeArtifact {
            n_traj,
            k_grid: spec.k_grid.clone(),
            t_values: spec.t_values.clone(),
            report,
        })
    }

    // ----- full pipeline ----------------------------------------------------

    pub fn run_asip(&self) -> QResult<AsipArtifact> {
        if !self.eps_zero() {
            return Err(QuenchedError::Precondition(
                "the full pipeline simulates long forward orbits, which sample the \
                 equilibrium family only for the derivative potential; run it on an \
                 eps = 0 config (variance/hprobe/induce support eps > 0 via backward \
                 sampling)"
                    .into(),
            ));
        }
        let kind = self.observable_kind();
        let rate =
            RateParams::new(self.cfg.rates.p, Some(self.cfg.beta()), self.cfg.rates.delta)?;
        let level_lo = self.cfg.asip.level_lo;
        let level_hi = self.cfg.asip.level_hi;
        let mut flags = Vec::new();

        // Schemes for every feasible level in range; infeasible levels are
        // bridged by single matched-variance spans inside the surrogate.
        let mut schemes = Vec::new();
        for n in level_lo..=level_hi {
            match block_decomposition(n, rate.beta, self.cfg.rates.eps_blocks) {
                Ok(s) => schemes.push(s),
                Err(QuenchedError::Infeasible(_)) => {
                    flags.push(format!("block-level-{n}-bridged"));
                }
                Err(e) => return Err(e),
            }
        }
        if schemes.is_empty() {
            return Err(QuenchedError::Infeasible(format!(
                "no feasible block level in [{level_lo}, {level_hi}]"
            )));
        }

        // Induced system covering the top horizon.
        let top_induced = schemes.last().unwrap().window_end();
        let mut scan = (top_induced as i64) * 2 + 64;
        let mut sys = self.induced_system(scan);
        while (sys.return_count() as u64) < top_induced {
            scan *= 2;
            if scan > 1 << 26 {
                return Err(QuenchedError::Precondition(format!(
                    "cannot find {top_induced} returns within 2^26 offsets"
                )));
            }
            sys = self.induced_system(scan);
        }
        let orbit_top = sys.m(top_induced as usize);

        // One ensemble serves the CLT table, the estimator gate, and the
        // induced block sums: record orbit sums at the union of checkpoints.
        let stack = self.build_stack(1024 + 64)?;
        let obs = center_observable(kind, &stack, orbit_top + 1)?;

        let mut induced_indices: Vec<u64> = vec![0, schemes[0].window_start()];
        for s in &schemes {
            induced_indices.extend(s.boundaries());
        }
        induced_indices.sort_unstable();
        induced_indices.dedup();
        let mut orbit_checkpoints: Vec<usize> = induced_indices
            .iter()
            .filter(|i| **i > 0)
            .map(|i| sys.m(*i as usize) as usize)
            .collect();
        let clt_orbit_ns: Vec<usize> = self
            .cfg
            .checkpoints()
            .into_iter()
            .filter(|n| *n <= orbit_top as usize)
            .collect();
        orbit_checkpoints.extend(&clt_orbit_ns);
        orbit_checkpoints.push(1024);
        orbit_checkpoints.sort_unstable();
        orbit_checkpoints.dedup();

        let mu_rng = self.rng.substream(stream_tags::MU_SAMPLER);
        let traj_rng = self.rng.substream(stream_tags::TRAJECTORY);
        let initial = stack.sample_mu(0, self.cfg.asip.n_traj, &mu_rng, false)?;
        let ensemble =
            run_ensemble(self.dynamics.path(), &obs, &initial, &orbit_checkpoints, &traj_rng)?;

        // Estimator agreement gate at n = 1024.
        let sigma2_op = variance_operator(&stack, &obs, 1024, 1e-12)?;
        let (mc_1024, se_1024) = variance_mc(&ensemble, 1024)?;
        let agreement = (mc_1024 - sigma2_op).abs() <= 3.0 * se_1024;
        if !agreement {
            flags.push("estimator-disagreement-downstream-suppressed".to_string());
            return Ok(AsipArtifact {
                rate,
                estimator_gate: EstimatorGate {
                    sigma2_mc: mc_1024,
                    stderr: se_1024,
                    sigma2_op,
                    ok: false,
                },
                clt: Vec::new(),
                variance_match: None,
                hprobe: None,
                flags,
                checkpoint_table: Vec::new(),
            })
        }

        // CLT table along the dyadic orbit grid.
        let mut clt = Vec::new();
        for n in &clt_orbit_ns {
            clt.push(clt_test(&ensemble, *n)?);
        }

        // Induced partial sums at the tile boundaries.
        let sums: Vec<Vec<f64>> = ensemble
            .sums
            .iter()
            .map(|row| {
                induced_indices
                    .iter()
                    .map(|idx| {
                        if *idx == 0 {
                            0.0
                        } else {
                            let orbit_time = sys.m(*idx as usize) as usize;
                            let c = ensemble
                                .checkpoints
                                .binary_search(&orbit_time)
                                .expect("checkpoint recorded");
                            row[c]
                        }
                    })
                    .collect()
            })
            .collect();
        let data = IndexedSums { indices: induced_indices, sums };
        let vm = variance_match(&schemes, &data, &rate, &self.rng)?;

        let hprobe = self.run_hprobe(200_000.min(self.cfg.monte_carlo.n * 20))?;

        // Merged per-checkpoint table at the matching horizons.
        let mut table = Vec::new();
        for cp in &vm.checkpoints {
            let orbit_time = sys.m(cp.horizon as usize) as usize;
            let ks = clt_test(&ensemble, orbit_time).ok().and_then(|o| match o {
                CltOutcome::Tested(r) => Some(r.ks),
                CltOutcome::Suppressed { .. } => None,
            });
            table.push(CheckpointRow {
                n: cp.horizon,
                ks,
                sigma_n: cp.sigma_emp,
                sigma_surrogate: cp.sigma_surr,
                discrepancy: cp.discrepancy,
            });
        }

        Ok(AsipArtifact {
            rate,
            estimator_gate: EstimatorGate {
                sigma2_mc: mc_1024,
                stderr: se_1024,
                sigma2_op,
                ok: true,
            },
            clt,
            variance_match: Some(vm),
            hprobe: Some(hprobe),
            flags,
            checkpoint_table: table,
        })
    }
}

/// Monte Carlo ensemble over exact backward-sampled orbits (for potentials
/// whose equilibrium family forward iteration cannot reach).
fn backward_ensemble(
    stack: &MeasureStack,
    obs: &CenteredObservable,
    n_traj: usize,
    checkpoints: &[usize],
    rng: &CounterRng,
) -> QResult<TrajectoryEnsemble> {
    let horizon = *checkpoints.last().unwrap();
    let orbits = sample_mu_orbits(stack, 0, horizon as i64, n_traj, rng)?;
    let path = stack.dynamics().path();
    let sums: Vec<Vec<f64>> = orbits
        .iter()
        .map(|orbit| {
            let mut records = Vec::with_capacity(checkpoints.len());
            let mut s = 0.0;
            let mut next_cp = 0usize;
            for (i, x) in orbit.iter().take(horizon).enumerate() {
                s += obs.eval(path, i as i64, *x).expect("centered range covers horizon");
                if next_cp < checkpoints.len() && i + 1 == checkpoints[next_cp] {
                    records.push(s);
                    next_cp += 1;
                }
            }
            records
        })
        .collect();
    Ok(TrajectoryEnsemble { checkpoints: checkpoints.to_vec(), sums })
}

fn trig_dictionary(m: usize) -> Vec<(String, HolderFunction)> {
    let mut dict = vec![("one".to_string(), HolderFunction::constant(m, 1.0))];
    for k in 1..=2u32 {
        dict.push((
            format!("cos{k}"),
            HolderFunction::from_fn(m, |x| (TAU * k as f64 * x).cos()).unwrap(),
        ));
        dict.push((
            format!("sin{k}"),
            HolderFunction::from_fn(m, |x| (TAU * k as f64 * x).sin()).unwrap(),
        ));
    }
    dict
}

// ----- artifacts ----------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct TripletArtifact {
    pub window_hi: i64,
    pub relax_used: usize,
    pub lambdas: Vec<(i64, f64)>,
    pub max_eigen_residual: f64,
    pub equivariance_residuals: Vec<f64>,
    pub max_equivariance_residual: f64,
    pub reestimated_lambda_deviation: f64,
    pub normalized_ones_sup: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceArtifact {
    #[serde(flatten)]
    pub report: VarianceReport,
    pub agreement_at_op_horizon: bool,
    pub op_horizon: usize,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LyArtifact {
    pub instances: usize,
    pub all_satisfied: bool,
    pub min_slack: f64,
    pub norm_instances: usize,
    pub norm_all_certified: bool,
    pub norm_min_margin: f64,
    pub reports: Vec<LYReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayArtifact {
    pub n_max: usize,
    pub lambda_hat: f64,
    pub k_hat: f64,
    pub r_squared: f64,
    pub instant_decay: bool,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Go1Summary {
    pub u_hat: f64,
    pub ok: bool,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Go2Summary {
    pub exponent: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct InduceArtifact {
    pub p_hat: f64,
    pub returns: Vec<i64>,
    pub k_table: Vec<(i64, usize)>,
    pub kac: KacReport,
    pub a_moments: MomentReport,
    pub go1: Go1Summary,
    pub go2: Go2Summary,
    pub truncated: bool,
    pub sigma2_floor_reference: f64,
    pub resummation_max_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BlocksArtifact {
    pub scheme: BlockScheme,
    pub gap_cardinality: GapCardinalityReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct HprobeArtifact {
    pub n_traj: usize,
    pub k_grid: Vec<u64>,
    pub t_values: Vec<f64>,
    pub report: HReport,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EstimatorGate {
    pub sigma2_mc: f64,
    pub stderr: f64,
    pub sigma2_op: f64,
    pub ok: bool,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CheckpointRow {
    pub n: u64,
    pub ks: Option<f64>,
    pub sigma_n: f64,
    pub sigma_surrogate: f64,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AsipArtifact {
    pub rate: RateParams,
    pub estimator_gate: EstimatorGate,
    pub clt: Vec<CltOutcome>,
    pub variance_match: Option<VarianceMatchReport>,
    pub hprobe: Option<HprobeArtifact>,
    pub flags: Vec<String>,
    pub checkpoint_table: Vec<CheckpointRow>,
}

impl AsipArtifact {
    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.checkpoint_table
            .iter()
            .map(|r| {
                vec![
                    r.n as f64,
                    r.ks.unwrap_or(f64::NAN),
                    r.sigma_n,
                    r.sigma_surrogate,
                    r.discrepancy,
                ]
            })
            .collect()
    }

    pub fn clt_ks_values(&self) -> Vec<(usize, f64)> {
        self.clt
            .iter()
            .filter_map(|o| match o {
                CltOutcome::Tested(KsReport { n, ks, .. }) => Some((*n, *ks)),
                CltOutcome::Suppressed { .. } => None,
            })
            .collect()
    }
}
