//! Experiment runner for the quenched expanding-dynamics toolkit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use quenched_core::config::ExperimentConfig;
use quenched_core::experiment::Experiment;
use quenched_core::report::{write_csv, Report};

#[derive(Parser)]
#[command(name = "quenched", version, about = "Quenched random expanding dynamics: simulation and limit-theorem validation")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory for reports (default: config [output].dir or "out").
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equivariant triplets over a working window, with residuals.
    Triplet {
        /// Window of path offsets to build.
        #[arg(long, default_value_t = 8)]
        window: i64,
    },
    /// Asymptotic variance by Monte Carlo and operator duality.
    Variance,
    /// Randomized contraction-inequality and norm-bound certification.
    Ly {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        n_max: usize,
    },
    /// Normalized-cocycle decay fit for a centered observable.
    Decay {
        #[arg(long, default_value_t = 30)]
        n_max: usize,
    },
    /// Return times, Kac consistency, induced moments and conditions.
    Induce,
    /// The dyadic block tiling at one level, plus gap-count growth.
    Blocks {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Characteristic-function factorization decay across gaps.
    Hprobe {
        #[arg(long, default_value_t = 200_000)]
        n_traj: usize,
    },
    /// Full pipeline: variance gate, CLT table, probe, variance matching.
    Asip,
    /// Aggregate the JSON reports in the output directory into markdown.
    Report,
}

fn main() {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .expect("worker pool initializes once");
    }
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn load(cli: &Cli) -> Result<(Experiment, PathBuf)> {
    let config_path = cli
        .config
        .clone()
        .context("--config is required for this subcommand")?;
    let (cfg, hash) = ExperimentConfig::from_path(&config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let exp = Experiment::new(cfg, hash, cli.seed)?;
    Ok((exp, out_dir))
}

fn emit<T: serde::Serialize>(
    exp: &Experiment,
    out_dir: &Path,
    name: &str,
    flags: Vec<String>,
    payload: T,
) -> Result<()> {
    let report = Report::new(&exp.config_hash, exp.seed, flags, payload);
    let path = out_dir.join(format!("{name}.json"));
    report.write(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Triplet { window } => {
            let (exp, out) = load(&cli)?;
            let window = *window;
            let started = Instant::now();
            let artifact = exp.run_triplet(window)?;
            println!(
                "triplet: window {window}, max eigen residual {:.3e}, max equivariance residual {:.3e} ({:?})",
                artifact.max_eigen_residual,
                artifact.max_equivariance_residual,
                started.elapsed()
            );
            let stack = exp.build_stack(window)?;
            for offset in 0..=window {
                let rows = exp.triplet_csv_rows(&stack, offset);
                write_csv(&out.join(format!("triplet_{offset}.csv")), "lambda,h,nu", &rows)?;
            }
            let flags = vec![format!("nu-relaxation-horizon={}", artifact.relax_used)];
            emit(&exp, &out, "triplet", flags, artifact)?;
        }
        Command::Variance => {
            let (exp, out) = load(&cli)?;
            let started = Instant::now();
            let artifact = exp.run_variance()?;
            println!(
                "variance: sigma2_mc {:.4} +- {:.4}, sigma2_op {:?}, verdict {:?} ({:?})",
                artifact.report.sigma2_mc,
                artifact.report.stderr,
                artifact.report.sigma2_op,
                artifact.report.verdict,
                started.elapsed()
            );
            let rows: Vec<Vec<f64>> = artifact
                .report
                .checkpoints
                .iter()
                .map(|c| vec![c.n as f64, c.var, c.stderr, c.sigma_n])
                .collect();
            write_csv(&out.join("variance_checkpoints.csv"), "n,var,stderr,sigma_n", &rows)?;
            let flags = artifact.flags.clone();
            emit(&exp, &out, "variance", flags, artifact)?;
        }
        Command::Ly { count, n_max } => {
            let (exp, out) = load(&cli)?;
            let started = Instant::now();
            let artifact = exp.run_ly(*count, *n_max, 1.0)?;
            println!(
                "ly: {}/{} satisfied, min slack {:.3e}; norm bounds {}/{} certified ({:?})",
                artifact.reports.iter().filter(|r| r.satisfied).count(),
                artifact.instances,
                artifact.min_slack,
                if artifact.norm_all_certified { artifact.norm_instances } else { 0 },
                artifact.norm_instances,
                started.elapsed()
            );
            emit(&exp, &out, "ly", Vec::new(), artifact)?;
        }
        Command::Decay { n_max } => {
            let (exp, out) = load(&cli)?;
            let artifact = exp.run_decay(*n_max)?;
            println!(
                "decay: lambda_hat {:.4}, r2 {:.4}, instant {}",
                artifact.lambda_hat, artifact.r_squared, artifact.instant_decay
            );
            emit(&exp, &out, "decay", Vec::new(), artifact)?;
        }
        Command::Induce => {
            let (exp, out) = load(&cli)?;
            let started = Instant::now();
            let artifact = exp.run_induce()?;
            println!(
                "induce: P_hat {:.4}, m_n/n {:.3} vs 1/P {:.3}, go1 u_hat {:.4} ok={} ({:?})",
                artifact.p_hat,
                artifact.kac.m_n_over_n,
                artifact.kac.inv_p_hat,
                artifact.go1.u_hat,
                artifact.go1.ok,
                started.elapsed()
            );
            let flags = vec![
                "decay-prefactor-surrogate".to_string(),
                "variance-floor-truncated".to_string(),
            ];
            emit(&exp, &out, "induce", flags, artifact)?;
        }
        Command::Blocks { n, beta, eps } => {
            let (exp, out) = load(&cli)?;
            let artifact = exp.run_blocks(*n, *beta, *eps)?;
            println!(
                "blocks: n={} f={} F={} |I|={} |J0|={} gaps={}",
                artifact.scheme.n,
                artifact.scheme.f,
                artifact.scheme.block_count,
                artifact.scheme.interval_len,
                artifact.scheme.j0_len,
                artifact.scheme.total_gap_len()
            );
            let rows: Vec<Vec<f64>> = artifact
                .scheme
                .tiles
                .iter()
                .map(|t| {
                    vec![
                        matches!(t.kind, quenched_core::blocks::TileKind::Interval) as u8 as f64,
                        t.start as f64,
                        t.len as f64,
                    ]
                })
                .collect();
            write_csv(&out.join(format!("blocks_n{n}.csv")), "is_interval,start,len", &rows)?;
            emit(&exp, &out, "blocks", Vec::new(), artifact)?;
        }
        Command::Hprobe { n_traj } => {
            let (exp, out) = load(&cli)?;
            let started = Instant::now();
            let artifact = exp.run_hprobe(*n_traj)?;
            println!(
                "hprobe: c_hat {:.4}, r2 {:.4}, pass {} ({:?})",
                artifact.report.c_hat,
                artifact.report.r_squared,
                artifact.report.pass,
                started.elapsed()
            );
            emit(&exp, &out, "hprobe", Vec::new(), artifact)?;
        }
        Command::Asip => {
            let (exp, out) = load(&cli)?;
            let started = Instant::now();
            let artifact = exp.run_asip()?;
            match &artifact.variance_match {
                Some(vm) => println!(
                    "asip: gate ok, final sigma ratio {:.4}, discrepancy exponent {:.3} (bound {:.3}) ({:?})",
                    vm.final_ratio,
                    vm.discrepancy_exponent,
                    vm.exponent_bound,
                    started.elapsed()
                ),
                None => println!("asip: estimator gate failed, downstream suppressed"),
            }
            write_csv(
                &out.join("asip_checkpoints.csv"),
                "n,ks,sigma_n,sigma_surrogate,discrepancy",
                &artifact.csv_rows(),
            )?;
            let flags = artifact.flags.clone();
            emit(&exp, &out, "asip", flags, artifact)?;
        }
        Command::Report => {
            let out = cli
                .out_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("out"));
            let summary = aggregate(&out)?;
            let path = out.join("summary.md");
            std::fs::write(&path, summary)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Collect the JSON reports in a directory into a markdown digest.
fn aggregate(dir: &Path) -> Result<String> {
    let mut sections = String::from("# Experiment summary\n");
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
        .collect();
    entries.sort();
    for path in entries {
        let text = std::fs::read_to_string(&path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        sections.push_str(&format!("\n## {name}\n\n"));
        if let Some(hash) = value.get("config_hash").and_then(|v| v.as_str()) {
            sections.push_str(&format!("- config: `{}...`\n", &hash[..16.min(hash.len())]));
        }
        if let Some(seed) = value.get("seed") {
            sections.push_str(&format!("- seed: {seed}\n"));
        }
        if let Some(flags) = value.get("flags").and_then(|f| f.as_array()) {
            if !flags.is_empty() {
                sections.push_str(&format!("- flags: {flags:?}\n"));
            }
        }
        sections.push_str(&summarize(name, &value));
    }
    Ok(sections)
}

fn summarize(name: &str, value: &serde_json::Value) -> String {
    let r = &value["report"];
    let mut out = String::new();
    match name {
        "variance" => {
            out.push_str(&format!(
                "- sigma2 (MC): {} +- {}\n- sigma2 (operator): {}\n- verdict: {}\n",
                r["sigma2_mc"], r["stderr"], r["sigma2_op"], r["verdict"]
            ));
        }
        "triplet" => {
            out.push_str(&format!(
                "- max eigen residual: {}\n- max equivariance residual: {}\n",
                r["max_eigen_residual"], r["max_equivariance_residual"]
            ));
        }
        "asip" => {
            if let Some(vm) = r.get("variance_match").filter(|v| !v.is_null()) {
                out.push_str(&format!(
                    "- final sigma ratio: {}\n- discrepancy exponent: {} (bound {})\n",
                    vm["final_ratio"], vm["discrepancy_exponent"], vm["exponent_bound"]
                ));
            }
        }
        "induce" => {
            out.push_str(&format!(
                "- P_hat: {}\n- Kac deviation: {}\n- go1 u_hat: {} (ok: {})\n",
                r["p_hat"], r["kac"]["deviation_m"], r["go1"]["u_hat"], r["go1"]["ok"]
            ));
        }
        _ => {}
    }
    out
}
