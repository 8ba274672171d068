//! Command-line runner for the localization experiments.
//!
//! Subcommands mirror the experiment modes: `static` sweeps anchor
//! configurations, `dynamic` compares the convex method against the EKF on a
//! trajectory, `params` runs the parameter-free mode, and `verify` executes
//! the oracle check suites. Worker-thread count honors the HYLOC_WORKERS
//! environment variable.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hyloc::config::{ExperimentConfig, Mode};
use hyloc::experiment::{run_experiment, ExperimentOutput};

#[derive(Parser)]
#[command(name = "hyloc", about = "Hybrid range/bearing/velocity network localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for result tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured Monte Carlo trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Anchor-configuration sweep on static networks.
    Static(RunArgs),
    /// Trajectory run comparing the convex method and the EKF.
    Dynamic(RunArgs),
    /// Parameter-free mode with noise-parameter traces.
    Params(RunArgs),
    /// Oracle suites: distributed vs centralized, gradients, spectral bound.
    Verify {
        /// Random instances per suite.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Base seed for instance generation.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    if let Ok(workers) = std::env::var("HYLOC_WORKERS") {
        let n: usize = workers
            .parse()
            .context("HYLOC_WORKERS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("worker pool")?;
    }
    match Cli::parse().command {
        Command::Static(args) => run(args, Mode::Static),
        Command::Dynamic(args) => run(args, Mode::Dynamic),
        Command::Params(args) => run(args, Mode::Params),
        Command::Verify { instances, seed } => verify(instances, seed),
    }
}

fn run(args: RunArgs, mode: Mode) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if cfg.experiment.mode != mode {
        bail!(
            "config declares mode {:?}, but the subcommand expects {:?}",
            cfg.experiment.mode,
            mode
        );
    }
    if let Some(trials) = args.trials {
        cfg.experiment.trials = trials;
    }
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    let out = run_experiment(&cfg, &text, args.out.as_deref())?;
    match out {
        ExperimentOutput::Static(res) => {
            for (c, mpe) in res.per_config_mpe.iter().enumerate() {
                println!("config {c}: MPE {mpe:.4} m");
            }
            println!(
                "mean {:.4} m, std {:.4} m, cov {:.3}",
                res.mean_mpe,
                res.std_mpe,
                res.cov()
            );
        }
        ExperimentOutput::Dynamic(res) => {
            let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            if !res.convex_mne.is_empty() {
                println!("convex: mean MNE {:.4} m over {} ticks", avg(&res.convex_mne), res.ticks);
            }
            if !res.ekf_mne.is_empty() {
                println!("ekf:    mean MNE {:.4} m over {} ticks", avg(&res.ekf_mne), res.ticks);
            }
            if let Some(q) = res.ekf_process_var {
                println!("ekf process variance (grid-searched): {q}");
            }
            if res.total_messages > 0 {
                println!("broadcasts: {}", res.total_messages);
            }
        }
        ExperimentOutput::Params(res) => {
            let last = res.ticks - 1;
            println!(
                "final MNE: known {:.4} m, estimated {:.4} m",
                res.known_mne[last], res.estimated_mne[last]
            );
            println!("final median sigma estimate: {:.4} m", res.sigma_median[last]);
        }
    }
    if let Some(dir) = &args.out {
        println!("results written to {}", dir.display());
    }
    Ok(())
}

fn verify(instances: usize, seed: u64) -> Result<()> {
    let mut failures = 0usize;

    println!("== gradient checks (analytic vs finite differences) ==");
    for c in hyloc::verify::gradient_checks(instances, seed)? {
        let pass = c.rel_error <= 1e-6;
        println!(
            "{} seed={} dim={} rel_error={:.3e}",
            verdict(pass),
            c.seed,
            c.dim,
            c.rel_error
        );
        failures += usize::from(!pass);
    }

    println!("== spectral bound checks (lambda_max vs closed form) ==");
    let per_window = instances.div_ceil(4).max(1);
    for c in hyloc::verify::lipschitz_checks(per_window, &[1, 2, 3, 5], seed + 1000)? {
        let pass = c.holds();
        println!(
            "{} seed={} window={} lambda_max={:.4} bound={:.4}",
            verdict(pass),
            c.seed,
            c.window,
            c.lambda_max,
            c.bound
        );
        failures += usize::from(!pass);
    }

    println!("== distributed vs centralized ==");
    for i in 0..instances {
        let c = hyloc::verify::equivalence_check(
            seed + 2000 + i as u64,
            3 + i % 6,
            [1, 2, 4][i % 3],
            100,
        )?;
        let pass = c.max_round_rel_diff <= 1e-12 && c.final_rel_diff <= 1e-9;
        println!(
            "{} seed={} window={} per_round={:.3e} final={:.3e}",
            verdict(pass),
            c.seed,
            c.window,
            c.max_round_rel_diff,
            c.final_rel_diff
        );
        failures += usize::from(!pass);
    }

    if failures > 0 {
        bail!("{failures} oracle checks failed");
    }
    println!("all oracle checks passed");
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
