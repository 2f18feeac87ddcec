use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvtd_harness::commands;
use mvtd_harness::config::{load_config, ExperimentConfig, Resolved};
use mvtd_harness::error::{HarnessError, Result};
use mvtd_harness::manifest::{OutputDir, RunManifest};
use mvtd_harness::suites::{self, SUITES};

#[derive(Parser)]
#[command(name = "mvtd", version, about = "Mean-variance TD evaluation and SPSA actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, or a run manifest `.json` to replay).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact fixed point, oracles and spectral constants.
    FixedPoint(Common),
    /// Monte Carlo critic runs against the exact fixed point.
    Critic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
        /// Allow step sizes above the admissible ceiling.
        #[arg(long)]
        override_step_size: bool,
    },
    /// SPSA mean-variance actor-critic.
    Actor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Finite-difference check of the exact policy gradients.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
    },
    /// Runs verification suites and prints one PASS/FAIL line per suite.
    Verify {
        /// Suite name, or `all`.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out/verify")]
        out: PathBuf,
        /// Replays a recorded suite run and compares checksums.
        #[arg(long, conflicts_with = "suite")]
        manifest: Option<PathBuf>,
    },
}

fn configure_threads() {
    if let Some(n) = std::env::var("MVTD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn resolve(common: &Common, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<(Resolved, OutputDir)> {
    let mut config = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out.clone_from(out);
    }
    edit(&mut config);
    let resolved = config.resolve()?;
    let out = OutputDir::create(&resolved.config.out)?;
    Ok((resolved, out))
}

fn finish(name: &str, r: Resolved, out: OutputDir, report: String) -> Result<()> {
    for line in &r.log {
        eprintln!("{line}");
    }
    let root = out.root().to_path_buf();
    out.finish(name, r.config.seed, Some(r.config), None)?;
    println!("{report}");
    println!("outputs written to {}", root.display());
    Ok(())
}

fn verify(suite: &str, seed: u64, out: PathBuf, manifest: Option<PathBuf>) -> Result<()> {
    if let Some(path) = manifest {
        let recorded = RunManifest::load(&path)?;
        let diffs = suites::replay(&recorded, &out)?;
        if diffs.is_empty() {
            println!("PASS replay of {}: all {} checksums match", path.display(), recorded.files.len());
            return Ok(());
        }
        println!("FAIL replay of {}: mismatched {}", path.display(), diffs.join(", "));
        return Err(HarnessError::Verification(format!("{} files differ", diffs.len())));
    }
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let mut failed = Vec::new();
    for name in names {
        let outcome = suites::run_suite(name, seed, &out.join(name))?;
        println!("{}", outcome.line());
        for d in &outcome.details {
            eprintln!("    {d}");
        }
        if !outcome.passed {
            failed.push(outcome.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Verification(format!("failed suites: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FixedPoint(common) => {
            let (r, mut out) = resolve(&common, |_| {})?;
            let report = commands::fixed_point_report(&r, &mut out)?;
            finish("fixed-point", r, out, report)
        }
        Command::Critic {
            common,
            replications,
            override_step_size,
        } => {
            let (r, mut out) = resolve(&common, |c| {
                if let Some(n) = replications {
                    c.critic.replications = n;
                }
                c.critic.override_step_size |= override_step_size;
            })?;
            let report = commands::critic_run(&r, &mut out)?;
            finish("critic", r, out, report)
        }
        Command::Actor { common, replications } => {
            let (r, mut out) = resolve(&common, |c| {
                if let Some(n) = replications {
                    c.actor.replications = n;
                }
            })?;
            let report = commands::actor_run(&r, &mut out)?;
            finish("actor", r, out, report)
        }
        Command::GradCheck { common, h } => {
            let (r, mut out) = resolve(&common, |_| {})?;
            let report = commands::grad_check_run(&r, &mut out, h)?;
            finish("grad-check", r, out, report)
        }
        Command::Verify {
            suite,
            seed,
            out,
            manifest,
        } => verify(&suite, seed, out, manifest),
    }
}

fn main() -> ExitCode {
    configure_threads();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
