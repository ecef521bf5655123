use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mbp_core::diagnostics::{subgradient_check, verify_lemmas, LemmaContext};
use mbp_core::harness::{gap_scaling_suite, num_workers, run_experiment, write_json, SuiteOptions};
use mbp_core::planning::{solve_spp, solve_spp_jpa};
use mbp_core::policies::reference_phi;
use mbp_core::{CongestionKind, Instance, Setting};

#[derive(Parser)]
#[command(name = "mbp", about = "Mirror backpressure simulator and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config; writes the CSV/JSON named in it and prints the summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the static planning problem of an instance.
    SolveSpp {
        #[arg(long)]
        instance: PathBuf,
        /// Arrival rates to use instead of the instance's (reference) rates.
        #[arg(long, value_delimiter = ',')]
        phi: Option<Vec<f64>>,
    },
    /// Check the drift lemmas and the subgradient identity at sampled states.
    VerifyLemmas {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 200)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Steady-state, transient and time-varying scaling checks.
    GapScaling {
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Multiplies every horizon; below 1 gives a quick smoke run.
        #[arg(long, default_value_t = 1.0)]
        horizon_scale: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    Version,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    rayon_workers();
    match cli.command {
        Command::Simulate { config } => {
            let report = run_experiment(&config).with_context(|| format!("experiment {}", config.display()))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::SolveSpp { instance, phi } => {
            let inst = load(&instance)?;
            let phi = match phi {
                Some(p) => p,
                None => reference_phi(inst.demand()?),
            };
            let out = if inst.spec.setting == Setting::Jpa {
                serde_json::to_string_pretty(&solve_spp_jpa(&inst.spec, &phi)?)?
            } else {
                serde_json::to_string_pretty(&solve_spp(&inst.spec, &phi, None)?)?
            };
            println!("{out}");
        }
        Command::VerifyLemmas {
            instance,
            samples,
            k,
            seed,
            tol,
        } => {
            let inst = load(&instance)?;
            let phi = reference_phi(inst.demand()?);
            let kind = if inst.spec.has_buffers() {
                CongestionKind::InverseSqrtBuffered
            } else {
                CongestionKind::InverseSqrt
            };
            let ctx = LemmaContext::new(&inst.spec, k, &phi, kind)?;
            let lemmas = verify_lemmas(&ctx, samples, seed, tol);
            let sub = subgradient_check(&ctx, samples.min(100), 100, seed);
            let ok = lemmas.lemma1_failures == 0 && lemmas.lemma2_failures == 0 && sub.worst_slack >= -tol;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({ "lemmas": lemmas, "subgradient": sub, "passed": ok }))?
            );
            return Ok(ok);
        }
        Command::GapScaling {
            reps,
            seed,
            horizon_scale,
            output,
        } => {
            let checks = gap_scaling_suite(&SuiteOptions {
                reps,
                seed,
                horizon_scale,
            })?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if let Some(p) = output {
                write_json(&p, &checks)?;
            }
            return Ok(ok);
        }
        Command::Version => println!("mbp {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(true)
}

fn load(path: &PathBuf) -> Result<Instance> {
    Instance::from_path(path).with_context(|| format!("instance {}", path.display()))
}

fn rayon_workers() {
    // Sizes the global pool used by the diagnostics and scaling checks.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(num_workers()).build_global();
}
