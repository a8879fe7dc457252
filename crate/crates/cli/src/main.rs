use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coop_privacy::Result;
use coop_privacy_cli::config::read_file;
use coop_privacy_cli::commands::{self, resolve_out_dir, Context};
use coop_privacy_cli::reproduce::{write_figure, Figure, ReproduceSettings};
use coop_privacy_cli::{exit_code, DP_FAILURE};

#[derive(Parser)]
#[command(name = "coop-privacy", version, about = "Policy synthesis for cooperative Markov games under private communication")]
struct Cli {
    /// Size of the worker pool used for rollouts.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a policy; writes policy.json, occupancy.csv and iterations.csv.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock time per iteration instead of 0.
        #[arg(long)]
        timing: bool,
    },
    /// Monte Carlo success rates for each privacy setting; writes evaluation.csv.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lower bounds on private success next to empirical rates; writes bounds.csv.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Occupancy CSV to take the bound inputs from; defaults to the one
        /// the policy induces.
        #[arg(long)]
        occupancy: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive word-DP check of every agent's mechanism; writes dp.csv.
    VerifyDp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Data behind one figure; writes <figure>.csv.
    Reproduce {
        #[arg(long, value_enum)]
        figure: Figure,
        /// Rollout and iteration settings (JSON); defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Synthesize { config, out, timing } => {
            let ctx = Context::load(&config)?;
            let result = commands::synthesize(&ctx)?;
            let out = ctx.out_dir(out.as_deref());
            commands::write_synthesis(&ctx, &result, &out, timing)?;
            let last = result.log.records.last();
            println!(
                "{} iterations, v = {}, C = {}",
                result.log.records.len().saturating_sub(1),
                last.map_or(f64::NAN, |r| r.success),
                last.map_or(f64::NAN, |r| r.correlation)
            );
        }
        Command::Evaluate { config, policy, out } => {
            let ctx = Context::load(&config)?;
            let policy = ctx.read_policy(&policy)?;
            let table = commands::evaluate_policy(&ctx, &policy)?;
            table.write(&ctx.out_dir(out.as_deref()), "evaluation.csv", &ctx.hash)?;
            print!("{}", table.render(&ctx.hash));
        }
        Command::Bounds {
            config,
            policy,
            occupancy,
            out,
        } => {
            let ctx = Context::load(&config)?;
            let policy = ctx.read_policy(&policy)?;
            let x = occupancy.map(|p| ctx.read_occupancy(&p)).transpose()?;
            let (table, sound) = commands::bounds(&ctx, &policy, x.as_ref())?;
            table.write(&ctx.out_dir(out.as_deref()), "bounds.csv", &ctx.hash)?;
            print!("{}", table.render(&ctx.hash));
            if !sound {
                eprintln!("warning: an empirical rate fell below a lower bound");
            }
        }
        Command::VerifyDp { config, out } => {
            let ctx = Context::load(&config)?;
            let (table, ok) = commands::verify_dp(&ctx)?;
            table.write(&ctx.out_dir(out.as_deref()), "dp.csv", &ctx.hash)?;
            print!("{}", table.render(&ctx.hash));
            if !ok {
                eprintln!("word DP violated");
                return Ok(DP_FAILURE);
            }
        }
        Command::Reproduce { figure, config, out } => {
            let settings = match &config {
                Some(path) => ReproduceSettings::from_json(&read_file(path)?)?,
                None => ReproduceSettings::default(),
            };
            let out = resolve_out_dir(out.as_deref(), None);
            write_figure(figure, &settings, &out)?;
            println!("wrote {}", Path::new(&out).join(format!("{}.csv", figure.name())).display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

