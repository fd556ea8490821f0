//! Batch experiment CLI: run a configured grid, re-check bounds on a saved
//! run record, or render the regret plot from an aggregate file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dts_core::lab::{self, plot, runner};

#[derive(Parser)]
#[command(name = "dts-lab", version, about = "Tabular online-learning experiment lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment grid described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Refresh the policy mixture on every step instead of only when
        /// the posterior weight drifts.
        #[arg(long)]
        strict_per_step: bool,
        /// Worker count override (0 = one per core).
        #[arg(long)]
        workers: Option<usize>,
        /// Seed base override; run seeds are seed_base + index.
        #[arg(long)]
        seed_base: Option<u64>,
    },
    /// Re-run the bound checkers on a saved full run record (JSON).
    CheckBounds {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Render the regret curves from an aggregate JSON to an SVG.
    Plot {
        #[arg(long)]
        agg: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> dts_core::Result<bool> {
    match cli.command {
        Command::Run {
            config,
            strict_per_step,
            workers,
            seed_base,
        } => {
            let mut cfg = lab::ExperimentConfig::from_path(&config)?;
            if strict_per_step {
                cfg.strict_per_step = true;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(b) = seed_base {
                cfg.seed_base = b;
            }
            let outcome = runner::run_experiment(&cfg)?;
            let svg = cfg.out_dir.join("regret.svg");
            plot::render_regret_svg(&outcome.curves, &svg)?;
            println!(
                "{} runs -> {} (aggregate.json, regret.svg, per-run traces)",
                outcome.summaries.len(),
                cfg.out_dir.display()
            );
            for (agent, fit) in &outcome.report.slope_fits {
                println!("slope[{agent}] = {:.3} +/- {:.3}", fit.slope, fit.stderr);
            }
            let ok = outcome.theorems_hold();
            if !ok {
                eprintln!("theorem-grade bound violated; see aggregate.json");
            }
            Ok(ok)
        }
        Command::CheckBounds { trace, delta } => {
            let (summary, stats) = runner::check_bounds_file(&trace, delta)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(stats) = stats {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            }
            let ok = summary.identity_violation <= 0.0
                && summary
                    .episode_bounds
                    .as_ref()
                    .map(|b| b.ok())
                    .unwrap_or(true);
            Ok(ok)
        }
        Command::Plot { agg, out } => {
            let text = std::fs::read_to_string(&agg)?;
            let outcome: runner::ExperimentOutcome = serde_json::from_str(&text)?;
            plot::render_regret_svg(&outcome.curves, &out)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}


fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
