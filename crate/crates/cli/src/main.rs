//! Command-line front end: sweep, train, eval, report, ablate.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gridphase::learner::TrainerConfig;
use gridphase::metrics::SpreadSource;
use gridphase::orchestrator::{
    self, ReportOptions, SweepConfig, SweepSummary, DEFAULT_WINDOW_FRAC,
};
use gridphase::phase::DEFAULT_RIDGE_LEVEL;

/// Environment variable holding the default output root.
const OUT_ENV: &str = "GRIDPHASE_OUT";

#[derive(Parser)]
#[command(name = "gridphase", version, about = "Multi-agent grid-world Q-learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArg {
    /// Output directory (falls back to $GRIDPHASE_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn resolve(&self) -> Result<PathBuf> {
        if let Some(out) = &self.out {
            return Ok(out.clone());
        }
        match std::env::var_os(OUT_ENV) {
            Some(root) => Ok(PathBuf::from(root)),
            None => bail!("no --out given and {OUT_ENV} is not set"),
        }
    }
}

#[derive(Args)]
struct ConditionArgs {
    /// Grid side length L.
    #[arg(long = "L", visible_alias = "side")]
    side: usize,
    /// Agent density rho.
    #[arg(long)]
    rho: f64,
    /// Run seed.
    #[arg(long)]
    seed: u64,
    /// Drop the one-hot agent identifier from observations.
    #[arg(long = "no-id")]
    no_id: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full (L, rho, seed) sweep from a config file.
    Sweep {
        /// JSON sweep config.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArg,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Train a single (L, rho, seed) run.
    Train {
        #[command(flatten)]
        condition: ConditionArgs,
        /// Training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Fix the goal cell to "row,col" instead of re-randomizing it.
        #[arg(long, value_parser = parse_cell)]
        fixed_goal: Option<(usize, usize)>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Greedy evaluation of a stored checkpoint.
    Eval {
        /// Parameter checkpoint produced by train/sweep.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        condition: ConditionArgs,
        /// Evaluation episodes.
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Build summary tables, heatmaps, phase map and ridge crossings.
    Report {
        /// Sweep output directory (the one containing runs/).
        #[arg(long)]
        runs: PathBuf,
        /// Report directory, defaults to RUNS/report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Contour level separating the regimes.
        #[arg(long, default_value_t = DEFAULT_RIDGE_LEVEL)]
        ridge_level: f64,
        /// Trailing fraction of episodes feeding every statistic.
        #[arg(long, default_value_t = DEFAULT_WINDOW_FRAC)]
        window_frac: f64,
        /// Compute spread/co-reach from training instead of evaluation episodes.
        #[arg(long)]
        spread_from_training: bool,
    },
    /// Run the sweep with and without agent IDs under shared seeds.
    Ablate {
        /// JSON sweep config.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArg,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Trailing fraction of episodes feeding the comparison table.
        #[arg(long, default_value_t = DEFAULT_WINDOW_FRAC)]
        window_frac: f64,
    },
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| "expected \"row,col\"".to_string())?;
    let row = r.trim().parse().map_err(|_| format!("bad row {r:?}"))?;
    let col = c.trim().parse().map_err(|_| format!("bad col {c:?}"))?;
    Ok((row, col))
}

fn print_summary(label: &str, summary: &SweepSummary) {
    println!(
        "{label}: {} completed, {} skipped, {} failed",
        summary.completed,
        summary.skipped,
        summary.failed.len()
    );
    for (run, message) in &summary.failed {
        eprintln!("  failed {run}: {message}");
    }
}

fn fail_if_any(summary: &SweepSummary) -> Result<()> {
    if summary.failed.is_empty() {
        Ok(())
    } else {
        bail!("{} run(s) failed; partial results kept", summary.failed.len())
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Sweep { config, out, workers } => {
            let cfg = SweepConfig::load(&config)?;
            let out = out.resolve()?;
            let summary = orchestrator::sweep(&cfg, &out, workers)
                .with_context(|| format!("sweep into {}", out.display()))?;
            print_summary("sweep", &summary);
            println!("artifacts: {}", out.display());
            fail_if_any(&summary)
        }
        Command::Train { condition, episodes, fixed_goal, out } => {
            let out = out.resolve()?;
            let mut trainer = TrainerConfig::default();
            if let Some(episodes) = episodes {
                trainer.episodes = episodes;
            }
            let summary = orchestrator::train_one(
                condition.side,
                condition.rho,
                condition.seed,
                !condition.no_id,
                fixed_goal,
                trainer,
                &out,
            )?;
            print_summary("train", &summary);
            println!("artifacts: {}", out.display());
            fail_if_any(&summary)
        }
        Command::Eval { checkpoint, condition, episodes, out } => {
            let out = out.resolve()?;
            let path = out.join(format!(
                "eval_L{}_rho{}_seed{}.csv",
                condition.side, condition.rho, condition.seed
            ));
            let written = orchestrator::eval_checkpoint(
                &checkpoint,
                condition.side,
                condition.rho,
                condition.seed,
                !condition.no_id,
                episodes,
                &path,
            )?;
            println!("eval report: {}", written.display());
            Ok(())
        }
        Command::Report { runs, out, ridge_level, window_frac, spread_from_training } => {
            let out = out.unwrap_or_else(|| runs.join("report"));
            let opts = ReportOptions {
                window_frac,
                ridge_level,
                spread_source: if spread_from_training {
                    SpreadSource::Training
                } else {
                    SpreadSource::Evaluation
                },
            };
            let report = orchestrator::report(&runs, &out, &opts)?;
            println!(
                "report: {} condition(s), {} ridge crossing(s)",
                report.stats.len(),
                report.ridge_crossings.len()
            );
            println!("artifacts: {}", out.display());
            Ok(())
        }
        Command::Ablate { config, out, workers, window_frac } => {
            let cfg = SweepConfig::load(&config)?;
            let out = out.resolve()?;
            let summary = orchestrator::ablate(&cfg, &out, workers, window_frac)?;
            print_summary("id arm", &summary.id_arm);
            print_summary("no-id arm", &summary.noid_arm);
            println!("comparison table: {}", summary.table.display());
            fail_if_any(&summary.id_arm)?;
            fail_if_any(&summary.noid_arm)
        }
    }
}
