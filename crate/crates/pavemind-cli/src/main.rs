//! Command-line front end for the pavement maintenance pipeline.
//!
//! Set `PAVEMIND_LOG` (e.g. `PAVEMIND_LOG=info`) to see stage logging and
//! warnings as they happen; everything important also lands in the output
//! directory's `report.txt`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pavemind::pipeline::{
    gen_synthetic, parse_config, run_until, write_synthetic, PipelineConfig, PipelineError,
    RunReport, Stage,
};

#[derive(Parser)]
#[command(name = "pavemind", version, about = "Pavement maintenance planning pipeline")]
struct Cli {
    /// Config file of `key = value` lines with dotted keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Budget for the final selection (overrides the config).
    #[arg(long, global = true)]
    budget: Option<f64>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic survey data set.
    Synth {
        /// Routes to generate.
        #[arg(long, default_value_t = 3)]
        routes: usize,
        /// Segments per route.
        #[arg(long, default_value_t = 6)]
        segments: usize,
        /// Survey years, ending in 2021.
        #[arg(long, default_value_t = 9)]
        years: usize,
        /// Distinct treatment codes.
        #[arg(long, default_value_t = 4)]
        treatments: usize,
    },
    /// Forecast diseases and next-year condition per route.
    Predict,
    /// Rank routes by predicted condition and maintenance likelihood.
    RankRoutes,
    /// Train the treatment policy and emit per-segment recommendations.
    Recommend,
    /// Run everything and cut the ranked plan to budget.
    Plan,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PAVEMIND_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are input errors (1); --help and --version are
            // not errors at all.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(budget) = cli.budget {
        cfg.budget = budget;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }

    let stage = match cli.command {
        Command::Synth {
            routes,
            segments,
            years,
            treatments,
        } => {
            let data = gen_synthetic(cfg.seed, routes, segments, years, treatments)?;
            write_synthetic(&cfg.out_dir, &data)?;
            println!(
                "wrote {} detection, {} maintenance, and {} route rows to {}",
                data.detection.len(),
                data.maintenance.len(),
                data.routes.len(),
                cfg.out_dir.display()
            );
            return Ok(());
        }
        Command::Predict => Stage::Predict,
        Command::RankRoutes => Stage::RankRoutes,
        Command::Recommend => Stage::Recommend,
        Command::Plan => Stage::Plan,
    };
    let report = run_until(&cfg, stage)?;
    print_summary(&cfg, &report);
    Ok(())
}

fn print_summary(cfg: &PipelineConfig, report: &RunReport) {
    for s in &report.stages {
        println!("{:<12} {:>7.2}s", s.name, s.seconds);
    }
    if !report.route_table.is_empty() {
        println!("route ranking:");
        for r in &report.route_table {
            println!(
                "  {}. {}  predicted {:.1}  priority {:.4}",
                r.rank, r.route_id, r.predicted_pci, r.priority
            );
        }
    }
    if let Some(plan) = &report.plan {
        let budget = if plan.budget.is_finite() {
            format!("{:.1}", plan.budget)
        } else {
            "unlimited".to_string()
        };
        println!(
            "plan: {} of {} units selected, cost {:.1}, budget {budget}",
            plan.selected, plan.segments, plan.selected_cost
        );
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if !report.warnings.is_empty() {
        println!(
            "{} warning(s); details in {}",
            report.warnings.len(),
            cfg.out_dir.join("report.txt").display()
        );
    }
    println!("artifacts in {}", cfg.out_dir.display());
}
