use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use gplight::control::Mode;
use gplight::experiment::{self, ExperimentConfig, ExperimentError, Prepared};
use gplight::scenario::{generate_scenario, ScenarioName, ScenarioOptions};

#[derive(Parser)]
#[command(name = "gplight", version, about = "Forecast-assisted traffic signal control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single control seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in scenario's roadnet.json and flows.json.
    Generate {
        #[arg(long, default_value = "single")]
        scenario: ScenarioName,
        /// Seed for randomized flow generation (grid scenarios).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add the west/east surge to grid scenarios.
        #[arg(long)]
        grid_surge: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Harvest MaxPressure data and train the traffic forecaster.
    TrainPredictor(RunArgs),
    /// Train the learned control modes (needs the forecaster for gplight).
    TrainControl(RunArgs),
    /// Evaluate every configured mode from saved checkpoints.
    Evaluate(RunArgs),
    /// All stages in order.
    Run(RunArgs),
    /// Compare mode A of run A with mode B of run B.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long, default_value = "gplight")]
        a_mode: Mode,
        #[arg(long, default_value = "presslight-dynamic")]
        b_mode: Mode,
        /// Directory for gap.csv and table.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn staged(args: &RunArgs, f: impl FnOnce(&Prepared) -> Result<(), ExperimentError>) -> Result<PathBuf, ExperimentError> {
    let p = experiment::prepare(&load_config(args)?)?;
    f(&p)?;
    experiment::write_manifest(&p)?;
    Ok(p.cfg.out_dir.clone())
}

fn generate(scenario: ScenarioName, seed: u64, grid_surge: bool, out: &Path) -> anyhow::Result<()> {
    let opts = ScenarioOptions { seed, grid_surge, ..ScenarioOptions::default() };
    let s = generate_scenario(scenario, &opts);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("roadnet.json"), s.roadnet_json())?;
    std::fs::write(out.join("flows.json"), s.flows_json())?;
    println!("wrote {} scenario to {}", scenario, out.display());
    Ok(())
}

/// Errors carry the failing stage as a `[tag]` prefix.
fn execute(cmd: Command) -> anyhow::Result<()> {
    let tagged = anyhow::Error::new::<ExperimentError>;
    match cmd {
        Command::Generate { scenario, seed, grid_surge, out } => {
            generate(scenario, seed, grid_surge, &out).map_err(|e| anyhow::anyhow!("[generate] {e:#}"))
        }
        Command::TrainPredictor(a) => {
            let dir = staged(&a, experiment::stage_train_predictor).map_err(tagged)?;
            println!("forecaster checkpoints in {}", dir.display());
            Ok(())
        }
        Command::TrainControl(a) => {
            let dir = staged(&a, experiment::stage_train_control).map_err(tagged)?;
            println!("agent checkpoints in {}", dir.display());
            Ok(())
        }
        Command::Evaluate(a) => {
            let mut rows = Vec::new();
            staged(&a, |p| {
                rows = experiment::stage_evaluate(p)?;
                Ok(())
            })
            .map_err(tagged)?;
            print_summary(&rows);
            Ok(())
        }
        Command::Run(a) => {
            let cfg = load_config(&a).map_err(tagged)?;
            experiment::run(&cfg).map_err(tagged)?;
            print_summary(&experiment::read_summary(&cfg.out_dir).map_err(tagged)?);
            println!("results in {}", cfg.out_dir.display());
            Ok(())
        }
        Command::Compare { run_a, run_b, a_mode, b_mode, out } => {
            if let Some(o) = &out {
                std::fs::create_dir_all(o).map_err(|e| anyhow::anyhow!("[compare] {}: {e}", o.display()))?;
            }
            let c = experiment::compare(&run_a, &run_b, a_mode, b_mode, out.as_deref()).map_err(tagged)?;
            println!("{:<12} {:<20} {:>5} {:>10} {:>10} {:>10}", "run", "mode", "seeds", "att", "att_incl", "throughput");
            for r in &c.table {
                println!(
                    "{:<12} {:<20} {:>5} {:>10.1} {:>10.1} {:>10.1}",
                    r.run, r.mode, r.seeds, r.att_completed, r.att_inclusive, r.throughput
                );
            }
            if let Some((t, _, g)) = c.gap.last() {
                println!("median gap {a_mode} - {b_mode} at t={t}s: {g}");
            }
            Ok(())
        }
    }
}

fn print_summary(rows: &[experiment::SummaryRow]) {
    println!("{:<20} {:>5} {:>8} {:>11} {:>10}", "mode", "seed", "episode", "throughput", "att");
    for r in rows {
        println!("{:<20} {:>5} {:>8} {:>11} {:>10.1}", r.mode, r.seed, r.episode, r.throughput, r.att_completed);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
