use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use cab_harness::commands::{self, parse_split, ModelSpec};
use cab_harness::experiment::run_experiment;
use cab_harness::Config;
use cab_model::Method;

/// Trajectory forecasting experiments on synthetic driving data.
#[derive(Parser)]
#[command(name = "cab", version, arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the stage being run (data, training or evaluation).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Override a config value, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test splits, probe pairs and their certificate.
    GenerateData,
    /// Train one CVAE and keep the best-validation checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        /// Train the ablation that only ever sees the null context.
        #[arg(long)]
        no_context: bool,
        #[arg(long)]
        name: Option<String>,
    },
    /// Write the metric suite for a checkpoint or a physics baseline.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path, `physics:<kind>` or `physics:oracle`.
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Rank instances by Kalman-filter hardness.
    RankHardness {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Exact Shapley attribution over state, map and neighbors.
    Shapley {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Merge metric CSVs into one table keyed by model name.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "report.csv")]
        name: String,
    },
    /// Train, evaluate and attribute every de-biasing variant on every seed.
    Experiment {
        #[arg(long)]
        data: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut cfg = Config::load(c.config.as_deref(), &c.overrides)?;
    let out = &c.out_dir;
    match cli.command {
        Command::GenerateData => {
            if let Some(s) = c.seed {
                cfg.data.seed = s;
            }
            let man = commands::generate_data(&cfg, out)?;
            for (k, v) in &man.metrics {
                println!("{k}\t{v}");
            }
        }
        Command::Train { data, method, no_context, name } => {
            if let Some(s) = c.seed {
                cfg.train.seed = s;
            }
            if let Some(m) = method {
                cfg.debias.method = m;
            }
            if no_context {
                cfg.model.use_context = false;
            }
            let default_name = match (cfg.model.use_context, cfg.debias.method) {
                (false, _) => "no_context",
                (true, Method::None) => "base",
                (true, m) => m.as_str(),
            };
            let name = name.unwrap_or_else(|| default_name.to_string());
            let r = commands::train_model(&cfg, &data, out, &name, |e| {
                let total = e.train.iter().find(|(k, _)| k == "total").map(|p| p.1).unwrap_or(f64::NAN);
                eprintln!("epoch {:>3}  loss {total:.4}  val ADE-ML {:.4}  {:.1}s", e.epoch, e.val_ade.unwrap_or(f64::NAN), e.seconds);
            })?;
            println!("{}", r.checkpoint.display());
        }
        Command::Evaluate { data, model, split } => {
            if let Some(s) = c.seed {
                cfg.eval.seed = s;
            }
            let spec: ModelSpec = model.parse().map_err(anyhow::Error::msg)?;
            let r = commands::evaluate_model(&cfg, &data, &spec, parse_split(&split)?, out)?;
            println!("{}", r.csv.display());
        }
        Command::RankHardness { data, split } => {
            let p = commands::rank_hardness_cmd(&cfg, &data, parse_split(&split)?, out)?;
            println!("{}", p.display());
        }
        Command::Shapley { data, model, split } => {
            let spec: ModelSpec = model.parse().map_err(anyhow::Error::msg)?;
            let r = commands::shapley_cmd(&cfg, &data, &spec, parse_split(&split)?, out)?;
            println!("{}\nmean |phi_map|+|phi_neighbors| {}", r.csv.display(), r.mean_context);
        }
        Command::Report { inputs, name } => {
            print!("{}", commands::report(&inputs, &out.join(name))?);
        }
        Command::Experiment { data } => {
            if let Some(s) = c.seed {
                cfg.eval.seed = s;
            }
            let s = run_experiment(&cfg, &data, out, |m| eprintln!("{m}"))?;
            for c in &s.claims {
                let status = match (c.pass, c.gated) {
                    (true, _) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "NOTE",
                };
                println!("{status} {}: {} {:?}", c.id, c.statement, c.values);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
