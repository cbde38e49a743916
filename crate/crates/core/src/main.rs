use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedcbdr::experiment::{run_experiment, run_grid, GridAxes};
use fedcbdr::metrics::report_buffer_balance;
use fedcbdr::{Error, ExperimentConfig, Method};

#[derive(Parser)]
#[command(
    name = "fedcbdr",
    version,
    about = "Federated class-incremental replay experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write metrics.jsonl, selection.jsonl, summary.json.
    Run {
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this method (FedCBDR, Finetune, LocalRandomReplay).
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Per-task replay buffer balance from a metrics.jsonl file.
    BalanceReport { metrics: PathBuf },
    /// Temperature/weight sensitivity sweep for FedCBDR.
    Grid {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.7, 0.9])]
        tau_old: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.1, 1.5, 2.0])]
        tau_new: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.1, 1.5, 2.0])]
        w_old: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.7, 0.9])]
        w_new: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    method: Option<&str>,
    beta: Option<f64>,
) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = method {
        let m = Method::parse(m)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {m}")))?;
        cfg.methods = vec![m];
    }
    if let Some(b) = beta {
        cfg.beta = b;
    }
    cfg.validate().map_err(|(field, message)| Error::Config {
        line: 0,
        column: 0,
        message: format!("`{field}` (command line): {message}"),
    })?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config { .. } | Error::MissingFile(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            method,
            beta,
            out,
        } => load_config(&config, seed, method.as_deref(), beta).and_then(|cfg| {
            let summary = run_experiment(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }),
        Command::BalanceReport { metrics } => report_buffer_balance(&metrics).and_then(|rows| {
            for r in rows {
                println!("{}", serde_json::to_string(&r)?);
            }
            Ok(())
        }),
        Command::Grid {
            config,
            tau_old,
            tau_new,
            w_old,
            w_new,
            seed,
            beta,
            out,
        } => load_config(&config, seed, None, beta).and_then(|cfg| {
            let axes = GridAxes {
                tau_old,
                tau_new,
                w_old,
                w_new,
            };
            for cell in run_grid(&cfg, &axes, Some(&out))? {
                println!("{}", serde_json::to_string(&cell)?);
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
