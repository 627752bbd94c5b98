use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sbp::harness::{
    exit_code, generate_models, infer, run_experiment, trace_csv, trace_experiment, write_outputs, ExperimentConfig,
    Method, MethodParams,
};
use sbp::homotopy::SbpConfig;
use sbp::model_io::{read_model, write_model};
use sbp::{Error, Result};

#[derive(Parser)]
#[command(name = "sbp", version, about = "Self-guided belief propagation for Ising models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write every model an experiment config would sample as model files.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one method on one model file and print its marginals as JSON.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "sbp")]
        method: String,
        /// JSON file with per-method parameters (keys bp, bp_damped, sbp, gibbs, bethe_min).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment config and write results.csv, summary.csv, report.json and meta.json.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every fixed point along a self-guided run on one model.
    Trace {
        #[arg(long)]
        model: PathBuf,
        /// JSON file with self-guided run settings.
        #[arg(long)]
        sbp: Option<PathBuf>,
        /// Damped-BP restarts for the Bethe reference; 0 leaves mse_b empty.
        #[arg(long, default_value_t = 20)]
        bethe_restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            fs::create_dir_all(&out)?;
            let models = generate_models(&cfg)?;
            for (s, l, seed, model) in &models {
                let path = out.join(format!("s{:03}_m{:04}.ising", s.index, l));
                write_model(model, &path)?;
                println!("{},{},{}", path.display(), s.index, seed);
            }
        }
        Command::Infer {
            model,
            method,
            params,
            seed,
        } => {
            let model = read_model(&model)?;
            let method: Method = method.parse()?;
            let params: MethodParams = match params {
                Some(p) => load_json(&p)?,
                None => MethodParams::default(),
            };
            let result = infer(&model, method, &params, seed)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Bench { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_experiment(&cfg)?;
            for p in write_outputs(&report, &out)? {
                eprintln!("wrote {}", p.display());
            }
            print!("{}", report.summary_csv());
        }
        Command::Trace {
            model,
            sbp,
            bethe_restarts,
            seed,
            out,
        } => {
            let model = read_model(&model)?;
            let cfg: SbpConfig = match sbp {
                Some(p) => load_json(&p)?,
                None => SbpConfig::default(),
            };
            let csv = trace_csv(&trace_experiment(&model, &cfg, bethe_restarts, seed)?);
            match out {
                Some(p) => fs::write(p, csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
