use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sideslip::neural::InputSet;
use sideslip::pipeline::{self, parse_estimators, Estimator, RunConfig};

/// Log verbosity, in `env_logger` filter syntax (default `info`).
const LOG_ENV: &str = "SIDESLIP_LOG";

#[derive(Parser, Debug)]
#[command(name = "sideslip", version, about = "Vehicle sideslip estimation workbench")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for simulation, splitting, tuning and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated estimators: ekf-imu, ekf-tyre, ukf-imu, ukf-tyre,
    /// ffnn-i1, ffnn-i2, rnn-i1, rnn-i2.
    #[arg(long, global = true)]
    estimators: Option<String>,
    /// Keep only networks fed with this input set.
    #[arg(long, global = true)]
    input_set: Option<InputArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InputArg {
    I1,
    I2,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the manoeuvre catalogue into out/dataset/raw.
    Generate {
        /// default, reference, or a manoeuvre count.
        #[arg(long)]
        catalogue: Option<String>,
    },
    /// Gate, clean, low-pass and split the raw dataset.
    Prepare,
    /// Tune filter noise on the validation manoeuvres.
    Tune {
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Train the selected networks.
    Train,
    /// Run the selected estimators on the test manoeuvres.
    Run,
    /// Write per-estimator KPI CSVs.
    Evaluate,
    /// Write comparison tables and error histograms.
    Report {
        /// Also write the reference tables from the original study.
        #[arg(long)]
        reference: bool,
    },
    /// Run the built-in oracle checks.
    Selftest,
    /// Print the effective configuration as TOML.
    Config,
}

fn resolve(cli: &Cli) -> sideslip::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(list) = &cli.estimators {
        cfg.estimators = parse_estimators(list)?;
    }
    if let Some(input) = cli.input_set {
        let keep = match input {
            InputArg::I1 => InputSet::I1,
            InputArg::I2 => InputSet::I2,
        };
        cfg.estimators.retain(|e| !matches!(e, Estimator::Network(_, i) if *i != keep));
    }
    match &cli.command {
        Command::Generate { catalogue: Some(c) } => cfg.catalogue = c.clone(),
        Command::Tune { budget: Some(b) } => cfg.tuning.budget = *b,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), String> {
    let stage = |name: &str, e: sideslip::Error| format!("{name}: {e}");
    let cfg = resolve(cli).map_err(|e| stage("config", e))?;
    match &cli.command {
        Command::Generate { .. } => {
            let d = pipeline::generate(&cfg).map_err(|e| stage("generate", e))?;
            println!("generated {} manoeuvres", d.manoeuvres.len());
        }
        Command::Prepare => {
            let (_, split) = pipeline::prepare(&cfg).map_err(|e| stage("prepare", e))?;
            println!("split: {} train / {} val / {} test", split.train.len(), split.val.len(), split.test.len());
        }
        Command::Tune { .. } => {
            for t in pipeline::tune(&cfg).map_err(|e| stage("tune", e))? {
                println!("{}: validation RMSE {:.4} deg", t.estimator, t.validation_rmse_deg);
            }
        }
        Command::Train => {
            for c in pipeline::train(&cfg).map_err(|e| stage("train", e))? {
                println!("{}-{}: {} epochs", c.spec.kind.name(), c.input_set.name(), c.history.len());
            }
        }
        Command::Run => pipeline::run(&cfg).map_err(|e| stage("run", e))?,
        Command::Evaluate => {
            for r in pipeline::evaluate(&cfg).map_err(|e| stage("evaluate", e))? {
                println!("{}: RMSE {:.3} deg", r.estimator, r.pooled.rmse);
            }
        }
        Command::Report { reference } => {
            let files = pipeline::report(&cfg, *reference).map_err(|e| stage("report", e))?;
            for p in files.tables.iter().chain(&files.histograms) {
                println!("{}", p.display());
            }
        }
        Command::Selftest => {
            let checks = sideslip::selftest::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().any(|c| !c.passed) {
                return Err("selftest: one or more checks failed".into());
            }
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            log::error!("{msg}");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
