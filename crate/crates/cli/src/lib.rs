//! Experiment driver behind the `loggas` binary.

pub mod config;
pub mod output;
pub mod stages;

use clap::{Args, Parser, Subcommand};
use config::{override_model, ConfigError, ExperimentConfig, OutputConfig};
use output::Sink;
use stages::Context;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_STAGE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("stage failed: {0}")]
    Stage(String),
}

impl From<loggas::Error> for CliError {
    fn from(e: loggas::Error) -> Self {
        CliError::Stage(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Stage(_) => EXIT_STAGE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "loggas", version, about = "Discrete beta-ensemble experiments")]
pub struct Cli {
    /// TOML experiment file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; per-chain seeds are derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for independent chains.
    #[arg(long, global = true, env = "LOGGAS_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true, env = "LOGGAS_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Model family, e.g. krawtchouk or convex_potential.
    #[arg(long)]
    pub preset: Option<String>,
    /// Comma-separated particle counts.
    #[arg(long = "N", value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Krawtchouk ratio M/N.
    #[arg(long)]
    pub m: Option<f64>,
    /// Further model fields as key=value, value in TOML syntax.
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, toml::Value)>,
}

fn parse_param(s: &str) -> Result<(String, toml::Value), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    let t: toml::Table = format!("v = {v}").parse().map_err(|e: toml::de::Error| e.message().to_string())?;
    Ok((k.trim().to_string(), t["v"].clone()))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Residues of R_N at lattice points for enumerable N.
    VerifyNekrasov(ModelArgs),
    /// Constrained equilibrium density.
    Equilibrium(ModelArgs),
    /// MCMC samples of the configured observables.
    Sample(ModelArgs),
    /// Cumulant trends of linear statistics and Stieltjes transforms.
    Clt(ModelArgs),
    /// Law-of-large-numbers trend of polynomial statistics.
    Lln(ModelArgs),
    /// Tail frequencies and pseudodistance trend.
    Tails(ModelArgs),
    /// Limit covariance kernel at the configured points.
    Covariance(ModelArgs),
    /// Every enabled stage in order.
    Pipeline(ModelArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::VerifyNekrasov(_) => "verify-nekrasov",
            Command::Equilibrium(_) => "equilibrium",
            Command::Sample(_) => "sample",
            Command::Clt(_) => "clt",
            Command::Lln(_) => "lln",
            Command::Tails(_) => "tails",
            Command::Covariance(_) => "covariance",
            Command::Pipeline(_) => "pipeline",
        }
    }

    fn model_args(&self) -> &ModelArgs {
        match self {
            Command::VerifyNekrasov(a)
            | Command::Equilibrium(a)
            | Command::Sample(a)
            | Command::Clt(a)
            | Command::Lln(a)
            | Command::Tails(a)
            | Command::Covariance(a)
            | Command::Pipeline(a) => a,
        }
    }
}

/// Config file (or preset defaults) with flags applied on top.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let args = cli.command.model_args();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let name = args.preset.as_deref().ok_or_else(|| ConfigError {
                line: None,
                message: "either --config or --preset is required".into(),
            })?;
            let model = override_model(&loggas::ModelPreset::krawtchouk(2.0), Some(name), &model_params(args))?;
            ExperimentConfig::for_preset(model)
        }
    };
    cfg.model = override_model(&cfg.model, args.preset.as_deref(), &model_params(args))?;
    if let Some(n) = &args.n {
        cfg.n = n.clone();
    }
    if let Some(s) = cli.seed {
        cfg.chain.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate().map_err(|(_, key, message)| ConfigError { line: None, message: format!("{key}: {message}") })?;
    Ok(cfg)
}

fn model_params(args: &ModelArgs) -> Vec<(String, toml::Value)> {
    let mut p = args.params.clone();
    if let Some(m) = args.m {
        p.push(("m".into(), toml::Value::Float(m)));
    }
    if let Some(t) = args.theta {
        p.push(("theta".into(), toml::Value::Float(t)));
    }
    p
}

/// Summary of a completed run.
#[derive(Debug)]
pub struct RunReport {
    pub failures: Vec<String>,
    pub written: Vec<PathBuf>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_VERIFICATION
        }
    }
}

/// Manifest text: the resolved config plus tool identity. Feeding it back
/// through `--config` reproduces the run.
pub fn manifest(cfg: &ExperimentConfig, stage: &str) -> String {
    let mut m = cfg.clone();
    m.output = OutputConfig::default();
    let mut info = toml::Table::new();
    info.insert("stage".into(), stage.into());
    info.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    info.insert("rng".into(), loggas::mcmc::RNG_NAME.into());
    m.manifest = Some(info);
    m.to_toml()
}

pub fn run(cli: &Cli) -> Result<RunReport, CliError> {
    let cfg = resolve_config(cli)?;
    run_config(cfg, &cli.command, cli.threads)
}

pub fn run_config(cfg: ExperimentConfig, command: &Command, threads: usize) -> Result<RunReport, CliError> {
    let mut ctx = Context { sink: Sink::new(cfg.output.dir.clone()), cfg, threads: threads.max(1), failures: Vec::new() };
    let stage = command.name();
    ctx.sink.bytes("manifest.toml", manifest(&ctx.cfg, stage).as_bytes())?;
    let a = ctx.cfg.analysis.clone();
    match command {
        Command::VerifyNekrasov(_) => stages::verify_nekrasov(&mut ctx, true)?,
        Command::Equilibrium(_) => {
            stages::equilibrium(&mut ctx)?;
        }
        Command::Covariance(_) => {
            let meas = stages::equilibrium(&mut ctx)?;
            stages::covariance(&mut ctx, &meas)?;
        }
        Command::Sample(_) => {
            stages::sample(&mut ctx, false, true)?;
        }
        Command::Clt(_) => {
            let samples = stages::sample(&mut ctx, false, false)?;
            stages::clt(&mut ctx, &samples, None)?;
        }
        Command::Lln(_) => {
            let samples = stages::sample(&mut ctx, false, false)?;
            let meas = stages::equilibrium(&mut ctx)?;
            stages::lln(&mut ctx, &samples, &meas)?;
        }
        Command::Tails(_) => {
            let samples = stages::sample(&mut ctx, true, false)?;
            let meas = stages::equilibrium(&mut ctx)?;
            stages::tails(&mut ctx, &samples, &meas)?;
        }
        Command::Pipeline(_) => {
            if a.nekrasov_verify {
                stages::verify_nekrasov(&mut ctx, false)?;
            }
            let need_meas = a.equilibrium || a.covariance || a.lln || a.tails;
            let meas = if need_meas { Some(stages::equilibrium(&mut ctx)?) } else { None };
            let kernel = match (&meas, a.covariance) {
                (Some(m), true) => Some(stages::covariance(&mut ctx, m)?),
                _ => None,
            };
            if a.clt || a.lln || a.tails {
                let samples = stages::sample(&mut ctx, a.tails, true)?;
                if a.clt {
                    stages::clt(&mut ctx, &samples, kernel.as_ref())?;
                }
                if let Some(m) = &meas {
                    if a.lln {
                        stages::lln(&mut ctx, &samples, m)?;
                    }
                    if a.tails {
                        stages::tails(&mut ctx, &samples, m)?;
                    }
                }
            }
        }
    }
    Ok(RunReport { failures: ctx.failures, written: ctx.sink.written })
}
