use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bridgekit::commands::{self, Report};
use bridgekit::config::ExperimentConfig;
use bridgekit::output::to_json;
use bridgekit_core::ScheduleKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bridgekit", version, about = "Diffusion-bridge translation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report invariant violations without failing.
    #[arg(long)]
    no_strict: bool,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if self.no_strict {
            cfg.strict = false;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Schedule tables.
    #[command(subcommand)]
    Schedule(ScheduleCmd),
    /// Fit a velocity network on the configured world.
    Train(RunArgs),
    /// Integrate the reverse sampler from encoded source observations.
    Sample {
        #[command(flatten)]
        run: RunArgs,
        /// Also write every intermediate state.
        #[arg(long)]
        trajectories: bool,
    },
    /// Translate paired source observations into the target domain.
    Translate(RunArgs),
    /// Run target samples forward to the endpoint and back.
    Invert(RunArgs),
    /// Retina filter and PCA projector.
    #[command(subcommand)]
    Encoder(EncoderCmd),
    /// Toy world inspection.
    #[command(subcommand)]
    Domains(DomainsCmd),
    /// Check the translation error bound trial by trial.
    VerifyBound(RunArgs),
    /// Euler step-size convergence study.
    Convergence(RunArgs),
    /// Alignment metrics between two feature CSVs with matching rows.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Baseline features for the cosine-similarity gain.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Linear,
    Snr,
    Rectified,
}

#[derive(Subcommand)]
enum ScheduleCmd {
    /// Tabulate the weights and their rates on a uniform grid over [0, 1].
    Dump {
        #[arg(long, value_enum, default_value = "linear")]
        kind: Kind,
        #[arg(long, default_value_t = 0.1)]
        gamma_max: f64,
        #[arg(long, default_value_t = 0.1)]
        beta_min: f64,
        #[arg(long, default_value_t = 20.0)]
        beta_max: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EncoderCmd {
    /// Fit the PCA projector on retina-filtered toy image patches.
    Fit(RunArgs),
    /// Encode held-out toy images with a fitted projector.
    Apply {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        projector: PathBuf,
    },
}

#[derive(Subcommand)]
enum DomainsCmd {
    /// Write paired samples and map constants.
    Dump(RunArgs),
}

fn emit(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_config(args: &RunArgs, f: impl FnOnce(&ExperimentConfig) -> Result<Report>) -> Result<ExitCode> {
    let cfg = args.load()?;
    log::info!("writing results to {}", cfg.output.display());
    let report = f(&cfg)?;
    print!("{}", to_json(&report.summary)?);
    for v in &report.violations {
        log::warn!("invariant violated: {v}");
    }
    if cfg.strict && !report.violations.is_empty() {
        eprintln!("{} invariant violation(s) in strict mode", report.violations.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Schedule(ScheduleCmd::Dump {
            kind,
            gamma_max,
            beta_min,
            beta_max,
            points,
            out,
        }) => {
            let kind = match kind {
                Kind::Linear => ScheduleKind::LinearBridge { gamma_max },
                Kind::Snr => ScheduleKind::SnrBridge { beta_min, beta_max },
                Kind::Rectified => ScheduleKind::RectifiedFlow,
            };
            let table = commands::schedule_dump(kind, points)?;
            let bytes = table.to_bytes()?;
            emit(out.as_ref(), std::str::from_utf8(&bytes)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(a) => run_config(&a, commands::train),
        Command::Sample { run, trajectories } => run_config(&run, |c| commands::sample(c, trajectories)),
        Command::Translate(a) => run_config(&a, commands::translate),
        Command::Invert(a) => run_config(&a, commands::invert),
        Command::Encoder(EncoderCmd::Fit(a)) => run_config(&a, commands::encoder_fit),
        Command::Encoder(EncoderCmd::Apply { run, projector }) => {
            run_config(&run, |c| commands::encoder_apply(c, &projector))
        }
        Command::Domains(DomainsCmd::Dump(a)) => run_config(&a, commands::domains_dump),
        Command::VerifyBound(a) => run_config(&a, commands::verify_bound),
        Command::Convergence(a) => run_config(&a, commands::convergence),
        Command::Metrics { a, b, source, k, out } => {
            let json = commands::metrics(&a, &b, source.as_deref(), k)?;
            emit(out.as_ref(), &json)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
