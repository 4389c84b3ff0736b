use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use brewtask_admin::export::{export, ExportKind, ExportOptions, Format};
use brewtask_admin::sim::{simulate, Profile, SimConfig};
use brewtask_admin::{jobfile, seed};
use brewtask_core::clock::{ManualClock, SystemClock};
use brewtask_core::ingestion::{FeedRegistry, FixtureFeedAdapter};
use brewtask_core::model::JobId;
use brewtask_core::routing::{ReservationPolicy, DEFAULT_RESERVATION_TTL_SECS};
use brewtask_core::storage::Store;
use brewtask_core::{Platform, PlatformConfig};
use chrono::{SubsecRound, Utc};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "brewtask-admin", version, about = "Operate a brewtask data directory")]
struct Cli {
    /// Storage directory shared with the service.
    #[arg(long, global = true, default_value = "brewtask-data")]
    data_dir: PathBuf,
    /// JSON feed fixture registered as the "fixture" feed source.
    #[arg(long, global = true)]
    feed_fixture: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Upsert users, rewards and coupon codes from a TOML file.
    Seed { config: PathBuf },
    /// Job files.
    Job {
        #[command(subcommand)]
        command: JobCommand,
    },
    /// Drive synthetic workers through a published job.
    Simulate(SimulateArgs),
    /// Release expired reservations.
    Expire,
    /// Write results or reports for a job.
    Export(ExportArgs),
}

#[derive(Subcommand)]
enum JobCommand {
    /// Create a job from a JSON job file.
    Load { file: PathBuf },
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10)]
    workers: usize,
    #[arg(long, default_value_t = 0.95)]
    accuracy: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long)]
    job: Option<String>,
    /// Mean seconds per instance (category default when unset).
    #[arg(long)]
    mean_duration: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    abandon_rate: f64,
    #[arg(long, default_value_t = DEFAULT_RESERVATION_TTL_SECS)]
    reservation_ttl: u32,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Results,
    Kappa,
    Stats,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Text,
}

#[derive(clap::Args)]
struct ExportArgs {
    kind: KindArg,
    #[arg(long)]
    job: String,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    #[arg(long)]
    raters: Option<u32>,
    #[arg(long)]
    min_items: Option<usize>,
    /// Output file; stdout when unset.
    #[arg(long)]
    out: Option<PathBuf>,
}

type AnyError = Box<dyn std::error::Error>;

fn feeds(path: &Option<PathBuf>) -> FeedRegistry {
    let mut f = FeedRegistry::new();
    if let Some(p) = path {
        f.register(brewtask_server::FIXTURE_FEED, FixtureFeedAdapter::new(p));
    }
    f
}

fn open_platform(cli: &Cli) -> Result<Platform, AnyError> {
    Ok(Platform::new(
        Store::open(&cli.data_dir)?,
        Arc::new(SystemClock),
        PlatformConfig::default(),
        feeds(&cli.feed_fixture),
    ))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), AnyError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), AnyError> {
    match &cli.command {
        Command::Seed { config } => print_json(&seed::seed_file(&open_platform(&cli)?, config)?),
        Command::Job {
            command: JobCommand::Load { file },
        } => print_json(&jobfile::load_file(&open_platform(&cli)?, file)?),
        Command::Expire => {
            let p = open_platform(&cli)?;
            let n = p.expire_reservations(Utc::now())?;
            println!("expired {n}");
            Ok(())
        }
        Command::Export(a) => {
            let kind = match a.kind {
                KindArg::Results => ExportKind::Results,
                KindArg::Kappa => ExportKind::Kappa,
                KindArg::Stats => ExportKind::Stats,
            };
            let format = match a.format {
                FormatArg::Json => Format::Json,
                FormatArg::Csv => Format::Csv,
                FormatArg::Text => Format::Text,
            };
            let opts = ExportOptions {
                raters: a.raters,
                min_items: a.min_items,
            };
            let bytes = export(&open_platform(&cli)?, kind, &JobId::new(a.job.clone()), format, &opts)?;
            match &a.out {
                Some(p) => std::fs::write(p, bytes)?,
                None => std::io::stdout().write_all(&bytes)?,
            }
            Ok(())
        }
        Command::Simulate(a) => {
            let clock = Arc::new(ManualClock::new(Utc::now().trunc_subsecs(0)));
            let platform = Arc::new(Platform::new(
                Store::open(&cli.data_dir)?,
                clock.clone(),
                PlatformConfig {
                    reservation: ReservationPolicy::new(a.reservation_ttl)?,
                    rng_seed: a.seed,
                    ..PlatformConfig::default()
                },
                feeds(&cli.feed_fixture),
            ));
            let cfg = SimConfig {
                workers: a.workers,
                profile: Profile {
                    accuracy: a.accuracy,
                    mean_duration_secs: a.mean_duration,
                    jitter: a.jitter,
                    abandon_rate: a.abandon_rate,
                    ..Profile::default()
                },
                seed: a.seed,
                parallelism: a.parallelism,
                job: a.job.clone().map(JobId::new),
                ..SimConfig::default()
            };
            let rt = tokio::runtime::Runtime::new()?;
            let report = rt.block_on(simulate(platform, clock, &cfg))?;
            match &a.report {
                Some(p) => std::fs::write(p, serde_json::to_vec_pretty(&report)?)?,
                None => print_json(&report)?,
            }
            eprintln!(
                "{} judgments, {} bans, {} units finalized, {} cents paid, hash {}",
                report.judgments, report.bans, report.units_finalized, report.total_payout_cents, report.report_hash
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
