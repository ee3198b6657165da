use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use prefseg_core::feature_provider::{generate_world, SyntheticWorldConfig};
use prefseg_core::oracle::{FeedbackHub, HumanOracle};
use prefseg_core::orchestrator::{
    self, completed_rounds, derive_seed, eval_round, load_report, to_csv, OracleMode, RunConfig, RunOutcome,
};
use prefseg_core::types::load_manifest;

#[derive(Parser)]
#[command(name = "prefseg", version, about = "Interactive segmentation from better/worse feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sim,
    Human,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (images, masks, features, manifest).
    GenWorld {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
    },
    /// Run the refinement rounds.
    Run {
        #[arg(long, required_unless_present = "resume")]
        manifest: Option<PathBuf>,
        /// Run configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Sim)]
        mode: Mode,
        #[arg(long, required_unless_present = "resume")]
        out: Option<PathBuf>,
        /// Continue the run persisted in this directory.
        #[arg(long, conflicts_with_all = ["manifest", "config", "out", "seed"])]
        resume: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Feedback service address in human mode.
        #[arg(long, default_value = "127.0.0.1:8787")]
        bind: String,
    },
    /// Recompute a round's report from its directory.
    Eval {
        #[arg(long)]
        round: PathBuf,
    },
    /// Print every completed round's report.
    ExportReport {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        out: Format,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenWorld { config, out, n } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg: SyntheticWorldConfig = serde_json::from_str(&text).context("parsing world config")?;
            let dataset = generate_world(&cfg, n, &out)?;
            println!("wrote {} records to {}", dataset.records.len(), out.display());
        }
        Command::Run {
            manifest,
            config,
            mode,
            out,
            resume,
            seed,
            bind,
        } => {
            let outcome = match resume {
                Some(dir) => {
                    let record: orchestrator::RunRecord = serde_json::from_str(
                        &std::fs::read_to_string(dir.join(orchestrator::RUN_FILE)).context("reading run record")?,
                    )?;
                    with_oracle(mode, &record.config, &bind, &record.run_id, |oracle, observer| {
                        orchestrator::resume(&dir, oracle, observer)
                    })?
                }
                None => {
                    let mut cfg = match &config {
                        Some(p) => RunConfig::load(p)?,
                        None => RunConfig::default(),
                    };
                    cfg.output_dir = out;
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    cfg.oracle_mode = match mode {
                        Mode::Sim => OracleMode::Simulated,
                        Mode::Human => OracleMode::Human,
                    };
                    cfg.validate()?;
                    let dataset = load_manifest(manifest.as_deref().expect("required by clap"))?;
                    let run_id = format!("{}-seed{}", dataset.name, cfg.seed);
                    with_oracle(mode, &cfg, &bind, &run_id, |oracle, observer| {
                        orchestrator::run(&dataset, &cfg, oracle, observer)
                    })?
                }
            };
            print!("{}", to_csv(&outcome.reports));
        }
        Command::Eval { round } => {
            let report = eval_round(&round)?;
            if let Ok(stored) = load_report(&round) {
                if stored != report {
                    log::warn!("recomputed report differs from the stored one");
                }
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::ExportReport { run, out } => {
            let reports = completed_rounds(&run)?
                .iter()
                .map(|d| load_report(d))
                .collect::<prefseg_core::Result<Vec<_>>>()?;
            if reports.is_empty() {
                bail!("no completed rounds under {}", run.display());
            }
            match out {
                Format::Csv => print!("{}", to_csv(&reports)),
                Format::Json => println!("{}", serde_json::to_string_pretty(&reports)?),
            }
        }
    }
    Ok(())
}

/// Runs `drive` with the simulated oracle, or with a human oracle behind the
/// feedback service for the duration of the run.
fn with_oracle<'a>(
    mode: Mode,
    configured: &RunConfig,
    bind: &str,
    run_id: &str,
    drive: impl FnOnce(
            Option<&mut dyn prefseg_core::oracle::PreferenceOracle>,
            Option<&dyn orchestrator::RunObserver>,
        ) -> prefseg_core::Result<RunOutcome>
        + 'a,
) -> Result<RunOutcome> {
    let human = matches!(mode, Mode::Human) || configured.oracle_mode == OracleMode::Human;
    if !human {
        return Ok(drive(None, None)?);
    }
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
    let session = format!("{:016x}", derive_seed(nanos, &[std::process::id() as u64]));
    let hub = Arc::new(FeedbackHub::new(run_id, &session));
    let token = prefseg_service::token_from_env();
    if token.is_none() {
        log::warn!("{} is unset; the feedback service accepts unauthenticated requests", prefseg_service::TOKEN_ENV);
    }
    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt
        .block_on(tokio::net::TcpListener::bind(bind))
        .with_context(|| format!("binding {bind}"))?;
    let stop = Arc::new(tokio::sync::Notify::new());
    let server = {
        let hub = hub.clone();
        let stop = stop.clone();
        let app = prefseg_service::router(hub.clone(), token);
        rt.spawn(prefseg_service::serve(listener, app, async move {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {
                    info!("interrupted; closing the session so the run state is saved");
                    hub.finish();
                }
                _ = stop.notified() => {}
            }
        }))
    };
    println!("session {session}: point the reviewer UI at http://{bind}");
    let mut oracle = HumanOracle::new(
        hub.clone(),
        Duration::from_secs(configured.human.timeout_secs),
        configured.human.on_timeout,
    );
    let result = drive(Some(&mut oracle), Some(&*hub));
    hub.finish();
    stop.notify_one();
    rt.block_on(server)??;
    Ok(result?)
}
