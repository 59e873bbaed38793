//! Argument parsing and command dispatch.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use fogchain_api::ApiService;
use fogchain_core::contracts::canonical;
use fogchain_core::device_sim::{registration_for, spawn_fleet};
use fogchain_core::{Benchmark, ContentStore, Deployment, Ledger};

use crate::bench::{run_benchmark_with, BenchError, BenchRun, BenchmarkReport};
use crate::config::{ConfigError, RunConfig};
use crate::report::{render, Format};

#[derive(Debug, Parser)]
#[command(name = "fogchain", version, about = "Ledger-anchored fog monitoring simulator")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Benchmark runs.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run a full topology and report on one node role.
    #[command(subcommand)]
    Node(NodeCommand),
    /// Ledger inspection.
    #[command(subcommand)]
    Ledger(LedgerCommand),
    /// Content-addressed store inspection.
    #[command(subcommand)]
    Cas(CasCommand),
    /// Report rendering.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Serve the HTTP/JSON and event-stream API over a live deployment.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunOverrides {
    #[arg(long)]
    pub benchmark: Option<Benchmark>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated hours to monitor after registration.
    #[arg(long)]
    pub hours: Option<u64>,
    /// Simulated milliseconds per wall-clock millisecond.
    #[arg(long, conflicts_with = "unpaced")]
    pub compression: Option<f64>,
    /// Advance the simulated clock as fast as possible.
    #[arg(long)]
    pub unpaced: bool,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    Run {
        #[command(flatten)]
        run: RunOverrides,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Write the block log as newline-delimited JSON.
        #[arg(long)]
        ledger_log: Option<PathBuf>,
        /// Write the final contract state as canonical JSON.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Keep archive objects in this directory instead of memory.
        #[arg(long)]
        cas_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    Sink,
    Aggregator,
}

#[derive(Debug, Subcommand)]
pub enum NodeCommand {
    Run {
        #[arg(long, value_enum)]
        role: Role,
        #[command(flatten)]
        run: RunOverrides,
    },
}

#[derive(Debug, Subcommand)]
pub enum LedgerCommand {
    /// Print block and transaction counts plus contract state.
    Inspect {
        /// Block log to restore; a fresh genesis ledger when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CasCommand {
    /// List stored object hashes.
    Ls {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Register the benchmark fleet with one default policy per device.
    #[arg(long)]
    pub register: bool,
    #[command(flatten)]
    pub run: RunOverrides,
}

/// Failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(c) => c.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(context: &str) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

fn load_config(path: Option<&Path>, run: Option<&RunOverrides>) -> Result<RunConfig, CliError> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = run {
        if let Some(b) = o.benchmark {
            config.bench.benchmark = b;
        }
        if let Some(s) = o.seed {
            config.bench.seed = s;
        }
        if let Some(h) = o.hours {
            config.bench.duration = h * fogchain_core::ids::HOUR;
        }
        if let Some(c) = o.compression {
            config.deployment.compression = Some(c);
        }
        if o.unpaced {
            config.deployment.compression = None;
        }
    }
    config.validate()?;
    Ok(config)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(runtime(&path.display().to_string()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Bench(BenchCommand::Run { run, report, format, ledger_log, state, cas_dir }) => {
            let config = load_config(config_path, Some(&run))?;
            let cas = match &cas_dir {
                Some(d) => ContentStore::open_dir(d).map_err(|e| CliError::Runtime(e.to_string()))?,
                None => ContentStore::in_memory(),
            };
            let result = run_benchmark_with(&config, spawn_fleet(config.bench.benchmark, config.bench.seed), cas)?;
            if let Some(p) = &ledger_log {
                write_file(p, &result.block_log())?;
            }
            if let Some(p) = &state {
                write_file(p, &result.deployment.ledger().state_json())?;
            }
            emit_report(&result.report, format, report.as_deref())
        }
        Command::Node(NodeCommand::Run { role, run }) => {
            let config = load_config(config_path, Some(&run))?;
            let result = run_benchmark_with(
                &config,
                spawn_fleet(config.bench.benchmark, config.bench.seed),
                ContentStore::in_memory(),
            )?;
            print_json(&node_summary(&result, role))
        }
        Command::Ledger(LedgerCommand::Inspect { log }) => {
            let config = load_config(config_path, None)?;
            let ledger_config = config.deployment.ledger;
            let ledger = match &log {
                Some(p) => {
                    let f = File::open(p).map_err(runtime(&p.display().to_string()))?;
                    Ledger::restore(ledger_config, BufReader::new(f)).map_err(|e| CliError::Runtime(e.to_string()))?
                }
                None => Ledger::new(ledger_config).map_err(|e| CliError::Usage(e.to_string()))?,
            };
            let state: serde_json::Value = serde_json::from_slice(&ledger.state_json()).expect("state is json");
            let transactions: usize = ledger.blocks().iter().map(|b| b.txs.len()).sum();
            print_json(&json!({
                "blocks": ledger.block_count(),
                "height": ledger.height(),
                "transactions": transactions,
                "state": state,
            }))
        }
        Command::Cas(CasCommand::Ls { dir }) => {
            if !dir.is_dir() {
                return Err(CliError::Runtime(format!("{} is not a directory", dir.display())));
            }
            let store = ContentStore::open_dir(&dir).map_err(|e| CliError::Runtime(e.to_string()))?;
            let hashes = store.list().map_err(|e| CliError::Runtime(e.to_string()))?;
            let mut out = BufWriter::new(io::stdout().lock());
            for h in hashes {
                writeln!(out, "{h}").map_err(runtime("stdout"))?;
            }
            out.flush().map_err(runtime("stdout"))
        }
        Command::Report(ReportCommand::Render { input, format }) => {
            let f = File::open(&input).map_err(runtime(&input.display().to_string()))?;
            let report: BenchmarkReport = serde_json::from_reader(BufReader::new(f))
                .map_err(|e| CliError::Usage(format!("{}: not a benchmark report: {e}", input.display())))?;
            emit_report(&report, format, None)
        }
        Command::Serve(args) => {
            let config = load_config(config_path, Some(&args.run))?;
            serve(config, args)
        }
    }
}

fn emit_report(report: &BenchmarkReport, format: Format, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(runtime(&p.display().to_string()))?;
            render(report, format, BufWriter::new(f)).map_err(runtime(&p.display().to_string()))
        }
        None => render(report, format, io::stdout().lock()).map_err(runtime("stdout")),
    }
}

fn print_json(value: &serde_json::Value) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out).map_err(runtime("stdout"))
}

fn node_summary(run: &BenchRun, role: Role) -> serde_json::Value {
    let d = &run.deployment;
    let nodes: Vec<serde_json::Value> = match role {
        Role::Aggregator => d
            .aggregators()
            .iter()
            .enumerate()
            .map(|(i, a)| json!({ "node": i, "managed_devices": a.managed().len(), "failed_polls": a.diagnostics().len() }))
            .collect(),
        Role::Sink => d
            .sinks()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                json!({
                    "node": i,
                    "anchored_devices": s.last_anchored_window().len(),
                    "last_window": s.last_anchored_window().values().max(),
                })
            })
            .collect(),
    };
    json!({
        "role": format!("{role:?}").to_lowercase(),
        "benchmark": run.report.benchmark,
        "block_height": run.report.block_height,
        "archival_tx_count": run.report.archival_tx_count,
        "nodes": nodes,
    })
}

/// Drives the deployment in real time on a worker thread while the API
/// serves requests against the same ledger.
fn serve(config: RunConfig, args: ServeArgs) -> Result<(), CliError> {
    if config.deployment.compression.is_none() {
        return Err(CliError::Usage("serve needs a compression factor; the clock cannot run unpaced".into()));
    }
    let fleet = spawn_fleet(config.bench.benchmark, config.bench.seed);
    let mut deployment =
        Deployment::new(config.deployment.clone(), fleet.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let service = Arc::new(ApiService::new(deployment.shared().clone(), config.deployment.compression));
    service.set_benchmark(config.bench.benchmark.to_string());
    if args.register {
        register_fleet(&service, &mut deployment, &fleet, config.bench.polling_interval)?;
    }

    let step = config.deployment.block_interval;
    let driver = std::thread::spawn(move || -> Result<(), String> {
        loop {
            let next = deployment.now() + step;
            deployment.run_until(next).map_err(|e| e.to_string())?;
        }
    });
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime("tokio runtime"))?;
    rt.block_on(async {
        tokio::select! {
            r = fogchain_api::serve(service, args.addr) => r.map_err(runtime("server")),
            r = tokio::task::spawn_blocking(move || driver.join()) => match r {
                Ok(Ok(Err(e))) => Err(CliError::Runtime(format!("deployment stopped: {e}"))),
                _ => Err(CliError::Runtime("deployment driver exited".into())),
            },
        }
    })
}

fn register_fleet(
    service: &ApiService,
    deployment: &mut Deployment,
    fleet: &[fogchain_core::DeviceSpec],
    polling_interval: u64,
) -> Result<(), CliError> {
    let fail = |e: fogchain_api::ApiError| CliError::Runtime(e.to_string());
    for (i, spec) in fleet.iter().enumerate() {
        let body = serde_json::to_vec(&registration_for(i, spec, polling_interval)).expect("registration serializes");
        service.add_device(&body).map_err(fail)?;
    }
    deployment.settle().map_err(|e| CliError::Runtime(e.to_string()))?;
    let policy = serde_json::to_vec(&canonical::policy_rule()).expect("policy serializes");
    for spec in fleet {
        service.add_policy(&spec.device_id, &policy).map_err(fail)?;
    }
    deployment.settle().map_err(|e| CliError::Runtime(e.to_string()))
}
