//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
//! Diagnostics go to stderr; all data goes to files.

use std::error::Error;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{run_analysis, AnalysisConfig, AnalyzeOptions};
use crate::codec::MAINNET_MAGIC;
use crate::monitor::{run_monitor, MonitorConfig, PeerAddr};
use crate::sim::{evaluate_dir, monitor_log_name, simulate_to_dir, SimConfig, CONFIG_FILE};

type CliResult<T> = Result<T, Box<dyn Error>>;

pub const LOG_LEVEL_ENV: &str = "ADDRSCOPE_LOG_LEVEL";

#[derive(Debug, Parser)]
#[command(name = "addrscope", version, about = "Passive ADDR monitor, daily peer-set analysis and gossip simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Connect to reachable peers and log every ADDR message received.
    Monitor(MonitorArgs),
    /// Turn monitor logs into daily CSV reports.
    Analyze(AnalyzeArgs),
    /// Run a gossip simulation with modeled monitors and ground truth.
    Simulate(SimulateArgs),
    /// Analyze a simulation directory and score it against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// File with one seed address per line (ip, ip:port or [ipv6]:port).
    #[arg(long)]
    pub seeds: PathBuf,
    /// Event log, appended to.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value = "120s")]
    pub getaddr_interval: humantime::Duration,
    /// Minimum time between connection attempts to one address.
    #[arg(long, default_value = "6h")]
    pub reconnect_limit: humantime::Duration,
    /// Network magic as 8 hex digits (default: mainnet f9beb4d9).
    #[arg(long, value_parser = parse_magic)]
    pub magic: Option<[u8; 4]>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Log of a second monitor, for the overlap report.
    #[arg(long)]
    pub log2: Option<PathBuf>,
    /// Inbound-connection log of a listening validation peer.
    #[arg(long)]
    pub inbound: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// IPv4 prefix length for the subnet report.
    #[arg(long, default_value_t = 8, value_parser = parse_prefix)]
    pub subnet_prefix: u8,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML simulation config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output directory of `simulate`.
    #[arg(long)]
    pub sim: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_prefix(s: &str) -> Result<u8, String> {
    match s.parse::<u8>() {
        Ok(p @ (8 | 16 | 24)) => Ok(p),
        _ => Err("expected 8, 16 or 24".into()),
    }
}

fn parse_magic(s: &str) -> Result<[u8; 4], String> {
    let s = s.strip_prefix("0x").unwrap_or(s);
    if s.len() != 8 {
        return Err("expected 8 hex digits".into());
    }
    u32::from_str_radix(s, 16).map(u32::to_be_bytes).map_err(|e| e.to_string())
}

/// Parses a seed file: one address per line, `#` starts a comment.
/// Addresses without a port get 8333.
pub fn parse_seeds(text: &str) -> Result<Vec<PeerAddr>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .parse::<PeerAddr>()
            .or_else(|_| line.parse::<std::net::IpAddr>().map(|ip| PeerAddr::new(ip.into(), 8333)))
            .map_err(|_| format!("line {}: not an address: {line:?}", i + 1))?;
        out.push(parsed);
    }
    Ok(out)
}

fn require_file(path: &Path) -> CliResult<()> {
    if !path.is_file() {
        return Err(format!("{}: no such file", path.display()).into());
    }
    Ok(())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_LEVEL_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Monitor(args) => monitor(args),
        Command::Analyze(args) => analyze(args),
        Command::Simulate(args) => simulate(args),
        Command::Evaluate(args) => evaluate(args),
    }
}

fn monitor(args: MonitorArgs) -> CliResult<()> {
    require_file(&args.seeds)?;
    if let Some(parent) = args.log.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(format!("{}: log directory does not exist", parent.display()).into());
        }
    }
    let seeds = parse_seeds(&std::fs::read_to_string(&args.seeds)?)?;
    let config = MonitorConfig {
        getaddr_interval: args.getaddr_interval.into(),
        reconnect_rate_limit: args.reconnect_limit.into(),
        seed_addresses: seeds,
        log_path: args.log,
        magic: args.magic.unwrap_or(MAINNET_MAGIC),
        ..Default::default()
    };
    config.validate()?;
    log::info!("monitoring {} seeds, logging to {}", config.seed_addresses.len(), config.log_path.display());
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(run_monitor(config))?;
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> CliResult<()> {
    require_file(&args.log)?;
    for p in args.log2.iter().chain(&args.inbound) {
        require_file(p)?;
    }
    let summary = run_analysis(&AnalyzeOptions {
        log: args.log,
        log2: args.log2,
        inbound: args.inbound,
        out: args.out,
        subnet_prefix: args.subnet_prefix,
        config: AnalysisConfig::default(),
    })?;
    log::info!(
        "analyzed {} events over {} days ({} malformed lines skipped)",
        summary.primary.events,
        summary.primary.days.len(),
        summary.malformed
    );
    Ok(())
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    require_file(&args.config)?;
    let mut config = SimConfig::from_toml_str(&std::fs::read_to_string(&args.config)?)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let outcome = simulate_to_dir(&config, &args.out)?;
    log::info!(
        "simulated {} days: {} announcements, {} deliveries, {} stale",
        outcome.days,
        outcome.stats.announcements,
        outcome.stats.deliveries,
        outcome.stats.stale_deliveries
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    require_file(&args.sim.join(CONFIG_FILE))?;
    require_file(&args.sim.join(monitor_log_name(0)))?;
    let summary = evaluate_dir(&args.sim, &args.out)?;
    let mean = |f: fn(&crate::sim::RecallRow) -> Option<f64>| {
        let v: Vec<f64> = summary.recall.iter().skip(1).filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    log::info!(
        "mean recall after day 1: reachable {:?}, unreachable useful {:?}",
        mean(|r| r.recall_reachable),
        mean(|r| r.recall_unreachable_useful)
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_file_formats() {
        let seeds = parse_seeds("# seeds\n1.2.3.4\n5.6.7.8:18333  # testnet\n\n[2001:db8::1]:8333\n").unwrap();
        assert_eq!(seeds.len(), 3);
        assert_eq!(seeds[0].port, 8333);
        assert_eq!(seeds[1].port, 18333);
        assert!(parse_seeds("nonsense").is_err());
    }

    #[test]
    fn magic_parsing() {
        assert_eq!(parse_magic("f9beb4d9").unwrap(), MAINNET_MAGIC);
        assert_eq!(parse_magic("0x0b110907").unwrap(), [0x0b, 0x11, 0x09, 0x07]);
        assert!(parse_magic("f9beb4").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["addrscope", "analyze", "--bogus"]), 1);
        assert_eq!(main_with_args(["addrscope"]), 1);
        assert_eq!(main_with_args(["addrscope", "--help"]), 0);
    }
}
