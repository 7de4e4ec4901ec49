//! Ground-truth simulator of ADDR gossip with modeled monitors, plus the
//! evaluation of the daily estimates against what the simulator knows.

mod churn;
mod config;
mod engine;
mod truth;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use churn::{announce_schedule, SessionLengths};
pub use config::{
    calibrated_session_lengths, ChurnConfig, ChurnKind, HumanDuration, LengthShape, MixtureComponent, SimConfig,
};
pub use engine::{
    relay_allowed, run, LinkKind, PeerRecord, Role, SimOutcome, SimSinks, SimStats, Simulation, TrackedPeer, DAY_MS,
    SIM_EPOCH_MS, SIM_PORT,
};
pub use truth::{evaluate, ground_truth, useless_addresses, RecallRow, TruthDay};

use crate::analysis::{day_of, run_analysis, AnalysisConfig, AnalyzeOptions, AnalyzeSummary};
use crate::monitor::{EventSink, JsonLogWriter};
use truth::PeerRow;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("infeasible topology: {0}")]
    InfeasibleTopology(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed simulation output: {0}")]
    Output(String),
}

pub const CONFIG_FILE: &str = "config.toml";
pub const PEERS_FILE: &str = "peers.csv";
pub const TRACKED_FILE: &str = "tracked.csv";
pub const STATS_FILE: &str = "stats.json";
pub const VALIDATION_LOG: &str = "validation.log";

pub fn monitor_log_name(index: usize) -> String {
    format!("monitor-{}.log", index + 1)
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Output(e.to_string())
}

/// Runs a simulation and writes its logs, ground truth and counters into
/// `out`.
pub fn simulate_to_dir(config: &SimConfig, out: &Path) -> Result<SimOutcome, SimError> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_FILE), config.to_toml_string())?;
    let mut monitor_logs: Vec<JsonLogWriter<BufWriter<File>>> = (0..config.monitors)
        .map(|i| File::create(out.join(monitor_log_name(i))).map(|f| JsonLogWriter::new(BufWriter::new(f))))
        .collect::<io::Result<_>>()?;
    let mut validation_log = if config.validation_peer {
        Some(JsonLogWriter::new(BufWriter::new(File::create(out.join(VALIDATION_LOG))?)))
    } else {
        None
    };
    let sinks = SimSinks {
        monitors: monitor_logs.iter_mut().map(|w| Box::new(w) as Box<dyn EventSink + '_>).collect(),
        validation: validation_log.as_mut().map(|w| Box::new(w) as Box<dyn EventSink + '_>),
    };
    let outcome = run(config, sinks)?;
    for w in &mut monitor_logs {
        w.flush()?;
    }
    if let Some(w) = &mut validation_log {
        w.flush()?;
    }

    let mut w = csv::Writer::from_path(out.join(PEERS_FILE)).map_err(csv_err)?;
    for p in &outcome.peers {
        w.serialize(PeerRow::from(p)).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join(TRACKED_FILE)).map_err(csv_err)?;
    w.write_record(["date", "address", "port", "emissions"]).map_err(csv_err)?;
    if let Some(t) = &outcome.tracked {
        for (d, count) in t.emissions.iter().enumerate() {
            let date = day_of(SIM_EPOCH_MS + d as i64 * DAY_MS);
            w.write_record([date.to_string(), t.address.to_string(), t.port.to_string(), count.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut f = BufWriter::new(File::create(out.join(STATS_FILE))?);
    serde_json::to_writer_pretty(&mut f, &outcome.stats).map_err(|e| SimError::Output(e.to_string()))?;
    writeln!(f)?;
    f.flush()?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub analysis: AnalyzeSummary,
    pub recall: Vec<RecallRow>,
}

fn read_peers(path: &Path) -> Result<Vec<PeerRecord>, SimError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize::<PeerRow>().map(|row| row.map(PeerRecord::from).map_err(csv_err)).collect()
}

fn read_tracked(path: &Path) -> Result<Option<TrackedPeer>, SimError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut tracked: Option<TrackedPeer> = None;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).ok_or_else(|| SimError::Output(format!("{TRACKED_FILE}: missing column {i}")));
        let parse_err = |e: String| SimError::Output(format!("{TRACKED_FILE}: {e}"));
        let address = field(1)?.parse().map_err(|e: std::net::AddrParseError| parse_err(e.to_string()))?;
        let port = field(2)?.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
        let count = field(3)?.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
        tracked.get_or_insert_with(|| TrackedPeer { address, port, emissions: Vec::new() }).emissions.push(count);
    }
    Ok(tracked)
}

/// Analyzes a simulation directory exactly as a live log would be analyzed
/// and scores the result against the ground truth. Writes the analysis CSVs
/// and recall.csv into `out`.
pub fn evaluate_dir(sim_dir: &Path, out: &Path) -> Result<EvaluateSummary, SimError> {
    let config = SimConfig::from_toml_str(&std::fs::read_to_string(sim_dir.join(CONFIG_FILE))?)?;
    let existing = |name: String| -> Option<PathBuf> {
        let p = sim_dir.join(name);
        p.exists().then_some(p)
    };
    let analysis_config = AnalysisConfig::default();
    let opts = AnalyzeOptions {
        log: sim_dir.join(monitor_log_name(0)),
        log2: existing(monitor_log_name(1)),
        inbound: existing(VALIDATION_LOG.to_owned()),
        out: out.to_path_buf(),
        subnet_prefix: 8,
        config: analysis_config.clone(),
    };
    let analysis = run_analysis(&opts)?;
    let peers = read_peers(&sim_dir.join(PEERS_FILE))?;
    let tracked = read_tracked(&sim_dir.join(TRACKED_FILE))?;
    let truth = ground_truth(&peers, config.duration_days, analysis_config.identity);
    let recall = evaluate(&analysis.primary, &truth, &peers, tracked.as_ref(), analysis_config.identity);
    let mut w = csv::Writer::from_path(out.join("recall.csv")).map_err(csv_err)?;
    for row in &recall {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(EvaluateSummary { analysis, recall })
}

/// Simulate, analyze and evaluate in one go: `out/sim` holds the simulator
/// output and `out/eval` the reports.
pub fn end_to_end(config: &SimConfig, out: &Path) -> Result<EvaluateSummary, SimError> {
    let sim_dir = out.join("sim");
    simulate_to_dir(config, &sim_dir)?;
    evaluate_dir(&sim_dir, &out.join("eval"))
}
