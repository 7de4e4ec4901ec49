//! CSV output, one file per report type.

use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};

use super::pipeline::{analyze_file, read_events, Analysis};
use super::sets::{
    incoming_validation, overlap, reachable_coverage, subnet_concentration, AnalysisConfig, DailyEstimate, DayKey,
    IncomingValidationReport, OverlapReport, PeerSet, SubnetReport,
};

fn fmt_rate(r: Option<f64>) -> String {
    r.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_daily_csv(path: &Path, days: &[DailyEstimate]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["date", "m", "a", "p", "r", "u", "coverage"]).map_err(csv_err)?;
    for d in days {
        w.write_record([
            d.day.to_string(),
            d.m.len().to_string(),
            d.a.len().to_string(),
            d.p.len().to_string(),
            d.r.len().to_string(),
            d.u.len().to_string(),
            fmt_rate(reachable_coverage(d)),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_overlap_csv(path: &Path, rows: &[OverlapReport]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["date", "only_1", "both", "only_2", "ratio_1_in_2"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.day.to_string(),
            r.only_1.to_string(),
            r.both.to_string(),
            r.only_2.to_string(),
            fmt_rate(r.ratio_1_in_2),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_incoming_csv(path: &Path, rows: &[IncomingValidationReport]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["date", "i", "s", "h", "rate_all", "rate_unreachable", "rate_reachable"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.day.to_string(),
            r.i.len().to_string(),
            r.s.len().to_string(),
            r.h.len().to_string(),
            fmt_rate(r.rate_all),
            fmt_rate(r.rate_unreachable),
            fmt_rate(r.rate_reachable),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// Writes the per-day summary to `summary` and every bucket to `buckets`.
pub fn write_subnet_csv(summary: &Path, buckets: &Path, rows: &[SubnetReport]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(summary).map_err(csv_err)?;
    w.write_record(["date", "prefix_length", "a", "top_bucket", "top_share", "flagged"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.day.to_string(),
            r.prefix_length.to_string(),
            r.buckets.values().sum::<usize>().to_string(),
            r.top_bucket.clone().unwrap_or_default(),
            fmt_rate(r.top_share),
            r.flagged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(buckets).map_err(csv_err)?;
    w.write_record(["date", "bucket", "count"]).map_err(csv_err)?;
    for r in rows {
        for (bucket, count) in &r.buckets {
            w.write_record([r.day.to_string(), bucket.clone(), count.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()
}

/// Overlap per day over the union of both analyses' days.
pub fn overlap_by_day(first: &Analysis, second: &Analysis) -> Vec<OverlapReport> {
    let days: BTreeSet<DayKey> = first.days.iter().chain(&second.days).map(|d| d.day).collect();
    let empty = PeerSet::new();
    days.into_iter()
        .map(|day| {
            let a1 = first.day(day).map_or(&empty, |d| &d.a);
            let a2 = second.day(day).map_or(&empty, |d| &d.a);
            overlap(day, a1, a2)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub log: PathBuf,
    pub log2: Option<PathBuf>,
    pub inbound: Option<PathBuf>,
    pub out: PathBuf,
    pub subnet_prefix: u8,
    pub config: AnalysisConfig,
}

#[derive(Debug, Clone)]
pub struct AnalyzeSummary {
    pub primary: Analysis,
    pub secondary: Option<Analysis>,
    pub overlap: Vec<OverlapReport>,
    pub incoming: Vec<IncomingValidationReport>,
    pub subnet: Vec<SubnetReport>,
    pub malformed: u64,
}

/// Analyzes the logs named in `opts` and writes every applicable report
/// into `opts.out`.
pub fn run_analysis(opts: &AnalyzeOptions) -> io::Result<AnalyzeSummary> {
    std::fs::create_dir_all(&opts.out)?;
    let primary = analyze_file(&opts.log, opts.config.clone())?;
    let mut malformed = primary.malformed;
    write_daily_csv(&opts.out.join("daily.csv"), &primary.days)?;

    let subnet: Vec<SubnetReport> =
        primary.days.iter().map(|d| subnet_concentration(d.day, &d.a, opts.subnet_prefix)).collect();
    write_subnet_csv(&opts.out.join("subnet.csv"), &opts.out.join("subnet_buckets.csv"), &subnet)?;

    let mut secondary = None;
    let mut overlap_rows = Vec::new();
    if let Some(log2) = &opts.log2 {
        let second = analyze_file(log2, opts.config.clone())?;
        malformed += second.malformed;
        write_daily_csv(&opts.out.join("daily_2.csv"), &second.days)?;
        overlap_rows = overlap_by_day(&primary, &second);
        write_overlap_csv(&opts.out.join("overlap.csv"), &overlap_rows)?;
        secondary = Some(second);
    }

    let mut incoming = Vec::new();
    if let Some(inbound) = &opts.inbound {
        let (events, bad) = read_events(inbound)?;
        malformed += bad;
        incoming = incoming_validation(&events, &primary.days, opts.config.identity);
        write_incoming_csv(&opts.out.join("incoming.csv"), &incoming)?;
    }

    if malformed > 0 {
        log::warn!("skipped {malformed} malformed log lines");
    }
    Ok(AnalyzeSummary { primary, secondary, overlap: overlap_rows, incoming, subnet, malformed })
}
