use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use super::sets::{day_of, estimate, small_entries, AnalysisConfig, DailyEstimate, DayKey, PeerKey, PeerSet};
use crate::monitor::{EventKind, EventSink, LogReader, MonitorEvent, PeerAddr, SessionId};

#[derive(Debug, Default)]
struct DayAcc {
    m: PeerSet,
    a: PeerSet,
    p: PeerSet,
}

#[derive(Debug, Clone, Copy)]
struct Span {
    established_ms: i64,
    end_ms: Option<i64>,
    remote: PeerAddr,
}

/// Single-pass daily aggregation. Memory is bounded by the per-day sets
/// and one record per handshaken session.
#[derive(Debug)]
pub struct Analyzer {
    config: AnalysisConfig,
    days: BTreeMap<DayKey, DayAcc>,
    open: HashMap<SessionId, Span>,
    spans: Vec<Span>,
    events: u64,
    malformed: u64,
}

/// Output of one analyzed log.
#[derive(Debug, Clone)]
pub struct Analysis {
    /// One entry per calendar day from the first to the last event.
    pub days: Vec<DailyEstimate>,
    pub events: u64,
    pub malformed: u64,
}

impl Analysis {
    pub fn day(&self, day: DayKey) -> Option<&DailyEstimate> {
        self.days.binary_search_by_key(&day, |d| d.day).ok().map(|i| &self.days[i])
    }
}

impl Analyzer {
    pub fn new(config: AnalysisConfig) -> Self {
        Analyzer {
            config,
            days: BTreeMap::new(),
            open: HashMap::new(),
            spans: Vec::new(),
            events: 0,
            malformed: 0,
        }
    }

    pub fn push(&mut self, ev: &MonitorEvent) {
        self.events += 1;
        let identity = self.config.identity;
        let day = self.days.entry(day_of(ev.ts_ms)).or_default();
        match &ev.kind {
            EventKind::AddrReceived { entries, .. } => {
                day.m.extend(entries.iter().map(|e| PeerKey::new(identity, e.address, e.port)));
                day.a.extend(small_entries(ev, self.config.small_max).map(|p| PeerKey::of(identity, p)));
            }
            EventKind::VersionReceived { .. } => {
                day.p.insert(PeerKey::of(identity, ev.remote));
                self.open.entry(ev.session).or_insert(Span { established_ms: ev.ts_ms, end_ms: None, remote: ev.remote });
            }
            EventKind::ConnectOpened | EventKind::ConnectFailed { .. } | EventKind::Disconnected { .. } => {
                if let Some(mut span) = self.open.remove(&ev.session) {
                    span.end_ms = Some(ev.ts_ms);
                    self.spans.push(span);
                }
            }
            EventKind::GetaddrSent => {}
        }
    }

    pub fn note_malformed(&mut self) {
        self.malformed += 1;
    }

    pub fn finish(mut self) -> Analysis {
        let (Some(&first), Some(&last)) = (self.days.keys().next(), self.days.keys().next_back()) else {
            return Analysis { days: Vec::new(), events: self.events, malformed: self.malformed };
        };
        let mut day = first;
        while day < last {
            self.days.entry(day).or_default();
            day = day.succ_opt().expect("date in range");
        }
        let identity = self.config.identity;
        let mut spans = std::mem::take(&mut self.spans);
        spans.extend(self.open.drain().map(|(_, s)| s));
        for span in spans {
            let Some(from) = day_of(span.established_ms).succ_opt() else { continue };
            let to = span.end_ms.map_or(last, day_of).min(last);
            if from > to {
                continue;
            }
            let key = PeerKey::of(identity, span.remote);
            for (_, acc) in self.days.range_mut(from..=to) {
                acc.p.insert(key);
            }
        }
        let days = self.days.into_iter().map(|(day, acc)| estimate(day, acc.m, acc.a, acc.p)).collect();
        Analysis { days, events: self.events, malformed: self.malformed }
    }
}

impl EventSink for Analyzer {
    fn append(&mut self, event: &MonitorEvent) -> io::Result<()> {
        self.push(event);
        Ok(())
    }
}

pub fn analyze_reader<R: BufRead>(input: R, config: AnalysisConfig) -> io::Result<Analysis> {
    let mut analyzer = Analyzer::new(config);
    for item in LogReader::new(input) {
        match item? {
            Ok(ev) => analyzer.push(&ev),
            Err(bad) => {
                log::debug!("skipping line {}: {}", bad.line_no, bad.error);
                analyzer.note_malformed();
            }
        }
    }
    Ok(analyzer.finish())
}

pub fn analyze_file(path: &Path, config: AnalysisConfig) -> io::Result<Analysis> {
    analyze_reader(BufReader::new(File::open(path)?), config)
}

/// Reads a whole log into memory, returning the events and the number of
/// malformed lines skipped.
pub fn read_events(path: &Path) -> io::Result<(Vec<MonitorEvent>, u64)> {
    let mut events = Vec::new();
    let mut malformed = 0;
    for item in LogReader::new(BufReader::new(File::open(path)?)) {
        match item? {
            Ok(ev) => events.push(ev),
            Err(_) => malformed += 1,
        }
    }
    Ok((events, malformed))
}
