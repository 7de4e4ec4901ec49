//! The append-only event log.
//!
//! One JSON object per line:
//!
//! ```text
//! {"ts_ms":1577836800123,"session":7,"remote_addr":"203.0.114.9","remote_port":8333,
//!  "kind":"addr_received","entry_count":1,
//!  "entries":[{"time":1577836790,"services":1033,"addr":"198.51.101.4","port":8333}],
//!  "solicited_hint":false}
//! ```
//!
//! `kind` is one of `connect_opened`, `connect_failed`, `disconnected`,
//! `version_received`, `addr_received`, `getaddr_sent`.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{AddrEntry, NetworkAddress, ServiceFlags};

pub type SessionId = u64;

/// An address together with its port.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PeerAddr {
    pub address: NetworkAddress,
    pub port: u16,
}

impl PeerAddr {
    pub fn new(address: NetworkAddress, port: u16) -> Self {
        PeerAddr { address, port }
    }

    pub fn socket_addr(&self) -> std::net::SocketAddr {
        self.address.socket_addr(self.port)
    }
}

impl fmt::Display for PeerAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.address.socket_addr(self.port).fmt(f)
    }
}

impl fmt::Debug for PeerAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PeerAddr({self})")
    }
}

impl FromStr for PeerAddr {
    type Err = std::net::AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let sa: std::net::SocketAddr = s.parse()?;
        Ok(PeerAddr::new(sa.ip().into(), sa.port()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitorEvent {
    /// Wall clock at observation, Unix milliseconds.
    pub ts_ms: i64,
    pub session: SessionId,
    pub remote: PeerAddr,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    ConnectOpened,
    ConnectFailed { reason: Option<String> },
    Disconnected { reason: Option<String> },
    VersionReceived { version: i32, services: ServiceFlags, user_agent: String },
    AddrReceived { entries: Vec<AddrEntry>, solicited_hint: bool },
    GetaddrSent,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::ConnectOpened => "connect_opened",
            EventKind::ConnectFailed { .. } => "connect_failed",
            EventKind::Disconnected { .. } => "disconnected",
            EventKind::VersionReceived { .. } => "version_received",
            EventKind::AddrReceived { .. } => "addr_received",
            EventKind::GetaddrSent => "getaddr_sent",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    time: u32,
    services: u64,
    addr: NetworkAddress,
    port: u16,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum KindRecord {
    ConnectOpened,
    ConnectFailed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    Disconnected {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    VersionReceived {
        version: i32,
        services: u64,
        user_agent: String,
    },
    AddrReceived {
        entry_count: usize,
        entries: Vec<EntryRecord>,
        solicited_hint: bool,
    },
    GetaddrSent,
}

#[derive(Serialize, Deserialize)]
struct Record {
    ts_ms: i64,
    session: u64,
    remote_addr: NetworkAddress,
    remote_port: u16,
    #[serde(flatten)]
    kind: KindRecord,
}

impl From<&MonitorEvent> for Record {
    fn from(ev: &MonitorEvent) -> Self {
        let kind = match &ev.kind {
            EventKind::ConnectOpened => KindRecord::ConnectOpened,
            EventKind::ConnectFailed { reason } => KindRecord::ConnectFailed { reason: reason.clone() },
            EventKind::Disconnected { reason } => KindRecord::Disconnected { reason: reason.clone() },
            EventKind::VersionReceived { version, services, user_agent } => KindRecord::VersionReceived {
                version: *version,
                services: services.0,
                user_agent: user_agent.clone(),
            },
            EventKind::AddrReceived { entries, solicited_hint } => KindRecord::AddrReceived {
                entry_count: entries.len(),
                entries: entries
                    .iter()
                    .map(|e| EntryRecord { time: e.timestamp, services: e.services.0, addr: e.address, port: e.port })
                    .collect(),
                solicited_hint: *solicited_hint,
            },
            EventKind::GetaddrSent => KindRecord::GetaddrSent,
        };
        Record {
            ts_ms: ev.ts_ms,
            session: ev.session,
            remote_addr: ev.remote.address,
            remote_port: ev.remote.port,
            kind,
        }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("invalid JSON record: {0}")]
    Json(#[from] serde_json::Error),
    #[error("entry_count {declared} does not match {actual} entries")]
    EntryCountMismatch { declared: usize, actual: usize },
}

impl TryFrom<Record> for MonitorEvent {
    type Error = RecordError;

    fn try_from(r: Record) -> Result<Self, RecordError> {
        let kind = match r.kind {
            KindRecord::ConnectOpened => EventKind::ConnectOpened,
            KindRecord::ConnectFailed { reason } => EventKind::ConnectFailed { reason },
            KindRecord::Disconnected { reason } => EventKind::Disconnected { reason },
            KindRecord::VersionReceived { version, services, user_agent } => {
                EventKind::VersionReceived { version, services: ServiceFlags(services), user_agent }
            }
            KindRecord::AddrReceived { entry_count, entries, solicited_hint } => {
                if entry_count != entries.len() {
                    return Err(RecordError::EntryCountMismatch { declared: entry_count, actual: entries.len() });
                }
                EventKind::AddrReceived {
                    entries: entries
                        .into_iter()
                        .map(|e| AddrEntry {
                            timestamp: e.time,
                            services: ServiceFlags(e.services),
                            address: e.addr,
                            port: e.port,
                        })
                        .collect(),
                    solicited_hint,
                }
            }
            KindRecord::GetaddrSent => EventKind::GetaddrSent,
        };
        Ok(MonitorEvent { ts_ms: r.ts_ms, session: r.session, remote: PeerAddr::new(r.remote_addr, r.remote_port), kind })
    }
}

/// Renders one event as a single JSON line (without the trailing newline).
pub fn to_json_line(event: &MonitorEvent) -> String {
    serde_json::to_string(&Record::from(event)).expect("records always serialize")
}

pub fn parse_json_line(line: &str) -> Result<MonitorEvent, RecordError> {
    let record: Record = serde_json::from_str(line)?;
    MonitorEvent::try_from(record)
}

/// Destination for monitor events. Appends happen in the authoritative
/// event order.
pub trait EventSink {
    fn append(&mut self, event: &MonitorEvent) -> io::Result<()>;
}

impl EventSink for Vec<MonitorEvent> {
    fn append(&mut self, event: &MonitorEvent) -> io::Result<()> {
        self.push(event.clone());
        Ok(())
    }
}

impl<S: EventSink + ?Sized> EventSink for &mut S {
    fn append(&mut self, event: &MonitorEvent) -> io::Result<()> {
        (**self).append(event)
    }
}

impl<S: EventSink + ?Sized> EventSink for Box<S> {
    fn append(&mut self, event: &MonitorEvent) -> io::Result<()> {
        (**self).append(event)
    }
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn append(&mut self, _: &MonitorEvent) -> io::Result<()> {
        Ok(())
    }
}

/// Feeds every event to two sinks.
pub struct Tee<A, B>(pub A, pub B);

impl<A: EventSink, B: EventSink> EventSink for Tee<A, B> {
    fn append(&mut self, event: &MonitorEvent) -> io::Result<()> {
        self.0.append(event)?;
        self.1.append(event)
    }
}

/// Newline-delimited JSON writer. Wrap the writer in a `LineWriter` to get
/// each record onto disk before the monitor acts on it.
pub struct JsonLogWriter<W: Write> {
    out: W,
}

impl<W: Write> JsonLogWriter<W> {
    pub fn new(out: W) -> Self {
        JsonLogWriter { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

impl<W: Write> EventSink for JsonLogWriter<W> {
    fn append(&mut self, event: &MonitorEvent) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &Record::from(event)).map_err(io::Error::other)?;
        self.out.write_all(b"\n")
    }
}

/// A line that could not be parsed; skipped by readers.
#[derive(Debug)]
pub struct MalformedRecord {
    pub line_no: usize,
    pub error: String,
}

/// Iterates the events of a log, yielding malformed lines as errors
/// instead of aborting. Blank lines are ignored.
pub struct LogReader<R> {
    input: R,
    line: Vec<u8>,
    line_no: usize,
}

impl<R: BufRead> LogReader<R> {
    pub fn new(input: R) -> Self {
        LogReader { input, line: Vec::new(), line_no: 0 }
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = io::Result<Result<MonitorEvent, MalformedRecord>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line.clear();
            match self.input.read_until(b'\n', &mut self.line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e)),
            }
            self.line_no += 1;
            let Ok(text) = std::str::from_utf8(&self.line) else {
                return Some(Ok(Err(MalformedRecord { line_no: self.line_no, error: "invalid UTF-8".into() })));
            };
            let text = text.trim();
            if text.is_empty() {
                continue;
            }
            return Some(Ok(parse_json_line(text)
                .map_err(|e| MalformedRecord { line_no: self.line_no, error: e.to_string() })));
        }
    }
}
