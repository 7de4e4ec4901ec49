use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, NaiveDate};
use serde::Serialize;

use crate::codec::{has_useful_services, AddressKind, NetworkAddress};
use crate::monitor::{EventKind, MonitorEvent, PeerAddr, SessionId};

/// Calendar day in UTC.
pub type DayKey = NaiveDate;

pub fn day_of(ts_ms: i64) -> DayKey {
    DateTime::from_timestamp_millis(ts_ms).expect("timestamp within chrono range").date_naive()
}

pub fn day_start_ms(day: DayKey) -> i64 {
    day.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp_millis()
}

/// How peers are identified when building and joining sets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Identity {
    /// One peer per IP address; the port is ignored everywhere.
    #[default]
    AddressOnly,
    AddressAndPort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PeerKey {
    pub address: NetworkAddress,
    pub port: Option<u16>,
}

impl PeerKey {
    pub fn new(identity: Identity, address: NetworkAddress, port: u16) -> Self {
        match identity {
            Identity::AddressOnly => PeerKey { address, port: None },
            Identity::AddressAndPort => PeerKey { address, port: Some(port) },
        }
    }

    pub fn of(identity: Identity, peer: PeerAddr) -> Self {
        Self::new(identity, peer.address, peer.port)
    }
}

impl fmt::Display for PeerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.port {
            Some(port) => self.address.socket_addr(port).fmt(f),
            None => self.address.fmt(f),
        }
    }
}

pub type PeerSet = BTreeSet<PeerKey>;

/// Tunables of the daily pipeline.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub identity: Identity,
    /// ADDR messages with at most this many entries count as small.
    pub small_max: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { identity: Identity::AddressOnly, small_max: crate::monitor::SMALL_ADDR_MAX }
    }
}

/// Whether an ADDR message feeds A, and which of its entries do.
pub(crate) fn small_entries<'a>(
    event: &'a MonitorEvent,
    small_max: usize,
) -> impl Iterator<Item = PeerAddr> + 'a {
    let entries = match &event.kind {
        EventKind::AddrReceived { entries, solicited_hint } if !solicited_hint && entries.len() <= small_max => {
            &entries[..]
        }
        _ => &[][..],
    };
    entries
        .iter()
        .map(|e| PeerAddr::new(e.address, e.port))
        .filter(move |p| *p != event.remote)
}

/// A for one day: entries of small, unsolicited ADDR messages, minus
/// entries naming the sending session's own address and port.
pub fn compute_a(day_events: &[MonitorEvent], config: &AnalysisConfig) -> PeerSet {
    day_events
        .iter()
        .flat_map(|ev| small_entries(ev, config.small_max))
        .map(|p| PeerKey::of(config.identity, p))
        .collect()
}

/// M for one day: every address in every ADDR message.
pub fn compute_m(day_events: &[MonitorEvent], identity: Identity) -> PeerSet {
    let mut m = PeerSet::new();
    for ev in day_events {
        if let EventKind::AddrReceived { entries, .. } = &ev.kind {
            m.extend(entries.iter().map(|e| PeerKey::new(identity, e.address, e.port)));
        }
    }
    m
}

/// P for one day: carryover sessions plus sessions whose VERSION arrived
/// during the day.
pub fn compute_p(day_events: &[MonitorEvent], carryover: &[PeerAddr], identity: Identity) -> PeerSet {
    let mut p: PeerSet = carryover.iter().map(|&r| PeerKey::of(identity, r)).collect();
    for ev in day_events {
        if matches!(ev.kind, EventKind::VersionReceived { .. }) {
            p.insert(PeerKey::of(identity, ev.remote));
        }
    }
    p
}

/// Sessions whose VERSION arrived before `day` and that were still open at
/// its first millisecond. Sessions never closed in the log stay open.
pub fn carryover_sessions(events: &[MonitorEvent], day: DayKey) -> Vec<PeerAddr> {
    let start = day_start_ms(day);
    let mut open: BTreeMap<SessionId, PeerAddr> = BTreeMap::new();
    for ev in events.iter().filter(|e| e.ts_ms < start) {
        match ev.kind {
            EventKind::VersionReceived { .. } => {
                open.insert(ev.session, ev.remote);
            }
            EventKind::Disconnected { .. } | EventKind::ConnectFailed { .. } | EventKind::ConnectOpened => {
                open.remove(&ev.session);
            }
            _ => {}
        }
    }
    open.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyEstimate {
    pub day: DayKey,
    pub m: PeerSet,
    pub a: PeerSet,
    pub p: PeerSet,
    pub r: PeerSet,
    pub u: PeerSet,
}

pub fn estimate(day: DayKey, m: PeerSet, a: PeerSet, p: PeerSet) -> DailyEstimate {
    let r = a.intersection(&p).copied().collect();
    let u = a.difference(&p).copied().collect();
    DailyEstimate { day, m, a, p, r, u }
}

/// |R| / |P|, absent when no reachable peer was connected.
pub fn reachable_coverage(est: &DailyEstimate) -> Option<f64> {
    ratio(est.r.len(), est.p.len())
}

pub(crate) fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    pub day: DayKey,
    pub only_1: usize,
    pub both: usize,
    pub only_2: usize,
    /// Fraction of monitor 1's addresses also seen by monitor 2.
    pub ratio_1_in_2: Option<f64>,
}

pub fn overlap(day: DayKey, a1: &PeerSet, a2: &PeerSet) -> OverlapReport {
    let both = a1.intersection(a2).count();
    let only_1 = a1.len() - both;
    let only_2 = a2.len() - both;
    OverlapReport { day, only_1, both, only_2, ratio_1_in_2: ratio(both, both + only_1) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncomingValidationReport {
    pub day: DayKey,
    pub i: PeerSet,
    pub s: PeerSet,
    pub h: PeerSet,
    pub rate_all: Option<f64>,
    pub rate_unreachable: Option<f64>,
    pub rate_reachable: Option<f64>,
}

/// Checks a listening peer's inbound sessions against the daily A and P.
///
/// A session belongs to the day its connection opened (or, lacking a
/// ConnectOpened record, the day its VERSION arrived). Its services are
/// those of its VERSION message.
pub fn incoming_validation(
    inbound: &[MonitorEvent],
    estimates: &[DailyEstimate],
    identity: Identity,
) -> Vec<IncomingValidationReport> {
    let mut sessions: BTreeMap<SessionId, (DayKey, PeerAddr, bool)> = BTreeMap::new();
    for ev in inbound {
        match &ev.kind {
            EventKind::ConnectOpened => {
                sessions.insert(ev.session, (day_of(ev.ts_ms), ev.remote, false));
            }
            EventKind::VersionReceived { services, .. } => {
                let s = sessions.entry(ev.session).or_insert((day_of(ev.ts_ms), ev.remote, false));
                s.2 |= has_useful_services(*services);
            }
            _ => {}
        }
    }
    let mut by_day: BTreeMap<DayKey, (PeerSet, PeerSet)> = BTreeMap::new();
    for (day, remote, useful) in sessions.into_values() {
        let key = PeerKey::of(identity, remote);
        let (i, s) = by_day.entry(day).or_default();
        i.insert(key);
        if useful {
            s.insert(key);
        }
    }
    let empty = PeerSet::new();
    let est_by_day: BTreeMap<DayKey, &DailyEstimate> = estimates.iter().map(|e| (e.day, e)).collect();
    by_day
        .into_iter()
        .map(|(day, (i, s))| {
            let (a, p) = est_by_day.get(&day).map_or((&empty, &empty), |e| (&e.a, &e.p));
            let h: PeerSet = s.intersection(a).copied().collect();
            let h_reach = h.iter().filter(|k| p.contains(k)).count();
            let s_reach = s.iter().filter(|k| p.contains(k)).count();
            IncomingValidationReport {
                day,
                rate_all: ratio(h.len(), s.len()),
                rate_unreachable: ratio(h.len() - h_reach, s.len() - s_reach),
                rate_reachable: ratio(h_reach, s_reach),
                i,
                s,
                h,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubnetReport {
    pub day: DayKey,
    pub prefix_length: u8,
    /// IPv4 buckets use `prefix_length`; IPv6 addresses are grouped by /32.
    pub buckets: BTreeMap<String, usize>,
    pub top_bucket: Option<String>,
    pub top_share: Option<f64>,
    pub flagged: bool,
}

/// Share of the largest bucket at or above which a day is flagged.
pub const SUBNET_FLAG_THRESHOLD: f64 = 0.5;

pub fn subnet_bucket(address: &NetworkAddress, prefix_length: u8) -> String {
    match (address.kind(), address.to_ipv4()) {
        (AddressKind::Ipv4, Some(v4)) => {
            let bits = u32::from(v4);
            let mask = if prefix_length == 0 { 0 } else { u32::MAX << (32 - u32::from(prefix_length.min(32))) };
            format!("{}/{}", std::net::Ipv4Addr::from(bits & mask), prefix_length)
        }
        _ => {
            let b = address.bytes();
            let net = std::net::Ipv6Addr::from(u128::from_be_bytes(*b) & (u128::MAX << 96));
            format!("{net}/32")
        }
    }
}

pub fn subnet_concentration(day: DayKey, a: &PeerSet, prefix_length: u8) -> SubnetReport {
    let mut buckets: BTreeMap<String, usize> = BTreeMap::new();
    for key in a {
        *buckets.entry(subnet_bucket(&key.address, prefix_length)).or_default() += 1;
    }
    // Ties resolve to the smallest bucket name.
    let top = buckets.iter().fold(None::<(&String, usize)>, |best, (k, &v)| match best {
        Some((_, bv)) if bv >= v => best,
        _ => Some((k, v)),
    });
    let top_share = top.and_then(|(_, v)| ratio(v, a.len()));
    SubnetReport {
        day,
        prefix_length,
        top_bucket: top.map(|(k, _)| k.clone()),
        flagged: top_share.is_some_and(|s| s >= SUBNET_FLAG_THRESHOLD),
        top_share,
        buckets,
    }
}

/// Groups events by the UTC day of their timestamp, keeping log order.
pub fn bucket_events<I: IntoIterator<Item = MonitorEvent>>(events: I) -> BTreeMap<DayKey, Vec<MonitorEvent>> {
    let mut out: BTreeMap<DayKey, Vec<MonitorEvent>> = BTreeMap::new();
    for ev in events {
        out.entry(day_of(ev.ts_ms)).or_default().push(ev);
    }
    out
}
