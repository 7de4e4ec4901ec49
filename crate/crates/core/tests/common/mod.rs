//! Random monitor logs and a brute-force recomputation of the daily sets,
//! written directly from the set definitions without the library's helpers.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use addrscope::analysis::{Identity, PeerKey};
use addrscope::codec::{AddrEntry, CommandName, Message, NetworkAddress, PeerEndpoint, ServiceFlags, VersionMessage};
use addrscope::monitor::{EventKind, MonitorEvent, PeerAddr};
use chrono::{DateTime, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DAY: i64 = 86_400_000;
/// 2021-03-01T00:00:00Z.
pub const BASE_MS: i64 = 1_614_556_800_000;

pub fn date(ts_ms: i64) -> NaiveDate {
    DateTime::from_timestamp_millis(ts_ms).unwrap().date_naive()
}

pub fn midnight(d: NaiveDate) -> i64 {
    d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp_millis()
}

fn pool_addr(i: u32) -> PeerAddr {
    let ip = Ipv4Addr::from(0x2d00_0000 + (i % 7) * 0x0001_0000 + i);
    let port = if i.is_multiple_of(5) { 18333 } else { 8333 };
    PeerAddr::new(NetworkAddress::from_ipv4(ip), port)
}

const USEFUL: u64 = 1 | 8;

/// A time-ordered log of independent sessions spread over a few days.
/// Addresses come from a small pool so sets overlap heavily; some sessions
/// close exactly at midnight and some never close.
pub fn random_log(seed: u64, max_events: usize) -> Vec<MonitorEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = rng.random_range(5..60u32);
    let span_days = rng.random_range(1..5i64);
    let mut tagged: Vec<(i64, usize, MonitorEvent)> = Vec::new();
    let mut session = 0u64;
    while tagged.len() < max_events {
        session += 1;
        let remote = pool_addr(rng.random_range(0..pool));
        let mut t = BASE_MS + rng.random_range(0..span_days * DAY);
        let push = |t: i64, kind: EventKind, tagged: &mut Vec<_>| {
            let n = tagged.len();
            tagged.push((t, n, MonitorEvent { ts_ms: t, session, remote, kind }));
        };
        push(t, EventKind::ConnectOpened, &mut tagged);
        if rng.random_bool(0.15) {
            t += rng.random_range(1..10_000);
            push(t, EventKind::ConnectFailed { reason: None }, &mut tagged);
            continue;
        }
        if rng.random_bool(0.9) {
            t += rng.random_range(1..5_000);
            let services = ServiceFlags(if rng.random_bool(0.7) { USEFUL } else { rng.random_range(0..4) });
            push(t, EventKind::VersionReceived { version: 70015, services, user_agent: String::new() }, &mut tagged);
        }
        for _ in 0..rng.random_range(0..6) {
            t += rng.random_range(1..DAY / 2);
            if rng.random_bool(0.2) {
                push(t, EventKind::GetaddrSent, &mut tagged);
            }
            let n = if rng.random_bool(0.85) { rng.random_range(0..=12) } else { rng.random_range(11..40) };
            let entries = (0..n)
                .map(|_| {
                    let p = if rng.random_bool(0.1) { remote } else { pool_addr(rng.random_range(0..pool)) };
                    AddrEntry {
                        timestamp: (t / 1000) as u32,
                        services: ServiceFlags(USEFUL),
                        address: p.address,
                        port: p.port,
                    }
                })
                .collect();
            push(t, EventKind::AddrReceived { entries, solicited_hint: rng.random_bool(0.1) }, &mut tagged);
        }
        match rng.random_range(0..10) {
            0..=5 => {
                t += rng.random_range(1..DAY);
                push(t, EventKind::Disconnected { reason: None }, &mut tagged);
            }
            6 => {
                let next = midnight(date(t)) + DAY;
                push(next, EventKind::Disconnected { reason: None }, &mut tagged);
            }
            _ => {}
        }
    }
    tagged.truncate(max_events);
    tagged.sort_by_key(|(t, n, _)| (*t, *n));
    tagged.into_iter().map(|(_, _, e)| e).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleDay {
    pub day: NaiveDate,
    pub m: BTreeSet<PeerKey>,
    pub a: BTreeSet<PeerKey>,
    pub p: BTreeSet<PeerKey>,
    pub r: BTreeSet<PeerKey>,
    pub u: BTreeSet<PeerKey>,
}

fn key(identity: Identity, p: PeerAddr) -> PeerKey {
    PeerKey::new(identity, p.address, p.port)
}

fn closes(kind: &EventKind) -> bool {
    matches!(kind, EventKind::ConnectOpened | EventKind::ConnectFailed { .. } | EventKind::Disconnected { .. })
}

/// Recomputes every daily set by scanning the whole log once per day.
pub fn oracle(events: &[MonitorEvent], identity: Identity, small_max: usize) -> Vec<OracleDay> {
    let (Some(first), Some(last)) = (events.iter().map(|e| e.ts_ms).min(), events.iter().map(|e| e.ts_ms).max())
    else {
        return Vec::new();
    };
    // For each VERSION, the time of the first later event that ends its session.
    let mut close_of: BTreeMap<usize, Option<i64>> = BTreeMap::new();
    let mut pending: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, ev) in events.iter().enumerate() {
        if matches!(ev.kind, EventKind::VersionReceived { .. }) {
            close_of.insert(i, None);
            pending.entry(ev.session).or_default().push(i);
        } else if closes(&ev.kind) {
            for v in pending.remove(&ev.session).unwrap_or_default() {
                close_of.insert(v, Some(ev.ts_ms));
            }
        }
    }
    let mut out = Vec::new();
    let mut d = date(first);
    while d <= date(last) {
        let start = midnight(d);
        let mut day = OracleDay {
            day: d,
            m: BTreeSet::new(),
            a: BTreeSet::new(),
            p: BTreeSet::new(),
            r: BTreeSet::new(),
            u: BTreeSet::new(),
        };
        for (i, ev) in events.iter().enumerate() {
            match &ev.kind {
                EventKind::AddrReceived { entries, solicited_hint } if date(ev.ts_ms) == d => {
                    for e in entries {
                        let p = PeerAddr::new(e.address, e.port);
                        day.m.insert(key(identity, p));
                        if !solicited_hint && entries.len() <= small_max && p != ev.remote {
                            day.a.insert(key(identity, p));
                        }
                    }
                }
                EventKind::VersionReceived { .. } => {
                    let today = date(ev.ts_ms) == d;
                    let carried = ev.ts_ms < start && close_of[&i].is_none_or(|c| c >= start);
                    if today || carried {
                        day.p.insert(key(identity, ev.remote));
                    }
                }
                _ => {}
            }
        }
        day.r = day.a.intersection(&day.p).copied().collect();
        day.u = day.a.difference(&day.p).copied().collect();
        out.push(day);
        d = d.succ_opt().unwrap();
    }
    out
}

pub type IncomingDay = (BTreeSet<PeerKey>, BTreeSet<PeerKey>, BTreeSet<PeerKey>);

/// I, S and H per day for a validation peer's inbound log.
pub fn oracle_incoming(
    inbound: &[MonitorEvent],
    days: &[OracleDay],
    identity: Identity,
) -> BTreeMap<NaiveDate, IncomingDay> {
    let mut sessions: BTreeMap<u64, Vec<&MonitorEvent>> = BTreeMap::new();
    for e in inbound {
        sessions.entry(e.session).or_default().push(e);
    }
    let mut out: BTreeMap<NaiveDate, IncomingDay> = BTreeMap::new();
    for evs in sessions.values() {
        let anchor = evs
            .iter()
            .rev()
            .find(|e| matches!(e.kind, EventKind::ConnectOpened))
            .or_else(|| evs.iter().find(|e| matches!(e.kind, EventKind::VersionReceived { .. })));
        let Some(anchor) = anchor else { continue };
        let useful = evs.iter().any(|e| match e.kind {
            EventKind::VersionReceived { services, .. } => {
                let b = services.bits();
                b & 8 != 0 && b & (1 | 1024) != 0
            }
            _ => false,
        });
        let k = key(identity, anchor.remote);
        let entry = out.entry(date(anchor.ts_ms)).or_default();
        entry.0.insert(k);
        if useful {
            entry.1.insert(k);
        }
    }
    for (d, (_, s, h)) in out.iter_mut() {
        if let Some(day) = days.iter().find(|x| x.day == *d) {
            *h = s.intersection(&day.a).copied().collect();
        }
    }
    out
}

/// A random message that the codec must accept. Addr lists are usually
/// short but occasionally reach the 1000-entry limit.
pub fn random_message(rng: &mut impl Rng) -> Message {
    let addr = |rng: &mut dyn rand::RngCore| {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        NetworkAddress::from_ipv6(std::net::Ipv6Addr::from(b))
    };
    match rng.random_range(0..7) {
        0 => Message::Version(VersionMessage {
            version: rng.random(),
            services: ServiceFlags(rng.random()),
            timestamp: rng.random(),
            receiver: PeerEndpoint { services: ServiceFlags(rng.random()), address: addr(rng), port: rng.random() },
            sender: PeerEndpoint { services: ServiceFlags(rng.random()), address: addr(rng), port: rng.random() },
            nonce: rng.random(),
            user_agent: (0..rng.random_range(0..=256)).map(|_| rng.random_range(' '..='~')).collect(),
            start_height: rng.random(),
            relay: rng.random(),
        }),
        1 => Message::Verack,
        2 => Message::Getaddr,
        3 => {
            let n = if rng.random_bool(0.02) { 1000 } else { rng.random_range(0..=20) };
            Message::Addr(
                (0..n)
                    .map(|_| AddrEntry {
                        timestamp: rng.random(),
                        services: ServiceFlags(rng.random()),
                        address: addr(rng),
                        port: rng.random(),
                    })
                    .collect(),
            )
        }
        4 => Message::Ping(rng.random()),
        5 => Message::Pong(rng.random()),
        _ => {
            let name: String = (0..rng.random_range(1..=12)).map(|_| rng.random_range('a'..='z')).collect();
            let command = CommandName::new(&name).unwrap();
            if command.is_known() {
                return Message::Verack;
            }
            let payload = (0..rng.random_range(0..200)).map(|_| rng.random()).collect();
            Message::Unknown { command, payload }
        }
    }
}

