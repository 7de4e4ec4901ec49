//! The monitor as a deterministic state machine.
//!
//! The driver (a TCP runtime, the test harness or anything else) feeds in
//! connection outcomes, decoded messages and clock ticks; the monitor
//! answers through a [`Transport`] and writes every observation to its
//! [`EventSink`] before acting on it.
//!
//! The monitor originates exactly four message kinds: VERSION after a
//! connection opens, VERACK and GETADDR after the peer's VERSION, GETADDR on
//! the periodic tick, and PONG in reply to PING.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::io;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::book::{AddressBook, AddressSource};
use super::log::{EventKind, EventSink, MonitorEvent, PeerAddr, SessionId};
use crate::codec::{
    is_routable, Message, PeerEndpoint, ServiceFlags, VersionMessage, MAINNET_MAGIC, MAX_USER_AGENT_LEN,
    MIN_PEER_VERSION, PROTOCOL_VERSION,
};

/// ADDR messages with at most this many entries are "small".
pub const SMALL_ADDR_MAX: usize = 10;

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    /// The monitor never accepts inbound connections; kept for clarity in
    /// configuration dumps.
    pub listen_disabled: bool,
    pub user_agent: String,
    pub getaddr_interval: Duration,
    pub reconnect_rate_limit: Duration,
    pub max_sessions: usize,
    pub seed_addresses: Vec<PeerAddr>,
    pub log_path: std::path::PathBuf,
    pub magic: [u8; 4],
    pub handshake_timeout: Duration,
    pub connect_timeout: Duration,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            listen_disabled: true,
            user_agent: concat!("/addrscope:", env!("CARGO_PKG_VERSION"), "/").to_owned(),
            getaddr_interval: Duration::from_secs(120),
            reconnect_rate_limit: Duration::from_secs(6 * 3600),
            max_sessions: 20_000,
            seed_addresses: Vec::new(),
            log_path: "monitor.log".into(),
            magic: MAINNET_MAGIC,
            handshake_timeout: Duration::from_secs(30),
            connect_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("getaddr interval must be positive")]
    ZeroGetaddrInterval,
    #[error("reconnect rate limit must be positive")]
    ZeroRateLimit,
    #[error("at least one seed address is required")]
    NoSeeds,
    #[error("max_sessions must be positive")]
    ZeroSessions,
    #[error("user agent exceeds {MAX_USER_AGENT_LEN} bytes")]
    UserAgentTooLong,
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.getaddr_interval.is_zero() {
            return Err(ConfigError::ZeroGetaddrInterval);
        }
        if self.reconnect_rate_limit.is_zero() {
            return Err(ConfigError::ZeroRateLimit);
        }
        if self.seed_addresses.is_empty() {
            return Err(ConfigError::NoSeeds);
        }
        if self.max_sessions == 0 {
            return Err(ConfigError::ZeroSessions);
        }
        if self.user_agent.len() > MAX_USER_AGENT_LEN {
            return Err(ConfigError::UserAgentTooLong);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("invalid monitor configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("event log write failed: {0}")]
    Log(#[source] io::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Outbound side of the monitor. Implementations report results back via
/// [`Monitor::on_connected`], [`Monitor::on_message`] and friends.
pub trait Transport {
    fn connect(&mut self, session: SessionId, remote: PeerAddr);
    fn send(&mut self, session: SessionId, message: Message);
    fn disconnect(&mut self, session: SessionId);
}

/// Per-session bookkeeping for attributing ADDR replies to GETADDRs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolicitState {
    pub getaddr_outstanding: u32,
}

impl SolicitState {
    pub fn getaddr_sent(&mut self) {
        self.getaddr_outstanding = self.getaddr_outstanding.saturating_add(1);
    }
}

/// Flags an ADDR message as a probable GETADDR reply. Messages with more
/// than [`SMALL_ADDR_MAX`] entries are always flagged and consume one
/// outstanding GETADDR; small messages never are.
pub fn classify_solicited(state: &mut SolicitState, entry_count: usize) -> bool {
    if entry_count <= SMALL_ADDR_MAX {
        return false;
    }
    state.getaddr_outstanding = state.getaddr_outstanding.saturating_sub(1);
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Connecting,
    Handshake { opened_ms: i64 },
    Established,
}

#[derive(Debug)]
struct Session {
    remote: PeerAddr,
    phase: Phase,
    solicit: SolicitState,
}

pub struct Monitor<T, L> {
    config: MonitorConfig,
    transport: T,
    log: L,
    rng: ChaCha8Rng,
    book: AddressBook,
    sessions: HashMap<SessionId, Session>,
    by_remote: HashMap<PeerAddr, SessionId>,
    established: Vec<SessionId>,
    pending: VecDeque<PeerAddr>,
    queued: HashSet<PeerAddr>,
    retries: BinaryHeap<Reverse<(i64, PeerAddr)>>,
    next_session: SessionId,
    next_getaddr_ms: Option<i64>,
}

impl<T: Transport, L: EventSink> Monitor<T, L> {
    pub fn new(config: MonitorConfig, transport: T, log: L, seed: u64) -> Result<Self, MonitorError> {
        config.validate()?;
        let book = AddressBook::new(config.reconnect_rate_limit.as_millis() as i64);
        Ok(Monitor {
            config,
            transport,
            log,
            rng: ChaCha8Rng::seed_from_u64(seed),
            book,
            sessions: HashMap::new(),
            by_remote: HashMap::new(),
            established: Vec::new(),
            pending: VecDeque::new(),
            queued: HashSet::new(),
            retries: BinaryHeap::new(),
            next_session: 1,
            next_getaddr_ms: None,
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn log(&self) -> &L {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut L {
        &mut self.log
    }

    pub fn book(&self) -> &AddressBook {
        &self.book
    }

    pub fn established(&self) -> &[SessionId] {
        &self.established
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn remote_of(&self, session: SessionId) -> Option<PeerAddr> {
        self.sessions.get(&session).map(|s| s.remote)
    }

    /// Loads the seeds and starts the first connection attempts.
    pub fn start(&mut self, now_ms: i64) -> Result<(), MonitorError> {
        for seed in self.config.seed_addresses.clone() {
            self.book.insert(seed, AddressSource::Seed);
            self.enqueue(seed, now_ms);
        }
        self.next_getaddr_ms = Some(now_ms + self.getaddr_interval_ms());
        self.pump(now_ms);
        Ok(())
    }

    pub fn on_connected(&mut self, session: SessionId, now_ms: i64) -> Result<(), MonitorError> {
        let Some(s) = self.sessions.get_mut(&session) else { return Ok(()) };
        if s.phase != Phase::Connecting {
            return Ok(());
        }
        s.phase = Phase::Handshake { opened_ms: now_ms };
        let remote = s.remote;
        self.book.finish_attempt(&remote, now_ms, true);
        self.record(now_ms, session, remote, EventKind::ConnectOpened)?;
        let version = self.version_message(remote, now_ms);
        self.transport.send(session, Message::Version(version));
        Ok(())
    }

    pub fn on_connect_failed(
        &mut self,
        session: SessionId,
        reason: Option<String>,
        now_ms: i64,
    ) -> Result<(), MonitorError> {
        let Some(s) = self.sessions.get(&session) else { return Ok(()) };
        if s.phase != Phase::Connecting {
            return self.on_disconnected(session, reason, now_ms);
        }
        let remote = s.remote;
        self.book.finish_attempt(&remote, now_ms, false);
        self.record(now_ms, session, remote, EventKind::ConnectFailed { reason })?;
        self.remove_session(session);
        self.schedule_retry(remote);
        self.pump(now_ms);
        Ok(())
    }

    pub fn on_disconnected(
        &mut self,
        session: SessionId,
        reason: Option<String>,
        now_ms: i64,
    ) -> Result<(), MonitorError> {
        let Some(s) = self.sessions.get(&session) else { return Ok(()) };
        if s.phase == Phase::Connecting {
            return self.on_connect_failed(session, reason, now_ms);
        }
        let remote = s.remote;
        self.record(now_ms, session, remote, EventKind::Disconnected { reason })?;
        self.remove_session(session);
        self.schedule_retry(remote);
        self.pump(now_ms);
        Ok(())
    }

    pub fn on_message(&mut self, session: SessionId, message: Message, now_ms: i64) -> Result<(), MonitorError> {
        let Some(s) = self.sessions.get(&session) else { return Ok(()) };
        let remote = s.remote;
        let phase = s.phase;
        match message {
            Message::Version(v) => {
                if !matches!(phase, Phase::Handshake { .. }) {
                    return Ok(());
                }
                self.record(
                    now_ms,
                    session,
                    remote,
                    EventKind::VersionReceived { version: v.version, services: v.services, user_agent: v.user_agent },
                )?;
                if v.version < MIN_PEER_VERSION {
                    self.drop_session(session, "obsolete protocol version", now_ms)?;
                    return Ok(());
                }
                self.transport.send(session, Message::Verack);
                self.record(now_ms, session, remote, EventKind::GetaddrSent)?;
                self.transport.send(session, Message::Getaddr);
                let s = self.sessions.get_mut(&session).expect("session checked above");
                s.solicit.getaddr_sent();
                s.phase = Phase::Established;
                self.established.push(session);
            }
            Message::Ping(nonce) => self.transport.send(session, Message::Pong(nonce)),
            Message::Addr(entries) => {
                let s = self.sessions.get_mut(&session).expect("session checked above");
                let solicited_hint = classify_solicited(&mut s.solicit, entries.len());
                let candidates: Vec<PeerAddr> = entries
                    .iter()
                    .filter(|e| e.port != 0 && is_routable(&e.address))
                    .map(|e| PeerAddr::new(e.address, e.port))
                    .collect();
                self.record(now_ms, session, remote, EventKind::AddrReceived { entries, solicited_hint })?;
                for addr in candidates {
                    self.book.insert(addr, AddressSource::AddrGossip);
                    self.enqueue(addr, now_ms);
                }
                self.pump(now_ms);
            }
            Message::Verack | Message::Getaddr | Message::Pong(_) | Message::Unknown { .. } => {}
        }
        Ok(())
    }

    /// Drives timers: handshake timeouts, the periodic GETADDR and due
    /// reconnection attempts. Call at least once a second.
    pub fn on_tick(&mut self, now_ms: i64) -> Result<(), MonitorError> {
        let timeout = self.config.handshake_timeout.as_millis() as i64;
        let mut expired: Vec<SessionId> = self
            .sessions
            .iter()
            .filter_map(|(&id, s)| match s.phase {
                Phase::Handshake { opened_ms } if now_ms - opened_ms >= timeout => Some(id),
                _ => None,
            })
            .collect();
        expired.sort_unstable();
        for id in expired {
            self.drop_session(id, "handshake timeout", now_ms)?;
        }

        let interval = self.getaddr_interval_ms();
        let next = *self.next_getaddr_ms.get_or_insert(now_ms + interval);
        if now_ms >= next {
            if !self.established.is_empty() {
                let idx = self.rng.random_range(0..self.established.len());
                let session = self.established[idx];
                let remote = self.sessions[&session].remote;
                self.record(now_ms, session, remote, EventKind::GetaddrSent)?;
                self.transport.send(session, Message::Getaddr);
                self.sessions.get_mut(&session).expect("established sessions exist").solicit.getaddr_sent();
            }
            let mut following = next + interval;
            if following <= now_ms {
                following = now_ms + interval;
            }
            self.next_getaddr_ms = Some(following);
        }

        while let Some(&Reverse((due, addr))) = self.retries.peek() {
            if due > now_ms {
                break;
            }
            self.retries.pop();
            self.enqueue(addr, now_ms);
        }
        self.pump(now_ms);
        Ok(())
    }

    fn getaddr_interval_ms(&self) -> i64 {
        self.config.getaddr_interval.as_millis() as i64
    }

    fn version_message(&mut self, remote: PeerAddr, now_ms: i64) -> VersionMessage {
        VersionMessage {
            version: PROTOCOL_VERSION,
            services: ServiceFlags::NONE,
            timestamp: now_ms.div_euclid(1000),
            receiver: PeerEndpoint { services: ServiceFlags::NONE, address: remote.address, port: remote.port },
            sender: PeerEndpoint::UNSPECIFIED,
            nonce: self.rng.random(),
            user_agent: self.config.user_agent.clone(),
            start_height: 0,
            relay: false,
        }
    }

    fn record(&mut self, ts_ms: i64, session: SessionId, remote: PeerAddr, kind: EventKind) -> Result<(), MonitorError> {
        self.log.append(&MonitorEvent { ts_ms, session, remote, kind }).map_err(MonitorError::Log)
    }

    fn drop_session(&mut self, session: SessionId, reason: &str, now_ms: i64) -> Result<(), MonitorError> {
        let remote = self.sessions[&session].remote;
        self.record(now_ms, session, remote, EventKind::Disconnected { reason: Some(reason.to_owned()) })?;
        self.transport.disconnect(session);
        self.remove_session(session);
        self.schedule_retry(remote);
        Ok(())
    }

    fn remove_session(&mut self, session: SessionId) {
        if let Some(s) = self.sessions.remove(&session) {
            self.by_remote.remove(&s.remote);
            if let Some(pos) = self.established.iter().position(|&id| id == session) {
                self.established.swap_remove(pos);
            }
        }
    }

    /// Reachable peers (and seeds) are re-attempted once the rate limit
    /// allows; addresses that never answered wait until gossip repeats them.
    fn schedule_retry(&mut self, addr: PeerAddr) {
        let Some(entry) = self.book.get(&addr) else { return };
        if entry.last_success.is_none() && entry.source != AddressSource::Seed {
            return;
        }
        if let Some(due) = self.book.next_eligible(&addr) {
            self.retries.push(Reverse((due, addr)));
        }
    }

    fn enqueue(&mut self, addr: PeerAddr, now_ms: i64) {
        if self.by_remote.contains_key(&addr) || self.queued.contains(&addr) || !self.book.may_attempt(&addr, now_ms) {
            return;
        }
        if self.pending.len() >= self.config.max_sessions {
            // Evict the least useful queued address, or drop the newcomer.
            let (victim_idx, victim_key) = self
                .pending
                .iter()
                .enumerate()
                .map(|(i, a)| (i, self.book.usefulness(a)))
                .min_by_key(|&(_, key)| key)
                .expect("queue is non-empty");
            if victim_key >= self.book.usefulness(&addr) {
                return;
            }
            let victim = self.pending.remove(victim_idx).expect("index from enumerate");
            self.queued.remove(&victim);
        }
        self.queued.insert(addr);
        self.pending.push_back(addr);
    }

    fn pump(&mut self, now_ms: i64) {
        while self.sessions.len() < self.config.max_sessions {
            let Some(addr) = self.pending.pop_front() else { break };
            self.queued.remove(&addr);
            if self.by_remote.contains_key(&addr) || !self.book.may_attempt(&addr, now_ms) {
                continue;
            }
            let session = self.next_session;
            self.next_session += 1;
            self.sessions.insert(session, Session { remote: addr, phase: Phase::Connecting, solicit: SolicitState::default() });
            self.by_remote.insert(addr, session);
            self.book.begin_attempt(&addr);
            self.transport.connect(session, addr);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solicited_by_size() {
        let mut st = SolicitState::default();
        assert!(classify_solicited(&mut st, 1000));
        assert!(!classify_solicited(&mut st, 10));
        assert!(classify_solicited(&mut st, 11));
        assert!(!classify_solicited(&mut st, 0));
    }

    #[test]
    fn large_reply_consumes_outstanding_getaddr() {
        let mut st = SolicitState::default();
        st.getaddr_sent();
        assert!(!classify_solicited(&mut st, 3));
        assert_eq!(st.getaddr_outstanding, 1);
        assert!(classify_solicited(&mut st, 200));
        assert_eq!(st.getaddr_outstanding, 0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = MonitorConfig::default();
        assert!(matches!(cfg.validate(), Err(ConfigError::NoSeeds)));
        cfg.seed_addresses.push("1.1.1.1:8333".parse().unwrap());
        cfg.validate().unwrap();
        cfg.getaddr_interval = Duration::ZERO;
        assert!(matches!(cfg.validate(), Err(ConfigError::ZeroGetaddrInterval)));
        cfg.getaddr_interval = Duration::from_secs(1);
        cfg.reconnect_rate_limit = Duration::ZERO;
        assert!(matches!(cfg.validate(), Err(ConfigError::ZeroRateLimit)));
    }
}
