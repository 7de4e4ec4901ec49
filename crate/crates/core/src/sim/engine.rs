//! Discrete-event ADDR gossip simulation.
//!
//! Connection-level events (announcement timers, connection turnover, peer
//! arrivals and departures, monitor traffic) run through a priority queue
//! keyed by (time, sequence). Relaying of one announcement is expanded
//! breadth-first at its emission time: with a constant per-hop latency the
//! delivery times are known up front, and every hop checks that the link
//! and the receiving peer are still alive at delivery time. Deliveries to a
//! monitor go back onto the queue so that monitor logs stay time-ordered.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io;
use std::net::Ipv4Addr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::Serialize;

use super::churn::{exp_ms, SessionLengths};
use super::config::SimConfig;
use super::SimError;
use crate::codec::{has_useful_services, is_routable, AddrEntry, NetworkAddress, ServiceFlags, PROTOCOL_VERSION};
use crate::monitor::{classify_solicited, EventKind, EventSink, MonitorEvent, PeerAddr, SessionId, SolicitState};

/// Simulated time zero: 2020-01-01T00:00:00Z.
pub const SIM_EPOCH_MS: i64 = 1_577_836_800_000;
pub const DAY_MS: i64 = 86_400_000;
pub const SIM_PORT: u16 = 8333;
const PEER_USER_AGENT: &str = "/Satoshi:0.20.1/";
const NEVER: i64 = i64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    FullRelay,
    BlockRelay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Reachable,
    /// Reachable peer that only accepts connections and logs them.
    Validation,
    Unreachable,
    Monitor(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PeerClass {
    UnreachableUseful,
    UnreachableUseless,
}

/// A peer as recorded for ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeerRecord {
    pub address: NetworkAddress,
    pub port: u16,
    pub reachable: bool,
    pub useful: bool,
    /// Absolute milliseconds since the Unix epoch.
    pub join_ms: i64,
    pub leave_ms: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SimStats {
    pub events: u64,
    pub announcements: u64,
    pub deliveries: u64,
    pub monitor_deliveries: u64,
    /// Forwarded entries delivered older than the cutoff. Must stay 0.
    pub stale_deliveries: u64,
    /// Entries not forwarded because they would arrive past the cutoff.
    pub horizon_drops: u64,
    /// ADDR traffic on block-relay connections. Must stay 0.
    pub block_relay_addr: u64,
    /// Monitor receipts without a valid originating announcement. Must stay 0.
    pub conservation_violations: u64,
    /// Largest inbound degree ever held by an unreachable peer. Must stay 0.
    pub max_unreachable_inbound: u32,
    pub peers_created: u64,
    pub skipped_connections: u64,
    pub getaddr_replies: u64,
}

/// Emission counts of the tracked unreachable peer, one entry per day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrackedPeer {
    pub address: NetworkAddress,
    pub port: u16,
    pub emissions: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub peers: Vec<PeerRecord>,
    pub tracked: Option<TrackedPeer>,
    pub stats: SimStats,
    pub days: u32,
}

struct AddrDb {
    members: Vec<u32>,
    bits: Vec<u64>,
}

impl AddrDb {
    fn new() -> Self {
        AddrDb { members: Vec::new(), bits: Vec::new() }
    }

    fn insert(&mut self, id: u32) {
        let (word, bit) = (id as usize / 64, id % 64);
        if word >= self.bits.len() {
            self.bits.resize(word + 1, 0);
        }
        if self.bits[word] & (1 << bit) == 0 {
            self.bits[word] |= 1 << bit;
            self.members.push(id);
        }
    }
}

struct Node {
    address: NetworkAddress,
    role: Role,
    services: ServiceFlags,
    /// Useful services and a routable address: receivers may relay it.
    relayable: bool,
    join_ms: i64,
    leave_ms: i64,
    full_links: Vec<u32>,
    out_links: Vec<u32>,
    inbound: u32,
    db: Option<AddrDb>,
    /// Last announcement instance this node relayed.
    stamp: u64,
}

struct Link {
    from: u32,
    to: u32,
    kind: LinkKind,
    /// Earliest of the scheduled close and the initiator's departure.
    ends_ms: i64,
    closed: bool,
}

impl Link {
    fn alive_at(&self, t: i64) -> bool {
        !self.closed && self.ends_ms > t
    }
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Announce { link: u32, from_initiator: bool, initial: bool },
    LinkClose { link: u32 },
    NodeLeave { node: u32 },
    NodeJoin { class: PeerClass },
    MonVersion { mon: u8, node: u32 },
    MonAddr { mon: u8, sender: u32, origin: u32, ts: u32, instance: u64 },
    MonTick { mon: u8 },
    MonReply { mon: u8, node: u32 },
}

struct Scheduled {
    t: i64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.t, self.seq) == (other.t, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t, other.seq).cmp(&(self.t, self.seq))
    }
}

struct MonState {
    node: u32,
    sessions: FxHashMap<u32, (SessionId, SolicitState)>,
    established: Vec<u32>,
    next_session: SessionId,
}

/// Decides whether a received entry is passed on: the entry must carry
/// useful services and a routable address, and it must still be within the
/// timestamp cutoff when it reaches the next hop.
pub fn relay_allowed(useful_and_routable: bool, age_ms: i64, latency_ms: i64, cutoff_ms: i64) -> bool {
    useful_and_routable && age_ms <= cutoff_ms && age_ms + latency_ms <= cutoff_ms
}

/// Maps a sequence number to a unique routable IPv4 address.
struct AddressGen {
    seq: u32,
}

impl AddressGen {
    fn next(&mut self) -> NetworkAddress {
        loop {
            self.seq = self.seq.wrapping_add(1);
            let candidate = NetworkAddress::from_ipv4(Ipv4Addr::from(self.seq.wrapping_mul(0x9E37_79B1)));
            if is_routable(&candidate) {
                return candidate;
            }
        }
    }
}

/// Sinks receiving the simulated monitors' and validation peer's logs.
pub struct SimSinks<'a> {
    pub monitors: Vec<Box<dyn EventSink + 'a>>,
    pub validation: Option<Box<dyn EventSink + 'a>>,
}

pub struct Simulation<'a> {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    links: Vec<Link>,
    pool: Vec<u32>,
    monitors: Vec<MonState>,
    sinks: SimSinks<'a>,
    validation_sessions: FxHashMap<u32, SessionId>,
    next_validation_session: SessionId,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    now: i64,
    end_ms: i64,
    lat_ms: i64,
    cutoff_ms: i64,
    lengths: SessionLengths,
    addr_gen: AddressGen,
    useless_created: u64,
    useful_created: u64,
    instance: u64,
    bfs: VecDeque<(u32, u32, i64, u32)>,
    tracked: Option<u32>,
    emissions: Vec<u32>,
    stats: SimStats,
}

impl<'a> Simulation<'a> {
    /// Builds the initial network. Fails when the connection targets cannot
    /// be satisfied.
    pub fn new(config: &SimConfig, sinks: SimSinks<'a>) -> Result<Self, SimError> {
        config.validate()?;
        if sinks.monitors.len() != config.monitors {
            return Err(SimError::InvalidConfig(format!(
                "{} monitor sinks for {} monitors",
                sinks.monitors.len(),
                config.monitors
            )));
        }
        if config.n_reachable < config.full_relay_out + 1 {
            return Err(SimError::InfeasibleTopology(format!(
                "{} reachable peers cannot host {} distinct full-relay connections each",
                config.n_reachable, config.full_relay_out
            )));
        }
        let outbound = config.full_relay_out + config.block_relay_out;
        if config.max_connections < outbound + config.monitors + 1 {
            return Err(SimError::InfeasibleTopology("max_connections leaves no inbound slots".into()));
        }
        let mut sim = Simulation {
            cfg: config.clone(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            nodes: Vec::new(),
            links: Vec::new(),
            pool: Vec::new(),
            monitors: Vec::new(),
            sinks,
            validation_sessions: FxHashMap::default(),
            next_validation_session: 1,
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0,
            end_ms: i64::from(config.duration_days) * DAY_MS,
            lat_ms: config.latency.as_millis() as i64,
            cutoff_ms: config.addr_timestamp_cutoff.as_millis() as i64,
            lengths: SessionLengths::from_config(&config.churn),
            addr_gen: AddressGen { seq: 0 },
            useless_created: 0,
            useful_created: 0,
            instance: 0,
            bfs: VecDeque::new(),
            tracked: None,
            emissions: vec![0; config.duration_days as usize],
            stats: SimStats::default(),
        };
        sim.build()?;
        Ok(sim)
    }

    fn build(&mut self) -> Result<(), SimError> {
        let useful = ServiceFlags::NODE_NETWORK | ServiceFlags::NODE_WITNESS;
        for _ in 0..self.cfg.n_reachable {
            let id = self.add_node(Role::Reachable, useful);
            self.pool.push(id);
        }
        if self.cfg.validation_peer {
            let id = self.add_node(Role::Validation, useful);
            self.pool.push(id);
        }
        let pool = self.pool.clone();
        for &id in &pool {
            let mut db = AddrDb::new();
            for &other in pool.iter().filter(|&&o| o != id) {
                db.insert(other);
            }
            self.nodes[id as usize].db = Some(db);
        }
        for m in 0..self.cfg.monitors {
            let id = self.add_node(Role::Monitor(m as u8), ServiceFlags::NONE);
            self.monitors.push(MonState {
                node: id,
                sessions: FxHashMap::default(),
                established: Vec::new(),
                next_session: 1,
            });
        }
        let reachable: Vec<u32> =
            pool.iter().copied().filter(|&id| self.nodes[id as usize].role == Role::Reachable).collect();
        for id in reachable {
            self.open_outbound(id, true)?;
        }
        for _ in 0..self.cfg.n_unreachable_useful {
            self.spawn(PeerClass::UnreachableUseful, true)?;
        }
        for _ in 0..self.cfg.n_unreachable_useless {
            self.spawn(PeerClass::UnreachableUseless, true)?;
        }
        for m in 0..self.monitors.len() {
            let mon_node = self.monitors[m].node;
            for &target in &pool {
                self.open_link(mon_node, target, LinkKind::FullRelay);
                let session = self.monitors[m].next_session;
                self.monitors[m].next_session += 1;
                self.monitors[m].sessions.insert(target, (session, SolicitState::default()));
                self.log_monitor(m, session, target, EventKind::ConnectOpened)
                    .map_err(SimError::Io)?;
                self.schedule(2 * self.lat_ms, Ev::MonVersion { mon: m as u8, node: target });
            }
            let interval = self.cfg.getaddr_interval.as_millis() as i64;
            self.schedule(interval, Ev::MonTick { mon: m as u8 });
        }
        Ok(())
    }

    fn add_node(&mut self, role: Role, services: ServiceFlags) -> u32 {
        let address = self.addr_gen.next();
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            address,
            role,
            services,
            relayable: has_useful_services(services) && is_routable(&address),
            join_ms: self.now,
            leave_ms: NEVER,
            full_links: Vec::new(),
            out_links: Vec::new(),
            inbound: 0,
            db: None,
            stamp: 0,
        });
        if !matches!(role, Role::Monitor(_)) {
            self.stats.peers_created += 1;
        }
        id
    }

    fn spawn(&mut self, class: PeerClass, building: bool) -> Result<(), SimError> {
        let services = match class {
            PeerClass::UnreachableUseful => {
                self.useful_created += 1;
                if self.useful_created % 2 == 1 {
                    ServiceFlags::NODE_NETWORK | ServiceFlags::NODE_WITNESS
                } else {
                    ServiceFlags::NODE_NETWORK_LIMITED | ServiceFlags::NODE_WITNESS
                }
            }
            PeerClass::UnreachableUseless => {
                self.useless_created += 1;
                if self.useless_created % 2 == 1 {
                    ServiceFlags::NONE
                } else {
                    ServiceFlags::NODE_NETWORK
                }
            }
        };
        let id = self.add_node(Role::Unreachable, services);
        let is_tracked = self.tracked.is_none() && class == PeerClass::UnreachableUseful;
        if is_tracked {
            self.tracked = Some(id);
        } else if let Some(len) = self.lengths.sample(&mut self.rng) {
            let leave = self.now + (len.as_secs_f64() * 1000.0).round().max(1.0) as i64;
            self.nodes[id as usize].leave_ms = leave;
            self.schedule(leave, Ev::NodeLeave { node: id });
        }
        self.open_outbound(id, building)
    }

    fn open_outbound(&mut self, id: u32, building: bool) -> Result<(), SimError> {
        let kinds = std::iter::repeat_n(LinkKind::FullRelay, self.cfg.full_relay_out)
            .chain(std::iter::repeat_n(LinkKind::BlockRelay, self.cfg.block_relay_out));
        for kind in kinds {
            match self.pick_target(id, kind) {
                Some(target) => {
                    self.open_link(id, target, kind);
                }
                None if building => {
                    return Err(SimError::InfeasibleTopology(format!(
                        "no reachable peer left with a free inbound slot for peer {id}"
                    )))
                }
                None => self.stats.skipped_connections += 1,
            }
        }
        Ok(())
    }

    fn capacity(&self, id: u32) -> u32 {
        let outbound = match self.nodes[id as usize].role {
            Role::Reachable => self.cfg.full_relay_out + self.cfg.block_relay_out,
            _ => 0,
        };
        (self.cfg.max_connections - outbound - self.cfg.monitors) as u32
    }

    /// Uniform choice among reachable peers with a free slot, avoiding the
    /// initiator's current targets; block-relay connections fall back to
    /// reusing a full-relay target when nothing else is left.
    fn pick_target(&mut self, from: u32, kind: LinkKind) -> Option<u32> {
        let current: Vec<(u32, LinkKind)> = self.nodes[from as usize]
            .out_links
            .iter()
            .map(|&l| (self.links[l as usize].to, self.links[l as usize].kind))
            .collect();
        let tiers: &[bool] = if kind == LinkKind::BlockRelay { &[true, false] } else { &[true] };
        for &strict in tiers {
            let ok = |sim: &Self, c: u32| {
                c != from
                    && sim.nodes[c as usize].inbound < sim.capacity(c)
                    && !current.iter().any(|&(t, k)| t == c && (strict || k == kind))
            };
            for _ in 0..64 {
                let c = self.pool[self.rng.random_range(0..self.pool.len())];
                if ok(self, c) {
                    return Some(c);
                }
            }
            let candidates: Vec<u32> = self.pool.iter().copied().filter(|&c| ok(self, c)).collect();
            if !candidates.is_empty() {
                return Some(candidates[self.rng.random_range(0..candidates.len())]);
            }
        }
        None
    }

    fn open_link(&mut self, from: u32, to: u32, kind: LinkKind) -> u32 {
        let id = self.links.len() as u32;
        let from_role = self.nodes[from as usize].role;
        let is_monitor = matches!(from_role, Role::Monitor(_));
        let mut ends = self.nodes[from as usize].leave_ms;
        if let (Some(mean), false) = (self.cfg.churn.link_lifetime(), is_monitor) {
            let close = self.now + exp_ms(&mut self.rng, mean).max(1);
            if close < ends {
                ends = close;
                self.schedule(close, Ev::LinkClose { link: id });
            }
        }
        self.links.push(Link { from, to, kind, ends_ms: ends, closed: false });
        self.nodes[from as usize].out_links.push(id);
        let target = &mut self.nodes[to as usize];
        target.inbound += 1;
        if target.role == Role::Unreachable {
            self.stats.max_unreachable_inbound = self.stats.max_unreachable_inbound.max(target.inbound);
        }
        if kind == LinkKind::FullRelay {
            self.nodes[from as usize].full_links.push(id);
            self.nodes[to as usize].full_links.push(id);
            if !is_monitor {
                let initial = self.now + exp_ms(&mut self.rng, self.cfg.initial_announce_delay_mean);
                self.schedule(initial, Ev::Announce { link: id, from_initiator: true, initial: true });
                let regular = self.now + exp_ms(&mut self.rng, self.cfg.self_announce_mean);
                self.schedule(regular, Ev::Announce { link: id, from_initiator: true, initial: false });
            }
            let regular = self.now + exp_ms(&mut self.rng, self.cfg.self_announce_mean);
            self.schedule(regular, Ev::Announce { link: id, from_initiator: false, initial: false });
        }
        if self.nodes[to as usize].role == Role::Validation && !is_monitor {
            if let Err(e) = self.log_validation_open(id, from) {
                log::error!("validation log write failed: {e}");
            }
        }
        id
    }

    fn close_link(&mut self, id: u32, reconnect: bool) -> io::Result<()> {
        let link = &mut self.links[id as usize];
        if link.closed {
            return Ok(());
        }
        link.closed = true;
        link.ends_ms = link.ends_ms.min(self.now);
        let (from, to, kind) = (link.from, link.to, link.kind);
        remove_item(&mut self.nodes[from as usize].out_links, id);
        if kind == LinkKind::FullRelay {
            remove_item(&mut self.nodes[from as usize].full_links, id);
            remove_item(&mut self.nodes[to as usize].full_links, id);
        }
        self.nodes[to as usize].inbound -= 1;
        if let Some(session) = self.validation_sessions.remove(&id) {
            let remote = self.peer_addr(from);
            self.log_validation(session, remote, EventKind::Disconnected { reason: None })?;
        }
        if reconnect && self.nodes[from as usize].leave_ms > self.now {
            match self.pick_target(from, kind) {
                Some(target) => {
                    self.open_link(from, target, kind);
                }
                None => self.stats.skipped_connections += 1,
            }
        }
        Ok(())
    }

    fn schedule(&mut self, t: i64, ev: Ev) {
        if t >= self.end_ms {
            return;
        }
        self.seq += 1;
        self.heap.push(Scheduled { t, seq: self.seq, ev });
    }

    fn abs(&self, t: i64) -> i64 {
        SIM_EPOCH_MS + t
    }

    fn peer_addr(&self, id: u32) -> PeerAddr {
        PeerAddr::new(self.nodes[id as usize].address, SIM_PORT)
    }

    fn log_monitor(&mut self, mon: usize, session: SessionId, remote: u32, kind: EventKind) -> io::Result<()> {
        let event = MonitorEvent { ts_ms: self.abs(self.now), session, remote: self.peer_addr(remote), kind };
        self.sinks.monitors[mon].append(&event)
    }

    fn log_validation(&mut self, session: SessionId, remote: PeerAddr, kind: EventKind) -> io::Result<()> {
        let event = MonitorEvent { ts_ms: self.abs(self.now), session, remote, kind };
        match &mut self.sinks.validation {
            Some(sink) => sink.append(&event),
            None => Ok(()),
        }
    }

    fn log_validation_open(&mut self, link: u32, from: u32) -> io::Result<()> {
        let session = self.next_validation_session;
        self.next_validation_session += 1;
        self.validation_sessions.insert(link, session);
        let remote = self.peer_addr(from);
        let services = self.nodes[from as usize].services;
        self.log_validation(session, remote, EventKind::ConnectOpened)?;
        self.log_validation(
            session,
            remote,
            EventKind::VersionReceived { version: PROTOCOL_VERSION, services, user_agent: PEER_USER_AGENT.into() },
        )
    }

    /// Open connections as (initiator, acceptor, kind), monitors included.
    pub fn edges(&self) -> Vec<(u32, u32, LinkKind)> {
        self.links.iter().filter(|l| !l.closed).map(|l| (l.from, l.to, l.kind)).collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn role(&self, id: u32) -> Role {
        self.nodes[id as usize].role
    }

    pub fn inbound_degree(&self, id: u32) -> u32 {
        self.nodes[id as usize].inbound
    }

    pub fn address(&self, id: u32) -> NetworkAddress {
        self.nodes[id as usize].address
    }

    pub fn run(mut self) -> Result<SimOutcome, SimError> {
        while let Some(Scheduled { t, ev, .. }) = self.heap.pop() {
            self.now = t;
            self.stats.events += 1;
            self.step(ev).map_err(SimError::Io)?;
        }
        self.now = self.end_ms;
        let end_abs = self.abs(self.end_ms);
        let peers = self
            .nodes
            .iter()
            .filter(|n| matches!(n.role, Role::Reachable | Role::Unreachable))
            .map(|n| PeerRecord {
                address: n.address,
                port: SIM_PORT,
                reachable: n.role == Role::Reachable,
                useful: has_useful_services(n.services),
                join_ms: SIM_EPOCH_MS + n.join_ms,
                leave_ms: (n.leave_ms != NEVER && SIM_EPOCH_MS + n.leave_ms < end_abs)
                    .then(|| SIM_EPOCH_MS + n.leave_ms),
            })
            .collect();
        let tracked = self.tracked.map(|id| TrackedPeer {
            address: self.nodes[id as usize].address,
            port: SIM_PORT,
            emissions: self.emissions.clone(),
        });
        Ok(SimOutcome { peers, tracked, stats: self.stats, days: self.cfg.duration_days })
    }

    fn step(&mut self, ev: Ev) -> io::Result<()> {
        match ev {
            Ev::Announce { link, from_initiator, initial } => self.announce(link, from_initiator, initial),
            Ev::LinkClose { link } => self.close_link(link, true)?,
            Ev::NodeLeave { node } => {
                for link in self.nodes[node as usize].out_links.clone() {
                    self.close_link(link, false)?;
                }
                let n = &mut self.nodes[node as usize];
                n.full_links = Vec::new();
                n.db = None;
                let class = if has_useful_services(n.services) {
                    PeerClass::UnreachableUseful
                } else {
                    PeerClass::UnreachableUseless
                };
                let delay = if self.cfg.churn.arrival_rate > 0.0 {
                    let mean = std::time::Duration::from_secs_f64(3600.0 / self.cfg.churn.arrival_rate);
                    exp_ms(&mut self.rng, mean)
                } else {
                    0
                };
                self.schedule(self.now + delay, Ev::NodeJoin { class });
            }
            Ev::NodeJoin { class } => {
                self.spawn(class, false).map_err(|e| io::Error::other(e.to_string()))?;
            }
            Ev::MonVersion { mon, node } => {
                let m = mon as usize;
                let services = self.nodes[node as usize].services;
                let Some(&(session, _)) = self.monitors[m].sessions.get(&node) else { return Ok(()) };
                self.log_monitor(
                    m,
                    session,
                    node,
                    EventKind::VersionReceived { version: PROTOCOL_VERSION, services, user_agent: PEER_USER_AGENT.into() },
                )?;
                self.send_getaddr(m, node)?;
                self.monitors[m].established.push(node);
            }
            Ev::MonTick { mon } => {
                let m = mon as usize;
                if !self.monitors[m].established.is_empty() {
                    let idx = self.rng.random_range(0..self.monitors[m].established.len());
                    let node = self.monitors[m].established[idx];
                    self.send_getaddr(m, node)?;
                }
                let interval = self.cfg.getaddr_interval.as_millis() as i64;
                self.schedule(self.now + interval, Ev::MonTick { mon });
            }
            Ev::MonReply { mon, node } => self.getaddr_reply(mon as usize, node)?,
            Ev::MonAddr { mon, sender, origin, ts, instance } => {
                if instance == 0 || instance > self.instance {
                    self.stats.conservation_violations += 1;
                }
                let m = mon as usize;
                let o = &self.nodes[origin as usize];
                let entry = AddrEntry { timestamp: ts, services: o.services, address: o.address, port: SIM_PORT };
                let Some((session, solicit)) = self.monitors[m].sessions.get_mut(&sender) else {
                    self.stats.conservation_violations += 1;
                    return Ok(());
                };
                let session = *session;
                let solicited_hint = classify_solicited(solicit, 1);
                self.stats.monitor_deliveries += 1;
                self.log_monitor(m, session, sender, EventKind::AddrReceived { entries: vec![entry], solicited_hint })?;
            }
        }
        Ok(())
    }

    fn send_getaddr(&mut self, m: usize, node: u32) -> io::Result<()> {
        let Some(&(session, _)) = self.monitors[m].sessions.get(&node) else { return Ok(()) };
        self.log_monitor(m, session, node, EventKind::GetaddrSent)?;
        if let Some((_, solicit)) = self.monitors[m].sessions.get_mut(&node) {
            solicit.getaddr_sent();
        }
        self.schedule(self.now + 2 * self.lat_ms, Ev::MonReply { mon: m as u8, node });
        Ok(())
    }

    fn getaddr_reply(&mut self, m: usize, node: u32) -> io::Result<()> {
        let Some(db) = &self.nodes[node as usize].db else { return Ok(()) };
        let n = db.members.len();
        let k = ((n as f64 * self.cfg.getaddr_reply_fraction).floor() as usize).min(self.cfg.getaddr_reply_cap);
        if k == 0 {
            return Ok(());
        }
        let ts = (self.abs(self.now) / 1000) as u32;
        let picks = index::sample(&mut self.rng, n, k);
        let entries: Vec<AddrEntry> = picks
            .iter()
            .map(|i| {
                let peer = &self.nodes[db.members[i] as usize];
                AddrEntry { timestamp: ts, services: peer.services, address: peer.address, port: SIM_PORT }
            })
            .collect();
        let Some((session, solicit)) = self.monitors[m].sessions.get_mut(&node) else { return Ok(()) };
        let session = *session;
        let solicited_hint = classify_solicited(solicit, entries.len());
        self.stats.getaddr_replies += 1;
        self.log_monitor(m, session, node, EventKind::AddrReceived { entries, solicited_hint })
    }

    fn announce(&mut self, link_id: u32, from_initiator: bool, initial: bool) {
        let link = &self.links[link_id as usize];
        if !link.alive_at(self.now) {
            return;
        }
        let (sender, receiver, kind) =
            if from_initiator { (link.from, link.to, link.kind) } else { (link.to, link.from, link.kind) };
        if !initial {
            let next = self.now + exp_ms(&mut self.rng, self.cfg.self_announce_mean);
            self.schedule(next, Ev::Announce { link: link_id, from_initiator, initial: false });
        }
        if kind == LinkKind::BlockRelay {
            self.stats.block_relay_addr += 1;
            return;
        }
        self.stats.announcements += 1;
        if Some(sender) == self.tracked {
            self.emissions[(self.now / DAY_MS) as usize] += 1;
        }
        let ts = (self.abs(self.now) / 1000) as u32;
        self.propagate(sender, ts, receiver);
    }

    /// Expands one self-announcement through the relay network.
    fn propagate(&mut self, origin: u32, ts: u32, first: u32) {
        self.instance += 1;
        let instance = self.instance;
        let suppress = self.cfg.suppress_known;
        if suppress {
            self.nodes[origin as usize].stamp = instance;
        }
        let relayable = self.nodes[origin as usize].relayable;
        let ts_ms = i64::from(ts) * 1000;
        let mut queue = std::mem::take(&mut self.bfs);
        queue.clear();
        queue.push_back((first, origin, self.now + self.lat_ms, 1));
        while let Some((node, sender, t, hop)) = queue.pop_front() {
            self.stats.deliveries += 1;
            let age = self.abs(t) - ts_ms;
            if hop > 1 && age > self.cutoff_ms {
                self.stats.stale_deliveries += 1;
            }
            if let Role::Monitor(mon) = self.nodes[node as usize].role {
                self.schedule(t, Ev::MonAddr { mon, sender, origin, ts, instance });
                continue;
            }
            if !relayable {
                continue;
            }
            let n = &mut self.nodes[node as usize];
            if let Some(db) = &mut n.db {
                db.insert(origin);
            }
            if suppress {
                if n.stamp == instance {
                    continue;
                }
                n.stamp = instance;
            }
            if !relay_allowed(relayable, age, self.lat_ms, self.cutoff_ms) {
                self.stats.horizon_drops += 1;
                continue;
            }
            let fanout = if self.rng.random_bool(self.cfg.fanout_two_probability) { 2 } else { 1 };
            let arrive = t + self.lat_ms;
            let mut picked = [u32::MAX; 2];
            let count = pick_relay_targets(
                &self.nodes,
                &self.links,
                &mut self.rng,
                node,
                sender,
                arrive,
                fanout,
                &mut picked,
            );
            for &target in &picked[..count] {
                queue.push_back((target, node, arrive, hop + 1));
            }
        }
        self.bfs = queue;
    }
}

/// Picks up to `k` distinct full-relay neighbors of `node`, other than
/// `sender`, whose connection is still open at `t`.
#[allow(clippy::too_many_arguments)]
fn pick_relay_targets(
    nodes: &[Node],
    links: &[Link],
    rng: &mut ChaCha8Rng,
    node: u32,
    sender: u32,
    t: i64,
    k: usize,
    out: &mut [u32; 2],
) -> usize {
    let adj = &nodes[node as usize].full_links;
    let other = |l: u32| {
        let link = &links[l as usize];
        if link.from == node {
            link.to
        } else {
            link.from
        }
    };
    let valid = |l: u32| {
        let o = other(l);
        o != sender && links[l as usize].alive_at(t) && nodes[o as usize].leave_ms > t
    };
    let mut got = 0;
    for _ in 0..(4 * k + 4) {
        if got == k || adj.is_empty() {
            break;
        }
        let l = adj[rng.random_range(0..adj.len())];
        let o = other(l);
        if valid(l) && !out[..got].contains(&o) {
            out[got] = o;
            got += 1;
        }
    }
    if got < k {
        let candidates: Vec<u32> =
            adj.iter().copied().filter(|&l| valid(l)).map(other).filter(|o| !out[..got].contains(o)).collect();
        let mut candidates = candidates;
        candidates.sort_unstable();
        candidates.dedup();
        while got < k && !candidates.is_empty() {
            let o = candidates.swap_remove(rng.random_range(0..candidates.len()));
            out[got] = o;
            got += 1;
        }
    }
    got
}

fn remove_item(v: &mut Vec<u32>, item: u32) {
    if let Some(pos) = v.iter().position(|&x| x == item) {
        v.swap_remove(pos);
    }
}

/// Runs a configured simulation to completion.
pub fn run(config: &SimConfig, sinks: SimSinks<'_>) -> Result<SimOutcome, SimError> {
    Simulation::new(config, sinks)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor::NullSink;

    fn null_sinks<'a>(n: usize) -> SimSinks<'a> {
        SimSinks { monitors: (0..n).map(|_| Box::new(NullSink) as Box<dyn EventSink>).collect(), validation: None }
    }

    #[test]
    fn relay_rule() {
        let (lat, cutoff) = (100, 600_000);
        assert!(relay_allowed(true, 0, lat, cutoff));
        assert!(!relay_allowed(false, 0, lat, cutoff));
        assert!(!relay_allowed(true, 11 * 60_000, lat, cutoff));
        assert!(!relay_allowed(true, cutoff - lat + 1, lat, cutoff));
        assert!(relay_allowed(true, cutoff - lat, lat, cutoff));
    }

    #[test]
    fn ten_reachable_peers_each_open_ten() {
        let cfg = SimConfig { n_reachable: 10, n_unreachable_useful: 0, duration_days: 1, ..Default::default() };
        let sim = Simulation::new(&cfg, null_sinks(1)).unwrap();
        let edges = sim.edges();
        for id in 0..10u32 {
            let out: Vec<_> = edges.iter().filter(|e| e.0 == id).collect();
            assert_eq!(out.len(), 10);
            let full: Vec<u32> = out.iter().filter(|e| e.2 == LinkKind::FullRelay).map(|e| e.1).collect();
            let mut distinct = full.clone();
            distinct.sort_unstable();
            distinct.dedup();
            assert_eq!(distinct.len(), 8);
            assert!(!full.contains(&id));
        }
    }

    #[test]
    fn too_few_reachable_is_infeasible() {
        let cfg = SimConfig { n_reachable: 8, n_unreachable_useful: 0, duration_days: 1, ..Default::default() };
        assert!(matches!(Simulation::new(&cfg, null_sinks(1)), Err(SimError::InfeasibleTopology(_))));
        let cfg = SimConfig { n_reachable: 9, n_unreachable_useful: 2000, duration_days: 1, ..Default::default() };
        assert!(matches!(Simulation::new(&cfg, null_sinks(1)), Err(SimError::InfeasibleTopology(_))));
    }

    #[test]
    fn unreachable_have_no_inbound_and_topology_is_seeded() {
        let cfg = SimConfig { n_reachable: 30, n_unreachable_useful: 50, duration_days: 1, ..Default::default() };
        let a = Simulation::new(&cfg, null_sinks(1)).unwrap();
        let b = Simulation::new(&cfg, null_sinks(1)).unwrap();
        assert_eq!(a.edges(), b.edges());
        for id in 0..a.node_count() as u32 {
            if a.role(id) == Role::Unreachable {
                assert_eq!(a.inbound_degree(id), 0);
            }
        }
        let c = Simulation::new(&SimConfig { seed: 2, ..cfg }, null_sinks(1)).unwrap();
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn synthetic_addresses_are_unique_and_routable() {
        let mut g = AddressGen { seq: 0 };
        let addrs: Vec<_> = (0..50_000).map(|_| g.next()).collect();
        let mut sorted = addrs.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), addrs.len());
        assert!(addrs.iter().all(is_routable));
    }
}
