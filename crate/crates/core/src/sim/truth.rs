use serde::{Deserialize, Serialize};

use super::engine::{PeerRecord, TrackedPeer, DAY_MS, SIM_EPOCH_MS};
use crate::analysis::{day_of, ratio_of, Analysis, DayKey, Identity, PeerKey, PeerSet};
use crate::codec::NetworkAddress;

/// Peers active on one day (any overlap with it), by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthDay {
    pub day: DayKey,
    pub reachable: PeerSet,
    pub unreachable_useful: PeerSet,
    pub unreachable_useless: PeerSet,
}

pub fn ground_truth(peers: &[PeerRecord], days: u32, identity: Identity) -> Vec<TruthDay> {
    (0..i64::from(days))
        .map(|d| {
            let start = SIM_EPOCH_MS + d * DAY_MS;
            let end = start + DAY_MS;
            let mut t = TruthDay {
                day: day_of(start),
                reachable: PeerSet::new(),
                unreachable_useful: PeerSet::new(),
                unreachable_useless: PeerSet::new(),
            };
            for p in peers.iter().filter(|p| p.join_ms < end && p.leave_ms.is_none_or(|l| l > start)) {
                let key = PeerKey::new(identity, p.address, p.port);
                match (p.reachable, p.useful) {
                    (true, _) => t.reachable.insert(key),
                    (false, true) => t.unreachable_useful.insert(key),
                    (false, false) => t.unreachable_useless.insert(key),
                };
            }
            t
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallRow {
    pub date: DayKey,
    pub truth_reachable: usize,
    pub truth_unreachable_useful: usize,
    pub truth_unreachable_useless: usize,
    pub a: usize,
    pub p: usize,
    pub u: usize,
    pub recall_reachable: Option<f64>,
    pub recall_unreachable_useful: Option<f64>,
    /// Addresses of peers without useful services found in U. Must be 0.
    pub detected_useless: usize,
    /// Entries of U that are not active unreachable useful peers that day.
    pub u_not_in_truth: usize,
    pub tracked_emissions: Option<u32>,
    pub tracked_detected: Option<bool>,
}

/// Compares the analysis of a monitor log against the simulator's ground
/// truth, one row per simulated day.
pub fn evaluate(
    analysis: &Analysis,
    truth: &[TruthDay],
    peers: &[PeerRecord],
    tracked: Option<&TrackedPeer>,
    identity: Identity,
) -> Vec<RecallRow> {
    let useless = useless_addresses(peers, identity);
    let empty = PeerSet::new();
    truth
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let est = analysis.day(t.day);
            let (a, p, u) = est.map_or((&empty, &empty, &empty), |e| (&e.a, &e.p, &e.u));
            let hit_reach = t.reachable.iter().filter(|k| a.contains(k)).count();
            let hit_unr = t.unreachable_useful.iter().filter(|k| u.contains(k)).count();
            let tracked_key = tracked.map(|tp| PeerKey::new(identity, tp.address, tp.port));
            RecallRow {
                date: t.day,
                truth_reachable: t.reachable.len(),
                truth_unreachable_useful: t.unreachable_useful.len(),
                truth_unreachable_useless: t.unreachable_useless.len(),
                a: a.len(),
                p: p.len(),
                u: u.len(),
                recall_reachable: ratio_of(hit_reach, t.reachable.len()),
                recall_unreachable_useful: ratio_of(hit_unr, t.unreachable_useful.len()),
                detected_useless: u.intersection(&useless).count(),
                u_not_in_truth: u.iter().filter(|k| !t.unreachable_useful.contains(k)).count(),
                tracked_emissions: tracked.and_then(|tp| tp.emissions.get(i).copied()),
                tracked_detected: tracked_key.map(|k| u.contains(&k)),
            }
        })
        .collect()
}

/// Flat form of [`PeerRecord`] for peers.csv.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct PeerRow {
    pub address: NetworkAddress,
    pub port: u16,
    pub reachable: bool,
    pub useful: bool,
    pub join_ms: i64,
    pub leave_ms: Option<i64>,
}

impl From<&PeerRecord> for PeerRow {
    fn from(p: &PeerRecord) -> Self {
        PeerRow {
            address: p.address,
            port: p.port,
            reachable: p.reachable,
            useful: p.useful,
            join_ms: p.join_ms,
            leave_ms: p.leave_ms,
        }
    }
}

impl From<PeerRow> for PeerRecord {
    fn from(p: PeerRow) -> Self {
        PeerRecord {
            address: p.address,
            port: p.port,
            reachable: p.reachable,
            useful: p.useful,
            join_ms: p.join_ms,
            leave_ms: p.leave_ms,
        }
    }
}

/// Set of all addresses that ever lacked useful services.
pub fn useless_addresses(peers: &[PeerRecord], identity: Identity) -> PeerSet {
    peers.iter().filter(|p| !p.useful).map(|p| PeerKey::new(identity, p.address, p.port)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(addr: &str, reachable: bool, useful: bool, join_ms: i64, leave_ms: Option<i64>) -> PeerRecord {
        PeerRecord { address: addr.parse().unwrap(), port: 8333, reachable, useful, join_ms, leave_ms }
    }

    #[test]
    fn activity_is_any_overlap_with_the_day() {
        let d0 = SIM_EPOCH_MS;
        let peers = vec![
            rec("1.0.0.1", true, true, d0, None),
            rec("1.0.0.2", false, true, d0 + 10, Some(d0 + 20)),
            rec("1.0.0.3", false, true, d0 + DAY_MS - 1, Some(d0 + DAY_MS + 5)),
            rec("1.0.0.4", false, false, d0 + DAY_MS, None),
        ];
        let t = ground_truth(&peers, 2, Identity::AddressOnly);
        assert_eq!(t[0].reachable.len(), 1);
        assert_eq!(t[0].unreachable_useful.len(), 2);
        assert_eq!(t[0].unreachable_useless.len(), 0);
        assert_eq!(t[1].unreachable_useful.len(), 1);
        assert_eq!(t[1].unreachable_useless.len(), 1);
    }
}
