use std::collections::HashMap;

use super::log::PeerAddr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddressSource {
    Seed,
    AddrGossip,
}

#[derive(Debug, Clone)]
pub struct BookEntry {
    /// Time the last attempt concluded (opened or failed).
    pub last_attempt: Option<i64>,
    pub last_success: Option<i64>,
    pub source: AddressSource,
    in_flight: bool,
}

/// Every address the monitor knows about, with per-address rate limiting
/// of connection attempts.
///
/// An attempt may start only once `rate_limit_ms` has passed since the
/// previous attempt concluded, so recorded attempt outcomes for one address
/// are always at least that far apart.
#[derive(Debug)]
pub struct AddressBook {
    entries: HashMap<PeerAddr, BookEntry>,
    rate_limit_ms: i64,
}

impl AddressBook {
    pub fn new(rate_limit_ms: i64) -> Self {
        assert!(rate_limit_ms > 0, "rate limit must be positive");
        AddressBook { entries: HashMap::new(), rate_limit_ms }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, addr: &PeerAddr) -> Option<&BookEntry> {
        self.entries.get(addr)
    }

    /// Returns true if the address was not known before. A seed keeps its
    /// source even when later heard via gossip.
    pub fn insert(&mut self, addr: PeerAddr, source: AddressSource) -> bool {
        let mut fresh = false;
        self.entries.entry(addr).or_insert_with(|| {
            fresh = true;
            BookEntry { last_attempt: None, last_success: None, source, in_flight: false }
        });
        fresh
    }

    /// Earliest time a new attempt may start, or `None` while one is running.
    pub fn next_eligible(&self, addr: &PeerAddr) -> Option<i64> {
        let entry = self.entries.get(addr)?;
        if entry.in_flight {
            return None;
        }
        Some(entry.last_attempt.map_or(i64::MIN, |t| t.saturating_add(self.rate_limit_ms)))
    }

    pub fn may_attempt(&self, addr: &PeerAddr, now_ms: i64) -> bool {
        self.next_eligible(addr).is_some_and(|t| now_ms >= t)
    }

    pub fn begin_attempt(&mut self, addr: &PeerAddr) {
        if let Some(entry) = self.entries.get_mut(addr) {
            entry.in_flight = true;
        }
    }

    pub fn finish_attempt(&mut self, addr: &PeerAddr, now_ms: i64, success: bool) {
        if let Some(entry) = self.entries.get_mut(addr) {
            entry.in_flight = false;
            entry.last_attempt = Some(now_ms);
            if success {
                entry.last_success = Some(now_ms);
            }
        }
    }

    /// Ordering key for eviction from the attempt queue: addresses that
    /// never connected and failed longest ago go first.
    pub fn usefulness(&self, addr: &PeerAddr) -> (bool, i64) {
        match self.entries.get(addr) {
            Some(e) => (e.last_success.is_some(), e.last_success.or(e.last_attempt).unwrap_or(i64::MIN)),
            None => (false, i64::MIN),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const H6: i64 = 6 * 3600 * 1000;

    #[test]
    fn rate_limit_measured_from_outcome() {
        let a: PeerAddr = "8.8.8.8:8333".parse().unwrap();
        let mut book = AddressBook::new(H6);
        assert!(book.insert(a, AddressSource::AddrGossip));
        assert!(!book.insert(a, AddressSource::AddrGossip));
        assert!(book.may_attempt(&a, 0));
        book.begin_attempt(&a);
        assert!(!book.may_attempt(&a, 0));
        book.finish_attempt(&a, 10_000, false);
        assert!(!book.may_attempt(&a, 10_000 + H6 - 1));
        assert!(book.may_attempt(&a, 10_000 + H6));
    }

    #[test]
    fn unknown_address_is_not_attemptable() {
        let book = AddressBook::new(H6);
        assert!(!book.may_attempt(&"8.8.8.8:8333".parse().unwrap(), 0));
    }
}
