use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::SimError;

/// One component of a session-length mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum LengthShape {
    /// Log-uniform between `min` and `max`.
    LogUniform {
        #[serde(with = "humantime_serde")]
        min: Duration,
        #[serde(with = "humantime_serde")]
        max: Duration,
    },
    /// `offset` plus an exponential with the given mean.
    Exponential {
        #[serde(with = "humantime_serde", default)]
        offset: Duration,
        #[serde(with = "humantime_serde")]
        mean: Duration,
    },
    Fixed {
        #[serde(with = "humantime_serde")]
        value: Duration,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    #[serde(flatten)]
    pub shape: LengthShape,
}

/// Mixture matching the measured connection lengths: 34.6% shorter than a
/// second, 93.9% shorter than a minute, and a long tail of stable peers.
pub fn calibrated_session_lengths() -> Vec<MixtureComponent> {
    vec![
        MixtureComponent {
            weight: 0.346,
            shape: LengthShape::LogUniform { min: Duration::from_millis(50), max: Duration::from_secs(1) },
        },
        MixtureComponent {
            weight: 0.593,
            shape: LengthShape::LogUniform { min: Duration::from_secs(1), max: Duration::from_secs(60) },
        },
        MixtureComponent {
            weight: 0.061,
            shape: LengthShape::Exponential { offset: Duration::from_secs(60), mean: Duration::from_secs(12 * 3600) },
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChurnKind {
    #[default]
    None,
    SessionLengths,
    Trace,
}

/// Peer and connection turnover.
///
/// Session lengths apply to unreachable peers; a departing peer is replaced
/// by a fresh one (new address, same service class) after an exponential
/// delay with rate `arrival_rate` per hour, or immediately when the rate is
/// zero. While churn is on, every peer connection also closes after an
/// exponential lifetime and the initiator reconnects elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChurnConfig {
    pub kind: ChurnKind,
    /// Mixture used by `session_lengths`; the calibrated mixture when empty.
    pub distribution: Vec<MixtureComponent>,
    /// Observed session lengths resampled by `trace`.
    pub trace: Option<Vec<HumanDuration>>,
    /// Replacement arrivals per hour per departed peer; 0 means immediate.
    pub arrival_rate: f64,
    /// Mean connection lifetime; defaults to 24 h when churn is on.
    /// Zero disables connection turnover.
    #[serde(with = "humantime_serde::option")]
    pub link_lifetime_mean: Option<Duration>,
}

/// Wrapper so that trace entries can be written as "1s", "250ms", ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HumanDuration(#[serde(with = "humantime_serde")] pub Duration);

impl Default for ChurnConfig {
    fn default() -> Self {
        ChurnConfig {
            kind: ChurnKind::None,
            distribution: Vec::new(),
            trace: None,
            arrival_rate: 0.0,
            link_lifetime_mean: None,
        }
    }
}

impl ChurnConfig {
    pub fn calibrated() -> Self {
        ChurnConfig { kind: ChurnKind::SessionLengths, ..Default::default() }
    }

    pub fn enabled(&self) -> bool {
        self.kind != ChurnKind::None
    }

    /// Effective connection lifetime mean, if connections turn over at all.
    pub fn link_lifetime(&self) -> Option<Duration> {
        match self.link_lifetime_mean {
            Some(d) if d.is_zero() => None,
            Some(d) => Some(d),
            None if self.enabled() => Some(Duration::from_secs(24 * 3600)),
            None => None,
        }
    }

    pub fn mixture(&self) -> Vec<MixtureComponent> {
        if self.distribution.is_empty() {
            calibrated_session_lengths()
        } else {
            self.distribution.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_reachable: usize,
    pub n_unreachable_useful: usize,
    pub n_unreachable_useless: usize,
    pub full_relay_out: usize,
    pub block_relay_out: usize,
    pub max_connections: usize,
    #[serde(with = "humantime_serde")]
    pub self_announce_mean: Duration,
    /// Mean delay of the self-announcement sent on a fresh connection.
    #[serde(with = "humantime_serde")]
    pub initial_announce_delay_mean: Duration,
    #[serde(with = "humantime_serde")]
    pub addr_timestamp_cutoff: Duration,
    /// Probability that a relay decision forwards to two peers instead of one.
    pub fanout_two_probability: f64,
    pub getaddr_reply_fraction: f64,
    pub getaddr_reply_cap: usize,
    #[serde(with = "humantime_serde")]
    pub getaddr_interval: Duration,
    #[serde(with = "humantime_serde")]
    pub latency: Duration,
    /// A peer relays each announcement at most once.
    pub suppress_known: bool,
    pub churn: ChurnConfig,
    pub duration_days: u32,
    pub seed: u64,
    pub monitors: usize,
    pub validation_peer: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_reachable: 200,
            n_unreachable_useful: 600,
            n_unreachable_useless: 0,
            full_relay_out: 8,
            block_relay_out: 2,
            max_connections: 125,
            self_announce_mean: Duration::from_secs(24 * 3600),
            initial_announce_delay_mean: Duration::from_secs(30),
            addr_timestamp_cutoff: Duration::from_secs(600),
            fanout_two_probability: 0.5,
            getaddr_reply_fraction: 0.23,
            getaddr_reply_cap: 1000,
            getaddr_interval: Duration::from_secs(120),
            latency: Duration::from_millis(100),
            suppress_known: true,
            churn: ChurnConfig::default(),
            duration_days: 30,
            seed: 1,
            monitors: 1,
            validation_peer: false,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_owned()));
        if self.duration_days == 0 {
            return bad("duration_days must be at least 1");
        }
        if !(1..=2).contains(&self.monitors) {
            return bad("monitors must be 1 or 2");
        }
        if self.self_announce_mean.is_zero() || self.getaddr_interval.is_zero() {
            return bad("self_announce_mean and getaddr_interval must be positive");
        }
        if self.latency.is_zero() {
            return bad("latency must be positive");
        }
        if !(0.0..=1.0).contains(&self.fanout_two_probability) {
            return bad("fanout_two_probability must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.getaddr_reply_fraction) {
            return bad("getaddr_reply_fraction must lie in [0, 1]");
        }
        if !(self.churn.arrival_rate >= 0.0 && self.churn.arrival_rate.is_finite()) {
            return bad("churn.arrival_rate must be a non-negative number");
        }
        if self.churn.kind == ChurnKind::Trace && self.churn.trace.as_ref().is_none_or(|t| t.is_empty()) {
            return bad("churn.kind = \"trace\" needs a non-empty churn.trace list");
        }
        for c in &self.churn.distribution {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return bad("mixture weights must be non-negative");
            }
            if let LengthShape::LogUniform { min, max } = c.shape {
                if min.is_zero() || max < min {
                    return bad("log_uniform needs 0 < min <= max");
                }
            }
        }
        if self.churn.kind == ChurnKind::SessionLengths
            && !self.churn.distribution.is_empty()
            && self.churn.distribution.iter().map(|c| c.weight).sum::<f64>() <= 0.0
        {
            return bad("mixture weights must not all be zero");
        }
        Ok(())
    }
}
