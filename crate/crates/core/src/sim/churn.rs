use std::time::Duration;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::config::{ChurnConfig, ChurnKind, LengthShape, MixtureComponent};

/// Delay until the next self-announcement on one connection.
pub fn announce_schedule<R: Rng + ?Sized>(rng: &mut R, mean: Duration) -> Duration {
    assert!(!mean.is_zero(), "announcement mean must be positive");
    let x: f64 = Exp::new(1.0).expect("rate 1 is valid").sample(rng);
    Duration::from_secs_f64(x * mean.as_secs_f64())
}

pub(crate) fn exp_ms<R: Rng + ?Sized>(rng: &mut R, mean: Duration) -> i64 {
    (announce_schedule(rng, mean).as_secs_f64() * 1000.0).round() as i64
}

/// Draws unreachable-peer session lengths.
#[derive(Debug, Clone)]
pub enum SessionLengths {
    Forever,
    Mixture { cumulative: Vec<f64>, shapes: Vec<LengthShape> },
    Trace(Vec<Duration>),
}

impl SessionLengths {
    pub fn from_config(cfg: &ChurnConfig) -> Self {
        match cfg.kind {
            ChurnKind::None => SessionLengths::Forever,
            ChurnKind::SessionLengths => Self::mixture(&cfg.mixture()),
            ChurnKind::Trace => {
                SessionLengths::Trace(cfg.trace.iter().flatten().map(|d| d.0).collect())
            }
        }
    }

    pub fn mixture(components: &[MixtureComponent]) -> Self {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let mut acc = 0.0;
        let cumulative = components
            .iter()
            .map(|c| {
                acc += c.weight / total;
                acc
            })
            .collect();
        SessionLengths::Mixture { cumulative, shapes: components.iter().map(|c| c.shape.clone()).collect() }
    }

    /// `None` means the peer never leaves.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Duration> {
        match self {
            SessionLengths::Forever => None,
            SessionLengths::Trace(lengths) => Some(lengths[rng.random_range(0..lengths.len())]),
            SessionLengths::Mixture { cumulative, shapes } => {
                let u: f64 = rng.random();
                let idx = cumulative.iter().position(|&c| u < c).unwrap_or(shapes.len() - 1);
                Some(sample_shape(&shapes[idx], rng))
            }
        }
    }
}

fn sample_shape<R: Rng + ?Sized>(shape: &LengthShape, rng: &mut R) -> Duration {
    match *shape {
        LengthShape::Fixed { value } => value,
        LengthShape::Exponential { offset, mean } => {
            if mean.is_zero() {
                offset
            } else {
                offset + announce_schedule(rng, mean)
            }
        }
        LengthShape::LogUniform { min, max } => {
            let (lo, hi) = (min.as_secs_f64().ln(), max.as_secs_f64().ln());
            Duration::from_secs_f64(rng.random_range(lo..=hi).exp())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::calibrated_session_lengths;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn announce_mean_and_scaling() {
        let day = Duration::from_secs(24 * 3600);
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean: f64 = (0..n).map(|_| announce_schedule(&mut rng, day).as_secs_f64()).sum::<f64>() / n as f64;
        assert!((mean / day.as_secs_f64() - 1.0).abs() < 0.01, "mean {mean}");

        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = announce_schedule(&mut a, day).as_secs_f64();
            let y = announce_schedule(&mut b, day * 2).as_secs_f64();
            assert!((2.0 * x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn calibrated_quantiles() {
        let s = SessionLengths::mixture(&calibrated_session_lengths());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let samples: Vec<Duration> = (0..n).map(|_| s.sample(&mut rng).unwrap()).collect();
        let below = |d: Duration| samples.iter().filter(|&&x| x < d).count() as f64 / n as f64;
        let (p1, p60) = (below(Duration::from_secs(1)), below(Duration::from_secs(60)));
        // Binomial standard error is about 0.001 at this n.
        assert!((p1 - 0.346).abs() < 0.005, "{p1}");
        assert!((p60 - 0.939).abs() < 0.005, "{p60}");
    }
}
