//! Adversarial link model: seeded loss, fixed latency and a per-direction
//! FIFO bandwidth queue. Times are virtual microseconds.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConditions {
    /// `None` means unlimited.
    #[serde(default)]
    pub bandwidth_kbps: Option<f64>,
    #[serde(default, alias = "loss")]
    pub loss_probability: f64,
    #[serde(default)]
    pub latency_ms: f64,
}

impl Default for NetworkConditions {
    fn default() -> Self {
        Self::healthy()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid network conditions: {0}")]
pub struct InvalidConditions(&'static str);

impl NetworkConditions {
    pub fn healthy() -> Self {
        Self {
            bandwidth_kbps: None,
            loss_probability: 0.0,
            latency_ms: 0.0,
        }
    }

    pub fn new(bandwidth_kbps: Option<f64>, loss_probability: f64, latency_ms: f64) -> Self {
        Self {
            bandwidth_kbps,
            loss_probability,
            latency_ms,
        }
    }

    pub fn validate(&self) -> Result<(), InvalidConditions> {
        if let Some(bw) = self.bandwidth_kbps {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(InvalidConditions("bandwidth must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.loss_probability) {
            return Err(InvalidConditions("loss probability must be in [0, 1)"));
        }
        if !(self.latency_ms.is_finite() && self.latency_ms >= 0.0) {
            return Err(InvalidConditions("latency must be non-negative"));
        }
        Ok(())
    }

    /// Serialization time of `bytes` in microseconds, rounded up.
    pub fn transmission_us(&self, bytes: usize) -> u64 {
        match self.bandwidth_kbps {
            None => 0,
            Some(kbps) => ((bytes as f64 * 8.0 * 1000.0) / kbps).ceil() as u64,
        }
    }

    pub fn latency_us(&self) -> u64 {
        (self.latency_ms * 1000.0).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Scheduled { arrival_delay_us: u64 },
    Dropped,
}

/// One transmission on a link: `[start_us, end_us)` carrying `bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub start_us: u64,
    pub end_us: u64,
    pub bits: u64,
}

/// State of one direction of a link.
#[derive(Debug, Clone, Default)]
pub struct LinkState {
    busy_until_us: u64,
    pub sent: u64,
    pub dropped: u64,
    pub delivered_bits: u64,
    log: Option<Vec<Transmission>>,
}

impl LinkState {
    pub fn with_log() -> Self {
        Self {
            log: Some(Vec::new()),
            ..Self::default()
        }
    }

    pub fn transmissions(&self) -> &[Transmission] {
        self.log.as_deref().unwrap_or(&[])
    }
}

/// Decides the fate of a `size_bytes` message offered at `now_us`. Loss is
/// drawn first and a dropped message occupies no link time. Otherwise the
/// message starts after the previous one on this link finishes.
pub fn deliver<R: Rng>(
    link: &NetworkConditions,
    state: &mut LinkState,
    now_us: u64,
    size_bytes: usize,
    rng: &mut R,
) -> Delivery {
    state.sent += 1;
    if link.loss_probability > 0.0 && rng.gen_bool(link.loss_probability) {
        state.dropped += 1;
        return Delivery::Dropped;
    }
    let start = now_us.max(state.busy_until_us);
    let end = start + link.transmission_us(size_bytes);
    state.busy_until_us = end;
    let bits = size_bytes as u64 * 8;
    state.delivered_bits += bits;
    if let Some(log) = &mut state.log {
        log.push(Transmission {
            start_us: start,
            end_us: end,
            bits,
        });
    }
    Delivery::Scheduled {
        arrival_delay_us: end - now_us + link.latency_us(),
    }
}

/// True when no set of transmissions ever exceeds `kbps`: intervals are
/// disjoint and each one is long enough for its bits.
pub fn respects_bandwidth(log: &[Transmission], kbps: f64) -> bool {
    let mut prev_end = 0;
    for t in log {
        if t.start_us < prev_end {
            return false;
        }
        let needed = (t.bits as f64 * 1000.0) / kbps;
        if ((t.end_us - t.start_us) as f64) + 1e-6 < needed {
            return false;
        }
        prev_end = t.end_us;
    }
    true
}
