//! Double-sided two-way ranging (DS-TWR) between a tag and its anchors.
//!
//! The tag opens a round with a broadcast poll, the anchors answer in ID
//! order, and a second tag broadcast closes the round. Every device stamps
//! events with its own affine clock, so the four measured durations carry
//! the drift of whichever device measured them. The propagation estimate
//! combines them so that first-order drift cancels.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// 1 / (128 x 499.2 MHz), roughly 15.65 ps.
pub const DEFAULT_TICK: f64 = 1.0 / (128.0 * 499.2e6);

/// Hard cap on oscillator drift in parts per million.
pub const MAX_DRIFT_PPM: f64 = 100.0;

/// Ranges beyond this are treated as invalid.
pub const DEFAULT_MAX_RANGE: f64 = 150.0;

pub const DEFAULT_BASE_REPLY_DELAY: f64 = 2e-3;
pub const DEFAULT_REPLY_SLOT: f64 = 1e-3;
pub const DEFAULT_TAG_TURNAROUND: f64 = 1e-3;

/// Affine device clock: `local = offset + t * (1 + drift)`, quantized to ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    drift_ppm: f64,
    offset: f64,
    tick_duration: f64,
}

impl ClockModel {
    pub fn new(drift_ppm: f64, offset: f64, tick_duration: f64) -> Result<Self> {
        Self::with_cap(drift_ppm, offset, tick_duration, MAX_DRIFT_PPM)
    }

    pub fn with_cap(drift_ppm: f64, offset: f64, tick_duration: f64, cap_ppm: f64) -> Result<Self> {
        if !drift_ppm.is_finite() || drift_ppm.abs() > cap_ppm {
            return Err(Error::invalid(format!(
                "clock drift {drift_ppm} ppm exceeds the {cap_ppm} ppm cap"
            )));
        }
        if !(tick_duration > 0.0) || !tick_duration.is_finite() {
            return Err(Error::invalid("tick duration must be positive"));
        }
        if !offset.is_finite() {
            return Err(Error::invalid("clock offset must be finite"));
        }
        Ok(Self {
            drift_ppm,
            offset,
            tick_duration,
        })
    }

    /// Drift-free clock at the default tick grain.
    pub fn ideal() -> Self {
        Self {
            drift_ppm: 0.0,
            offset: 0.0,
            tick_duration: DEFAULT_TICK,
        }
    }

    pub fn drift_ppm(&self) -> f64 {
        self.drift_ppm
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn tick_duration(&self) -> f64 {
        self.tick_duration
    }

    /// Local tick count at true time `t` (seconds).
    pub fn local_ticks(&self, t: f64) -> i64 {
        let scale = 1.0 + self.drift_ppm * 1e-6;
        (self.offset / self.tick_duration + t * scale / self.tick_duration).round() as i64
    }
}

/// The four DS-TWR durations, in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimestampQuad {
    pub t_round1: u64,
    pub t_reply1: u64,
    pub t_round2: u64,
    pub t_reply2: u64,
}

impl TimestampQuad {
    pub fn new(t_round1: u64, t_reply1: u64, t_round2: u64, t_reply2: u64) -> Self {
        Self {
            t_round1,
            t_reply1,
            t_round2,
            t_reply2,
        }
    }
}

/// Propagation time in ticks from the double-sided combination
/// `(Tround1*Tround2 - Treply1*Treply2) / (Tround1 + Tround2 + Treply1 + Treply2)`.
///
/// The result may be negative for inconsistent quads; callers gate on it.
pub fn ds_twr_propagation(q: &TimestampQuad) -> Result<f64> {
    let denom = q.t_round1 as u128 + q.t_round2 as u128 + q.t_reply1 as u128 + q.t_reply2 as u128;
    if denom == 0 {
        return Err(Error::invalid("DS-TWR denominator is zero"));
    }
    // Products of 40-bit durations overflow f64's exact range, so form the
    // numerator in i128 and divide in integers before converting; the
    // quotient is exact and only the fractional part is rounded.
    let prod = |a: u64, b: u64| (a as i128).checked_mul(b as i128);
    let num = match (prod(q.t_round1, q.t_round2), prod(q.t_reply1, q.t_reply2)) {
        (Some(r), Some(p)) => r - p,
        _ => return Err(Error::invalid("DS-TWR durations overflow")),
    };
    let denom = denom as i128;
    let (whole, rem) = (num / denom, num % denom);
    Ok(whole as f64 + rem as f64 / denom as f64)
}

/// Single-sided estimate `(Tround1 - Treply1) / 2`, the drift-sensitive baseline.
pub fn ss_twr_propagation(q: &TimestampQuad) -> f64 {
    (q.t_round1 as f64 - q.t_reply1 as f64) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub anchor_id: usize,
    pub quad: TimestampQuad,
    pub propagation_time: f64,
    pub distance: f64,
    pub valid: bool,
}

/// Convert a quad into a distance and gate it against `[0, max_range]`.
pub fn range_from_quad(
    anchor_id: usize,
    q: &TimestampQuad,
    tick_duration: f64,
    max_range: f64,
) -> Result<RangeMeasurement> {
    let propagation_time = ds_twr_propagation(q)? * tick_duration;
    let distance = propagation_time * SPEED_OF_LIGHT;
    let valid = propagation_time >= 0.0 && distance <= max_range && distance.is_finite();
    Ok(RangeMeasurement {
        anchor_id,
        quad: *q,
        propagation_time,
        distance,
        valid,
    })
}

/// One tag, several anchors, and everything that shapes their exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeScenario {
    pub tag_position: Vector3<f64>,
    pub anchor_positions: Vec<Vector3<f64>>,
    pub tag_clock: ClockModel,
    pub anchor_clocks: Vec<ClockModel>,
    /// Anchor processing time between poll reception and response, seconds.
    pub reply_delays: Vec<f64>,
    /// Tag delay after the last reply slot before the closing broadcast.
    pub tag_turnaround: f64,
    pub noise_sigma: f64,
    /// Per-anchor positive range bias (non-line-of-sight excess path), meters.
    pub nlos_bias: Vec<f64>,
    /// Per-anchor reception failure.
    pub lost: Vec<bool>,
    pub max_range: f64,
}

impl ExchangeScenario {
    /// Ideal clocks, staggered default reply slots, no noise.
    pub fn ideal(tag_position: Vector3<f64>, anchor_positions: Vec<Vector3<f64>>) -> Self {
        let n = anchor_positions.len();
        Self {
            tag_position,
            anchor_positions,
            tag_clock: ClockModel::ideal(),
            anchor_clocks: vec![ClockModel::ideal(); n],
            reply_delays: default_reply_delays(n),
            tag_turnaround: DEFAULT_TAG_TURNAROUND,
            noise_sigma: 0.0,
            nlos_bias: vec![0.0; n],
            lost: vec![false; n],
            max_range: DEFAULT_MAX_RANGE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.anchor_positions.len();
        if n == 0 {
            return Err(Error::invalid("scenario has no anchors"));
        }
        for (name, len) in [
            ("anchor_clocks", self.anchor_clocks.len()),
            ("reply_delays", self.reply_delays.len()),
            ("nlos_bias", self.nlos_bias.len()),
            ("lost", self.lost.len()),
        ] {
            if len != n {
                return Err(Error::invalid(format!("{name} has {len} entries for {n} anchors")));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        if self.nlos_bias.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::invalid("nlos_bias must be non-negative"));
        }
        if self.reply_delays.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::invalid("reply delays must be positive"));
        }
        if !(self.tag_turnaround > 0.0) {
            return Err(Error::invalid("tag_turnaround must be positive"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("max_range must be positive"));
        }
        let tick = self.tag_clock.tick_duration();
        if self.anchor_clocks.iter().any(|c| c.tick_duration() != tick) {
            return Err(Error::invalid("all clocks must share one tick duration"));
        }
        Ok(())
    }

    pub fn geometric_distance(&self, anchor: usize) -> f64 {
        (self.anchor_positions[anchor] - self.tag_position).norm()
    }

    /// Perturbed one-way time of flight for an anchor.
    fn sample_tof<R: Rng + ?Sized>(&self, anchor: usize, rng: &mut R) -> f64 {
        let noise = if self.noise_sigma > 0.0 {
            Normal::new(0.0, self.noise_sigma)
                .expect("sigma validated")
                .sample(rng)
        } else {
            0.0
        };
        (self.geometric_distance(anchor) + noise + self.nlos_bias[anchor]) / SPEED_OF_LIGHT
    }

    /// True time of the closing broadcast, relative to the opening poll.
    fn final_broadcast_time(&self) -> f64 {
        let slowest = self
            .anchor_positions
            .iter()
            .zip(&self.reply_delays)
            .map(|(a, r)| 2.0 * (a - self.tag_position).norm() / SPEED_OF_LIGHT + r)
            .fold(0.0, f64::max);
        slowest + self.tag_turnaround
    }

    fn quad_for(&self, anchor: usize, tof: f64, final_tx: f64) -> TimestampQuad {
        let tag = &self.tag_clock;
        let anc = &self.anchor_clocks[anchor];
        let reply = self.reply_delays[anchor];

        let poll_tx = 0.0;
        let poll_rx = tof;
        let resp_tx = poll_rx + reply;
        let resp_rx = resp_tx + tof;
        // Keep causality when noise shortens the flight enough to overtake the slot.
        let final_tx = final_tx.max(resp_rx);
        let final_rx = final_tx + tof;

        let dur = |a: i64, b: i64| (b - a).max(0) as u64;
        TimestampQuad {
            t_round1: dur(tag.local_ticks(poll_tx), tag.local_ticks(resp_rx)),
            t_reply1: dur(anc.local_ticks(poll_rx), anc.local_ticks(resp_tx)),
            t_round2: dur(anc.local_ticks(resp_tx), anc.local_ticks(final_rx)),
            t_reply2: dur(tag.local_ticks(resp_rx), tag.local_ticks(final_tx)),
        }
    }
}

/// Staggered reply slots: base delay plus one slot per anchor index.
pub fn default_reply_delays(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| DEFAULT_BASE_REPLY_DELAY + i as f64 * DEFAULT_REPLY_SLOT)
        .collect()
}

/// Timestamps one tag/anchor exchange as both clocks would see it.
pub fn simulate_exchange<R: Rng + ?Sized>(
    s: &ExchangeScenario,
    anchor_id: usize,
    rng: &mut R,
) -> Result<TimestampQuad> {
    if anchor_id >= s.anchor_positions.len() {
        return Err(Error::invalid(format!("anchor {anchor_id} out of range")));
    }
    let tof = s.sample_tof(anchor_id, rng);
    Ok(s.quad_for(anchor_id, tof, s.final_broadcast_time()))
}

/// Runs the two-broadcast round against every anchor, in anchor order.
///
/// Lost anchors still consume their noise draw so that the stream of random
/// numbers does not depend on which packets were dropped.
pub fn run_ranging_round<R: Rng + ?Sized>(
    s: &ExchangeScenario,
    rng: &mut R,
) -> Result<Vec<RangeMeasurement>> {
    s.validate()?;
    let final_tx = s.final_broadcast_time();
    let tick = s.tag_clock.tick_duration();
    (0..s.anchor_positions.len())
        .map(|i| {
            let tof = s.sample_tof(i, rng);
            if s.lost[i] {
                return Ok(RangeMeasurement {
                    anchor_id: i,
                    quad: TimestampQuad::default(),
                    propagation_time: f64::NAN,
                    distance: f64::NAN,
                    valid: false,
                });
            }
            let q = s.quad_for(i, tof, final_tx);
            range_from_quad(i, &q, tick, s.max_range)
        })
        .collect()
}
