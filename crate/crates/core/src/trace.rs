//! Illuminance traces: CSV I/O, gap detection, daily summaries and seeded
//! surrogate generation.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::energy::{SolarCellModel, SECONDS_PER_DAY};
use crate::error::{Error, Result};

/// Sample intervals longer than this count as missing data.
pub const GAP_THRESHOLD: f64 = 3600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminanceTrace {
    samples: Vec<(f64, f64)>,
    pub position_label: String,
}

impl IlluminanceTrace {
    /// `samples` are (seconds since epoch, lux) with strictly increasing times.
    pub fn new(samples: Vec<(f64, f64)>, position_label: impl Into<String>) -> Result<Self> {
        for (i, (t, lux)) in samples.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::invalid(format!("sample {i}: timestamp is not finite")));
            }
            if !(*lux >= 0.0 && lux.is_finite()) {
                return Err(Error::invalid(format!("sample {i}: illuminance {lux} is not a non-negative number")));
            }
            if i > 0 && *t <= samples[i - 1].0 {
                return Err(Error::NonMonotone { row: i });
            }
        }
        Ok(Self {
            samples,
            position_label: position_label.into(),
        })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn start(&self) -> Option<f64> {
        self.samples.first().map(|s| s.0)
    }

    pub fn end(&self) -> Option<f64> {
        self.samples.last().map(|s| s.0)
    }

    /// Intervals longer than `threshold` seconds.
    pub fn gaps(&self, threshold: f64) -> Vec<Gap> {
        self.samples
            .windows(2)
            .filter(|w| w[1].0 - w[0].0 > threshold)
            .map(|w| Gap {
                start: w[0].0,
                end: w[1].0,
            })
            .collect()
    }

    /// Sample-and-hold onto a regular grid. Points falling in a gap read 0.
    pub fn resample(&self, cadence: f64) -> Result<Self> {
        if !(cadence > 0.0) {
            return Err(Error::invalid("resample cadence must be positive"));
        }
        let (Some(t0), Some(t1)) = (self.start(), self.end()) else {
            return Ok(self.clone());
        };
        let n = ((t1 - t0) / cadence).floor() as usize;
        let mut out = Vec::with_capacity(n + 2);
        let mut j = 0;
        for k in 0..=n {
            let t = t0 + k as f64 * cadence;
            while j + 1 < self.samples.len() && self.samples[j + 1].0 <= t {
                j += 1;
            }
            out.push((t, self.held(j)));
        }
        if out.last().map(|s| s.0) != Some(t1) {
            out.push((t1, self.samples[self.samples.len() - 1].1));
        }
        Self::new(out, self.position_label.clone())
    }

    fn held(&self, i: usize) -> f64 {
        match self.samples.get(i + 1) {
            Some(next) if next.0 - self.samples[i].0 > GAP_THRESHOLD => 0.0,
            _ => self.samples[i].1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub start: f64,
    pub end: f64,
}

impl Gap {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Reads a `timestamp_s,lux` CSV. Returns the trace and its gaps.
pub fn load_trace(path: &Path, label: &str) -> Result<(IlluminanceTrace, Vec<Gap>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "timestamp_s" || &headers[1] != "lux" {
        return Err(Error::Parse {
            line: 1,
            message: "expected header `timestamp_s,lux`".into(),
        });
    }
    let mut samples = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut rec).map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize, name: &str| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("missing {name}"),
                })?
                .parse::<f64>()
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("{name}: {e}"),
                })
        };
        let t = field(0, "timestamp_s")?;
        let lux = field(1, "lux")?;
        if !(lux >= 0.0) || !lux.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("illuminance must be non-negative, got {lux}"),
            });
        }
        if let Some(prev) = samples.last().map(|s: &(f64, f64)| s.0) {
            if !(t > prev) {
                return Err(Error::NonMonotone { row: line });
            }
        }
        samples.push((t, lux));
    }
    let trace = IlluminanceTrace::new(samples, label)?;
    let gaps = trace.gaps(GAP_THRESHOLD);
    for g in &gaps {
        log::warn!("{}: no data for {:.0} s from t = {}", path.display(), g.duration(), g.start);
    }
    Ok((trace, gaps))
}

pub fn write_trace(trace: &IlluminanceTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "timestamp_s,lux")?;
    for (t, lux) in trace.samples() {
        writeln!(w, "{t},{lux}")?;
    }
    w.flush()?;
    Ok(())
}

/// Daylight hours over which day illuminance is averaged, in local time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DayWindow {
    pub start_hour: f64,
    pub end_hour: f64,
    pub utc_offset_hours: f64,
}

impl Default for DayWindow {
    fn default() -> Self {
        Self {
            start_hour: 8.0,
            end_hour: 20.0,
            utc_offset_hours: 0.0,
        }
    }
}

impl DayWindow {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.start_hour && self.start_hour < self.end_hour && self.end_hour <= 24.0) {
            return Err(Error::invalid("day window must satisfy 0 <= start_hour < end_hour <= 24"));
        }
        if !self.utc_offset_hours.is_finite() {
            return Err(Error::invalid("utc_offset_hours must be finite"));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        (self.end_hour - self.start_hour) * 3600.0
    }

    fn offset(&self) -> f64 {
        self.utc_offset_hours * 3600.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayStat {
    /// Local calendar day, counted from the epoch.
    pub day: i64,
    pub mean_lux: f64,
    pub energy_mj_per_cm2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation.
    pub fn of(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let n = xs.clone().count();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = xs.clone().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyEnergySummary {
    pub position: String,
    pub illuminance_day_lux: MeanStd,
    pub daily_energy_mj_per_cm2: MeanStd,
    pub days: Vec<DayStat>,
    pub gaps: Vec<Gap>,
}

/// Per-day window illuminance and harvestable energy density, over every
/// local calendar day the trace covers completely. Gaps are integrated as
/// darkness.
pub fn summarize(trace: &IlluminanceTrace, cell: &SolarCellModel, window: &DayWindow) -> Result<DailyEnergySummary> {
    window.validate()?;
    let s = trace.samples();
    let off = window.offset();
    let (Some(t0), Some(t1)) = (trace.start(), trace.end()) else {
        return Err(Error::InsufficientData { needed: 2, got: 0 });
    };
    let first_day = ((t0 + off) / SECONDS_PER_DAY).ceil() as i64;
    let last_day = ((t1 + off) / SECONDS_PER_DAY).floor() as i64 - 1;
    if last_day < first_day {
        return Err(Error::invalid(format!(
            "trace {:?} covers no complete day ({:.0} s long)",
            trace.position_label,
            t1 - t0
        )));
    }
    let n_days = (last_day - first_day + 1) as usize;
    let mut energy = vec![0.0; n_days];
    let mut lux_time = vec![0.0; n_days];
    let ws = window.start_hour * 3600.0;
    let we = window.end_hour * 3600.0;

    for (i, w) in s.windows(2).enumerate() {
        let lux = trace.held(i);
        if lux == 0.0 {
            continue;
        }
        let p = cell.harvest_power(lux);
        let mut a = w[0].0 + off;
        let b = w[1].0 + off;
        while a < b {
            let day = (a / SECONDS_PER_DAY).floor();
            let day_start = day * SECONDS_PER_DAY;
            let piece_end = b.min(day_start + SECONDS_PER_DAY);
            let d = day as i64;
            if (first_day..=last_day).contains(&d) {
                let k = (d - first_day) as usize;
                energy[k] += p * (piece_end - a);
                let overlap = (piece_end.min(day_start + we) - a.max(day_start + ws)).max(0.0);
                lux_time[k] += lux * overlap;
            }
            a = piece_end;
        }
    }

    let to_density = 1e3 / cell.active_area_cm2;
    let days: Vec<DayStat> = (0..n_days)
        .map(|k| DayStat {
            day: first_day + k as i64,
            mean_lux: lux_time[k] / window.length(),
            energy_mj_per_cm2: energy[k] * to_density,
        })
        .collect();
    Ok(DailyEnergySummary {
        position: trace.position_label.clone(),
        illuminance_day_lux: MeanStd::of(days.iter().map(|d| d.mean_lux)),
        daily_energy_mj_per_cm2: MeanStd::of(days.iter().map(|d| d.energy_mj_per_cm2)),
        days,
        gaps: trace.gaps(GAP_THRESHOLD),
    })
}

/// Reported day statistics of one office position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub label: &'static str,
    pub mean_lux: f64,
    pub std_lux: f64,
    pub energy_mean_mj_per_cm2: f64,
    pub energy_std_mj_per_cm2: f64,
}

pub const REFERENCE_POSITIONS: [PositionStats; 5] = [
    PositionStats { label: "P06", mean_lux: 112.0, std_lux: 52.0, energy_mean_mj_per_cm2: 54.0, energy_std_mj_per_cm2: 33.0 },
    PositionStats { label: "P13", mean_lux: 101.0, std_lux: 46.0, energy_mean_mj_per_cm2: 49.0, energy_std_mj_per_cm2: 32.0 },
    PositionStats { label: "P14", mean_lux: 464.0, std_lux: 313.0, energy_mean_mj_per_cm2: 393.0, energy_std_mj_per_cm2: 331.0 },
    PositionStats { label: "P17", mean_lux: 356.0, std_lux: 172.0, energy_mean_mj_per_cm2: 294.0, energy_std_mj_per_cm2: 191.0 },
    PositionStats { label: "P18", mean_lux: 28.0, std_lux: 3.0, energy_mean_mj_per_cm2: 11.0, energy_std_mj_per_cm2: 7.0 },
];

pub fn reference_position(label: &str) -> Option<&'static PositionStats> {
    REFERENCE_POSITIONS.iter().find(|p| p.label.eq_ignore_ascii_case(label))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisStats {
    pub mean_lux: f64,
    pub std_lux: f64,
    pub window: DayWindow,
    pub n_days: u32,
    pub cadence_s: f64,
    /// Relative amplitude of a yearly sinusoid on the daily level; 0 disables.
    pub annual_amplitude: f64,
    pub start_s: f64,
}

impl Default for SynthesisStats {
    fn default() -> Self {
        Self {
            mean_lux: 112.0,
            std_lux: 52.0,
            window: DayWindow::default(),
            n_days: 700,
            cadence_s: 60.0,
            annual_amplitude: 0.0,
            start_s: 0.0,
        }
    }
}

impl SynthesisStats {
    pub fn for_position(p: &PositionStats, n_days: u32) -> Self {
        Self {
            mean_lux: p.mean_lux,
            std_lux: p.std_lux,
            n_days,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if !(self.mean_lux >= 0.0) || !(self.std_lux >= 0.0) {
            return Err(Error::invalid("mean_lux and std_lux must be non-negative"));
        }
        if self.n_days < 1 {
            return Err(Error::invalid("n_days must be at least 1"));
        }
        if !(self.cadence_s > 0.0 && self.cadence_s <= SECONDS_PER_DAY) {
            return Err(Error::invalid("cadence_s must lie in (0, 86400]"));
        }
        if !(0.0..1.0).contains(&self.annual_amplitude) {
            return Err(Error::invalid("annual_amplitude must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Surrogate trace: a half-sine bump over the day window whose window mean
/// is a per-day lognormal draw with the requested mean and spread. Nights
/// are dark.
pub fn synthesize_trace(stats: &SynthesisStats, label: &str, seed: u64) -> Result<IlluminanceTrace> {
    stats.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels: Vec<f64> = if stats.mean_lux == 0.0 || stats.std_lux == 0.0 {
        vec![stats.mean_lux; stats.n_days as usize]
    } else {
        let var_ln = (1.0 + (stats.std_lux / stats.mean_lux).powi(2)).ln();
        let dist = LogNormal::new(stats.mean_lux.ln() - 0.5 * var_ln, var_ln.sqrt())
            .map_err(|e| Error::invalid(format!("lognormal parameters: {e}")))?;
        (0..stats.n_days).map(|_| dist.sample(&mut rng)).collect()
    };

    let off = stats.window.offset();
    let ws = stats.window.start_hour * 3600.0;
    let len = stats.window.length();
    let n = (stats.n_days as f64 * SECONDS_PER_DAY / stats.cadence_s).round() as usize;
    let mut samples = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = stats.start_s + i as f64 * stats.cadence_s;
        let rel = t - stats.start_s;
        let day = ((rel / SECONDS_PER_DAY).floor() as usize).min(stats.n_days as usize - 1);
        let local = (t + off).rem_euclid(SECONDS_PER_DAY);
        let u = (local - ws) / len;
        let lux = if (0.0..1.0).contains(&u) {
            let seasonal = 1.0 + stats.annual_amplitude * (2.0 * PI * day as f64 / 365.0).sin();
            levels[day] * seasonal * 0.5 * PI * (PI * u).sin()
        } else {
            0.0
        };
        samples.push((t, lux));
    }
    IlluminanceTrace::new(samples, label)
}
