use std::thread;

use serde::{Deserialize, Serialize};

use super::{BatteryState, ConverterModel, SolarCellModel, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::trace::IlluminanceTrace;

/// Charge state every neutrality run starts from.
pub const NEUTRALITY_INITIAL_SOC: f64 = 0.5;

/// Electrical demand: a constant floor plus lump-sum events.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadSchedule {
    pub base_power: f64,
    /// (time, joules), sorted by time.
    events: Vec<(f64, f64)>,
}

impl LoadSchedule {
    pub fn constant(base_power: f64) -> Result<Self> {
        Self::new(base_power, Vec::new())
    }

    pub fn new(base_power: f64, mut events: Vec<(f64, f64)>) -> Result<Self> {
        if !(base_power >= 0.0 && base_power.is_finite()) {
            return Err(Error::invalid("base load power must be finite and non-negative"));
        }
        if events.iter().any(|(t, e)| !t.is_finite() || !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::invalid("load events need finite times and non-negative energies"));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { base_power, events })
    }

    /// Events of `energy` joules every `period` seconds over `[start, end)`.
    pub fn periodic(base_power: f64, energy: f64, start: f64, end: f64, period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::invalid("event period must be positive"));
        }
        let n = ((end - start) / period).ceil().max(0.0) as usize;
        let events = (0..n)
            .map(|k| (start + k as f64 * period, energy))
            .filter(|(t, _)| *t < end)
            .collect();
        Self::new(base_power, events)
    }

    pub fn events(&self) -> &[(f64, f64)] {
        &self.events
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub max_step: f64,
    /// Book energy the full battery cannot take as consumed by the circuit
    /// instead of curtailed.
    pub surplus_sink: bool,
    /// Sample intervals longer than this are treated as dark.
    pub gap_threshold: f64,
    /// Timeline spacing in seconds; `None` keeps no timeline, `Some(0.0)`
    /// records every step.
    pub record_interval: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            max_step: 60.0,
            surplus_sink: false,
            gap_threshold: 3600.0,
            record_interval: None,
        }
    }
}

/// One integration step, powers averaged over `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    /// Charge state at the end of the step.
    pub soc: f64,
    pub p_harvest: f64,
    pub p_conversion_loss: f64,
    pub p_load: f64,
    pub p_unmet: f64,
    pub p_selfdischarge: f64,
    pub p_curtailed: f64,
}

/// Energy totals in joules over one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// Cell output at its maximum power point.
    pub harvested: f64,
    pub conversion_loss: f64,
    /// Load actually served.
    pub consumed: f64,
    /// Load that found the battery empty.
    pub unmet_load: f64,
    pub self_discharged: f64,
    /// Rejected by the overcharge cutoff.
    pub curtailed: f64,
    /// Surplus booked as consumed when running with a surplus sink.
    pub surplus_consumed: f64,
    pub stored_delta: f64,
    pub initial_soc: f64,
    pub final_soc: f64,
    pub min_soc: f64,
    pub max_soc: f64,
    pub duration_s: f64,
    pub steps: u64,
    /// Worst per-step imbalance relative to the energy moved in that step.
    pub max_step_imbalance: f64,
}

impl EnergyLedger {
    /// Net energy per day left after base load and self-discharge.
    pub fn surplus_per_day(&self) -> f64 {
        if self.duration_s <= 0.0 {
            return 0.0;
        }
        self.stored_delta / (self.duration_s / SECONDS_PER_DAY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub ledger: EnergyLedger,
    pub timeline: Vec<StepRecord>,
    pub final_battery: BatteryState,
}

/// Euler integration of the harvest, convert, store and load path over the
/// trace span. Illuminance is held between samples.
pub fn simulate(
    trace: &IlluminanceTrace,
    cell: &SolarCellModel,
    converter: &ConverterModel,
    battery: &BatteryState,
    load: &LoadSchedule,
    opts: &SimOptions,
) -> Result<SimOutcome> {
    cell.validate()?;
    converter.validate()?;
    battery.validate()?;
    if !(opts.max_step > 0.0) || !(opts.gap_threshold > 0.0) {
        return Err(Error::invalid("max_step and gap_threshold must be positive"));
    }
    let samples = trace.samples();
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }

    let cap = battery.capacity;
    let e_max = battery.soc_limit() * cap;
    let leak = battery.leak_rate_per_second();
    let mut e = battery.energy();
    let mut ledger = EnergyLedger {
        initial_soc: battery.soc,
        min_soc: battery.soc,
        max_soc: battery.soc,
        ..Default::default()
    };
    let mut timeline = Vec::new();
    let mut next_record = samples[0].0;
    let events = load.events();
    let mut ev = events.partition_point(|(t, _)| *t < samples[0].0);
    let t_end = samples[samples.len() - 1].0;

    for w in samples.windows(2) {
        let (t0, lux) = w[0];
        let span = w[1].0 - t0;
        let p_in = if span > opts.gap_threshold { 0.0 } else { cell.harvest_power(lux) };
        let n = (span / opts.max_step).ceil().max(1.0) as u64;
        let h = span / n as f64;
        for k in 0..n {
            let t = t0 + k as f64 * h;
            let t_next = if k + 1 == n { w[1].0 } else { t + h };
            let last = t_next >= t_end;

            let harvested = p_in * h;
            let delivered = converter.output(p_in, battery.voltage(e / cap)) * h;
            let loss = harvested - delivered;
            let mut demand = load.base_power * h;
            while ev < events.len() && (events[ev].0 < t_next || (last && events[ev].0 <= t_end)) {
                demand += events[ev].1;
                ev += 1;
            }
            let leaked = e * leak * h;

            let mut new_e = e + delivered - demand - leaked;
            let mut rejected = 0.0;
            if new_e > e_max {
                rejected = (new_e - e_max).min(delivered);
                new_e -= rejected;
            }
            let mut unmet = 0.0;
            if new_e < 0.0 {
                unmet = (-new_e).min(demand);
                new_e += unmet;
            }
            let new_e = new_e.clamp(0.0, cap);
            let served = demand - unmet;

            let delta = new_e - e;
            let imbalance = harvested - (delta + served + leaked + rejected + loss);
            let scale = harvested.max(served).max(leaked).max(delta.abs()).max(f64::MIN_POSITIVE);
            ledger.max_step_imbalance = ledger.max_step_imbalance.max(imbalance.abs() / scale);

            ledger.harvested += harvested;
            ledger.conversion_loss += loss;
            ledger.consumed += served;
            ledger.unmet_load += unmet;
            ledger.self_discharged += leaked;
            if opts.surplus_sink {
                ledger.surplus_consumed += rejected;
            } else {
                ledger.curtailed += rejected;
            }
            ledger.steps += 1;
            e = new_e;
            let soc = e / cap;
            ledger.min_soc = ledger.min_soc.min(soc);
            ledger.max_soc = ledger.max_soc.max(soc);

            if let Some(interval) = opts.record_interval {
                if t >= next_record || last {
                    timeline.push(StepRecord {
                        t,
                        dt: h,
                        soc,
                        p_harvest: harvested / h,
                        p_conversion_loss: loss / h,
                        p_load: served / h,
                        p_unmet: unmet / h,
                        p_selfdischarge: leaked / h,
                        p_curtailed: rejected / h,
                    });
                    while interval > 0.0 && next_record <= t {
                        next_record += interval;
                    }
                }
            }
        }
    }

    ledger.final_soc = e / cap;
    ledger.stored_delta = e - battery.energy();
    ledger.duration_s = t_end - samples[0].0;
    let final_battery = BatteryState {
        soc: ledger.final_soc,
        ..battery.clone()
    };
    Ok(SimOutcome {
        ledger,
        timeline,
        final_battery,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Self-discharge, fraction per month.
    pub rate: f64,
    pub final_soc: f64,
    pub min_soc: f64,
    pub max_soc: f64,
}

/// Runs one simulation per self-discharge rate, in parallel, each from the
/// neutrality starting charge.
#[allow(clippy::too_many_arguments)]
pub fn neutrality_sweep(
    trace: &IlluminanceTrace,
    cell: &SolarCellModel,
    converter: &ConverterModel,
    battery_template: &BatteryState,
    load: &LoadSchedule,
    rates: &[f64],
    opts: &SimOptions,
) -> Result<Vec<SweepPoint>> {
    if rates.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::invalid("self-discharge rates must be non-negative"));
    }
    let opts = SimOptions {
        record_interval: None,
        ..opts.clone()
    };
    let run = |rate: f64| -> Result<SweepPoint> {
        let battery = BatteryState {
            soc: NEUTRALITY_INITIAL_SOC,
            self_discharge_rate: rate,
            ..battery_template.clone()
        };
        let l = simulate(trace, cell, converter, &battery, load, &opts)?.ledger;
        Ok(SweepPoint {
            rate,
            final_soc: l.final_soc,
            min_soc: l.min_soc,
            max_soc: l.max_soc,
        })
    };
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(rates.len().max(1));
    let chunk = rates.len().div_ceil(workers).max(1);
    thread::scope(|s| {
        let handles: Vec<_> = rates
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|r| run(*r)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

/// Self-discharge rate at which the run ends where it started, located by
/// bisection within `[lo, hi]`. `None` when the bracket holds no crossing.
#[allow(clippy::too_many_arguments)]
pub fn neutrality_crossing(
    trace: &IlluminanceTrace,
    cell: &SolarCellModel,
    converter: &ConverterModel,
    battery_template: &BatteryState,
    load: &LoadSchedule,
    (mut lo, mut hi): (f64, f64),
    tolerance: f64,
    opts: &SimOptions,
) -> Result<Option<f64>> {
    let balance = |rate: f64| -> Result<f64> {
        let p = neutrality_sweep(trace, cell, converter, battery_template, load, &[rate], opts)?;
        Ok(p[0].final_soc - NEUTRALITY_INITIAL_SOC)
    };
    if balance(lo)? < 0.0 || balance(hi)? > 0.0 {
        return Ok(None);
    }
    while hi - lo > tolerance {
        // Evaluate a handful of interior points per round to use all cores.
        let k = 7;
        let grid: Vec<f64> = (1..=k).map(|i| lo + (hi - lo) * i as f64 / (k + 1) as f64).collect();
        let pts = neutrality_sweep(trace, cell, converter, battery_template, load, &grid, opts)?;
        let mut new_lo = lo;
        let mut new_hi = hi;
        for p in &pts {
            if p.final_soc - NEUTRALITY_INITIAL_SOC >= 0.0 {
                new_lo = p.rate;
            } else {
                new_hi = p.rate;
                break;
            }
        }
        lo = new_lo;
        hi = new_hi;
    }
    Ok(Some(0.5 * (lo + hi)))
}
