use serde::{Deserialize, Serialize};

use super::SECONDS_PER_MONTH;
use crate::error::{Error, Result};

/// Rechargeable cell: capacity, charge state and self-discharge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryState {
    /// Usable energy at full charge, joules.
    pub capacity: f64,
    pub soc: f64,
    /// Fraction of the current charge lost per 30-day month.
    pub self_discharge_rate: f64,
    pub overcharge_voltage: f64,
    /// Piecewise-linear open-circuit curve as (soc, volts) points, soc ascending.
    pub voltage_curve: Vec<(f64, f64)>,
}

impl Default for BatteryState {
    fn default() -> Self {
        Self {
            // 50 mAh at 3.7 V nominal.
            capacity: 0.050 * 3600.0 * 3.7,
            soc: 0.5,
            self_discharge_rate: 0.03,
            overcharge_voltage: 4.2,
            voltage_curve: vec![(0.0, 3.4), (1.0, 4.15)],
        }
    }
}

impl BatteryState {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0) {
            return Err(Error::invalid("battery capacity must be positive"));
        }
        if !(0.0..=1.0).contains(&self.soc) {
            return Err(Error::invalid("soc must lie in [0, 1]"));
        }
        if !(self.self_discharge_rate >= 0.0) {
            return Err(Error::invalid("self_discharge_rate must be non-negative"));
        }
        let c = &self.voltage_curve;
        if c.len() < 2
            || c.first().map(|p| p.0) != Some(0.0)
            || c.last().map(|p| p.0) != Some(1.0)
            || c.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 >= w[0].1))
        {
            return Err(Error::invalid(
                "voltage_curve must span soc 0..1 with increasing soc and non-decreasing voltage",
            ));
        }
        Ok(())
    }

    pub fn voltage(&self, soc: f64) -> f64 {
        let c = &self.voltage_curve;
        let s = soc.clamp(0.0, 1.0);
        let hi = c.partition_point(|p| p.0 < s).clamp(1, c.len() - 1);
        let (a, b) = (c[hi - 1], c[hi]);
        a.1 + (b.1 - a.1) * (s - a.0) / (b.0 - a.0)
    }

    /// Highest charge state reachable before the overcharge cutoff.
    pub fn soc_limit(&self) -> f64 {
        let c = &self.voltage_curve;
        if c.last().is_none_or(|p| p.1 < self.overcharge_voltage) {
            return 1.0;
        }
        for w in c.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b.1 >= self.overcharge_voltage {
                if a.1 >= self.overcharge_voltage {
                    return a.0;
                }
                return a.0 + (b.0 - a.0) * (self.overcharge_voltage - a.1) / (b.1 - a.1);
            }
        }
        1.0
    }

    pub fn energy(&self) -> f64 {
        self.soc * self.capacity
    }

    /// Continuous self-discharge rate, 1/s.
    pub fn leak_rate_per_second(&self) -> f64 {
        self.self_discharge_rate / SECONDS_PER_MONTH
    }
}
