use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest conversion efficiency the boost stage reaches.
pub const EFFICIENCY_CEILING: f64 = 0.91;

/// Boost converter efficiency over (input power, battery voltage), bilinear
/// between grid points and held flat beyond the grid edges.
///
/// The default map is synthetic: only its 91 % ceiling is a measured figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterModel {
    pub input_powers: Vec<f64>,
    pub battery_voltages: Vec<f64>,
    /// `efficiency[v][p]`, one row per battery-voltage grid point.
    pub efficiency: Vec<Vec<f64>>,
    pub quiescent_power: f64,
}

impl Default for ConverterModel {
    fn default() -> Self {
        let row = vec![0.0, 0.60, 0.80, 0.88, 0.91];
        Self {
            input_powers: vec![1e-6, 10e-6, 100e-6, 1e-3, 10e-3],
            battery_voltages: vec![3.4, 4.15],
            efficiency: vec![row.clone(), row],
            quiescent_power: 0.0,
        }
    }
}

fn bracket(grid: &[f64], x: f64) -> (usize, usize, f64) {
    if grid.len() == 1 || x <= grid[0] {
        return (0, 0, 0.0);
    }
    let last = grid.len() - 1;
    if x >= grid[last] {
        return (last, last, 0.0);
    }
    let hi = grid.partition_point(|g| *g <= x);
    let lo = hi - 1;
    (lo, hi, (x - grid[lo]) / (grid[hi] - grid[lo]))
}

impl ConverterModel {
    pub fn validate(&self) -> Result<()> {
        let increasing = |g: &[f64]| !g.is_empty() && g.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&self.input_powers) || !increasing(&self.battery_voltages) {
            return Err(Error::invalid("converter grids must be non-empty and strictly increasing"));
        }
        if self.efficiency.len() != self.battery_voltages.len()
            || self.efficiency.iter().any(|r| r.len() != self.input_powers.len())
        {
            return Err(Error::invalid("efficiency table shape does not match its grids"));
        }
        if self
            .efficiency
            .iter()
            .flatten()
            .any(|e| !(*e >= 0.0 && *e <= EFFICIENCY_CEILING))
        {
            return Err(Error::invalid(format!(
                "efficiencies must lie in [0, {EFFICIENCY_CEILING}]"
            )));
        }
        if !(self.quiescent_power >= 0.0) {
            return Err(Error::invalid("quiescent_power must be non-negative"));
        }
        Ok(())
    }

    pub fn efficiency(&self, input_power: f64, battery_voltage: f64) -> f64 {
        if !(input_power > 0.0) {
            return 0.0;
        }
        let (p0, p1, tp) = bracket(&self.input_powers, input_power);
        let (v0, v1, tv) = bracket(&self.battery_voltages, battery_voltage);
        let at = |v: usize| self.efficiency[v][p0] * (1.0 - tp) + self.efficiency[v][p1] * tp;
        at(v0) * (1.0 - tv) + at(v1) * tv
    }

    /// Power delivered to the battery node, watts.
    pub fn output(&self, input_power: f64, battery_voltage: f64) -> f64 {
        self.efficiency(input_power, battery_voltage) * input_power.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_points() {
        let c = ConverterModel::default();
        c.validate().unwrap();
        assert_eq!(c.efficiency(0.0, 3.7), 0.0);
        assert_eq!(c.output(0.0, 3.7), 0.0);
        assert_eq!(c.efficiency(0.5e-6, 3.7), 0.0);
        assert!((c.efficiency(10e-6, 3.7) - 0.60).abs() < 1e-12);
        assert!((c.efficiency(100e-6, 3.9) - 0.80).abs() < 1e-12);
        assert!((c.efficiency(1e-3, 3.5) - 0.88).abs() < 1e-12);
        assert!((c.efficiency(50e-3, 4.0) - 0.91).abs() < 1e-12);
        assert!((c.efficiency(55e-6, 3.7) - 0.70).abs() < 1e-12);
    }

    #[test]
    fn bilinear_in_voltage() {
        let c = ConverterModel {
            efficiency: vec![vec![0.0, 0.5, 0.6, 0.7, 0.8], vec![0.0, 0.7, 0.8, 0.9, 0.9]],
            ..Default::default()
        };
        c.validate().unwrap();
        let mid_v = (3.4 + 4.15) / 2.0;
        assert!((c.efficiency(10e-6, mid_v) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ceiling_enforced() {
        let mut c = ConverterModel::default();
        c.efficiency[0][4] = 0.95;
        assert!(c.validate().is_err());
    }

    #[test]
    fn efficiency_never_exceeds_ceiling() {
        let c = ConverterModel::default();
        for k in 0..200 {
            let p = 10f64.powf(-7.0 + k as f64 * 0.03);
            let e = c.efficiency(p, 3.8);
            assert!((0.0..=EFFICIENCY_CEILING).contains(&e));
        }
    }
}
