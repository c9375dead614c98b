use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flexible solar cell at its maximum power point.
///
/// Output power is a polynomial in illuminance (ascending coefficients, watts
/// per lux^k for the whole active area). The default cell is 70 mm x 37 mm.
/// Its linear term places a constant 112 lux over a 12-hour day at
/// 54 mJ/cm^2, and its quadratic term is the least-squares fit (in relative
/// daily-energy error, with that point held fixed) to four further office
/// positions whose day-illuminance statistics feed the surrogate traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolarCellModel {
    pub active_area_cm2: f64,
    pub mpp_coefficients: Vec<f64>,
    pub voc_fraction_at_mpp: f64,
    /// Upper end of the characterized range; above it the polynomial is
    /// continued along its tangent.
    pub calibrated_max_lux: f64,
}

pub const DEFAULT_LINEAR_W_PER_LUX: f64 = 2.484_977_011_430_147_4e-7;
pub const DEFAULT_QUADRATIC_W_PER_LUX2: f64 = 3.621_857_040_802_248e-10;

static EXTRAPOLATION_WARNED: AtomicBool = AtomicBool::new(false);

impl Default for SolarCellModel {
    fn default() -> Self {
        Self {
            active_area_cm2: 7.0 * 3.7,
            mpp_coefficients: vec![0.0, DEFAULT_LINEAR_W_PER_LUX, DEFAULT_QUADRATIC_W_PER_LUX2],
            voc_fraction_at_mpp: 0.75,
            calibrated_max_lux: 2000.0,
        }
    }
}

impl SolarCellModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.active_area_cm2 > 0.0) {
            return Err(Error::invalid("active_area_cm2 must be positive"));
        }
        if !(self.calibrated_max_lux > 0.0) {
            return Err(Error::invalid("calibrated_max_lux must be positive"));
        }
        if !(self.voc_fraction_at_mpp > 0.0 && self.voc_fraction_at_mpp <= 1.0) {
            return Err(Error::invalid("voc_fraction_at_mpp must be in (0, 1]"));
        }
        match self.mpp_coefficients.first() {
            Some(c0) if *c0 == 0.0 => {}
            _ => return Err(Error::invalid("mpp polynomial must vanish at 0 lux")),
        }
        let n = 2000;
        let mut prev = 0.0;
        for i in 0..=n {
            let lux = self.calibrated_max_lux * i as f64 / n as f64;
            let p = self.poly(lux);
            if p < 0.0 || p < prev {
                return Err(Error::invalid(format!(
                    "mpp polynomial is negative or decreasing at {lux:.1} lux"
                )));
            }
            prev = p;
        }
        Ok(())
    }

    fn poly(&self, lux: f64) -> f64 {
        self.mpp_coefficients.iter().rev().fold(0.0, |acc, c| acc * lux + c)
    }

    fn poly_slope(&self, lux: f64) -> f64 {
        self.mpp_coefficients
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * lux + k as f64 * c)
    }

    /// MPP output power in watts.
    pub fn harvest_power(&self, illuminance: f64) -> f64 {
        if !(illuminance > 0.0) {
            return 0.0;
        }
        let top = self.calibrated_max_lux;
        let p = if illuminance <= top {
            self.poly(illuminance)
        } else {
            if !EXTRAPOLATION_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!("illuminance {illuminance:.0} lux above calibrated {top:.0} lux, extrapolating linearly");
            }
            self.poly(top) + self.poly_slope(top) * (illuminance - top)
        };
        p.max(0.0)
    }

    /// MPP output per square centimeter of active area, W/cm^2.
    pub fn harvest_density(&self, illuminance: f64) -> f64 {
        self.harvest_power(illuminance) / self.active_area_cm2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dark_cell() {
        assert_eq!(SolarCellModel::default().harvest_power(0.0), 0.0);
        assert_eq!(SolarCellModel::default().harvest_power(-5.0), 0.0);
    }

    #[test]
    fn office_light_power() {
        let p = SolarCellModel::default().harvest_power(112.0);
        assert!((p - 32.375e-6).abs() < 1e-9, "{p}");
        // 12 h at 112 lux, per cm^2, in mJ.
        let e = SolarCellModel::default().harvest_density(112.0) * 43_200.0 * 1e3;
        assert!((e - 54.0).abs() < 1e-9);
    }

    #[test]
    fn superlinear_with_quadratic_term() {
        let c = SolarCellModel::default();
        assert!(c.harvest_power(464.0) / c.harvest_power(112.0) > 464.0 / 112.0);
    }

    #[test]
    fn tangent_extrapolation_above_range() {
        let c = SolarCellModel::default();
        let slope = c.harvest_power(2000.0) - c.harvest_power(1999.0);
        let ext = c.harvest_power(2100.0) - c.harvest_power(2000.0);
        assert!((ext / 100.0 - slope).abs() / slope < 1e-3);
    }

    #[test]
    fn validation() {
        SolarCellModel::default().validate().unwrap();
        let mut c = SolarCellModel::default();
        c.mpp_coefficients[0] = 1e-6;
        assert!(c.validate().is_err());
        let mut c = SolarCellModel::default();
        c.mpp_coefficients.push(-1e-12);
        assert!(c.validate().is_err());
    }
}
