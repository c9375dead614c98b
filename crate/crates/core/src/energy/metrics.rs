use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Agreement between a predicted and a measured power series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub rmse: f64,
    pub r_squared: f64,
    /// Ratio of the time integrals minus one, in percent.
    pub energy_error_pct: f64,
}

/// RMSE, coefficient of determination and integral energy error of two
/// uniformly sampled series.
pub fn fit_metrics(predicted: &[f64], measured: &[f64]) -> Result<FitMetrics> {
    if predicted.len() != measured.len() {
        return Err(Error::invalid(format!(
            "series lengths differ: {} vs {}",
            predicted.len(),
            measured.len()
        )));
    }
    let n = measured.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let sse: f64 = predicted.iter().zip(measured).map(|(p, m)| (p - m).powi(2)).sum();
    let mean = measured.iter().sum::<f64>() / n as f64;
    let sst: f64 = measured.iter().map(|m| (m - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedMetric("measured series is constant".into()));
    }
    let measured_energy: f64 = measured.iter().sum();
    if measured_energy == 0.0 {
        return Err(Error::UndefinedMetric("measured energy integral is zero".into()));
    }
    let predicted_energy: f64 = predicted.iter().sum();
    Ok(FitMetrics {
        rmse: (sse / n as f64).sqrt(),
        r_squared: 1.0 - sse / sst,
        energy_error_pct: (predicted_energy / measured_energy - 1.0) * 100.0,
    })
}
