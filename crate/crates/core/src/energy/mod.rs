//! Harvest, convert, store and load: the tag's power path.

mod battery;
mod cell;
mod converter;
mod metrics;
mod sim;

pub use battery::BatteryState;
pub use cell::SolarCellModel;
pub use converter::ConverterModel;
pub use metrics::{fit_metrics, FitMetrics};
pub use sim::{
    neutrality_crossing, neutrality_sweep, simulate, EnergyLedger, LoadSchedule, SimOptions, SimOutcome, StepRecord,
    SweepPoint, NEUTRALITY_INITIAL_SOC,
};

pub const SECONDS_PER_DAY: f64 = 86_400.0;
/// Self-discharge rates are quoted per 30-day month.
pub const SECONDS_PER_MONTH: f64 = 30.0 * SECONDS_PER_DAY;
