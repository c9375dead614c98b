//! C ABI over the tagloc core.
//!
//! Every fallible call returns a [`TaglocStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and can
//! be read with [`tagloc_last_error`]. Anchor sets and illuminance traces are
//! opaque handles owned by the caller and released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use nalgebra::Vector3;
use tagloc::classify;
use tagloc::energy::{self, BatteryState, ConverterModel, LoadSchedule, SimOptions, SolarCellModel};
use tagloc::multilateration::{self, AnchorSet, Dimension};
use tagloc::ranging::{self, TimestampQuad};
use tagloc::tag::{self, Transceiver};
use tagloc::trace::{self, IlluminanceTrace};
use tagloc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaglocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Geometry = 3,
    InsufficientData = 4,
    Parse = 5,
    UndefinedMetric = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaglocTransceiver {
    Dw1000 = 0,
    Dw3000 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaglocFix {
    pub position: [f64; 3],
    /// Squared-range cost at the solution, m^4.
    pub residual: f64,
    pub ambiguous: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaglocFitMetrics {
    pub rmse: f64,
    pub r_squared: f64,
    pub energy_error_pct: f64,
}

/// Energy totals in joules.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaglocLedger {
    pub harvested: f64,
    pub conversion_loss: f64,
    pub consumed: f64,
    pub unmet_load: f64,
    pub self_discharged: f64,
    pub curtailed: f64,
    pub surplus_consumed: f64,
    pub stored_delta: f64,
    pub initial_soc: f64,
    pub final_soc: f64,
    pub min_soc: f64,
    pub max_soc: f64,
    pub duration_s: f64,
    pub max_step_imbalance: f64,
}

/// Battery and run settings for [`tagloc_simulate`]. Cell and converter use
/// the library defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaglocSimParams {
    pub capacity_j: f64,
    pub initial_soc: f64,
    /// Fraction per 30-day month.
    pub self_discharge_rate: f64,
    pub base_load_w: f64,
    pub max_step_s: f64,
    pub surplus_sink: bool,
}

/// Opaque anchor set.
pub struct TaglocAnchors(AnchorSet);

/// Opaque illuminance trace.
pub struct TaglocTrace(IlluminanceTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TaglocStatus {
    match e {
        Error::InvalidInput(_) | Error::Config(_) | Error::TooFewSamples { .. } | Error::NonMonotone { .. } => {
            TaglocStatus::InvalidInput
        }
        Error::Geometry(_) => TaglocStatus::Geometry,
        Error::InsufficientData { .. } => TaglocStatus::InsufficientData,
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => TaglocStatus::Parse,
        Error::UndefinedMetric(_) => TaglocStatus::UndefinedMetric,
        Error::Io(_) => TaglocStatus::Io,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (TaglocStatus, String)>) -> TaglocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TaglocStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TaglocStatus::Panic
        }
    }
}

fn core(e: Error) -> (TaglocStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (TaglocStatus, String) {
    (TaglocStatus::NullPointer, format!("{name} is null"))
}

/// Borrows `n` elements, accepting a null pointer only when `n` is 0.
unsafe fn view<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], (TaglocStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tagloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Double-sided propagation time in ticks.
///
/// # Safety
/// `out_ticks` must be null or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn tagloc_ds_twr_propagation(
    t_round1: u64,
    t_reply1: u64,
    t_round2: u64,
    t_reply2: u64,
    out_ticks: *mut f64,
) -> TaglocStatus {
    guard(|| {
        if out_ticks.is_null() {
            return Err(null("out_ticks"));
        }
        let q = TimestampQuad::new(t_round1, t_reply1, t_round2, t_reply2);
        *out_ticks = ranging::ds_twr_propagation(&q).map_err(core)?;
        Ok(())
    })
}

/// Creates an anchor set from `n` packed xyz triples.
///
/// # Safety
/// `xyz` must point to `3 * n` doubles; `out` must point to a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tagloc_anchors_new(xyz: *const f64, n: usize, out: *mut *mut TaglocAnchors) -> TaglocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n
            .checked_mul(3)
            .ok_or_else(|| (TaglocStatus::InvalidInput, "too many anchors".to_string()))?;
        let flat = view(xyz, len, "xyz")?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err((TaglocStatus::InvalidInput, "anchor coordinates must be finite".into()));
        }
        let pts = flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        *out = Box::into_raw(Box::new(TaglocAnchors(AnchorSet::new(pts))));
        Ok(())
    })
}

/// # Safety
/// `anchors` must be null or a handle from [`tagloc_anchors_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tagloc_anchors_free(anchors: *mut TaglocAnchors) {
    if !anchors.is_null() {
        drop(Box::from_raw(anchors));
    }
}

/// Globally optimal squared-range fix. `dimension` is 2 or 3; `distances`
/// holds one range per anchor, in anchor order.
///
/// # Safety
/// `anchors` must be a live handle, `distances` must point to as many doubles
/// as the set has anchors, and `out` must point to a writable [`TaglocFix`].
#[no_mangle]
pub unsafe extern "C" fn tagloc_multilaterate(
    anchors: *const TaglocAnchors,
    distances: *const f64,
    dimension: u32,
    out: *mut TaglocFix,
) -> TaglocStatus {
    guard(|| {
        if anchors.is_null() {
            return Err(null("anchors"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let set = &(*anchors).0;
        let d = view(distances, set.len(), "distances")?;
        let dim = match dimension {
            2 => Dimension::Two,
            3 => Dimension::Three,
            other => return Err((TaglocStatus::InvalidInput, format!("dimension must be 2 or 3, got {other}"))),
        };
        let fix = multilateration::solve(set, d, dim).map_err(core)?;
        *out = TaglocFix {
            position: [fix.position.x, fix.position.y, fix.position.z],
            residual: fix.residual,
            ambiguous: fix.ambiguous,
        };
        Ok(())
    })
}

/// Energy of one localization event in joules.
///
/// # Safety
/// `out_joules` must be null or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn tagloc_localization_energy(
    battery_voltage: f64,
    oversampling: u32,
    transceiver: TaglocTransceiver,
    out_joules: *mut f64,
) -> TaglocStatus {
    guard(|| {
        if out_joules.is_null() {
            return Err(null("out_joules"));
        }
        let t = match transceiver {
            TaglocTransceiver::Dw1000 => Transceiver::Dw1000,
            TaglocTransceiver::Dw3000 => Transceiver::Dw3000,
        };
        *out_joules = tag::localization_energy(battery_voltage, oversampling, t).map_err(core)?;
        Ok(())
    })
}

/// Builds a trace from `n` (timestamp seconds, lux) pairs.
///
/// # Safety
/// `timestamps` and `lux` must each point to `n` doubles; `out` must point to
/// a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tagloc_trace_new(
    timestamps: *const f64,
    lux: *const f64,
    n: usize,
    out: *mut *mut TaglocTrace,
) -> TaglocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = view(timestamps, n, "timestamps")?;
        let l = view(lux, n, "lux")?;
        let samples = t.iter().copied().zip(l.iter().copied()).collect();
        let trace = IlluminanceTrace::new(samples, "ffi").map_err(core)?;
        *out = Box::into_raw(Box::new(TaglocTrace(trace)));
        Ok(())
    })
}

/// Loads a `timestamp_s,lux` CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tagloc_trace_load(path: *const c_char, out: *mut *mut TaglocTrace) -> TaglocStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (TaglocStatus::InvalidInput, "path is not UTF-8".to_string()))?;
        let (trace, _) = trace::load_trace(Path::new(p), "ffi").map_err(core)?;
        *out = Box::into_raw(Box::new(TaglocTrace(trace)));
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a handle from a `tagloc_trace_*` constructor not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tagloc_trace_free(trace: *mut TaglocTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Default settings: the stock battery at half charge, 3 %/month
/// self-discharge, SLEEP-mode base load and a 60 s step.
#[no_mangle]
pub extern "C" fn tagloc_sim_params_default() -> TaglocSimParams {
    let b = BatteryState::default();
    TaglocSimParams {
        capacity_j: b.capacity,
        initial_soc: b.soc,
        self_discharge_rate: b.self_discharge_rate,
        base_load_w: tag::PowerModeProfile::default().sleep_power,
        max_step_s: SimOptions::default().max_step,
        surplus_sink: false,
    }
}

/// Simulates the solar power path over the whole trace.
///
/// # Safety
/// `trace` must be a live handle, `params` must point to a readable
/// [`TaglocSimParams`] and `out` to a writable [`TaglocLedger`].
#[no_mangle]
pub unsafe extern "C" fn tagloc_simulate(
    trace: *const TaglocTrace,
    params: *const TaglocSimParams,
    out: *mut TaglocLedger,
) -> TaglocStatus {
    guard(|| {
        if trace.is_null() {
            return Err(null("trace"));
        }
        if params.is_null() {
            return Err(null("params"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = *params;
        let battery = BatteryState {
            capacity: p.capacity_j,
            soc: p.initial_soc,
            self_discharge_rate: p.self_discharge_rate,
            ..Default::default()
        };
        let load = LoadSchedule::constant(p.base_load_w).map_err(core)?;
        let opts = SimOptions {
            max_step: p.max_step_s,
            surplus_sink: p.surplus_sink,
            ..Default::default()
        };
        let l = energy::simulate(
            &(*trace).0,
            &SolarCellModel::default(),
            &ConverterModel::default(),
            &battery,
            &load,
            &opts,
        )
        .map_err(core)?
        .ledger;
        *out = TaglocLedger {
            harvested: l.harvested,
            conversion_loss: l.conversion_loss,
            consumed: l.consumed,
            unmet_load: l.unmet_load,
            self_discharged: l.self_discharged,
            curtailed: l.curtailed,
            surplus_consumed: l.surplus_consumed,
            stored_delta: l.stored_delta,
            initial_soc: l.initial_soc,
            final_soc: l.final_soc,
            min_soc: l.min_soc,
            max_soc: l.max_soc,
            duration_s: l.duration_s,
            max_step_imbalance: l.max_step_imbalance,
        };
        Ok(())
    })
}

/// RMSE, coefficient of determination and energy error of `n` paired samples.
///
/// # Safety
/// `predicted` and `measured` must each point to `n` doubles; `out` must
/// point to a writable [`TaglocFitMetrics`].
#[no_mangle]
pub unsafe extern "C" fn tagloc_fit_metrics(
    predicted: *const f64,
    measured: *const f64,
    n: usize,
    out: *mut TaglocFitMetrics,
) -> TaglocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = view(predicted, n, "predicted")?;
        let m = view(measured, n, "measured")?;
        let f = energy::fit_metrics(p, m).map_err(core)?;
        *out = TaglocFitMetrics {
            rmse: f.rmse,
            r_squared: f.r_squared,
            energy_error_pct: f.energy_error_pct,
        };
        Ok(())
    })
}

/// Accuracy of a row-major `n_classes x n_classes` confusion matrix,
/// `confusion[true * n_classes + predicted]`.
///
/// # Safety
/// `confusion` must point to `n_classes * n_classes` values; `out` must
/// point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn tagloc_accuracy(confusion: *const u64, n_classes: usize, out: *mut f64) -> TaglocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cells = n_classes
            .checked_mul(n_classes)
            .ok_or_else(|| (TaglocStatus::InvalidInput, "n_classes too large".to_string()))?;
        let flat = view(confusion, cells, "confusion")?;
        let rows: Vec<Vec<u64>> = flat.chunks(n_classes.max(1)).map(<[u64]>::to_vec).collect();
        *out = classify::accuracy(&rows).map_err(core)?;
        Ok(())
    })
}
