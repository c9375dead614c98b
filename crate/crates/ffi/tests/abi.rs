use std::ffi::{CStr, CString};
use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use tagloc_ffi::*;

fn last_error() -> String {
    let p = tagloc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn ds_twr_matches_closed_form() {
    let mut t = 0.0;
    let s = unsafe { tagloc_ds_twr_propagation(1_000_100, 1_000_000, 2_000_100, 2_000_000, &mut t) };
    assert_eq!(s, TaglocStatus::Ok);
    assert_eq!(t, 50.0);

    let s = unsafe { tagloc_ds_twr_propagation(0, 0, 0, 0, &mut t) };
    assert_eq!(s, TaglocStatus::InvalidInput);
    assert!(last_error().contains("denominator"));

    let s = unsafe { tagloc_ds_twr_propagation(1, 1, 1, 1, ptr::null_mut()) };
    assert_eq!(s, TaglocStatus::NullPointer);
}

#[test]
fn multilateration_round_trip() {
    let xyz = [0.0, 0.0, 2.5, 6.0, 0.0, 2.0, 6.0, 5.0, 2.5, 0.0, 5.0, 0.5];
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { tagloc_anchors_new(xyz.as_ptr(), 4, &mut h) }, TaglocStatus::Ok);
    let truth = [2.0, 1.5, 1.0];
    let d: Vec<f64> = xyz
        .chunks(3)
        .map(|a| ((a[0] - truth[0]).powi(2) + (a[1] - truth[1]).powi(2) + (a[2] - truth[2]).powi(2)).sqrt())
        .collect();
    let mut fix = TaglocFix::default();
    assert_eq!(unsafe { tagloc_multilaterate(h, d.as_ptr(), 3, &mut fix) }, TaglocStatus::Ok);
    for (got, want) in fix.position.iter().zip(truth) {
        assert!((got - want).abs() < 1e-9, "{fix:?}");
    }
    assert_eq!(unsafe { tagloc_multilaterate(h, d.as_ptr(), 4, &mut fix) }, TaglocStatus::InvalidInput);
    unsafe { tagloc_anchors_free(h) };

    // Three anchors cannot fix a 3D position.
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { tagloc_anchors_new(xyz.as_ptr(), 3, &mut h) }, TaglocStatus::Ok);
    assert_eq!(
        unsafe { tagloc_multilaterate(h, d.as_ptr(), 3, &mut fix) },
        TaglocStatus::InsufficientData
    );
    unsafe { tagloc_anchors_free(h) };
    unsafe { tagloc_anchors_free(ptr::null_mut()) };
}

#[test]
fn localization_energy_values() {
    let mut e = 0.0;
    let s = unsafe { tagloc_localization_energy(3.7, 1, TaglocTransceiver::Dw3000, &mut e) };
    assert_eq!(s, TaglocStatus::Ok);
    assert_eq!(e, 10.84e-3);
    unsafe { tagloc_localization_energy(3.7, 3, TaglocTransceiver::Dw3000, &mut e) };
    assert!((e - (10.84e-3 + 2.0 * 3.34e-3)).abs() < 1e-15);
    let s = unsafe { tagloc_localization_energy(3.7, 0, TaglocTransceiver::Dw1000, &mut e) };
    assert_eq!(s, TaglocStatus::InvalidInput);
}

#[test]
fn simulate_dark_trace_drains() {
    let t: Vec<f64> = (0..=24).map(|h| h as f64 * 3600.0).collect();
    let lux = vec![0.0; t.len()];
    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { tagloc_trace_new(t.as_ptr(), lux.as_ptr(), t.len(), &mut trace) }, TaglocStatus::Ok);
    let params = tagloc_sim_params_default();
    let mut l = TaglocLedger::default();
    assert_eq!(unsafe { tagloc_simulate(trace, &params, &mut l) }, TaglocStatus::Ok);
    assert_eq!(l.harvested, 0.0);
    // Load drawn over one day from the stored energy, plus leakage.
    let drawn = params.base_load_w * 86_400.0;
    assert!((l.consumed - drawn).abs() < 1e-9 * drawn);
    assert!(l.final_soc < params.initial_soc);
    assert!(l.max_step_imbalance < 1e-9);
    unsafe { tagloc_trace_free(trace) };

    let bad = [0.0, 10.0];
    let back = [20.0, 10.0];
    let s = unsafe { tagloc_trace_new(back.as_ptr(), bad.as_ptr(), 2, &mut trace) };
    assert_eq!(s, TaglocStatus::InvalidInput);
}

#[test]
fn trace_load_reports_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    fs::write(&p, "timestamp_s,lux\n0,10\n60,abc\n").unwrap();
    let c = CString::new(p.to_str().unwrap()).unwrap();
    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { tagloc_trace_load(c.as_ptr(), &mut trace) }, TaglocStatus::Parse);
    assert!(last_error().contains("line 3"), "{}", last_error());

    let missing = CString::new(dir.path().join("nope.csv").to_str().unwrap()).unwrap();
    let s = unsafe { tagloc_trace_load(missing.as_ptr(), &mut trace) };
    assert!(matches!(s, TaglocStatus::Io | TaglocStatus::Parse), "{s:?}");
}

#[test]
fn metrics_and_accuracy() {
    let x = [1.0, 2.0, 4.0, 3.0];
    let mut m = TaglocFitMetrics::default();
    assert_eq!(unsafe { tagloc_fit_metrics(x.as_ptr(), x.as_ptr(), 4, &mut m) }, TaglocStatus::Ok);
    assert_eq!((m.rmse, m.r_squared, m.energy_error_pct), (0.0, 1.0, 0.0));
    let c = [1.0, 1.0];
    assert_eq!(
        unsafe { tagloc_fit_metrics(x.as_ptr(), c.as_ptr(), 2, &mut m) },
        TaglocStatus::UndefinedMetric
    );

    let confusion: [u64; 4] = [8, 2, 1, 9];
    let mut a = 0.0;
    assert_eq!(unsafe { tagloc_accuracy(confusion.as_ptr(), 2, &mut a) }, TaglocStatus::Ok);
    assert_eq!(a, 17.0 / 20.0);
    assert_eq!(unsafe { tagloc_accuracy(ptr::null(), 2, &mut a) }, TaglocStatus::NullPointer);
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/tagloc.h")
}

#[test]
fn header_declares_the_api() {
    let h = fs::read_to_string(header()).unwrap();
    for sym in [
        "tagloc_last_error",
        "tagloc_ds_twr_propagation",
        "tagloc_anchors_new",
        "tagloc_anchors_free",
        "tagloc_multilaterate",
        "tagloc_localization_energy",
        "tagloc_trace_new",
        "tagloc_trace_load",
        "tagloc_trace_free",
        "tagloc_sim_params_default",
        "tagloc_simulate",
        "tagloc_fit_metrics",
        "tagloc_accuracy",
        "TAGLOC_STATUS_OK",
        "typedef struct TaglocAnchors TaglocAnchors;",
    ] {
        assert!(h.contains(sym), "missing {sym}");
    }
}

#[test]
fn c_program_links_and_runs() {
    // target/<profile>/deps/<test binary> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libtagloc_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    fs::write(
        &src,
        r#"
#include <stdio.h>
#include "tagloc.h"

int main(void) {
    double xyz[12] = {0, 0, 2.5, 6, 0, 2, 6, 5, 2.5, 0, 5, 0.5};
    double d[4] = {2.9154759474226504, 4.387482193696061, 5.522680508593631, 4.06201920231798};
    TaglocAnchors *a = NULL;
    TaglocFix fix;
    double e = 0;
    if (tagloc_anchors_new(xyz, 4, &a) != TAGLOC_STATUS_OK) return 1;
    if (tagloc_multilaterate(a, d, 3, &fix) != TAGLOC_STATUS_OK) return 2;
    tagloc_anchors_free(a);
    if (tagloc_localization_energy(3.7, 1, TAGLOC_TRANSCEIVER_DW3000, &e) != TAGLOC_STATUS_OK) return 3;
    if (tagloc_ds_twr_propagation(0, 0, 0, 0, &e) != TAGLOC_STATUS_INVALID_INPUT) return 4;
    if (tagloc_last_error() == NULL) return 5;
    printf("%.6f %.6f %.6f\n", fix.position[0], fix.position[1], fix.position[2]);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "2.000000 1.500000 1.000000");
}
