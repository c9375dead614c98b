//! Tag power modes, the motion-triggered localization sequence and its
//! energy accounting.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PowerMode {
    DeepSleep,
    Sleep,
    Active,
    Localization,
}

impl PowerMode {
    pub const ALL: [PowerMode; 4] = [
        PowerMode::DeepSleep,
        PowerMode::Sleep,
        PowerMode::Active,
        PowerMode::Localization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PowerMode::DeepSleep => "DEEP_SLEEP",
            PowerMode::Sleep => "SLEEP",
            PowerMode::Active => "ACTIVE",
            PowerMode::Localization => "LOCALIZATION",
        }
    }
}

impl fmt::Display for PowerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TagEvent {
    MotionIrq,
    WdiOverflow,
    LocalizationDone,
    EnterDeepSleep,
    RtcWake,
}

impl TagEvent {
    pub const ALL: [TagEvent; 5] = [
        TagEvent::MotionIrq,
        TagEvent::WdiOverflow,
        TagEvent::LocalizationDone,
        TagEvent::EnterDeepSleep,
        TagEvent::RtcWake,
    ];
}

/// Result of feeding one event to the mode machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub mode: PowerMode,
    /// False when the event has no meaning in the current mode.
    pub accepted: bool,
}

/// Mode transition table. Unlisted (mode, event) pairs leave the mode unchanged.
pub fn step(mode: PowerMode, event: TagEvent) -> Step {
    use PowerMode::*;
    use TagEvent::*;
    let next = match (mode, event) {
        (Sleep, MotionIrq) => Some(Active),
        // Further accelerometer interrupts only restart the watchdog.
        (Active, MotionIrq) => Some(Active),
        (Active, WdiOverflow) => Some(Localization),
        (Localization, LocalizationDone) => Some(Sleep),
        (Sleep, EnterDeepSleep) => Some(DeepSleep),
        (DeepSleep, RtcWake) => Some(Sleep),
        _ => None,
    };
    match next {
        Some(mode) => Step { mode, accepted: true },
        None => {
            log::debug!("ignored {event:?} in {mode}");
            Step { mode, accepted: false }
        }
    }
}

/// Steady-state power per mode, watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModeProfile {
    pub deep_sleep_power: f64,
    pub sleep_power: f64,
    pub active_power: f64,
    pub localization_peak_power: f64,
}

impl Default for PowerModeProfile {
    fn default() -> Self {
        Self {
            // 47 nA leakage at 3.7 V.
            deep_sleep_power: 173e-9,
            sleep_power: 4.68e-6,
            active_power: 22e-6,
            localization_peak_power: 200e-3,
        }
    }
}

impl PowerModeProfile {
    pub fn validate(&self) -> Result<()> {
        let p = [
            self.deep_sleep_power,
            self.sleep_power,
            self.active_power,
            self.localization_peak_power,
        ];
        if p.iter().any(|x| !(*x >= 0.0)) || !(p[0] < p[1] && p[1] < p[2] && p[2] < p[3]) {
            return Err(Error::invalid(
                "power profile must satisfy deep_sleep < sleep < active < localization_peak",
            ));
        }
        Ok(())
    }

    pub fn power(&self, mode: PowerMode) -> f64 {
        match mode {
            PowerMode::DeepSleep => self.deep_sleep_power,
            PowerMode::Sleep => self.sleep_power,
            PowerMode::Active => self.active_power,
            PowerMode::Localization => self.localization_peak_power,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transceiver {
    #[serde(rename = "DW1000")]
    Dw1000,
    #[serde(rename = "DW3000")]
    Dw3000,
}

impl Transceiver {
    /// Extra energy per additional ranging repetition, joules.
    pub fn oversampling_increment(self) -> f64 {
        match self {
            Transceiver::Dw1000 => 7.35e-3,
            Transceiver::Dw3000 => 3.34e-3,
        }
    }
}

/// DW3000 base energy as a fraction of the DW1000 figure.
pub const DW3000_TO_DW1000_RATIO: f64 = 0.55;

/// Battery voltages of the measured energy breakdown.
pub const BUDGET_VOLTAGES: [f64; 3] = [3.4, 3.7, 4.15];

/// Per-event energy breakdown at one battery voltage, joules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationEnergyBudget {
    pub mcu: f64,
    /// Already included in `mcu`.
    pub multilateration: f64,
    pub uwb: f64,
    pub lora: f64,
    pub total: f64,
    pub battery_voltage: f64,
    pub oversampling_increment: f64,
}

/// Measured DW3000 breakdown, one entry per [`BUDGET_VOLTAGES`] column.
pub const BUDGET_TABLE: [LocalizationEnergyBudget; 3] = [
    LocalizationEnergyBudget {
        mcu: 2.87e-3,
        multilateration: 0.23e-3,
        uwb: 4.72e-3,
        lora: 2.68e-3,
        total: 10.28e-3,
        battery_voltage: 3.4,
        oversampling_increment: 3.34e-3,
    },
    LocalizationEnergyBudget {
        mcu: 2.89e-3,
        multilateration: 0.24e-3,
        uwb: 5.17e-3,
        lora: 2.79e-3,
        total: 10.84e-3,
        battery_voltage: 3.7,
        oversampling_increment: 3.34e-3,
    },
    LocalizationEnergyBudget {
        mcu: 2.97e-3,
        multilateration: 0.31e-3,
        uwb: 5.31e-3,
        lora: 2.84e-3,
        total: 11.13e-3,
        battery_voltage: 4.15,
        oversampling_increment: 3.34e-3,
    },
];

impl LocalizationEnergyBudget {
    /// DW3000 breakdown at `battery_voltage`, interpolated piecewise linearly
    /// between the measured columns and clamped outside them.
    pub fn at_voltage(battery_voltage: f64) -> Self {
        let lo = BUDGET_VOLTAGES[0];
        let hi = BUDGET_VOLTAGES[2];
        let v = if battery_voltage < lo || battery_voltage > hi || battery_voltage.is_nan() {
            log::warn!("battery voltage {battery_voltage} V outside [{lo}, {hi}] V, clamping");
            if battery_voltage > hi {
                hi
            } else {
                lo
            }
        } else {
            battery_voltage
        };
        if let Some(col) = BUDGET_TABLE.iter().find(|c| c.battery_voltage == v) {
            return *col;
        }
        let seg = if v < BUDGET_VOLTAGES[1] { 0 } else { 1 };
        let (a, b) = (&BUDGET_TABLE[seg], &BUDGET_TABLE[seg + 1]);
        let t = (v - a.battery_voltage) / (b.battery_voltage - a.battery_voltage);
        let lerp = |x: f64, y: f64| x * (1.0 - t) + y * t;
        Self {
            mcu: lerp(a.mcu, b.mcu),
            multilateration: lerp(a.multilateration, b.multilateration),
            uwb: lerp(a.uwb, b.uwb),
            lora: lerp(a.lora, b.lora),
            total: lerp(a.total, b.total),
            battery_voltage: v,
            oversampling_increment: a.oversampling_increment,
        }
    }

    pub fn component_sum(&self) -> f64 {
        self.mcu + self.uwb + self.lora
    }
}

/// Energy of one localization event, joules.
pub fn localization_energy(battery_voltage: f64, oversampling: u32, transceiver: Transceiver) -> Result<f64> {
    if oversampling < 1 {
        return Err(Error::invalid("oversampling must be at least 1"));
    }
    let base = LocalizationEnergyBudget::at_voltage(battery_voltage).total;
    let base = match transceiver {
        Transceiver::Dw3000 => base,
        Transceiver::Dw1000 => base / DW3000_TO_DW1000_RATIO,
    };
    Ok(base + (oversampling - 1) as f64 * transceiver.oversampling_increment())
}

/// How many events of `per_event` joules fit in `energy` joules.
pub fn localizations_supported(energy: f64, per_event: f64) -> Result<f64> {
    if !(per_event > 0.0) {
        return Err(Error::invalid("per-event energy must be positive"));
    }
    Ok(energy / per_event)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MotionKind {
    Motion,
    Quiet,
}

impl FromStr for MotionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "MOTION" => Ok(MotionKind::Motion),
            "QUIET" => Ok(MotionKind::Quiet),
            other => Err(Error::invalid(format!("unknown motion kind '{other}'"))),
        }
    }
}

/// Accelerometer threshold crossings. `MOTION` entries are interrupts,
/// `QUIET` entries only mark time (the last one sets the trace end).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionEventTrace {
    events: Vec<(f64, MotionKind)>,
}

impl MotionEventTrace {
    pub fn new(events: Vec<(f64, MotionKind)>) -> Result<Self> {
        for (i, w) in events.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::NonMonotone { row: i + 1 });
            }
        }
        if events.iter().any(|(t, _)| !t.is_finite()) {
            return Err(Error::invalid("motion event times must be finite"));
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[(f64, MotionKind)] {
        &self.events
    }

    pub fn start(&self) -> f64 {
        self.events.first().map_or(0.0, |e| e.0)
    }

    pub fn end(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.0)
    }

    /// Reads `time_s,kind` CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["time_s", "kind"] {
            return Err(Error::Parse {
                line: 1,
                message: "expected header time_s,kind".into(),
            });
        }
        let mut events = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let parse_err = |message: String| Error::Parse { line, message };
            if rec.len() != 2 {
                return Err(parse_err(format!("expected 2 fields, got {}", rec.len())));
            }
            let t: f64 = rec[0]
                .parse()
                .map_err(|_| parse_err(format!("bad time '{}'", &rec[0])))?;
            let kind: MotionKind = rec[1].parse().map_err(|e: Error| parse_err(e.to_string()))?;
            events.push((t, kind));
        }
        Self::new(events).map_err(|e| match e {
            Error::NonMonotone { row } => Error::Parse {
                line: row + 2,
                message: "time_s not strictly increasing".into(),
            },
            other => other,
        })
    }
}

/// Interpretation of the ACTIVE interval while motion continues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MotionIdleMode {
    Active,
    Sleep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TagSimConfig {
    /// Watchdog period after the last motion interrupt, seconds.
    pub wdi_timeout: f64,
    pub localization_duration: f64,
    pub motion_idle_mode: MotionIdleMode,
}

impl Default for TagSimConfig {
    fn default() -> Self {
        Self {
            wdi_timeout: 5.0,
            localization_duration: 0.118,
            motion_idle_mode: MotionIdleMode::Sleep,
        }
    }
}

/// Startup phase length inside a localization event, surfaced for annotation only.
pub const LOCALIZATION_STARTUP: f64 = 0.017;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub mode: PowerMode,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceOutcome {
    pub localization_count: usize,
    pub energy_consumed: f64,
    /// Start times of every localization event.
    pub localization_times: Vec<f64>,
    pub timeline: Vec<ModeSegment>,
}

struct Timeline {
    segments: Vec<ModeSegment>,
    mode: PowerMode,
    since: f64,
}

impl Timeline {
    fn switch(&mut self, at: f64, next: PowerMode, energy: f64) {
        if next == self.mode {
            return;
        }
        self.close(at, energy);
        self.mode = next;
        self.since = at;
    }

    fn close(&mut self, at: f64, energy: f64) {
        if at > self.since || self.mode == PowerMode::Localization {
            self.segments.push(ModeSegment {
                t_start: self.since,
                t_end: at,
                mode: self.mode,
                energy_j: energy,
            });
        }
    }
}

/// Replays a motion trace through the mode machine.
///
/// Each localization is charged as one `per_event` lump; steady modes are
/// charged at their profile power. Motion during a localization is ignored.
pub fn run_trace(
    trace: &MotionEventTrace,
    config: &TagSimConfig,
    profile: &PowerModeProfile,
    per_event: f64,
) -> Result<TraceOutcome> {
    if !(config.wdi_timeout > 0.0) {
        return Err(Error::invalid("wdi_timeout must be positive"));
    }
    if !(config.localization_duration >= 0.0) {
        return Err(Error::invalid("localization_duration must be non-negative"));
    }
    let steady_power = |mode: PowerMode| match mode {
        PowerMode::Active => match config.motion_idle_mode {
            MotionIdleMode::Active => profile.active_power,
            MotionIdleMode::Sleep => profile.sleep_power,
        },
        PowerMode::Localization => 0.0,
        m => profile.power(m),
    };

    let t0 = trace.start();
    let mut tl = Timeline {
        segments: Vec::new(),
        mode: PowerMode::Sleep,
        since: t0,
    };
    let mut wdi_deadline: Option<f64> = None;
    let mut loc_end: Option<f64> = None;
    let mut times = Vec::new();

    let segment_energy = |tl: &Timeline, at: f64| {
        if tl.mode == PowerMode::Localization {
            per_event
        } else {
            steady_power(tl.mode) * (at - tl.since)
        }
    };

    // Fires timer-driven events due at or before `until`.
    let advance = |tl: &mut Timeline, wdi: &mut Option<f64>, done: &mut Option<f64>, times: &mut Vec<f64>, until: f64| loop {
        match (*wdi, *done) {
            (Some(d), _) if d <= until => {
                *wdi = None;
                let s = step(tl.mode, TagEvent::WdiOverflow);
                if s.accepted {
                    let e = segment_energy(tl, d);
                    tl.switch(d, s.mode, e);
                    times.push(d);
                    *done = Some(d + config.localization_duration);
                }
            }
            (_, Some(d)) if d <= until => {
                *done = None;
                let s = step(tl.mode, TagEvent::LocalizationDone);
                let e = segment_energy(tl, d);
                tl.switch(d, s.mode, e);
            }
            _ => break,
        }
    };

    for &(t, kind) in trace.events() {
        advance(&mut tl, &mut wdi_deadline, &mut loc_end, &mut times, t);
        if kind == MotionKind::Motion {
            let s = step(tl.mode, TagEvent::MotionIrq);
            if s.accepted {
                let e = segment_energy(&tl, t);
                tl.switch(t, s.mode, e);
                wdi_deadline = Some(t + config.wdi_timeout);
            }
        }
    }
    let end = trace.end();
    let e = segment_energy(&tl, end.max(tl.since));
    tl.close(end.max(tl.since), e);

    let energy_consumed = tl.segments.iter().map(|s| s.energy_j).sum();
    Ok(TraceOutcome {
        localization_count: times.len(),
        energy_consumed,
        localization_times: times,
        timeline: tl.segments,
    })
}

/// Stand-in for the LoRa uplink payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraReport {
    pub tag_id: u32,
    pub position: [f64; 3],
    pub residual: f64,
    pub time: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(ev: &[(f64, MotionKind)]) -> MotionEventTrace {
        MotionEventTrace::new(ev.to_vec()).unwrap()
    }

    use MotionKind::{Motion as M, Quiet as Q};

    #[test]
    fn transitions() {
        use PowerMode::*;
        use TagEvent::*;
        assert_eq!(step(Sleep, MotionIrq).mode, Active);
        assert_eq!(step(Active, MotionIrq).mode, Active);
        assert_eq!(step(Active, WdiOverflow).mode, Localization);
        assert_eq!(step(Localization, LocalizationDone).mode, Sleep);
        assert_eq!(step(Sleep, EnterDeepSleep).mode, DeepSleep);
        assert_eq!(step(DeepSleep, RtcWake).mode, Sleep);
        let s = step(DeepSleep, MotionIrq);
        assert_eq!(s.mode, DeepSleep);
        assert!(!s.accepted);
        assert!(!step(Localization, MotionIrq).accepted);
    }

    #[test]
    fn exhaustive_event_fuzzing_stays_in_table() {
        use PowerMode::*;
        use TagEvent::*;
        let allowed = [
            (Sleep, MotionIrq, Active),
            (Active, MotionIrq, Active),
            (Active, WdiOverflow, Localization),
            (Localization, LocalizationDone, Sleep),
            (Sleep, EnterDeepSleep, DeepSleep),
            (DeepSleep, RtcWake, Sleep),
        ];
        let mut reached = std::collections::BTreeSet::new();
        reached.insert(Sleep);
        // Every sequence of four events from SLEEP.
        let mut frontier = vec![Sleep];
        for _ in 0..4 {
            let mut next = Vec::new();
            for &m in &frontier {
                for e in TagEvent::ALL {
                    let s = step(m, e);
                    if s.mode != m || s.accepted {
                        assert!(allowed.contains(&(m, e, s.mode)), "{m:?} --{e:?}--> {:?}", s.mode);
                    }
                    reached.insert(s.mode);
                    next.push(s.mode);
                }
            }
            frontier = next;
        }
        assert_eq!(reached.len(), 4);
    }

    #[test]
    fn profile_defaults_are_ordered() {
        let p = PowerModeProfile::default();
        p.validate().unwrap();
        assert!((p.deep_sleep_power - 47e-9 * 3.7).abs() < 1e-9);
        let bad = PowerModeProfile {
            sleep_power: 30e-6,
            ..p
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_burst_gives_one_localization() {
        let t = trace(&[(0.0, Q), (10.0, M), (11.0, M), (12.0, M), (100.0, Q)]);
        let out = run_trace(&t, &TagSimConfig::default(), &PowerModeProfile::default(), 10.84e-3).unwrap();
        assert_eq!(out.localization_count, 1);
        assert_eq!(out.localization_times, vec![17.0]);
        let modes: Vec<_> = out.timeline.iter().map(|s| s.mode).collect();
        assert_eq!(
            modes,
            vec![PowerMode::Sleep, PowerMode::Active, PowerMode::Localization, PowerMode::Sleep]
        );
    }

    #[test]
    fn continuous_motion_defers_localization() {
        let mut ev = vec![(0.0, Q)];
        for i in 0..50 {
            ev.push((1.0 + i as f64 * 4.0, M));
        }
        let last = 1.0 + 49.0 * 4.0;
        ev.push((last + 4.9, Q));
        let cfg = TagSimConfig::default();
        let out = run_trace(&trace(&ev), &cfg, &PowerModeProfile::default(), 0.01).unwrap();
        assert_eq!(out.localization_count, 0);
        ev.pop();
        ev.push((last + 60.0, Q));
        let out = run_trace(&trace(&ev), &cfg, &PowerModeProfile::default(), 0.01).unwrap();
        assert_eq!(out.localization_count, 1);
        assert_eq!(out.localization_times[0], last + 5.0);
    }

    #[test]
    fn day_of_sleep() {
        let t = trace(&[(0.0, Q), (86_400.0, Q)]);
        let out = run_trace(&t, &TagSimConfig::default(), &PowerModeProfile::default(), 10.84e-3).unwrap();
        assert_eq!(out.localization_count, 0);
        assert!((out.energy_consumed - 0.404352).abs() < 1e-9);
        assert!((out.energy_consumed * 1e3 - 404.35).abs() < 0.005);
    }

    #[test]
    fn motion_idle_mode_selects_active_power() {
        let t = trace(&[(0.0, M), (100.0, M), (200.0, Q)]);
        let p = PowerModeProfile::default();
        let sleep = run_trace(&t, &TagSimConfig::default(), &p, 0.0).unwrap();
        let active_cfg = TagSimConfig {
            motion_idle_mode: MotionIdleMode::Active,
            wdi_timeout: 1000.0,
            ..Default::default()
        };
        let active = run_trace(&t, &active_cfg, &p, 0.0).unwrap();
        assert!((active.energy_consumed - 200.0 * 22e-6).abs() < 1e-12);
        assert!(sleep.energy_consumed < active.energy_consumed);
    }

    #[test]
    fn motion_during_localization_is_ignored() {
        let t = trace(&[(0.0, M), (5.05, M), (30.0, Q)]);
        let out = run_trace(&t, &TagSimConfig::default(), &PowerModeProfile::default(), 0.01).unwrap();
        assert_eq!(out.localization_count, 1);
    }

    #[test]
    fn budget_table_columns() {
        for (v, total) in [(3.4, 10.28e-3), (3.7, 10.84e-3), (4.15, 11.13e-3)] {
            let b = LocalizationEnergyBudget::at_voltage(v);
            assert_eq!(b.total, total);
            assert!((b.component_sum() - b.total).abs() <= 0.01e-3 + 1e-12);
            assert_eq!(localization_energy(v, 1, Transceiver::Dw3000).unwrap(), total);
        }
        let e = localization_energy(3.7, 5, Transceiver::Dw3000).unwrap();
        assert!((e - 24.20e-3).abs() < 1e-12);
        assert!(localization_energy(3.7, 0, Transceiver::Dw3000).is_err());
    }

    #[test]
    fn budget_interpolates_and_clamps() {
        let mid = localization_energy(3.55, 1, Transceiver::Dw3000).unwrap();
        assert!((mid - 10.56e-3).abs() < 1e-12);
        assert_eq!(localization_energy(3.0, 1, Transceiver::Dw3000).unwrap(), 10.28e-3);
        assert_eq!(localization_energy(4.2, 1, Transceiver::Dw3000).unwrap(), 11.13e-3);
        let dw1000 = localization_energy(3.7, 1, Transceiver::Dw1000).unwrap();
        assert!((10.84e-3 / dw1000 - 0.55).abs() < 1e-12);
    }

    #[test]
    fn motion_csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "time_s,kind\n0,QUIET\n1.5,MOTION\n9,QUIET\n").unwrap();
        let t = MotionEventTrace::load(&p).unwrap();
        assert_eq!(t.events().len(), 3);
        std::fs::write(&p, "time_s,kind\n0,QUIET\n1.5,SHAKE\n").unwrap();
        assert!(matches!(MotionEventTrace::load(&p), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&p, "time_s,kind\n2,QUIET\n1.5,MOTION\n").unwrap();
        assert!(matches!(MotionEventTrace::load(&p), Err(Error::Parse { line: 3, .. })));
    }

    /// Count of maximal quiet gaps >= timeout that follow a motion, with the
    /// trace end closing the final gap.
    fn quiet_gap_oracle(motions: &[f64], end: f64, timeout: f64) -> usize {
        let mut count = 0;
        for (i, &t) in motions.iter().enumerate() {
            let next = motions.get(i + 1).copied().unwrap_or(f64::INFINITY);
            let gap_end = next.min(end);
            if gap_end - t >= timeout && t + timeout <= end {
                count += 1;
            }
        }
        count
    }

    fn motion_times() -> impl Strategy<Value = Vec<f64>> {
        // Incremental gaps keep motions out of the 118 ms localization window.
        proptest::collection::vec(prop_oneof![0.2..4.0f64, 5.2..40.0f64], 0..40).prop_map(|gaps| {
            let mut t = 1.0;
            gaps.iter()
                .map(|g| {
                    t += g;
                    t
                })
                .collect()
        })
    }

    fn build(motions: &[f64], end: f64) -> MotionEventTrace {
        let mut ev = vec![(0.0, Q)];
        ev.extend(motions.iter().map(|&t| (t, M)));
        ev.push((end, Q));
        trace(&ev)
    }

    proptest! {
        #[test]
        fn localization_count_matches_quiet_gaps(motions in motion_times(), tail in 0.5..30.0f64) {
            let end = motions.last().copied().unwrap_or(1.0) + tail;
            let cfg = TagSimConfig::default();
            let out = run_trace(&build(&motions, end), &cfg, &PowerModeProfile::default(), 0.01).unwrap();
            prop_assert_eq!(out.localization_count, quiet_gap_oracle(&motions, end, cfg.wdi_timeout));
        }

        #[test]
        fn energy_is_additive_across_sleep_split(a in motion_times(), b in motion_times()) {
            let cfg = TagSimConfig::default();
            let p = PowerModeProfile::default();
            let split = a.last().copied().unwrap_or(1.0) + 20.0;
            let shifted: Vec<f64> = b.iter().map(|t| t + split).collect();
            let end = shifted.last().copied().unwrap_or(split) + 20.0;
            let mut whole = vec![(0.0, Q)];
            whole.extend(a.iter().map(|&t| (t, M)));
            whole.push((split, Q));
            let first = trace(&whole);
            let mut second_ev = vec![(split, Q)];
            second_ev.extend(shifted.iter().map(|&t| (t, M)));
            second_ev.push((end, Q));
            let second = trace(&second_ev);
            whole.extend(shifted.iter().map(|&t| (t, M)));
            whole.push((end, Q));
            let all = run_trace(&trace(&whole), &cfg, &p, 0.01084).unwrap();
            let e1 = run_trace(&first, &cfg, &p, 0.01084).unwrap();
            let e2 = run_trace(&second, &cfg, &p, 0.01084).unwrap();
            prop_assert!((all.energy_consumed - e1.energy_consumed - e2.energy_consumed).abs() < 1e-12);
            prop_assert_eq!(all.localization_count, e1.localization_count + e2.localization_count);
        }

        #[test]
        fn energy_monotone_in_oversampling(n in 1u32..30, v in 3.4..4.15f64) {
            let a = localization_energy(v, n, Transceiver::Dw3000).unwrap();
            let b = localization_energy(v, n + 1, Transceiver::Dw3000).unwrap();
            prop_assert!(b > a);
        }

        #[test]
        fn budget_monotone_in_voltage(v in 3.4..4.1f64, dv in 0.0..0.05f64) {
            let a = localization_energy(v, 1, Transceiver::Dw3000).unwrap();
            let b = localization_energy(v + dv, 1, Transceiver::Dw3000).unwrap();
            prop_assert!(b >= a);
        }

        #[test]
        fn energy_monotone_in_duration(motions in motion_times(), extra in 0.0..1000.0f64) {
            let cfg = TagSimConfig::default();
            let p = PowerModeProfile::default();
            let end = motions.last().copied().unwrap_or(1.0) + 30.0;
            let a = run_trace(&build(&motions, end), &cfg, &p, 0.01).unwrap();
            let b = run_trace(&build(&motions, end + extra), &cfg, &p, 0.01).unwrap();
            prop_assert!(b.energy_consumed >= a.energy_consumed);
        }
    }
}
