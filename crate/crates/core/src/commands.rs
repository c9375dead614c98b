//! Subcommand drivers behind the `tagloc` binary.
//!
//! Each command validates its config, runs from one seeded generator and
//! writes plot-ready CSV/JSON files atomically into the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classify::{cross_validate, load_dataset, ClassificationReport};
use crate::config::{DimensionChoice, ScenarioConfig};
use crate::energy::{
    neutrality_crossing, neutrality_sweep, simulate, LoadSchedule, SimOptions, SweepPoint, SECONDS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::office::{self, ChannelModel, LocalizationStudy, OversampledEvent};
use crate::ranging::run_ranging_round;
use crate::tag::{run_trace, LoraReport, MotionEventTrace};
use crate::trace::{load_trace, summarize, synthesize_trace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Range,
    Locate,
    Energy,
    Classify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Range => "range",
            Command::Locate => "locate",
            Command::Energy => "energy",
            Command::Classify => "classify",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub validate_only: bool,
}

/// Exit status for an error: 2 for configuration problems, 3 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

pub fn validate(cmd: Command, cfg: &ScenarioConfig) -> Result<()> {
    match cmd {
        Command::Range => cfg.validate_range(),
        Command::Locate => cfg.validate_locate(),
        Command::Energy => cfg.validate_energy(),
        Command::Classify => cfg.validate_classify(),
    }
}

/// Loads, validates and (unless `validate_only`) runs one command. Returns
/// the files written.
pub fn run(cmd: Command, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let cfg = ScenarioConfig::load(&opts.config)?;
    validate(cmd, &cfg)?;
    if opts.validate_only {
        return Ok(Vec::new());
    }
    let seed = opts.seed.or(cfg.seed).unwrap_or(0);
    log::info!("{} with seed {seed}", cmd.name());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Output::new(&opts.out)?;
    match cmd {
        Command::Range => cmd_range(&cfg, &mut rng, &mut out)?,
        Command::Locate => cmd_locate(&cfg, &mut rng, &mut out)?,
        Command::Energy => cmd_energy(&cfg, &mut rng, &mut out)?,
        Command::Classify => cmd_classify(&cfg, &mut rng, &mut out)?,
    }
    Ok(out.written)
}

struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Temp file plus rename, so readers never see a partial file.
    fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, &path)?;
        log::info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }
}

fn vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn channel(cfg: &ScenarioConfig) -> ChannelModel {
    let r = &cfg.ranging;
    ChannelModel {
        noise_sigma: r.noise_sigma,
        drift_ppm: r.drift_ppm,
        tick_duration: r.tick_duration,
        max_range: r.max_range,
    }
}

fn cmd_range(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, out: &mut Output) -> Result<()> {
    let anchors: Vec<Vector3<f64>> = cfg.anchors()?.iter().map(vec3).collect();
    let bias = cfg.ranging.nlos_bias.clone().unwrap_or_else(|| vec![0.0; anchors.len()]);
    let ch = channel(cfg);
    let mut csv = String::from("anchor_id,t_round1,t_reply1,t_round2,t_reply2,prop_time_s,distance_m,valid\n");
    for p in cfg.positions()? {
        for _ in 0..cfg.ranging.rounds {
            let s = office::random_scenario(vec3(&p), &anchors, &ch, bias.clone(), rng)?;
            for m in run_ranging_round(&s, rng)? {
                let q = m.quad;
                writeln!(
                    csv,
                    "{},{},{},{},{},{:e},{},{}",
                    m.anchor_id, q.t_round1, q.t_reply1, q.t_round2, q.t_reply2, m.propagation_time, m.distance, m.valid
                )
                .expect("string write");
            }
        }
    }
    out.write("measurements.csv", csv.as_bytes())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn cmd_locate(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, out: &mut Output) -> Result<()> {
    let study = LocalizationStudy {
        anchors: cfg.anchors()?,
        positions: cfg.positions()?,
        samples_per_position: cfg.ranging.rounds,
        channel: channel(cfg),
        nlos_bias: cfg.ranging.nlos_bias.clone().unwrap_or_default(),
    };
    let want2 = cfg.ranging.dimensions.contains(&DimensionChoice::Two);
    let want3 = cfg.ranging.dimensions.contains(&DimensionChoice::Three);
    let mut samples = study.run(rng)?;
    for s in &mut samples {
        if !want2 {
            s.fix_2d = None;
            s.error_2d = None;
            s.residual_2d = None;
        }
        if !want3 {
            s.fix_3d = None;
            s.error_3d = None;
            s.residual_3d = None;
        }
    }

    let mut fixes = String::from(
        "position,sample,true_x,true_y,true_z,fix2d_x,fix2d_y,error_2d_m,fix3d_x,fix3d_y,fix3d_z,error_3d_m\n",
    );
    let mut reports = Vec::new();
    let mut per_position = BTreeMap::new();
    for s in &samples {
        let k = per_position.entry(s.position_index).or_insert(0usize);
        let t = s.truth;
        let f2 = s.fix_2d;
        let f3 = s.fix_3d;
        writeln!(
            fixes,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.position_index,
            k,
            t[0],
            t[1],
            t[2],
            opt(f2.map(|f| f[0])),
            opt(f2.map(|f| f[1])),
            opt(s.error_2d),
            opt(f3.map(|f| f[0])),
            opt(f3.map(|f| f[1])),
            opt(f3.map(|f| f[2])),
            opt(s.error_3d),
        )
        .expect("string write");
        let best = f3.zip(s.residual_3d).or(f2.zip(s.residual_2d));
        if let Some((position, residual)) = best {
            reports.push(LoraReport {
                tag_id: s.position_index as u32,
                position,
                residual,
                time: *k as f64,
            });
        }
        *k += 1;
    }
    let mut cdf = String::from("dimension,error_m,cdf\n");
    for (dim, errs) in [
        ("2d", samples.iter().filter_map(|s| s.error_2d).collect::<Vec<_>>()),
        ("3d", samples.iter().filter_map(|s| s.error_3d).collect()),
    ] {
        for (e, f) in office::error_cdf(&errs) {
            writeln!(cdf, "{dim},{e},{f}").expect("string write");
        }
    }
    let summary = office::summarize_errors(&samples);
    log::info!("mean error 2D {:.3} m, 3D {:.3} m", summary.mean_2d, summary.mean_3d);
    out.write("fixes.csv", fixes.as_bytes())?;
    out.write("error_cdf.csv", cdf.as_bytes())?;
    out.json("error_summary.json", &summary)?;
    out.json("lora_reports.json", &reports)
}

#[derive(Serialize)]
struct Neutrality {
    trace: String,
    /// Self-discharge rate (fraction per month) where the run ends at its initial charge.
    crossing_rate: Option<f64>,
    surplus_j_per_day: f64,
    localizations_per_day: f64,
}

fn cmd_energy(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, out: &mut Output) -> Result<()> {
    let e = cfg.energy.as_ref().expect("validated");
    let cell = e.cell()?;
    let converter = e.converter()?;
    let battery = e.battery()?;
    let per_event = cfg.budget_energy()?;
    let base = e.base_load_power.unwrap_or(cfg.power.sleep_power);
    let opts = SimOptions {
        max_step: e.max_step,
        surplus_sink: e.surplus_sink,
        record_interval: Some(e.record_interval),
        ..Default::default()
    };
    let motion = match &e.motion_trace {
        Some(p) => {
            let m = MotionEventTrace::load(p)?;
            let o = run_trace(&m, &e.tag, &cfg.power, per_event)?;
            let mut csv = String::from("t_start,t_end,mode,energy_j\n");
            for s in &o.timeline {
                writeln!(csv, "{},{},{},{}", s.t_start, s.t_end, s.mode, s.energy_j).expect("string write");
            }
            out.write("mode_timeline.csv", csv.as_bytes())?;
            Some(o.localization_times)
        }
        None => None,
    };

    let mut sweep_csv = String::from("trace,rate,final_soc,min_soc,max_soc\n");
    let mut neutrality = Vec::new();
    for src in &e.traces {
        let trace = match src.stats()? {
            None => load_trace(src.path.as_ref().expect("validated"), &src.label)?.0,
            Some(stats) => synthesize_trace(&stats, &src.label, rng.random())?,
        };
        let start = trace.start().unwrap_or(0.0);
        let load = match &motion {
            Some(times) => LoadSchedule::new(base, times.iter().map(|t| (start + t, per_event)).collect())?,
            None if e.localizations_per_day > 0.0 => LoadSchedule::periodic(
                base,
                per_event,
                start,
                trace.end().unwrap_or(start),
                SECONDS_PER_DAY / e.localizations_per_day,
            )?,
            None => LoadSchedule::constant(base)?,
        };

        match summarize(&trace, &cell, &e.day_window) {
            Ok(s) => out.json(&format!("{}_summary.json", src.label), &s)?,
            Err(err) => log::warn!("{}: no daily summary ({err})", src.label),
        }
        let sim = simulate(&trace, &cell, &converter, &battery, &load, &opts)?;
        let mut csv = String::from("t,soc,p_harvest,p_load,p_selfdischarge,p_curtailed\n");
        for r in &sim.timeline {
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.t, r.soc, r.p_harvest, r.p_load, r.p_selfdischarge, r.p_curtailed
            )
            .expect("string write");
        }
        out.write(&format!("{}_soc.csv", src.label), csv.as_bytes())?;
        out.json(&format!("{}_ledger.json", src.label), &sim.ledger)?;

        let sweep_opts = SimOptions {
            record_interval: None,
            ..opts.clone()
        };
        let pts: Vec<SweepPoint> =
            neutrality_sweep(&trace, &cell, &converter, &battery, &load, &e.self_discharge_rates, &sweep_opts)?;
        for p in &pts {
            writeln!(sweep_csv, "{},{},{},{},{}", src.label, p.rate, p.final_soc, p.min_soc, p.max_soc)
                .expect("string write");
        }
        let crossing = if e.find_crossing {
            let hi = e.self_discharge_rates.iter().copied().fold(0.10, f64::max);
            neutrality_crossing(&trace, &cell, &converter, &battery, &load, (0.0, hi), 1e-4, &sweep_opts)?
        } else {
            None
        };
        let surplus = sim.ledger.surplus_per_day();
        neutrality.push(Neutrality {
            trace: src.label.clone(),
            crossing_rate: crossing,
            surplus_j_per_day: surplus,
            localizations_per_day: (surplus / per_event).max(0.0),
        });
    }
    out.write("neutrality_sweep.csv", sweep_csv.as_bytes())?;
    out.json("neutrality.json", &neutrality)
}

#[derive(Serialize)]
struct RateReport {
    oversampling: usize,
    report: ClassificationReport,
}

fn events_from_dataset(path: &Path) -> Result<Vec<OversampledEvent>> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<[f64; 3]>> = BTreeMap::new();
    for f in load_dataset(path)? {
        let key = (f.label.clone(), f.group.clone());
        let g = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        g.push(f.position);
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let fixes = groups.remove(&k).unwrap_or_default();
            OversampledEvent {
                label: k.0,
                group: k.1,
                fixes,
            }
        })
        .collect())
}

fn cmd_classify(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, out: &mut Output) -> Result<()> {
    let c = cfg.classify.as_ref().expect("validated");
    let mut events = match &c.dataset {
        Some(p) => events_from_dataset(p)?,
        None => {
            let classes = office::office_asset_classes();
            c.study.generate(&classes, &office::anchor_positions(), rng)?
        }
    };
    if c.shuffle_labels {
        let mut labels: Vec<String> = events.iter().map(|e| e.label.clone()).collect();
        labels.shuffle(rng);
        for (e, l) in events.iter_mut().zip(labels) {
            e.label = l;
        }
    }
    let cv_seed: u64 = rng.random();
    let mut reports = Vec::new();
    for &rate in &c.oversampling {
        let usable: Vec<OversampledEvent> = events.iter().filter(|e| e.fixes.len() >= rate).cloned().collect();
        if usable.len() < events.len() {
            log::warn!("oversampling {rate}: {} windows too short, skipped", events.len() - usable.len());
        }
        let data = office::dataset_at_rate(&usable, rate)?;
        let report = cross_validate(&data, c.classifier, c.folds, cv_seed)?;
        log::info!("oversampling {rate}: accuracy {:.4}", report.accuracy);
        reports.push(RateReport {
            oversampling: rate,
            report,
        });
    }
    out.json("classification_report.json", &reports)
}
