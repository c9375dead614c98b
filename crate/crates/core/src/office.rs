//! Reference office: anchor layout, surveyed test points, asset classes and
//! the Monte-Carlo drivers that push them through ranging and
//! multilateration.
//!
//! Coordinates are meters in a 20 m x 10 m floor whose four anchors sit in
//! the south-west room. The range noise default was calibrated once against
//! the mean 2D and 3D errors reported for this kind of layout; see
//! `calibrate_range_sigma` and the crate README.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classify::{aggregate_oversampled, LabeledFix};
use crate::error::{Error, Result};
use crate::multilateration::{gate_and_solve, project_to_plane, AnchorSet, Dimension, FixOutcome};
use crate::ranging::{
    default_reply_delays, run_ranging_round, ClockModel, ExchangeScenario, RangeMeasurement, DEFAULT_MAX_RANGE,
    DEFAULT_TAG_TURNAROUND, DEFAULT_TICK,
};

/// Tripod anchors at 2 m and 1.5 m in the corner room.
pub const ANCHORS: [[f64; 3]; 4] = [[0.3, 0.3, 2.0], [5.7, 0.3, 1.5], [5.7, 4.7, 2.0], [0.3, 4.7, 1.5]];

/// Surveyed test points; the first six lie in the anchor room.
pub const TEST_POINTS: [[f64; 2]; 18] = [
    [1.5, 1.2],
    [3.0, 2.5],
    [4.5, 3.8],
    [2.0, 4.0],
    [4.8, 1.0],
    [1.0, 3.0],
    [8.0, 1.5],
    [8.0, 4.0],
    [11.0, 2.0],
    [11.0, 4.5],
    [14.0, 1.5],
    [14.0, 4.0],
    [3.0, 7.5],
    [7.0, 8.0],
    [10.0, 7.0],
    [13.0, 8.5],
    [8.5, 6.5],
    [16.0, 6.0],
];

pub const TEST_POINT_HEIGHT: f64 = 1.0;

/// Range noise (1 sigma, meters) reproducing the reference error levels.
pub const CALIBRATED_RANGE_SIGMA: f64 = 0.233;

pub const DEFAULT_DRIFT_PPM: f64 = 20.0;

pub fn anchor_positions() -> Vec<Vector3<f64>> {
    ANCHORS.iter().map(|a| Vector3::new(a[0], a[1], a[2])).collect()
}

pub fn test_positions() -> Vec<Vector3<f64>> {
    TEST_POINTS
        .iter()
        .map(|p| Vector3::new(p[0], p[1], TEST_POINT_HEIGHT))
        .collect()
}

/// Per-exchange impairments shared by every round of a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelModel {
    pub noise_sigma: f64,
    /// Clock drifts are drawn uniformly from +-drift_ppm per device and round.
    pub drift_ppm: f64,
    pub tick_duration: f64,
    pub max_range: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            noise_sigma: CALIBRATED_RANGE_SIGMA,
            drift_ppm: DEFAULT_DRIFT_PPM,
            tick_duration: DEFAULT_TICK,
            max_range: DEFAULT_MAX_RANGE,
        }
    }
}

/// Draws a scenario with fresh clock drifts and offsets.
pub fn random_scenario<R: Rng + ?Sized>(
    tag: Vector3<f64>,
    anchors: &[Vector3<f64>],
    channel: &ChannelModel,
    nlos_bias: Vec<f64>,
    rng: &mut R,
) -> Result<ExchangeScenario> {
    let drift_ppm = channel.drift_ppm;
    let clock = |rng: &mut R| {
        let drift = if drift_ppm > 0.0 { rng.random_range(-drift_ppm..=drift_ppm) } else { 0.0 };
        ClockModel::new(drift, rng.random_range(0.0..1.0), channel.tick_duration)
    };
    let tag_clock = clock(rng)?;
    let anchor_clocks = (0..anchors.len()).map(|_| clock(rng)).collect::<Result<_>>()?;
    let scenario = ExchangeScenario {
        tag_position: tag,
        anchor_positions: anchors.to_vec(),
        tag_clock,
        anchor_clocks,
        reply_delays: default_reply_delays(anchors.len()),
        tag_turnaround: DEFAULT_TAG_TURNAROUND,
        noise_sigma: channel.noise_sigma,
        nlos_bias,
        lost: vec![false; anchors.len()],
        max_range: channel.max_range,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// 2D solve with ranges projected onto the plane at the known tag height.
pub fn solve_planar(measurements: &[RangeMeasurement], anchors: &AnchorSet, height: f64) -> FixOutcome {
    let d: Vec<f64> = measurements.iter().map(|m| m.distance).collect();
    let (plane, horiz) = project_to_plane(anchors, &d, height);
    let projected: Vec<RangeMeasurement> = measurements
        .iter()
        .zip(horiz)
        .map(|(m, h)| RangeMeasurement { distance: h, ..*m })
        .collect();
    gate_and_solve(&projected, &plane, Dimension::Two)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationStudy {
    pub anchors: Vec<[f64; 3]>,
    pub positions: Vec<[f64; 3]>,
    pub samples_per_position: usize,
    pub channel: ChannelModel,
    /// Per-anchor static range excess; empty means none.
    pub nlos_bias: Vec<f64>,
}

impl Default for LocalizationStudy {
    fn default() -> Self {
        Self {
            anchors: ANCHORS.to_vec(),
            positions: test_positions().iter().map(|p| [p.x, p.y, p.z]).collect(),
            samples_per_position: 100,
            channel: ChannelModel::default(),
            nlos_bias: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSample {
    pub position_index: usize,
    pub truth: [f64; 3],
    pub fix_2d: Option<[f64; 3]>,
    pub fix_3d: Option<[f64; 3]>,
    pub error_2d: Option<f64>,
    pub error_3d: Option<f64>,
    /// Squared-range cost at each fix, m^4.
    pub residual_2d: Option<f64>,
    pub residual_3d: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean_2d: f64,
    pub mean_3d: f64,
    pub fixes_2d: usize,
    pub fixes_3d: usize,
    pub attempts: usize,
}

fn to_vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn to_arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl LocalizationStudy {
    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() || self.samples_per_position == 0 {
            return Err(Error::invalid("study needs at least one position and one sample"));
        }
        if !(self.channel.noise_sigma >= 0.0) || !(self.channel.drift_ppm >= 0.0) {
            return Err(Error::invalid("noise_sigma and drift_ppm must be non-negative"));
        }
        if !self.nlos_bias.is_empty() && self.nlos_bias.len() != self.anchors.len() {
            return Err(Error::invalid("nlos_bias needs one entry per anchor"));
        }
        Ok(())
    }

    /// One ranging round per sample, solved in 2D and 3D.
    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<LocalizationSample>> {
        self.validate()?;
        let anchors: Vec<Vector3<f64>> = self.anchors.iter().map(to_vec3).collect();
        let set = AnchorSet::new(anchors.clone());
        let bias = if self.nlos_bias.is_empty() { vec![0.0; anchors.len()] } else { self.nlos_bias.clone() };
        let mut out = Vec::with_capacity(self.positions.len() * self.samples_per_position);
        for (i, p) in self.positions.iter().enumerate() {
            let truth = to_vec3(p);
            for _ in 0..self.samples_per_position {
                let s = random_scenario(truth, &anchors, &self.channel, bias.clone(), rng)?;
                let m = run_ranging_round(&s, rng)?;
                let o3 = gate_and_solve(&m, &set, Dimension::Three);
                let o2 = solve_planar(&m, &set, truth.z);
                let f3 = o3.fix().map(|f| f.position);
                let f2 = o2.fix().map(|f| f.position);
                out.push(LocalizationSample {
                    position_index: i,
                    truth: *p,
                    fix_2d: f2.as_ref().map(to_arr),
                    fix_3d: f3.as_ref().map(to_arr),
                    error_2d: f2.map(|f| ((f.x - truth.x).powi(2) + (f.y - truth.y).powi(2)).sqrt()),
                    error_3d: f3.map(|f| (f - truth).norm()),
                    residual_2d: o2.fix().map(|f| f.residual),
                    residual_3d: o3.fix().map(|f| f.residual),
                });
            }
        }
        Ok(out)
    }
}

pub fn summarize_errors(samples: &[LocalizationSample]) -> ErrorSummary {
    let mean = |xs: Vec<f64>| if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let e2: Vec<f64> = samples.iter().filter_map(|s| s.error_2d).collect();
    let e3: Vec<f64> = samples.iter().filter_map(|s| s.error_3d).collect();
    ErrorSummary {
        fixes_2d: e2.len(),
        fixes_3d: e3.len(),
        attempts: samples.len(),
        mean_2d: mean(e2),
        mean_3d: mean(e3),
    }
}

/// Empirical CDF as ascending (error, fraction at or below) pairs.
pub fn error_cdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut e: Vec<f64> = errors.iter().copied().filter(|x| x.is_finite()).collect();
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(e.len());
    for (i, x) in e.into_iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    out
}

/// Range noise that best matches the target mean 2D and 3D errors of
/// `study`, in the least-squares sense on relative error.
///
/// Golden-section search over sigma in [0, 1] m. One sigma cannot hit both
/// targets on an arbitrary layout; the 3D mean grows faster than the 2D mean,
/// so the misfit is unimodal between the two single-target solutions.
pub fn calibrate_range_sigma<R: Rng + Clone>(study: &LocalizationStudy, target_2d: f64, target_3d: f64, rng: &R) -> Result<f64> {
    if !(target_2d > 0.0 && target_3d > 0.0) {
        return Err(Error::invalid("calibration targets must be positive"));
    }
    let misfit = |sigma: f64| -> Result<f64> {
        let mut trial = study.clone();
        trial.channel.noise_sigma = sigma;
        // Common random numbers keep the misfit smooth in sigma.
        let s = summarize_errors(&trial.run(&mut rng.clone())?);
        Ok((s.mean_2d / target_2d - 1.0).powi(2) + (s.mean_3d / target_3d - 1.0).powi(2))
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (misfit(c)?, misfit(d)?);
    while b - a > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = misfit(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = misfit(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Where a class's samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Placement {
    /// Uniform over a box around a fixed spot.
    Fixed { center: [f64; 3], half_extent: [f64; 3] },
    /// Anywhere along a polyline at walking height.
    Roaming { path: Vec<[f64; 2]>, height: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetClass {
    pub label: String,
    pub placement: Placement,
}

/// 24 desks spread over the floor, 12 shelf compartments next to the
/// anchors and two roaming classes.
pub fn office_asset_classes() -> Vec<AssetClass> {
    let desk = |i: usize, x: f64, y: f64| AssetClass {
        label: format!("desk{:02}", i + 1),
        placement: Placement::Fixed {
            center: [x, y, 0.85],
            half_extent: [0.35, 0.25, 0.02],
        },
    };
    let desks = [
        (1.2, 1.0),
        (3.0, 1.0),
        (1.2, 2.6),
        (3.0, 2.6),
        (4.8, 1.0),
        (4.8, 2.6),
        (7.5, 1.2),
        (9.0, 1.2),
        (7.5, 3.8),
        (9.0, 3.8),
        (11.0, 1.2),
        (12.8, 1.2),
        (11.0, 3.8),
        (12.8, 3.8),
        (15.0, 1.2),
        (17.5, 1.2),
        (15.0, 3.8),
        (17.5, 3.8),
        (1.5, 7.5),
        (4.0, 8.5),
        (7.0, 8.5),
        (10.0, 8.5),
        (13.0, 8.5),
        (16.5, 8.5),
    ];
    let mut classes: Vec<AssetClass> = desks.iter().enumerate().map(|(i, (x, y))| desk(i, *x, *y)).collect();
    // A four-column, three-level shelf along the north wall of the anchor room.
    let mut k = 0;
    for level in [0.4, 1.0, 1.6] {
        for col in [1.6, 2.4, 3.2, 4.0] {
            k += 1;
            classes.push(AssetClass {
                label: format!("shelf{k:02}"),
                placement: Placement::Fixed {
                    center: [col, 4.3, level],
                    half_extent: [0.15, 0.1, 0.05],
                },
            });
        }
    }
    classes.push(AssetClass {
        label: "carried".into(),
        placement: Placement::Roaming {
            path: vec![[2.0, 5.5], [10.0, 5.5], [18.0, 5.5]],
            height: 1.0,
        },
    });
    classes.push(AssetClass {
        label: "exit".into(),
        placement: Placement::Roaming {
            path: vec![[18.5, 6.0], [19.5, 9.5]],
            height: 1.0,
        },
    });
    classes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssetStudy {
    pub events_per_class: usize,
    /// Fixes recorded per event; datasets can use any rate up to this.
    pub max_oversampling: usize,
    /// Per-exchange range noise, meters.
    pub random_sigma: f64,
    /// Scale of the static per-anchor range excess at fixed spots, meters.
    pub static_bias_scale: f64,
    pub drift_ppm: f64,
}

impl Default for AssetStudy {
    fn default() -> Self {
        Self {
            events_per_class: 500,
            max_oversampling: 15,
            random_sigma: 0.1,
            static_bias_scale: 0.25,
            drift_ppm: DEFAULT_DRIFT_PPM,
        }
    }
}

/// All 3D fixes of one localization event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OversampledEvent {
    pub label: String,
    pub group: String,
    pub fixes: Vec<[f64; 3]>,
}

fn point_on_path<R: Rng + ?Sized>(path: &[[f64; 2]], rng: &mut R) -> [f64; 2] {
    let lens: Vec<f64> = path
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .collect();
    let total: f64 = lens.iter().sum();
    if path.len() < 2 || total == 0.0 {
        return path.first().copied().unwrap_or([0.0, 0.0]);
    }
    let mut s = rng.random_range(0.0..total);
    for (w, l) in path.windows(2).zip(&lens) {
        if s <= *l {
            let u = s / l;
            return [w[0][0] + u * (w[1][0] - w[0][0]), w[0][1] + u * (w[1][1] - w[0][1])];
        }
        s -= l;
    }
    path[path.len() - 1]
}

fn half_normal<R: Rng + ?Sized>(scale: f64, n: usize, rng: &mut R) -> Vec<f64> {
    if scale == 0.0 {
        return vec![0.0; n];
    }
    let d = Normal::new(0.0, scale).expect("positive scale");
    (0..n).map(|_| d.sample(rng).abs()).collect()
}

impl AssetStudy {
    pub fn validate(&self) -> Result<()> {
        if self.events_per_class == 0 || self.max_oversampling == 0 {
            return Err(Error::invalid("events_per_class and max_oversampling must be positive"));
        }
        if !(self.random_sigma >= 0.0) || !(self.static_bias_scale >= 0.0) || !(self.drift_ppm >= 0.0) {
            return Err(Error::invalid("noise parameters must be non-negative"));
        }
        Ok(())
    }

    /// Simulates every event of every class.
    ///
    /// Fixed spots keep one excess-path profile per anchor for the whole run,
    /// so their fixes are precise but offset. Roaming classes draw a fresh
    /// profile per event. Rounds without a 3D fix are retried.
    pub fn generate<R: Rng + ?Sized>(&self, classes: &[AssetClass], anchors: &[Vector3<f64>], rng: &mut R) -> Result<Vec<OversampledEvent>> {
        self.validate()?;
        let set = AnchorSet::new(anchors.to_vec());
        let channel = ChannelModel {
            noise_sigma: self.random_sigma,
            drift_ppm: self.drift_ppm,
            ..Default::default()
        };
        let mut out = Vec::with_capacity(classes.len() * self.events_per_class);
        for class in classes {
            let fixed_bias = half_normal(self.static_bias_scale, anchors.len(), rng);
            for e in 0..self.events_per_class {
                let (spot, bias) = match &class.placement {
                    Placement::Fixed { center, half_extent } => {
                        let mut p = Vector3::zeros();
                        for k in 0..3 {
                            p[k] = center[k] + half_extent[k] * rng.random_range(-1.0..=1.0);
                        }
                        (p, fixed_bias.clone())
                    }
                    Placement::Roaming { path, height } => {
                        let xy = point_on_path(path, rng);
                        (Vector3::new(xy[0], xy[1], *height), half_normal(self.static_bias_scale, anchors.len(), rng))
                    }
                };
                let mut fixes = Vec::with_capacity(self.max_oversampling);
                let mut attempts = 0;
                while fixes.len() < self.max_oversampling {
                    attempts += 1;
                    if attempts > 100 * self.max_oversampling {
                        return Err(Error::Geometry(format!("class {} yields no 3D fixes", class.label)));
                    }
                    let s = random_scenario(spot, anchors, &channel, bias.clone(), rng)?;
                    let m = run_ranging_round(&s, rng)?;
                    if let Some(f) = gate_and_solve(&m, &set, Dimension::Three).fix() {
                        fixes.push(to_arr(&f.position));
                    }
                }
                out.push(OversampledEvent {
                    label: class.label.clone(),
                    group: format!("{}-{e:04}", class.label),
                    fixes,
                });
            }
        }
        Ok(out)
    }
}

/// One labeled position per event: the median of its first `rate` fixes.
pub fn dataset_at_rate(events: &[OversampledEvent], rate: usize) -> Result<Vec<LabeledFix>> {
    events
        .iter()
        .map(|ev| {
            if ev.fixes.len() < rate {
                return Err(Error::InsufficientData {
                    needed: rate,
                    got: ev.fixes.len(),
                });
            }
            Ok(LabeledFix {
                position: aggregate_oversampled(&ev.fixes[..rate], rate)?,
                label: ev.label.clone(),
                group: ev.group.clone(),
            })
        })
        .collect()
}
