//! Scenario files (TOML).
//!
//! Every section is optional at parse time; each command then demands the
//! sections it needs. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::Classifier;
use crate::energy::{BatteryState, ConverterModel, SolarCellModel};
use crate::error::{Error, Result};
use crate::office::{self, AssetStudy};
use crate::ranging::{ClockModel, DEFAULT_MAX_RANGE, DEFAULT_TICK, MAX_DRIFT_PPM};
use crate::tag::{PowerModeProfile, TagSimConfig, Transceiver};
use crate::trace::{reference_position, DayWindow, SynthesisStats};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: Option<u64>,
    pub geometry: Option<GeometryConfig>,
    #[serde(default)]
    pub ranging: RangingConfig,
    #[serde(default)]
    pub power: PowerModeProfile,
    #[serde(default)]
    pub budget: BudgetConfig,
    pub energy: Option<EnergyConfig>,
    pub classify: Option<ClassifyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// `"office"` fills in the reference anchors and test points.
    pub preset: Option<String>,
    pub anchors: Option<Vec<[f64; 3]>>,
    /// Tag positions: one exchange set per position for `range`, the truth
    /// set for `locate`.
    pub positions: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionChoice {
    #[serde(rename = "2d")]
    Two,
    #[serde(rename = "3d")]
    Three,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangingConfig {
    pub noise_sigma: f64,
    /// Clock drifts are drawn uniformly from +-drift_ppm.
    pub drift_ppm: f64,
    pub tick_duration: f64,
    pub max_range: f64,
    /// Per-anchor non-negative range excess, meters.
    pub nlos_bias: Option<Vec<f64>>,
    /// Rounds per position.
    pub rounds: usize,
    pub dimensions: Vec<DimensionChoice>,
}

impl Default for RangingConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            drift_ppm: 0.0,
            tick_duration: DEFAULT_TICK,
            max_range: DEFAULT_MAX_RANGE,
            nlos_bias: None,
            rounds: 1,
            dimensions: vec![DimensionChoice::Two, DimensionChoice::Three],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub battery_voltage: f64,
    pub oversampling: u32,
    pub transceiver: Transceiver,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            battery_voltage: 3.7,
            oversampling: 1,
            transceiver: Transceiver::Dw3000,
        }
    }
}

/// A parameter set given by preset name or spelled out inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Preset<T> {
    Named(String),
    Inline(T),
}

impl<T: Default + Clone> Preset<T> {
    fn resolve(&self, key: &str, names: &[&str]) -> Result<T> {
        match self {
            Preset::Inline(t) => Ok(t.clone()),
            Preset::Named(n) if names.contains(&n.as_str()) => Ok(T::default()),
            Preset::Named(n) => Err(Error::Config(format!("{key}: unknown preset {n:?}, expected one of {names:?}"))),
        }
    }
}

pub const CELL_PRESETS: &[&str] = &["default", "flexible-70x37"];
pub const CONVERTER_PRESETS: &[&str] = &["default", "boost-synthetic"];
pub const BATTERY_PRESETS: &[&str] = &["default", "lipo-50mah"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    #[serde(default = "default_preset")]
    pub cell: Preset<SolarCellModel>,
    #[serde(default = "default_preset")]
    pub converter: Preset<ConverterModel>,
    #[serde(default = "default_preset")]
    pub battery: Preset<BatteryState>,
    /// Constant idle draw; defaults to the profile's SLEEP power.
    pub base_load_power: Option<f64>,
    /// Evenly spaced localizations per day charged at the budget energy.
    #[serde(default)]
    pub localizations_per_day: f64,
    /// Motion trace whose localizations are charged instead.
    pub motion_trace: Option<PathBuf>,
    #[serde(default)]
    pub tag: TagSimConfig,
    #[serde(default)]
    pub surplus_sink: bool,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    #[serde(default = "default_record_interval")]
    pub record_interval: f64,
    #[serde(default)]
    pub day_window: DayWindow,
    /// Self-discharge rates for the sweep, fraction per month.
    #[serde(default = "default_rates")]
    pub self_discharge_rates: Vec<f64>,
    #[serde(default = "default_true")]
    pub find_crossing: bool,
    pub traces: Vec<TraceSource>,
}

fn default_preset<T>() -> Preset<T> {
    Preset::Named("default".into())
}
fn default_max_step() -> f64 {
    60.0
}
fn default_record_interval() -> f64 {
    3600.0
}
fn default_rates() -> Vec<f64> {
    (0..=10).map(|k| k as f64 * 0.01).collect()
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    pub label: String,
    /// CSV `timestamp_s,lux`.
    pub path: Option<PathBuf>,
    /// Name of a reference office position to imitate.
    pub reference: Option<String>,
    pub synthesize: Option<SynthesisStats>,
    pub n_days: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub classifier: Classifier,
    pub folds: usize,
    pub oversampling: Vec<usize>,
    /// CSV `x,y,z,label,group`; the office study is simulated when absent.
    pub dataset: Option<PathBuf>,
    pub study: AssetStudy,
    /// Chance-level check: permute labels before cross-validating.
    pub shuffle_labels: bool,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            classifier: Classifier::default(),
            folds: 10,
            oversampling: vec![1, 5, 15],
            dataset: None,
            study: AssetStudy::default(),
            shuffle_labels: false,
        }
    }
}

fn cfg_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn missing(key: &str) -> Error {
    Error::Config(format!("missing key `{key}`"))
}

fn check_file(key: &str, p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{key}: file {} does not exist", p.display())))
    }
}

impl ScenarioConfig {
    /// Parses a file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(e) = &mut self.energy {
            e.motion_trace.as_mut().map(fix);
            for t in &mut e.traces {
                t.path.as_mut().map(fix);
            }
        }
        if let Some(c) = &mut self.classify {
            c.dataset.as_mut().map(fix);
        }
    }

    /// Anchors after preset expansion.
    pub fn anchors(&self) -> Result<Vec<[f64; 3]>> {
        let g = self.geometry.as_ref().ok_or_else(|| missing("geometry.anchors"))?;
        match (&g.anchors, g.preset.as_deref()) {
            (Some(a), _) => Ok(a.clone()),
            (None, Some("office")) => Ok(office::ANCHORS.to_vec()),
            (None, Some(p)) => Err(Error::Config(format!("geometry.preset: unknown preset {p:?}"))),
            (None, None) => Err(missing("geometry.anchors")),
        }
    }

    pub fn positions(&self) -> Result<Vec<[f64; 3]>> {
        let g = self.geometry.as_ref().ok_or_else(|| missing("geometry.positions"))?;
        match (&g.positions, g.preset.as_deref()) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some("office")) => Ok(office::test_positions().iter().map(|p| [p.x, p.y, p.z]).collect()),
            _ => Err(missing("geometry.positions")),
        }
    }

    fn validate_ranging(&self) -> Result<()> {
        let r = &self.ranging;
        let anchors = self.anchors()?;
        let positions = self.positions()?;
        if anchors.is_empty() {
            return Err(Error::Config("geometry.anchors: at least one anchor required".into()));
        }
        if positions.is_empty() {
            return Err(Error::Config("geometry.positions: at least one position required".into()));
        }
        if anchors.iter().chain(&positions).flatten().any(|c| !c.is_finite()) {
            return Err(Error::Config("geometry: coordinates must be finite".into()));
        }
        if !(r.noise_sigma >= 0.0) {
            return Err(Error::Config("ranging.noise_sigma must be non-negative".into()));
        }
        if !(r.drift_ppm >= 0.0 && r.drift_ppm <= MAX_DRIFT_PPM) {
            return Err(Error::Config(format!("ranging.drift_ppm must lie in [0, {MAX_DRIFT_PPM}]")));
        }
        ClockModel::new(0.0, 0.0, r.tick_duration).map_err(|e| Error::Config(format!("ranging.tick_duration: {e}")))?;
        if !(r.max_range > 0.0) {
            return Err(Error::Config("ranging.max_range must be positive".into()));
        }
        if r.rounds == 0 {
            return Err(Error::Config("ranging.rounds must be at least 1".into()));
        }
        if let Some(b) = &r.nlos_bias {
            if b.len() != anchors.len() || b.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::Config(format!(
                    "ranging.nlos_bias needs {} non-negative entries",
                    anchors.len()
                )));
            }
        }
        Ok(())
    }

    pub fn validate_range(&self) -> Result<()> {
        self.validate_ranging()
    }

    pub fn validate_locate(&self) -> Result<()> {
        self.validate_ranging()?;
        let n = self.anchors()?.len();
        if self.ranging.dimensions.is_empty() {
            return Err(Error::Config("ranging.dimensions must name at least one of \"2d\", \"3d\"".into()));
        }
        for d in &self.ranging.dimensions {
            let need = match d {
                DimensionChoice::Two => 3,
                DimensionChoice::Three => 4,
            };
            if n < need {
                return Err(Error::Config(format!(
                    "ranging.dimensions: {d:?} localization is under-determined with {n} anchors (need {need})"
                )));
            }
        }
        Ok(())
    }

    pub fn validate_energy(&self) -> Result<()> {
        self.power.validate().map_err(cfg_err)?;
        self.budget_energy()?;
        let e = self.energy.as_ref().ok_or_else(|| missing("energy"))?;
        e.cell().and_then(|c| c.validate().map(|_| c)).map_err(cfg_err)?;
        e.converter().and_then(|c| c.validate().map(|_| c)).map_err(cfg_err)?;
        e.battery().and_then(|b| b.validate().map(|_| b)).map_err(cfg_err)?;
        if let Some(p) = e.base_load_power {
            if !(p >= 0.0) {
                return Err(Error::Config("energy.base_load_power must be non-negative".into()));
            }
        }
        if !(e.localizations_per_day >= 0.0) {
            return Err(Error::Config("energy.localizations_per_day must be non-negative".into()));
        }
        if let Some(m) = &e.motion_trace {
            check_file("energy.motion_trace", m)?;
        }
        if !(e.max_step > 0.0) || !(e.record_interval >= 0.0) {
            return Err(Error::Config("energy.max_step must be positive and record_interval non-negative".into()));
        }
        e.day_window.validate().map_err(cfg_err)?;
        if e.self_discharge_rates.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("energy.self_discharge_rates must be non-negative".into()));
        }
        if e.traces.is_empty() {
            return Err(missing("energy.traces"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, t) in e.traces.iter().enumerate() {
            let key = format!("energy.traces[{i}]");
            if t.label.is_empty() || !t.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::Config(format!("{key}.label must be a non-empty [A-Za-z0-9_-] name")));
            }
            if !seen.insert(t.label.clone()) {
                return Err(Error::Config(format!("{key}.label {:?} is used twice", t.label)));
            }
            t.stats().map_err(|e| Error::Config(format!("{key}: {e}")))?;
            if let Some(p) = &t.path {
                check_file(&format!("{key}.path"), p)?;
            }
        }
        Ok(())
    }

    pub fn validate_classify(&self) -> Result<()> {
        let c = self.classify.as_ref().ok_or_else(|| missing("classify"))?;
        if c.folds < 2 {
            return Err(Error::Config("classify.folds must be at least 2".into()));
        }
        if let Classifier::Knn { k: 0 } = c.classifier {
            return Err(Error::Config("classify.classifier.k must be at least 1".into()));
        }
        if c.oversampling.is_empty() || c.oversampling.contains(&0) {
            return Err(Error::Config("classify.oversampling must list rates >= 1".into()));
        }
        match &c.dataset {
            Some(p) => check_file("classify.dataset", p)?,
            None => {
                c.study.validate().map_err(cfg_err)?;
                let max = *c.oversampling.iter().max().expect("non-empty");
                if max > c.study.max_oversampling {
                    return Err(Error::Config(format!(
                        "classify.oversampling: rate {max} exceeds study.max_oversampling {}",
                        c.study.max_oversampling
                    )));
                }
                if c.study.events_per_class < c.folds {
                    return Err(Error::Config("classify.study.events_per_class must be at least folds".into()));
                }
            }
        }
        Ok(())
    }

    /// Per-localization energy from the budget table.
    pub fn budget_energy(&self) -> Result<f64> {
        let b = &self.budget;
        if !(b.battery_voltage > 0.0) || b.oversampling == 0 {
            return Err(Error::Config("budget: battery_voltage must be positive and oversampling >= 1".into()));
        }
        crate::tag::localization_energy(b.battery_voltage, b.oversampling, b.transceiver).map_err(cfg_err)
    }
}

impl EnergyConfig {
    pub fn cell(&self) -> Result<SolarCellModel> {
        self.cell.resolve("energy.cell", CELL_PRESETS)
    }

    pub fn converter(&self) -> Result<ConverterModel> {
        self.converter.resolve("energy.converter", CONVERTER_PRESETS)
    }

    pub fn battery(&self) -> Result<BatteryState> {
        self.battery.resolve("energy.battery", BATTERY_PRESETS)
    }
}

impl TraceSource {
    /// Synthesis parameters, or `None` for file-backed traces.
    pub fn stats(&self) -> Result<Option<SynthesisStats>> {
        let sources = [self.path.is_some(), self.reference.is_some(), self.synthesize.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(Error::Config("give exactly one of path, reference, synthesize".into()));
        }
        if self.path.is_some() {
            if self.n_days.is_some() {
                return Err(Error::Config("n_days applies only to synthetic traces".into()));
            }
            return Ok(None);
        }
        let mut stats = match (&self.reference, &self.synthesize) {
            (Some(r), _) => {
                let p = reference_position(r)
                    .ok_or_else(|| Error::Config(format!("reference: unknown position {r:?}")))?;
                SynthesisStats::for_position(p, 700)
            }
            (_, Some(s)) => *s,
            _ => unreachable!("exactly one source"),
        };
        if let Some(n) = self.n_days {
            stats.n_days = n;
        }
        stats.validate().map_err(cfg_err)?;
        Ok(Some(stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let e = ScenarioConfig::parse("[ranging]\nnoise = 1.0\n").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("noise")), "{e}");
        assert!(ScenarioConfig::parse("colour = 1\n").is_err());
    }

    #[test]
    fn missing_anchor_section_named() {
        let c = ScenarioConfig::parse("[geometry]\npositions = [[1.0, 1.0, 1.0]]\n").unwrap();
        let e = c.validate_range().unwrap_err();
        assert!(e.to_string().contains("geometry.anchors"), "{e}");
        let c = ScenarioConfig::parse("seed = 1\n").unwrap();
        assert!(c.validate_range().unwrap_err().to_string().contains("geometry"));
    }

    #[test]
    fn under_determined_3d() {
        let c = ScenarioConfig::parse(
            "[geometry]\nanchors = [[0.0,0.0,2.0],[5.0,0.0,2.0],[0.0,5.0,2.0]]\npositions = [[1.0,1.0,1.0]]\n[ranging]\ndimensions = [\"3d\"]\n",
        )
        .unwrap();
        assert!(c.validate_locate().unwrap_err().to_string().contains("under-determined"));
        let c = ScenarioConfig::parse(
            "[geometry]\nanchors = [[0.0,0.0,2.0],[5.0,0.0,2.0],[0.0,5.0,2.0]]\npositions = [[1.0,1.0,1.0]]\n[ranging]\ndimensions = [\"2d\"]\n",
        )
        .unwrap();
        c.validate_locate().unwrap();
    }

    #[test]
    fn office_preset() {
        let c = ScenarioConfig::parse("[geometry]\npreset = \"office\"\n").unwrap();
        assert_eq!(c.anchors().unwrap().len(), 4);
        assert_eq!(c.positions().unwrap().len(), 18);
        c.validate_locate().unwrap();
    }

    #[test]
    fn energy_presets_and_inline() {
        let c = ScenarioConfig::parse(
            r#"
[energy]
battery = { capacity = 100.0, soc = 0.2 }
converter = "boost-synthetic"
[[energy.traces]]
label = "P13"
reference = "P13"
n_days = 3
"#,
        )
        .unwrap();
        c.validate_energy().unwrap();
        let e = c.energy.as_ref().unwrap();
        assert_eq!(e.battery().unwrap().capacity, 100.0);
        assert_eq!(e.battery().unwrap().self_discharge_rate, 0.03);
        assert_eq!(e.traces[0].stats().unwrap().unwrap().n_days, 3);

        let bad = ScenarioConfig::parse("[energy]\ncell = \"perovskite\"\n[[energy.traces]]\nlabel = \"a\"\nreference = \"P13\"\n").unwrap();
        assert!(bad.validate_energy().unwrap_err().to_string().contains("perovskite"));
    }

    #[test]
    fn bounds_checked() {
        let c = ScenarioConfig::parse("[geometry]\npreset = \"office\"\n[ranging]\ndrift_ppm = 500.0\n").unwrap();
        assert!(c.validate_range().is_err());
        let c = ScenarioConfig::parse("[energy]\nbattery = { soc = 1.5 }\n[[energy.traces]]\nlabel = \"a\"\nreference = \"P13\"\n").unwrap();
        assert!(c.validate_energy().is_err());
        let c = ScenarioConfig::parse("[energy]\n[[energy.traces]]\nlabel = \"a\"\npath = \"/nonexistent/file.csv\"\n").unwrap();
        assert!(c.validate_energy().unwrap_err().to_string().contains("does not exist"));
        let c = ScenarioConfig::parse("[classify]\noversampling = [20]\n").unwrap();
        assert!(c.validate_classify().is_err());
    }
}
