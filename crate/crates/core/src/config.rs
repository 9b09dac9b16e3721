//! Scenario configuration: one TOML file per scenario.
//!
//! Every table is optional; missing keys take their defaults. The traffic
//! pattern fixes the generators and the speed band, so `cam_mode`,
//! `cpm_enabled`, `ldm_enabled`, `speed_min`, `speed_max` and `mean_speed`
//! are overwritten by [`ScenarioConfig::effective`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apps::{AppsConfig, AppsError, CamMode};
use crate::kernel::{SimTime, MICROS_PER_SEC};
use crate::mac::{MacConfig, MacError};
use crate::mobility::{MobilityConfig, MobilityError};
use crate::phy::{PhyConfig, PhyError};
use crate::predictor::PredictorConfig;
use crate::scheduler::LearningMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficPattern {
    #[serde(rename = "cam_10hz")]
    Cam10Hz,
    CamTrigHigh,
    CamTrigLow,
    CamCpm,
    CamCpmLdm,
}

impl TrafficPattern {
    pub const ALL: [TrafficPattern; 5] = [
        TrafficPattern::Cam10Hz,
        TrafficPattern::CamTrigHigh,
        TrafficPattern::CamTrigLow,
        TrafficPattern::CamCpm,
        TrafficPattern::CamCpmLdm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrafficPattern::Cam10Hz => "cam_10hz",
            TrafficPattern::CamTrigHigh => "cam_trig_high",
            TrafficPattern::CamTrigLow => "cam_trig_low",
            TrafficPattern::CamCpm => "cam_cpm",
            TrafficPattern::CamCpmLdm => "cam_cpm_ldm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn label(self) -> &'static str {
        match self {
            TrafficPattern::Cam10Hz => "10 Hz CAM",
            TrafficPattern::CamTrigHigh => "Triggered CAM, 35-45 m/s",
            TrafficPattern::CamTrigLow => "Triggered CAM, 20-30 m/s",
            TrafficPattern::CamCpm => "CAM + CPM",
            TrafficPattern::CamCpmLdm => "CAM + CPM + LDM",
        }
    }

    /// Speed band `(min, max)` in m/s.
    pub fn speed_band(self) -> (f64, f64) {
        match self {
            TrafficPattern::CamTrigHigh => (35.0, 45.0),
            TrafficPattern::CamTrigLow => (20.0, 30.0),
            _ => (20.0, 45.0),
        }
    }

    pub fn cam_mode(self) -> CamMode {
        match self {
            TrafficPattern::Cam10Hz => CamMode::Periodic10Hz,
            _ => CamMode::Triggered,
        }
    }

    pub fn apply(self, mob: &mut MobilityConfig, apps: &mut AppsConfig) {
        let (lo, hi) = self.speed_band();
        mob.speed_min = lo;
        mob.speed_max = hi;
        mob.mean_speed = 0.5 * (lo + hi);
        apps.cam_mode = self.cam_mode();
        apps.cpm_enabled = matches!(self, TrafficPattern::CamCpm | TrafficPattern::CamCpmLdm);
        apps.ldm_enabled = self == TrafficPattern::CamCpmLdm;
    }
}

impl std::fmt::Display for TrafficPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Padding on both sides of every predicted busy interval.
    pub guard_us: SimTime,
    /// Most neighbours the learning node tracks at once.
    pub tracking_cap: usize,
    /// Reception-report entries carried by each CAM; 0 disables reports.
    pub piggyback_budget: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { guard_us: 1_000, tracking_cap: 100, piggyback_budget: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub warmup_s: f64,
    pub bin_width_m: f64,
    pub max_distance_m: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { warmup_s: 2.0, bin_width_m: 25.0, max_distance_m: 300.0 }
    }
}

impl MetricsConfig {
    pub fn warmup_us(&self) -> SimTime {
        (self.warmup_s * MICROS_PER_SEC as f64).round() as SimTime
    }

    pub fn bins(&self) -> usize {
        (self.max_distance_m / self.bin_width_m).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub traffic: TrafficPattern,
    pub mode: LearningMode,
    pub duration_s: f64,
    pub runs: usize,
    pub seed: u64,
    /// Trained predictor; required by the learning modes unless
    /// `predictor.kind = "baseline"`. Relative paths resolve against the
    /// directory of the config file.
    pub weight_file: Option<PathBuf>,
    pub mobility: MobilityConfig,
    pub phy: PhyConfig,
    pub mac: MacConfig,
    pub apps: AppsConfig,
    pub predictor: PredictorConfig,
    pub scheduler: SchedulerConfig,
    pub metrics: MetricsConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            traffic: TrafficPattern::Cam10Hz,
            mode: LearningMode::None,
            duration_s: 60.0,
            runs: 10,
            seed: 1,
            weight_file: None,
            mobility: MobilityConfig::default(),
            phy: PhyConfig::default(),
            mac: MacConfig::default(),
            apps: AppsConfig::default(),
            predictor: PredictorConfig::default(),
            scheduler: SchedulerConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// The message of the TOML parser already names line and column.
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Apps(#[from] AppsError),
    #[error("{0}")]
    Invalid(String),
    #[error("SEED must be an unsigned integer, got '{0}'")]
    Seed(String),
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| ConfigError::Parse { origin: origin.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        if let (Some(w), Some(dir)) = (&cfg.weight_file, path.parent()) {
            if w.is_relative() {
                cfg.weight_file = Some(dir.join(w));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Replaces the base seed with the value of a `SEED` variable, if set.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            self.seed = v.trim().parse().map_err(|_| ConfigError::Seed(v.into()))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let eff = self.effective();
        eff.mobility.validate()?;
        eff.phy.validate()?;
        eff.mac.validate()?;
        eff.apps.validate()?;
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(ConfigError::Invalid(format!("duration_s must be positive, got {}", self.duration_s)));
        }
        if self.runs == 0 {
            return Err(ConfigError::Invalid("runs must be at least 1".into()));
        }
        if !(self.metrics.warmup_s >= 0.0 && self.metrics.warmup_s < self.duration_s) {
            return Err(ConfigError::Invalid(format!(
                "metrics.warmup_s must lie in [0, duration_s), got {}",
                self.metrics.warmup_s
            )));
        }
        if !(self.metrics.bin_width_m > 0.0 && self.metrics.max_distance_m > 0.0) {
            return Err(ConfigError::Invalid("metrics bin width and max distance must be positive".into()));
        }
        if self.predictor.ttl_ms == 0 || self.predictor.inquiry_period_ms == 0 {
            return Err(ConfigError::Invalid("predictor ttl_ms and inquiry_period_ms must be positive".into()));
        }
        if self.predictor.inquiry_period_ms != self.apps.check_period_ms {
            return Err(ConfigError::Invalid(format!(
                "predictor.inquiry_period_ms ({}) must equal apps.check_period_ms ({})",
                self.predictor.inquiry_period_ms, self.apps.check_period_ms
            )));
        }
        if !(self.predictor.min_interval_ms > 0.0) {
            return Err(ConfigError::Invalid("predictor.min_interval_ms must be positive".into()));
        }
        if self.scheduler.piggyback_budget > 1_000 {
            return Err(ConfigError::Invalid("scheduler.piggyback_budget is above 1000 entries".into()));
        }
        Ok(())
    }

    /// The configuration with the traffic pattern applied.
    pub fn effective(&self) -> Self {
        let mut out = self.clone();
        self.traffic.apply(&mut out.mobility, &mut out.apps);
        out
    }

    pub fn duration_us(&self) -> SimTime {
        (self.duration_s * MICROS_PER_SEC as f64).round() as SimTime
    }

    /// Whether a run needs trained weights.
    pub fn needs_weights(&self) -> bool {
        self.mode != LearningMode::None && self.predictor.kind == crate::predictor::PredictorKind::Lstm
    }
}
