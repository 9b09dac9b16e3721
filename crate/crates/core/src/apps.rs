//! Per-vehicle packet generators: CAM, CPM bursts and LDM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::{ms, SimTime};
use crate::mac::AccessCategory;
use crate::mobility::{longitudinal_gap, MobilityConfig, NodeId};
use crate::rng::splitmix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketType {
    Cam,
    Cpm,
    Ldm,
}

impl PacketType {
    pub const ALL: [PacketType; 3] = [PacketType::Cam, PacketType::Cpm, PacketType::Ldm];

    pub fn code(self) -> u8 {
        match self {
            PacketType::Cam => 0,
            PacketType::Cpm => 1,
            PacketType::Ldm => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PacketType::Cam),
            1 => Some(PacketType::Cpm),
            2 => Some(PacketType::Ldm),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PacketType::Cam => "cam",
            PacketType::Cpm => "cpm",
            PacketType::Ldm => "ldm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cam" => Some(PacketType::Cam),
            "cpm" => Some(PacketType::Cpm),
            "ldm" => Some(PacketType::Ldm),
            _ => None,
        }
    }

    pub fn access_category(self) -> AccessCategory {
        match self {
            PacketType::Cam => AccessCategory::BestEffort,
            PacketType::Cpm | PacketType::Ldm => AccessCategory::Background,
        }
    }

    /// Whether the type has a fixed generation period that predictions can
    /// be rolled forward by.
    pub fn is_periodic(self) -> bool {
        matches!(self, PacketType::Cam | PacketType::Ldm)
    }
}

impl std::fmt::Display for PacketType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamMode {
    #[serde(rename = "periodic_10hz")]
    Periodic10Hz,
    Triggered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppsConfig {
    pub cam_mode: CamMode,
    pub cam_payload_bytes: u32,
    pub cpm_payload_bytes: u32,
    pub ldm_payload_bytes: u32,
    /// Upper bound of the uniform delay added to every generation instant.
    pub jitter_us: u64,
    pub check_period_ms: u64,
    pub trigger_position_m: f64,
    pub trigger_heading_deg: f64,
    pub trigger_speed_mps: f64,
    pub cam_min_interval_ms: u64,
    pub cam_max_interval_ms: u64,
    pub cpm_enabled: bool,
    pub cpm_capable_fraction: f64,
    /// Long-run bursts per second of a capable node. 0.7 bursts of five
    /// frames keep the mean frame rate below the 5 Hz CPM limit.
    pub cpm_burst_rate_hz: f64,
    pub cpm_burst_frames: u32,
    pub ldm_enabled: bool,
    pub ldm_period_ms: u64,
    pub cam_deadline_ms: u64,
    pub cpm_deadline_ms: u64,
    pub ldm_deadline_ms: u64,
}

impl Default for AppsConfig {
    fn default() -> Self {
        Self {
            cam_mode: CamMode::Periodic10Hz,
            cam_payload_bytes: 300,
            cpm_payload_bytes: 500,
            ldm_payload_bytes: 750,
            jitter_us: 500,
            check_period_ms: 100,
            trigger_position_m: 4.0,
            trigger_heading_deg: 4.0,
            trigger_speed_mps: 0.5,
            cam_min_interval_ms: 100,
            cam_max_interval_ms: 1000,
            cpm_enabled: false,
            cpm_capable_fraction: 0.5,
            cpm_burst_rate_hz: 0.7,
            cpm_burst_frames: 5,
            ldm_enabled: false,
            ldm_period_ms: 1000,
            cam_deadline_ms: 100,
            cpm_deadline_ms: 100,
            ldm_deadline_ms: 500,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AppsError {
    #[error("check period must be positive")]
    CheckPeriod,
    #[error("CAM interval bounds [{0}, {1}] ms are inconsistent")]
    CamBounds(u64, u64),
    #[error("CPM capable fraction must lie in [0, 1], got {0}")]
    CapableFraction(f64),
    #[error("CPM burst needs at least one frame")]
    BurstFrames,
    #[error("{0} deadline must be positive")]
    Deadline(PacketType),
    #[error("LDM period must be positive")]
    LdmPeriod,
}

impl AppsConfig {
    pub fn validate(&self) -> Result<(), AppsError> {
        if self.check_period_ms == 0 {
            return Err(AppsError::CheckPeriod);
        }
        if self.cam_min_interval_ms > self.cam_max_interval_ms || self.cam_max_interval_ms == 0 {
            return Err(AppsError::CamBounds(self.cam_min_interval_ms, self.cam_max_interval_ms));
        }
        if !(0.0..=1.0).contains(&self.cpm_capable_fraction) {
            return Err(AppsError::CapableFraction(self.cpm_capable_fraction));
        }
        if self.cpm_burst_frames == 0 {
            return Err(AppsError::BurstFrames);
        }
        if self.ldm_period_ms == 0 {
            return Err(AppsError::LdmPeriod);
        }
        for t in PacketType::ALL {
            if self.deadline_us(t) == 0 {
                return Err(AppsError::Deadline(t));
            }
        }
        Ok(())
    }

    pub fn payload_bytes(&self, t: PacketType) -> u32 {
        match t {
            PacketType::Cam => self.cam_payload_bytes,
            PacketType::Cpm => self.cpm_payload_bytes,
            PacketType::Ldm => self.ldm_payload_bytes,
        }
    }

    pub fn deadline_us(&self, t: PacketType) -> SimTime {
        ms(match t {
            PacketType::Cam => self.cam_deadline_ms,
            PacketType::Cpm => self.cpm_deadline_ms,
            PacketType::Ldm => self.ldm_deadline_ms,
        })
    }

    pub fn check_period_us(&self) -> SimTime {
        ms(self.check_period_ms)
    }

    /// Probability that an idle capable node starts a burst at a check tick,
    /// chosen so the long-run burst rate equals `cpm_burst_rate_hz`.
    ///
    /// A cycle is `F` busy ticks plus a geometric number of idle ticks with
    /// mean `(1 − p)/p`; solving `F + (1 − p)/p = C` for the target cycle
    /// length `C` gives `p = 1/(C − F + 1)`.
    pub fn cpm_onset_probability(&self) -> f64 {
        if self.cpm_burst_rate_hz <= 0.0 {
            return 0.0;
        }
        let ticks_per_cycle = 1000.0 / (self.cpm_burst_rate_hz * self.check_period_ms as f64);
        let denom = ticks_per_cycle - self.cpm_burst_frames as f64 + 1.0;
        if denom <= 1.0 {
            1.0
        } else {
            1.0 / denom
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppPacketRequest {
    pub node: NodeId,
    pub ptype: PacketType,
    pub payload_bytes: u32,
    pub created_at: SimTime,
    pub deadline: SimTime,
    pub ac: AccessCategory,
}

pub fn assign_deadline(node: NodeId, ptype: PacketType, created_at: SimTime, cfg: &AppsConfig) -> AppPacketRequest {
    AppPacketRequest {
        node,
        ptype,
        payload_bytes: cfg.payload_bytes(ptype),
        created_at,
        deadline: created_at + cfg.deadline_us(ptype),
        ac: ptype.access_category(),
    }
}

/// Kinematic snapshot a CAM trigger decision looks at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    pub x: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CamTriggerState {
    pub last: Option<(SimTime, Dynamics)>,
}

fn heading_change(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl CamTriggerState {
    /// Evaluated at every check tick; returns whether a CAM is due and, if
    /// so, records the snapshot.
    pub fn check(
        &mut self,
        mode: CamMode,
        now: SimTime,
        dyn_now: Dynamics,
        cfg: &AppsConfig,
        mob: &MobilityConfig,
    ) -> bool {
        let fire = match (mode, self.last) {
            (_, None) | (CamMode::Periodic10Hz, _) => true,
            (CamMode::Triggered, Some((t, d))) => {
                let elapsed = now.saturating_sub(t);
                if elapsed >= ms(cfg.cam_max_interval_ms) {
                    true
                } else if elapsed < ms(cfg.cam_min_interval_ms) {
                    false
                } else {
                    longitudinal_gap(dyn_now.x, d.x, mob) >= cfg.trigger_position_m
                        || heading_change(dyn_now.heading, d.heading) >= cfg.trigger_heading_deg
                        || (dyn_now.speed - d.speed).abs() >= cfg.trigger_speed_mps
                }
            }
        };
        if fire {
            self.last = Some((now, dyn_now));
        }
        fire
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CpmBurstState {
    pub frames_remaining: u32,
}

impl CpmBurstState {
    pub fn burst_active(&self) -> bool {
        self.frames_remaining > 0
    }

    /// Evaluated at every check tick of a capable node.
    pub fn tick<R: Rng + ?Sized>(&mut self, onset_probability: f64, burst_frames: u32, rng: &mut R) -> bool {
        if self.frames_remaining > 0 {
            self.frames_remaining -= 1;
            return true;
        }
        if onset_probability > 0.0 && rng.random_bool(onset_probability.min(1.0)) {
            self.frames_remaining = burst_frames - 1;
            return true;
        }
        false
    }
}

/// Deterministic 50/50-style capability split from node id and run seed.
pub fn cpm_capable(node: NodeId, seed: u64, fraction: f64) -> bool {
    let h = splitmix64(seed ^ (u64::from(node).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    ((h >> 11) as f64 / (1u64 << 53) as f64) < fraction
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn still() -> Dynamics {
        Dynamics { x: 100.0, heading: 0.0, speed: 30.0 }
    }

    #[test]
    fn periodic_fires_every_tick() {
        let cfg = AppsConfig::default();
        let mob = MobilityConfig::default();
        let mut s = CamTriggerState::default();
        let fires = (0..10).filter(|k| s.check(CamMode::Periodic10Hz, ms(100 * k), still(), &cfg, &mob)).count();
        assert_eq!(fires, 10);
    }

    #[test]
    fn stationary_triggered_fires_once_per_second() {
        let cfg = AppsConfig::default();
        let mob = MobilityConfig::default();
        let mut s = CamTriggerState::default();
        let times: Vec<u64> =
            (0..50).map(|k| ms(100 * k)).filter(|&t| s.check(CamMode::Triggered, t, still(), &cfg, &mob)).collect();
        assert_eq!(times, vec![0, ms(1000), ms(2000), ms(3000), ms(4000)]);
    }

    #[test]
    fn triggered_at_forty_mps_fires_every_tick() {
        let cfg = AppsConfig::default();
        let mob = MobilityConfig::default();
        let mut s = CamTriggerState::default();
        let mut fires = 0;
        for k in 0..20u64 {
            let d = Dynamics { x: 4.0 * k as f64, heading: 0.0, speed: 40.0 };
            fires += usize::from(s.check(CamMode::Triggered, ms(100 * k), d, &cfg, &mob));
        }
        assert_eq!(fires, 20);
    }

    #[test]
    fn triggered_at_twenty_five_fires_every_other_tick() {
        let cfg = AppsConfig::default();
        let mob = MobilityConfig::default();
        let mut s = CamTriggerState::default();
        let mut fires = 0;
        for k in 0..20u64 {
            let d = Dynamics { x: 2.5 * k as f64, heading: 0.0, speed: 25.0 };
            fires += usize::from(s.check(CamMode::Triggered, ms(100 * k), d, &cfg, &mob));
        }
        assert_eq!(fires, 10);
    }

    #[test]
    fn heading_and_speed_triggers() {
        let cfg = AppsConfig::default();
        let mob = MobilityConfig::default();
        let mut s = CamTriggerState::default();
        assert!(s.check(CamMode::Triggered, 0, still(), &cfg, &mob));
        let turned = Dynamics { heading: 4.5, ..still() };
        assert!(!s.check(CamMode::Triggered, ms(50), turned, &cfg, &mob));
        assert!(s.check(CamMode::Triggered, ms(100), turned, &cfg, &mob));
        let faster = Dynamics { speed: 30.5, heading: 4.5, ..still() };
        assert!(s.check(CamMode::Triggered, ms(200), faster, &cfg, &mob));
        // 359° vs 1° is a 2° change.
        assert_eq!(heading_change(359.0, 1.0), 2.0);
    }

    #[test]
    fn burst_has_five_frames_at_consecutive_ticks() {
        let mut s = CpmBurstState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(s.tick(1.0, 5, &mut rng));
        for _ in 0..4 {
            assert!(s.burst_active());
            assert!(s.tick(0.0, 5, &mut rng));
        }
        assert!(!s.burst_active());
        assert!(!s.tick(0.0, 5, &mut rng));
    }

    #[test]
    fn onset_probability_targets_rate() {
        let cfg = AppsConfig { cpm_burst_rate_hz: 1.0, ..Default::default() };
        assert!((cfg.cpm_onset_probability() - 1.0 / 6.0).abs() < 1e-12);
        let busy = AppsConfig { cpm_burst_rate_hz: 5.0, ..Default::default() };
        assert_eq!(busy.cpm_onset_probability(), 1.0);
    }

    #[test]
    fn deadlines() {
        let cfg = AppsConfig::default();
        let r = assign_deadline(3, PacketType::Cam, 1_000, &cfg);
        assert_eq!(r.deadline, 101_000);
        assert_eq!(r.ac, AccessCategory::BestEffort);
        let r = assign_deadline(3, PacketType::Ldm, 1_000, &cfg);
        assert_eq!(r.deadline, 501_000);
        assert_eq!(r.payload_bytes, 750);
        assert_eq!(r.ac, AccessCategory::Background);
    }

    #[test]
    fn capability_split_is_roughly_half() {
        let n = (0..10_000).filter(|&id| cpm_capable(id, 42, 0.5)).count();
        assert!((4_700..5_300).contains(&n), "{n}");
        assert_eq!(cpm_capable(17, 1, 0.5), cpm_capable(17, 1, 0.5));
    }

    #[test]
    fn packet_type_codes_round_trip() {
        for t in PacketType::ALL {
            assert_eq!(PacketType::from_code(t.code()), Some(t));
            assert_eq!(PacketType::parse(t.as_str()), Some(t));
        }
        assert_eq!(PacketType::from_code(7), None);
    }
}
