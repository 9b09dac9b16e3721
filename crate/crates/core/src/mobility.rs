//! Gauss-Markov longitudinal motion on a straight multi-lane highway.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// The segment is a ring; vehicles leaving one end re-enter at the other.
    Wrap,
    /// Vehicles bounce off the segment ends and reverse direction.
    Reflect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    /// Gauss-Markov memory level.
    pub alpha: f64,
    pub sampling_period_s: f64,
    pub mean_speed: f64,
    /// Stationary standard deviation of the speed process, m/s.
    pub speed_sigma: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Stationary standard deviation of the heading perturbation, degrees.
    pub heading_sigma_deg: f64,
    pub segment_length_m: f64,
    pub density_per_lane_km: f64,
    pub lanes_per_direction: u8,
    pub lane_width_m: f64,
    pub boundary: Boundary,
    /// Receivers closer than this to a segment end are left out of the
    /// metrics. Only meaningful with [`Boundary::Reflect`].
    pub edge_exclusion_m: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            sampling_period_s: 0.1,
            mean_speed: 32.5,
            speed_sigma: 0.5,
            speed_min: 20.0,
            speed_max: 45.0,
            heading_sigma_deg: 0.5,
            segment_length_m: 2000.0,
            density_per_lane_km: 50.0,
            lanes_per_direction: 3,
            lane_width_m: 4.0,
            boundary: Boundary::Wrap,
            edge_exclusion_m: 0.0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MobilityError {
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("sampling period must be positive, got {0}")]
    SamplingPeriod(f64),
    #[error("density must be positive, got {0}")]
    Density(f64),
    #[error("segment length must be positive, got {0}")]
    Segment(f64),
    #[error("speed band [{0}, {1}] is empty")]
    SpeedBand(f64, f64),
    #[error("at least one lane per direction is needed")]
    Lanes,
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<(), MobilityError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(MobilityError::Alpha(self.alpha));
        }
        if !(self.sampling_period_s > 0.0) {
            return Err(MobilityError::SamplingPeriod(self.sampling_period_s));
        }
        if !(self.density_per_lane_km > 0.0) {
            return Err(MobilityError::Density(self.density_per_lane_km));
        }
        if !(self.segment_length_m > 0.0) {
            return Err(MobilityError::Segment(self.segment_length_m));
        }
        if !(self.speed_min <= self.speed_max) || self.speed_min < 0.0 {
            return Err(MobilityError::SpeedBand(self.speed_min, self.speed_max));
        }
        if self.lanes_per_direction == 0 {
            return Err(MobilityError::Lanes);
        }
        Ok(())
    }

    pub fn lanes(&self) -> u8 {
        2 * self.lanes_per_direction
    }

    pub fn vehicles_per_lane(&self) -> usize {
        (self.density_per_lane_km * self.segment_length_m / 1000.0).round() as usize
    }

    pub fn sampling_period_us(&self) -> SimTime {
        (self.sampling_period_s * 1e6).round() as SimTime
    }

    pub fn lane_y(&self, lane: u8) -> f64 {
        lane as f64 * self.lane_width_m
    }

    /// Lanes `0..lanes_per_direction` run towards +x.
    pub fn lane_heading(&self, lane: u8) -> f64 {
        if lane < self.lanes_per_direction {
            0.0
        } else {
            180.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: NodeId,
    pub lane: u8,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    /// Travel heading in degrees: 0 or 180 plus the perturbation.
    pub heading: f64,
    /// +1 towards +x, −1 towards −x.
    pub direction: f64,
    pub heading_offset: f64,
    pub t: SimTime,
}

/// One Gauss-Markov step of `value` towards `mean`.
pub fn gauss_markov<R: Rng + ?Sized>(value: f64, mean: f64, sigma: f64, alpha: f64, rng: &mut R) -> f64 {
    let noise: f64 = if sigma > 0.0 && alpha < 1.0 { StandardNormal.sample(rng) } else { 0.0 };
    alpha * value + (1.0 - alpha) * mean + (1.0 - alpha * alpha).sqrt() * sigma * noise
}

/// Advances one vehicle by one sampling period.
pub fn step<R: Rng + ?Sized>(state: &VehicleState, cfg: &MobilityConfig, rng: &mut R) -> VehicleState {
    let speed =
        gauss_markov(state.speed, cfg.mean_speed, cfg.speed_sigma, cfg.alpha, rng).clamp(cfg.speed_min, cfg.speed_max);
    let heading_offset = gauss_markov(state.heading_offset, 0.0, cfg.heading_sigma_deg, cfg.alpha, rng);
    let mut next = state.clone();
    next.speed = speed;
    next.heading_offset = heading_offset;
    next.t = state.t + cfg.sampling_period_us();
    let l = cfg.segment_length_m;
    let mut x = state.x + state.direction * speed * cfg.sampling_period_s;
    match cfg.boundary {
        Boundary::Wrap => x = x.rem_euclid(l),
        Boundary::Reflect => {
            if x < 0.0 {
                x = (-x).min(l);
                next.direction = 1.0;
            } else if x > l {
                x = (2.0 * l - x).max(0.0);
                next.direction = -1.0;
            }
        }
    }
    // rem_euclid can return exactly `l` for tiny negative inputs.
    if x >= l && cfg.boundary == Boundary::Wrap {
        x = 0.0;
    }
    next.x = x;
    let base = if next.direction > 0.0 { 0.0 } else { 180.0 };
    next.heading = base + heading_offset;
    next
}

/// Places `vehicles_per_lane` vehicles uniformly at random on every lane.
pub fn spawn_scenario<R: Rng + ?Sized>(cfg: &MobilityConfig, rng: &mut R) -> Vec<VehicleState> {
    let per_lane = cfg.vehicles_per_lane();
    let l = cfg.segment_length_m;
    let mut out = Vec::with_capacity(per_lane * cfg.lanes() as usize);
    for lane in 0..cfg.lanes() {
        let xs = loop {
            let mut xs: Vec<f64> = (0..per_lane).map(|_| rng.random_range(0.0..l)).collect();
            xs.sort_by(f64::total_cmp);
            if xs.windows(2).all(|w| w[1] > w[0]) {
                break xs;
            }
        };
        let heading = cfg.lane_heading(lane);
        for x in xs {
            let speed = if cfg.speed_max > cfg.speed_min {
                rng.random_range(cfg.speed_min..=cfg.speed_max)
            } else {
                cfg.speed_min
            };
            out.push(VehicleState {
                id: out.len() as NodeId,
                lane,
                x,
                y: cfg.lane_y(lane),
                speed,
                heading,
                direction: if heading == 0.0 { 1.0 } else { -1.0 },
                heading_offset: 0.0,
                t: 0,
            });
        }
    }
    out
}

/// Longitudinal separation, taking the ring into account.
pub fn longitudinal_gap(xa: f64, xb: f64, cfg: &MobilityConfig) -> f64 {
    let dx = (xa - xb).abs();
    match cfg.boundary {
        Boundary::Wrap => dx.min(cfg.segment_length_m - dx),
        Boundary::Reflect => dx,
    }
}

/// Signed displacement from `from` to `to` along x, shortest way round the ring.
pub fn signed_displacement(from: f64, to: f64, cfg: &MobilityConfig) -> f64 {
    let d = to - from;
    match cfg.boundary {
        Boundary::Wrap => {
            let l = cfg.segment_length_m;
            let d = d.rem_euclid(l);
            if d > l / 2.0 {
                d - l
            } else {
                d
            }
        }
        Boundary::Reflect => d,
    }
}

pub fn distance(a: &VehicleState, b: &VehicleState, cfg: &MobilityConfig) -> f64 {
    longitudinal_gap(a.x, b.x, cfg).hypot(a.y - b.y)
}

/// The vehicle closest to the segment midpoint in the centre lane of the
/// +x carriageway.
pub fn pick_learning_node(vehicles: &[VehicleState], cfg: &MobilityConfig) -> Option<NodeId> {
    let lane = cfg.lanes_per_direction / 2;
    let mid = cfg.segment_length_m / 2.0;
    vehicles
        .iter()
        .filter(|v| v.lane == lane)
        .min_by(|a, b| (a.x - mid).abs().total_cmp(&(b.x - mid).abs()))
        .map(|v| v.id)
}

/// Whether a receiver at `x` counts towards metrics under edge exclusion.
pub fn in_measured_region(x: f64, cfg: &MobilityConfig) -> bool {
    match cfg.boundary {
        Boundary::Wrap => true,
        Boundary::Reflect => x >= cfg.edge_exclusion_m && x <= cfg.segment_length_m - cfg.edge_exclusion_m,
    }
}
