//! Log-distance propagation, carrier sense and capture-based reception.
//!
//! Received powers are carried as integer zeptowatts (1e-21 W) so that the
//! running power sum at each receiver can be updated by exact addition and
//! subtraction over a whole run.

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;

/// Zeptowatts.
pub type PowerZw = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyConfig {
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub ref_loss_db_at_1m: f64,
    pub preamble_threshold_dbm: f64,
    pub noise_floor_dbm: f64,
    pub capture_sinr_db: f64,
    /// Arrivals weaker than this are ignored entirely: they neither raise
    /// the carrier-sense sum nor interfere.
    pub interference_cutoff_dbm: f64,
    pub data_rate_bps: u64,
    pub preamble_us: u64,
    pub overhead_bytes: u32,
}

/// Reference loss that puts the −95 dBm detection edge at exactly 250 m for
/// 20 dBm and exponent 2.8.
pub const DEFAULT_REF_LOSS_DB: f64 = 47.857_679_757_182_95;

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            path_loss_exponent: 2.8,
            ref_loss_db_at_1m: DEFAULT_REF_LOSS_DB,
            preamble_threshold_dbm: -95.0,
            noise_floor_dbm: -99.0,
            capture_sinr_db: 4.0,
            interference_cutoff_dbm: -105.0,
            data_rate_bps: 6_000_000,
            preamble_us: 40,
            overhead_bytes: 36,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PhyError {
    #[error("preamble threshold {threshold} dBm must exceed the noise floor {noise} dBm")]
    ThresholdBelowNoise { threshold: f64, noise: f64 },
    #[error("data rate must be positive")]
    DataRate,
    #[error("path loss exponent must be positive, got {0}")]
    Exponent(f64),
    #[error("interference cutoff {cutoff} dBm must not exceed the preamble threshold {threshold} dBm")]
    Cutoff { cutoff: f64, threshold: f64 },
}

impl PhyConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if !(self.preamble_threshold_dbm > self.noise_floor_dbm) {
            return Err(PhyError::ThresholdBelowNoise {
                threshold: self.preamble_threshold_dbm,
                noise: self.noise_floor_dbm,
            });
        }
        if self.data_rate_bps == 0 {
            return Err(PhyError::DataRate);
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(PhyError::Exponent(self.path_loss_exponent));
        }
        if self.interference_cutoff_dbm > self.preamble_threshold_dbm {
            return Err(PhyError::Cutoff {
                cutoff: self.interference_cutoff_dbm,
                threshold: self.preamble_threshold_dbm,
            });
        }
        Ok(())
    }

    /// Distance at which the received power drops to `dbm`.
    pub fn range_for_dbm(&self, dbm: f64) -> f64 {
        10f64.powf((self.tx_power_dbm - self.ref_loss_db_at_1m - dbm) / (10.0 * self.path_loss_exponent))
    }
}

pub fn rx_power_dbm(d: f64, cfg: &PhyConfig) -> f64 {
    cfg.tx_power_dbm - cfg.ref_loss_db_at_1m - 10.0 * cfg.path_loss_exponent * d.max(1.0).log10()
}

pub fn dbm_to_zw(dbm: f64) -> PowerZw {
    (10f64.powf(dbm / 10.0) * 1e18).round() as PowerZw
}

pub fn zw_to_dbm(p: PowerZw) -> f64 {
    10.0 * (p as f64 / 1e18).log10()
}

/// On-air duration of a frame carrying `total_bytes` above the MAC.
pub fn airtime_us(total_bytes: u32, cfg: &PhyConfig) -> SimTime {
    let bits = 8 * (u64::from(total_bytes) + u64::from(cfg.overhead_bytes)) * 1_000_000;
    cfg.preamble_us + bits.div_ceil(cfg.data_rate_bps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReceptionOutcome {
    Received,
    LostCollision,
    BelowThreshold,
}

/// Thresholds of a [`PhyConfig`] converted once to linear units.
#[derive(Debug, Clone)]
pub struct LinkBudget {
    pub preamble_zw: PowerZw,
    pub cutoff_zw: PowerZw,
    pub noise_zw: PowerZw,
    capture_ratio: f64,
    p1m_zw: f64,
    half_exponent: f64,
    pub cutoff_range_m: f64,
}

impl LinkBudget {
    pub fn new(cfg: &PhyConfig) -> Self {
        Self {
            preamble_zw: dbm_to_zw(cfg.preamble_threshold_dbm),
            cutoff_zw: dbm_to_zw(cfg.interference_cutoff_dbm),
            noise_zw: dbm_to_zw(cfg.noise_floor_dbm),
            capture_ratio: 10f64.powf(cfg.capture_sinr_db / 10.0),
            p1m_zw: 10f64.powf((cfg.tx_power_dbm - cfg.ref_loss_db_at_1m) / 10.0) * 1e18,
            half_exponent: cfg.path_loss_exponent / 2.0,
            cutoff_range_m: cfg.range_for_dbm(cfg.interference_cutoff_dbm),
        }
    }

    /// Received power from the squared distance (clamped at 1 m).
    #[inline]
    pub fn power_zw_sq(&self, d2: f64) -> PowerZw {
        (self.p1m_zw * d2.max(1.0).powf(-self.half_exponent)).round() as PowerZw
    }

    pub fn power_zw(&self, d: f64) -> PowerZw {
        self.power_zw_sq(d * d)
    }

    pub fn carrier_sensed(&self, total_zw: PowerZw) -> bool {
        total_zw >= self.preamble_zw
    }

    /// Decides one reception given the strongest interferer seen at any
    /// point during the frame (0 if none) and whether the receiver was
    /// transmitting at any point during it.
    pub fn resolve(&self, signal_zw: PowerZw, max_interferer_zw: PowerZw, half_duplex: bool) -> ReceptionOutcome {
        if signal_zw < self.preamble_zw {
            return ReceptionOutcome::BelowThreshold;
        }
        if half_duplex {
            return ReceptionOutcome::LostCollision;
        }
        let denom = (max_interferer_zw as f64) + (self.noise_zw as f64);
        if signal_zw as f64 >= self.capture_ratio * denom {
            ReceptionOutcome::Received
        } else if max_interferer_zw > 0 {
            ReceptionOutcome::LostCollision
        } else {
            ReceptionOutcome::BelowThreshold
        }
    }
}

/// Reception of one frame against every frame that overlaps it in time at
/// the receiver.
pub fn resolve_reception(
    signal_zw: PowerZw,
    concurrent_zw: &[PowerZw],
    receiver_transmitting: bool,
    budget: &LinkBudget,
) -> ReceptionOutcome {
    let max_i = concurrent_zw.iter().copied().max().unwrap_or(0);
    budget.resolve(signal_zw, max_i, receiver_transmitting)
}

/// Carrier sense over the powers of every frame currently in flight.
pub fn carrier_sensed(in_flight_zw: &[PowerZw], budget: &LinkBudget) -> bool {
    budget.carrier_sensed(in_flight_zw.iter().sum())
}
