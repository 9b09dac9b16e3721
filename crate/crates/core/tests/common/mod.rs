//! Independent oracles shared by the integration tests and the acceptance
//! target.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use v2x_core::apps::PacketType;
use v2x_core::kernel::SimTime;
use v2x_core::mac::draw_backoff;
use v2x_core::metrics::PredictionError;
use v2x_core::mobility::MobilityConfig;
use v2x_core::packet_log::PacketRecord;
use v2x_core::piggyback::{decode, encode, ReceptionHistory, ENTRY_BYTES};
use v2x_core::predictor::{Models, PredictorConfig, PredictorKind};
use v2x_core::scheduler::{find_gap, Busy};
use v2x_core::training::{evaluate, train_all, TrainingConfig};

/// One random gap-search problem.
#[derive(Debug, Clone)]
pub struct GapCase {
    pub busy: Vec<Busy>,
    pub now: SimTime,
    pub deadline: SimTime,
    pub window_end: SimTime,
    pub own_air: SimTime,
    pub guard: SimTime,
}

pub fn random_gap_case<R: Rng + ?Sized>(rng: &mut R) -> GapCase {
    let now = rng.random_range(0..5_000);
    let n = rng.random_range(0..=8);
    let busy =
        (0..n).map(|_| Busy { start: now + rng.random_range(0..12_000), air: rng.random_range(50..2_000) }).collect();
    GapCase {
        busy,
        now,
        deadline: now + rng.random_range(0..14_000),
        window_end: now + rng.random_range(0..14_000),
        own_air: rng.random_range(100..1_500),
        guard: rng.random_range(0..600),
    }
}

/// Overlap of a frame starting at `x` with the guarded busy intervals,
/// integrated one microsecond at a time.
fn grid_overlap(x: SimTime, c: &GapCase) -> SimTime {
    let mut total = 0;
    for t in x..x + c.own_air {
        for b in &c.busy {
            let lo = b.start.saturating_sub(c.guard);
            if t >= lo && t < b.start + b.air + c.guard {
                total += 1;
            }
        }
    }
    total
}

/// Exhaustive search over every 1 µs start: least overlap, earliest start.
/// `None` when no start fits.
pub fn brute_force_gap(c: &GapCase) -> Option<(SimTime, SimTime)> {
    let limit = c.deadline.min(c.window_end);
    if limit < c.now + c.own_air {
        return None;
    }
    let mut best: Option<(SimTime, SimTime)> = None;
    for x in c.now..=limit - c.own_air {
        let o = grid_overlap(x, c);
        if best.is_none_or(|(bo, _)| o < bo) {
            best = Some((o, x));
        }
    }
    best
}

/// Compares `find_gap` with the exhaustive search on one case.
pub fn check_gap_case(c: &GapCase) -> Result<(), String> {
    let r = find_gap(&c.busy, c.now, c.deadline, c.window_end, c.own_air, c.guard);
    match brute_force_gap(c) {
        None => {
            if r.no_gap && r.chosen_tx == c.now {
                Ok(())
            } else {
                Err(format!("empty range but got {r:?} for {c:?}"))
            }
        }
        Some((o, x)) if r.no_gap => {
            // A saturated window: every start overlaps, so sending now is allowed.
            if o > 0 && r.chosen_tx == c.now {
                Ok(())
            } else {
                Err(format!("no_gap with oracle optimum {o} at {x}: {r:?} for {c:?}"))
            }
        }
        Some((o, x)) => {
            if r.predicted_overlap_us == o && r.chosen_tx == x {
                Ok(())
            } else {
                Err(format!("oracle ({o}, {x}) vs find_gap {r:?} for {c:?}"))
            }
        }
    }
}

/// Pearson chi-square p-value of `draws` backoff draws over `[0, cw]`.
pub fn backoff_uniformity_p<R: Rng + ?Sized>(draws: usize, cw: u32, rng: &mut R) -> f64 {
    let k = cw as usize + 1;
    let mut counts = vec![0u64; k];
    for _ in 0..draws {
        counts[draw_backoff(cw, rng) as usize] += 1;
    }
    let expected = draws as f64 / k as f64;
    let stat: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// Builds a random reception history, reports it and checks that the
/// encoded block decodes to the same entries with 9 bytes each.
pub fn piggyback_round_trip<R: Rng + ?Sized>(rng: &mut R) -> Result<(), String> {
    let budget = rng.random_range(0..=24);
    let mut h = ReceptionHistory::new(budget.max(1));
    let mut t: SimTime = 0;
    for _ in 0..rng.random_range(0..200) {
        t += rng.random_range(0..150_000);
        let ptype = PacketType::ALL[rng.random_range(0..3)];
        h.record(rng.random_range(0..400), ptype, t);
    }
    let now = t + rng.random_range(0..70_000_000);
    let report = h.report(now, budget);
    let block = encode(&report);
    if block.len() != ENTRY_BYTES * report.len() {
        return Err(format!("{} entries encoded into {} bytes", report.len(), block.len()));
    }
    match decode(&block) {
        Ok(back) if back == report => Ok(()),
        Ok(back) => Err(format!("decoded {back:?} from {report:?}")),
        Err(e) => Err(format!("decode failed: {e}")),
    }
}

/// 10 Hz CAMs of `senders` vehicles over `packets` periods, each generation
/// displaced by a uniform jitter in `[-jitter_us, jitter_us]`.
pub fn synthetic_cam_trace<R: Rng + ?Sized>(
    senders: u32,
    packets: u64,
    jitter_us: i64,
    rng: &mut R,
) -> Vec<PacketRecord> {
    let mut out = Vec::new();
    for sender in 0..senders {
        let phase = rng.random_range(0..100_000i64) + jitter_us;
        let speed = rng.random_range(25.0..40.0);
        for k in 0..packets {
            let t = phase + k as i64 * 100_000 + rng.random_range(-jitter_us..=jitter_us);
            out.push(PacketRecord {
                t_us: t as SimTime,
                sender,
                ptype: PacketType::Cam,
                payload: 300,
                speed,
                heading: 90.0,
                x: (speed * t as f64 / 1e6) % 2_000.0,
            });
        }
    }
    out.sort_by_key(|r| (r.t_us, r.sender));
    out
}

/// Held-out prediction errors of a network trained on a synthetic 10 Hz
/// trace, next to those of interval persistence.
pub struct PeriodicOutcome {
    pub predictions: usize,
    pub within_2ms: f64,
    pub lstm_mean_ms: f64,
    pub baseline_mean_ms: f64,
}

pub fn periodic_learning(tc: &TrainingConfig, seed: u64) -> Result<PeriodicOutcome, String> {
    let mob = MobilityConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = synthetic_cam_trace(48, 120, 500, &mut rng);
    let held_out = synthetic_cam_trace(24, 120, 500, &mut rng);
    let (file, _) = train_all(&train, &mob, tc).map_err(|e| e.to_string())?;
    let models = Models::from_weight_file(&file).map_err(|e| e.to_string())?;
    let floor = PredictorConfig::default().min_interval_ms / 1e3;
    let lstm = evaluate(&held_out, &models, PredictorKind::Lstm, &mob, floor).map_err(|e| e.to_string())?;
    let base = evaluate(&held_out, &models, PredictorKind::Baseline, &mob, floor).map_err(|e| e.to_string())?;
    let mean = |e: &[PredictionError]| e.iter().map(|p| p.abs_error_ms).sum::<f64>() / e.len().max(1) as f64;
    Ok(PeriodicOutcome {
        predictions: lstm.len(),
        within_2ms: lstm.iter().filter(|p| p.abs_error_ms <= 2.0).count() as f64 / lstm.len().max(1) as f64,
        lstm_mean_ms: mean(&lstm),
        baseline_mean_ms: mean(&base),
    })
}

/// A short, light scenario file with the persistence predictor, so every
/// learning mode runs without weights.
pub fn small_scenario_toml(name: &str, traffic: &str) -> String {
    format!(
        "name = \"{name}\"\ntraffic = \"{traffic}\"\nduration_s = 2.5\nruns = 2\nseed = 3\n\n\
         [mobility]\nsegment_length_m = 1000.0\ndensity_per_lane_km = 15.0\n\n\
         [predictor]\nkind = \"baseline\"\n\n[metrics]\nwarmup_s = 0.5\n"
    )
}

/// Writes `scenarios` to a fresh directory, sweeps it twice into separate
/// output directories and compares every file byte for byte. Returns the
/// number of files compared.
pub fn sweep_twice(scenarios: &[(&str, &str)], seed_override: Option<&str>) -> Result<usize, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg_dir = root.path().join("configs");
    std::fs::create_dir(&cfg_dir).map_err(|e| e.to_string())?;
    for (name, traffic) in scenarios {
        std::fs::write(cfg_dir.join(format!("{name}.toml")), small_scenario_toml(name, traffic))
            .map_err(|e| e.to_string())?;
    }
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for out in [&a, &b] {
        v2x_core::experiment::sweep(&cfg_dir, out, seed_override).map_err(|e| e.to_string())?;
    }
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    names.sort();
    for n in &names {
        let x = std::fs::read(a.join(n)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(n)).map_err(|e| format!("{}: {e}", n.to_string_lossy()))?;
        if x != y {
            return Err(format!("{} differs between reruns", n.to_string_lossy()));
        }
    }
    Ok(names.len())
}
