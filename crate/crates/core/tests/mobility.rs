use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use v2x_core::mobility::{distance, gauss_markov, signed_displacement, spawn_scenario, step, Boundary, MobilityConfig};

fn series(n: usize, mean: f64, sigma: f64, alpha: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = mean;
    (0..n)
        .map(|_| {
            v = gauss_markov(v, mean, sigma, alpha, &mut rng);
            v
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn gauss_markov_mean_spread_and_memory() {
    let (mu, sigma, alpha) = (32.5, 3.0, 0.95);
    let xs = series(200_000, mu, sigma, alpha, 5);
    let m = mean(&xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    let lag1 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / ((xs.len() - 1) as f64 * var);
    assert!((m - mu).abs() < 0.5, "mean {m}");
    assert!((var.sqrt() - sigma).abs() < 0.15, "sd {}", var.sqrt());
    assert!((lag1 - alpha).abs() < 0.01, "lag-1 autocorrelation {lag1}");
}

#[test]
fn spawned_highway_drives_within_band() {
    let cfg = MobilityConfig { speed_sigma: 4.0, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut vs = spawn_scenario(&cfg, &mut rng);
    assert_eq!(vs.len(), 600);
    for _ in 0..100 {
        vs = vs.iter().map(|v| step(v, &cfg, &mut rng)).collect();
    }
    for v in &vs {
        assert!((cfg.speed_min..=cfg.speed_max).contains(&v.speed));
        assert!((0.0..cfg.segment_length_m).contains(&v.x));
        assert_eq!(v.t, 100 * cfg.sampling_period_us());
    }
}

proptest! {
    #[test]
    fn step_keeps_speed_in_band_and_position_on_segment(
        speed in 20.0f64..45.0,
        x in 0.0f64..2000.0,
        lane in 0u8..6,
        reflect in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let cfg = MobilityConfig {
            speed_sigma: 5.0,
            boundary: if reflect { Boundary::Reflect } else { Boundary::Wrap },
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = spawn_scenario(&cfg, &mut rng)[0].clone();
        v.speed = speed;
        v.x = x;
        v.lane = lane;
        for _ in 0..20 {
            v = step(&v, &cfg, &mut rng);
            prop_assert!(v.speed >= cfg.speed_min && v.speed <= cfg.speed_max);
            prop_assert!(v.x >= 0.0 && v.x <= cfg.segment_length_m);
        }
    }

    #[test]
    fn wrapped_displacement_is_antisymmetric_and_bounded(a in 0.0f64..2000.0, b in 0.0f64..2000.0) {
        let cfg = MobilityConfig::default();
        let d = signed_displacement(a, b, &cfg);
        prop_assert!(d.abs() <= cfg.segment_length_m / 2.0 + 1e-9);
        prop_assert!((d + signed_displacement(b, a, &cfg)).abs() < 1e-9 || d.abs() == cfg.segment_length_m / 2.0);
    }

    #[test]
    fn distance_is_symmetric(seed in any::<u64>()) {
        let cfg = MobilityConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs = spawn_scenario(&cfg, &mut rng);
        let (a, b) = (&vs[seed as usize % vs.len()], &vs[(seed as usize / 7) % vs.len()]);
        prop_assert!((distance(a, b, &cfg) - distance(b, a, &cfg)).abs() < 1e-9);
    }
}
