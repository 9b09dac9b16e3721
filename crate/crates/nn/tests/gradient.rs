use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2x_nn::gradcheck::{check_random, relative_error};
use v2x_nn::{Architecture, RecurrentNet};

fn random_sequence(rng: &mut ChaCha8Rng, inputs: usize, len: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs = (0..len).map(|_| (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
    (xs, ys)
}

#[test]
fn every_parameter_of_a_small_net_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for arch in [
        Architecture { inputs: 3, dense: vec![4, 5], lstm: 3 },
        Architecture { inputs: 1, dense: vec![2], lstm: 4 },
        Architecture { inputs: 2, dense: vec![], lstm: 2 },
    ] {
        let net = RecurrentNet::init(arch.clone(), &mut rng);
        let (xs, ys) = random_sequence(&mut rng, arch.inputs, 6);
        let checks = check_random(&net, &xs, &ys, usize::MAX, 1e-5, 1e-7, &mut rng).unwrap();
        assert_eq!(checks.len(), arch.param_count());
        for c in checks {
            assert!(c.rel_error < 1e-4, "{arch:?} param {} analytic {} numeric {}", c.index, c.analytic, c.numeric);
        }
    }
}

#[test]
fn sampled_parameters_of_the_standard_net_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = RecurrentNet::init(Architecture::standard(7), &mut rng);
    let (xs, ys) = random_sequence(&mut rng, 7, 5);
    let checks = check_random(&net, &xs, &ys, 120, 1e-5, 1e-7, &mut rng).unwrap();
    assert_eq!(checks.len(), 120);
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn relative_error_uses_floor() {
    assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
    assert!((relative_error(1.0, 1.1, 1e-8) - 0.1 / 1.1).abs() < 1e-15);
    assert!((relative_error(1e-12, 0.0, 1e-8) - 1e-4).abs() < 1e-15);
}
