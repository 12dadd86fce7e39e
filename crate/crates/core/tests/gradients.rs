mod common;

use common::fd::*;
use common::*;
use spcat::losses::{combined, koleo};

const TOL: f64 = 1e-4;

#[test]
fn koleo_matches_finite_differences() {
    for (d, seed) in [(4, 1), (8, 2)] {
        let err = koleo_error(16, d, seed);
        assert!(err < TOL, "d={d}: {err}");
    }
}

#[test]
fn triplet_matches_finite_differences() {
    let (err, active) = triplet_error(8, 50, 3);
    assert!(err < TOL, "{err}");
    assert!(active > 10, "only {active} active triplets exercised");
}

#[test]
fn combined_matches_finite_differences() {
    for (d, seed) in [(4, 4), (8, 5)] {
        for lambda in [0.0, 0.01, 0.5] {
            let err = combined_error(16, d, seed, lambda);
            assert!(err < TOL, "d={d} λ={lambda}: {err}");
        }
    }
}

#[test]
fn combined_gradient_is_linear_in_lambda() {
    let y = random_matrix(16, 4, &mut rng(6));
    let triplets = batch_triplets(16);
    let rank = combined(&y, &triplets, 0.0).unwrap().grad;
    let k = koleo(y.view()).unwrap().grad;
    for lambda in [0.0, 0.01, 1.0] {
        let g = combined(&y, &triplets, lambda).unwrap().grad;
        let expected = &rank + &(&k * lambda);
        assert!(g.iter().zip(expected.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn network_matches_finite_differences() {
    for d_out in [4, 8] {
        let err = network_error(16, d_out, 0.05);
        assert!(err < TOL, "d_out={d_out}: {err}");
    }
}
