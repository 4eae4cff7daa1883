mod common;

use smoothda::filter::{gaspari_cohn, localization_matrix, ring_distance};
use smoothda::models::{integrate, lorenz96_tendency, spin_up, ModelParams, StateVector};

#[test]
fn rk4_is_fourth_order() {
    let ratio = common::rk4_richardson_ratio();
    assert!(ratio >= 12.0, "ratio {ratio}");
}

#[test]
fn forcing_state_is_fixed() {
    for f in [4.0, 8.0, 16.0] {
        assert_eq!(common::fixed_point_drift(f), 0.0);
    }
}

#[test]
fn shifts_commute_with_integration() {
    let p = ModelParams::new(32, 8.0, 0.01).unwrap();
    let u = spin_up(&p, 1e-3, 5.0).unwrap();
    let a = integrate(&u.rotated(5), &p, 300).unwrap();
    let b = integrate(&u, &p, 300).unwrap().rotated(5);
    assert!(common::max_abs_diff(a.as_slice(), b.as_slice()) < 1e-12);
}

#[test]
fn tendency_of_small_example() {
    let du = lorenz96_tendency(&StateVector::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0).unwrap();
    assert_eq!(du.as_slice(), &[-5.0, -3.0, 3.0, -7.0]);
}

/// Pooled temporal standard deviation over all components.
fn climatology(forcing: f64) -> f64 {
    let p = ModelParams::new(128, forcing, 0.01).unwrap();
    let mut u = spin_up(&p, 1e-3, 100.0).unwrap();
    let (mut sum, mut sq, mut count) = (0.0, 0.0, 0.0);
    for _ in 0..2000 {
        u = integrate(&u, &p, 15).unwrap();
        for &v in u.as_slice() {
            sum += v;
            sq += v * v;
            count += 1.0;
        }
    }
    let mean = sum / count;
    (sq / count - mean * mean).sqrt()
}

#[test]
fn climatological_spread_matches_tabulated_values() {
    for (f, expected) in [(8.0, 3.640), (16.0, 6.298)] {
        let got = climatology(f);
        assert!((got - expected).abs() <= 0.1 * expected, "F={f}: {got} vs {expected}");
    }
}

#[test]
fn localization_decreases_with_distance() {
    for c in [1.0, 2.5, 4.0, 10.0] {
        let l = localization_matrix(128, c).unwrap();
        let row: Vec<f64> = (0..=64).map(|j| l.get(0, j)).collect();
        assert_eq!(row[0], 1.0);
        assert!(row.windows(2).all(|w| w[1] <= w[0]), "c={c}");
        for j in 0..128 {
            assert_eq!(l.get(3, (3 + j) % 128), l.get(0, j));
            assert_eq!(l.get(0, j), gaspari_cohn(ring_distance(0, j, 128) as f64, c).unwrap());
        }
    }
}

#[test]
fn wider_localization_dominates() {
    let cs = [0.5, 1.0, 3.0, 7.5, 20.0, 70.0];
    for w in cs.windows(2) {
        let (narrow, wide) = (localization_matrix(64, w[0]).unwrap(), localization_matrix(64, w[1]).unwrap());
        assert!((0..64).all(|j| wide.get(0, j) >= narrow.get(0, j)), "c {} vs {}", w[0], w[1]);
    }
}
