use std::f64::consts::PI;

use dotspec::quadrature::integrate_panels;
use dotspec::sequence::{filter_closed_form, harmonic_weights, PulseSequence, SINGULAR_THRESHOLD};
use proptest::prelude::*;

const COUNTS: [usize; 5] = [0, 1, 2, 4, 8];

fn near_singular(n: usize, z: f64) -> bool {
    n > 0 && (z / (2.0 * n as f64)).cos().abs() < SINGULAR_THRESHOLD
}

proptest! {
    #[test]
    fn closed_form_matches_segment_sum(idx in 0usize..5, z in 1e-3f64..200.0) {
        let n = COUNTS[idx];
        prop_assume!(!near_singular(n, z));
        let seq = PulseSequence::for_count(n, 1.0).unwrap();
        let exact = seq.filter_value(z);
        let closed = filter_closed_form(n, z).unwrap();
        prop_assume!(exact > 1e-6);
        prop_assert!((closed - exact).abs() <= 1e-9 * exact, "n={} z={} {} vs {}", n, z, closed, exact);
    }

    #[test]
    fn filter_is_finite_and_non_negative(idx in 0usize..5, f_mhz in 0.0f64..200.0, t in 0.01f64..2.0) {
        let seq = PulseSequence::for_count(COUNTS[idx], t).unwrap();
        let w = 2.0 * PI * f_mhz;
        let v = seq.filter_value(w);
        prop_assert!(v.is_finite() && v >= 0.0);
        prop_assert!(seq.filter_over_omega2(w).is_finite());
    }

    #[test]
    fn switching_function_is_balanced_square_wave(idx in 1usize..5, t in 0.01f64..5.0) {
        let seq = PulseSequence::for_count(COUNTS[idx], t).unwrap();
        let r = seq.response(0.0);
        prop_assert!(r.norm() <= 1e-12 * t);
    }
}

#[test]
fn singular_points_have_finite_limits() {
    for n in [1usize, 2, 4, 8] {
        let seq = PulseSequence::for_count(n, 1.0).unwrap();
        for m in 0..4 {
            let z = n as f64 * PI * (2 * m + 1) as f64;
            assert!(filter_closed_form(n, z).is_err());
            let limit = seq.filter_value(z);
            let left = seq.filter_value(z * (1.0 - 1e-7));
            assert!(limit.is_finite() && limit > 0.0);
            assert!((limit - left).abs() <= 1e-5 * limit, "n={n} m={m}");
        }
    }
}

#[test]
fn static_noise_is_rejected_by_echoes() {
    let ramsey = PulseSequence::ramsey(1.0).unwrap();
    assert!((ramsey.filter_over_omega2(1e-6) - 0.5).abs() < 1e-9);
    for n in [1usize, 2, 4, 8] {
        let seq = PulseSequence::cpmg(n, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for w in [1e-1, 1e-2, 1e-3] {
            let ratio = seq.filter_value(w) / ramsey.filter_value(w);
            assert!(ratio < last);
            last = ratio;
        }
        assert!(last < 1e-6, "n={n}: {last}");
    }
}

#[test]
fn parseval_identity_for_every_sequence() {
    for &n in &COUNTS {
        let t = 0.7;
        let seq = PulseSequence::for_count(n, t).unwrap();
        // (1/pi) int_0^inf F/w^2 dw; beyond W the mean filter value 1 + 2n closes the tail
        let w_max = 2000.0 * PI / t;
        let panels: Vec<f64> = (0..=4000).map(|i| w_max * i as f64 / 4000.0).collect();
        let head = integrate_panels(|w| seq.filter_over_omega2(w), &panels, 1e-11, 1e-300, 1 << 20).value;
        let tail = (1.0 + 2.0 * n as f64) / w_max;
        let chi = (head + tail) / PI;
        assert!((chi - t / 2.0).abs() <= 1e-6 * t / 2.0, "n={n}: {chi}");
    }
}

#[test]
fn comb_weights_sum_to_one_half() {
    let w = harmonic_weights(4, 0.1, 20_001).unwrap();
    let total: f64 = w.iter().map(|h| h.weight).sum();
    assert!((total - 0.5).abs() < 1e-4);
    assert!((w[0].omega - PI / 0.1).abs() < 1e-12);
    assert!(harmonic_weights(0, 0.1, 11).is_err());
    assert!(harmonic_weights(2, 0.1, 10).is_err());
}
