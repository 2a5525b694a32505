use awac_core::hpm::{
    calibrate_amplitude, isa_to_workload, operator_performance, performance_curve, predict_next_state,
    HpmChannelParams, HpmParams, IsaScore, PerformanceScore, WorkloadLevel,
};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn w(v: f64) -> WorkloadLevel {
    WorkloadLevel::new(v).unwrap()
}

fn channel(mu: f64, sigma: f64) -> HpmChannelParams {
    HpmChannelParams::peak_normalized(w(mu), sigma).unwrap()
}

fn curve(s: f64, c: &HpmChannelParams) -> f64 {
    performance_curve(w(s), c).value()
}

#[test]
fn exp_minus_two_point() {
    let v = curve(0.9, &channel(0.5, 0.2));
    assert!((v - (-2.0f64).exp()).abs() < 1e-9);
    assert!((v - 0.135335).abs() < 1e-6);
    assert!((curve(0.1, &channel(0.5, 0.2)) - v).abs() < 1e-9);
}

#[test]
fn peak_is_one_at_mu() {
    for (mu, sigma) in [(0.5, 0.2), (0.3, 0.1), (0.8, 0.35)] {
        assert!((curve(mu, &channel(mu, sigma)) - 1.0).abs() < 1e-12);
    }
}

fn trapezoid_area(c: &HpmChannelParams, n: usize) -> f64 {
    let samples: Vec<_> = (0..=n)
        .map(|i| {
            let x = i as f64 / n as f64;
            (w(x), PerformanceScore(curve(x, c)))
        })
        .collect();
    calibrate_amplitude(&samples).unwrap()
}

#[test]
fn trapezoid_error_is_second_order() {
    let c = channel(0.5, 0.2);
    // Area of the scaled Gaussian on [0, 1] from the normal CDF.
    let norm = Normal::new(0.5, 0.2).unwrap();
    let exact = c.amplitude() * (norm.cdf(1.0) - norm.cdf(0.0));
    let errs: Vec<f64> = [16, 32, 64, 128]
        .iter()
        .map(|&n| (trapezoid_area(&c, n) - exact).abs())
        .collect();
    for pair in errs.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!((3.8..=4.2).contains(&ratio), "halving h shrank error by {ratio}");
    }
    assert!(errs[3] < 1e-4);
}

#[test]
fn isa_mapping_is_affine() {
    for (isa, s) in [(-2, 0.0), (-1, 0.25), (0, 0.5), (1, 0.75), (2, 1.0)] {
        assert_eq!(isa_to_workload(IsaScore::new(isa).unwrap()).value(), s);
    }
    assert!(IsaScore::new(3).is_err());
}

proptest! {
    #[test]
    fn curve_is_unimodal_with_argmax_at_mu(mu in 0.05f64..0.95, sigma in 0.05f64..0.5) {
        let c = channel(mu, sigma);
        let grid: Vec<f64> = (0..=400).map(|i| i as f64 / 400.0).collect();
        for pair in grid.windows(2) {
            let (a, b) = (curve(pair[0], &c), curve(pair[1], &c));
            if pair[1] <= mu {
                prop_assert!(b >= a);
            } else if pair[0] >= mu {
                prop_assert!(b <= a);
            }
        }
        let peak = curve(mu, &c);
        prop_assert!(grid.iter().all(|&x| curve(x, &c) <= peak + 1e-15));
    }

    #[test]
    fn argmax_invariant_to_amplitude(mu in 0.05f64..0.95, sigma in 0.05f64..0.5, amp in 0.01f64..10.0) {
        let a = channel(mu, sigma);
        let b = a.with_amplitude(amp).unwrap();
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
        let argmax = |c: &HpmChannelParams| {
            grid.iter()
                .copied()
                .max_by(|x, y| curve(*x, c).total_cmp(&curve(*y, c)))
                .unwrap()
        };
        prop_assert_eq!(argmax(&a), argmax(&b));
        let ratio = curve(0.37, &b) / curve(0.37, &a);
        prop_assert!((ratio - amp / a.amplitude()).abs() < 1e-9 * ratio.max(1.0));
    }

    #[test]
    fn curve_is_symmetric(mu in 0.2f64..0.8, sigma in 0.05f64..0.5, d in 0.0f64..0.2) {
        let c = channel(mu, sigma);
        prop_assert!((curve(mu - d, &c) - curve(mu + d, &c)).abs() < 1e-12);
    }

    #[test]
    fn transition_clamps_and_is_idempotent(s in 0.0f64..=1.0, d in -3.0f64..3.0) {
        let next = predict_next_state(w(s), d);
        prop_assert!((0.0..=1.0).contains(&next.value()));
        prop_assert_eq!(predict_next_state(next, 0.0), next);
        prop_assert_eq!(WorkloadLevel::clamped(next.value()), next);
        if (0.0..=1.0).contains(&(s + d)) {
            prop_assert!((next.value() - (s + d)).abs() < 1e-15);
        }
    }

    #[test]
    fn fusion_is_convex_combination(so in 0.0f64..=1.0, ss in 0.0f64..=1.0) {
        let p = HpmParams::default();
        let fused = operator_performance(w(ss), w(so), &p).value();
        let expect = 0.5 * curve(so, p.objective()) + 0.5 * curve(ss, p.subjective());
        prop_assert!((fused - expect).abs() < 1e-15);
    }
}
