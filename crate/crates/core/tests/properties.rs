use proptest::prelude::*;

use dnls_core::dynamics::{evolve, RhsKind};
use dnls_core::functionals::{full_energy, gauged_e, gauged_h, mass, psi};
use dnls_core::gauge::{gamma_translate, gauge_forward, gauge_inverse};
use dnls_core::measure::{draw_sample, draw_tilted, weighted_estimate, Ensemble};
use dnls_core::spectral::{fl_norm, l2_norm, project, translate};
use dnls_core::{SpectralState, C64};

fn arb_state(max_n: usize, amp: f64) -> impl Strategy<Value = SpectralState> {
    (1..=max_n).prop_flat_map(move |n| {
        proptest::collection::vec((-amp..amp, -amp..amp), 2 * n + 1).prop_map(move |v| {
            SpectralState::new(n, v.into_iter().map(|(a, b)| C64::new(a, b)).collect()).unwrap()
        })
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flow_conserves_mass_and_reverses(s in arb_state(4, 0.15)) {
        let dt = 1e-3;
        let fwd = evolve(&s, RhsKind::Fgdnls, dt, 0.05).unwrap();
        prop_assert!(rel(mass(&fwd), mass(&s)) < 1e-10);
        let back = evolve(&fwd, RhsKind::Fgdnls, dt, -0.05).unwrap();
        prop_assert!(back.max_abs_diff(&s) < 1e-9);
    }

    #[test]
    fn functionals_are_translation_and_phase_invariant(s in arb_state(6, 0.5), a in -4.0f64..4.0, th in -3.0f64..3.0) {
        let moved = translate(&s, a).scaled(C64::from_polar(1.0, th));
        for f in [mass, psi, gauged_h, gauged_e, full_energy] {
            prop_assert!(rel(f(&moved), f(&s)) < 1e-12);
        }
    }

    #[test]
    fn gauge_preserves_l2_and_inverts(s in arb_state(4, 0.2)) {
        let k = 16 * s.bandwidth();
        let w = gauge_forward(&s, k);
        prop_assert!(rel(l2_norm(&w), l2_norm(&s)) < 1e-10);
        let back = gauge_inverse(&w, k);
        prop_assert!(back.max_abs_diff(&project(&s, k)) < 1e-9);
    }

    #[test]
    fn gamma_is_a_group_preserving_norms(s in arb_state(6, 1.0), t1 in -2.0f64..2.0, t2 in -2.0f64..2.0) {
        let a = gamma_translate(&gamma_translate(&s, t1), t2);
        let b = gamma_translate(&s, t1 + t2);
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
        prop_assert!(rel(fl_norm(&a, 0.65, 3.0).unwrap(), fl_norm(&s, 0.65, 3.0).unwrap()) < 1e-13);
        prop_assert_eq!(gamma_translate(&s, 0.0), s);
    }

    #[test]
    fn fl_norm_is_monotone_and_subadditive(a in arb_state(6, 1.0), b in arb_state(6, 1.0), s1 in 0.0f64..1.0, ds in 0.0f64..1.0) {
        let b = project(&b, a.bandwidth());
        prop_assert!(fl_norm(&a, s1, 3.0).unwrap() <= fl_norm(&a, s1 + ds, 3.0).unwrap() * (1.0 + 1e-14));
        let sum = a.axpy(C64::new(1.0, 0.0), &b);
        prop_assert!(fl_norm(&sum, s1, 3.0).unwrap() <= (fl_norm(&a, s1, 3.0).unwrap() + fl_norm(&b, s1, 3.0).unwrap()) * (1.0 + 1e-14));
    }

    #[test]
    fn draws_are_coupled_across_bandwidths(seed in any::<u64>(), index in 0u64..1000, n in 1usize..20, extra in 0usize..20, tilt in 0.0f64..50.0) {
        prop_assert_eq!(project(&draw_sample(n + extra, seed, index), n), draw_sample(n, seed, index));
        prop_assert_eq!(project(&draw_tilted(n + extra, seed, index, tilt), n), draw_tilted(n, seed, index, tilt));
    }

    #[test]
    fn state_serialization_round_trips(s in arb_state(8, 10.0)) {
        let json = serde_json::to_string(&s).unwrap();
        prop_assert_eq!(&serde_json::from_str::<SpectralState>(&json).unwrap(), &s);
        prop_assert_eq!(&SpectralState::from_bytes(&s.to_bytes()).unwrap(), &s);
    }

    #[test]
    fn ensemble_binary_round_trips(states in proptest::collection::vec(arb_state(3, 2.0), 1..6), b in 0.5f64..5.0, tilt in 0.0f64..10.0) {
        let n = 3;
        let samples: Vec<SpectralState> = states.iter().map(|s| project(s, n)).collect();
        let log_weights = samples.iter().map(|s| if l2_norm(s) <= b { -mass(s) } else { f64::NEG_INFINITY }).collect();
        let e = Ensemble { bandwidth: n, samples, log_weights, cutoff_b: b, seed: 4, tilt };
        let mut buf = Vec::new();
        e.write_to(&mut buf).unwrap();
        prop_assert_eq!(Ensemble::read_from(buf.as_slice()).unwrap(), e);
    }

    #[test]
    fn weighted_mean_of_constant_is_exact(c in -1e6f64..1e6, lw in proptest::collection::vec(-30.0f64..30.0, 20..60)) {
        let values = vec![c; lw.len()];
        let e = weighted_estimate(&values, &lw);
        if let Ok(e) = e {
            prop_assert_eq!(e.mean, c);
            prop_assert_eq!(e.std_error, 0.0);
        }
    }
}
