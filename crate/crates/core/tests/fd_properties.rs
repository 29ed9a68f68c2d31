use proptest::prelude::*;

use areal_traffic::fd::{self, CalibrationOptions, FdFamily, FdParams};
use areal_traffic::kinematic;
use areal_traffic::units::{density, kmh};

const KJ: f64 = 1.0;

/// One parameter set per family, two-regime families continuity-consistent.
fn family_params() -> impl Strategy<Value = FdParams> {
    let speed = || (20.0..60.0f64).prop_map(kmh);
    let kc = || (100.0..400.0f64).prop_map(density);
    prop_oneof![
        speed().prop_map(|v_max| FdParams::Greenshields { v_max, k_jam: KJ }),
        (5.0..20.0f64).prop_map(|v| FdParams::Greenberg {
            v_crit: kmh(v),
            k_jam: KJ
        }),
        (speed(), kc()).prop_map(|(v_max, k_crit)| FdParams::Underwood {
            v_max,
            k_crit,
            k_jam: KJ
        }),
        (speed(), (3.0..10.0f64).prop_map(kmh)).prop_map(|(v_max, omega)| FdParams::DelCastillo {
            v_max,
            omega,
            k_jam: KJ
        }),
        (speed(), kc()).prop_map(|(v_max, k_crit)| FdParams::Daganzo {
            v_max,
            k_crit,
            omega: fd::wave_speed_congested(v_max, k_crit, KJ).unwrap(),
            k_jam: KJ,
        }),
        smulders(),
    ]
}

fn smulders() -> impl Strategy<Value = FdParams> {
    (30.0..60.0f64, 0.2..0.8f64, 120.0..400.0f64)
        .prop_map(|(vf, r, kc)| FdParams::smulders_continuous_display(vf, vf * r, kc, 1000.0))
}

proptest! {
    #[test]
    fn speed_is_non_increasing(p in family_params(), a in 1e-4..1.0f64, b in 1e-4..1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(p.speed(hi).unwrap() <= p.speed(lo).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn jam_flow_vanishes(p in family_params()) {
        // the exponential curve has no jam density; its k_jam only bounds the domain
        prop_assume!(p.family() != FdFamily::Underwood);
        prop_assert!(p.flow(KJ).unwrap().abs() < 1e-12);
    }

    #[test]
    fn derived_omega_makes_speed_continuous(p in smulders()) {
        let kc = p.k_crit().unwrap();
        let below = p.speed(kc).unwrap();
        let above = p.speed(kc * (1.0 + 1e-12)).unwrap();
        prop_assert!((below - above).abs() <= 1e-9 * below);
        prop_assert!(p.is_continuous());
    }

    #[test]
    fn continuous_two_regime_flow_is_concave(p in smulders(), a in 0.0..1.0f64, b in 0.0..1.0f64, s in 0.0..1.0f64) {
        // concave exactly when the free-branch slope at k_crit is not
        // steeper than the congested one
        let (vf, vc, kc, w) = (p.v_max().unwrap(), p.v_crit().unwrap(), p.k_crit().unwrap(), p.omega().unwrap());
        let concave = 2.0 * vc - vf >= -w;
        prop_assert_eq!(concave, kinematic::require_concave(&p).is_ok());
        if concave {
            let m = s * a + (1.0 - s) * b;
            let chord = s * p.flow(a).unwrap() + (1.0 - s) * p.flow(b).unwrap();
            prop_assert!(p.flow(m).unwrap() >= chord - 1e-12);
        } else {
            let h = 1e-3 * kc;
            let mid = p.flow(kc).unwrap();
            prop_assert!(mid < 0.5 * (p.flow(kc - h).unwrap() + p.flow(kc + h).unwrap()));
        }
    }

    #[test]
    fn demand_and_supply_are_monotone_and_capped(p in family_params(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let q_max = p.q_max();
        prop_assert!(p.demand(lo).unwrap() <= p.demand(hi).unwrap() + 1e-15);
        prop_assert!(p.supply(lo).unwrap() + 1e-15 >= p.supply(hi).unwrap());
        for k in [lo, hi] {
            prop_assert!(p.demand(k).unwrap() <= q_max * (1.0 + 1e-12));
            prop_assert!(p.supply(k).unwrap() <= q_max * (1.0 + 1e-12));
            // one of the two equals the capped flow
            let q = p.capped_flow(k).unwrap();
            prop_assert!(p.demand(k).unwrap().min(p.supply(k).unwrap()) <= q + 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn recalibration_is_idempotent(p in smulders()) {
        let obs: Vec<(f64, f64)> = (0..80)
            .map(|i| {
                let k = 0.01 + 0.93 * i as f64 / 79.0;
                (k, p.speed(k).unwrap())
            })
            .collect();
        let options = CalibrationOptions::default();
        let first = fd::calibrate(p.family(), &obs, &options).unwrap().params;
        let again: Vec<(f64, f64)> = obs.iter().map(|&(k, _)| (k, first.speed(k).unwrap())).collect();
        let second = fd::calibrate(p.family(), &again, &options).unwrap().params;
        for (x, y) in [
            (first.v_max(), second.v_max()),
            (first.v_crit(), second.v_crit()),
            (first.k_crit(), second.k_crit()),
        ] {
            let (x, y) = (x.unwrap(), y.unwrap());
            prop_assert!((x - y).abs() <= 1e-6 * x.abs(), "{x} vs {y}");
        }
    }
}
