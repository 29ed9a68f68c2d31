use proptest::prelude::*;

use areal_traffic::ctm::{self, Boundary, MergeMode, Scenario, Simulation, Source};
use areal_traffic::fd::{tables, CategoryFdSet, ClassFd};
use areal_traffic::units::density;

const LOCATIONS: [&str; 3] = ["Chennai", "Surat", "Guwahati"];
const CLASSES: [&str; 3] = ["TW", "car", "HV"];

fn class_set(loc: usize, m: usize) -> CategoryFdSet {
    let classes: Vec<ClassFd> = CLASSES[..m]
        .iter()
        .map(|c| tables::class(LOCATIONS[loc], c).unwrap())
        .collect();
    CategoryFdSet::new(classes, density(1000.0)).unwrap()
}

/// Random cell states on a road of `n` cells with a stable time step.
fn scenario() -> impl Strategy<Value = Scenario> {
    (0..3usize, 1..=3usize, 5..30usize, 0.3..1.0f64, any::<bool>()).prop_flat_map(|(loc, m, n, cfl, redistribute)| {
        let cells = prop::collection::vec((0.0..0.95f64, prop::collection::vec(0.01..1.0f64, m)), n);
        cells.prop_map(move |cells| {
            let set = class_set(loc, m);
            let dx = 5.0;
            let probe = Scenario::uniform(dx * n as f64, dx, 1e-3, set.clone()).unwrap();
            let mut sc = Scenario::uniform(dx * n as f64, dx, probe.cfl_limit() * cfl, set).unwrap();
            for (cell, (share, w)) in sc.cells.iter_mut().zip(cells) {
                let s: f64 = w.iter().sum();
                cell.densities = w.iter().map(|x| x / s * share * density(1000.0)).collect();
            }
            if redistribute {
                sc.merge = MergeMode::Redistribute;
            }
            sc
        })
    })
}

fn boundary() -> impl Strategy<Value = (Boundary, Boundary)> {
    let left = prop_oneof![
        Just(Boundary::Closed),
        Just(Boundary::FreeOutflow),
        (0.0..0.5f64).prop_map(|d| Boundary::Demand(vec![d; 3])),
    ];
    let right = prop_oneof![
        Just(Boundary::Closed),
        Just(Boundary::FreeOutflow),
        (0.0..0.5f64).prop_map(Boundary::Supply),
    ];
    (left, right)
}

fn with_boundaries(mut sc: Scenario, (left, right): (Boundary, Boundary)) -> Scenario {
    let m = sc.fds.len();
    sc.left = match left {
        Boundary::Demand(d) => Boundary::Demand(d[..m].to_vec()),
        b => b,
    };
    sc.right = right;
    sc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_road_conserves_each_category(sc in scenario()) {
        let mut sim = Simulation::new(sc).unwrap();
        let before = sim.stored_area();
        for _ in 0..200 {
            sim.step().unwrap();
        }
        for (a, b) in before.iter().zip(sim.stored_area()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn fluxes_are_nonnegative_and_within_capacity(sc in scenario(), b in boundary()) {
        let mut sim = Simulation::new(with_boundaries(sc, b)).unwrap();
        let set = sim.scenario().fds.clone();
        for _ in 0..50 {
            let record = sim.step().unwrap();
            for face in &record.fluxes {
                for (i, &q) in face.iter().enumerate() {
                    prop_assert!(q >= 0.0);
                    prop_assert!(q <= set.params(i).q_max() * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn densities_stay_within_zero_and_jam(sc in scenario(), b in boundary()) {
        let mut sim = Simulation::new(with_boundaries(sc, b)).unwrap();
        let kj = sim.scenario().fds.k_jam();
        for _ in 0..100 {
            sim.step().unwrap();
            for cat in sim.densities() {
                prop_assert!(cat.iter().all(|&k| k >= 0.0));
            }
            prop_assert!(sim.total_densities().iter().all(|&k| k <= kj * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn ledger_balances_with_sources(
        sc in scenario(),
        b in boundary(),
        rate in -0.05..0.05f64,
        x0 in 0.0..20.0f64,
        t1 in 0.5..20.0f64,
    ) {
        let mut sc = with_boundaries(sc, b);
        let length = sc.length();
        sc.sources.push(Source { category: 0, x0, x1: length, t0: 0.0, t1, rate });
        let mut sim = Simulation::new(sc).unwrap();
        for _ in 0..60 {
            let record = sim.step().unwrap();
            for e in &record.ledger {
                let scale = e.stored_before.abs().max(e.stored_after.abs()).max(1.0);
                prop_assert!(e.residual().abs() <= 1e-12 * scale, "{e:?}");
            }
        }
    }

    #[test]
    fn single_category_flux_is_godunov(loc in 0..3usize, ks in prop::collection::vec(0.0..1.0f64, 2..40)) {
        let set = class_set(loc, 1);
        let p = set.params(0);
        let n = ks.len();
        let mut sc = Scenario::uniform(5.0 * n as f64, 5.0, 0.1, set).unwrap();
        for (cell, &k) in sc.cells.iter_mut().zip(&ks) {
            cell.densities = vec![k];
        }
        let sim = Simulation::new(sc).unwrap();
        let fluxes = sim.fluxes().unwrap();
        for j in 1..n {
            let expected = ctm::interface_flux(&p, ks[j - 1], ks[j]).unwrap();
            prop_assert!((fluxes[j][0] - expected).abs() <= 1e-15, "face {j}: {} vs {expected}", fluxes[j][0]);
        }
    }
}
