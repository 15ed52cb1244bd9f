use carnot_core::cc_metric::{CcMetric, HeisenbergMetric};
use carnot_core::gamma::recovery_path;
use carnot_core::path::{lift, shift, HorizontalPath};
use carnot_core::sampling::brownian_driver;
use carnot_core::transport::{sinkhorn, uniform_weights, SinkhornOptions};
use carnot_core::{CarnotStructure, GroupElement};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    -3.0..3.0f64
}

fn element(g: &CarnotStructure) -> impl Strategy<Value = GroupElement> {
    let (d1, d2) = (g.d1(), g.d2());
    (prop::collection::vec(coord(), d1), prop::collection::vec(coord(), d2)).prop_map(|(a, b)| GroupElement::new(a, b))
}

fn preset() -> impl Strategy<Value = CarnotStructure> {
    (0..CarnotStructure::presets().len()).prop_map(|i| CarnotStructure::presets().swap_remove(i))
}

fn close(a: &GroupElement, b: &GroupElement, tol: f64) -> bool {
    a.coords().iter().zip(b.coords()).all(|(x, y)| (x - y).abs() <= tol)
}

fn h1_point() -> impl Strategy<Value = GroupElement> {
    element(&CarnotStructure::heisenberg(1))
}

fn path(level: u32, d1: usize) -> impl Strategy<Value = HorizontalPath> {
    prop::collection::vec(-1.0..1.0f64, d1 << level).prop_map(move |steps| {
        let mut values = vec![0.0; d1];
        for (k, s) in steps.iter().enumerate() {
            values.push(values[k] + s);
        }
        HorizontalPath::new(level, d1, values).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_law(
        (g, a, b, c) in preset().prop_flat_map(|g| (Just(g.clone()), element(&g), element(&g), element(&g))),
        s in 0.1..3.0f64,
    ) {
        let left = g.product(&g.product(&a, &b).unwrap(), &c).unwrap();
        let right = g.product(&a, &g.product(&b, &c).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-12));
        let ai = g.inverse(&a).unwrap();
        prop_assert!(close(&g.product(&a, &ai).unwrap(), &g.identity(), 1e-12));
        let lhs = g.dilate(s, &g.product(&a, &b).unwrap()).unwrap();
        let rhs = g.product(&g.dilate(s, &a).unwrap(), &g.dilate(s, &b).unwrap()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-11));
        let sum: Vec<f64> = g.bracket(&a.x1, &b.x1).iter().zip(g.bracket(&b.x1, &a.x1)).map(|(x, y)| x + y).collect();
        prop_assert!(sum.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn gauge_distance_is_symmetric((g, a, b) in preset().prop_flat_map(|g| (Just(g.clone()), element(&g), element(&g)))) {
        let ab = g.gauge_distance(&a, &b).unwrap();
        let ba = g.gauge_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
    }

    #[test]
    fn cc_distance_is_a_metric(a in h1_point(), b in h1_point(), c in h1_point()) {
        let m = HeisenbergMetric::h1();
        let ab = m.distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!(m.distance(&a, &a).unwrap() <= 1e-12);
        prop_assert!((ab - m.distance(&b, &a).unwrap()).abs() <= 1e-9 * (1.0 + ab));
        let ac = m.distance(&a, &c).unwrap();
        let bc = m.distance(&b, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn cc_distance_invariances(a in h1_point(), b in h1_point(), t in h1_point(), s in 0.1..4.0f64) {
        let g = CarnotStructure::heisenberg(1);
        let m = HeisenbergMetric::h1();
        let d = m.distance(&a, &b).unwrap();
        let scaled = m.distance(&g.dilate(s, &a).unwrap(), &g.dilate(s, &b).unwrap()).unwrap();
        prop_assert!((scaled - s * d).abs() <= 1e-9 * (1.0 + s * d));
        let moved = m.distance(&g.product(&t, &a).unwrap(), &g.product(&t, &b).unwrap()).unwrap();
        prop_assert!((moved - d).abs() <= 1e-9 * (1.0 + d));
    }

    #[test]
    fn cc_distance_dominates_horizontal_part(a in h1_point()) {
        let m = HeisenbergMetric::h1();
        prop_assert!(m.norm(&a).unwrap() + 1e-12 >= a.x1[0].hypot(a.x1[1]));
    }

    #[test]
    fn shift_of_lift_is_lift_of_sum(
        (g, x, h) in preset().prop_flat_map(|g| {
            let d1 = g.d1();
            (Just(g), path(4, d1), path(2, d1))
        })
    ) {
        let shifted = shift(&lift(&g, &x, 4).unwrap(), &h).unwrap();
        let direct = lift(&g, &x.add(&h.at_level(4)).unwrap(), 4).unwrap();
        for k in 0..shifted.len() {
            for (p, q) in shifted.coords(k).iter().zip(direct.coords(k)) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn recovery_cost_bounded_by_energy(h in path(2, 2), index in 0u64..1000, n in 2u32..6) {
        let g = CarnotStructure::heisenberg(1);
        let omega = lift(&g, &brownian_driver(2, n + 2, 11, index), n + 2).unwrap();
        let out = recovery_path(&omega, &h, n, &HeisenbergMetric::h1()).unwrap();
        prop_assert!(out.cost_at_n <= h.cm_norm() + 1e-9, "{} > {}", out.cost_at_n, h.cm_norm());
    }

    #[test]
    fn sinkhorn_plan_has_requested_marginals(
        xs in prop::collection::vec(h1_point(), 2..8),
        ys in prop::collection::vec(h1_point(), 2..8),
    ) {
        let c = carnot_core::cc_metric::cost_matrix(&HeisenbergMetric::h1(), &xs, &ys, true, 0).unwrap();
        let (a, b) = (uniform_weights(xs.len()), uniform_weights(ys.len()));
        let r = sinkhorn(&c, &a, &b, &SinkhornOptions::default()).unwrap();
        prop_assert!(r.plan.iter().all(|p| *p >= 0.0));
        let total: f64 = r.plan.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-6);
        if r.converged {
            prop_assert!(r.marginal_violation <= 1e-6);
        }
    }
}
