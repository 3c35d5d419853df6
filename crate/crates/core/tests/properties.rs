mod common;

use std::sync::Arc;

use common::*;
use cubic_planner::bvp::{biexp, BoundaryData};
use cubic_planner::dynamics::{integrate_ivp, CurveState, Trajectory};
use cubic_planner::fields::{field_from_frame, parallel_frame, Profile};
use cubic_planner::geometry::*;
use cubic_planner::index::{decompose, index_form};
use cubic_planner::oracle::DiscretePath;
use cubic_planner::potentials::{gaussian_obstacle, sum, Potential};
use cubic_planner::Model;
use nalgebra::DVector;
use proptest::prelude::*;

fn chart_by_index(i: usize) -> ChartRef {
    match i {
        0 => Arc::new(Euclidean::new(2)),
        1 => Arc::new(Sphere2::new()),
        2 => Arc::new(Hyperbolic2::new()),
        _ => Arc::new(So3::new()),
    }
}

/// A point of the chart from unit-box coordinates, shrunk into the domain.
fn point_in(chart: &dyn Chart, raw: &[f64]) -> DVector<f64> {
    let x = DVector::from_fn(chart.dim(), |i, _| raw[i]);
    let mut s = 1.0;
    while !chart.in_domain(&(&x * (s * 1.1))) {
        s *= 0.8;
    }
    x * s
}

fn vec_of(n: usize, raw: &[f64]) -> DVector<f64> {
    DVector::from_fn(n, |i, _| raw[i])
}

fn unit() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_is_spd_and_levi_civita(ci in 0usize..4, raw in unit()) {
        let chart = chart_by_index(ci);
        let x = point_in(chart.as_ref(), &raw);
        let g = chart.metric(&x);
        prop_assert!((&g - g.transpose()).amax() <= 1e-14 * g.amax());
        prop_assert!(g.clone().cholesky().is_some());
        let n = chart.dim();
        let gam = chart.christoffel(&x);
        let dg = chart.metric_derivative(&x);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((gam.get(k, i, j) - gam.get(k, j, i)).abs() <= 1e-12 * (1.0 + gam.max_abs()));
                    let mut rhs = 0.0;
                    for l in 0..n {
                        rhs += gam.get(l, k, i) * g[(l, j)] + gam.get(l, k, j) * g[(i, l)];
                    }
                    prop_assert!((dg[k][(i, j)] - rhs).abs() <= 1e-8 * (1.0 + g.amax()));
                }
            }
        }
    }

    #[test]
    fn curvature_identities(ci in 0usize..4, raw in unit(), a in unit(), b in unit(), c in unit(), d in unit()) {
        let chart = chart_by_index(ci);
        let x = point_in(chart.as_ref(), &raw);
        let n = chart.dim();
        let (a, b, c, d) = (vec_of(n, &a), vec_of(n, &b), vec_of(n, &c), vec_of(n, &d));
        let scale = 1.0 + chart.metric(&x).amax().powi(2);
        let rm = |p: &DVector<f64>, q: &DVector<f64>, r: &DVector<f64>, s: &DVector<f64>| inner(chart.as_ref(), &x, &chart.curvature(&x, p, q, r), s);
        prop_assert!((rm(&a, &b, &c, &d) + rm(&b, &a, &c, &d)).abs() <= 1e-9 * scale);
        prop_assert!((rm(&a, &b, &c, &d) + rm(&a, &b, &d, &c)).abs() <= 1e-9 * scale);
        prop_assert!((rm(&a, &b, &c, &d) - rm(&c, &d, &a, &b)).abs() <= 1e-9 * scale);
        let bianchi = chart.curvature(&x, &a, &b, &c) + chart.curvature(&x, &b, &c, &a) + chart.curvature(&x, &c, &a, &b);
        prop_assert!(bianchi.amax() <= 1e-9 * scale);
    }

    #[test]
    fn potentials_are_nonnegative_with_consistent_derivatives(
        ci in 0usize..4, raw in unit(), c1 in unit(), c2 in unit(), dir in unit(),
        a1 in 0.1f64..3.0, s1 in 0.1f64..1.0, a2 in 0.1f64..3.0, s2 in 0.1f64..1.0,
    ) {
        let chart = chart_by_index(ci);
        let n = chart.dim();
        let x = point_in(chart.as_ref(), &raw);
        let p1 = gaussian_obstacle(chart.as_ref(), &point_in(chart.as_ref(), &c1), a1, s1).unwrap();
        let p2 = gaussian_obstacle(chart.as_ref(), &point_in(chart.as_ref(), &c2), a2, s2).unwrap();
        let pot = sum(vec![p1, p2]).unwrap();
        let v = pot.value(chart.as_ref(), &x).unwrap();
        prop_assert!(v >= 0.0);
        let dir = vec_of(n, &dir);
        let h = 1e-4;
        let fd = (pot.value(chart.as_ref(), &(&x + &dir * h)).unwrap() - pot.value(chart.as_ref(), &(&x - &dir * h)).unwrap()) / (2.0 * h);
        let grad = pot.gradient(chart.as_ref(), &x).unwrap();
        prop_assert!((inner(chart.as_ref(), &x, &grad, &dir) - fd).abs() <= 1e-5 * (1.0 + fd.abs()));
        let other = DVector::from_fn(n, |i, _| (i as f64 + 1.0) * 0.3);
        let hu = pot.hessian_op(chart.as_ref(), &x, &dir).unwrap();
        let hw = pot.hessian_op(chart.as_ref(), &x, &other).unwrap();
        let lhs = inner(chart.as_ref(), &x, &hu, &other);
        let rhs = inner(chart.as_ref(), &x, &hw, &dir);
        prop_assert!((lhs - rhs).abs() <= 1e-6 * (1.0 + lhs.abs()));
    }

    #[test]
    fn flat_biexp_is_the_cubic_closed_form(p in unit(), v in unit(), y in unit(), z in unit(), t in 0.1f64..3.0) {
        let model = Model::from_chart(Euclidean::new(3), Potential::Zero).unwrap();
        let (p, v, y, z) = (vec_of(3, &p), vec_of(3, &v), vec_of(3, &y), vec_of(3, &z));
        let (q, qd) = biexp(&model, &p, &v, &y, &z, t).unwrap();
        let q_exact = &p + &v * t + &y * (t * t / 2.0) + &z * (t * t * t / 6.0);
        let v_exact = &v + &y * t + &z * (t * t / 2.0);
        prop_assert!((q - q_exact).amax() <= 1e-9 * (1.0 + t * t * t));
        prop_assert!((qd - v_exact).amax() <= 1e-9 * (1.0 + t * t));
    }

    #[test]
    fn state_packing_and_csv_round_trip(p in unit(), v in unit(), a in unit(), j in unit(), t in -5.0f64..5.0) {
        let s = CurveState::new(t, vec_of(3, &p), vec_of(3, &v), vec_of(3, &a), vec_of(3, &j));
        prop_assert_eq!(CurveState::unpack(t, &s.pack()), s.clone());
        let model = Model::from_chart(Euclidean::new(3), Potential::Zero).unwrap();
        let traj = integrate_ivp(&model, &s, 0.5, 0.05).unwrap();
        let back = Trajectory::from_csv(&traj.to_csv(), "euclidean:3", Potential::Zero).unwrap();
        prop_assert_eq!(back.states, traj.states);
    }

    #[test]
    fn discrete_boundary_constraints_hold_exactly(qa in unit(), va in unit(), qb in unit(), vb in unit(), n in 6usize..60) {
        let b = BoundaryData::new(&vec_of(3, &qa), &vec_of(3, &va), &vec_of(3, &qb), &vec_of(3, &vb), 0.0, 1.5);
        let mut path = DiscretePath::hermite(&b, n);
        path.impose(&b);
        let h = path.step();
        let last = path.intervals();
        prop_assert_eq!(&path.nodes[0], &b.qa());
        prop_assert_eq!(&path.nodes[last], &b.qb());
        let v0 = (&path.nodes[0] * -3.0 + &path.nodes[1] * 4.0 - &path.nodes[2]) / (2.0 * h);
        let vn = (&path.nodes[last] * 3.0 - &path.nodes[last - 1] * 4.0 + &path.nodes[last - 2]) / (2.0 * h);
        prop_assert!((v0 - b.va()).amax() <= 1e-12);
        prop_assert!((vn - b.vb()).amax() <= 1e-12);
    }

    #[test]
    fn admissible_profiles_vanish_at_both_ends(inner in prop::collection::vec(-2.0f64..2.0, 1..5), t0 in -1.0f64..1.0, span in 0.2f64..4.0) {
        let p = Profile::admissible(&inner, t0, span);
        for t in [t0, t0 + span] {
            let e = p.eval(t);
            prop_assert!(e[0].abs() <= 1e-12 && e[1].abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn index_form_decomposition(ci in 0usize..4, x in prop::collection::vec(-1.0f64..1.0, 6), y in prop::collection::vec(-1.0f64..1.0, 6)) {
        let case = &panel()[2 * ci + 1];
        let traj = case.trajectory(400);
        let n = case.model.dim();
        let frame = parallel_frame(case.model.chart(), &traj).unwrap();
        let fx: Vec<Profile> = (0..n).map(|i| Profile::admissible(&x[2 * i..2 * i + 2], 0.0, 1.0)).collect();
        let fy: Vec<Profile> = (0..n).map(|i| Profile::admissible(&y[2 * i..2 * i + 2], 0.0, 1.0)).collect();
        let fx = field_from_frame(&frame, &traj.times(), |i, t| fx[i].eval(t));
        let fy = field_from_frame(&frame, &traj.times(), |i, t| fy[i].eval(t));
        let ixy = index_form(&case.model, &traj, &fx, &fy).unwrap();
        let iyx = index_form(&case.model, &traj, &fy, &fx).unwrap();
        let d = decompose(&case.model, &traj, &fx, &fy).unwrap();
        let scale = 1.0 + ixy.abs();
        prop_assert!((d.total() - ixy).abs() <= 1e-10 * scale);
        prop_assert!((ixy - iyx - 2.0 * d.p_minus).abs() <= 1e-9 * scale);
        let xx = index_form(&case.model, &traj, &fx, &fx).unwrap();
        let x2 = index_form(&case.model, &traj, &fx.scaled(2.0), &fx).unwrap();
        prop_assert!((x2 - 2.0 * xx).abs() <= 1e-10 * (1.0 + xx.abs()));
    }
}
