mod common;

use common::*;
use cubic_planner::bvp::*;
use cubic_planner::dynamics::{integrate_ivp, CurveState};
use cubic_planner::geometry::{exp_map, Euclidean, Sphere2};
use cubic_planner::potentials::{gaussian_obstacle, Potential};
use cubic_planner::{Error, Model};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn flat(n: usize) -> Model {
    Model::from_chart(Euclidean::new(n), Potential::Zero).unwrap()
}

#[test]
fn flat_biexp_is_the_cubic() {
    let model = flat(2);
    let (p, v, y, z) = (dv(&[1.0, -1.0]), dv(&[0.5, 2.0]), dv(&[-1.0, 0.3]), dv(&[2.0, 1.0]));
    let t = 1.3;
    let (q, qd) = biexp(&model, &p, &v, &y, &z, t).unwrap();
    let eq = &p + &v * t + &y * (t * t / 2.0) + &z * (t * t * t / 6.0);
    let ev = &v + &y * t + &z * (t * t / 2.0);
    assert!((q - eq).amax() < 1e-9);
    assert!((qd - ev).amax() < 1e-9);
}

#[test]
fn flat_jacobian_and_determinant() {
    let model = flat(1);
    let (p, v, y, z) = (dv(&[0.2]), dv(&[1.0]), dv(&[0.5]), dv(&[-0.4]));
    let t = 0.8;
    let jac = biexp_jacobian(&model, &p, &v, &y, &z, t).unwrap();
    let expected = [[t * t / 2.0, t * t * t / 6.0], [t, t * t / 2.0]];
    for r in 0..2 {
        for c in 0..2 {
            assert!((jac[(r, c)] - expected[r][c]).abs() < 1e-9);
        }
    }
    assert!((jac.determinant() - t.powi(4) / 12.0).abs() < 1e-9);
    // small-time limit t^{4n}/12^n
    let model = flat(2);
    let t = 1e-2;
    let z2 = DVector::zeros(2);
    let jac = biexp_jacobian(&model, &z2, &z2, &z2, &z2, t).unwrap();
    let lead = t.powi(8) / 144.0;
    assert!((jac.determinant() / lead - 1.0).abs() < 1e-2);
}

#[test]
fn jacobian_is_stable_under_step_halving() {
    let case = &panel()[3];
    let s = &case.start;
    let h = 1.0 / 400.0;
    let a = biexp_jacobian_with(&case.model, &s.q, &s.v, &s.a, &s.j, 1.0, h, 1e-5).unwrap();
    let b = biexp_jacobian_with(&case.model, &s.q, &s.v, &s.a, &s.j, 1.0, h, 5e-6).unwrap();
    assert!((&a - &b).amax() <= 1e-6 * a.amax());
}

#[test]
fn geodesic_case_matches_exp() {
    let model = Model::from_chart(Sphere2::new(), Potential::Zero).unwrap();
    let (p, v) = (dv(&[0.2, 0.1]), dv(&[0.6, -0.3]));
    let z = DVector::zeros(2);
    let (q, _) = biexp(&model, &p, &v, &z, &z, 1.0).unwrap();
    let e = exp_map(model.chart(), &p, &v).unwrap();
    assert!((q - e).amax() < 1e-8);
}

#[test]
fn short_times_return_the_initial_data() {
    let case = &panel()[1];
    let s = &case.start;
    let t = 1e-4;
    let (q, v) = biexp_with_step(&case.model, &s.q, &s.v, &s.a, &s.j, t, t / 10.0).unwrap();
    assert!((q - &s.q).amax() < 2.0 * t);
    assert!((v - &s.v).amax() < 2.0 * t);
    assert!(biexp(&case.model, &s.q, &s.v, &s.a, &s.j, 0.0).is_err());
}

#[test]
fn flat_hermite_problem_is_solved_exactly() {
    let model = flat(2);
    let b = BoundaryData::new(&dv(&[0.0, 0.0]), &dv(&[1.0, 0.0]), &dv(&[1.0, 2.0]), &dv(&[0.0, -1.0]), 0.0, 2.0);
    let r = solve_bvp(&model, &b, None, &SolverOptions::default()).unwrap();
    let (y, z) = flat_seed(&b);
    // Hermite coefficients from the closed form
    let t = 2.0;
    let dq = b.qb() - b.qa() - b.va() * t;
    let dvv = b.vb() - b.va();
    let z_exact = (&dvv * (6.0 * t) - &dq * 12.0) / t.powi(3);
    assert!((&z - &z_exact).amax() < 1e-14);
    let (ry, rz) = r.yz();
    assert!((ry - y).amax() < 1e-9 && (rz - z).amax() < 1e-9);
    assert!(r.residual <= 1e-8);
}

#[test]
fn round_trip_on_the_sphere_with_an_obstacle() {
    let chart = Sphere2::new();
    let v = gaussian_obstacle(&chart, &dv(&[0.4, 0.1]), 0.8, 0.3).unwrap();
    let model = Model::from_chart(chart, v).unwrap();
    let (y, z) = (dv(&[-0.3, 0.4]), dv(&[0.5, -0.2]));
    let start = CurveState::new(0.0, dv(&[0.0, 0.0]), dv(&[0.9, 0.2]), y.clone(), z.clone());
    let traj = integrate_ivp(&model, &start, 1.0, 1.0 / 2000.0).unwrap();
    let b = BoundaryData::from_trajectory(&traj, 0, traj.intervals());
    let r = solve_bvp(&model, &b, None, &SolverOptions::default()).unwrap();
    let (ry, rz) = r.yz();
    assert!((ry - y).amax() < 1e-7 && (rz - z).amax() < 1e-7, "{:?} {:?}", r.y, r.z);
    let hist = &r.residual_history;
    assert!(hist.windows(2).all(|w| w[1] < w[0]), "{hist:?}");
}

#[test]
fn random_round_trips_across_charts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in panel() {
        let n = case.model.dim();
        let mut done = 0;
        let mut tries = 0;
        while done < 50 && tries < 200 {
            tries += 1;
            let mut r = |s: f64| DVector::from_fn(n, |_, _| rng.gen_range(-s..s));
            let start = CurveState::new(0.0, &case.start.q + r(0.1), r(0.8), r(0.6), r(0.6));
            let t = 0.6;
            let Ok(traj) = integrate_ivp(&case.model, &start, t, t / 200.0) else { continue };
            let b = BoundaryData::from_trajectory(&traj, 0, traj.intervals());
            let opts = SolverOptions { step: Some(t / 200.0), ..SolverOptions::default() };
            match solve_bvp(&case.model, &b, None, &opts) {
                Ok(res) if res.jacobian_condition <= 1e6 => {
                    let (y, z) = res.yz();
                    let scale = 1.0 + start.a.amax().max(start.j.amax());
                    assert!((y - &start.a).amax().max((z - &start.j).amax()) <= 1e-6 * scale, "{}", case.label);
                    assert!(res.residual_history.windows(2).all(|w| w[1] < w[0]));
                    done += 1;
                }
                Ok(_) => {}
                Err(e) => panic!("{}: {e}", case.label),
            }
        }
        assert_eq!(done, 50, "{}", case.label);
    }
}

#[test]
fn short_intervals_stay_bounded() {
    let model = Model::from_chart(Sphere2::new(), Potential::Zero).unwrap();
    let (qa, va) = (dv(&[0.1, 0.2]), dv(&[0.5, -0.3]));
    for len in [1e-1, 1e-2] {
        let qb = exp_map(model.chart(), &qa, &(&va * len)).unwrap() + dv(&[1e-3, -1e-3]) * len * len;
        let vb = va.clone();
        let b = BoundaryData::new(&qa, &va, &qb, &vb, 0.0, len);
        let (sy, sz) = flat_seed(&b);
        let r = solve_bvp(&model, &b, None, &SolverOptions::default()).unwrap();
        let (y, z) = r.yz();
        let bound = 10.0 * (1.0 + sy.amax().max(sz.amax() * len));
        assert!(y.amax() <= bound && z.amax() * len <= bound, "{len}");
    }
}

#[test]
fn local_uniqueness_from_random_seeds() {
    let case = &panel()[3];
    let traj = case.trajectory(1000);
    let b = BoundaryData::from_trajectory(&traj, 0, 300);
    let opts = SolverOptions { step: Some(traj.step), ..SolverOptions::default() };
    let all = multi_seed(&case.model, &b, 10, 3, &opts).unwrap();
    assert_eq!(all.len(), 1);
    let reference = solve_bvp(&case.model, &b, None, &opts).unwrap();
    let d = all[0].y.iter().zip(&reference.y).chain(all[0].z.iter().zip(&reference.z)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-6);
}

#[test]
fn nonconvergence_and_critical_errors() {
    let model = flat(1);
    let b = BoundaryData::new(&dv(&[0.0]), &dv(&[0.0]), &dv(&[1.0]), &dv(&[0.0]), 0.0, 1.0);
    let opts = SolverOptions { max_iterations: 0, ..SolverOptions::default() };
    let err = solve_bvp(&model, &b, Some((dv(&[5.0]), dv(&[5.0]))), &opts).unwrap_err();
    assert!(matches!(err, Error::NonConvergence { .. }));

    // the constant hilltop curve is critical at the first beam root
    let model = hilltop();
    let t = BEAM_ROOTS[0];
    let b = BoundaryData::new(&dv(&[0.0]), &dv(&[0.0]), &dv(&[0.0]), &dv(&[0.0]), 0.0, t);
    let z = dv(&[0.0]);
    let opts = SolverOptions { critical_ratio: 1e-6, ..SolverOptions::default() };
    let err = solve_bvp(&model, &b, Some((z.clone(), z)), &opts).unwrap_err();
    assert!(matches!(err, Error::CriticalBiexp { .. }), "{err}");
}

#[test]
fn invalid_boundaries_are_rejected() {
    let model = Model::from_chart(Sphere2::new(), Potential::Zero).unwrap();
    let b = BoundaryData::new(&dv(&[9.0, 0.0]), &dv(&[0.0, 0.0]), &dv(&[0.0, 0.0]), &dv(&[0.0, 0.0]), 0.0, 1.0);
    assert!(solve_bvp(&model, &b, None, &SolverOptions::default()).unwrap_err().is_domain());
    let b = BoundaryData::new(&dv(&[0.0, 0.0]), &dv(&[0.0, 0.0]), &dv(&[0.0, 0.0]), &dv(&[0.0, 0.0]), 1.0, 1.0);
    assert!(matches!(solve_bvp(&model, &b, None, &SolverOptions::default()).unwrap_err(), Error::Contract(_)));
}

#[test]
fn continuation_sweeps() {
    let chart = Euclidean::new(2);
    let obstacle = gaussian_obstacle(&chart, &dv(&[0.5, 0.05]), 1.0, 0.2).unwrap();
    let model = Model::from_chart(chart, obstacle.clone()).unwrap();
    let b = BoundaryData::new(&dv(&[0.0, 0.0]), &dv(&[1.0, 0.0]), &dv(&[1.0, 0.0]), &dv(&[1.0, 0.0]), 0.0, 1.0);
    let opts = SolverOptions::default();
    let grid: Vec<f64> = (0..=5).map(|k| k as f64 * 0.2).collect();
    let sweep = continuation_sweep(&model, scaled_family(&obstacle), &b, &grid, &opts).unwrap();
    assert_eq!(sweep.len(), grid.len());
    for (_, r) in &sweep {
        assert!(r.residual <= 1e-8 * (1.0 + b.scale()));
    }
    for w in sweep.windows(2) {
        assert!(w[1].1.action > w[0].1.action);
    }

    // a constant family gives identical results
    let constant = |_: f64| obstacle.clone();
    let sweep = continuation_sweep(&model, constant, &b, &grid, &opts).unwrap();
    for (_, r) in &sweep {
        let d = r.y.iter().zip(&sweep[0].1.y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d <= 1e-9);
    }

    // a single λ = 0 equals the zero-potential solve
    let one = continuation_sweep(&model, scaled_family(&obstacle), &b, &[0.0], &opts).unwrap();
    let plain = solve_bvp(&flat(2), &b, None, &opts).unwrap();
    assert!(one[0].1.y.iter().zip(&plain.y).all(|(a, b)| (a - b).abs() <= 1e-12));

    assert!(continuation_sweep(&model, scaled_family(&obstacle), &b, &[0.5, 1.0], &opts).is_err());
}
