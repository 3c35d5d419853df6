mod common;

use std::sync::Arc;

use common::*;
use cubic_planner::geometry::{inner, Chart, ChartRef, Euclidean, Hyperbolic2, So3, Sphere2};
use cubic_planner::potentials::{gaussian_obstacle, sum, DistanceMode, Potential};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Setup {
    chart: ChartRef,
    potentials: Vec<Potential>,
}

fn setups() -> Vec<Setup> {
    let mut out = Vec::new();
    let e2: ChartRef = Arc::new(Euclidean::new(2));
    let s2: ChartRef = Arc::new(Sphere2::new());
    let h2: ChartRef = Arc::new(Hyperbolic2::new());
    let so3: ChartRef = Arc::new(So3::new());
    for chart in [e2, s2, h2] {
        let a = gaussian_obstacle(chart.as_ref(), &dv(&[0.2, 0.1]), 1.5, 0.3).unwrap();
        let b = gaussian_obstacle(chart.as_ref(), &dv(&[-0.3, 0.4]), 0.7, 0.5).unwrap();
        let riem = Potential::Gaussian { center: vec![0.1, -0.2], strength: 1.0, sigma: 0.4, distance: DistanceMode::Riemannian };
        riem.validate(chart.as_ref()).unwrap();
        let two = sum(vec![a.clone(), b]).unwrap();
        let quad = Potential::Quadratic { center: Some(vec![0.1, 0.1]), k: 2.0 };
        out.push(Setup { chart, potentials: vec![a, two, riem, quad.scaled(0.5)] });
    }
    let a = gaussian_obstacle(so3.as_ref(), &dv(&[0.3, 0.1, -0.2]), 1.0, 0.4).unwrap();
    out.push(Setup { chart: so3, potentials: vec![a] });
    out
}

fn sample(chart: &dyn Chart, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let x = DVector::from_fn(chart.dim(), |_, _| rng.gen_range(-1.2..1.2));
        if chart.in_domain(&(&x * 1.05)) {
            return x;
        }
    }
}

/// `dV(X)` by a fourth-order central difference along the coordinate line.
fn directional(p: &Potential, chart: &dyn Chart, x: &DVector<f64>, dir: &DVector<f64>) -> f64 {
    let h = 1e-3;
    let f = |s: f64| p.value(chart, &(x + dir * (s * h))).unwrap();
    (f(-2.0) - 8.0 * f(-1.0) + 8.0 * f(1.0) - f(2.0)) / (12.0 * h)
}

#[test]
fn potentials_are_nonnegative_on_a_grid() {
    for s in setups() {
        let n = s.chart.dim();
        let per_axis = if n == 2 { 100 } else { 22 };
        for p in &s.potentials {
            let mut count = 0;
            let mut idx = vec![0usize; n];
            loop {
                let x = DVector::from_fn(n, |i, _| -1.5 + 3.0 * idx[i] as f64 / (per_axis - 1) as f64);
                if s.chart.in_domain(&x) {
                    assert!(p.value(s.chart.as_ref(), &x).unwrap() >= 0.0);
                    count += 1;
                }
                let mut d = 0;
                while d < n {
                    idx[d] += 1;
                    if idx[d] < per_axis {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
                if d == n {
                    break;
                }
            }
            assert!(count > 1000);
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in setups() {
        let chart = s.chart.as_ref();
        for p in &s.potentials {
            for _ in 0..100 {
                let x = sample(chart, &mut rng);
                let dir = DVector::from_fn(chart.dim(), |_, _| rng.gen_range(-1.0..1.0));
                let g = p.gradient(chart, &x).unwrap();
                let lhs = inner(chart, &x, &g, &dir);
                let rhs = directional(p, chart, &x, &dir);
                assert!((lhs - rhs).abs() <= 1e-5 * (1.0 + rhs.abs()), "{}: {lhs} vs {rhs}", chart.name());
            }
        }
    }
}

#[test]
fn hessian_operator_is_linear_symmetric_and_matches_its_fallback() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for s in setups() {
        let chart = s.chart.as_ref();
        let n = chart.dim();
        for p in &s.potentials {
            for _ in 0..100 {
                let x = sample(chart, &mut rng);
                let u = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                let hu = p.hessian_op(chart, &x, &u).unwrap();
                let hw = p.hessian_op(chart, &x, &w).unwrap();
                let scale = 1.0 + hu.amax() + hw.amax();
                let lin = p.hessian_op(chart, &x, &(&u * 2.0 - &w)).unwrap();
                assert!((lin - (&hu * 2.0 - &hw)).amax() <= 1e-12 * scale);
                let a = inner(chart, &x, &hu, &w);
                let b = inner(chart, &x, &hw, &u);
                assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{}: {a} vs {b}", chart.name());
                let fd = p.hessian_op_fd(chart, &x, &u).unwrap();
                assert!((fd - &hu).amax() <= 1e-5 * scale, "{}", chart.name());
            }
        }
    }
}

#[test]
fn sums_and_scalings() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let chart = Sphere2::new();
    let p = gaussian_obstacle(&chart, &dv(&[0.2, 0.1]), 1.5, 0.3).unwrap();
    let with_zero = sum(vec![Potential::Zero, p.clone()]).unwrap();
    let doubled = sum(vec![p.clone(), p.clone()]).unwrap();
    for _ in 0..50 {
        let x = sample(&chart, &mut rng);
        let v = p.value(&chart, &x).unwrap();
        assert_eq!(with_zero.value(&chart, &x).unwrap(), v);
        assert!((doubled.value(&chart, &x).unwrap() - 2.0 * v).abs() <= 1e-15 * v.max(1.0));
        assert!((p.scaled(3.0).value(&chart, &x).unwrap() - 3.0 * v).abs() <= 1e-15 * v.max(1.0));
    }
    assert!(p.scaled(0.0).is_zero());
    assert!(!p.is_zero());
}

#[test]
fn riemannian_obstacle_depends_only_on_distance() {
    let chart = Sphere2::new();
    let center = dv(&[0.1, -0.2]);
    let p = Potential::Gaussian { center: vec![0.1, -0.2], strength: 1.0, sigma: 0.4, distance: DistanceMode::Riemannian };
    let frame = cubic_planner::geometry::orthonormal_frame(&chart, &center).unwrap();
    let r = 0.6;
    let expected = (-r * r / (2.0 * 0.4 * 0.4f64)).exp();
    for k in 0..8 {
        let th = k as f64 * std::f64::consts::PI / 4.0;
        let v = &frame[0] * (r * th.cos()) + &frame[1] * (r * th.sin());
        let x = cubic_planner::geometry::exp_map(&chart, &center, &v).unwrap();
        assert!((p.value(&chart, &x).unwrap() - expected).abs() < 1e-9);
    }
}
