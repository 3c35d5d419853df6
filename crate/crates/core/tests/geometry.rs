mod common;

use std::sync::Arc;

use common::*;
use cubic_planner::geometry::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HYPERBOLIC_SPEC: &str = r#"{"dim": 2, "metric": [["4/(1-x0^2-x1^2)^2", "0"], ["0", "4/(1-x0^2-x1^2)^2"]], "domain_radius": 0.9}"#;

fn charts() -> Vec<ChartRef> {
    vec![Arc::new(Euclidean::new(3)), Arc::new(Sphere2::new()), Arc::new(Hyperbolic2::new()), Arc::new(So3::new())]
}

fn numeric_hyperbolic() -> ChartRef {
    Arc::new(NumericChart::from_spec_str("numeric:h2", HYPERBOLIC_SPEC).unwrap())
}

/// Points well inside the chart domain, so finite differences stay inside.
fn sample_points(chart: &dyn Chart, rng: &mut ChaCha8Rng, count: usize) -> Vec<DVector<f64>> {
    let n = chart.dim();
    let mut out = Vec::new();
    while out.len() < count {
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
        if chart.in_domain(&(&x * 1.08)) {
            out.push(x);
        }
    }
    out
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

/// Fourth-order central difference of the metric along coordinate `k`.
fn metric_partial(chart: &dyn Chart, x: &DVector<f64>, k: usize) -> DMatrix<f64> {
    let h = 2e-4;
    let shifted = |s: f64| {
        let mut y = x.clone();
        y[k] += s * h;
        chart.metric(&y)
    };
    (shifted(-2.0) - shifted(-1.0) * 8.0 + shifted(1.0) * 8.0 - shifted(2.0)) / (12.0 * h)
}

fn compatibility_residual(chart: &dyn Chart, x: &DVector<f64>) -> f64 {
    let n = chart.dim();
    let g = chart.metric(x);
    let gam = chart.christoffel(x);
    let mut worst = 0.0f64;
    for k in 0..n {
        let dg = metric_partial(chart, x, k);
        for i in 0..n {
            for j in 0..n {
                let mut rhs = 0.0;
                for l in 0..n {
                    rhs += gam.get(l, k, i) * g[(l, j)] + gam.get(l, k, j) * g[(i, l)];
                }
                worst = worst.max((dg[(i, j)] - rhs).abs());
            }
        }
    }
    worst
}

fn rm(chart: &dyn Chart, x: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>, d: &DVector<f64>) -> f64 {
    inner(chart, x, &chart.curvature(x, a, b, c), d)
}

#[test]
fn metric_is_symmetric_positive_definite_and_connection_torsion_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for chart in charts().into_iter().chain([numeric_hyperbolic()]) {
        let n = chart.dim();
        for x in sample_points(chart.as_ref(), &mut rng, 100) {
            let g = chart.metric(&x);
            assert!((&g - g.transpose()).amax() <= 1e-14 * g.amax());
            assert!(g.clone().symmetric_eigenvalues().min() > 0.0, "{}", chart.name());
            let gam = chart.christoffel(&x);
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        assert!((gam.get(k, i, j) - gam.get(k, j, i)).abs() <= 1e-12 * (1.0 + gam.max_abs()));
                    }
                }
            }
        }
    }
}

#[test]
fn connection_is_metric_compatible() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for chart in charts() {
        for x in sample_points(chart.as_ref(), &mut rng, 100) {
            let r = compatibility_residual(chart.as_ref(), &x);
            assert!(r <= 1e-8 * chart.metric(&x).amax().max(1.0), "{} at {x}: {r:e}", chart.name());
        }
    }
    let chart = numeric_hyperbolic();
    for x in sample_points(chart.as_ref(), &mut rng, 100) {
        let r = compatibility_residual(chart.as_ref(), &x);
        assert!(r <= 1e-5 * chart.metric(&x).amax(), "numeric at {x}: {r:e}");
    }
}

#[test]
fn curvature_symmetries_and_first_bianchi() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for chart in charts() {
        let n = chart.dim();
        for x in sample_points(chart.as_ref(), &mut rng, 100) {
            let [a, b, c, d] = [0, 1, 2, 3].map(|_| random_vec(n, &mut rng));
            let scale = 1.0 + chart.metric(&x).amax().powi(2);
            let base = rm(chart.as_ref(), &x, &a, &b, &c, &d);
            assert!((base + rm(chart.as_ref(), &x, &b, &a, &c, &d)).abs() <= 1e-9 * scale);
            assert!((base + rm(chart.as_ref(), &x, &a, &b, &d, &c)).abs() <= 1e-9 * scale);
            let bianchi = chart.curvature(&x, &a, &b, &c) + chart.curvature(&x, &b, &c, &a) + chart.curvature(&x, &c, &a, &b);
            assert!(bianchi.amax() <= 1e-9 * scale, "{}", chart.name());
        }
    }
}

#[test]
fn closed_form_curvature_matches_the_christoffel_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for chart in charts().into_iter().chain([numeric_hyperbolic()]) {
        let n = chart.dim();
        let numeric = chart.kind() == CurvatureKind::GenericNumeric;
        let reference = Hyperbolic2::new();
        for x in sample_points(chart.as_ref(), &mut rng, 100) {
            let [a, b, c] = [0, 1, 2].map(|_| random_vec(n, &mut rng));
            let from_gamma = curvature_from_christoffel(chart.as_ref(), &x, &a, &b, &c);
            let closed = if numeric { reference.curvature(&x, &a, &b, &c) } else { chart.curvature(&x, &a, &b, &c) };
            let tol = if numeric { 1e-4 } else { 1e-8 };
            assert!((&from_gamma - &closed).amax() <= tol * (1.0 + closed.amax()), "{} at {x}", chart.name());
        }
    }
}

/// `(∇_W R)(X,Y)Z` for coordinate-constant `X, Y, Z` by differencing the
/// chart's own `R` and adding the connection terms.
fn nabla_r_fd(chart: &dyn Chart, x: &DVector<f64>, w: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
    let h = 1e-4;
    let d = (chart.curvature(&(x + w * h), a, b, c) - chart.curvature(&(x - w * h), a, b, c)) / (2.0 * h);
    let gam = chart.christoffel(x);
    d + gam.contract(w, &chart.curvature(x, a, b, c))
        - chart.curvature(x, &gam.contract(w, a), b, c)
        - chart.curvature(x, a, &gam.contract(w, b), c)
        - chart.curvature(x, a, b, &gam.contract(w, c))
}

#[test]
fn constant_curvature_charts_have_parallel_curvature() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for chart in charts() {
        let n = chart.dim();
        for x in sample_points(chart.as_ref(), &mut rng, 100) {
            let [w, a, b, c] = [0, 1, 2, 3].map(|_| random_vec(n, &mut rng));
            let fd = nabla_r_fd(chart.as_ref(), &x, &w, &a, &b, &c);
            let scale = 1.0 + chart.metric(&x).amax().powi(2);
            assert!(fd.amax() <= 1e-6 * scale, "{} at {x}: {}", chart.name(), fd.amax());
            assert_eq!(chart.nabla_curvature(&x, &w, &a, &b, &c).amax(), 0.0);
            assert_eq!(chart.nabla2_curvature(&x, &w, &a, &b, &c).amax(), 0.0);
        }
    }
    let chart = numeric_hyperbolic();
    for x in sample_points(chart.as_ref(), &mut rng, 20) {
        let [w, a, b, c] = [0, 1, 2, 3].map(|_| random_vec(2, &mut rng));
        let scale = 1.0 + chart.metric(&x).amax().powi(2);
        assert!(chart.nabla_curvature(&x, &w, &a, &b, &c).amax() <= 1e-3 * scale);
    }
}

#[test]
fn sectional_curvatures() {
    let x = dv(&[0.2, -0.3]);
    let e1 = dv(&[1.0, 0.0]);
    let e2 = dv(&[0.0, 1.0]);
    for (chart, k) in [(Arc::new(Sphere2::new()) as ChartRef, 1.0), (Arc::new(Hyperbolic2::new()), -1.0)] {
        let num = rm(chart.as_ref(), &x, &e1, &e2, &e2, &e1);
        let g = chart.metric(&x);
        let den = g[(0, 0)] * g[(1, 1)] - g[(0, 1)].powi(2);
        assert!((num / den - k).abs() < 1e-12);
    }
    let so3 = So3::new();
    let x = dv(&[0.3, -0.2, 0.5]);
    let frame = orthonormal_frame(&so3, &x).unwrap();
    let sec = rm(&so3, &x, &frame[0], &frame[1], &frame[1], &frame[0]);
    assert!((sec - 0.25).abs() < 1e-12);
}

#[test]
fn exponential_map_is_a_unit_speed_geodesic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for chart in charts().into_iter().chain([numeric_hyperbolic()]) {
        for x in sample_points(chart.as_ref(), &mut rng, 8) {
            let v = random_vec(chart.dim(), &mut rng);
            for t in [0.01, 0.05] {
                let y = exp_map(chart.as_ref(), &x, &(&v * t)).unwrap();
                let d = distance(chart.as_ref(), &x, &y).unwrap();
                let expected = t * norm(chart.as_ref(), &x, &v);
                assert!((d - expected).abs() <= 1e-6, "{}: {d} vs {expected}", chart.name());
            }
        }
    }
}

#[test]
fn log_inverts_exp() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for chart in charts() {
        for x in sample_points(chart.as_ref(), &mut rng, 5) {
            let v = random_vec(chart.dim(), &mut rng) * 0.2;
            let y = exp_map(chart.as_ref(), &x, &v).unwrap();
            let back = log_map(chart.as_ref(), &x, &y).unwrap();
            assert!((&back - &v).amax() < 1e-8);
        }
    }
    let h2 = Hyperbolic2::new();
    assert!(exp_map(&h2, &dv(&[0.5, 0.0]), &dv(&[5.0, 0.0])).is_err());
    assert!(exp_map(&h2, &dv(&[0.99, 0.0]), &dv(&[0.0, 0.0])).is_err());
}

#[test]
fn parallel_transport_is_an_isometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in panel() {
        let traj = case.trajectory(1000);
        let chart = case.model.chart();
        let n = chart.dim();
        let vectors: Vec<_> = (0..n).map(|_| random_vec(n, &mut rng)).collect();
        let start = traj.len() / 3;
        let moved = parallel_transport_from(chart, &traj, start, &vectors).unwrap();
        let gram = |k: usize| DMatrix::from_fn(n, n, |i, j| inner(chart, &traj.states[k].q, &moved[k][i], &moved[k][j]));
        let g0 = gram(start);
        for k in 0..traj.len() {
            assert!((gram(k) - &g0).amax() <= 1e-8, "{}", case.label);
        }
    }
}

#[test]
fn numeric_specs_are_validated() {
    assert!(NumericChart::from_spec_str("x", r#"{"dim": 2, "metric": [["1"]]}"#).is_err());
    assert!(NumericChart::from_spec_str("x", r#"{"dim": 1, "metric": [["-1"]]}"#).is_err());
    assert!(NumericChart::from_spec_str("x", r#"{"dim": 1, "metric": [["1 +"]]}"#).is_err());
    assert!(NumericChart::from_spec_str("x", "not json").is_err());
    let flat = NumericChart::from_spec_str("x", r#"{"dim": 1, "metric": [["1"]]}"#).unwrap();
    assert_eq!(flat.christoffel(&dv(&[0.3])).max_abs(), 0.0);
}
