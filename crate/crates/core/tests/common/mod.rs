#![allow(dead_code)]

use std::sync::Arc;

use cubic_planner::dynamics::{integrate_ivp, CurveState, Trajectory};
use cubic_planner::geometry::{ChartRef, Euclidean, Hyperbolic2, So3, Sphere2};
use cubic_planner::potentials::{gaussian_obstacle, Potential};
use cubic_planner::Model;
use nalgebra::DVector;

pub fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub struct Case {
    pub label: String,
    pub model: Model,
    pub start: CurveState,
    pub duration: f64,
}

impl Case {
    pub fn trajectory(&self, steps: usize) -> Trajectory {
        integrate_ivp(&self.model, &self.start, self.duration, self.duration / steps as f64).unwrap()
    }
}

struct Setup {
    name: &'static str,
    chart: ChartRef,
    state: [Vec<f64>; 4],
    center: Vec<f64>,
    strength: f64,
    sigma: f64,
}

fn setups() -> Vec<Setup> {
    vec![
        Setup {
            name: "euclidean:2",
            chart: Arc::new(Euclidean::new(2)),
            state: [vec![0.0, 0.0], vec![1.0, 0.3], vec![0.2, -0.4], vec![0.1, 0.3]],
            center: vec![0.5, 0.3],
            strength: 0.5,
            sigma: 0.3,
        },
        Setup {
            name: "sphere2",
            chart: Arc::new(Sphere2::new()),
            state: [vec![0.1, -0.2], vec![0.8, 0.4], vec![-0.3, 0.2], vec![0.2, 0.1]],
            center: vec![0.5, 0.1],
            strength: 0.5,
            sigma: 0.3,
        },
        Setup {
            name: "hyperbolic2",
            chart: Arc::new(Hyperbolic2::new()),
            state: [vec![0.1, 0.0], vec![0.4, 0.2], vec![0.1, -0.2], vec![0.1, 0.1]],
            center: vec![0.3, 0.15],
            strength: 0.3,
            sigma: 0.2,
        },
        Setup {
            name: "so3",
            chart: Arc::new(So3::new()),
            state: [vec![0.2, -0.1, 0.3], vec![0.5, 0.3, -0.2], vec![0.1, 0.2, 0.1], vec![-0.1, 0.1, 0.2]],
            center: vec![0.45, 0.05, 0.2],
            strength: 0.5,
            sigma: 0.3,
        },
    ]
}

/// Each chart with `V ≡ 0` and with one Gaussian obstacle near the path.
pub fn panel() -> Vec<Case> {
    let mut out = Vec::new();
    for s in setups() {
        let start = CurveState::new(0.0, dv(&s.state[0]), dv(&s.state[1]), dv(&s.state[2]), dv(&s.state[3]));
        let obstacle = gaussian_obstacle(s.chart.as_ref(), &dv(&s.center), s.strength, s.sigma).unwrap();
        for (tag, pot) in [("free", Potential::Zero), ("obstacle", obstacle)] {
            out.push(Case {
                label: format!("{} {}", s.name, tag),
                model: Model::new(s.chart.clone(), pot).unwrap(),
                start: start.clone(),
                duration: 1.0,
            });
        }
    }
    out
}

/// Unit Gaussian hill centered at the origin of the line; the constant curve
/// at its top has bi-Jacobi equation `X⁗ = X`.
pub fn hilltop() -> Model {
    let chart = Euclidean::new(1);
    let v = gaussian_obstacle(&chart, &dv(&[0.0]), 1.0, 1.0).unwrap();
    Model::from_chart(chart, v).unwrap()
}

/// `V = q²/2` on the line: bi-Jacobi equation `X⁗ = −X` along `q ≡ 0`.
pub fn harmonic() -> Model {
    Model::from_chart(Euclidean::new(1), Potential::Quadratic { center: None, k: 1.0 }).unwrap()
}

pub fn rest_state(n: usize) -> CurveState {
    let z = DVector::zeros(n);
    CurveState::new(0.0, z.clone(), z.clone(), z.clone(), z)
}

/// Roots of `cos t cosh t = 1` (clamped-clamped beam).
pub const BEAM_ROOTS: [f64; 3] = [4.730040744862704, 7.853204624095838, 10.995607838001671];
