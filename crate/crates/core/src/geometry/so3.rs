//! The rotation group with its bi-invariant metric, in exponential
//! (axis-angle) coordinates `ω`, `R = Exp(ω̂)`.
//!
//! The metric pulled back through `Exp` is `g = f(r) I + h(r) ωωᵀ` with
//! `r = |ω|`, `f = 2(1 − cos r)/r²` and `h = (1 − f)/r²`. With `|ω|` equal to
//! the rotation angle the sectional curvature is `1/4`.

use nalgebra::{DMatrix, DVector, Rotation3, UnitQuaternion, Vector3};

use super::{Chart, Christoffel, CurvatureKind};
use crate::error::Result;

const SERIES_RADIUS: f64 = 0.5;

/// `(f, f'/r, h, h'/r)` at radius `r`.
fn profiles(r: f64) -> (f64, f64, f64, f64) {
    if r < SERIES_RADIUS {
        // f = Σ 2(−1)^k r^{2k}/(2k+2)!
        let r2 = r * r;
        let (mut f, mut f1, mut h, mut h1) = (0.0, 0.0, 0.0, 0.0);
        let mut fact = 2.0; // (2k+2)!
        for k in 0..14usize {
            if k > 0 {
                fact *= ((2 * k + 1) * (2 * k + 2)) as f64;
            }
            let c = 2.0 * if k % 2 == 0 { 1.0 } else { -1.0 } / fact;
            let kf = k as f64;
            f += c * r2.powi(k as i32);
            if k >= 1 {
                f1 += c * 2.0 * kf * r2.powi(k as i32 - 1);
                h -= c * r2.powi(k as i32 - 1);
            }
            if k >= 2 {
                h1 -= c * (2.0 * kf - 2.0) * r2.powi(k as i32 - 2);
            }
        }
        (f, f1, h, h1)
    } else {
        let (s, c) = r.sin_cos();
        let r2 = r * r;
        let half = (0.5 * r).sin() / (0.5 * r);
        let f = half * half;
        let fp = 2.0 * s / r2 - 4.0 * (1.0 - c) / (r2 * r);
        let h = (1.0 - f) / r2;
        let hp = -fp / r2 - 2.0 * (1.0 - f) / (r2 * r);
        (f, fp / r, h, hp / r)
    }
}

fn vec3(x: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct So3 {
    angle_guard: f64,
}

impl Default for So3 {
    fn default() -> Self {
        Self {
            angle_guard: std::f64::consts::PI - 0.2,
        }
    }
}

impl So3 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rotation(x: &DVector<f64>) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(vec3(x))
    }

    /// Exponential coordinates of a rotation with angle below π.
    pub fn coordinates(r: &Rotation3<f64>) -> DVector<f64> {
        let w = UnitQuaternion::from_rotation_matrix(r).scaled_axis();
        DVector::from_vec(vec![w[0], w[1], w[2]])
    }
}

impl Chart for So3 {
    fn name(&self) -> String {
        "so3".into()
    }

    fn dim(&self) -> usize {
        3
    }

    fn kind(&self) -> CurvatureKind {
        CurvatureKind::LieGroupSo3
    }

    fn in_domain(&self, x: &DVector<f64>) -> bool {
        x.len() == 3 && x.iter().all(|v| v.is_finite()) && x.norm() <= self.angle_guard
    }

    fn metric(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (f, _, h, _) = profiles(x.norm());
        DMatrix::identity(3, 3) * f + x * x.transpose() * h
    }

    fn metric_derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let (_, f1, h, h1) = profiles(x.norm());
        let outer = x * x.transpose();
        (0..3)
            .map(|l| {
                let mut e = DVector::zeros(3);
                e[l] = 1.0;
                DMatrix::identity(3, 3) * (f1 * x[l])
                    + &outer * (h1 * x[l])
                    + (&e * x.transpose() + x * e.transpose()) * h
            })
            .collect()
    }

    fn christoffel(&self, x: &DVector<f64>) -> Christoffel {
        let g_inv = self
            .metric(x)
            .try_inverse()
            .expect("SO(3) metric is invertible below angle 2π");
        Christoffel::from_metric(&g_inv, &self.metric_derivative(x))
    }

    fn closed_form_distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> Option<Result<f64>> {
        let qa = UnitQuaternion::from_scaled_axis(vec3(x));
        let qb = UnitQuaternion::from_scaled_axis(vec3(y));
        let rel = qa.inverse() * qb;
        Some(Ok(2.0 * rel.imag().norm().atan2(rel.w.abs())))
    }
}
