//! Flat space and the two conformally flat constant-curvature surfaces.
//!
//! For a metric `g = e^{2φ} δ` the connection is
//! `Γ^k_ij = δ_ik φ_j + δ_jk φ_i − δ_ij φ_k`.

use nalgebra::{DMatrix, DVector, Vector3};

use super::{Chart, Christoffel, CurvatureKind};
use crate::error::Result;

fn conformal_christoffel(grad_phi: &DVector<f64>) -> Christoffel {
    let n = grad_phi.len();
    let mut out = Christoffel::zeros(n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                if i == k {
                    s += grad_phi[j];
                }
                if j == k {
                    s += grad_phi[i];
                }
                if i == j {
                    s -= grad_phi[k];
                }
                out.set(k, i, j, s);
            }
        }
    }
    out
}

fn conformal_christoffel_derivative(hess_phi: &DMatrix<f64>) -> Vec<Christoffel> {
    let n = hess_phi.nrows();
    (0..n)
        .map(|l| conformal_christoffel(&hess_phi.column(l).into_owned()))
        .collect()
}

/// Euclidean space `ℝⁿ` in Cartesian coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Euclidean {
    n: usize,
}

impl Euclidean {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "dimension must be positive");
        Self { n }
    }
}

impl Chart for Euclidean {
    fn name(&self) -> String {
        format!("euclidean:{}", self.n)
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn kind(&self) -> CurvatureKind {
        CurvatureKind::Flat
    }

    fn in_domain(&self, x: &DVector<f64>) -> bool {
        x.len() == self.n && x.iter().all(|v| v.is_finite())
    }

    fn metric(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }

    fn metric_derivative(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(self.n, self.n); self.n]
    }

    fn christoffel(&self, _x: &DVector<f64>) -> Christoffel {
        Christoffel::zeros(self.n)
    }

    fn christoffel_derivative(&self, _x: &DVector<f64>) -> Vec<Christoffel> {
        vec![Christoffel::zeros(self.n); self.n]
    }

    fn closed_form_distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> Option<Result<f64>> {
        Some(Ok((x - y).norm()))
    }

    fn squared_distance_jet(
        &self,
        x: &DVector<f64>,
        center: &DVector<f64>,
    ) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let d = x - center;
        Some((
            d.norm_squared(),
            &d * 2.0,
            DMatrix::identity(self.n, self.n) * 2.0,
        ))
    }
}

/// Stereographic position on the unit sphere and its first two derivatives.
/// `p(x) = (2x, 1 − r²)/(1 + r²)`; the origin maps to the north pole.
struct Stereo {
    p: Vector3<f64>,
    dp: [Vector3<f64>; 2],
    ddp: [[Vector3<f64>; 2]; 2],
}

fn stereo(x: &DVector<f64>) -> Stereo {
    let (x0, x1) = (x[0], x[1]);
    let r2 = x0 * x0 + x1 * x1;
    let w = 1.0 + r2;
    let p = Vector3::new(2.0 * x0 / w, 2.0 * x1 / w, (1.0 - r2) / w);
    let xs = [x0, x1];
    let mut dp = [Vector3::zeros(); 2];
    let mut ddp = [[Vector3::zeros(); 2]; 2];
    for i in 0..2 {
        // ∂_i of 2x_k/w and (1 − r²)/w = 2/w − 1
        let mut v = Vector3::zeros();
        for k in 0..2 {
            let delta = if i == k { 1.0 } else { 0.0 };
            v[k] = 2.0 * delta / w - 4.0 * xs[k] * xs[i] / (w * w);
        }
        v[2] = -4.0 * xs[i] / (w * w);
        dp[i] = v;
        for j in 0..2 {
            let dij = if i == j { 1.0 } else { 0.0 };
            let mut u = Vector3::zeros();
            for k in 0..2 {
                let dik = if i == k { 1.0 } else { 0.0 };
                let djk = if j == k { 1.0 } else { 0.0 };
                u[k] = -4.0 * (dik * xs[j] + djk * xs[i] + dij * xs[k]) / (w * w)
                    + 16.0 * xs[k] * xs[i] * xs[j] / (w * w * w);
            }
            u[2] = -4.0 * dij / (w * w) + 16.0 * xs[i] * xs[j] / (w * w * w);
            ddp[i][j] = u;
        }
    }
    Stereo { p, dp, ddp }
}

/// Squared-distance jet from `d² = G(u)` with `u` a scalar "cosine" whose
/// gradient and Hessian are given.
fn jet_from_profile(
    g: f64,
    g1: f64,
    g2: f64,
    du: &DVector<f64>,
    ddu: &DMatrix<f64>,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    (g, du * g1, du * du.transpose() * g2 + ddu * g1)
}

/// The unit sphere `S²` in stereographic coordinates from the south pole,
/// `g = 4/(1 + r²)² δ`. The chart excludes a cap around the south pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere2 {
    radius_guard: f64,
}

impl Default for Sphere2 {
    fn default() -> Self {
        Self { radius_guard: 4.0 }
    }
}

impl Sphere2 {
    pub fn new() -> Self {
        Self::default()
    }

    /// Unit-sphere point for chart coordinates `x`.
    pub fn to_embedded(x: &DVector<f64>) -> Vector3<f64> {
        stereo(x).p
    }

    /// Chart coordinates of a unit-sphere point (not the south pole).
    pub fn from_embedded(p: &Vector3<f64>) -> DVector<f64> {
        let p = p.normalize();
        DVector::from_vec(vec![p[0] / (1.0 + p[2]), p[1] / (1.0 + p[2])])
    }
}

impl Chart for Sphere2 {
    fn name(&self) -> String {
        "sphere2".into()
    }

    fn dim(&self) -> usize {
        2
    }

    fn kind(&self) -> CurvatureKind {
        CurvatureKind::ConstantCurvature { kappa: 1.0 }
    }

    fn in_domain(&self, x: &DVector<f64>) -> bool {
        x.len() == 2 && x.iter().all(|v| v.is_finite()) && x.norm() <= self.radius_guard
    }

    fn metric(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let w = 1.0 + x.norm_squared();
        DMatrix::identity(2, 2) * (4.0 / (w * w))
    }

    fn metric_derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let w = 1.0 + x.norm_squared();
        (0..2)
            .map(|l| DMatrix::identity(2, 2) * (-16.0 * x[l] / (w * w * w)))
            .collect()
    }

    fn christoffel(&self, x: &DVector<f64>) -> Christoffel {
        let w = 1.0 + x.norm_squared();
        conformal_christoffel(&(x * (-2.0 / w)))
    }

    fn christoffel_derivative(&self, x: &DVector<f64>) -> Vec<Christoffel> {
        let w = 1.0 + x.norm_squared();
        let hess = DMatrix::identity(2, 2) * (-2.0 / w) + x * x.transpose() * (4.0 / (w * w));
        conformal_christoffel_derivative(&hess)
    }

    fn closed_form_distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> Option<Result<f64>> {
        let (p, q) = (stereo(x).p, stereo(y).p);
        Some(Ok(p.cross(&q).norm().atan2(p.dot(&q))))
    }

    fn squared_distance_jet(
        &self,
        x: &DVector<f64>,
        center: &DVector<f64>,
    ) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let s = stereo(x);
        let c = stereo(center).p;
        let theta = s.p.cross(&c).norm().atan2(s.p.dot(&c));
        let du = DVector::from_fn(2, |i, _| s.dp[i].dot(&c));
        let ddu = DMatrix::from_fn(2, 2, |i, j| s.ddp[i][j].dot(&c));
        // d² = acos(u)²
        let (g1, g2) = if theta < 1e-3 {
            let t2 = theta * theta;
            (-2.0 * (1.0 + t2 / 6.0), 2.0 / 3.0 + 4.0 * t2 / 15.0)
        } else {
            let (sn, cs) = theta.sin_cos();
            (
                -2.0 * theta / sn,
                2.0 * (sn - theta * cs) / (sn * sn * sn),
            )
        };
        Some(jet_from_profile(theta * theta, g1, g2, &du, &ddu))
    }
}

/// The hyperbolic plane `H²` as the Poincaré disk, `g = 4/(1 − r²)² δ`,
/// restricted to a closed sub-disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperbolic2 {
    radius_guard: f64,
}

impl Default for Hyperbolic2 {
    fn default() -> Self {
        Self { radius_guard: 0.95 }
    }
}

impl Hyperbolic2 {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Chart for Hyperbolic2 {
    fn name(&self) -> String {
        "hyperbolic2".into()
    }

    fn dim(&self) -> usize {
        2
    }

    fn kind(&self) -> CurvatureKind {
        CurvatureKind::ConstantCurvature { kappa: -1.0 }
    }

    fn in_domain(&self, x: &DVector<f64>) -> bool {
        x.len() == 2 && x.iter().all(|v| v.is_finite()) && x.norm() <= self.radius_guard
    }

    fn metric(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let w = 1.0 - x.norm_squared();
        DMatrix::identity(2, 2) * (4.0 / (w * w))
    }

    fn metric_derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let w = 1.0 - x.norm_squared();
        (0..2)
            .map(|l| DMatrix::identity(2, 2) * (16.0 * x[l] / (w * w * w)))
            .collect()
    }

    fn christoffel(&self, x: &DVector<f64>) -> Christoffel {
        let w = 1.0 - x.norm_squared();
        conformal_christoffel(&(x * (2.0 / w)))
    }

    fn christoffel_derivative(&self, x: &DVector<f64>) -> Vec<Christoffel> {
        let w = 1.0 - x.norm_squared();
        let hess = DMatrix::identity(2, 2) * (2.0 / w) + x * x.transpose() * (4.0 / (w * w));
        conformal_christoffel_derivative(&hess)
    }

    fn closed_form_distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> Option<Result<f64>> {
        let den = ((1.0 - x.norm_squared()) * (1.0 - y.norm_squared())).sqrt();
        Some(Ok(2.0 * ((x - y).norm() / den).asinh()))
    }

    fn squared_distance_jet(
        &self,
        x: &DVector<f64>,
        center: &DVector<f64>,
    ) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        // u = 1 + 2|x − c|² / (w_x w_c), d² = acosh(u)²
        let wx = 1.0 - x.norm_squared();
        let wc = 1.0 - center.norm_squared();
        let diff = x - center;
        let s = diff.norm_squared();
        let theta = 2.0 * (diff.norm() / (wx * wc).sqrt()).asinh();
        // ∂(s/wx) and ∂²(s/wx)
        let ds = &diff * 2.0;
        let dwx = x * (-2.0);
        let f_grad = (&ds * wx - &dwx * s) / (wx * wx);
        let dds = DMatrix::identity(2, 2) * 2.0;
        let ddwx = DMatrix::identity(2, 2) * (-2.0);
        let f_hess = &dds / wx
            - (&ds * dwx.transpose() + &dwx * ds.transpose()) / (wx * wx)
            - &ddwx * (s / (wx * wx))
            + &dwx * dwx.transpose() * (2.0 * s / (wx * wx * wx));
        let du = f_grad * (2.0 / wc);
        let ddu = f_hess * (2.0 / wc);
        let (g1, g2) = if theta < 1e-3 {
            let t2 = theta * theta;
            (2.0 * (1.0 - t2 / 6.0), -2.0 / 3.0 + 4.0 * t2 / 15.0)
        } else {
            let (sh, ch) = (theta.sinh(), theta.cosh());
            (
                2.0 * theta / sh,
                2.0 * (sh - theta * ch) / (sh * sh * sh),
            )
        };
        Some(jet_from_profile(theta * theta, g1, g2, &du, &ddu))
    }
}
