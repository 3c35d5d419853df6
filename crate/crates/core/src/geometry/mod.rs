//! Riemannian manifolds presented in a single coordinate chart.
//!
//! Every chart exposes its metric, Levi-Civita connection and curvature
//! endomorphism in coordinates. The curvature convention is
//! `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z`, so a space of constant
//! sectional curvature `κ` has `R(X,Y)Z = κ(⟨Y,Z⟩X − ⟨X,Z⟩Y)`.
//!
//! The trait methods are unchecked; the free functions in this module check
//! chart domains and are the public entry points.

mod conformal;
mod numeric;
mod so3;

pub use conformal::{Euclidean, Hyperbolic2, Sphere2};
pub use numeric::{MetricFn, NumericChart};
pub use so3::So3;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::numerics::{quintic_hermite, rk4_step};

pub type Point = DVector<f64>;

/// Shared handle to a chart.
pub type ChartRef = Arc<dyn Chart>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurvatureKind {
    Flat,
    ConstantCurvature { kappa: f64 },
    LieGroupSo3,
    GenericNumeric,
}

impl CurvatureKind {
    /// Sectional curvature when it is the same for every plane.
    pub fn constant_sectional(&self) -> Option<f64> {
        match *self {
            CurvatureKind::Flat => Some(0.0),
            CurvatureKind::ConstantCurvature { kappa } => Some(kappa),
            // bi-invariant metric with |ω| equal to the rotation angle
            CurvatureKind::LieGroupSo3 => Some(0.25),
            CurvatureKind::GenericNumeric => None,
        }
    }

    /// `∇R = 0` holds identically.
    pub fn is_locally_symmetric(&self) -> bool {
        !matches!(self, CurvatureKind::GenericNumeric)
    }
}

/// Christoffel symbols `Γ^k_ij`, stored as `data[k·n² + i·n + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, value: f64) {
        self.data[(k * self.n + i) * self.n + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `Γ^k_ij` from the metric and its partial derivatives `dg[l] = ∂_l g`.
    pub fn from_metric(g_inv: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Self {
        let n = g_inv.nrows();
        // first kind: Γ_lij = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
        let mut first = vec![0.0; n * n * n];
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    first[(l * n + i) * n + j] =
                        0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
            }
        }
        let mut out = Self::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += g_inv[(k, l)] * first[(l * n + i) * n + j];
                    }
                    out.set(k, i, j, s);
                }
            }
        }
        out
    }

    /// `Γ^k_ij u^i w^j`.
    pub fn contract(&self, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    s += self.get(k, i, j) * u[i] * w[j];
                }
            }
            s
        })
    }

    /// Matrix `M[k][j] = Γ^k_ij u^i`, so that `M w = Γ(u, w)`.
    pub fn along(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |k, j| (0..n).map(|i| self.get(k, i, j) * u[i]).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A Riemannian manifold in one intrinsic coordinate chart.
pub trait Chart: Send + Sync + fmt::Debug {
    /// Selection string, e.g. `"sphere2"`.
    fn name(&self) -> String;

    fn dim(&self) -> usize;

    fn kind(&self) -> CurvatureKind;

    fn in_domain(&self, x: &DVector<f64>) -> bool;

    fn metric(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Partial derivatives `∂_l g`, one matrix per coordinate direction.
    fn metric_derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (0..self.dim())
            .map(|l| {
                let h = 1e-5 * x[l].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[l] += h;
                xm[l] -= h;
                (self.metric(&xp) - self.metric(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn christoffel(&self, x: &DVector<f64>) -> Christoffel {
        let g_inv = self
            .metric(x)
            .try_inverse()
            .expect("metric must be invertible inside the chart domain");
        Christoffel::from_metric(&g_inv, &self.metric_derivative(x))
    }

    /// Partial derivatives `∂_l Γ`, one entry per coordinate direction.
    fn christoffel_derivative(&self, x: &DVector<f64>) -> Vec<Christoffel> {
        let n = self.dim();
        (0..n)
            .map(|l| {
                let h = 1e-5 * x[l].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[l] += h;
                xm[l] -= h;
                let gp = self.christoffel(&xp);
                let gm = self.christoffel(&xm);
                Christoffel {
                    n,
                    data: gp
                        .data
                        .iter()
                        .zip(&gm.data)
                        .map(|(a, b)| (a - b) / (2.0 * h))
                        .collect(),
                }
            })
            .collect()
    }

    /// `R(X,Y)Z` at `x`.
    fn curvature(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        match self.kind().constant_sectional() {
            Some(k) if k == 0.0 => DVector::zeros(self.dim()),
            Some(k) => {
                let g = self.metric(x);
                let vw = v.dot(&(&g * w));
                let uw = u.dot(&(&g * w));
                (u * vw - v * uw) * k
            }
            None => curvature_from_christoffel(self, x, u, v, w),
        }
    }

    /// `(∇_W R)(X,Y)Z`; zero on locally symmetric charts.
    fn nabla_curvature(
        &self,
        _x: &DVector<f64>,
        _dir: &DVector<f64>,
        _u: &DVector<f64>,
        _v: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    /// `(∇²_{W,W} R)(X,Y)Z`; zero on locally symmetric charts.
    fn nabla2_curvature(
        &self,
        _x: &DVector<f64>,
        _dir: &DVector<f64>,
        _u: &DVector<f64>,
        _v: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    /// Closed-form Riemannian distance, when the chart has one.
    fn closed_form_distance(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> Option<Result<f64>> {
        None
    }

    /// `d(x, c)²` with its coordinate gradient and Hessian in `x`, when
    /// available in closed form.
    fn squared_distance_jet(
        &self,
        _x: &DVector<f64>,
        _center: &DVector<f64>,
    ) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        None
    }
}

pub(crate) fn check_domain(chart: &dyn Chart, x: &DVector<f64>) -> Result<()> {
    if x.len() != chart.dim() {
        return Err(Error::Dimension {
            expected: chart.dim(),
            got: x.len(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) || !chart.in_domain(x) {
        return Err(Error::OutsideDomain {
            chart: chart.name(),
            point: x.iter().copied().collect(),
        });
    }
    Ok(())
}

fn check_len(chart: &dyn Chart, v: &DVector<f64>) -> Result<()> {
    if v.len() != chart.dim() {
        Err(Error::Dimension {
            expected: chart.dim(),
            got: v.len(),
        })
    } else {
        Ok(())
    }
}

pub fn inner(chart: &dyn Chart, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
    u.dot(&(chart.metric(x) * w))
}

pub fn norm(chart: &dyn Chart, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    inner(chart, x, u, u).max(0.0).sqrt()
}

/// Coordinate computation of `R(X,Y)Z` from `Γ` and `∂Γ`:
/// `R^l_ijk = ∂_iΓ^l_jk − ∂_jΓ^l_ik + Γ^m_jk Γ^l_im − Γ^m_ik Γ^l_jm`.
pub fn curvature_from_christoffel<C: Chart + ?Sized>(
    chart: &C,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> DVector<f64> {
    let gamma = chart.christoffel(x);
    let dgamma = chart.christoffel_derivative(x);
    let n = chart.dim();
    let mut out = gamma.contract(u, &gamma.contract(v, w)) - gamma.contract(v, &gamma.contract(u, w));
    for i in 0..n {
        out += dgamma[i].contract(v, w) * u[i];
        out -= dgamma[i].contract(u, w) * v[i];
    }
    out
}

/// Full curvature tensor `R^l_ijk`, stored `[l][i][j][k]`.
pub fn curvature_components<C: Chart + ?Sized>(chart: &C, x: &DVector<f64>) -> Vec<f64> {
    let n = chart.dim();
    let gamma = chart.christoffel(x);
    let dgamma = chart.christoffel_derivative(x);
    let mut out = vec![0.0; n * n * n * n];
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s = dgamma[i].get(l, j, k) - dgamma[j].get(l, i, k);
                    for m in 0..n {
                        s += gamma.get(m, j, k) * gamma.get(l, i, m)
                            - gamma.get(m, i, k) * gamma.get(l, j, m);
                    }
                    out[((l * n + i) * n + j) * n + k] = s;
                }
            }
        }
    }
    out
}

pub fn curvature_endo(
    chart: &dyn Chart,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_domain(chart, x)?;
    for a in [u, v, w] {
        check_len(chart, a)?;
    }
    Ok(chart.curvature(x, u, v, w))
}

/// `Rm(X,Y,Z,W) = ⟨R(X,Y)Z, W⟩`.
pub fn curvature_tensor(
    chart: &dyn Chart,
    x: &DVector<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<f64> {
    let r = curvature_endo(chart, x, a, b, c)?;
    Ok(inner(chart, x, &r, d))
}

pub fn nabla_r(
    chart: &dyn Chart,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_domain(chart, x)?;
    let out = chart.nabla_curvature(x, dir, u, v, w);
    finite_or_numerical(out, "∇R")
}

pub fn nabla2_r(
    chart: &dyn Chart,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_domain(chart, x)?;
    let out = chart.nabla2_curvature(x, dir, u, v, w);
    finite_or_numerical(out, "∇²R")
}

fn finite_or_numerical(v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(Error::numerical(format!("{what} evaluation produced non-finite values")))
    }
}

/// Number of RK4 steps used for a geodesic with initial speed `speed` over unit time.
fn geodesic_steps(speed: f64) -> usize {
    ((256.0 * speed).ceil() as usize).clamp(1, 100_000)
}

/// Endpoint of the geodesic with `γ(0) = x`, `γ'(0) = v`, integrated with RK4
/// on the coordinate geodesic equation.
pub fn exp_map(chart: &dyn Chart, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_domain(chart, x)?;
    check_len(chart, v)?;
    let steps = geodesic_steps(norm(chart, x, v));
    exp_map_steps(chart, x, v, steps)
}

pub fn exp_map_steps(
    chart: &dyn Chart,
    x: &DVector<f64>,
    v: &DVector<f64>,
    steps: usize,
) -> Result<DVector<f64>> {
    if v.iter().all(|c| *c == 0.0) {
        return Ok(x.clone());
    }
    let n = chart.dim();
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(x);
    y.rows_mut(n, n).copy_from(v);
    let h = 1.0 / steps as f64;
    let mut rhs = |t: f64, s: &DVector<f64>| -> Result<DVector<f64>> {
        let q = s.rows(0, n).into_owned();
        if !chart.in_domain(&q) {
            return Err(Error::ChartEscape { time: t });
        }
        let u = s.rows(n, n).into_owned();
        let acc = -chart.christoffel(&q).contract(&u, &u);
        let mut d = DVector::zeros(2 * n);
        d.rows_mut(0, n).copy_from(&u);
        d.rows_mut(n, n).copy_from(&acc);
        Ok(d)
    };
    for k in 0..steps {
        y = rk4_step(&mut rhs, k as f64 * h, &y, h)?;
    }
    let end = y.rows(0, n).into_owned();
    if !chart.in_domain(&end) {
        return Err(Error::ChartEscape { time: 1.0 });
    }
    Ok(end)
}

/// Inverse of [`exp_map`] by Newton shooting on the initial velocity.
pub fn log_map(chart: &dyn Chart, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_domain(chart, x)?;
    check_domain(chart, y)?;
    let n = chart.dim();
    let tol = 1e-12 * (1.0 + y.amax());
    let mut v = y - x;
    let mut resid = match exp_map(chart, x, &v) {
        Ok(e) => e - y,
        Err(_) => return Err(Error::OutOfRange("initial shooting guess escaped the chart".into())),
    };
    for _ in 0..60 {
        if resid.amax() <= tol {
            return Ok(v);
        }
        let step = 1e-7 * (1.0 + v.amax());
        let mut jac = DMatrix::zeros(n, n);
        for c in 0..n {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[c] += step;
            vm[c] -= step;
            let col = (exp_map(chart, x, &vp)? - exp_map(chart, x, &vm)?) / (2.0 * step);
            jac.set_column(c, &col);
        }
        let delta = jac
            .lu()
            .solve(&(-&resid))
            .ok_or_else(|| Error::OutOfRange("exponential map is singular".into()))?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &v + &delta * alpha;
            if let Ok(e) = exp_map(chart, x, &trial) {
                let r = e - y;
                if r.norm() < resid.norm() {
                    v = trial;
                    resid = r;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if resid.amax() <= tol * 1e3 {
        Ok(v)
    } else {
        Err(Error::OutOfRange(format!(
            "log map did not converge (residual {:e})",
            resid.amax()
        )))
    }
}

/// Riemannian distance; closed form where the chart provides one, otherwise
/// the norm of the shooting logarithm.
pub fn distance(chart: &dyn Chart, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    check_domain(chart, x)?;
    check_domain(chart, y)?;
    if x == y {
        return Ok(0.0);
    }
    if let Some(d) = chart.closed_form_distance(x, y) {
        return d;
    }
    let v = log_map(chart, x, y)?;
    Ok(norm(chart, x, &v))
}

/// A `g`-orthonormal basis of the tangent space at `x` (columns of `L⁻ᵀ`).
pub fn orthonormal_frame(chart: &dyn Chart, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    check_domain(chart, x)?;
    let g = chart.metric(x);
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::numerical("metric is not positive definite"))?;
    let l_inv_t = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::numerical("singular metric factor"))?
        .transpose();
    Ok((0..chart.dim()).map(|c| l_inv_t.column(c).into_owned()).collect())
}

/// Components of `v` in a `g`-orthonormal frame: `Lᵀ v` with `g = L Lᵀ`.
pub fn orthonormal_components(chart: &dyn Chart, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = chart
        .metric(x)
        .cholesky()
        .ok_or_else(|| Error::numerical("metric is not positive definite"))?;
    Ok(chol.l().transpose() * v)
}

/// Position and coordinate velocity of the trajectory at the middle of
/// interval `k`, from quintic Hermite dense output.
fn midpoint(chart: &dyn Chart, traj: &Trajectory, k: usize) -> (DVector<f64>, DVector<f64>) {
    let a = &traj.states[k];
    let b = &traj.states[k + 1];
    let acc_a = &a.a - chart.christoffel(&a.q).contract(&a.v, &a.v);
    let acc_b = &b.a - chart.christoffel(&b.q).contract(&b.v, &b.v);
    quintic_hermite(0.5, traj.step, &a.q, &a.v, &acc_a, &b.q, &b.v, &acc_b)
}

/// Parallel transport of vectors given at node `start` to every node of the
/// trajectory (forward and backward), solving `dE/dt = −Γ(q̇, E)`.
pub fn parallel_transport_from(
    chart: &dyn Chart,
    traj: &Trajectory,
    start: usize,
    vectors: &[DVector<f64>],
) -> Result<Vec<Vec<DVector<f64>>>> {
    let nodes = traj.states.len();
    if start >= nodes {
        return Err(Error::contract("transport start node is outside the trajectory"));
    }
    for s in &traj.states {
        check_domain(chart, &s.q)?;
    }
    let n = chart.dim();
    let m = vectors.len();
    let mut out = vec![vec![DVector::zeros(n); m]; nodes];
    out[start] = vectors.to_vec();
    if m == 0 {
        return Ok(out);
    }
    let pack = |vs: &[DVector<f64>]| {
        let mut y = DVector::zeros(n * m);
        for (c, v) in vs.iter().enumerate() {
            y.rows_mut(c * n, n).copy_from(v);
        }
        y
    };
    let unpack = |y: &DVector<f64>| -> Vec<DVector<f64>> {
        (0..m).map(|c| y.rows(c * n, n).into_owned()).collect()
    };
    let rate = |q: &DVector<f64>, vel: &DVector<f64>, y: &DVector<f64>| {
        let mat = chart.christoffel(q).along(vel);
        let mut d = DVector::zeros(n * m);
        for c in 0..m {
            let e = y.rows(c * n, n).into_owned();
            d.rows_mut(c * n, n).copy_from(&(-(&mat * e)));
        }
        d
    };
    let h = traj.step;
    // forward
    let mut y = pack(vectors);
    for k in start..nodes - 1 {
        let (a, b) = (&traj.states[k], &traj.states[k + 1]);
        let (qm, vm) = midpoint(chart, traj, k);
        let k1 = rate(&a.q, &a.v, &y);
        let k2 = rate(&qm, &vm, &(&y + &k1 * (0.5 * h)));
        let k3 = rate(&qm, &vm, &(&y + &k2 * (0.5 * h)));
        let k4 = rate(&b.q, &b.v, &(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out[k + 1] = unpack(&y);
    }
    // backward
    let mut y = pack(vectors);
    for k in (0..start).rev() {
        let (a, b) = (&traj.states[k + 1], &traj.states[k]);
        let (qm, vm) = midpoint(chart, traj, k);
        let hb = -h;
        let k1 = rate(&a.q, &a.v, &y);
        let k2 = rate(&qm, &vm, &(&y + &k1 * (0.5 * hb)));
        let k3 = rate(&qm, &vm, &(&y + &k2 * (0.5 * hb)));
        let k4 = rate(&b.q, &b.v, &(&y + &k3 * hb));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (hb / 6.0);
        out[k] = unpack(&y);
    }
    if out.iter().flatten().any(|v| v.iter().any(|c| !c.is_finite())) {
        return Err(Error::numerical("parallel transport produced non-finite values"));
    }
    Ok(out)
}

/// Parallel transport of `v`, given at the first node, along the trajectory.
pub fn parallel_transport(
    chart: &dyn Chart,
    traj: &Trajectory,
    v: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    check_len(chart, v)?;
    Ok(parallel_transport_from(chart, traj, 0, std::slice::from_ref(v))?
        .into_iter()
        .map(|mut vs| vs.remove(0))
        .collect())
}
