//! Modified bi-Jacobi fields: solutions of
//! `D⁴X + F(X, q̇) + ∇_X grad V = 0` along a modified cubic, and the
//! biconjugate points they define.
//!
//! Fields are carried as covariant jets `(X, DX, D²X, D³X)` in coordinates.
//! They are integrated together with the curve itself (same RK4 stages), so
//! a propagated field is exactly the linearization of the discrete flow.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_ivp, rhs_packed, step_count, CurveState, Trajectory};
use crate::error::{Error, Result};
use crate::fields::{field_from_frame, FieldSamples};
use crate::geometry::{inner, orthonormal_frame, parallel_transport_from, Chart};
use crate::index::index_form_pieces;
use crate::model::Model;

/// Covariant jets of a field at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiState {
    pub t: f64,
    pub x: DVector<f64>,
    pub dx: DVector<f64>,
    pub d2x: DVector<f64>,
    pub d3x: DVector<f64>,
}

impl JacobiState {
    pub fn new(t: f64, x: DVector<f64>, dx: DVector<f64>, d2x: DVector<f64>, d3x: DVector<f64>) -> Self {
        Self { t, x, dx, d2x, d3x }
    }

    /// `X(t) = DX(t) = 0` with the given higher jets.
    pub fn clamped(t: f64, d2x: DVector<f64>, d3x: DVector<f64>) -> Self {
        let n = d2x.len();
        Self::new(t, DVector::zeros(n), DVector::zeros(n), d2x, d3x)
    }

    fn pack_into(&self, y: &mut DVector<f64>, offset: usize) {
        let n = self.x.len();
        y.rows_mut(offset, n).copy_from(&self.x);
        y.rows_mut(offset + n, n).copy_from(&self.dx);
        y.rows_mut(offset + 2 * n, n).copy_from(&self.d2x);
        y.rows_mut(offset + 3 * n, n).copy_from(&self.d3x);
    }

    fn unpack(t: f64, y: &DVector<f64>, offset: usize, n: usize) -> Self {
        Self {
            t,
            x: y.rows(offset, n).into_owned(),
            dx: y.rows(offset + n, n).into_owned(),
            d2x: y.rows(offset + 2 * n, n).into_owned(),
            d3x: y.rows(offset + 3 * n, n).into_owned(),
        }
    }
}

/// The curvature operator of the second variation, with `Y = q̇`,
/// `A = Dq̇/dt`, `B = D²q̇/dt²`, `P = DX/dt`, `Q = D²X/dt²`:
///
/// ```text
/// F = (∇²_Y R)(X,Y)Y + (∇_X R)(A,Y)Y + R(R(X,Y)Y,Y)Y + R(X,B)Y
///   + 2[(∇_Y R)(P,Y)Y + (∇_Y R)(X,A)Y + R(Q,Y)Y]
///   + 3[(∇_Y R)(X,Y)A + R(X,Y)B + R(X,A)A] + 4R(P,Y)A
/// ```
///
/// `∇²_Y R` is the second covariant derivative of `R` along the curve,
/// `∇²_{Y,Y} R + ∇_A R`.
pub fn f_operator(
    chart: &dyn Chart,
    state: &CurveState,
    x: &DVector<f64>,
    dx: &DVector<f64>,
    d2x: &DVector<f64>,
) -> DVector<f64> {
    let q = &state.q;
    let (y, a, b) = (&state.v, &state.a, &state.j);
    let r = |u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>| chart.curvature(q, u, v, w);
    let rxy_y = r(x, y, y);
    let mut out = r(&rxy_y, y, y) + r(x, b, y) + r(d2x, y, y) * 2.0 + (r(x, y, b) + r(x, a, a)) * 3.0
        + r(dx, y, a) * 4.0;
    if !chart.kind().is_locally_symmetric() {
        let nr = |d: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>| {
            chart.nabla_curvature(q, d, u, v, w)
        };
        out += chart.nabla2_curvature(q, y, x, y, y) + nr(a, x, y, y) + nr(x, a, y, y);
        out += (nr(y, dx, y, y) + nr(y, x, a, y)) * 2.0;
        out += nr(y, x, y, a) * 3.0;
    }
    out
}

/// Covariant derivatives of the jets: `D(X, DX, D²X, D³X)/dt`.
pub fn jacobi_rhs(model: &Model, state: &CurveState, field: &JacobiState) -> Result<JacobiState> {
    let chart = model.chart();
    let f = f_operator(chart, state, &field.x, &field.dx, &field.d2x);
    let h = model.potential().hessian_op(chart, &state.q, &field.x)?;
    Ok(JacobiState::new(
        field.t,
        field.dx.clone(),
        field.d2x.clone(),
        field.d3x.clone(),
        -(f + h),
    ))
}

/// `D⁴X = −F − ∇_X grad V` for a field given by its jets.
fn fourth_derivative(
    chart: &dyn Chart,
    hess: &DMatrix<f64>,
    state: &CurveState,
    field: &JacobiState,
) -> DVector<f64> {
    -(f_operator(chart, state, &field.x, &field.dx, &field.d2x) + hess * &field.x)
}

/// Right-hand side of the curve plus `m` fields, all in one packed vector.
fn augmented_rhs(model: &Model, t: f64, y: &DVector<f64>, m: usize) -> Result<DVector<f64>> {
    let chart = model.chart();
    let n = chart.dim();
    let curve = y.rows(0, 4 * n).into_owned();
    let mut out = DVector::zeros(y.len());
    out.rows_mut(0, 4 * n).copy_from(&rhs_packed(model, t, &curve)?);
    let state = CurveState::unpack(t, &curve);
    let gv = chart.christoffel(&state.q).along(&state.v);
    let hess = model.potential().hessian_matrix(chart, &state.q)?;
    for c in 0..m {
        let off = 4 * n * (c + 1);
        let f = JacobiState::unpack(t, y, off, n);
        let d4 = fourth_derivative(chart, &hess, &state, &f);
        out.rows_mut(off, n).copy_from(&(&f.dx - &gv * &f.x));
        out.rows_mut(off + n, n).copy_from(&(&f.d2x - &gv * &f.dx));
        out.rows_mut(off + 2 * n, n).copy_from(&(&f.d3x - &gv * &f.d2x));
        out.rows_mut(off + 3 * n, n).copy_from(&(d4 - &gv * &f.d3x));
    }
    Ok(out)
}

fn rk4_augmented(model: &Model, t: f64, y: &DVector<f64>, h: f64, m: usize) -> Result<DVector<f64>> {
    let k1 = augmented_rhs(model, t, y, m)?;
    let k2 = augmented_rhs(model, t + 0.5 * h, &(y + &k1 * (0.5 * h)), m)?;
    let k3 = augmented_rhs(model, t + 0.5 * h, &(y + &k2 * (0.5 * h)), m)?;
    let k4 = augmented_rhs(model, t + h, &(y + &k3 * h), m)?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

const OVERFLOW: f64 = 1e150;

/// Packed augmented states at every node of a uniform grid.
struct Propagation {
    start: f64,
    h: f64,
    m: usize,
    n: usize,
    nodes: Vec<DVector<f64>>,
}

impl Propagation {
    fn run(model: &Model, start: &CurveState, fields: &[JacobiState], h: f64, steps: usize) -> Result<Self> {
        let n = model.dim();
        let m = fields.len();
        let mut y = DVector::zeros(4 * n * (m + 1));
        y.rows_mut(0, 4 * n).copy_from(&start.pack());
        for (c, f) in fields.iter().enumerate() {
            if f.x.len() != n {
                return Err(Error::Dimension { expected: n, got: f.x.len() });
            }
            f.pack_into(&mut y, 4 * n * (c + 1));
        }
        let mut nodes = Vec::with_capacity(steps + 1);
        nodes.push(y.clone());
        for k in 0..steps {
            let t = start.t + k as f64 * h;
            y = rk4_augmented(model, t, &y, h, m)?;
            let t_next = t + h;
            if !model.chart().in_domain(&y.rows(0, n).into_owned()) {
                return Err(Error::ChartEscape { time: t_next });
            }
            let fields_part = y.rows(4 * n, 4 * n * m);
            if fields_part.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW) {
                return Err(Error::Overflow { time: t_next });
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { time: t_next });
            }
            nodes.push(y.clone());
        }
        Ok(Self {
            start: start.t,
            h,
            m,
            n,
            nodes,
        })
    }

    fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.h
    }

    /// Augmented state at node `k` advanced by `dt` (one RK4 step).
    fn at(&self, model: &Model, k: usize, dt: f64) -> Result<DVector<f64>> {
        if dt == 0.0 {
            return Ok(self.nodes[k].clone());
        }
        rk4_augmented(model, self.time(k), &self.nodes[k], dt, self.m)
    }

    fn curve(&self, y: &DVector<f64>, t: f64) -> CurveState {
        CurveState::unpack(t, &y.rows(0, 4 * self.n).into_owned())
    }

    fn field(&self, y: &DVector<f64>, t: f64, c: usize) -> JacobiState {
        JacobiState::unpack(t, y, 4 * self.n * (c + 1), self.n)
    }

    fn samples(&self, model: &Model, c: usize) -> Result<FieldSamples> {
        let chart = model.chart();
        let mut out = FieldSamples::zeros(0, self.n);
        let mut d3 = Vec::with_capacity(self.nodes.len());
        let mut d4 = Vec::with_capacity(self.nodes.len());
        for (k, y) in self.nodes.iter().enumerate() {
            let t = self.time(k);
            let s = self.curve(y, t);
            let f = self.field(y, t, c);
            let hess = model.potential().hessian_matrix(chart, &s.q)?;
            d4.push(fourth_derivative(chart, &hess, &s, &f));
            out.x.push(f.x);
            out.dx.push(f.dx);
            out.d2x.push(f.d2x);
            d3.push(f.d3x);
        }
        out.d3x = Some(d3);
        out.d4x = Some(d4);
        Ok(out)
    }
}

/// Propagates a bi-Jacobi field from the first node of the trajectory over
/// the trajectory grid.
pub fn propagate_jacobi(model: &Model, traj: &Trajectory, initial: &JacobiState) -> Result<FieldSamples> {
    Ok(propagate_many(model, traj, std::slice::from_ref(initial))?.remove(0))
}

/// Propagates several fields at once from the first node of the trajectory.
pub fn propagate_many(model: &Model, traj: &Trajectory, initial: &[JacobiState]) -> Result<Vec<FieldSamples>> {
    let start = traj.first();
    for f in initial {
        if (f.t - start.t).abs() > 1e-12 * (1.0 + start.t.abs()) {
            return Err(Error::contract("initial jets must be given at the trajectory start"));
        }
    }
    let p = Propagation::run(model, start, initial, traj.step, traj.intervals())?;
    (0..initial.len()).map(|c| p.samples(model, c)).collect()
}

/// Curve state at an arbitrary time, by one RK4 step from the node below.
pub fn state_at(model: &Model, traj: &Trajectory, t: f64) -> Result<CurveState> {
    let (t0, t1) = (traj.start_time(), traj.end_time());
    if t < t0 - 1e-12 * (1.0 + t0.abs()) || t > t1 + 1e-12 * (1.0 + t1.abs()) {
        return Err(Error::contract(format!("time {t} outside [{t0}, {t1}]")));
    }
    let u = ((t - t0) / traj.step).clamp(0.0, traj.intervals() as f64);
    let k = (u.floor() as usize).min(traj.intervals());
    let node = &traj.states[k];
    let dt = t - node.t;
    if dt.abs() <= 1e-14 * (1.0 + t.abs()) {
        return Ok(node.clone());
    }
    let mut f = |tt: f64, y: &DVector<f64>| rhs_packed(model, tt, y);
    let y = crate::numerics::rk4_step(&mut f, node.t, &node.pack(), dt)?;
    Ok(CurveState::unpack(t, &y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiconjugatePoint {
    pub t: f64,
    /// Smallest singular value of the boundary matrix `[X_i(t); DX_i(t)]`
    /// in an orthonormal frame.
    pub sigma_min: f64,
    /// `σ_min/σ_max` of the boundary matrix with the leading powers of
    /// `t − t₁` removed.
    pub sigma_ratio: f64,
    pub witness_d2x: Vec<f64>,
    pub witness_d3x: Vec<f64>,
    /// `(‖X(t₂)‖ + ‖DX(t₂)‖)/max‖X‖` for the re-propagated witness.
    pub witness_residual: f64,
    pub detection: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiconjugateReport {
    pub base_time: f64,
    pub points: Vec<BiconjugatePoint>,
    /// Scan grid spacing.
    pub resolution: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    /// Relative singular-value threshold for even-multiplicity zeros.
    pub dip_threshold: f64,
    /// Candidate threshold for local minima of the singular-value ratio.
    pub dip_candidate: f64,
    /// Absolute refinement tolerance in `t`.
    pub time_tolerance: f64,
    /// Scan step; defaults to the trajectory step.
    pub step: Option<f64>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            dip_threshold: 1e-8,
            dip_candidate: 1e-2,
            time_tolerance: 1e-11,
            step: None,
        }
    }
}

/// Fundamental solutions with `X(t₁) = DX(t₁) = 0` and unit higher jets.
fn fundamental_jets(n: usize, t1: f64) -> Vec<JacobiState> {
    let mut out = Vec::with_capacity(2 * n);
    for c in 0..2 * n {
        let mut e = DVector::zeros(2 * n);
        e[c] = 1.0;
        out.push(JacobiState::clamped(t1, e.rows(0, n).into_owned(), e.rows(n, n).into_owned()));
    }
    out
}

/// Boundary matrix `[LᵀX_i; LᵀDX_i]` with rows scaled by `τ⁻², τ⁻¹` and the
/// `D³X` columns by `τ⁻¹`, `τ = t − t₁`. The scaling removes the trivial
/// zero at `t₁` without moving any other zero.
fn scaled_boundary_matrix(chart: &dyn Chart, p: &Propagation, y: &DVector<f64>, t: f64, tau: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = p.n;
    let s = p.curve(y, t);
    let chol = chart
        .metric(&s.q)
        .cholesky()
        .ok_or_else(|| Error::numerical("metric is not positive definite"))?;
    let lt = chol.l().transpose();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for c in 0..2 * n {
        let f = p.field(y, t, c);
        m.view_mut((0, c), (n, 1)).copy_from(&(&lt * &f.x));
        m.view_mut((n, c), (n, 1)).copy_from(&(&lt * &f.dx));
    }
    let sigma_min = m.clone().svd(false, false).singular_values.min();
    for c in 0..2 * n {
        let col_scale = if c >= n { 1.0 / tau } else { 1.0 };
        for r in 0..2 * n {
            let row_scale = if r < n { 1.0 / (tau * tau) } else { 1.0 / tau };
            m[(r, c)] *= row_scale * col_scale;
        }
    }
    Ok((m, sigma_min))
}

struct ScanSample {
    det: f64,
    ratio: f64,
}

fn sample_matrix(m: &DMatrix<f64>) -> ScanSample {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    ScanSample {
        det: m.determinant(),
        ratio: if max > 0.0 { sv.min() / max } else { 0.0 },
    }
}

/// One scan direction from `t₁` (forward when `span > 0`).
fn scan_direction(
    model: &Model,
    base: &CurveState,
    span: f64,
    nominal_step: f64,
    opts: &ScanOptions,
    report: &mut BiconjugateReport,
) -> Result<()> {
    let chart = model.chart();
    let n = chart.dim();
    let steps = step_count(span.abs(), nominal_step).max(8);
    let h = span / steps as f64;
    let p = Propagation::run(model, base, &fundamental_jets(n, base.t), h, steps)?;
    let eval = |k: usize, dt: f64| -> Result<(DMatrix<f64>, f64)> {
        let y = p.at(model, k, dt)?;
        let t = p.time(k) + dt;
        scaled_boundary_matrix(chart, &p, &y, t, t - base.t)
    };
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(None);
    for k in 1..=steps {
        samples.push(Some(sample_matrix(&eval(k, 0.0)?.0)));
    }
    let mut found: Vec<(f64, &'static str, usize)> = Vec::new();
    // sign changes of the determinant
    for k in 1..steps {
        let (a, b) = (samples[k].as_ref().unwrap(), samples[k + 1].as_ref().unwrap());
        if a.det == 0.0 || a.det.signum() != b.det.signum() {
            let (mut lo, mut hi) = (0.0, h);
            let sign_lo = a.det.signum();
            while (hi - lo).abs() > opts.time_tolerance {
                let mid = 0.5 * (lo + hi);
                let d = eval(k, mid)?.0.determinant();
                if d.signum() == sign_lo && d != 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            found.push((p.time(k) + 0.5 * (lo + hi), "sign_change", k));
        }
    }
    // dips of the singular-value ratio without a sign change
    for k in 2..steps {
        let (prev, cur, next) = (
            samples[k - 1].as_ref().unwrap(),
            samples[k].as_ref().unwrap(),
            samples[k + 1].as_ref().unwrap(),
        );
        if cur.ratio <= prev.ratio && cur.ratio <= next.ratio && cur.ratio < opts.dip_candidate {
            if found.iter().any(|f| f.2 + 1 >= k && f.2 <= k) {
                continue;
            }
            let ratio_at = |dt: f64| -> Result<f64> {
                let kk = if dt < 0.0 { k - 1 } else { k };
                let off = if dt < 0.0 { h + dt } else { dt };
                Ok(sample_matrix(&eval(kk, off)?.0).ratio)
            };
            // golden-section search on [−h, h] around node k
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let (mut a, mut b) = (-h, h);
            let mut c = b - g * (b - a);
            let mut d = a + g * (b - a);
            let (mut fc, mut fd) = (ratio_at(c)?, ratio_at(d)?);
            while (b - a).abs() > opts.time_tolerance {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - g * (b - a);
                    fc = ratio_at(c)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + g * (b - a);
                    fd = ratio_at(d)?;
                }
            }
            let off = 0.5 * (a + b);
            if ratio_at(off)? <= opts.dip_threshold {
                found.push((p.time(k) + off, "singular_value_dip", k));
            }
        }
    }
    found.sort_by(|a, b| a.0.abs().partial_cmp(&b.0.abs()).unwrap());
    for w in found.windows(2) {
        if w[1].2 <= w[0].2 + 1 {
            report.warnings.push(format!(
                "zeros near t = {:.6} and t = {:.6} fall in adjacent scan intervals; refine the grid",
                w[0].0, w[1].0
            ));
        }
    }
    for (t2, how, _) in found {
        let k = (((t2 - base.t) / h).floor().max(0.0) as usize).min(steps - 1);
        let dt = t2 - p.time(k);
        let (m, sigma_min) = eval(k, dt)?;
        let svd = m.clone().svd(false, true);
        let v_t = svd.v_t.as_ref().ok_or_else(|| Error::numerical("svd failed"))?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc });
        let ratio = svd.singular_values.min() / svd.singular_values.max();
        let v = v_t.row(imin).transpose();
        let tau = t2 - base.t;
        let mut jets = DVector::zeros(2 * n);
        for c in 0..2 * n {
            jets[c] = if c >= n { v[c] / tau } else { v[c] };
        }
        jets /= jets.amax();
        let d2 = jets.rows(0, n).into_owned();
        let d3 = jets.rows(n, n).into_owned();
        let residual = witness_residual(model, base, t2, &d2, &d3, nominal_step)?;
        report.points.push(BiconjugatePoint {
            t: t2,
            sigma_min,
            sigma_ratio: ratio,
            witness_d2x: d2.iter().copied().collect(),
            witness_d3x: d3.iter().copied().collect(),
            witness_residual: residual,
            detection: how.to_string(),
        });
    }
    Ok(())
}

fn witness_residual(
    model: &Model,
    base: &CurveState,
    t2: f64,
    d2: &DVector<f64>,
    d3: &DVector<f64>,
    nominal_step: f64,
) -> Result<f64> {
    let span = t2 - base.t;
    let steps = step_count(span.abs(), nominal_step).max(8);
    let p = Propagation::run(model, base, &[JacobiState::clamped(base.t, d2.clone(), d3.clone())], span / steps as f64, steps)?;
    let chart = model.chart();
    let mut max_x = 0.0f64;
    for (k, y) in p.nodes.iter().enumerate() {
        let t = p.time(k);
        let s = p.curve(y, t);
        let f = p.field(y, t, 0);
        max_x = max_x.max(inner(chart, &s.q, &f.x, &f.x).sqrt());
    }
    let y = &p.nodes[steps];
    let s = p.curve(y, t2);
    let f = p.field(y, t2, 0);
    let end = inner(chart, &s.q, &f.x, &f.x).sqrt() + inner(chart, &s.q, &f.dx, &f.dx).sqrt();
    Ok(if max_x > 0.0 { end / max_x } else { end })
}

/// Scans forward and backward from `t₁` for times `t₂` at which a nonzero
/// bi-Jacobi field vanishes with its covariant derivative at both `t₁` and `t₂`.
pub fn biconjugate_scan(model: &Model, traj: &Trajectory, t1: f64, opts: &ScanOptions) -> Result<BiconjugateReport> {
    let base = state_at(model, traj, t1)?;
    let h = opts.step.unwrap_or(traj.step);
    if !(h > 0.0) {
        return Err(Error::contract("scan step must be positive"));
    }
    let mut report = BiconjugateReport {
        base_time: t1,
        points: Vec::new(),
        resolution: h,
        warnings: Vec::new(),
    };
    let forward = traj.end_time() - t1;
    let backward = traj.start_time() - t1;
    if forward > 8.0 * h * 1e-3 {
        scan_direction(model, &base, forward, h, opts, &mut report)?;
    }
    if backward < -8.0 * h * 1e-3 {
        scan_direction(model, &base, backward, h, opts, &mut report)?;
    }
    report.points.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    Ok(report)
}

/// Closed-form biconjugacy determinant for `X⁗ = σX` on the line, with the
/// fundamental solutions `X(0) = X'(0) = 0`. For `σ = −1` it is
/// `s₂² − s₁s₃` with `s_j(t) = Σ_m (−1)^m t^{4m+j}/(4m+j)!`; for `σ = +1`
/// it is `(1 − cos t cosh t)/2`.
pub fn line_biconjugacy_determinant(sign: f64, t: f64) -> f64 {
    if sign > 0.0 {
        0.5 * (1.0 - t.cos() * t.cosh())
    } else {
        let s = |j: u32| {
            let mut total = 0.0;
            let mut term_sign = 1.0;
            for m in 0..60u32 {
                let p = 4 * m + j;
                let mut term = 1.0;
                for i in 1..=p {
                    term *= t / i as f64;
                }
                total += term_sign * term;
                term_sign = -term_sign;
                if term.abs() < 1e-300 {
                    break;
                }
            }
            total
        };
        s(2) * s(2) - s(1) * s(3)
    }
}

/// A `U_ε = X + εY` direction with `I(U_ε, U_ε) < 0`.
#[derive(Debug, Clone)]
pub struct NegativeDirection {
    pub delta: f64,
    pub epsilon: f64,
    /// `I(U_ε, U_ε)`.
    pub value: f64,
    pub i_xx: f64,
    pub i_xy: f64,
    pub i_yx: f64,
    pub i_yy: f64,
    /// `−Σ(‖Y(t_i)‖² + ‖DY(t_i)‖²)` over the bump sites, the value `I(X, Y)`
    /// should take.
    pub expected_i_xy: f64,
    /// Curve pieces with the samples of `X` and `Y` on each.
    pub pieces: Vec<(Trajectory, FieldSamples, FieldSamples)>,
}

impl NegativeDirection {
    /// Samples of `U_ε` on each piece.
    pub fn combined(&self) -> Result<Vec<FieldSamples>> {
        self.pieces
            .iter()
            .map(|(_, x, y)| y.axpy(self.epsilon, x))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeDirectionOptions {
    pub delta_fractions: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Largest accepted `σ_min/σ_max` at `t₂` for the pair to count as biconjugate.
    pub biconjugacy_tolerance: f64,
}

impl Default for NegativeDirectionOptions {
    fn default() -> Self {
        Self {
            delta_fractions: vec![0.1, 0.05, 0.025, 0.0125, 0.00625],
            epsilons: vec![1e-1, 1e-2, 1e-3, 1e-4],
            biconjugacy_tolerance: 1e-6,
        }
    }
}

/// `φ(u) = (1 − u²)³` on `|u| < 1` and its first two derivatives.
fn bump(u: f64) -> [f64; 3] {
    if u.abs() >= 1.0 {
        return [0.0; 3];
    }
    let w = 1.0 - u * u;
    [w * w * w, -6.0 * u * w * w, -6.0 * w * w + 24.0 * u * u * w]
}

/// Builds the direction of negative second variation past a biconjugate
/// pair `t₁ < t₂`: the witness field cut off outside `[t₁, t₂]`, corrected by
/// bumps at `t₁` and `t₂` whose jets cancel the kinks of the cut-off.
pub fn negative_direction(
    model: &Model,
    traj: &Trajectory,
    t1: f64,
    t2: f64,
    opts: &NegativeDirectionOptions,
) -> Result<NegativeDirection> {
    let chart = model.chart();
    let n = chart.dim();
    let (t0, t_end) = (traj.start_time(), traj.end_time());
    let eps_t = 1e-12 * (1.0 + t_end.abs());
    if !(t1 >= t0 - eps_t && t1 < t2 && t2 < t_end) {
        return Err(Error::contract("negative direction needs t0 <= t1 < t2 < T"));
    }
    let t1_at_start = (t1 - t0).abs() <= eps_t;
    let h = traj.step;

    // witness jets at t1 from the boundary matrix at t2
    let base = state_at(model, traj, t1)?;
    let span = t2 - t1;
    let steps = step_count(span, h).max(8);
    let p = Propagation::run(model, &base, &fundamental_jets(n, t1), span / steps as f64, steps)?;
    let (m, _) = scaled_boundary_matrix(chart, &p, &p.nodes[steps], t2, span)?;
    let svd = m.svd(false, true);
    let ratio = svd.singular_values.min() / svd.singular_values.max();
    if ratio > opts.biconjugacy_tolerance {
        return Err(Error::contract(format!(
            "t1 = {t1} and t2 = {t2} are not biconjugate (singular value ratio {ratio:e})"
        )));
    }
    let imin = svd.singular_values.imin();
    let v = svd.v_t.as_ref().unwrap().row(imin).transpose();
    let mut jets = DVector::zeros(2 * n);
    for c in 0..2 * n {
        jets[c] = if c >= n { v[c] / span } else { v[c] };
    }
    jets /= jets.amax();
    let u_start = JacobiState::clamped(t1, jets.rows(0, n).into_owned(), jets.rows(n, n).into_owned());

    let mut best: Option<NegativeDirection> = None;
    let mut smallest = f64::INFINITY;
    for frac in &opts.delta_fractions {
        let delta = frac * span;
        if delta >= 0.5 * span || t2 + delta >= t_end || (!t1_at_start && t1 - delta <= t0) {
            continue;
        }
        let mut cuts = vec![t0, t1, t2, t2 - delta, t2 + delta, t_end];
        if !t1_at_start {
            cuts.push(t1 - delta);
            cuts.push(t1 + delta);
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() <= eps_t);

        // integrate the curve piece by piece
        let mut pieces: Vec<Trajectory> = Vec::new();
        let mut state = traj.first().clone();
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            let k = (step_count(len, h).max(8) + 1) / 2 * 2;
            let piece = integrate_ivp(model, &state, len, len / k as f64)?;
            state = piece.last().clone();
            state.t = w[1];
            pieces.push(piece);
        }

        // witness on [t1, t2], zero elsewhere
        let mut xs = Vec::with_capacity(pieces.len());
        let mut jet = u_start.clone();
        let mut jets_at_t2 = None;
        for (w, piece) in cuts.windows(2).zip(&pieces) {
            if w[0] >= t1 - eps_t && w[1] <= t2 + eps_t {
                jet.t = piece.start_time();
                let f = propagate_jacobi(model, piece, &jet)?;
                let last = f.len() - 1;
                jet = JacobiState::new(
                    piece.end_time(),
                    f.x[last].clone(),
                    f.dx[last].clone(),
                    f.d2x[last].clone(),
                    f.d3x.as_ref().unwrap()[last].clone(),
                );
                if (w[1] - t2).abs() <= eps_t {
                    jets_at_t2 = Some(jet.clone());
                }
                xs.push(f);
            } else {
                xs.push(FieldSamples::zeros(piece.len(), n));
            }
        }
        let at_t2 = jets_at_t2.ok_or_else(|| Error::numerical("witness did not reach t2"))?;

        // bump targets: Y(t_i), DY(t_i)
        let mut sites: Vec<(f64, DVector<f64>, DVector<f64>)> = Vec::new();
        if !t1_at_start {
            sites.push((t1, -&u_start.d3x, u_start.d2x.clone()));
        }
        sites.push((t2, at_t2.d3x.clone(), -&at_t2.d2x));

        // parallel frame through all pieces
        let mut frames = Vec::with_capacity(pieces.len());
        let mut e = orthonormal_frame(chart, &traj.first().q)?;
        for piece in &pieces {
            let fr = parallel_transport_from(chart, piece, 0, &e)?;
            e = fr[fr.len() - 1].clone();
            frames.push(fr);
        }

        // frame components of the targets at each site
        let mut site_coeffs = Vec::new();
        let mut expected = 0.0;
        for (ts, z, w) in &sites {
            let (pi, node) = locate(&cuts, &pieces, *ts);
            let q = &pieces[pi].states[node].q;
            let fr = &frames[pi][node];
            let zc: Vec<f64> = fr.iter().map(|ei| inner(chart, q, z, ei)).collect();
            let wc: Vec<f64> = fr.iter().map(|ei| inner(chart, q, w, ei)).collect();
            expected -= inner(chart, q, z, z) + inner(chart, q, w, w);
            site_coeffs.push((*ts, zc, wc));
        }
        let profile = |i: usize, t: f64| -> [f64; 5] {
            let mut out = [0.0; 5];
            for (ts, zc, wc) in &site_coeffs {
                let u = (t - ts) / delta;
                if u.abs() >= 1.0 {
                    continue;
                }
                let b = bump(u);
                let (phi, dphi, ddphi) = (b[0], b[1] / delta, b[2] / (delta * delta));
                let g = zc[i] + (t - ts) * wc[i];
                out[0] += phi * g;
                out[1] += dphi * g + phi * wc[i];
                out[2] += ddphi * g + 2.0 * dphi * wc[i];
            }
            out
        };
        let ys: Vec<FieldSamples> = pieces
            .iter()
            .zip(&frames)
            .map(|(piece, fr)| {
                let mut f = field_from_frame(fr, &piece.times(), profile);
                f.d3x = None;
                f.d4x = None;
                f
            })
            .collect();

        let form = |a: &[FieldSamples], b: &[FieldSamples]| -> Result<f64> {
            let triples: Vec<(&Trajectory, &FieldSamples, &FieldSamples)> =
                pieces.iter().zip(a).zip(b).map(|((p, x), y)| (p, x, y)).collect();
            index_form_pieces(model, &triples)
        };
        let i_xx = form(&xs, &xs)?;
        let i_xy = form(&xs, &ys)?;
        let i_yx = form(&ys, &xs)?;
        let i_yy = form(&ys, &ys)?;
        for eps in &opts.epsilons {
            let value = i_xx + eps * (i_xy + i_yx) + eps * eps * i_yy;
            smallest = smallest.min(value);
            if value < 0.0 {
                best = Some(NegativeDirection {
                    delta,
                    epsilon: *eps,
                    value,
                    i_xx,
                    i_xy,
                    i_yx,
                    i_yy,
                    expected_i_xy: expected,
                    pieces: pieces
                        .iter()
                        .cloned()
                        .zip(xs.iter().cloned())
                        .zip(ys.iter().cloned())
                        .map(|((p, x), y)| (p, x, y))
                        .collect(),
                });
                break;
            }
        }
        if best.is_some() {
            break;
        }
    }
    best.ok_or(Error::ConstructionFailure { best: smallest })
}

/// Piece and node index of a breakpoint time.
fn locate(cuts: &[f64], pieces: &[Trajectory], t: f64) -> (usize, usize) {
    for (i, w) in cuts.windows(2).enumerate() {
        if (w[0] - t).abs() <= 1e-12 * (1.0 + t.abs()) {
            return (i, 0);
        }
        if (w[1] - t).abs() <= 1e-12 * (1.0 + t.abs()) {
            return (i, pieces[i].intervals());
        }
    }
    let i = cuts.windows(2).position(|w| w[0] <= t && t <= w[1]).unwrap_or(0);
    (i, pieces[i].nearest_node(t))
}
