//! Modified cubic polynomials: the critical points of
//! `J(q) = ∫ ½‖Dq̇/dt‖² + V(q) dt`, solutions of
//! `D³q̇/dt³ + R(Dq̇/dt, q̇)q̇ + grad V(q) = 0`.
//!
//! States carry the position, the coordinate velocity and the covariant
//! acceleration and jerk. The first-order system integrated is
//!
//! ```text
//! dq/dt = v
//! dv/dt = a − Γ(v, v)
//! da/dt = j − Γ(v, a)
//! dj/dt = −R(a, v)v − grad V − Γ(v, j)
//! ```

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{check_domain, exp_map, inner, Chart};
use crate::model::Model;
use crate::numerics::{grid_derivatives, quintic_hermite, rk4_step, simpson, simpson_weights};
use crate::potentials::Potential;

/// Default number of integrator steps over a planning interval.
pub const DEFAULT_STEPS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveState {
    pub t: f64,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    /// Covariant acceleration `Dq̇/dt`.
    pub a: DVector<f64>,
    /// Covariant jerk `D²q̇/dt²`.
    pub j: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateRate {
    pub dq: DVector<f64>,
    pub dv: DVector<f64>,
    pub da: DVector<f64>,
    pub dj: DVector<f64>,
}

impl CurveState {
    pub fn new(t: f64, q: DVector<f64>, v: DVector<f64>, a: DVector<f64>, j: DVector<f64>) -> Self {
        Self { t, q, v, a, j }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn pack(&self) -> DVector<f64> {
        let n = self.dim();
        let mut y = DVector::zeros(4 * n);
        y.rows_mut(0, n).copy_from(&self.q);
        y.rows_mut(n, n).copy_from(&self.v);
        y.rows_mut(2 * n, n).copy_from(&self.a);
        y.rows_mut(3 * n, n).copy_from(&self.j);
        y
    }

    pub fn unpack(t: f64, y: &DVector<f64>) -> Self {
        let n = y.len() / 4;
        Self {
            t,
            q: y.rows(0, n).into_owned(),
            v: y.rows(n, n).into_owned(),
            a: y.rows(2 * n, n).into_owned(),
            j: y.rows(3 * n, n).into_owned(),
        }
    }

    fn validate(&self, chart: &dyn Chart) -> Result<()> {
        check_domain(chart, &self.q)?;
        for part in [&self.v, &self.a, &self.j] {
            if part.len() != chart.dim() {
                return Err(Error::Dimension {
                    expected: chart.dim(),
                    got: part.len(),
                });
            }
            if part.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite { time: self.t });
            }
        }
        Ok(())
    }
}

/// Packed right-hand side; `t` is only used to report escapes.
pub(crate) fn rhs_packed(model: &Model, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
    let chart = model.chart();
    let n = chart.dim();
    let q = y.rows(0, n).into_owned();
    if !chart.in_domain(&q) {
        return Err(Error::ChartEscape { time: t });
    }
    let v = y.rows(n, n).into_owned();
    let a = y.rows(2 * n, n).into_owned();
    let j = y.rows(3 * n, n).into_owned();
    let gamma = chart.christoffel(&q);
    let gv = gamma.along(&v);
    let grad = model.potential().gradient(chart, &q)?;
    let mut out = DVector::zeros(4 * n);
    out.rows_mut(0, n).copy_from(&v);
    out.rows_mut(n, n).copy_from(&(&a - &gv * &v));
    out.rows_mut(2 * n, n).copy_from(&(&j - &gv * &a));
    let dj = -chart.curvature(&q, &a, &v, &v) - grad - &gv * &j;
    out.rows_mut(3 * n, n).copy_from(&dj);
    Ok(out)
}

pub fn ode_rhs(model: &Model, state: &CurveState) -> Result<StateRate> {
    state.validate(model.chart())?;
    let d = rhs_packed(model, state.t, &state.pack())?;
    let n = state.dim();
    Ok(StateRate {
        dq: d.rows(0, n).into_owned(),
        dv: d.rows(n, n).into_owned(),
        da: d.rows(2 * n, n).into_owned(),
        dj: d.rows(3 * n, n).into_owned(),
    })
}

/// A modified cubic sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<CurveState>,
    pub step: f64,
    pub chart: String,
    pub potential: Potential,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn intervals(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn start_time(&self) -> f64 {
        self.states[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.states[self.states.len() - 1].t
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    pub fn first(&self) -> &CurveState {
        &self.states[0]
    }

    pub fn last(&self) -> &CurveState {
        &self.states[self.states.len() - 1]
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn positions(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(|s| s.q.clone()).collect()
    }

    /// Index of the grid node nearest to `t`.
    /// Sub-trajectory on nodes `k0..=k1`.
    pub fn slice(&self, k0: usize, k1: usize) -> Trajectory {
        Trajectory {
            states: self.states[k0..=k1].to_vec(),
            step: self.step,
            chart: self.chart.clone(),
            potential: self.potential.clone(),
        }
    }

    pub fn nearest_node(&self, t: f64) -> usize {
        let k = ((t - self.start_time()) / self.step).round();
        (k.max(0.0) as usize).min(self.intervals())
    }

    /// Position and velocity at an arbitrary time, by quintic Hermite
    /// interpolation of `q`, `q̇` and `q̈ = a − Γ(v, v)`.
    pub fn sample(&self, chart: &dyn Chart, t: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let (t0, t1) = (self.start_time(), self.end_time());
        let slack = 1e-9 * self.step;
        if t < t0 - slack || t > t1 + slack {
            return Err(Error::contract(format!("time {t} outside [{t0}, {t1}]")));
        }
        let u = ((t - t0) / self.step).clamp(0.0, self.intervals() as f64);
        let k = (u.floor() as usize).min(self.intervals().saturating_sub(1));
        let s = u - k as f64;
        let (a, b) = (&self.states[k], &self.states[k + 1]);
        let acc_a = &a.a - chart.christoffel(&a.q).contract(&a.v, &a.v);
        let acc_b = &b.a - chart.christoffel(&b.q).contract(&b.v, &b.v);
        Ok(quintic_hermite(s, self.step, &a.q, &a.v, &acc_a, &b.q, &b.v, &acc_b))
    }

    /// CSV with columns `t, q.., v.., a.., j..` and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, CurveState::dim);
        let mut out = String::from("t");
        for name in ["q", "v", "a", "j"] {
            for i in 0..n {
                let _ = write!(out, ",{name}{i}");
            }
        }
        out.push('\n');
        for s in &self.states {
            let _ = write!(out, "{:.16e}", s.t);
            for part in [&s.q, &s.v, &s.a, &s.j] {
                for c in part.iter() {
                    let _ = write!(out, ",{c:.16e}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV written by [`Trajectory::to_csv`].
    pub fn from_csv(text: &str, chart: &str, potential: Potential) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Config("empty trajectory file".into()))?;
        let cols = header.split(',').count();
        if cols < 5 || (cols - 1) % 4 != 0 || !header.starts_with('t') {
            return Err(Error::Config(format!("unexpected trajectory header {header:?}")));
        }
        let n = (cols - 1) / 4;
        let mut states = Vec::new();
        for (row, line) in lines.enumerate() {
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Config(format!("trajectory row {}: {e}", row + 2)))?;
            if vals.len() != cols {
                return Err(Error::Config(format!("trajectory row {} has {} columns", row + 2, vals.len())));
            }
            let part = |k: usize| DVector::from_column_slice(&vals[1 + k * n..1 + (k + 1) * n]);
            states.push(CurveState::new(vals[0], part(0), part(1), part(2), part(3)));
        }
        if states.len() < 2 {
            return Err(Error::Config("trajectory needs at least two rows".into()));
        }
        let step = (states[states.len() - 1].t - states[0].t) / (states.len() - 1) as f64;
        for w in states.windows(2) {
            if ((w[1].t - w[0].t) - step).abs() > 1e-9 * step.abs().max(1.0) {
                return Err(Error::Config("trajectory grid is not uniform".into()));
            }
        }
        Ok(Self {
            states,
            step,
            chart: chart.to_string(),
            potential,
        })
    }
}

/// Takes `steps` RK4 steps of signed size `h` from `initial`; states are
/// returned in integration order.
pub fn integrate_steps(model: &Model, initial: &CurveState, h: f64, steps: usize) -> Result<Vec<CurveState>> {
    initial.validate(model.chart())?;
    let mut y = initial.pack();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(initial.clone());
    let mut f = |t: f64, y: &DVector<f64>| rhs_packed(model, t, y);
    for k in 0..steps {
        let t = initial.t + k as f64 * h;
        y = rk4_step(&mut f, t, &y, h)?;
        let t_next = initial.t + (k + 1) as f64 * h;
        let s = CurveState::unpack(t_next, &y);
        if !model.chart().in_domain(&s.q) {
            return Err(Error::ChartEscape { time: t_next });
        }
        out.push(s);
    }
    Ok(out)
}

/// Number of uniform steps used for a span `duration` with nominal step `h`.
pub fn step_count(duration: f64, h: f64) -> usize {
    ((duration / h).round() as usize).max(1)
}

/// Integrates the modified cubic ODE over `[t0, t0 + duration]` with the
/// classical RK4 scheme. The step is adjusted to `duration / round(duration / h)`.
pub fn integrate_ivp(model: &Model, initial: &CurveState, duration: f64, h: f64) -> Result<Trajectory> {
    if !(duration > 0.0 && duration.is_finite()) || !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract("integration needs T > 0 and h > 0"));
    }
    let steps = step_count(duration, h);
    let h_eff = duration / steps as f64;
    let states = integrate_steps(model, initial, h_eff, steps)?;
    Ok(Trajectory {
        states,
        step: h_eff,
        chart: model.chart().name(),
        potential: model.potential().clone(),
    })
}

/// Integrates backward from `final_state` over `duration`, returning the
/// trajectory in increasing time order.
pub fn integrate_ivp_backward(model: &Model, final_state: &CurveState, duration: f64, h: f64) -> Result<Trajectory> {
    if !(duration > 0.0 && duration.is_finite()) || !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract("integration needs T > 0 and h > 0"));
    }
    let steps = step_count(duration, h);
    let h_eff = duration / steps as f64;
    let mut states = integrate_steps(model, final_state, -h_eff, steps)?;
    states.reverse();
    Ok(Trajectory {
        states,
        step: h_eff,
        chart: model.chart().name(),
        potential: model.potential().clone(),
    })
}

/// `J` by composite Simpson quadrature on the trajectory grid.
pub fn action(model: &Model, traj: &Trajectory) -> Result<f64> {
    let chart = model.chart();
    let mut vals = Vec::with_capacity(traj.len());
    for s in &traj.states {
        check_domain(chart, &s.q)?;
        let v = model.potential().value(chart, &s.q)?;
        vals.push(0.5 * inner(chart, &s.q, &s.a, &s.a) + v);
    }
    Ok(simpson(&vals, traj.step).max(0.0))
}

/// `J` of a curve known only through samples on a uniform grid, with
/// velocity and acceleration from 7-point finite differences.
pub fn sampled_action(model: &Model, samples: &[DVector<f64>], h: f64) -> Result<f64> {
    let chart = model.chart();
    let (d1, d2) = grid_derivatives(samples, h)?;
    let w = simpson_weights(samples.len() - 1, h);
    let mut total = 0.0;
    for k in 0..samples.len() {
        let q = &samples[k];
        check_domain(chart, q)?;
        let acc = &d2[k] + chart.christoffel(q).contract(&d1[k], &d1[k]);
        total += w[k] * (0.5 * inner(chart, q, &acc, &acc) + model.potential().value(chart, q)?);
    }
    Ok(total)
}

/// Covariant derivative `DW/dt = Ẇ + Γ(q̇, W)` of a field sampled on the
/// trajectory grid.
pub fn covariant_derivative_samples(
    chart: &dyn Chart,
    traj: &Trajectory,
    field: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    if field.len() != traj.len() {
        return Err(Error::contract("field samples do not match the trajectory grid"));
    }
    let (d1, _) = grid_derivatives(field, traj.step)?;
    Ok(traj
        .states
        .iter()
        .zip(d1)
        .zip(field)
        .map(|((s, dw), w)| dw + chart.christoffel(&s.q).contract(&s.v, w))
        .collect())
}

/// Checks `W = DW/dt = 0` at both ends of the trajectory.
pub fn check_admissible(chart: &dyn Chart, traj: &Trajectory, field: &[DVector<f64>]) -> Result<()> {
    let scale = 1.0 + field.iter().fold(0.0f64, |m, w| m.max(w.amax()));
    let dfield = covariant_derivative_samples(chart, traj, field)?;
    let last = field.len() - 1;
    let pos_tol = 1e-10 * scale;
    let vel_tol = 1e-6 * scale * (1.0 / traj.duration()).max(1.0);
    if field[0].amax() > pos_tol || field[last].amax() > pos_tol {
        return Err(Error::contract("variation field does not vanish at the endpoints"));
    }
    if dfield[0].amax() > vel_tol || dfield[last].amax() > vel_tol {
        return Err(Error::contract(
            "covariant derivative of the variation field does not vanish at the endpoints",
        ));
    }
    Ok(())
}

/// Pointwise `exp_{q(t)}(W(t))` on the trajectory grid.
pub fn displaced_curve(chart: &dyn Chart, traj: &Trajectory, field: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    traj.states
        .iter()
        .zip(field)
        .map(|(s, w)| exp_map(chart, &s.q, w))
        .collect()
}

/// `dJ(q)W` by a central difference over the variation `exp_q(εW)`,
/// with `ε = 1e-5 / max(1, ‖W‖∞)`.
pub fn first_variation(model: &Model, traj: &Trajectory, field: &[DVector<f64>]) -> Result<f64> {
    let chart = model.chart();
    if field.len() != traj.len() {
        return Err(Error::contract("variation field does not match the trajectory grid"));
    }
    let scale = field.iter().fold(0.0f64, |m, w| m.max(w.amax()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    check_admissible(chart, traj, field)?;
    let eps = 1e-5 / scale.max(1.0);
    let plus: Vec<DVector<f64>> = field.iter().map(|w| w * eps).collect();
    let minus: Vec<DVector<f64>> = field.iter().map(|w| w * -eps).collect();
    let jp = sampled_action(model, &displaced_curve(chart, traj, &plus)?, traj.step)?;
    let jm = sampled_action(model, &displaced_curve(chart, traj, &minus)?, traj.step)?;
    Ok((jp - jm) / (2.0 * eps))
}

/// Residual of `D³q̇ + R(Dq̇, q̇)q̇ + grad V` along a trajectory, with the
/// covariant derivative of `j` taken by finite differences.
pub fn ode_residual(model: &Model, traj: &Trajectory) -> Result<f64> {
    let chart = model.chart();
    let js: Vec<DVector<f64>> = traj.states.iter().map(|s| s.j.clone()).collect();
    let dj = covariant_derivative_samples(chart, traj, &js)?;
    let mut worst = 0.0f64;
    for (s, d) in traj.states.iter().zip(dj) {
        let r = d + chart.curvature(&s.q, &s.a, &s.v, &s.v) + model.potential().gradient(chart, &s.q)?;
        worst = worst.max(r.amax());
    }
    Ok(worst)
}

/// Sup-norm distance between the positions of two trajectories on the same grid.
pub fn position_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract("trajectories have different grids"));
    }
    Ok(a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (&x.q - &y.q).amax())
        .fold(0.0, f64::max))
}

/// Stacked sample matrix (rows = nodes) of one component family, for export.
pub fn position_matrix(traj: &Trajectory) -> DMatrix<f64> {
    let n = traj.states[0].dim();
    DMatrix::from_fn(traj.len(), n, |k, i| traj.states[k].q[i])
}
