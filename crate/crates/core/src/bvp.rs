//! The bi-exponential map `(y, z) ↦ (q(t), q̇(t))` and a shooting solver for
//! the two-point problem with prescribed endpoint positions and velocities.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{action, integrate_ivp, CurveState, Trajectory, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::geometry::check_domain;
use crate::model::Model;
use crate::potentials::Potential;

/// Endpoint data `ξ = (q_a, v_a)`, `η = (q_b, v_b)` on `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub qa: Vec<f64>,
    pub va: Vec<f64>,
    pub qb: Vec<f64>,
    pub vb: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl BoundaryData {
    pub fn new(qa: &DVector<f64>, va: &DVector<f64>, qb: &DVector<f64>, vb: &DVector<f64>, a: f64, b: f64) -> Self {
        let v = |x: &DVector<f64>| x.iter().copied().collect();
        Self {
            qa: v(qa),
            va: v(va),
            qb: v(qb),
            vb: v(vb),
            a,
            b,
        }
    }

    /// Endpoint data read off a trajectory at nodes `k0 < k1`.
    pub fn from_trajectory(traj: &Trajectory, k0: usize, k1: usize) -> Self {
        let (s0, s1) = (&traj.states[k0], &traj.states[k1]);
        Self::new(&s0.q, &s0.v, &s1.q, &s1.v, s0.t, s1.t)
    }

    pub fn qa(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.qa)
    }
    pub fn va(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.va)
    }
    pub fn qb(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.qb)
    }
    pub fn vb(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.vb)
    }

    pub fn duration(&self) -> f64 {
        self.b - self.a
    }

    /// Largest absolute entry of the data.
    pub fn scale(&self) -> f64 {
        self.qa
            .iter()
            .chain(&self.va)
            .chain(&self.qb)
            .chain(&self.vb)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        let n = model.dim();
        for part in [&self.qa, &self.va, &self.qb, &self.vb] {
            if part.len() != n {
                return Err(Error::Dimension { expected: n, got: part.len() });
            }
            if part.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract("boundary data must be finite"));
            }
        }
        if !(self.b > self.a) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::contract("boundary interval needs b > a"));
        }
        check_domain(model.chart(), &self.qa())?;
        check_domain(model.chart(), &self.qb())?;
        Ok(())
    }
}

/// Integrator step used when none is given: `t / 2000`.
pub fn default_step(duration: f64) -> f64 {
    duration / DEFAULT_STEPS as f64
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::contract("bi-exponential time must be positive"));
    }
    Ok(())
}

/// `biexp^t_{(p,v)}(y, z)` with an explicit integrator step.
pub fn biexp_with_step(
    model: &Model,
    p: &DVector<f64>,
    v: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    t: f64,
    h: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_time(t)?;
    let traj = integrate_ivp(model, &CurveState::new(0.0, p.clone(), v.clone(), y.clone(), z.clone()), t, h)?;
    let last = traj.last();
    Ok((last.q.clone(), last.v.clone()))
}

pub fn biexp(
    model: &Model,
    p: &DVector<f64>,
    v: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    biexp_with_step(model, p, v, y, z, t, default_step(t))
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.len();
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(a);
    out.rows_mut(n, n).copy_from(b);
    out
}

fn split(s: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = s.len() / 2;
    (s.rows(0, n).into_owned(), s.rows(n, n).into_owned())
}

/// Central-difference Jacobian of `biexp` in `(y, z)` with step
/// `fd_step·(1 + ‖(y, z)‖)`.
pub fn biexp_jacobian_with(
    model: &Model,
    p: &DVector<f64>,
    v: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    t: f64,
    h: f64,
    fd_step: f64,
) -> Result<DMatrix<f64>> {
    check_time(t)?;
    let n = p.len();
    let s = stack(y, z);
    let step = fd_step * (1.0 + s.norm());
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for c in 0..2 * n {
        let mut sp = s.clone();
        let mut sm = s.clone();
        sp[c] += step;
        sm[c] -= step;
        let (yp, zp) = split(&sp);
        let (ym, zm) = split(&sm);
        let (qp, vp) = biexp_with_step(model, p, v, &yp, &zp, t, h)?;
        let (qm, vm) = biexp_with_step(model, p, v, &ym, &zm, t, h)?;
        let col = (stack(&qp, &vp) - stack(&qm, &vm)) / (2.0 * step);
        jac.set_column(c, &col);
    }
    Ok(jac)
}

pub fn biexp_jacobian(
    model: &Model,
    p: &DVector<f64>,
    v: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    t: f64,
) -> Result<DMatrix<f64>> {
    biexp_jacobian_with(model, p, v, y, z, t, default_step(t), 1e-5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingResult {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
    pub residual: f64,
    pub jacobian_condition: f64,
    pub iterations: usize,
    pub action: f64,
    pub residual_history: Vec<f64>,
}

impl ShootingResult {
    pub fn trajectory(&self) -> &Trajectory {
        self.trajectory.as_ref().expect("shooting result carries its trajectory")
    }

    pub fn yz(&self) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_column_slice(&self.y), DVector::from_column_slice(&self.z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Integrator step; defaults to `(b − a)/2000`.
    pub step: Option<f64>,
    pub max_iterations: usize,
    /// Relative residual tolerance (scaled by `1 + boundary scale`).
    pub tolerance: f64,
    pub max_backtracks: usize,
    /// Relative singular-value ratio below which the Jacobian counts as singular.
    pub critical_ratio: f64,
    /// Extra Newton steps taken after the tolerance is met, while they help.
    pub polish_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            step: None,
            max_iterations: 50,
            tolerance: 1e-8,
            max_backtracks: 20,
            critical_ratio: 1e-12,
            polish_steps: 2,
        }
    }
}

/// Hermite-cubic `(y, z)` in chart coordinates, ignoring `Γ` and `V`.
pub fn flat_seed(boundary: &BoundaryData) -> (DVector<f64>, DVector<f64>) {
    let t = boundary.duration();
    let dq = boundary.qb() - boundary.qa() - boundary.va() * t;
    let dv = boundary.vb() - boundary.va();
    let z = (&dv * (6.0 * t) - &dq * 12.0) / (t * t * t);
    let y = &dv / t - &z * (0.5 * t);
    (y, z)
}

struct Shooter<'a> {
    model: &'a Model,
    p: DVector<f64>,
    v: DVector<f64>,
    target: DVector<f64>,
    t: f64,
    h: f64,
}

impl Shooter<'_> {
    fn residual(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        let (y, z) = split(s);
        let (q, v) = biexp_with_step(self.model, &self.p, &self.v, &y, &z, self.t, self.h)?;
        Ok(stack(&q, &v) - &self.target)
    }

    fn jacobian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (y, z) = split(s);
        biexp_jacobian_with(self.model, &self.p, &self.v, &y, &z, self.t, self.h, 1e-5)
    }
}

fn condition(jac: &DMatrix<f64>) -> (f64, f64) {
    let sv = jac.clone().svd(false, false).singular_values;
    (sv.min(), sv.max())
}

/// Damped Newton shooting on `biexp(y, z) − (q_b, v_b)`.
pub fn solve_bvp(
    model: &Model,
    boundary: &BoundaryData,
    seed: Option<(DVector<f64>, DVector<f64>)>,
    opts: &SolverOptions,
) -> Result<ShootingResult> {
    boundary.validate(model)?;
    let t = boundary.duration();
    let h = opts.step.unwrap_or_else(|| default_step(t));
    let shooter = Shooter {
        model,
        p: boundary.qa(),
        v: boundary.va(),
        target: stack(&boundary.qb(), &boundary.vb()),
        t,
        h,
    };
    let (y0, z0) = seed.unwrap_or_else(|| flat_seed(boundary));
    let mut s = stack(&y0, &z0);
    let tol = opts.tolerance * (1.0 + boundary.scale());
    let mut f = shooter.residual(&s)?;
    let mut norm = f.norm();
    let mut history = vec![norm];
    let mut iterations = 0;
    let mut polish = 0;
    loop {
        if norm <= tol {
            if polish >= opts.polish_steps || norm == 0.0 {
                break;
            }
        } else if iterations >= opts.max_iterations {
            let (y, z) = split(&s);
            return Err(Error::NonConvergence {
                iterations,
                residual: norm,
                best: y.iter().chain(z.iter()).copied().collect(),
            });
        }
        let jac = shooter.jacobian(&s)?;
        let (smin, smax) = condition(&jac);
        if !(smin >= opts.critical_ratio * smax) {
            return Err(Error::CriticalBiexp {
                ratio: smin / smax,
                at: s.iter().copied().collect(),
            });
        }
        let delta = jac
            .clone()
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| Error::numerical("singular shooting Jacobian"))?;
        let polishing = norm <= tol;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = &s + &delta * lambda;
            match shooter.residual(&trial) {
                Ok(ft) => {
                    let nt = ft.norm();
                    if nt * nt <= (1.0 - 1e-4 * lambda) * norm * norm {
                        accepted = Some((trial, ft, nt));
                        break;
                    }
                }
                Err(e) if e.is_domain() => {}
                Err(e) => return Err(e),
            }
            if polishing {
                break;
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((trial, ft, nt)) => {
                s = trial;
                f = ft;
                norm = nt;
                history.push(norm);
                iterations += 1;
                if polishing {
                    polish += 1;
                }
            }
            None if polishing => break,
            None => {
                let (y, z) = split(&s);
                return Err(Error::NonConvergence {
                    iterations,
                    residual: norm,
                    best: y.iter().chain(z.iter()).copied().collect(),
                });
            }
        }
    }
    let (y, z) = split(&s);
    let jac = shooter.jacobian(&s)?;
    let (smin, smax) = condition(&jac);
    if !(smin >= opts.critical_ratio * smax) {
        return Err(Error::CriticalBiexp {
            ratio: smin / smax,
            at: s.iter().copied().collect(),
        });
    }
    let traj = integrate_ivp(model, &CurveState::new(boundary.a, boundary.qa(), boundary.va(), y.clone(), z.clone()), t, h)?;
    let j = action(model, &traj)?;
    Ok(ShootingResult {
        y: y.iter().copied().collect(),
        z: z.iter().copied().collect(),
        trajectory: Some(traj),
        residual: norm,
        jacobian_condition: smax / smin,
        iterations,
        action: j,
        residual_history: history,
    })
}

/// Solves along `V_λ` for each `λ`, warm-starting from the previous
/// solution. The grid must start at `λ = 0`.
pub fn continuation_sweep<F>(
    model: &Model,
    family: F,
    boundary: &BoundaryData,
    lambdas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<(f64, ShootingResult)>>
where
    F: Fn(f64) -> Potential,
{
    match lambdas.first() {
        Some(l) if *l == 0.0 => {}
        _ => return Err(Error::contract("continuation grid must start at 0")),
    }
    let mut out: Vec<(f64, ShootingResult)> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let seed = out.last().map(|(_, r)| r.yz());
        let run = model
            .with_potential(family(lambda))
            .and_then(|m| solve_bvp(&m, boundary, seed, opts));
        match run {
            Ok(r) => out.push((lambda, r)),
            Err(e) => {
                return Err(Error::Sweep {
                    lambda,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

/// `λ ↦ λ·V`.
pub fn scaled_family(target: &Potential) -> impl Fn(f64) -> Potential + '_ {
    move |lambda| target.scaled(lambda)
}

/// Solves from the flat seed and `count − 1` random perturbations of it,
/// returning the distinct solutions ranked by action.
pub fn multi_seed(
    model: &Model,
    boundary: &BoundaryData,
    count: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<Vec<ShootingResult>> {
    boundary.validate(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y0, z0) = flat_seed(boundary);
    let base = stack(&y0, &z0);
    let spread = 1.0 + base.amax();
    let mut found = Vec::new();
    let mut last_err = None;
    for k in 0..count.max(1) {
        let s = if k == 0 {
            base.clone()
        } else {
            base.map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + spread * e
            })
        };
        let (y, z) = split(&s);
        match solve_bvp(model, boundary, Some((y, z)), opts) {
            Ok(r) => found.push(r),
            Err(e) => last_err = Some(e),
        }
    }
    if found.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::numerical("no seeds were run")));
    }
    let key = |r: &ShootingResult| -> Vec<f64> { r.y.iter().chain(&r.z).copied().collect() };
    found.sort_by(|a, b| {
        key(a)
            .iter()
            .zip(key(b).iter())
            .map(|(x, y)| x.partial_cmp(y).unwrap())
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut distinct: Vec<ShootingResult> = Vec::new();
    for r in found {
        let dup = distinct.iter().any(|d| {
            key(d)
                .iter()
                .zip(key(&r).iter())
                .all(|(x, y)| (x - y).abs() <= 1e-5)
        });
        if !dup {
            distinct.push(r);
        }
    }
    distinct.sort_by(|a, b| a.action.partial_cmp(&b.action).unwrap());
    Ok(distinct)
}
