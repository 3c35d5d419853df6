//! Brute-force checks independent of the shooting machinery: direct
//! minimization of a discretized action over paths, and re-solve probes of
//! solved trajectories.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvp::{solve_bvp, BoundaryData, SolverOptions};
use crate::dynamics::{integrate_steps, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::check_domain;
use crate::model::Model;

/// Nodes `q_0..q_N` of a path on a uniform grid over `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub a: f64,
    pub b: f64,
    pub nodes: Vec<DVector<f64>>,
}

impl DiscretePath {
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn step(&self) -> f64 {
        (self.b - self.a) / self.intervals() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.nodes.len()).map(|k| self.a + k as f64 * h).collect()
    }

    /// Samples a trajectory at `N + 1` uniform times.
    pub fn from_trajectory(model: &Model, traj: &Trajectory, intervals: usize) -> Result<Self> {
        let (a, b) = (traj.start_time(), traj.end_time());
        let h = (b - a) / intervals as f64;
        let nodes = (0..=intervals)
            .map(|k| Ok(traj.sample(model.chart(), a + k as f64 * h)?.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { a, b, nodes })
    }

    /// The Hermite cubic of the boundary data in chart coordinates.
    pub fn hermite(boundary: &BoundaryData, intervals: usize) -> Self {
        let (qa, va, qb, vb) = (boundary.qa(), boundary.va(), boundary.qb(), boundary.vb());
        let t = boundary.duration();
        let nodes = (0..=intervals)
            .map(|k| {
                let s = k as f64 / intervals as f64;
                let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
                let h10 = s.powi(3) - 2.0 * s * s + s;
                let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
                let h11 = s.powi(3) - s * s;
                &qa * h00 + &va * (h10 * t) + &qb * h01 + &vb * (h11 * t)
            })
            .collect();
        Self {
            a: boundary.a,
            b: boundary.b,
            nodes,
        }
    }

    /// Sets `q_0, q_N` and the eliminated `q_1, q_{N−1}` from the boundary data.
    pub fn impose(&mut self, boundary: &BoundaryData) {
        let n = self.intervals();
        let h = self.step();
        self.nodes[0] = boundary.qa();
        self.nodes[n] = boundary.qb();
        self.nodes[1] = (boundary.va() * (2.0 * h) + &self.nodes[0] * 3.0 + &self.nodes[2]) / 4.0;
        self.nodes[n - 1] = (boundary.vb() * (-2.0 * h) + &self.nodes[n] * 3.0 + &self.nodes[n - 2]) / 4.0;
    }
}

/// Velocity and second-difference stencils at node `k`.
fn stencil(nodes: &[DVector<f64>], k: usize, h: f64) -> (DVector<f64>, DVector<f64>) {
    let last = nodes.len() - 1;
    if k == 0 {
        let v = (&nodes[1] * 4.0 - &nodes[0] * 3.0 - &nodes[2]) / (2.0 * h);
        let d2 = (&nodes[0] * 2.0 - &nodes[1] * 5.0 + &nodes[2] * 4.0 - &nodes[3]) / (h * h);
        (v, d2)
    } else if k == last {
        let v = (&nodes[last] * 3.0 - &nodes[last - 1] * 4.0 + &nodes[last - 2]) / (2.0 * h);
        let d2 = (&nodes[last] * 2.0 - &nodes[last - 1] * 5.0 + &nodes[last - 2] * 4.0 - &nodes[last - 3]) / (h * h);
        (v, d2)
    } else {
        let v = (&nodes[k + 1] - &nodes[k - 1]) / (2.0 * h);
        let d2 = (&nodes[k + 1] - &nodes[k] * 2.0 + &nodes[k - 1]) / (h * h);
        (v, d2)
    }
}

fn check_path(model: &Model, path: &DiscretePath) -> Result<()> {
    if path.nodes.len() < 7 {
        return Err(Error::contract("discrete path needs N >= 6"));
    }
    if !(path.b > path.a) {
        return Err(Error::contract("discrete path needs b > a"));
    }
    for q in &path.nodes {
        check_domain(model.chart(), q)?;
    }
    Ok(())
}

/// Trapezoid sum of `½‖a_k‖² + V(q_k)` with `a_k` the second difference
/// plus `Γ(v_k, v_k)`.
pub fn discrete_action(model: &Model, path: &DiscretePath) -> Result<f64> {
    check_path(model, path)?;
    let chart = model.chart();
    let h = path.step();
    let last = path.intervals();
    let mut total = 0.0;
    for k in 0..=last {
        let q = &path.nodes[k];
        let (v, d2) = stencil(&path.nodes, k, h);
        let acc = d2 + chart.christoffel(q).contract(&v, &v);
        let w = if k == 0 || k == last { 0.5 * h } else { h };
        total += w * (0.5 * acc.dot(&(chart.metric(q) * &acc)) + model.potential().value(chart, q)?);
    }
    Ok(total)
}

/// Velocity and second-difference stencil coefficients at node `k`:
/// `(offsets, velocity weights, second-difference weights)`.
fn stencil_coeffs(k: usize, last: usize, h: f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let (i2, i1) = (1.0 / (h * h), 1.0 / (2.0 * h));
    if k == 0 {
        (vec![0, 1, 2, 3], vec![-3.0 * i1, 4.0 * i1, -i1, 0.0], vec![2.0 * i2, -5.0 * i2, 4.0 * i2, -i2])
    } else if k == last {
        (
            vec![last, last - 1, last - 2, last - 3],
            vec![3.0 * i1, -4.0 * i1, i1, 0.0],
            vec![2.0 * i2, -5.0 * i2, 4.0 * i2, -i2],
        )
    } else {
        (vec![k - 1, k, k + 1], vec![-i1, 0.0, i1], vec![i2, -2.0 * i2, i2])
    }
}

/// Gradient of the discrete action with respect to every node.
fn full_gradient(model: &Model, path: &DiscretePath) -> Result<Vec<DVector<f64>>> {
    let chart = model.chart();
    let n = chart.dim();
    let h = path.step();
    let last = path.intervals();
    let mut grad = vec![DVector::zeros(n); last + 1];
    for k in 0..=last {
        let q = &path.nodes[k];
        let (v, d2) = stencil(&path.nodes, k, h);
        let gamma = chart.christoffel(q);
        let acc = d2 + gamma.contract(&v, &v);
        let g = chart.metric(q);
        let w = if k == 0 || k == last { 0.5 * h } else { h };
        let e = &g * &acc;
        // through the velocity (Γ(v, v) is quadratic in v)
        let dv = gamma.along(&v).transpose() * &e * 2.0;
        let (idx, cv, c2) = stencil_coeffs(k, last, h);
        for ((&j, a), b) in idx.iter().zip(&cv).zip(&c2) {
            grad[j] += (&e * *b + &dv * *a) * w;
        }
        // explicit dependence on q_k through Γ, g and V
        let dgamma = chart.christoffel_derivative(q);
        let dg = chart.metric_derivative(q);
        let (_, dvpot, _) = model.potential().jet(chart, q)?;
        for l in 0..n {
            let dacc = dgamma[l].contract(&v, &v);
            grad[k][l] += w * (e.dot(&dacc) + 0.5 * acc.dot(&(&dg[l] * &acc)) + dvpot[l]);
        }
    }
    Ok(grad)
}

/// Gradient with respect to the free nodes `q_2..q_{N−2}`, stacked.
fn free_gradient(model: &Model, path: &DiscretePath) -> Result<DVector<f64>> {
    let full = full_gradient(model, path)?;
    let n = model.dim();
    let last = path.intervals();
    let free = last - 3;
    let mut out = DVector::zeros(free * n);
    for m in 0..free {
        let k = m + 2;
        let mut gk = full[k].clone();
        if k == 2 {
            gk += &full[1] * 0.25;
        }
        if k == last - 2 {
            gk += &full[last - 1] * 0.25;
        }
        out.rows_mut(m * n, n).copy_from(&gk);
    }
    Ok(out)
}

fn set_free(path: &mut DiscretePath, boundary: &BoundaryData, x: &DVector<f64>, n: usize) {
    for m in 0..path.intervals() - 3 {
        path.nodes[m + 2] = x.rows(m * n, n).into_owned();
    }
    path.impose(boundary);
}

fn get_free(path: &DiscretePath, n: usize) -> DVector<f64> {
    let free = path.intervals() - 3;
    let mut x = DVector::zeros(free * n);
    for m in 0..free {
        x.rows_mut(m * n, n).copy_from(&path.nodes[m + 2]);
    }
    x
}

/// Hessian of the flat action `h·Σ ½|second difference|²` in the free
/// nodes, one scalar matrix shared by all components.
fn flat_hessian(intervals: usize, h: f64) -> DMatrix<f64> {
    let last = intervals;
    let free = last - 3;
    // d2_k = Σ_j D[k][j] q_j with q_1, q_{N−1} eliminated (affine parts dropped)
    let mut d = DMatrix::<f64>::zeros(last + 1, free);
    let col = |j: usize| -> Vec<(usize, f64)> {
        if j == 1 {
            vec![(0, 0.25)]
        } else if j == last - 1 {
            vec![(free - 1, 0.25)]
        } else if j >= 2 && j <= last - 2 {
            vec![(j - 2, 1.0)]
        } else {
            vec![]
        }
    };
    for k in 0..=last {
        let (idx, _, c2) = stencil_coeffs(k, last, h);
        for (&j, &c) in idx.iter().zip(&c2) {
            for (m, f) in col(j) {
                d[(k, m)] += c * f;
            }
        }
    }
    let mut w = DVector::from_element(last + 1, h);
    w[0] = 0.5 * h;
    w[last] = 0.5 * h;
    let dw = DMatrix::from_fn(last + 1, free, |r, c| d[(r, c)] * w[r]);
    d.transpose() * dw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentOptions {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-7,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMinimum {
    pub path: DiscretePath,
    pub action: f64,
    pub gradient_norm: f64,
    /// Stopping tolerance actually used: the requested one, raised to the
    /// roundoff floor of the discrete gradient when that is larger.
    pub tolerance: f64,
    pub iterations: usize,
}

/// Roundoff level of the free-node gradient: second differences lose
/// `ε·|q|/h²` and the gradient applies them once more, weighted by `h`.
fn gradient_floor(path: &DiscretePath) -> f64 {
    let h = path.step();
    let scale = path.nodes.iter().fold(1.0f64, |m, q| m.max(q.amax()));
    32.0 * f64::EPSILON * scale / (h * h * h)
}

type Step = Option<(DVector<f64>, DiscretePath, f64, Option<DVector<f64>>)>;

fn trial_path(path: &DiscretePath, boundary: &BoundaryData, x: &DVector<f64>, n: usize) -> DiscretePath {
    let mut trial = path.clone();
    set_free(&mut trial, boundary, x, n);
    trial
}

/// Backtracking on the action with the Armijo condition.
fn armijo_search(
    model: &Model,
    boundary: &BoundaryData,
    path: &DiscretePath,
    x: &DVector<f64>,
    d: &DVector<f64>,
    f: f64,
    slope: f64,
) -> Result<Step> {
    let mut alpha = 1.0;
    for _ in 0..60 {
        let xt = x + d * alpha;
        let trial = trial_path(path, boundary, &xt, model.dim());
        match discrete_action(model, &trial) {
            Ok(ft) if ft <= f + 1e-4 * alpha * slope => return Ok(Some((xt, trial, ft, None))),
            Ok(_) => {}
            Err(e) if e.is_domain() => {}
            Err(e) => return Err(e),
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// Near the minimum the predicted decrease drops below the roundoff of the
/// action, so the step is chosen from the directional derivative alone:
/// secant iterations until `|φ'(α)| ≤ 0.1|φ'(0)|`.
fn slope_search(
    model: &Model,
    boundary: &BoundaryData,
    path: &DiscretePath,
    x: &DVector<f64>,
    d: &DVector<f64>,
    slope: f64,
) -> Result<Step> {
    let n = model.dim();
    let eval = |alpha: f64| -> Result<Option<(DVector<f64>, DiscretePath, f64, DVector<f64>, f64)>> {
        let xt = x + d * alpha;
        let trial = trial_path(path, boundary, &xt, n);
        match discrete_action(model, &trial) {
            Ok(ft) => {
                let gt = free_gradient(model, &trial)?;
                let dphi = gt.dot(d);
                Ok(Some((xt, trial, ft, gt, dphi)))
            }
            Err(e) if e.is_domain() => Ok(None),
            Err(e) => Err(e),
        }
    };
    let (mut a0, mut s0) = (0.0, slope);
    let mut a1 = 1.0;
    let mut cur = eval(a1)?;
    while cur.is_none() && a1 > 1e-12 {
        a1 *= 0.5;
        cur = eval(a1)?;
    }
    for _ in 0..8 {
        let Some((xt, trial, ft, gt, s1)) = cur else {
            return Ok(None);
        };
        if s1.abs() <= 0.1 * slope.abs() {
            return Ok(Some((xt, trial, ft, Some(gt))));
        }
        let next = if s1 != s0 { a1 - s1 * (a1 - a0) / (s1 - s0) } else { 2.0 * a1 };
        let next = if next.is_finite() && next > 0.0 { next.clamp(0.1 * a1, 10.0 * a1.max(1.0)) } else { 0.5 * a1 };
        (a0, s0) = (a1, s1);
        a1 = next;
        cur = eval(a1)?;
    }
    // settle for any step that still points downhill
    Ok(cur.filter(|c| c.4 < 0.0 || c.4.abs() <= 0.5 * slope.abs()).map(|(xt, trial, ft, gt, _)| (xt, trial, ft, Some(gt))))
}

/// Nonlinear conjugate gradients (Polak-Ribière+) with Armijo backtracking,
/// preconditioned by the flat biharmonic Hessian.
pub fn minimize_discrete(
    model: &Model,
    boundary: &BoundaryData,
    intervals: usize,
    seed: Option<&DiscretePath>,
    opts: &DescentOptions,
) -> Result<DiscreteMinimum> {
    boundary.validate(model)?;
    if intervals < 6 {
        return Err(Error::contract("discrete path needs N >= 6"));
    }
    let n = model.dim();
    let mut path = match seed {
        Some(p) if p.intervals() == intervals => p.clone(),
        Some(_) => return Err(Error::contract("seed path has a different node count")),
        None => DiscretePath::hermite(boundary, intervals),
    };
    path.a = boundary.a;
    path.b = boundary.b;
    path.impose(boundary);
    let h = path.step();
    let pre = flat_hessian(intervals, h)
        .cholesky()
        .ok_or_else(|| Error::numerical("flat preconditioner is not positive definite"))?;
    let precondition = |g: &DVector<f64>| -> DVector<f64> {
        let free = intervals - 3;
        let mut out = DVector::zeros(g.len());
        for c in 0..n {
            let gc = DVector::from_fn(free, |m, _| g[m * n + c]);
            let sc = pre.solve(&gc);
            for m in 0..free {
                out[m * n + c] = sc[m];
            }
        }
        out
    };
    let mut x = get_free(&path, n);
    let mut f = discrete_action(model, &path)?;
    let mut g = free_gradient(model, &path)?;
    let mut z = precondition(&g);
    let mut d = -&z;
    let mut iterations = 0;
    let mut stalled = 0;
    let mut best_gradient = f64::INFINITY;
    loop {
        let gnorm = g.amax();
        let tolerance = opts.gradient_tolerance.max(gradient_floor(&path));
        if gnorm <= tolerance {
            return Ok(DiscreteMinimum {
                path,
                action: f,
                gradient_norm: gnorm,
                tolerance,
                iterations,
            });
        }
        if iterations >= opts.max_iterations || stalled >= 5000 {
            return Err(Error::DescentNonConvergence {
                iterations,
                gradient: gnorm,
                best: path.nodes.iter().map(|q| q.iter().copied().collect()).collect(),
            });
        }
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            d = -&z;
            slope = g.dot(&d);
        }
        let accepted = if slope.abs() >= 1e4 * f64::EPSILON * f.abs().max(f64::MIN_POSITIVE) {
            armijo_search(model, boundary, &path, &x, &d, f, slope)?
        } else {
            slope_search(model, boundary, &path, &x, &d, slope)?
        };
        let Some((xt, trial, ft, gt)) = accepted else {
            return Err(Error::DescentNonConvergence {
                iterations,
                gradient: gnorm,
                best: path.nodes.iter().map(|q| q.iter().copied().collect()).collect(),
            });
        };
        let g_new = match gt {
            Some(gt) => gt,
            None => free_gradient(model, &trial)?,
        };
        let z_new = precondition(&g_new);
        let beta = (g_new.dot(&z_new) - g_new.dot(&z)) / g.dot(&z);
        d = -&z_new + &d * beta.max(0.0);
        if g_new.amax() < best_gradient {
            best_gradient = g_new.amax();
            stalled = 0;
        } else {
            stalled += 1;
        }
        x = xt;
        path = trial;
        f = ft;
        g = g_new;
        z = z_new;
        iterations += 1;
    }
}

/// Sup-norm distance between a discrete path and a trajectory sampled at
/// the path nodes, and the action gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub sup_distance: f64,
    pub discrete_action: f64,
    pub shooting_action: f64,
    pub action_gap: f64,
    pub intervals: usize,
    pub iterations: usize,
}

pub fn compare_with_shooting(
    model: &Model,
    traj: &Trajectory,
    shooting_action: f64,
    minimum: &DiscreteMinimum,
) -> Result<Comparison> {
    let mut dist = 0.0f64;
    for (t, q) in minimum.path.times().iter().zip(&minimum.path.nodes) {
        let (p, _) = traj.sample(model.chart(), *t)?;
        dist = dist.max((p - q).amax());
    }
    Ok(Comparison {
        sup_distance: dist,
        discrete_action: minimum.action,
        shooting_action,
        action_gap: (minimum.action - shooting_action).abs(),
        intervals: minimum.path.intervals(),
        iterations: minimum.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictionCheck {
    pub a: f64,
    pub b: f64,
    /// Sup-norm position distance between the re-solve and the restriction;
    /// `None` when the re-solve failed.
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub restrictions: Vec<RestrictionCheck>,
    pub restriction_tolerance: f64,
    pub restriction_ok: bool,
    pub lift_time: f64,
    pub lift_forward: f64,
    pub lift_backward: f64,
    pub lift_tolerance: f64,
    pub lift_ok: bool,
    /// Some sub-solve did not converge.
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessOptions {
    pub subintervals: usize,
    pub restriction_tolerance: f64,
    pub lift_tolerance: f64,
    pub seed: u64,
}

impl Default for UniquenessOptions {
    fn default() -> Self {
        Self {
            subintervals: 5,
            restriction_tolerance: 1e-6,
            lift_tolerance: 1e-7,
            seed: 7,
        }
    }
}

/// (a) re-solves the BVP on random sub-intervals with boundary data read
/// off the trajectory; (b) re-integrates from the full jet at a random
/// interior node, forward and backward.
pub fn check_uniqueness_props(model: &Model, traj: &Trajectory, opts: &UniquenessOptions) -> Result<UniquenessReport> {
    let nodes = traj.intervals();
    if nodes < 10 {
        return Err(Error::contract("trajectory too coarse for uniqueness probes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut restrictions = Vec::with_capacity(opts.subintervals);
    let lo_len = ((0.2 * nodes as f64).ceil() as usize).max(2);
    let hi_len = ((0.8 * nodes as f64).floor() as usize).max(lo_len);
    for _ in 0..opts.subintervals {
        let len = rng.gen_range(lo_len..=hi_len);
        let k0 = rng.gen_range(0..=nodes - len);
        let k1 = k0 + len;
        let boundary = BoundaryData::from_trajectory(traj, k0, k1);
        let solver = SolverOptions {
            step: Some(traj.step),
            ..SolverOptions::default()
        };
        let distance = match solve_bvp(model, &boundary, None, &solver) {
            Ok(r) => {
                let sub = r.trajectory();
                if sub.len() != len + 1 {
                    None
                } else {
                    Some(
                        sub.states
                            .iter()
                            .zip(&traj.states[k0..=k1])
                            .map(|(a, b)| (&a.q - &b.q).amax())
                            .fold(0.0, f64::max),
                    )
                }
            }
            Err(_) => None,
        };
        restrictions.push(RestrictionCheck {
            a: boundary.a,
            b: boundary.b,
            distance,
        });
    }
    let inconclusive = restrictions.iter().any(|r| r.distance.is_none());
    let restriction_ok = restrictions
        .iter()
        .filter_map(|r| r.distance)
        .all(|d| d <= opts.restriction_tolerance);

    let k = rng.gen_range(1..nodes);
    let start = &traj.states[k];
    let forward = integrate_steps(model, start, traj.step, nodes - k)?;
    let backward = integrate_steps(model, start, -traj.step, k)?;
    let lift_forward = forward
        .iter()
        .zip(&traj.states[k..])
        .map(|(a, b)| (&a.q - &b.q).amax())
        .fold(0.0, f64::max);
    let lift_backward = backward
        .iter()
        .zip(traj.states[..=k].iter().rev())
        .map(|(a, b)| (&a.q - &b.q).amax())
        .fold(0.0, f64::max);
    Ok(UniquenessReport {
        restrictions,
        restriction_tolerance: opts.restriction_tolerance,
        restriction_ok,
        lift_time: start.t,
        lift_forward,
        lift_backward,
        lift_tolerance: opts.lift_tolerance,
        lift_ok: lift_forward.max(lift_backward) <= opts.lift_tolerance,
        inconclusive,
    })
}
