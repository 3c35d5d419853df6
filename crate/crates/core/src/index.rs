//! The index form of the second variation, its decomposition, a Galerkin
//! estimate of the extended index, and optimality verdicts.
//!
//! ```text
//! I(X,Y) = ∫ ⟨D²X, D²Y⟩ + ⟨Y, F(X, q̇) + ∇_X grad V⟩ dt
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bspline::ClampedQuintic;
use crate::dynamics::{sampled_action, Trajectory};
use crate::error::{Error, Result};
use crate::fields::{parallel_frame, FieldSamples};
use crate::geometry::{exp_map, inner};
use crate::jacobi::{biconjugate_scan, f_operator, BiconjugateReport, ScanOptions};
use crate::model::Model;
use crate::numerics::simpson_weights;

/// Pointwise integrands of the decomposition at every node: the cubic part
/// `⟨D²X,D²Y⟩ + ⟨Y,F(X)⟩`, `⟨Y, HX⟩` and `⟨X, HY⟩`.
fn integrands(model: &Model, traj: &Trajectory, x: &FieldSamples, y: &FieldSamples) -> Result<Vec<[f64; 3]>> {
    if x.len() != traj.len() || y.len() != traj.len() {
        return Err(Error::contract("field samples do not match the trajectory grid"));
    }
    let chart = model.chart();
    let mut out = Vec::with_capacity(traj.len());
    for (k, s) in traj.states.iter().enumerate() {
        let f = f_operator(chart, s, &x.x[k], &x.dx[k], &x.d2x[k]);
        let hess = model.potential().hessian_matrix(chart, &s.q)?;
        let cubic = inner(chart, &s.q, &x.d2x[k], &y.d2x[k]) + inner(chart, &s.q, &y.x[k], &f);
        let hx = inner(chart, &s.q, &y.x[k], &(&hess * &x.x[k]));
        let hy = inner(chart, &s.q, &x.x[k], &(&hess * &y.x[k]));
        out.push([cubic, hx, hy]);
    }
    Ok(out)
}

fn integrate(traj: &Trajectory, vals: &[[f64; 3]]) -> [f64; 3] {
    let w = simpson_weights(traj.intervals(), traj.step);
    let mut acc = [0.0; 3];
    for (wk, v) in w.iter().zip(vals) {
        for c in 0..3 {
            acc[c] += wk * v[c];
        }
    }
    acc
}

fn check_ends(first: &FieldSamples, last: &FieldSamples) -> Result<()> {
    let scale = 1.0 + first.sup_norm().max(last.sup_norm());
    let tol = 1e-12 * scale;
    let k = last.len() - 1;
    if first.x[0].amax() > tol || first.dx[0].amax() > tol || last.x[k].amax() > tol || last.dx[k].amax() > tol {
        return Err(Error::contract(
            "field does not vanish with its covariant derivative at the endpoints",
        ));
    }
    Ok(())
}

/// `I(X, Y)` by Simpson quadrature on the trajectory grid.
pub fn index_form(model: &Model, traj: &Trajectory, x: &FieldSamples, y: &FieldSamples) -> Result<f64> {
    x.check_admissible()?;
    y.check_admissible()?;
    let [c, hx, _] = integrate(traj, &integrands(model, traj, x, y)?);
    Ok(c + hx)
}

/// `I` for fields that are smooth on each of several consecutive curve
/// pieces but may have kinks in `D²X` at the joins. The form needs no
/// correction terms at the joins; it is the sum of the piece integrals.
pub fn index_form_pieces(model: &Model, pieces: &[(&Trajectory, &FieldSamples, &FieldSamples)]) -> Result<f64> {
    let (first, last) = match (pieces.first(), pieces.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::contract("no curve pieces")),
    };
    check_ends(first.1, last.1)?;
    check_ends(first.2, last.2)?;
    let mut total = 0.0;
    for (traj, x, y) in pieces {
        let [c, hx, _] = integrate(traj, &integrands(model, traj, x, y)?);
        total += c + hx;
    }
    Ok(total)
}

/// `I = I_c + P₊ + P₋` with `P± = ½∫⟨Y, ∇_X grad V⟩ ± ⟨X, ∇_Y grad V⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub i_c: f64,
    pub p_plus: f64,
    pub p_minus: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.i_c + self.p_plus + self.p_minus
    }
}

pub fn decompose(model: &Model, traj: &Trajectory, x: &FieldSamples, y: &FieldSamples) -> Result<Decomposition> {
    x.check_admissible()?;
    y.check_admissible()?;
    let [c, hx, hy] = integrate(traj, &integrands(model, traj, x, y)?);
    Ok(Decomposition {
        i_c: c,
        p_plus: 0.5 * (hx + hy),
        p_minus: 0.5 * (hx - hy),
    })
}

/// `I(X, Y)` in integrated-by-parts form for piecewise fields:
///
/// ```text
/// ∫⟨Y, D⁴X + F(X) + ∇_X grad V⟩ − Σ⟨DY(tᵢ), [D²X](tᵢ)⟩ + Σ⟨Y(tᵢ), [D³X](tᵢ)⟩
/// ```
///
/// with `[·]` the jump (right minus left) at each join. `X` must carry
/// `D³X` and `D⁴X` samples.
pub fn strong_form_pieces(model: &Model, pieces: &[(&Trajectory, &FieldSamples, &FieldSamples)]) -> Result<f64> {
    let chart = model.chart();
    if pieces.is_empty() {
        return Err(Error::contract("no curve pieces"));
    }
    check_ends(pieces[0].1, pieces[pieces.len() - 1].1)?;
    check_ends(pieces[0].2, pieces[pieces.len() - 1].2)?;
    let mut total = 0.0;
    for (traj, x, y) in pieces {
        let d4 = x
            .d4x
            .as_ref()
            .ok_or_else(|| Error::contract("strong form needs fourth covariant derivatives"))?;
        let w = simpson_weights(traj.intervals(), traj.step);
        for (k, s) in traj.states.iter().enumerate() {
            let f = f_operator(chart, s, &x.x[k], &x.dx[k], &x.d2x[k]);
            let h = model.potential().hessian_op(chart, &s.q, &x.x[k])?;
            total += w[k] * inner(chart, &s.q, &y.x[k], &(&d4[k] + f + h));
        }
    }
    for w in pieces.windows(2) {
        let (left_traj, left_x, _) = w[0];
        let (_, right_x, right_y) = w[1];
        let q = &left_traj.last().q;
        let kl = left_x.len() - 1;
        let d3l = left_x.d3x.as_ref().ok_or_else(|| Error::contract("strong form needs D³X"))?;
        let d3r = right_x.d3x.as_ref().ok_or_else(|| Error::contract("strong form needs D³X"))?;
        let jump2 = &right_x.d2x[0] - &left_x.d2x[kl];
        let jump3 = &d3r[0] - &d3l[kl];
        total += inner(chart, q, &right_y.x[0], &jump3) - inner(chart, q, &right_y.dx[0], &jump2);
    }
    Ok(total)
}

/// Central second difference of `J` over `α(r,s) = exp_q(rX + sY)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSecondVariation {
    pub value: f64,
    /// Roundoff noise estimate `ε_mach·|J|/ε²`.
    pub noise: f64,
    pub warning: Option<String>,
}

/// FD second variation; `knots` lists grid nodes where the fields may have
/// kinks, so the sampled action is evaluated piece by piece.
pub fn second_variation_fd_knots(
    model: &Model,
    traj: &Trajectory,
    knots: &[usize],
    x: &FieldSamples,
    y: &FieldSamples,
    eps: f64,
) -> Result<FdSecondVariation> {
    if x.len() != traj.len() || y.len() != traj.len() {
        return Err(Error::contract("field samples do not match the trajectory grid"));
    }
    if !(eps > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    if x.sup_norm() == 0.0 || y.sup_norm() == 0.0 {
        return Ok(FdSecondVariation {
            value: 0.0,
            noise: 0.0,
            warning: None,
        });
    }
    let chart = model.chart();
    let mut bounds = vec![0];
    bounds.extend(knots.iter().copied().filter(|&k| k > 0 && k < traj.intervals()));
    bounds.push(traj.intervals());
    let j = |r: f64, s: f64| -> Result<f64> {
        let curve: Vec<DVector<f64>> = traj
            .states
            .iter()
            .enumerate()
            .map(|(k, st)| exp_map(chart, &st.q, &(&x.x[k] * r + &y.x[k] * s)))
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        for w in bounds.windows(2) {
            total += sampled_action(model, &curve[w[0]..=w[1]], traj.step)?;
        }
        Ok(total)
    };
    let (pp, pm, mp, mm) = (j(eps, eps)?, j(eps, -eps)?, j(-eps, eps)?, j(-eps, -eps)?);
    let value = (pp - pm - mp + mm) / (4.0 * eps * eps);
    let scale = pp.abs().max(mm.abs()).max(1.0);
    let noise = f64::EPSILON * scale / (eps * eps);
    let warning = (noise > 1e-4 * (1.0 + value.abs())).then(|| {
        format!("step {eps:e} is roundoff dominated (noise estimate {noise:e})")
    });
    Ok(FdSecondVariation { value, noise, warning })
}

pub fn second_variation_fd(
    model: &Model,
    traj: &Trajectory,
    x: &FieldSamples,
    y: &FieldSamples,
    eps: f64,
) -> Result<FdSecondVariation> {
    second_variation_fd_knots(model, traj, &[], x, y, eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexVerdict {
    PositiveDefinite,
    SemidefiniteWithKernel,
    Indefinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    /// Number of knot intervals of the spline profiles.
    pub m: usize,
    pub dimension: usize,
    /// Generalized eigenvalues relative to the `H²` Gram matrix, ascending.
    pub eigenvalues: Vec<f64>,
    /// Count of eigenvalues below `−tolerance`.
    pub index: usize,
    /// Count of eigenvalues within `tolerance` of zero.
    pub kernel: usize,
    /// Count of eigenvalues at most `tolerance`.
    pub extended_index: usize,
    pub verdict: IndexVerdict,
    pub gram_condition: f64,
    pub tolerance: f64,
}

pub const EIGEN_TOLERANCE: f64 = 1e-9;

/// Galerkin discretization of the quadratic form on `span{ξ_k E_i}` with
/// `ξ_k` the interior clamped quintic B-splines on `m` knot intervals and
/// `E_i` a parallel orthonormal frame.
pub fn extended_index(model: &Model, traj: &Trajectory, m: usize) -> Result<IndexReport> {
    if m < 1 {
        return Err(Error::contract("basis needs at least one knot interval"));
    }
    let chart = model.chart();
    let n = chart.dim();
    let basis = ClampedQuintic::new(m);
    let nb = basis.interior_dim();
    let dim = nb * n;
    let frame = parallel_frame(chart, traj)?;
    let w = simpson_weights(traj.intervals(), traj.step);
    let (t0, span) = (traj.start_time(), traj.duration());
    let zero = DVector::zeros(n);
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut g = DMatrix::<f64>::zeros(dim, dim);
    for (k, s) in traj.states.iter().enumerate() {
        let e = &frame[k];
        let hess = model.potential().hessian_matrix(chart, &s.q)?;
        // A_d[j][i] = ⟨E_j, F_d E_i⟩ for the X, DX, D²X slots
        let mut ad = vec![DMatrix::<f64>::zeros(n, n); 3];
        for i in 0..n {
            let cols = [
                f_operator(chart, s, &e[i], &zero, &zero) + &hess * &e[i],
                f_operator(chart, s, &zero, &e[i], &zero),
                f_operator(chart, s, &zero, &zero, &e[i]),
            ];
            for (d, col) in cols.iter().enumerate() {
                for jj in 0..n {
                    ad[d][(jj, i)] = inner(chart, &s.q, &e[jj], col);
                }
            }
        }
        let u = (s.t - t0) / span;
        let vals: Vec<(usize, [f64; 3])> = basis
            .eval_interior(u, 2)
            .into_iter()
            .map(|(l, d)| (l, [d[0], d[1] / span, d[2] / (span * span)]))
            .collect();
        for (l, xi) in &vals {
            for (lp, eta) in &vals {
                let gram = xi[0] * eta[0] + xi[1] * eta[1] + xi[2] * eta[2];
                for i in 0..n {
                    let col = l * n + i;
                    for jj in 0..n {
                        let row = lp * n + jj;
                        let mut v = eta[0] * (xi[0] * ad[0][(jj, i)] + xi[1] * ad[1][(jj, i)] + xi[2] * ad[2][(jj, i)]);
                        if i == jj {
                            v += xi[2] * eta[2];
                            g[(row, col)] += w[k] * gram;
                        }
                        a[(row, col)] += w[k] * v;
                    }
                }
            }
        }
    }
    let sym = (&a + a.transpose()) * 0.5;
    let g = (&g + g.transpose()) * 0.5;
    let gram_eigs = SymmetricEigen::new(g.clone()).eigenvalues;
    let gram_condition = gram_eigs.max() / gram_eigs.min();
    if !(gram_eigs.min() > 0.0) || gram_condition > 1e12 {
        return Err(Error::IllConditionedBasis(gram_condition));
    }
    let chol = g.cholesky().ok_or(Error::IllConditionedBasis(gram_condition))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or(Error::IllConditionedBasis(gram_condition))?;
    let reduced = &l_inv * sym * l_inv.transpose();
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(reduced).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let index = eigenvalues.iter().filter(|&&v| v < -EIGEN_TOLERANCE).count();
    let kernel = eigenvalues.iter().filter(|&&v| v.abs() <= EIGEN_TOLERANCE).count();
    let verdict = if index > 0 {
        IndexVerdict::Indefinite
    } else if kernel > 0 {
        IndexVerdict::SemidefiniteWithKernel
    } else {
        IndexVerdict::PositiveDefinite
    };
    Ok(IndexReport {
        m,
        dimension: dim,
        eigenvalues,
        index,
        kernel,
        extended_index: index + kernel,
        verdict,
        gram_condition,
        tolerance: EIGEN_TOLERANCE,
    })
}

/// Knot-interval count giving at least 120 basis fields.
pub fn default_basis_size(n: usize) -> usize {
    120usize.div_ceil(n.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Index 0 and no kernel: a second-order nondegenerate candidate.
    Candidate,
    /// Index 0 with a nontrivial kernel estimate.
    Degenerate,
    /// An interior biconjugate pair exists or the index is positive.
    NotOmegaLocalMinimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub verdict: Verdict,
    /// Every modified cubic is a Q-local minimizer.
    pub q_local_minimizer: bool,
    /// `[t₀, t*]` with `t*` the first biconjugate time after `t₀` (or the end).
    pub certified_interval: [f64; 2],
    pub interior_biconjugate: bool,
    pub index: IndexReport,
    pub biconjugate: BiconjugateReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerdictOptions {
    pub m: Option<usize>,
    pub scan: ScanOptions,
}

pub fn verdict(model: &Model, traj: &Trajectory, opts: &VerdictOptions) -> Result<OptimalityReport> {
    let t0 = traj.start_time();
    let t_end = traj.end_time();
    let scan = biconjugate_scan(model, traj, t0, &opts.scan)?;
    let m = opts.m.unwrap_or_else(|| default_basis_size(model.dim()));
    let index = extended_index(model, traj, m)?;
    let tol = 1e-9 * (1.0 + t_end.abs());
    let interior: Vec<f64> = scan
        .points
        .iter()
        .map(|p| p.t)
        .filter(|&t| t > t0 + tol && t < t_end - tol)
        .collect();
    let interior_biconjugate = !interior.is_empty();
    let first = interior.iter().copied().fold(t_end, f64::min);
    let verdict = if interior_biconjugate || index.index > 0 {
        Verdict::NotOmegaLocalMinimizer
    } else if index.kernel > 0 {
        Verdict::Degenerate
    } else {
        Verdict::Candidate
    };
    Ok(OptimalityReport {
        verdict,
        q_local_minimizer: true,
        certified_interval: [t0, first],
        interior_biconjugate,
        index,
        biconjugate: scan,
    })
}
