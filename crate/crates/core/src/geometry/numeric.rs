//! Charts built from a user-supplied metric function. The connection,
//! curvature and its covariant derivatives are all obtained by finite
//! differences.

use std::fmt;
use std::sync::Arc;

use meval::{ContextProvider, Expr, FuncEvalError};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::{curvature_components, Chart, Christoffel, CurvatureKind};
use crate::error::{Error, Result};

pub type MetricFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

const METRIC_STEP: f64 = 1e-4;
const CURVATURE_STEP: f64 = 3e-3;
const NABLA_STEP: f64 = 3e-2;

#[derive(Clone)]
pub struct NumericChart {
    label: String,
    dim: usize,
    radius: f64,
    metric_fn: MetricFn,
}

impl fmt::Debug for NumericChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NumericChart")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("radius", &self.radius)
            .finish()
    }
}

#[derive(Debug, Deserialize)]
struct MetricSpec {
    dim: usize,
    metric: Vec<Vec<String>>,
    #[serde(default = "default_radius")]
    domain_radius: f64,
}

fn default_radius() -> f64 {
    1.0
}

/// Variables `x0, x1, …` plus the usual elementary functions.
struct Vars<'a>(&'a [f64]);

impl ContextProvider for Vars<'_> {
    fn get_var(&self, name: &str) -> Option<f64> {
        match name {
            "pi" => Some(std::f64::consts::PI),
            "e" => Some(std::f64::consts::E),
            _ => name
                .strip_prefix('x')
                .and_then(|i| i.parse::<usize>().ok())
                .and_then(|i| self.0.get(i).copied()),
        }
    }

    fn eval_func(&self, name: &str, args: &[f64]) -> std::result::Result<f64, FuncEvalError> {
        let unary = |f: fn(f64) -> f64| match args {
            [a] => Ok(f(*a)),
            _ => Err(FuncEvalError::NumberArgs(1)),
        };
        match name {
            "sqrt" => unary(f64::sqrt),
            "exp" => unary(f64::exp),
            "ln" => unary(f64::ln),
            "abs" => unary(f64::abs),
            "sin" => unary(f64::sin),
            "cos" => unary(f64::cos),
            "tan" => unary(f64::tan),
            "sinh" => unary(f64::sinh),
            "cosh" => unary(f64::cosh),
            "tanh" => unary(f64::tanh),
            "atan" => unary(f64::atan),
            "atan2" => match args {
                [a, b] => Ok(a.atan2(*b)),
                _ => Err(FuncEvalError::NumberArgs(2)),
            },
            _ => Err(FuncEvalError::UnknownFunction),
        }
    }
}

impl NumericChart {
    /// Chart on the closed ball of `radius` around the origin.
    pub fn new(label: impl Into<String>, dim: usize, radius: f64, metric_fn: MetricFn) -> Self {
        Self {
            label: label.into(),
            dim,
            radius,
            metric_fn,
        }
    }

    /// Parses a metric spec: `{"dim": n, "metric": [[expr, ...], ...], "domain_radius": r}`
    /// with expressions in the variables `x0..x{n-1}`.
    pub fn from_spec_str(label: impl Into<String>, text: &str) -> Result<Self> {
        let spec: MetricSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("metric spec: {e}")))?;
        let n = spec.dim;
        if n == 0 || spec.metric.len() != n || spec.metric.iter().any(|row| row.len() != n) {
            return Err(Error::Config(format!("metric spec must be a {n}x{n} array")));
        }
        let mut exprs = Vec::with_capacity(n * n);
        for row in &spec.metric {
            for s in row {
                let e: Expr = s
                    .parse()
                    .map_err(|e| Error::Config(format!("metric entry {s:?}: {e}")))?;
                exprs.push(e);
            }
        }
        let exprs = Arc::new(exprs);
        let metric_fn: MetricFn = Arc::new(move |x: &DVector<f64>| {
            let vals: Vec<f64> = x.iter().copied().collect();
            let ctx = Vars(&vals);
            let raw = DMatrix::from_fn(n, n, |i, j| {
                exprs[i * n + j].eval_with_context(&ctx).unwrap_or(f64::NAN)
            });
            (&raw + raw.transpose()) * 0.5
        });
        let chart = Self::new(label, n, spec.domain_radius, metric_fn);
        let origin = DVector::zeros(n);
        let g0 = chart.metric(&origin);
        if g0.iter().any(|v| !v.is_finite()) || g0.cholesky().is_none() {
            return Err(Error::Config("metric spec is not positive definite at the origin".into()));
        }
        Ok(chart)
    }

    pub fn from_spec_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_spec_str(format!("numeric:{}", path.display()), &text)
    }

    fn riemann_at(&self, x: &DVector<f64>) -> Vec<f64> {
        curvature_components(self, x)
    }

    /// `∇R` components `[l][a][i][j][k]`.
    fn nabla_riemann_at(&self, x: &DVector<f64>) -> Vec<f64> {
        let partials = fourth_order_partials(x, CURVATURE_STEP, |y| self.riemann_at(y));
        covariant_derivative(&self.christoffel(x), &self.riemann_at(x), &partials, 3)
    }

    /// `∇²R` components `[l][b][a][i][j][k]`.
    fn nabla2_riemann_at(&self, x: &DVector<f64>) -> Vec<f64> {
        let partials = fourth_order_partials(x, NABLA_STEP, |y| self.nabla_riemann_at(y));
        covariant_derivative(&self.christoffel(x), &self.nabla_riemann_at(x), &partials, 4)
    }
}

/// `∂_b T` for every coordinate `b` by the five-point central stencil.
fn fourth_order_partials<F>(x: &DVector<f64>, rel_step: f64, f: F) -> Vec<Vec<f64>>
where
    F: Fn(&DVector<f64>) -> Vec<f64>,
{
    (0..x.len())
        .map(|b| {
            let h = rel_step * x[b].abs().max(1.0);
            let at = |s: f64| {
                let mut y = x.clone();
                y[b] += s * h;
                f(&y)
            };
            let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
            (0..p1.len())
                .map(|c| (-p2[c] + 8.0 * p1[c] - 8.0 * m1[c] + m2[c]) / (12.0 * h))
                .collect()
        })
        .collect()
}

/// Covariant derivative of a `(1, r)` tensor stored `[l][L1..Lr]`, given its
/// coordinate partials. The new lower index is placed first: `[l][b][L1..Lr]`.
fn covariant_derivative(gamma: &Christoffel, t: &[f64], partials: &[Vec<f64>], r: usize) -> Vec<f64> {
    let n = gamma.dim();
    let block = n.pow(r as u32);
    let mut out = vec![0.0; n * n * block];
    let mut idx = vec![0usize; r];
    for l in 0..n {
        for b in 0..n {
            for lower in 0..block {
                // decode lower multi-index
                let mut rem = lower;
                for s in (0..r).rev() {
                    idx[s] = rem % n;
                    rem /= n;
                }
                let mut v = partials[b][l * block + lower];
                for p in 0..n {
                    v += gamma.get(l, b, p) * t[p * block + lower];
                }
                for s in 0..r {
                    let stride = n.pow((r - 1 - s) as u32);
                    let base = lower - idx[s] * stride;
                    for p in 0..n {
                        v -= gamma.get(p, b, idx[s]) * t[l * block + base + p * stride];
                    }
                }
                out[(l * n + b) * block + lower] = v;
            }
        }
    }
    out
}

/// Contracts a `(1, r)` component array `[l][L1..Lr]` with `r` vectors.
fn contract(t: &[f64], n: usize, args: &[&DVector<f64>]) -> DVector<f64> {
    let r = args.len();
    let block = n.pow(r as u32);
    DVector::from_fn(n, |l, _| {
        let mut s = 0.0;
        for lower in 0..block {
            let mut rem = lower;
            let mut w = 1.0;
            for a in args.iter().rev() {
                w *= a[rem % n];
                rem /= n;
                if w == 0.0 {
                    break;
                }
            }
            if w != 0.0 {
                s += w * t[l * block + lower];
            }
        }
        s
    })
}

impl Chart for NumericChart {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> CurvatureKind {
        CurvatureKind::GenericNumeric
    }

    fn in_domain(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim && x.iter().all(|v| v.is_finite()) && x.norm() <= self.radius
    }

    fn metric(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.metric_fn)(x)
    }

    fn metric_derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (0..self.dim)
            .map(|l| {
                let h = METRIC_STEP * x[l].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[l] += h;
                xm[l] -= h;
                (self.metric(&xp) - self.metric(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn christoffel_derivative(&self, x: &DVector<f64>) -> Vec<Christoffel> {
        let n = self.dim;
        (0..n)
            .map(|l| {
                let h = METRIC_STEP * x[l].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[l] += h;
                xm[l] -= h;
                let (gp, gm) = (self.christoffel(&xp), self.christoffel(&xm));
                let mut d = Christoffel::zeros(n);
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            d.set(k, i, j, (gp.get(k, i, j) - gm.get(k, i, j)) / (2.0 * h));
                        }
                    }
                }
                d
            })
            .collect()
    }

    fn nabla_curvature(
        &self,
        x: &DVector<f64>,
        dir: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        contract(&self.nabla_riemann_at(x), self.dim, &[dir, u, v, w])
    }

    fn nabla2_curvature(
        &self,
        x: &DVector<f64>,
        dir: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        contract(&self.nabla2_riemann_at(x), self.dim, &[dir, dir, u, v, w])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE_SPEC: &str = r#"{
        "dim": 2,
        "metric": [["4/(1+x0^2+x1^2)^2", "0"], ["0", "4/(1+x0^2+x1^2)^2"]],
        "domain_radius": 3.0
    }"#;

    #[test]
    fn parses_expression_metric() {
        let chart = NumericChart::from_spec_str("numeric:s2", SPHERE_SPEC).unwrap();
        let x = DVector::from_vec(vec![0.5, 0.0]);
        assert!((chart.metric(&x)[(0, 0)] - 4.0 / 1.5625).abs() < 1e-14);
        assert!(chart.in_domain(&x));
        assert!(!chart.in_domain(&DVector::from_vec(vec![3.5, 0.0])));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(NumericChart::from_spec_str("n", r#"{"dim":2,"metric":[["1"]]}"#).is_err());
        assert!(NumericChart::from_spec_str("n", r#"{"dim":1,"metric":[["x0 +"]]}"#).is_err());
        assert!(NumericChart::from_spec_str("n", r#"{"dim":1,"metric":[["-1"]]}"#).is_err());
    }

    #[test]
    fn covariant_derivative_of_flat_tensor_is_partial() {
        let gamma = Christoffel::zeros(2);
        let t = vec![1.0; 8];
        let partials = vec![vec![0.5; 8], vec![-0.25; 8]];
        let d = covariant_derivative(&gamma, &t, &partials, 2);
        assert_eq!(d.len(), 16);
        assert_eq!(d[(0 * 2 + 1) * 4 + 3], -0.25);
    }
}
