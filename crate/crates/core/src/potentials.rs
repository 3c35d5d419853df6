//! Artificial potentials: smooth nonnegative scalar fields that push planned
//! trajectories away from obstacles.
//!
//! Every potential provides its coordinate jet `(V, ∂V, ∂²V)`; the gradient
//! vector field and the Hessian operator `X ↦ ∇_X grad V` are derived from it
//! with the chart metric and connection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_domain, Chart};

/// Which distance a Gaussian bump composes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Euclidean distance of chart coordinates.
    #[default]
    Chart,
    /// Geodesic distance to the center.
    Riemannian,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    /// `A·exp(−d(x, c)²/(2σ²))`.
    Gaussian {
        center: Vec<f64>,
        #[serde(rename = "A")]
        strength: f64,
        sigma: f64,
        #[serde(default)]
        distance: DistanceMode,
    },
    /// `k/2·|x − c|²` in chart coordinates (center defaults to the origin).
    Quadratic {
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default = "unit")]
        k: f64,
    },
    Sum { terms: Vec<Potential> },
    Scaled { factor: f64, term: Box<Potential> },
}

pub type Jet = (f64, DVector<f64>, DMatrix<f64>);

pub fn zero_potential() -> Potential {
    Potential::Zero
}

pub fn gaussian_obstacle(
    chart: &dyn Chart,
    center: &DVector<f64>,
    strength: f64,
    sigma: f64,
) -> Result<Potential> {
    let p = Potential::Gaussian {
        center: center.iter().copied().collect(),
        strength,
        sigma,
        distance: DistanceMode::Chart,
    };
    p.validate(chart)?;
    Ok(p)
}

pub fn sum(terms: Vec<Potential>) -> Result<Potential> {
    if terms.is_empty() {
        return Err(Error::contract("a potential sum needs at least one term"));
    }
    Ok(Potential::Sum { terms })
}

impl Potential {
    /// `λ·V`, used by continuation sweeps.
    pub fn scaled(&self, factor: f64) -> Potential {
        Potential::Scaled {
            factor,
            term: Box::new(self.clone()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Potential::Zero => true,
            Potential::Sum { terms } => terms.iter().all(Potential::is_zero),
            Potential::Scaled { factor, term } => *factor == 0.0 || term.is_zero(),
            _ => false,
        }
    }

    /// Checks parameters against the chart.
    pub fn validate(&self, chart: &dyn Chart) -> Result<()> {
        match self {
            Potential::Zero => Ok(()),
            Potential::Gaussian {
                center,
                strength,
                sigma,
                distance,
            } => {
                if !(*strength > 0.0 && strength.is_finite()) || !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::contract("gaussian obstacle needs A > 0 and sigma > 0"));
                }
                let c = DVector::from_column_slice(center);
                check_domain(chart, &c)?;
                if *distance == DistanceMode::Riemannian && chart.squared_distance_jet(&c, &c).is_none() {
                    return Err(Error::Unsupported(format!(
                        "riemannian-distance obstacles on chart {}",
                        chart.name()
                    )));
                }
                Ok(())
            }
            Potential::Quadratic { center, k } => {
                if !(*k >= 0.0 && k.is_finite()) {
                    return Err(Error::contract("quadratic potential needs k >= 0"));
                }
                if let Some(c) = center {
                    if c.len() != chart.dim() {
                        return Err(Error::Dimension {
                            expected: chart.dim(),
                            got: c.len(),
                        });
                    }
                }
                Ok(())
            }
            Potential::Sum { terms } => {
                if terms.is_empty() {
                    return Err(Error::contract("a potential sum needs at least one term"));
                }
                terms.iter().try_for_each(|t| t.validate(chart))
            }
            Potential::Scaled { factor, term } => {
                if !(*factor >= 0.0 && factor.is_finite()) {
                    return Err(Error::contract("potential scale must be nonnegative"));
                }
                term.validate(chart)
            }
        }
    }

    /// `(V, ∂V, ∂²V)` in chart coordinates at `x`.
    pub fn jet(&self, chart: &dyn Chart, x: &DVector<f64>) -> Result<Jet> {
        let n = x.len();
        match self {
            Potential::Zero => Ok((0.0, DVector::zeros(n), DMatrix::zeros(n, n))),
            Potential::Gaussian {
                center,
                strength,
                sigma,
                distance,
            } => {
                let c = DVector::from_column_slice(center);
                let (d2, dd2, hd2) = match distance {
                    DistanceMode::Chart => {
                        let d = x - &c;
                        (d.norm_squared(), &d * 2.0, DMatrix::identity(n, n) * 2.0)
                    }
                    DistanceMode::Riemannian => chart.squared_distance_jet(x, &c).ok_or_else(|| {
                        Error::Unsupported(format!("riemannian-distance obstacles on chart {}", chart.name()))
                    })?,
                };
                let s2 = sigma * sigma;
                let v = strength * (-d2 / (2.0 * s2)).exp();
                let grad = &dd2 * (-v / (2.0 * s2));
                let hess = (&dd2 * dd2.transpose()) * (v / (4.0 * s2 * s2)) - hd2 * (v / (2.0 * s2));
                Ok((v, grad, hess))
            }
            Potential::Quadratic { center, k } => {
                let d = match center {
                    Some(c) => x - DVector::from_column_slice(c),
                    None => x.clone(),
                };
                Ok((0.5 * k * d.norm_squared(), &d * *k, DMatrix::identity(n, n) * *k))
            }
            Potential::Sum { terms } => {
                let mut acc = (0.0, DVector::zeros(n), DMatrix::zeros(n, n));
                for t in terms {
                    let (v, g, h) = t.jet(chart, x)?;
                    acc.0 += v;
                    acc.1 += g;
                    acc.2 += h;
                }
                Ok(acc)
            }
            Potential::Scaled { factor, term } => {
                let (v, g, h) = term.jet(chart, x)?;
                Ok((v * factor, g * *factor, h * *factor))
            }
        }
    }

    pub fn value(&self, chart: &dyn Chart, x: &DVector<f64>) -> Result<f64> {
        Ok(self.jet(chart, x)?.0)
    }

    /// Components of `grad V = g⁻¹ dV`.
    pub fn gradient(&self, chart: &dyn Chart, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.is_zero() {
            return Ok(DVector::zeros(x.len()));
        }
        let (_, dv, _) = self.jet(chart, x)?;
        solve_metric(chart, x, &dv)
    }

    /// Matrix of the operator `X ↦ ∇_X grad V`, i.e. `g⁻¹(∂²V − Γ^k ∂_k V)`.
    pub fn hessian_matrix(&self, chart: &dyn Chart, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = x.len();
        if self.is_zero() {
            return Ok(DMatrix::zeros(n, n));
        }
        let (_, dv, hv) = self.jet(chart, x)?;
        let gamma = chart.christoffel(x);
        let cov = DMatrix::from_fn(n, n, |i, j| {
            hv[(i, j)] - (0..n).map(|k| gamma.get(k, i, j) * dv[k]).sum::<f64>()
        });
        let g = chart.metric(x);
        g.lu()
            .solve(&cov)
            .ok_or_else(|| Error::numerical("singular metric"))
    }

    pub fn hessian_op(&self, chart: &dyn Chart, x: &DVector<f64>, dir: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.hessian_matrix(chart, x)? * dir)
    }

    /// Finite-difference fallback for `∇_X grad V`: the coordinate derivative of
    /// `grad V` along `X` plus the connection term `Γ(X, grad V)`.
    pub fn hessian_op_fd(&self, chart: &dyn Chart, x: &DVector<f64>, dir: &DVector<f64>) -> Result<DVector<f64>> {
        let scale = dir.amax();
        if scale == 0.0 {
            return Ok(DVector::zeros(x.len()));
        }
        let eps = 1e-5 / scale;
        let gp = self.gradient(chart, &(x + dir * eps))?;
        let gm = self.gradient(chart, &(x - dir * eps))?;
        let grad = self.gradient(chart, x)?;
        Ok((gp - gm) / (2.0 * eps) + chart.christoffel(x).contract(dir, &grad))
    }
}

fn solve_metric(chart: &dyn Chart, x: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    chart
        .metric(x)
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| Error::numerical("metric is not positive definite"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Euclidean, Sphere2};

    #[test]
    fn gaussian_hessian_at_center_is_scaled_identity() {
        let chart = Euclidean::new(2);
        let c = DVector::from_vec(vec![0.3, -0.2]);
        let p = gaussian_obstacle(&chart, &c, 2.0, 0.5).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let h = p.hessian_op(&chart, &c, &x).unwrap();
        assert!((h - &x * (-2.0 / 0.25)).norm() < 1e-14);
        assert!(p.gradient(&chart, &c).unwrap().norm() < 1e-15);
    }

    #[test]
    fn parses_config_schema() {
        let p: Potential = serde_json::from_str(
            r#"{"type":"sum","terms":[{"type":"gaussian","center":[0.0,0.1],"A":1.5,"sigma":0.3},{"type":"zero"}]}"#,
        )
        .unwrap();
        match &p {
            Potential::Sum { terms } => assert_eq!(terms.len(), 2),
            _ => panic!("expected a sum"),
        }
        p.validate(&Sphere2::new()).unwrap();
    }

    #[test]
    fn rejects_invalid_parameters() {
        let chart = Euclidean::new(1);
        let c = DVector::from_vec(vec![0.0]);
        assert!(gaussian_obstacle(&chart, &c, -1.0, 1.0).is_err());
        assert!(gaussian_obstacle(&chart, &c, 1.0, 0.0).is_err());
        assert!(sum(vec![]).is_err());
        let far = DVector::from_vec(vec![5.0, 0.0]);
        assert!(gaussian_obstacle(&Sphere2::new(), &far, 1.0, 1.0).is_err());
    }

    #[test]
    fn riemannian_mode_needs_a_distance_jet() {
        let p = Potential::Gaussian {
            center: vec![0.0, 0.0, 0.0],
            strength: 1.0,
            sigma: 1.0,
            distance: DistanceMode::Riemannian,
        };
        assert!(matches!(
            p.validate(&crate::geometry::So3::new()),
            Err(Error::Unsupported(_))
        ));
    }
}
