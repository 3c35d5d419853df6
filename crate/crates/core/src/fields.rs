//! Vector fields along sampled trajectories.
//!
//! A field is stored as coordinate components of `X` and its covariant
//! derivatives on the trajectory grid. Fields written in a parallel
//! orthonormal frame `E_i` as `X = Σ f_i E_i` have `D^k X = Σ f_i^(k) E_i`
//! exactly, which is how test and basis fields are built.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::{orthonormal_frame, parallel_transport_from, Chart};

/// Samples of `X, DX, D²X` and optionally `D³X, D⁴X` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSamples {
    pub x: Vec<DVector<f64>>,
    pub dx: Vec<DVector<f64>>,
    pub d2x: Vec<DVector<f64>>,
    pub d3x: Option<Vec<DVector<f64>>>,
    pub d4x: Option<Vec<DVector<f64>>>,
}

/// A field in `T_qΩ`: vanishing with its covariant derivative at both ends.
pub type AdmissibleField = FieldSamples;

impl FieldSamples {
    pub fn zeros(len: usize, n: usize) -> Self {
        let z = vec![DVector::zeros(n); len];
        Self {
            x: z.clone(),
            dx: z.clone(),
            d2x: z.clone(),
            d3x: Some(z.clone()),
            d4x: Some(z),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.x.iter().fold(0.0, |m, v| m.max(v.amax()))
    }

    /// `α·self + other`.
    pub fn axpy(&self, alpha: f64, other: &FieldSamples) -> Result<FieldSamples> {
        if self.len() != other.len() {
            return Err(Error::contract("fields live on different grids"));
        }
        let comb = |a: &[DVector<f64>], b: &[DVector<f64>]| -> Vec<DVector<f64>> {
            a.iter().zip(b).map(|(u, v)| u * alpha + v).collect()
        };
        let opt = |a: &Option<Vec<DVector<f64>>>, b: &Option<Vec<DVector<f64>>>| match (a, b) {
            (Some(a), Some(b)) => Some(comb(a, b)),
            _ => None,
        };
        Ok(FieldSamples {
            x: comb(&self.x, &other.x),
            dx: comb(&self.dx, &other.dx),
            d2x: comb(&self.d2x, &other.d2x),
            d3x: opt(&self.d3x, &other.d3x),
            d4x: opt(&self.d4x, &other.d4x),
        })
    }

    pub fn scaled(&self, alpha: f64) -> FieldSamples {
        let sc = |a: &[DVector<f64>]| a.iter().map(|u| u * alpha).collect::<Vec<_>>();
        FieldSamples {
            x: sc(&self.x),
            dx: sc(&self.dx),
            d2x: sc(&self.d2x),
            d3x: self.d3x.as_deref().map(sc),
            d4x: self.d4x.as_deref().map(sc),
        }
    }

    /// Restriction to grid nodes `k0..=k1`.
    pub fn slice(&self, k0: usize, k1: usize) -> FieldSamples {
        let cut = |a: &[DVector<f64>]| a[k0..=k1].to_vec();
        FieldSamples {
            x: cut(&self.x),
            dx: cut(&self.dx),
            d2x: cut(&self.d2x),
            d3x: self.d3x.as_deref().map(cut),
            d4x: self.d4x.as_deref().map(cut),
        }
    }

    /// Checks `X = DX = 0` at both ends within `1e-12` relative to the field size.
    pub fn check_admissible(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::contract("field needs at least two samples"));
        }
        let tol = 1e-12 * (1.0 + self.sup_norm());
        let last = self.len() - 1;
        for k in [0, last] {
            if self.x[k].amax() > tol || self.dx[k].amax() > tol {
                return Err(Error::contract(
                    "field does not vanish with its covariant derivative at the endpoints",
                ));
            }
        }
        Ok(())
    }
}

/// Polynomial in the normalized time `s = (t − t0)/T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub coeffs: Vec<f64>,
    pub t0: f64,
    pub span: f64,
}

impl Profile {
    pub fn new(coeffs: Vec<f64>, t0: f64, span: f64) -> Self {
        Self { coeffs, t0, span }
    }

    /// `s²(1 − s)² p(s)`: vanishes to first order at both ends.
    pub fn admissible(inner: &[f64], t0: f64, span: f64) -> Self {
        let bump = [0.0, 0.0, 1.0, -2.0, 1.0];
        let mut coeffs = vec![0.0; bump.len() + inner.len().max(1) - 1];
        for (i, b) in bump.iter().enumerate() {
            for (j, c) in inner.iter().enumerate() {
                coeffs[i + j] += b * c;
            }
        }
        Self::new(coeffs, t0, span)
    }

    /// Value and first four time derivatives.
    pub fn eval(&self, t: f64) -> [f64; 5] {
        let s = (t - self.t0) / self.span;
        let mut out = [0.0; 5];
        let mut c: Vec<f64> = self.coeffs.clone();
        let mut scale = 1.0;
        for d in out.iter_mut() {
            *d = c.iter().rev().fold(0.0, |acc, v| acc * s + v) * scale;
            c = c.iter().enumerate().skip(1).map(|(i, v)| v * i as f64).collect();
            scale /= self.span;
        }
        out
    }
}

/// An orthonormal frame at the first node transported along the trajectory.
pub fn parallel_frame(chart: &dyn Chart, traj: &Trajectory) -> Result<Vec<Vec<DVector<f64>>>> {
    let e0 = orthonormal_frame(chart, &traj.first().q)?;
    parallel_transport_from(chart, traj, 0, &e0)
}

/// `X(t) = Σ_i f_i(t) E_i(t)` where `profile(i, t)` returns `f_i` and its
/// first four derivatives.
pub fn field_from_frame<F>(frame: &[Vec<DVector<f64>>], times: &[f64], profile: F) -> FieldSamples
where
    F: Fn(usize, f64) -> [f64; 5],
{
    let n = frame[0].len();
    let dim = frame[0][0].len();
    let mut parts: [Vec<DVector<f64>>; 5] = Default::default();
    for (k, t) in times.iter().enumerate() {
        let mut acc = vec![DVector::zeros(dim); 5];
        for i in 0..n {
            let f = profile(i, *t);
            for d in 0..5 {
                if f[d] != 0.0 {
                    acc[d].axpy(f[d], &frame[k][i], 1.0);
                }
            }
        }
        for (d, v) in acc.into_iter().enumerate() {
            parts[d].push(v);
        }
    }
    let [x, dx, d2x, d3x, d4x] = parts;
    FieldSamples {
        x,
        dx,
        d2x,
        d3x: Some(d3x),
        d4x: Some(d4x),
    }
}

/// Frame-component profiles of a random admissible field: each component is
/// `s²(1 − s)²` times a polynomial of degree `degree` with standard normal
/// coefficients.
pub fn random_profiles<R: Rng>(rng: &mut R, n: usize, degree: usize, t0: f64, span: f64) -> Vec<Profile> {
    (0..n)
        .map(|_| {
            let inner: Vec<f64> = (0..=degree).map(|_| rng.sample(StandardNormal)).collect();
            Profile::admissible(&inner, t0, span)
        })
        .collect()
}

/// A random admissible field along the trajectory.
pub fn random_admissible_field<R: Rng>(
    chart: &dyn Chart,
    traj: &Trajectory,
    frame: &[Vec<DVector<f64>>],
    rng: &mut R,
    degree: usize,
) -> FieldSamples {
    let profiles = random_profiles(rng, chart.dim(), degree, traj.start_time(), traj.duration());
    field_from_frame(frame, &traj.times(), |i, t| profiles[i].eval(t))
}
