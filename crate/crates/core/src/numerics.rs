//! Small numerical kernels shared by the solver modules: the fixed-step
//! integrator, quadrature weights, finite-difference stencils and dense
//! output.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One classical fourth-order Runge-Kutta step of `dy/dt = f(t, y)`.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, y)?;
    let y2 = y + &k1 * (0.5 * h);
    let k2 = f(t + 0.5 * h, &y2)?;
    let y3 = y + &k2 * (0.5 * h);
    let k3 = f(t + 0.5 * h, &y3)?;
    let y4 = y + &k3 * h;
    let k4 = f(t + h, &y4)?;
    let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { time: t + h });
    }
    Ok(next)
}

/// Composite quadrature weights on `intervals` uniform intervals of width `h`.
///
/// Simpson's rule when the interval count is even; otherwise Simpson on the
/// leading intervals and the 3/8 rule on the last three. One interval falls
/// back to the trapezoid rule.
pub fn simpson_weights(intervals: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; intervals + 1];
    match intervals {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ => {
            let (simpson_end, tail) = if intervals % 2 == 0 {
                (intervals, false)
            } else {
                (intervals - 3, true)
            };
            let mut k = 0;
            while k < simpson_end {
                w[k] += h / 3.0;
                w[k + 1] += 4.0 * h / 3.0;
                w[k + 2] += h / 3.0;
                k += 2;
            }
            if tail {
                let s = simpson_end;
                w[s] += 3.0 * h / 8.0;
                w[s + 1] += 9.0 * h / 8.0;
                w[s + 2] += 9.0 * h / 8.0;
                w[s + 3] += 3.0 * h / 8.0;
            }
        }
    }
    w
}

pub fn simpson(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    simpson_weights(values.len() - 1, h)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

/// Finite-difference weights (Fornberg) for derivatives `0..=order` at `x0`
/// from samples at `nodes`. Returns `weights[k][j]` for derivative `k`, node `j`.
pub fn fornberg_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

const STENCIL: usize = 7;

/// First and second derivatives of uniformly sampled vectors, using 7-point
/// stencils (central in the interior, one-sided near the ends).
pub fn grid_derivatives(
    samples: &[DVector<f64>],
    h: f64,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let count = samples.len();
    if count < STENCIL {
        return Err(Error::contract(format!(
            "grid derivatives need at least {STENCIL} samples, got {count}"
        )));
    }
    let half = STENCIL / 2;
    let offsets: Vec<f64> = (0..STENCIL).map(|j| j as f64).collect();
    // weights indexed by the position of the evaluation node inside the stencil
    let patterns: Vec<Vec<Vec<f64>>> = (0..STENCIL)
        .map(|p| fornberg_weights(p as f64, &offsets, 2))
        .collect();
    let dim = samples[0].len();
    let mut first = Vec::with_capacity(count);
    let mut second = Vec::with_capacity(count);
    for k in 0..count {
        let start = k.saturating_sub(half).min(count - STENCIL);
        let w = &patterns[k - start];
        let mut d1 = DVector::zeros(dim);
        let mut d2 = DVector::zeros(dim);
        for j in 0..STENCIL {
            let s = &samples[start + j];
            d1.axpy(w[1][j] / h, s, 1.0);
            d2.axpy(w[2][j] / (h * h), s, 1.0);
        }
        first.push(d1);
        second.push(d2);
    }
    Ok((first, second))
}

/// Quintic Hermite interpolation on one interval of width `h`, given values,
/// first and second derivatives at both ends; `s` in `[0, 1]`.
/// Returns the value and its time derivative.
#[allow(clippy::too_many_arguments)]
pub fn quintic_hermite(
    s: f64,
    h: f64,
    p0: &DVector<f64>,
    d0: &DVector<f64>,
    s0: &DVector<f64>,
    p1: &DVector<f64>,
    d1: &DVector<f64>,
    s1: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h2 = 0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5;
    let h3 = 0.5 * s3 - s4 + 0.5 * s5;
    let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    let g0 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4;
    let g1 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4;
    let g2 = s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4;
    let g3 = 1.5 * s2 - 4.0 * s3 + 2.5 * s4;
    let g4 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4;
    let g5 = 30.0 * s2 - 60.0 * s3 + 30.0 * s4;
    let value = p0 * h0 + d0 * (h * h1) + s0 * (h * h * h2) + s1 * (h * h * h3) + d1 * (h * h4) + p1 * h5;
    let rate = (p0 * g0 + d0 * (h * g1) + s0 * (h * h * g2) + s1 * (h * h * g3) + d1 * (h * g4) + p1 * g5) / h;
    (value, rate)
}

/// Ratio of extreme singular values, `sigma_max / sigma_min` (infinite when singular).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn sup_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics_even_and_odd() {
        for intervals in [2usize, 3, 7, 10] {
            let h = 1.0 / intervals as f64;
            let vals: Vec<f64> = (0..=intervals).map(|k| (k as f64 * h).powi(3)).collect();
            assert!((simpson(&vals, h) - 0.25).abs() < 1e-14, "{intervals}");
        }
    }

    #[test]
    fn fornberg_central_second_difference() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[2][0] - 1.0).abs() < 1e-14);
        assert!((w[2][1] + 2.0).abs() < 1e-14);
        assert!((w[1][2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn grid_derivatives_of_sextic_are_exact() {
        let h = 0.1;
        let samples: Vec<DVector<f64>> = (0..12)
            .map(|k| DVector::from_element(1, (k as f64 * h).powi(6)))
            .collect();
        let (d1, d2) = grid_derivatives(&samples, h).unwrap();
        for (k, (a, b)) in d1.iter().zip(&d2).enumerate() {
            let t = k as f64 * h;
            assert!((a[0] - 6.0 * t.powi(5)).abs() < 1e-9);
            assert!((b[0] - 30.0 * t.powi(4)).abs() < 1e-8);
        }
    }

    #[test]
    fn quintic_hermite_reproduces_quintic() {
        let p = |t: f64| t.powi(5) - 2.0 * t.powi(3) + t;
        let dp = |t: f64| 5.0 * t.powi(4) - 6.0 * t * t + 1.0;
        let ddp = |t: f64| 20.0 * t.powi(3) - 12.0 * t;
        let (a, b) = (0.3, 0.7);
        let v = |x: f64| DVector::from_element(1, x);
        let (val, rate) = quintic_hermite(
            0.25,
            b - a,
            &v(p(a)),
            &v(dp(a)),
            &v(ddp(a)),
            &v(p(b)),
            &v(dp(b)),
            &v(ddp(b)),
        );
        let t = a + 0.25 * (b - a);
        assert!((val[0] - p(t)).abs() < 1e-13);
        assert!((rate[0] - dp(t)).abs() < 1e-12);
    }
}
