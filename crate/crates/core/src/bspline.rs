//! Clamped quintic B-splines on uniform knots over `[0, 1]`.

const DEGREE: usize = 5;

#[derive(Debug, Clone)]
pub struct ClampedQuintic {
    intervals: usize,
    knots: Vec<f64>,
}

impl ClampedQuintic {
    /// Basis on `intervals` uniform knot intervals.
    pub fn new(intervals: usize) -> Self {
        assert!(intervals >= 1, "need at least one knot interval");
        let mut knots = vec![0.0; DEGREE];
        for k in 0..=intervals {
            knots.push(k as f64 / intervals as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(DEGREE));
        Self { intervals, knots }
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Number of functions in the full clamped basis.
    pub fn full_dim(&self) -> usize {
        self.intervals + DEGREE
    }

    /// Number of functions vanishing with their first derivative at both ends.
    pub fn interior_dim(&self) -> usize {
        self.intervals + 1
    }

    fn span(&self, s: f64) -> usize {
        let last = self.full_dim() - 1;
        if s >= 1.0 {
            return last;
        }
        let k = (s.max(0.0) * self.intervals as f64).floor() as usize;
        (k + DEGREE).min(last)
    }

    /// Values and derivatives up to `order` of the nonzero full-basis
    /// functions at `s`. Returns the index of the first one and
    /// `ders[k][j]` for derivative `k` of function `first + j`.
    pub fn eval(&self, s: f64, order: usize) -> (usize, Vec<Vec<f64>>) {
        let p = DEGREE;
        let u = &self.knots;
        let i = self.span(s);
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = s - u[i + 1 - j];
            right[j] = u[i + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let n = order.min(p);
        let mut ders = vec![vec![0.0; p + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=n {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        (i - p, ders)
    }

    /// Like [`ClampedQuintic::eval`] but restricted to the interior basis
    /// (the full basis minus two functions at each end), returned as
    /// `(interior index, [value, d1, .., d_order])` pairs.
    pub fn eval_interior(&self, s: f64, order: usize) -> Vec<(usize, Vec<f64>)> {
        let (first, ders) = self.eval(s, order);
        let m = self.interior_dim();
        (0..=DEGREE)
            .filter_map(|j| {
                let full = first + j;
                if full < 2 || full - 2 >= m {
                    return None;
                }
                Some((full - 2, (0..=order).map(|k| ders[k][j]).collect()))
            })
            .collect()
    }
}
