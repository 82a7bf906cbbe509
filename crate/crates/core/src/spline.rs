//! Bicubic not-a-knot spline interpolation of nodal fields, and scalar fields that
//! are either analytic presets or such interpolants.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VkError};
use crate::field::GridSpec;
use crate::presets::{Domain, Jet, ScalarExpr};

/// Not-a-knot cubic interpolation on fixed knots; linear in the data.
#[derive(Clone, Debug)]
struct Cubic1 {
    knots: Vec<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Cubic1 {
    fn new(knots: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        if n < 4 {
            return Err(VkError::Precondition("spline needs at least 4 knots per direction".into()));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        if h.iter().any(|d| !(*d > 0.0)) {
            return Err(VkError::Precondition("spline knots must increase".into()));
        }
        let mut a = DMatrix::zeros(n, n);
        a[(0, 0)] = h[1];
        a[(0, 1)] = -(h[0] + h[1]);
        a[(0, 2)] = h[0];
        for i in 1..n - 1 {
            a[(i, i - 1)] = h[i - 1];
            a[(i, i)] = 2.0 * (h[i - 1] + h[i]);
            a[(i, i + 1)] = h[i];
        }
        a[(n - 1, n - 3)] = h[n - 2];
        a[(n - 1, n - 2)] = -(h[n - 3] + h[n - 2]);
        a[(n - 1, n - 1)] = h[n - 3];
        Ok(Cubic1 { knots, lu: a.lu() })
    }

    /// Power-basis coefficients `[a, b, c, d]` in `s = x - x_k` for each interval `k`.
    fn coefficients(&self, f: &[f64]) -> Vec<[f64; 4]> {
        let n = self.knots.len();
        let h: Vec<f64> = self.knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut rhs = DVector::zeros(n);
        for i in 1..n - 1 {
            rhs[i] = 6.0 * ((f[i + 1] - f[i]) / h[i] - (f[i] - f[i - 1]) / h[i - 1]);
        }
        let m = self.lu.solve(&rhs).expect("not-a-knot system is nonsingular");
        (0..n - 1)
            .map(|k| {
                let hk = h[k];
                [
                    f[k],
                    (f[k + 1] - f[k]) / hk - hk * (2.0 * m[k] + m[k + 1]) / 6.0,
                    0.5 * m[k],
                    (m[k + 1] - m[k]) / (6.0 * hk),
                ]
            })
            .collect()
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.knots.len();
        let k = match self.knots.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        (k, x - self.knots[k])
    }
}

/// `d^j/ds^j s^p` for `p, j` in `0..4`.
fn powers(s: f64) -> [[f64; 4]; 4] {
    let p = [1.0, s, s * s, s * s * s];
    [
        p,
        [0.0, 1.0, 2.0 * s, 3.0 * s * s],
        [0.0, 0.0, 2.0, 6.0 * s],
        [0.0, 0.0, 0.0, 6.0],
    ]
}

/// Tensor-product not-a-knot bicubic interpolant of nodal values.
#[derive(Clone, Debug)]
pub struct BicubicSpline {
    x1: Cubic1,
    x2: Cubic1,
    /// `coef[l][k][p][q]` multiplies `s^p t^q` on cell `(k, l)`.
    coef: Vec<Vec<[[f64; 4]; 4]>>,
}

impl BicubicSpline {
    /// Interpolate nodal values `f` (index `j * n1 + i`) on `grid`.
    pub fn new(grid: &GridSpec, f: &[f64]) -> Result<Self> {
        if f.len() != grid.n_nodes() {
            return Err(VkError::LengthMismatch {
                expected: grid.n_nodes(),
                got: f.len(),
            });
        }
        let x1 = Cubic1::new((0..grid.n1).map(|i| i as f64 * grid.dx1()).collect())?;
        let x2 = Cubic1::new((0..grid.n2).map(|j| j as f64 * grid.dx2()).collect())?;
        let rows: Vec<Vec<[f64; 4]>> = (0..grid.n2)
            .map(|j| x1.coefficients(&f[j * grid.n1..(j + 1) * grid.n1]))
            .collect();
        let (c1, c2) = (grid.n1 - 1, grid.n2 - 1);
        let mut coef = vec![vec![[[0.0; 4]; 4]; c1]; c2];
        for k in 0..c1 {
            for p in 0..4 {
                let data: Vec<f64> = rows.iter().map(|r| r[k][p]).collect();
                for (l, cq) in x2.coefficients(&data).into_iter().enumerate() {
                    coef[l][k][p] = cq;
                }
            }
        }
        Ok(BicubicSpline { x1, x2, coef })
    }

    pub fn jet(&self, x: [f64; 2]) -> Jet {
        let (k, s) = self.x1.locate(x[0]);
        let (l, t) = self.x2.locate(x[1]);
        let c = &self.coef[l][k];
        let ps = powers(s);
        let pt = powers(t);
        let d = |i: usize, j: usize| -> f64 {
            let mut acc = 0.0;
            for p in 0..4 {
                for q in 0..4 {
                    acc += c[p][q] * ps[i][p] * pt[j][q];
                }
            }
            acc
        };
        let (d21, d12) = (d(2, 1), d(1, 2));
        Jet {
            val: d(0, 0),
            d1: [d(1, 0), d(0, 1)],
            d2: [[d(2, 0), d(1, 1)], [d(1, 1), d(0, 2)]],
            d3: [[[d(3, 0), d21], [d21, d12]], [[d21, d12], [d12, d(0, 3)]]],
        }
    }
}

/// A scalar field on the plate given analytically or by interpolation.
#[derive(Clone, Debug)]
pub enum ScalarField {
    Expr(ScalarExpr),
    Spline(Arc<BicubicSpline>),
}

impl ScalarField {
    pub fn zero() -> Self {
        ScalarField::Expr(ScalarExpr::zero())
    }

    pub fn jet(&self, x: [f64; 2], dom: &Domain) -> Jet {
        match self {
            ScalarField::Expr(e) => e.jet(x, dom),
            ScalarField::Spline(s) => s.jet(x),
        }
    }

    pub fn value(&self, x: [f64; 2], dom: &Domain) -> f64 {
        self.jet(x, dom).val
    }
}

impl PartialEq for ScalarField {
    fn eq(&self, o: &Self) -> bool {
        match (self, o) {
            (ScalarField::Expr(a), ScalarField::Expr(b)) => a == b,
            (ScalarField::Spline(a), ScalarField::Spline(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl From<ScalarExpr> for ScalarField {
    fn from(e: ScalarExpr) -> Self {
        ScalarField::Expr(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; grid.n_nodes()];
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                let x = grid.node_x(i, j);
                out[grid.node(i, j)] = f(x[0], x[1]);
            }
        }
        out
    }

    #[test]
    fn reproduces_bicubic_polynomials() {
        let grid = GridSpec::new(1.0, 2.0, 6, 9).unwrap();
        let f = |x: f64, y: f64| 1.0 + x - 2.0 * y + x * x * y + 0.5 * x.powi(3) * y.powi(3) - y.powi(3);
        let s = BicubicSpline::new(&grid, &sample(&grid, f)).unwrap();
        for p in [[0.13, 0.4], [0.77, 1.91], [1.0, 2.0], [0.5, 0.0]] {
            let j = s.jet(p);
            let (x, y) = (p[0], p[1]);
            assert!((j.val - f(x, y)).abs() < 1e-12);
            assert!((j.d1[0] - (1.0 + 2.0 * x * y + 1.5 * x * x * y.powi(3))).abs() < 1e-11);
            assert!((j.d2[0][1] - (2.0 * x + 4.5 * x * x * y * y)).abs() < 1e-10);
            assert!((j.d3[0][0][1] - (2.0 + 9.0 * x * y * y)).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolates_nodes_and_converges() {
        let f = |x: f64, y: f64| (3.0 * x).sin() * (2.0 * y).cos();
        let mut errs = Vec::new();
        for n in [9, 17, 33] {
            let grid = GridSpec::unit_square(n - 1).unwrap();
            let s = BicubicSpline::new(&grid, &sample(&grid, f)).unwrap();
            let x = grid.node_x(3, 5);
            assert!((s.jet(x).val - f(x[0], x[1])).abs() < 1e-13);
            let mut e: f64 = 0.0;
            for a in 0..=20 {
                for b in 0..=20 {
                    let (x, y) = (a as f64 / 20.0 + 0.013, b as f64 / 20.0 - 0.007);
                    let (x, y) = (x.min(1.0), y.max(0.0));
                    e = e.max((s.jet([x, y]).val - f(x, y)).abs());
                }
            }
            errs.push(e);
        }
        assert!(errs[1] < errs[0] / 8.0 && errs[2] < errs[1] / 8.0, "{errs:?}");
    }
}
