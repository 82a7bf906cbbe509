//! Preconditioned conjugate gradients for matrix-free SPD operators.

use crate::error::{Result, VkError};

#[derive(Clone, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// `|r| / |b|` after each iteration, starting with the initial residual.
    pub residual_history: Vec<f64>,
}

impl CgStats {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&0.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A x = b` from `x = 0` with Jacobi preconditioner `diag` (inverted internally).
pub fn solve<A>(apply: A, b: &[f64], diag: Option<&[f64]>, rel_tol: f64, max_iters: usize) -> Result<(Vec<f64>, CgStats)>
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let inv: Vec<f64> = match diag {
        Some(d) => {
            if d.len() != n {
                return Err(VkError::LengthMismatch { expected: n, got: d.len() });
            }
            d.iter().map(|v| if *v > 0.0 { 1.0 / v } else { 1.0 }).collect()
        }
        None => vec![1.0; n],
    };
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    let mut stats = CgStats {
        iterations: 0,
        residual_history: vec![if bnorm > 0.0 { 1.0 } else { 0.0 }],
    };
    if bnorm == 0.0 {
        return Ok((x, stats));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, m)| a * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iters {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(VkError::SolverFailure {
                iterations: it,
                final_residual: stats.final_residual(),
                residual_history: stats.residual_history,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        stats.residual_history.push(rel);
        stats.iterations = it;
        if rel <= rel_tol {
            return Ok((x, stats));
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(VkError::SolverFailure {
        iterations: max_iters,
        final_residual: stats.final_residual(),
        residual_history: stats.residual_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                2.0 * x[i] - l - r
            })
            .collect()
    }

    #[test]
    fn solves_tridiagonal_system() {
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let (x, st) = solve(laplace_1d, &b, Some(&[2.0; 50]), 1e-12, 500).unwrap();
        let ax = laplace_1d(&x);
        let err = ax.iter().zip(&b).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        assert!(err < 1e-10);
        assert!(st.iterations <= 50);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (x, st) = solve(laplace_1d, &[0.0; 4], None, 1e-10, 10).unwrap();
        assert_eq!(x, vec![0.0; 4]);
        assert_eq!(st.iterations, 0);
    }

    #[test]
    fn reports_history_on_failure() {
        let b = vec![1.0; 40];
        match solve(laplace_1d, &b, None, 1e-14, 3) {
            Err(VkError::SolverFailure { iterations, residual_history, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(residual_history.len(), 4);
            }
            other => panic!("{other:?}"),
        }
    }
}
