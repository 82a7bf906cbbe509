//! Limited-memory BFGS with backtracking line search.

use std::collections::VecDeque;

use crate::error::{Result, VkError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Stop when `|g|_inf <= eps_rel * (1 + |f|)`.
    pub eps_rel: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
    /// Armijo constant.
    pub c1: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            eps_rel: 1e-10,
            max_iters: 5000,
            max_halvings: 60,
            c1: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimize from `x0`. `fg` returns value and gradient. `h0` is an optional
/// positive diagonal approximating the Hessian, used to seed the inverse update.
pub fn minimize<F>(mut fg: F, x0: Vec<f64>, h0: Option<&[f64]>, opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    if let Some(d) = h0 {
        if d.len() != n {
            return Err(VkError::LengthMismatch {
                expected: n,
                got: d.len(),
            });
        }
    }
    let inv_h0: Vec<f64> = match h0 {
        Some(d) => d.iter().map(|v| if *v > 0.0 && v.is_finite() { 1.0 / v } else { 1.0 }).collect(),
        None => vec![1.0; n],
    };

    let mut x = x0;
    let (mut f, mut g) = fg(&x)?;
    let mut evals = 1;
    if !f.is_finite() {
        return Err(VkError::Numeric(format!("objective is not finite at the start: {f}")));
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut gamma = 1.0;

    for it in 0..opts.max_iters {
        let gn = sup(&g);
        if gn <= opts.eps_rel * (1.0 + f.abs()) {
            return Ok(LbfgsResult {
                x,
                f,
                grad_norm: gn,
                iterations: it,
                evaluations: evals,
                converged: true,
            });
        }

        let mut d = two_loop(&g, &hist, &inv_h0, gamma);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            gamma = 1.0;
            d = g.iter().zip(&inv_h0).map(|(gi, h)| -gi * h).collect();
            slope = dot(&g, &d);
        }
        // Without curvature information, cap the first trial step.
        let mut alpha = if hist.is_empty() && h0.is_none() {
            (1.0 / sup(&d)).min(1.0)
        } else {
            1.0
        };

        let eps_f = 1e-12 * (1.0 + f.abs());
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let (ft, gt) = fg(&xt)?;
            evals += 1;
            if ft.is_finite() {
                let armijo = ft <= f + opts.c1 * alpha * slope;
                // Near the roundoff floor the value no longer resolves the decrease;
                // accept on approximate Wolfe conditions instead.
                let dt = dot(&gt, &d);
                let approx_wolfe = ft <= f + eps_f && dt >= 0.9 * slope && dt <= -0.8 * slope;
                if armijo || approx_wolfe {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            return Err(VkError::StepFailure {
                iterations: it,
                halvings: opts.max_halvings,
                objective: f,
                grad_norm: gn,
            });
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            let yhy: f64 = y.iter().zip(&inv_h0).map(|(a, h)| a * a * h).sum();
            gamma = sy / yhy;
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        f = fnew;
        g = gnew;
    }
    let gn = sup(&g);
    Ok(LbfgsResult {
        converged: gn <= opts.eps_rel * (1.0 + f.abs()),
        x,
        f,
        grad_norm: gn,
        iterations: opts.max_iters,
        evaluations: evals,
    })
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, inv_h0: &[f64], gamma: f64) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let mut r: Vec<f64> = q.iter().zip(inv_h0).map(|(qi, h)| gamma * h * qi).collect();
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    r.iter_mut().for_each(|v| *v = -*v);
    r
}
