//! Gauss-Legendre rules mapped to arbitrary intervals.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// `n`-point rule on `[a, b]` as `(node, weight)` pairs. `n` must be positive.
pub fn rule(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(n).expect("quadrature needs at least one point");
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GaussLegendre::new(n)
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect()
}
