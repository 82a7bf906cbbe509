//! Analytic field presets with derivatives up to third order.
//!
//! Presets are written as sums of terms, e.g. `pure_bend(1.0)+bump(0.2)`, and
//! are evaluated on a rectangle `[0, l1] x [0, l2]`. They serve as boundary
//! data, initial data, loads and thin-film generators.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Result, VkError};

/// Value and derivatives of a scalar field at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub val: f64,
    pub d1: [f64; 2],
    pub d2: [[f64; 2]; 2],
    pub d3: [[[f64; 2]; 2]; 2],
}

impl Jet {
    fn add(&mut self, o: &Jet) {
        self.val += o.val;
        for i in 0..2 {
            self.d1[i] += o.d1[i];
            for j in 0..2 {
                self.d2[i][j] += o.d2[i][j];
                for k in 0..2 {
                    self.d3[i][j][k] += o.d3[i][j][k];
                }
            }
        }
    }
}

/// Rectangle `[0, l1] x [0, l2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub l1: f64,
    pub l2: f64,
}

impl Domain {
    pub fn unit() -> Self {
        Domain { l1: 1.0, l2: 1.0 }
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * self.l1, 0.5 * self.l2]
    }

    pub fn area(&self) -> f64 {
        self.l1 * self.l2
    }
}

/// One term of a scalar preset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarTerm {
    Constant(f64),
    /// `a x1 + b x2 + c`
    Linear { a: f64, b: f64, c: f64 },
    /// `(a11 x1^2 + 2 a12 x1 x2 + a22 x2^2)/2 + b1 x1 + b2 x2 + c`
    Quadratic {
        a11: f64,
        a12: f64,
        a22: f64,
        b1: f64,
        b2: f64,
        c: f64,
    },
    /// `kappa (x1 - c1)^2 / 2`, centered on the plate.
    PureBendV { kappa: f64 },
    /// `-kappa^2 (x1 - c1)^3 / 6`, the in-plane companion of [`ScalarTerm::PureBendV`]
    /// that cancels the membrane strain.
    PureBendU { kappa: f64 },
    /// `amp sin(pi x1/l1) sin(pi x2/l2)`
    Sine { amp: f64 },
    /// `amp sin^2(pi x1/l1) sin^2(pi x2/l2)`; vanishes with its gradient on the boundary.
    Bump { amp: f64 },
    /// `amp exp(-|x - x0|^2 / (2 sigma^2))`
    Gaussian { x0: f64, y0: f64, sigma: f64, amp: f64 },
    /// `amp exp(x1) cos(x2)` (harmonic)
    ExpCos { amp: f64 },
    /// `amp exp(x1) sin(x2)` (harmonic)
    ExpSin { amp: f64 },
}

/// `(f, f', f'', f''')` of a 1D function at `t`.
type Jet1 = [f64; 4];

fn sin_jet(w: f64, t: f64) -> Jet1 {
    let (s, c) = (w * t).sin_cos();
    [s, w * c, -w * w * s, -w * w * w * c]
}

fn sin2_jet(w: f64, t: f64) -> Jet1 {
    // sin^2(wt) = (1 - cos(2wt))/2
    let (s, c) = (2.0 * w * t).sin_cos();
    let w2 = 2.0 * w;
    [0.5 * (1.0 - c), 0.5 * w2 * s, 0.5 * w2 * w2 * c, -0.5 * w2 * w2 * w2 * s]
}

/// Jet of the product `f(x1) g(x2)`.
fn product_jet(f: Jet1, g: Jet1) -> Jet {
    let d = |a: usize, b: usize| f[a] * g[b];
    Jet {
        val: d(0, 0),
        d1: [d(1, 0), d(0, 1)],
        d2: [[d(2, 0), d(1, 1)], [d(1, 1), d(0, 2)]],
        d3: [
            [[d(3, 0), d(2, 1)], [d(2, 1), d(1, 2)]],
            [[d(2, 1), d(1, 2)], [d(1, 2), d(0, 3)]],
        ],
    }
}

impl ScalarTerm {
    pub fn jet(&self, x: [f64; 2], dom: &Domain) -> Jet {
        let c = dom.center();
        match *self {
            ScalarTerm::Constant(v) => Jet {
                val: v,
                ..Jet::default()
            },
            ScalarTerm::Linear { a, b, c } => Jet {
                val: a * x[0] + b * x[1] + c,
                d1: [a, b],
                ..Jet::default()
            },
            ScalarTerm::Quadratic {
                a11,
                a12,
                a22,
                b1,
                b2,
                c,
            } => Jet {
                val: 0.5 * (a11 * x[0] * x[0] + 2.0 * a12 * x[0] * x[1] + a22 * x[1] * x[1])
                    + b1 * x[0]
                    + b2 * x[1]
                    + c,
                d1: [a11 * x[0] + a12 * x[1] + b1, a12 * x[0] + a22 * x[1] + b2],
                d2: [[a11, a12], [a12, a22]],
                ..Jet::default()
            },
            ScalarTerm::PureBendV { kappa } => {
                let s = x[0] - c[0];
                product_jet([0.5 * kappa * s * s, kappa * s, kappa, 0.0], [1.0, 0.0, 0.0, 0.0])
            }
            ScalarTerm::PureBendU { kappa } => {
                let s = x[0] - c[0];
                let k2 = kappa * kappa;
                product_jet(
                    [-k2 * s * s * s / 6.0, -0.5 * k2 * s * s, -k2 * s, -k2],
                    [1.0, 0.0, 0.0, 0.0],
                )
            }
            ScalarTerm::Sine { amp } => {
                let mut j = product_jet(sin_jet(PI / dom.l1, x[0]), sin_jet(PI / dom.l2, x[1]));
                scale_jet(&mut j, amp);
                j
            }
            ScalarTerm::Bump { amp } => {
                let mut j = product_jet(sin2_jet(PI / dom.l1, x[0]), sin2_jet(PI / dom.l2, x[1]));
                scale_jet(&mut j, amp);
                j
            }
            ScalarTerm::Gaussian { x0, y0, sigma, amp } => {
                let s2 = sigma * sigma;
                let g = |t: f64| -> Jet1 {
                    let e = (-t * t / (2.0 * s2)).exp();
                    [
                        e,
                        -t / s2 * e,
                        (t * t / (s2 * s2) - 1.0 / s2) * e,
                        (3.0 * t / (s2 * s2) - t * t * t / (s2 * s2 * s2)) * e,
                    ]
                };
                let mut j = product_jet(g(x[0] - x0), g(x[1] - y0));
                scale_jet(&mut j, amp);
                j
            }
            ScalarTerm::ExpCos { amp } => {
                let e = x[0].exp();
                let (s, co) = x[1].sin_cos();
                let mut j = product_jet([e, e, e, e], [co, -s, -co, s]);
                scale_jet(&mut j, amp);
                j
            }
            ScalarTerm::ExpSin { amp } => {
                let e = x[0].exp();
                let (s, co) = x[1].sin_cos();
                let mut j = product_jet([e, e, e, e], [s, co, -s, -co]);
                scale_jet(&mut j, amp);
                j
            }
        }
    }

    fn fmt_term(&self) -> String {
        match *self {
            ScalarTerm::Constant(c) => format!("constant({c:?})"),
            ScalarTerm::Linear { a, b, c } => format!("linear({a:?},{b:?},{c:?})"),
            ScalarTerm::Quadratic {
                a11,
                a12,
                a22,
                b1,
                b2,
                c,
            } => format!("quadratic({a11:?},{a12:?},{a22:?},{b1:?},{b2:?},{c:?})"),
            ScalarTerm::PureBendV { kappa } => format!("pure_bend({kappa:?})"),
            ScalarTerm::PureBendU { kappa } => format!("pure_bend_u({kappa:?})"),
            ScalarTerm::Sine { amp } => format!("sine({amp:?})"),
            ScalarTerm::Bump { amp } => format!("bump({amp:?})"),
            ScalarTerm::Gaussian { x0, y0, sigma, amp } => {
                format!("gaussian({x0:?},{y0:?},{sigma:?},{amp:?})")
            }
            ScalarTerm::ExpCos { amp } => format!("expcos({amp:?})"),
            ScalarTerm::ExpSin { amp } => format!("expsin({amp:?})"),
        }
    }
}

fn scale_jet(j: &mut Jet, s: f64) {
    j.val *= s;
    for i in 0..2 {
        j.d1[i] *= s;
        for k in 0..2 {
            j.d2[i][k] *= s;
            for l in 0..2 {
                j.d3[i][k][l] *= s;
            }
        }
    }
}

/// Sum of scalar terms. The empty sum is the zero field.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalarExpr {
    pub terms: Vec<ScalarTerm>,
}

impl ScalarExpr {
    pub fn zero() -> Self {
        ScalarExpr { terms: Vec::new() }
    }

    pub fn term(t: ScalarTerm) -> Self {
        ScalarExpr { terms: vec![t] }
    }

    pub fn plus(mut self, t: ScalarTerm) -> Self {
        self.terms.push(t);
        self
    }

    pub fn jet(&self, x: [f64; 2], dom: &Domain) -> Jet {
        let mut out = Jet::default();
        for t in &self.terms {
            out.add(&t.jet(x, dom));
        }
        out
    }

    pub fn value(&self, x: [f64; 2], dom: &Domain) -> f64 {
        self.jet(x, dom).val
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| match t {
            ScalarTerm::Constant(c) => *c == 0.0,
            ScalarTerm::Sine { amp }
            | ScalarTerm::Bump { amp }
            | ScalarTerm::ExpCos { amp }
            | ScalarTerm::ExpSin { amp }
            | ScalarTerm::Gaussian { amp, .. } => *amp == 0.0,
            _ => false,
        })
    }

    pub fn parse(src: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for (name, args) in split_terms(src)? {
            let t = match (name.as_str(), args.as_slice()) {
                ("zero", []) => continue,
                ("constant", [c]) => ScalarTerm::Constant(*c),
                ("linear", [a, b]) => ScalarTerm::Linear { a: *a, b: *b, c: 0.0 },
                ("linear", [a, b, c]) => ScalarTerm::Linear { a: *a, b: *b, c: *c },
                ("quadratic", [a11, a12, a22]) => ScalarTerm::Quadratic {
                    a11: *a11,
                    a12: *a12,
                    a22: *a22,
                    b1: 0.0,
                    b2: 0.0,
                    c: 0.0,
                },
                ("quadratic", [a11, a12, a22, b1, b2, c]) => ScalarTerm::Quadratic {
                    a11: *a11,
                    a12: *a12,
                    a22: *a22,
                    b1: *b1,
                    b2: *b2,
                    c: *c,
                },
                ("pure_bend", [k]) => ScalarTerm::PureBendV { kappa: *k },
                ("pure_bend_u", [k]) => ScalarTerm::PureBendU { kappa: *k },
                ("sine", [a]) => ScalarTerm::Sine { amp: *a },
                ("bump", [a]) => ScalarTerm::Bump { amp: *a },
                ("gaussian", [x0, s, a]) => {
                    if *s <= 0.0 {
                        return Err(VkError::config(src, "gaussian width must be positive"));
                    }
                    ScalarTerm::Gaussian {
                        x0: *x0,
                        y0: *x0,
                        sigma: *s,
                        amp: *a,
                    }
                }
                ("gaussian", [x0, y0, s, a]) => {
                    if *s <= 0.0 {
                        return Err(VkError::config(src, "gaussian width must be positive"));
                    }
                    ScalarTerm::Gaussian {
                        x0: *x0,
                        y0: *y0,
                        sigma: *s,
                        amp: *a,
                    }
                }
                ("expcos", [a]) => ScalarTerm::ExpCos { amp: *a },
                ("expsin", [a]) => ScalarTerm::ExpSin { amp: *a },
                (n, a) => {
                    return Err(VkError::config(
                        src,
                        format!("unknown scalar preset `{n}` with {} arguments", a.len()),
                    ))
                }
            };
            terms.push(t);
        }
        Ok(ScalarExpr { terms })
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "zero");
        }
        let parts: Vec<String> = self.terms.iter().map(ScalarTerm::fmt_term).collect();
        write!(f, "{}", parts.join("+"))
    }
}

/// One term of an in-plane vector preset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VectorTerm {
    Constant(f64, f64),
    /// `u = A x` with `A` row-major.
    Linear([[f64; 2]; 2]),
    /// `(-kappa^2 (x1 - c1)^3 / 6, 0)`
    PureBend { kappa: f64 },
    /// `(amp sin sin, 0)`
    Sine1 { amp: f64 },
    /// `(0, amp sin sin)`
    Sine2 { amp: f64 },
    /// `amp grad(exp(x1) cos x2)`: divergence free with divergence-free symmetric gradient.
    Harmonic { amp: f64 },
}

impl VectorTerm {
    fn components(&self) -> [ScalarExpr; 2] {
        use ScalarTerm as S;
        match *self {
            VectorTerm::Constant(a, b) => [
                ScalarExpr::term(S::Constant(a)),
                ScalarExpr::term(S::Constant(b)),
            ],
            VectorTerm::Linear(m) => [
                ScalarExpr::term(S::Linear {
                    a: m[0][0],
                    b: m[0][1],
                    c: 0.0,
                }),
                ScalarExpr::term(S::Linear {
                    a: m[1][0],
                    b: m[1][1],
                    c: 0.0,
                }),
            ],
            VectorTerm::PureBend { kappa } => [ScalarExpr::term(S::PureBendU { kappa }), ScalarExpr::zero()],
            VectorTerm::Sine1 { amp } => [ScalarExpr::term(S::Sine { amp }), ScalarExpr::zero()],
            VectorTerm::Sine2 { amp } => [ScalarExpr::zero(), ScalarExpr::term(S::Sine { amp })],
            VectorTerm::Harmonic { amp } => [
                ScalarExpr::term(S::ExpCos { amp }),
                ScalarExpr::term(S::ExpSin { amp: -amp }),
            ],
        }
    }

    fn fmt_term(&self) -> String {
        match *self {
            VectorTerm::Constant(a, b) => format!("constant({a:?},{b:?})"),
            VectorTerm::Linear(m) => format!(
                "linear({:?},{:?},{:?},{:?})",
                m[0][0], m[0][1], m[1][0], m[1][1]
            ),
            VectorTerm::PureBend { kappa } => format!("pure_bend({kappa:?})"),
            VectorTerm::Sine1 { amp } => format!("sine({amp:?})"),
            VectorTerm::Sine2 { amp } => format!("sine2({amp:?})"),
            VectorTerm::Harmonic { amp } => format!("harmonic({amp:?})"),
        }
    }
}

/// Sum of vector terms. The empty sum is the zero field.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VectorExpr {
    pub terms: Vec<VectorTerm>,
}

impl VectorExpr {
    pub fn zero() -> Self {
        VectorExpr { terms: Vec::new() }
    }

    pub fn term(t: VectorTerm) -> Self {
        VectorExpr { terms: vec![t] }
    }

    pub fn plus(mut self, t: VectorTerm) -> Self {
        self.terms.push(t);
        self
    }

    pub fn components(&self) -> [ScalarExpr; 2] {
        let mut out = [ScalarExpr::zero(), ScalarExpr::zero()];
        for t in &self.terms {
            let [a, b] = t.components();
            out[0].terms.extend(a.terms);
            out[1].terms.extend(b.terms);
        }
        out
    }

    pub fn jets(&self, x: [f64; 2], dom: &Domain) -> [Jet; 2] {
        let [a, b] = self.components();
        [a.jet(x, dom), b.jet(x, dom)]
    }

    pub fn parse(src: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for (name, args) in split_terms(src)? {
            let t = match (name.as_str(), args.as_slice()) {
                ("zero", []) => continue,
                ("constant", [a, b]) => VectorTerm::Constant(*a, *b),
                ("linear", [a, b, c, d]) => VectorTerm::Linear([[*a, *b], [*c, *d]]),
                ("pure_bend", [k]) => VectorTerm::PureBend { kappa: *k },
                ("sine", [a]) => VectorTerm::Sine1 { amp: *a },
                ("sine2", [a]) => VectorTerm::Sine2 { amp: *a },
                ("harmonic", [a]) => VectorTerm::Harmonic { amp: *a },
                (n, a) => {
                    return Err(VkError::config(
                        src,
                        format!("unknown vector preset `{n}` with {} arguments", a.len()),
                    ))
                }
            };
            terms.push(t);
        }
        Ok(VectorExpr { terms })
    }
}

impl fmt::Display for VectorExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "zero");
        }
        let parts: Vec<String> = self.terms.iter().map(VectorTerm::fmt_term).collect();
        write!(f, "{}", parts.join("+"))
    }
}

/// Split `name(a,b)+name2(c)` into terms at parenthesis depth zero.
fn split_terms(src: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut pieces = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in src.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(VkError::config(src, "unbalanced parentheses"));
                }
            }
            '+' if depth == 0 => {
                pieces.push(&src[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(VkError::config(src, "unbalanced parentheses"));
    }
    pieces.push(&src[start..]);

    pieces
        .into_iter()
        .map(|p| {
            let p = p.trim();
            if p.is_empty() {
                return Err(VkError::config(src, "empty preset term"));
            }
            match p.find('(') {
                None => Ok((p.to_string(), Vec::new())),
                Some(open) => {
                    if !p.ends_with(')') {
                        return Err(VkError::config(src, format!("malformed term `{p}`")));
                    }
                    let name = p[..open].trim().to_string();
                    let inner = &p[open + 1..p.len() - 1];
                    let args = if inner.trim().is_empty() {
                        Vec::new()
                    } else {
                        inner
                            .split(',')
                            .map(|a| {
                                a.trim().parse::<f64>().map_err(|_| {
                                    VkError::config(src, format!("bad number `{}`", a.trim()))
                                })
                            })
                            .collect::<Result<Vec<_>>>()?
                    };
                    Ok((name, args))
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(e: &ScalarExpr, x: [f64; 2], dom: &Domain) {
        let h = 1e-5;
        let j = e.jet(x, dom);
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let (jp, jm) = (e.jet(xp, dom), e.jet(xm, dom));
            assert!(((jp.val - jm.val) / (2.0 * h) - j.d1[k]).abs() < 1e-7);
            for a in 0..2 {
                assert!(((jp.d1[a] - jm.d1[a]) / (2.0 * h) - j.d2[a][k]).abs() < 1e-6);
                for b in 0..2 {
                    assert!(((jp.d2[a][b] - jm.d2[a][b]) / (2.0 * h) - j.d3[a][b][k]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn jets_match_finite_differences() {
        let dom = Domain { l1: 1.3, l2: 0.8 };
        for src in [
            "pure_bend(1.5)",
            "pure_bend_u(0.7)",
            "sine(0.3)",
            "bump(2.0)",
            "gaussian(0.4,0.5,0.2,1.1)",
            "expcos(0.5)+expsin(-0.2)",
            "quadratic(1,2,3,4,5,6)+linear(1,-2,0.5)",
        ] {
            let e = ScalarExpr::parse(src).unwrap();
            fd_check(&e, [0.37, 0.61], &dom);
        }
    }

    #[test]
    fn parse_display_roundtrip() {
        let e = ScalarExpr::parse("pure_bend(1)+bump(0.25)+linear(1,2,1e+3)").unwrap();
        assert_eq!(ScalarExpr::parse(&e.to_string()).unwrap(), e);
        let v = VectorExpr::parse("pure_bend(1.0)+sine(0.1)+zero").unwrap();
        assert_eq!(VectorExpr::parse(&v.to_string()).unwrap(), v);
        assert_eq!(ScalarExpr::parse("zero").unwrap().to_string(), "zero");
    }

    #[test]
    fn parse_errors() {
        assert!(ScalarExpr::parse("warp(1)").is_err());
        assert!(ScalarExpr::parse("sine(1").is_err());
        assert!(ScalarExpr::parse("sine(x)").is_err());
        assert!(VectorExpr::parse("constant(1)").is_err());
    }

    #[test]
    fn harmonic_field_has_divergence_free_strain() {
        let u = VectorExpr::parse("harmonic(1)").unwrap();
        let [a, b] = u.jets([0.3, 0.4], &Domain::unit());
        // div e(u) = (lap u + grad div u)/2
        let lap = [a.d2[0][0] + a.d2[1][1], b.d2[0][0] + b.d2[1][1]];
        let div = a.d1[0] + b.d1[1];
        assert!(lap[0].abs() < 1e-14 && lap[1].abs() < 1e-14 && div.abs() < 1e-14);
    }
}
