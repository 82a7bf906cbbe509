//! Thin three-dimensional films evaluated on recovery-ansatz deformations
//!
//! For generators `(u, v, d)` on `S` and thickness `h` the deformation of
//! `Omega = S x (-1/2, 1/2)` is
//! `y = (x', h x3) + (h^2 u, h v) - h^2 x3 (grad v, 0) + h^3 x3 d + h^3 x3^2 c e3`,
//! with `c = 0` unless a through-thickness stretch is supplied.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Result, VkError};
use crate::field::GridSpec;
use crate::gauss;
use crate::presets::{Domain, Jet, ScalarExpr, VectorExpr};
use crate::spline::ScalarField;
use crate::tensor::{MaterialSpec, ReducedForms, Sym2, Tensor3};

/// Neighborhood of `SO(3)` in which the stored energy is evaluated.
pub const SO3_RADIUS: f64 = 0.5;

/// Width of the boundary taper applied to the corrector `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaperWidth {
    Fixed(f64),
    /// `c h^exponent`.
    Scaled { c: f64, exponent: f64 },
}

impl Default for TaperWidth {
    /// `0.2 h^(1/4)`: shrinks with `h` while `sqrt(h) |d|_{W^2,inf}` stays bounded.
    fn default() -> Self {
        TaperWidth::Scaled { c: 0.2, exponent: 0.25 }
    }
}

impl TaperWidth {
    pub fn width(&self, h: f64) -> f64 {
        match *self {
            TaperWidth::Fixed(w) => w,
            TaperWidth::Scaled { c, exponent } => c * h.powf(exponent),
        }
    }
}

/// Choice of the corrector field `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Corrector {
    Zero,
    /// `d = -|grad v|^2 / 2 e3`, multiplied by a smooth taper vanishing on the boundary.
    TaperedStretch(TaperWidth),
}

/// Smooth generator fields of an ansatz deformation.
#[derive(Clone, Debug, PartialEq)]
pub struct Generators {
    pub domain: Domain,
    pub u: [ScalarField; 2],
    pub v: ScalarField,
    pub d: Corrector,
    /// Coefficient of the `h^3 x3^2` term in `y3`.
    pub c: ScalarExpr,
}

impl Generators {
    pub fn new(domain: Domain, u: VectorExpr, v: ScalarExpr, d: Corrector) -> Self {
        let [u1, u2] = u.components();
        Self::from_fields(domain, [u1.into(), u2.into()], v.into(), d)
    }

    pub fn from_fields(domain: Domain, u: [ScalarField; 2], v: ScalarField, d: Corrector) -> Self {
        Generators {
            domain,
            u,
            v,
            d,
            c: ScalarExpr::zero(),
        }
    }

    /// All fields zero: the identity plate.
    pub fn flat(domain: Domain) -> Self {
        Self::new(domain, VectorExpr::zero(), ScalarExpr::zero(), Corrector::Zero)
    }

    /// Cylindrical bending with curvature `kappa` about the plate center and zero membrane strain.
    pub fn pure_bend(domain: Domain, kappa: f64, taper: TaperWidth) -> Result<Self> {
        Ok(Self::new(
            domain,
            VectorExpr::parse(&format!("pure_bend({kappa})"))?,
            ScalarExpr::parse(&format!("pure_bend({kappa})"))?,
            Corrector::TaperedStretch(taper),
        ))
    }

    pub fn with_stretch(mut self, c: ScalarExpr) -> Self {
        self.c = c;
        self
    }

    fn local(&self, x: [f64; 2], width: Option<f64>) -> Local {
        let dom = &self.domain;
        let uj = [self.u[0].jet(x, dom), self.u[1].jet(x, dom)];
        let vj = self.v.jet(x, dom);
        let cj = self.c.jet(x, dom);
        let mut l = Local {
            u: [uj[0].val, uj[1].val],
            gu: [uj[0].d1, uj[1].d1],
            hu: [uj[0].d2, uj[1].d2],
            v: vj.val,
            gv: vj.d1,
            hv: vj.d2,
            tv: vj.d3,
            d: [0.0; 3],
            gd: [[0.0; 2]; 3],
            hd: [[[0.0; 2]; 2]; 3],
            c: cj,
        };
        if let (Corrector::TaperedStretch(_), Some(w)) = (self.d, width) {
            let (t, gt, ht) = taper(x, dom, w);
            stretch_corrector(&mut l, t, gt, ht);
        }
        l
    }

    fn taper_breaks(&self, width: Option<f64>) -> [Vec<f64>; 2] {
        let mut out = [Vec::new(), Vec::new()];
        if let (Corrector::TaperedStretch(_), Some(w)) = (self.d, width) {
            for (k, l) in [self.domain.l1, self.domain.l2].into_iter().enumerate() {
                for b in [w, l - w] {
                    if b > 0.0 && b < l {
                        out[k].push(b);
                    }
                }
            }
        }
        out
    }
}

/// Generator jets at one in-plane point.
struct Local {
    u: [f64; 2],
    gu: [[f64; 2]; 2],
    hu: [[[f64; 2]; 2]; 2],
    v: f64,
    gv: [f64; 2],
    hv: [[f64; 2]; 2],
    tv: [[[f64; 2]; 2]; 2],
    d: [f64; 3],
    gd: [[f64; 2]; 3],
    hd: [[[f64; 2]; 2]; 3],
    c: Jet,
}

/// `10 r^3 - 15 r^4 + 6 r^5` on `[0, 1]`, constant outside; `C^2`.
fn smooth_step(r: f64) -> (f64, f64, f64) {
    if r <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if r >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let q = 1.0 - r;
        (
            r * r * r * (10.0 - 15.0 * r + 6.0 * r * r),
            30.0 * r * r * q * q,
            60.0 * r * q * (1.0 - 2.0 * r),
        )
    }
}

/// One-dimensional taper `s(x/w) s((l-x)/w)` with derivatives.
fn taper_1d(x: f64, l: f64, w: f64) -> (f64, f64, f64) {
    let (a, da, dda) = smooth_step(x / w);
    let (b, db, ddb) = smooth_step((l - x) / w);
    (
        a * b,
        (da * b - a * db) / w,
        (dda * b - 2.0 * da * db + a * ddb) / (w * w),
    )
}

fn taper(x: [f64; 2], dom: &Domain, w: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let (s1, d1, dd1) = taper_1d(x[0], dom.l1, w);
    let (s2, d2, dd2) = taper_1d(x[1], dom.l2, w);
    (s1 * s2, [d1 * s2, s1 * d2], [[dd1 * s2, d1 * d2], [d1 * d2, s1 * dd2]])
}

/// `d3 = -|grad v|^2 T / 2` with gradient and Hessian.
fn stretch_corrector(l: &mut Local, t: f64, gt: [f64; 2], ht: [[f64; 2]; 2]) {
    let g = l.gv;
    let h = l.hv;
    let q = 0.5 * (g[0] * g[0] + g[1] * g[1]);
    // grad q = H g
    let gq = [h[0][0] * g[0] + h[0][1] * g[1], h[1][0] * g[0] + h[1][1] * g[1]];
    let mut hq = [[0.0; 2]; 2];
    for b in 0..2 {
        for c in 0..2 {
            let mut s = 0.0;
            for a in 0..2 {
                s += h[a][b] * h[a][c] + g[a] * l.tv[a][b][c];
            }
            hq[b][c] = s;
        }
    }
    l.d[2] = -q * t;
    for b in 0..2 {
        l.gd[2][b] = -(gq[b] * t + q * gt[b]);
        for c in 0..2 {
            l.hd[2][b][c] = -(hq[b][c] * t + gq[b] * gt[c] + gq[c] * gt[b] + q * ht[b][c]);
        }
    }
}

/// An ansatz deformation at thickness `h`.
#[derive(Clone, Debug)]
pub struct ThinDeformation {
    pub generators: Arc<Generators>,
    pub h: f64,
    width: Option<f64>,
}

impl ThinDeformation {
    pub fn new(generators: Arc<Generators>, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(VkError::config("thin.h", format!("thickness must be positive, got {h}")));
        }
        let width = match generators.d {
            Corrector::Zero => None,
            Corrector::TaperedStretch(t) => {
                let w = t.width(h);
                if !(w > 0.0 && w.is_finite()) {
                    return Err(VkError::config("thin.taper", format!("taper width must be positive, got {w}")));
                }
                Some(w)
            }
        };
        Ok(ThinDeformation { generators, h, width })
    }

    /// Resolved taper width, if the corrector is tapered.
    pub fn taper_width(&self) -> Option<f64> {
        self.width
    }

    fn local(&self, x: [f64; 2]) -> Local {
        self.generators.local(x, self.width)
    }

    /// Rescaled deformation `y(x', x3)`.
    pub fn y(&self, p: [f64; 3]) -> Vector3<f64> {
        let l = self.local([p[0], p[1]]);
        let (h, x3) = (self.h, p[2]);
        let h2 = h * h;
        let h3 = h2 * h;
        Vector3::new(
            p[0] + h2 * l.u[0] - h2 * x3 * l.gv[0] + h3 * x3 * l.d[0],
            p[1] + h2 * l.u[1] - h2 * x3 * l.gv[1] + h3 * x3 * l.d[1],
            h * x3 + h * l.v + h3 * x3 * l.d[2] + h3 * x3 * x3 * l.c.val,
        )
    }

    /// `(grad' y, y_{,3} / h)`.
    pub fn scaled_gradient(&self, p: [f64; 3]) -> Matrix3<f64> {
        scaled_gradient_at(&self.local([p[0], p[1]]), self.h, p[2])
    }

    /// `(grad_h^2 y)_{ijk} = h^{-d3j - d3k} (grad^2 y)_{ijk}`.
    pub fn scaled_hessian(&self, p: [f64; 3]) -> Tensor3 {
        scaled_hessian_at(&self.local([p[0], p[1]]), self.h, p[2])
    }
}

fn scaled_gradient_at(l: &Local, h: f64, x3: f64) -> Matrix3<f64> {
    let z = h * x3;
    let h2 = h * h;
    let mut f = Matrix3::identity();
    for a in 0..2 {
        for b in 0..2 {
            f[(a, b)] += h2 * l.gu[a][b] - h * z * l.hv[a][b] + h2 * z * l.gd[a][b];
        }
        f[(a, 2)] = -h * l.gv[a] + h2 * l.d[a];
        f[(2, a)] = h * l.gv[a] + h2 * z * l.gd[2][a] + h * z * z * l.c.d1[a];
    }
    f[(2, 2)] = 1.0 + h2 * l.d[2] + 2.0 * h * z * l.c.val;
    f
}

fn scaled_hessian_at(l: &Local, h: f64, x3: f64) -> Tensor3 {
    let z = h * x3;
    let h2 = h * h;
    let mut t = [[[0.0; 3]; 3]; 3];
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                t[a][b][c] = h2 * l.hu[a][b][c] - h * z * l.tv[a][b][c] + h2 * z * l.hd[a][b][c];
            }
            let m = -h * l.hv[a][b] + h2 * l.gd[a][b];
            t[a][b][2] = m;
            t[a][2][b] = m;
        }
    }
    for b in 0..2 {
        for c in 0..2 {
            t[2][b][c] = h * l.hv[b][c] + h2 * z * l.hd[2][b][c] + h * z * z * l.c.d2[b][c];
        }
        let m = h2 * l.gd[2][b] + 2.0 * h * z * l.c.d1[b];
        t[2][b][2] = m;
        t[2][2][b] = m;
    }
    t[2][2][2] = 2.0 * h * l.c.val;
    t
}

/// Distance of `f` to `SO(3)` in the Frobenius norm.
pub fn dist_so3(f: &Matrix3<f64>) -> f64 {
    let s = f.svd(false, false).singular_values;
    let mut sv = [s[0], s[1], s[2]];
    sv.sort_by(|a, b| b.total_cmp(a));
    if f.determinant() < 0.0 {
        sv[2] = -sv[2];
    }
    sv.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>().sqrt()
}

/// Nearest rotation to `f`.
fn polar_rotation(f: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = f.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    Some(u * vt)
}

/// Tensor-product quadrature over `Omega`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureSpec {
    /// Gauss points per cell in each in-plane direction.
    pub n_xy: usize,
    /// Gauss points in `x3`; at least 3 so that quintics are integrated exactly.
    pub n_z: usize,
    /// Initial number of cells per in-plane direction.
    pub cells: usize,
    /// Refinement stops when the integral changes by less than this, relatively.
    pub rel_tol: f64,
    pub max_cells: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            n_xy: 2,
            n_z: 3,
            cells: 16,
            rel_tol: 1e-8,
            max_cells: 4096,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_xy == 0 {
            return Err(VkError::config("quadrature.n_xy", "must be positive"));
        }
        if self.n_z < 3 {
            return Err(VkError::config("quadrature.n_z", "needs at least 3 points"));
        }
        if self.cells == 0 || self.max_cells < self.cells {
            return Err(VkError::config("quadrature.cells", "must be positive and at most max_cells"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(VkError::config("quadrature.rel_tol", "must be positive"));
        }
        Ok(())
    }
}

/// Uniform cells on `[0, l]` split further at `extra`.
fn breakpoints(l: f64, cells: usize, extra: &[f64]) -> Vec<f64> {
    let mut b: Vec<f64> = (0..=cells).map(|i| l * i as f64 / cells as f64).collect();
    b.extend(extra.iter().copied().filter(|x| *x > 0.0 && *x < l));
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, c| (*a - *c).abs() <= 1e-14 * l);
    b
}

fn points(breaks: &[f64], n: usize) -> Vec<Vec<(f64, f64)>> {
    breaks.windows(2).map(|w| gauss::rule(n, w[0], w[1])).collect()
}

trait Accum: Default + Send {
    fn merge(&mut self, o: Self);
}

/// Integrate over `S`, parallel over rows of cells, reduced in row order.
fn integrate_s<A, F>(b1: &[f64], b2: &[f64], n: usize, f: F) -> A
where
    A: Accum,
    F: Fn([f64; 2], f64, &mut A) + Sync,
{
    let p1: Vec<(f64, f64)> = points(b1, n).into_iter().flatten().collect();
    let rows: Vec<Vec<(f64, f64)>> = points(b2, n);
    let parts: Vec<A> = rows
        .par_iter()
        .map(|row| {
            let mut acc = A::default();
            for &(x2, w2) in row {
                for &(x1, w1) in &p1 {
                    f([x1, x2], w1 * w2, &mut acc);
                }
            }
            acc
        })
        .collect();
    let mut out = A::default();
    for p in parts {
        out.merge(p);
    }
    out
}

#[derive(Default)]
struct EnergyAcc {
    w: f64,
    p: f64,
    f: f64,
    worst: Option<(f64, [f64; 3])>,
}

impl Accum for EnergyAcc {
    fn merge(&mut self, o: Self) {
        self.w += o.w;
        self.p += o.p;
        self.f += o.f;
        if let Some((d, x)) = o.worst {
            if self.worst.is_none_or(|(e, _)| d > e) {
                self.worst = Some((d, x));
            }
        }
    }
}

/// Parts of the rescaled energy `h^-4 int W + h^(-alpha p) int P - h^-1 int f y3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThinEnergy {
    pub w_part: f64,
    pub p_part: f64,
    /// `-h^-1 int f y3`.
    pub f_part: f64,
    pub total: f64,
    /// Cells per direction after refinement.
    pub cells: usize,
    /// Relative change of `total` in the last refinement.
    pub refinement_change: f64,
}

/// Run `eval` at `cells, 2 cells, ...` until `key` settles.
fn refine<T: Copy>(quad: &QuadratureSpec, key: impl Fn(&T) -> f64, eval: impl Fn(usize) -> Result<T>) -> Result<(T, usize, f64)> {
    quad.validate()?;
    let mut n = quad.cells;
    let mut prev = eval(n)?;
    loop {
        if 2 * n > quad.max_cells {
            return Err(VkError::Numeric(format!(
                "quadrature did not settle to {:e} within {} cells per direction",
                quad.rel_tol, quad.max_cells
            )));
        }
        n *= 2;
        let next = eval(n)?;
        let (a, b) = (key(&prev), key(&next));
        let change = if b == 0.0 { (a - b).abs() } else { ((a - b) / b).abs() };
        if change <= quad.rel_tol || (a - b).abs() <= 1e-15 {
            return Ok((next, n, change));
        }
        prev = next;
    }
}

fn x3_rule(quad: &QuadratureSpec) -> Vec<(f64, f64)> {
    gauss::rule(quad.n_z, -0.5, 0.5)
}

fn breaks_for(defs: &[&ThinDeformation], cells: usize) -> (Vec<f64>, Vec<f64>) {
    let dom = defs[0].generators.domain;
    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    for d in defs {
        let [a, b] = d.generators.taper_breaks(d.width);
        e1.extend(a);
        e2.extend(b);
    }
    (breakpoints(dom.l1, cells, &e1), breakpoints(dom.l2, cells, &e2))
}

fn energy_at(def: &ThinDeformation, material: &MaterialSpec, quad: &QuadratureSpec, load: &ScalarExpr, cells: usize) -> Result<ThinEnergy> {
    let h = def.h;
    let zr = x3_rule(quad);
    let (b1, b2) = breaks_for(&[def], cells);
    let scale_w = h.powi(-4);
    let crate::tensor::Perturbation::PowerNorm { p, .. } = material.p;
    let scale_p = h.powf(-material.alpha * p);
    let dom = def.generators.domain;
    let acc: EnergyAcc = integrate_s(&b1, &b2, quad.n_xy, |x, wt, acc: &mut EnergyAcc| {
        let l = def.local(x);
        let f = if load.is_zero() { 0.0 } else { load.value(x, &dom) };
        for &(x3, w3) in &zr {
            let fm = scaled_gradient_at(&l, h, x3);
            let dev = (fm - Matrix3::identity()).norm();
            if dev >= SO3_RADIUS {
                let d = dist_so3(&fm);
                if d >= SO3_RADIUS && acc.worst.is_none_or(|(e, _)| d > e) {
                    acc.worst = Some((d, [x[0], x[1], x3]));
                }
            }
            let w = wt * w3;
            acc.w += w * material.w(&fm);
            acc.p += w * material.p(&scaled_hessian_at(&l, h, x3));
            if f != 0.0 {
                let y3 = h * x3 + h * l.v + h * h * h * x3 * (l.d[2] + x3 * l.c.val);
                acc.f -= w * f * y3;
            }
        }
    });
    if let Some((dist, point)) = acc.worst {
        return Err(VkError::ThicknessTooLarge { h, dist, point });
    }
    let (w_part, p_part, f_part) = (scale_w * acc.w, scale_p * acc.p, acc.f / h);
    Ok(ThinEnergy {
        w_part,
        p_part,
        f_part,
        total: w_part + p_part + f_part,
        cells,
        refinement_change: f64::NAN,
    })
}

/// Rescaled energy `phi_h`, with the in-plane quadrature refined until it settles.
pub fn energy_phi_h(def: &ThinDeformation, material: &MaterialSpec, quad: &QuadratureSpec, load: &ScalarExpr) -> Result<ThinEnergy> {
    let (mut e, cells, change) = refine(quad, |e: &ThinEnergy| e.total, |n| energy_at(def, material, quad, load, n))?;
    e.cells = cells;
    e.refinement_change = change;
    Ok(e)
}

#[derive(Default)]
struct SumAcc(f64);

impl Accum for SumAcc {
    fn merge(&mut self, o: Self) {
        self.0 += o.0;
    }
}

fn check_pair(a: &ThinDeformation, b: &ThinDeformation) -> Result<()> {
    if a.h != b.h {
        return Err(VkError::Precondition(format!("thickness mismatch: {} vs {}", a.h, b.h)));
    }
    if a.generators.domain != b.generators.domain {
        return Err(VkError::Precondition("deformations live on different domains".into()));
    }
    Ok(())
}

fn dissipation_sq_at(a: &ThinDeformation, b: &ThinDeformation, material: &MaterialSpec, quad: &QuadratureSpec, cells: usize) -> f64 {
    let h = a.h;
    let zr = x3_rule(quad);
    let (b1, b2) = breaks_for(&[a, b], cells);
    let acc: SumAcc = integrate_s(&b1, &b2, quad.n_xy, |x, wt, acc: &mut SumAcc| {
        let la = a.local(x);
        let lb = b.local(x);
        for &(x3, w3) in &zr {
            let fa = scaled_gradient_at(&la, h, x3);
            let fb = scaled_gradient_at(&lb, h, x3);
            acc.0 += wt * w3 * material.d2(&fa, &fb);
        }
    });
    acc.0 * h.powi(-4)
}

/// Rescaled dissipation distance `h^-2 (int D^2(grad_h y0, grad_h y1))^(1/2)`.
pub fn dissipation_dh(a: &ThinDeformation, b: &ThinDeformation, material: &MaterialSpec, quad: &QuadratureSpec) -> Result<f64> {
    check_pair(a, b)?;
    let (sq, _, _) = refine(quad, |s: &f64| *s, |n| Ok(dissipation_sq_at(a, b, material, quad, n)))?;
    Ok(sq.max(0.0).sqrt())
}

/// Averaged displacements on the nodes of a 2D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragedFields {
    pub u: [Vec<f64>; 2],
    pub v: Vec<f64>,
}

/// `u_h = h^-2 int_I (y' - x') dx3`, `v_h = h^-1 int_I y3 dx3` at the nodes of `grid`.
pub fn average_displacements(def: &ThinDeformation, grid: &GridSpec, quad: &QuadratureSpec) -> Result<AveragedFields> {
    quad.validate()?;
    if grid.domain() != def.generators.domain {
        return Err(VkError::GridMismatch("grid and generators cover different domains".into()));
    }
    let zr = x3_rule(quad);
    let h = def.h;
    let n = grid.n_nodes();
    let mut out = AveragedFields {
        u: [vec![0.0; n], vec![0.0; n]],
        v: vec![0.0; n],
    };
    for j in 0..grid.n2 {
        for i in 0..grid.n1 {
            let x = grid.node_x(i, j);
            let mut s = [0.0; 3];
            for &(x3, w3) in &zr {
                let y = def.y([x[0], x[1], x3]);
                s[0] += w3 * (y[0] - x[0]);
                s[1] += w3 * (y[1] - x[1]);
                s[2] += w3 * y[2];
            }
            let k = grid.node(i, j);
            out.u[0][k] = s[0] / (h * h);
            out.u[1][k] = s[1] / (h * h);
            out.v[k] = s[2] / h;
        }
    }
    Ok(out)
}

/// `G^h = (R^T grad_h y - Id) / h^2` at one quadrature point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrainSample {
    pub x: [f64; 3],
    pub weight: f64,
    pub g: Matrix3<f64>,
}

/// Scaled strain on the quadrature points of `quad.cells` cells per direction, with `R`
/// the polar factor of the `x3`-average of `grad_h y`.
pub fn strain_gh(def: &ThinDeformation, quad: &QuadratureSpec) -> Result<Vec<StrainSample>> {
    quad.validate()?;
    let h = def.h;
    let zr = x3_rule(quad);
    let (b1, b2) = breaks_for(&[def], quad.cells);
    let p1: Vec<(f64, f64)> = points(&b1, quad.n_xy).into_iter().flatten().collect();
    let p2: Vec<(f64, f64)> = points(&b2, quad.n_xy).into_iter().flatten().collect();
    let rows: Vec<Result<Vec<StrainSample>>> = p2
        .par_iter()
        .map(|&(x2, w2)| {
            let mut out = Vec::with_capacity(p1.len() * zr.len());
            for &(x1, w1) in &p1 {
                let l = def.local([x1, x2]);
                let fs: Vec<Matrix3<f64>> = zr.iter().map(|&(x3, _)| scaled_gradient_at(&l, h, x3)).collect();
                let avg = fs.iter().zip(&zr).fold(Matrix3::zeros(), |m, (f, (_, w))| m + f * *w);
                let det = avg.determinant();
                if !(det > 0.0) {
                    return Err(VkError::DegeneratePolar { point: [x1, x2], det });
                }
                let r = polar_rotation(&avg).ok_or(VkError::DegeneratePolar { point: [x1, x2], det })?;
                for (f, &(x3, w3)) in fs.iter().zip(&zr) {
                    out.push(StrainSample {
                        x: [x1, x2, x3],
                        weight: w1 * w2 * w3,
                        g: (r.transpose() * f - Matrix3::identity()) / (h * h),
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    Ok(all)
}

/// `L^2(Omega)` norm of a sampled strain field.
pub fn strain_l2(samples: &[StrainSample]) -> f64 {
    samples.iter().map(|s| s.weight * s.g.norm_squared()).sum::<f64>().sqrt()
}

/// Largest deviation of the in-plane block of `G^h` from `G0 + x3 G1` of the generators.
pub fn strain_gap(def: &ThinDeformation, samples: &[StrainSample]) -> f64 {
    let gen = &def.generators;
    samples.iter().fold(0.0, |m, s| {
        let (g0, g1) = limit_strains(gen, [s.x[0], s.x[1]]);
        let lim = g0 + g1.scale(s.x[2]);
        let blk = Sym2::new(s.g[(0, 0)], s.g[(1, 1)], 0.5 * (s.g[(0, 1)] + s.g[(1, 0)]));
        let skew = 0.5 * (s.g[(0, 1)] - s.g[(1, 0)]);
        m.max((blk - lim).max_abs()).max(skew.abs())
    })
}

/// `G0 = sym grad u + grad v (x) grad v / 2` and `G1 = -grad^2 v` of the generators.
pub fn limit_strains(gen: &Generators, x: [f64; 2]) -> (Sym2, Sym2) {
    let uj = [gen.u[0].jet(x, &gen.domain), gen.u[1].jet(x, &gen.domain)];
    let vj = gen.v.jet(x, &gen.domain);
    let gu = [[uj[0].d1[0], uj[0].d1[1]], [uj[1].d1[0], uj[1].d1[1]]];
    let g0 = Sym2::sym_of(gu) + Sym2::sym_outer(vj.d1, vj.d1).scale(0.5);
    let g1 = Sym2::new(-vj.d2[0][0], -vj.d2[1][1], -vj.d2[0][1]);
    (g0, g1)
}

fn plain_breaks(dom: &Domain, cells: usize) -> (Vec<f64>, Vec<f64>) {
    (breakpoints(dom.l1, cells, &[]), breakpoints(dom.l2, cells, &[]))
}

/// Plate energy of the generators, `int Q_W(G0)/2 + Q_W(G1)/24 - f v`, by refined quadrature.
pub fn limit_energy(gen: &Generators, forms: &ReducedForms, quad: &QuadratureSpec, load: &ScalarExpr) -> Result<f64> {
    let dom = gen.domain;
    let (e, _, _) = refine(
        quad,
        |e: &f64| *e,
        |n| {
            let (b1, b2) = plain_breaks(&dom, n);
            let acc: SumAcc = integrate_s(&b1, &b2, quad.n_xy, |x, w, acc: &mut SumAcc| {
                let (g0, g1) = limit_strains(gen, x);
                let f = if load.is_zero() { 0.0 } else { load.value(x, &dom) * gen.v.value(x, &dom) };
                acc.0 += w * (0.5 * forms.qw(&g0) + forms.qw(&g1) / 24.0 - f);
            });
            Ok(acc.0)
        },
    )?;
    Ok(e)
}

/// Plate dissipation distance between two generator sets, by refined quadrature.
pub fn limit_dissipation(a: &Generators, b: &Generators, forms: &ReducedForms, quad: &QuadratureSpec) -> Result<f64> {
    let dom = a.domain;
    let (e, _, _) = refine(
        quad,
        |e: &f64| *e,
        |n| {
            let (b1, b2) = plain_breaks(&dom, n);
            let acc: SumAcc = integrate_s(&b1, &b2, quad.n_xy, |x, w, acc: &mut SumAcc| {
                let (a0, a1) = limit_strains(a, x);
                let (c0, c1) = limit_strains(b, x);
                acc.0 += w * (forms.qd(&(c0 - a0)) + forms.qd(&(c1 - a1)) / 12.0);
            });
            Ok(acc.0)
        },
    )?;
    Ok(e.max(0.0).sqrt())
}

/// `phi_h(def1) + D_h(def0, def1)^2 / (2 tau)`. Evaluation only.
pub fn incremental_objective_3d(
    tau: f64,
    def0: &ThinDeformation,
    def1: &ThinDeformation,
    material: &MaterialSpec,
    quad: &QuadratureSpec,
    load: &ScalarExpr,
) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(VkError::config("run.tau", format!("time step must be positive, got {tau}")));
    }
    check_pair(def0, def1)?;
    let e = energy_phi_h(def1, material, quad, load)?;
    let d = dissipation_dh(def0, def1, material, quad)?;
    Ok(e.total + d * d / (2.0 * tau))
}

/// One thickness of a Gamma-convergence ladder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LadderRow {
    pub h: f64,
    pub energy: ThinEnergy,
    pub phi0: f64,
    /// `|phi_h - phi0| / |phi0|`, or the absolute gap when `phi0 = 0`.
    pub gap: f64,
    /// This gap over the previous row's.
    pub gap_ratio: Option<f64>,
    /// This P-part over the previous row's.
    pub p_ratio: Option<f64>,
    pub dh: Option<f64>,
    pub d0: Option<f64>,
    pub d_gap: Option<f64>,
    pub d_gap_ratio: Option<f64>,
}

fn rel_gap(a: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        (a - reference).abs()
    } else {
        ((a - reference) / reference).abs()
    }
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    if b == 0.0 {
        None
    } else {
        Some(a / b)
    }
}

/// Evaluate `phi_h` (and `D_h` from `pair_start` when given) on the ansatz at each `h`,
/// against the plate values of the generators.
pub fn gamma_ladder(
    generators: &Arc<Generators>,
    pair_start: Option<&Arc<Generators>>,
    material: &MaterialSpec,
    h_list: &[f64],
    quad: &QuadratureSpec,
    load: &ScalarExpr,
) -> Result<Vec<LadderRow>> {
    if h_list.is_empty() || h_list.iter().any(|h| !(*h > 0.0)) || h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(VkError::config("gamma.h_list", "thicknesses must be positive and strictly decreasing"));
    }
    if let Some(s) = pair_start {
        if s.domain != generators.domain {
            return Err(VkError::Precondition("ladder pair lives on different domains".into()));
        }
    }
    let forms = ReducedForms::from_material(material)?;
    let phi0 = limit_energy(generators, &forms, quad, load)?;
    let d0 = pair_start.map(|s| limit_dissipation(s, generators, &forms, quad)).transpose()?;
    let rows: Vec<Result<(f64, ThinEnergy, Option<f64>)>> = h_list
        .par_iter()
        .map(|&h| {
            let def = ThinDeformation::new(generators.clone(), h)?;
            let e = energy_phi_h(&def, material, quad, load)?;
            let dh = match pair_start {
                Some(s) => Some(dissipation_dh(&ThinDeformation::new(s.clone(), h)?, &def, material, quad)?),
                None => None,
            };
            Ok((h, e, dh))
        })
        .collect();
    let mut out: Vec<LadderRow> = Vec::with_capacity(rows.len());
    for r in rows {
        let (h, energy, dh) = r?;
        let gap = rel_gap(energy.total, phi0);
        let d_gap = dh.zip(d0).map(|(a, b)| rel_gap(a, b));
        let prev = out.last();
        out.push(LadderRow {
            h,
            energy,
            phi0,
            gap,
            gap_ratio: prev.and_then(|p| ratio(gap, p.gap)),
            p_ratio: prev.and_then(|p| ratio(energy.p_part, p.energy.p_part)),
            dh,
            d0,
            d_gap,
            d_gap_ratio: prev.and_then(|p| d_gap.zip(p.d_gap)).and_then(|(a, b)| ratio(a, b)),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bend(w: f64) -> Arc<Generators> {
        Arc::new(Generators::pure_bend(Domain::unit(), 1.0, TaperWidth::Fixed(w)).unwrap())
    }

    fn quick() -> QuadratureSpec {
        QuadratureSpec {
            cells: 8,
            rel_tol: 1e-6,
            ..Default::default()
        }
    }

    #[test]
    fn identity_plate_is_stress_free() {
        let def = ThinDeformation::new(Arc::new(Generators::flat(Domain::unit())), 0.1).unwrap();
        assert_eq!(def.scaled_gradient([0.3, 0.7, 0.2]), Matrix3::identity());
        let m = MaterialSpec::catalog(1.0, 1.0, 1.0, 4.0, 0.5).unwrap();
        let e = energy_phi_h(&def, &m, &quick(), &ScalarExpr::zero()).unwrap();
        assert_eq!((e.w_part, e.p_part, e.f_part, e.total), (0.0, 0.0, 0.0, 0.0));
        let avg = average_displacements(&def, &GridSpec::unit_square(4).unwrap(), &quick()).unwrap();
        assert!(avg.v.iter().chain(&avg.u[0]).all(|x| x.abs() < 1e-15));
        assert!(strain_gh(&def, &quick()).unwrap().iter().all(|s| s.g == Matrix3::zeros()));
    }

    #[test]
    fn linear_deflection_gradient() {
        let gen = Generators::new(Domain::unit(), VectorExpr::zero(), ScalarExpr::parse("linear(1,0)").unwrap(), Corrector::Zero);
        let h = 0.1;
        let def = ThinDeformation::new(Arc::new(gen), h).unwrap();
        let mut want = Matrix3::identity();
        want[(2, 0)] = h;
        want[(0, 2)] = -h;
        let got = def.scaled_gradient([0.4, 0.2, 0.3]);
        assert!((got - want).norm() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let gen = Generators::new(
            Domain::unit(),
            VectorExpr::parse("sine(0.7)+linear(0.1,0.2,-0.3,0.05)").unwrap(),
            ScalarExpr::parse("bump(0.8)+pure_bend(1.5)").unwrap(),
            Corrector::TaperedStretch(TaperWidth::Fixed(0.2)),
        )
        .with_stretch(ScalarExpr::parse("expcos(0.4)").unwrap());
        let def = ThinDeformation::new(Arc::new(gen), 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eps = 1e-5;
        for _ in 0..20 {
            let p = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(-0.5..0.5)];
            let f = def.scaled_gradient(p);
            let mut fd = Matrix3::zeros();
            for k in 0..3 {
                let mut a = p;
                let mut b = p;
                a[k] += eps;
                b[k] -= eps;
                let col = (def.y(a) - def.y(b)) / (2.0 * eps) / if k == 2 { def.h } else { 1.0 };
                fd.set_column(k, &col);
            }
            assert!((fd - f).norm() <= 1e-8 * f.norm(), "{p:?}");
            // Second gradient against differences of the first.
            let z = def.scaled_hessian(p);
            for k in 0..3 {
                let mut a = p;
                let mut b = p;
                a[k] += eps;
                b[k] -= eps;
                let s = if k == 2 { def.h } else { 1.0 };
                let dk = (def.scaled_gradient(a) - def.scaled_gradient(b)) / (2.0 * eps * s);
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((dk[(i, j)] - z[i][j][k]).abs() < 1e-7, "{i}{j}{k}");
                    }
                }
            }
        }
    }

    #[test]
    fn taper_vanishes_on_boundary_with_its_gradient() {
        let dom = Domain::unit();
        for x in [[0.0, 0.4], [1.0, 0.3], [0.5, 0.0], [0.2, 1.0]] {
            let (t, g, _) = taper(x, &dom, 0.1);
            assert_eq!(t, 0.0);
            assert_eq!(g, [0.0, 0.0]);
        }
        assert_eq!(taper([0.5, 0.5], &dom, 0.1).0, 1.0);
        // Deformation on the lateral boundary is the one prescribed by (u, v).
        let def = ThinDeformation::new(bend(0.1), 0.2).unwrap();
        let y = def.y([0.0, 0.4, 0.5]);
        let l = def.local([0.0, 0.4]);
        assert_eq!(y[2], 0.2 * 0.5 + 0.2 * l.v);
    }

    #[test]
    fn averaging_recovers_generators() {
        let grid = GridSpec::unit_square(6).unwrap();
        let h = 0.1;
        let gen = Generators::pure_bend(Domain::unit(), 1.0, TaperWidth::Fixed(0.2)).unwrap();
        let def = ThinDeformation::new(Arc::new(gen.clone()), h).unwrap();
        let avg = average_displacements(&def, &grid, &quick()).unwrap();
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                let x = grid.node_x(i, j);
                let k = grid.node(i, j);
                assert!((avg.u[0][k] - gen.u[0].value(x, &gen.domain)).abs() < 1e-12);
                assert!((avg.u[1][k] - gen.u[1].value(x, &gen.domain)).abs() < 1e-12);
                assert!((avg.v[k] - gen.v.value(x, &gen.domain)).abs() < 1e-13);
            }
        }
        let c = ScalarExpr::parse("bump(2)").unwrap();
        let def = ThinDeformation::new(Arc::new(gen.clone().with_stretch(c.clone())), h).unwrap();
        let avg = average_displacements(&def, &grid, &quick()).unwrap();
        let k = grid.node(2, 3);
        let x = grid.node_x(2, 3);
        let want = gen.v.value(x, &gen.domain) + h * h / 12.0 * c.value(x, &gen.domain);
        assert!((avg.v[k] - want).abs() < 1e-14);
    }

    #[test]
    fn thick_plate_is_rejected() {
        let gen = Generators::new(Domain::unit(), VectorExpr::zero(), ScalarExpr::parse("linear(8,0)").unwrap(), Corrector::Zero);
        let def = ThinDeformation::new(Arc::new(gen), 0.2).unwrap();
        let m = MaterialSpec::catalog(1.0, 1.0, 1.0, 4.0, 0.5).unwrap();
        match energy_phi_h(&def, &m, &quick(), &ScalarExpr::zero()) {
            Err(VkError::ThicknessTooLarge { h, dist, .. }) => {
                assert_eq!(h, 0.2);
                assert!(dist >= SO3_RADIUS);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dist_so3_of_scaled_rotation() {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        assert!(dist_so3(&r) < 1e-12);
        assert!((dist_so3(&(r * 1.1)) - 0.1 * 3f64.sqrt()).abs() < 1e-12);
        let refl = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!((dist_so3(&refl) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dissipation_axioms() {
        let m = MaterialSpec::catalog(1.0, 1.0, 1.0, 4.0, 0.5).unwrap();
        let a = ThinDeformation::new(Arc::new(Generators::flat(Domain::unit())), 0.1).unwrap();
        let b = ThinDeformation::new(bend(0.2), 0.1).unwrap();
        let q = quick();
        assert_eq!(dissipation_dh(&b, &b, &m, &q).unwrap(), 0.0);
        assert_eq!(dissipation_dh(&a, &b, &m, &q).unwrap(), dissipation_dh(&b, &a, &m, &q).unwrap());
        let c = ThinDeformation::new(bend(0.2), 0.2).unwrap();
        assert!(matches!(dissipation_dh(&a, &c, &m, &q), Err(VkError::Precondition(_))));
    }

    #[test]
    fn incremental_objective_limits() {
        let m = MaterialSpec::catalog(1.0, 1.0, 1.0, 4.0, 0.5).unwrap();
        let q = quick();
        let f = ScalarExpr::zero();
        let a = ThinDeformation::new(Arc::new(Generators::flat(Domain::unit())), 0.1).unwrap();
        let b = ThinDeformation::new(bend(0.2), 0.1).unwrap();
        let phi = energy_phi_h(&b, &m, &q, &f).unwrap().total;
        assert_eq!(incremental_objective_3d(0.1, &b, &b, &m, &q, &f).unwrap(), phi);
        let small = incremental_objective_3d(0.1, &a, &b, &m, &q, &f).unwrap();
        let large = incremental_objective_3d(1.0, &a, &b, &m, &q, &f).unwrap();
        assert!(large < small && large > phi);
        assert!(incremental_objective_3d(0.0, &a, &b, &m, &q, &f).is_err());
    }

    #[test]
    fn zero_generators_give_zero_gaps() {
        let m = MaterialSpec::catalog(1.0, 1.0, 1.0, 4.0, 0.5).unwrap();
        let g = Arc::new(Generators::flat(Domain::unit()));
        let rows = gamma_ladder(&g, Some(&g), &m, &[0.2, 0.1], &quick(), &ScalarExpr::zero()).unwrap();
        for r in rows {
            assert_eq!((r.gap, r.d_gap), (0.0, Some(0.0)));
        }
        assert!(gamma_ladder(&g, None, &m, &[0.1, 0.2], &quick(), &ScalarExpr::zero()).is_err());
    }

    #[test]
    fn strain_of_bent_ansatz_approaches_plate_strain() {
        let q = QuadratureSpec { cells: 8, ..Default::default() };
        let g = Arc::new(Generators::pure_bend(Domain::unit(), 1.0, TaperWidth::default()).unwrap());
        let mut gaps = Vec::new();
        let mut norms = Vec::new();
        for h in [0.2, 0.1, 0.05, 0.025] {
            let def = ThinDeformation::new(g.clone(), h).unwrap();
            let s = strain_gh(&def, &q).unwrap();
            gaps.push(strain_gap(&def, &s));
            norms.push(strain_l2(&s));
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        let bound = 2.0 * norms[3];
        assert!(norms.iter().all(|n| *n <= bound), "{norms:?}");
    }

    #[test]
    fn load_work_of_the_ansatz() {
        // f_part = -int f v - h^2/12 int f c for the ansatz; d is odd in x3.
        let m = MaterialSpec::catalog(1.0, 1.0, 1.0, 4.0, 0.5).unwrap();
        let gen = Generators::new(Domain::unit(), VectorExpr::zero(), ScalarExpr::parse("bump(0.5)").unwrap(), Corrector::Zero)
            .with_stretch(ScalarExpr::parse("constant(3)").unwrap());
        let h = 0.1;
        let def = ThinDeformation::new(Arc::new(gen), h).unwrap();
        let e = energy_phi_h(&def, &m, &QuadratureSpec { cells: 16, ..Default::default() }, &ScalarExpr::parse("constant(2)").unwrap()).unwrap();
        // int bump = 0.5 (1/2)^2 over the unit square.
        let want = -2.0 * 0.5 * 0.25 - h * h / 12.0 * 2.0 * 3.0;
        assert!((e.f_part - want).abs() < 1e-9, "{} {}", e.f_part, want);
    }
}

