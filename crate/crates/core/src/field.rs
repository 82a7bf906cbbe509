//! Discrete plate states on a structured rectangular grid.
//!
//! Fields live at nodes, strains at cell centers. The out-of-plane field `v`
//! carries one ghost layer so that clamped gradients can be imposed by
//! centered differences. Node `(i, j)` has index `j * n1 + i`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Result, VkError};
use crate::presets::{Domain, ScalarExpr, VectorExpr};
use crate::tensor::Sym2;

/// Rectangle `[0, l1] x [0, l2]` with `n1 x n2` nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub l1: f64,
    pub l2: f64,
    pub n1: usize,
    pub n2: usize,
}

impl GridSpec {
    pub fn new(l1: f64, l2: f64, n1: usize, n2: usize) -> Result<Self> {
        if !(l1 > 0.0 && l1.is_finite()) {
            return Err(VkError::config("grid.l1", format!("must be positive, got {l1}")));
        }
        if !(l2 > 0.0 && l2.is_finite()) {
            return Err(VkError::config("grid.l2", format!("must be positive, got {l2}")));
        }
        if n1 < 4 {
            return Err(VkError::config("grid.n1", format!("need at least 4 nodes, got {n1}")));
        }
        if n2 < 4 {
            return Err(VkError::config("grid.n2", format!("need at least 4 nodes, got {n2}")));
        }
        Ok(GridSpec { l1, l2, n1, n2 })
    }

    /// Unit square with `cells` cells per side.
    pub fn unit_square(cells: usize) -> Result<Self> {
        Self::new(1.0, 1.0, cells + 1, cells + 1)
    }

    pub fn dx1(&self) -> f64 {
        self.l1 / (self.n1 - 1) as f64
    }

    pub fn dx2(&self) -> f64 {
        self.l2 / (self.n2 - 1) as f64
    }

    pub fn domain(&self) -> Domain {
        Domain {
            l1: self.l1,
            l2: self.l2,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn c1(&self) -> usize {
        self.n1 - 1
    }

    pub fn c2(&self) -> usize {
        self.n2 - 1
    }

    pub fn n_cells(&self) -> usize {
        self.c1() * self.c2()
    }

    /// Midpoint quadrature weight of one cell.
    pub fn cell_weight(&self) -> f64 {
        self.dx1() * self.dx2()
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.n1 + i
    }

    pub fn node_x(&self, i: usize, j: usize) -> [f64; 2] {
        [i as f64 * self.dx1(), j as f64 * self.dx2()]
    }

    pub fn cell_center(&self, ci: usize, cj: usize) -> [f64; 2] {
        [(ci as f64 + 0.5) * self.dx1(), (cj as f64 + 0.5) * self.dx2()]
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.n1 || j + 1 == self.n2
    }

    pub fn n_interior(&self) -> usize {
        (self.n1 - 2) * (self.n2 - 2)
    }

    /// Degrees of freedom `[u1 interior, u2 interior, v interior]`.
    pub fn n_dofs(&self) -> usize {
        3 * self.n_interior()
    }

    pub(crate) fn pn1(&self) -> usize {
        self.n1 + 2
    }

    pub(crate) fn n_padded(&self) -> usize {
        (self.n1 + 2) * (self.n2 + 2)
    }

    /// Index into the padded `v` array; `i, j` range over `-1..=n`.
    pub fn pidx(&self, i: isize, j: isize) -> usize {
        ((j + 1) as usize) * self.pn1() + (i + 1) as usize
    }

    /// Interior node indices in dof order.
    pub fn interior_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.n2 - 1).flat_map(move |j| (1..self.n1 - 1).map(move |i| (i, j)))
    }
}

/// Clamped boundary data sampled on the full node grid. Only boundary entries are used.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub u_hat: [Vec<f64>; 2],
    pub v_hat: Vec<f64>,
    pub grad_v_hat: [Vec<f64>; 2],
}

impl BoundaryData {
    pub fn zero(grid: &GridSpec) -> Self {
        let n = grid.n_nodes();
        BoundaryData {
            u_hat: [vec![0.0; n], vec![0.0; n]],
            v_hat: vec![0.0; n],
            grad_v_hat: [vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_arrays(
        grid: &GridSpec,
        u_hat: [Vec<f64>; 2],
        v_hat: Vec<f64>,
        grad_v_hat: [Vec<f64>; 2],
    ) -> Result<Self> {
        let n = grid.n_nodes();
        for (name, len) in [
            ("bc.u_hat[0]", u_hat[0].len()),
            ("bc.u_hat[1]", u_hat[1].len()),
            ("bc.v_hat", v_hat.len()),
            ("bc.grad_v_hat[0]", grad_v_hat[0].len()),
            ("bc.grad_v_hat[1]", grad_v_hat[1].len()),
        ] {
            if len != n {
                return Err(VkError::config(name, format!("expected {n} nodal values, got {len}")));
            }
        }
        let bc = BoundaryData {
            u_hat,
            v_hat,
            grad_v_hat,
        };
        if !bc.all_finite() {
            return Err(VkError::config("bc", "non-finite boundary value"));
        }
        Ok(bc)
    }

    /// Sample presets at every node. The clamped gradient defaults to the gradient of `v_hat`.
    pub fn from_presets(
        grid: &GridSpec,
        u_hat: &VectorExpr,
        v_hat: &ScalarExpr,
        grad_v_hat: Option<&VectorExpr>,
    ) -> Result<Self> {
        let dom = grid.domain();
        let mut bc = Self::zero(grid);
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                let k = grid.node(i, j);
                let x = grid.node_x(i, j);
                let [a, b] = u_hat.jets(x, &dom);
                bc.u_hat[0][k] = a.val;
                bc.u_hat[1][k] = b.val;
                let jv = v_hat.jet(x, &dom);
                bc.v_hat[k] = jv.val;
                let g = match grad_v_hat {
                    Some(e) => {
                        let [p, q] = e.jets(x, &dom);
                        [p.val, q.val]
                    }
                    None => jv.d1,
                };
                bc.grad_v_hat[0][k] = g[0];
                bc.grad_v_hat[1][k] = g[1];
            }
        }
        if !bc.all_finite() {
            return Err(VkError::config("bc", "preset produced non-finite values"));
        }
        Ok(bc)
    }

    fn all_finite(&self) -> bool {
        self.u_hat
            .iter()
            .chain(self.grad_v_hat.iter())
            .chain(std::iter::once(&self.v_hat))
            .all(|a| a.iter().all(|x| x.is_finite()))
    }
}

/// Fill the ghost layer of a padded `v`. `grad` is the clamped gradient per node,
/// `None` meaning zero (the test-field case, where ghosts mirror the interior).
fn fill_ghosts(grid: &GridSpec, v: &mut [f64], grad: Option<&[Vec<f64>; 2]>) {
    let (n1, n2) = (grid.n1 as isize, grid.n2 as isize);
    let (dx1, dx2) = (grid.dx1(), grid.dx2());
    let g = |c: usize, i: isize, j: isize| -> f64 {
        grad.map_or(0.0, |g| g[c][grid.node(i as usize, j as usize)])
    };
    for j in 0..n2 {
        v[grid.pidx(-1, j)] = v[grid.pidx(1, j)] - 2.0 * dx1 * g(0, 0, j);
        v[grid.pidx(n1, j)] = v[grid.pidx(n1 - 2, j)] + 2.0 * dx1 * g(0, n1 - 1, j);
    }
    for i in 0..n1 {
        v[grid.pidx(i, -1)] = v[grid.pidx(i, 1)] - 2.0 * dx2 * g(1, i, 0);
        v[grid.pidx(i, n2)] = v[grid.pidx(i, n2 - 2)] + 2.0 * dx2 * g(1, i, n2 - 1);
    }
    // Corners: average of the extrapolations along both edges. No stencil reads them.
    for (ci, cj, si, sj) in [
        (0, 0, -1isize, -1isize),
        (n1 - 1, 0, 1, -1),
        (0, n2 - 1, -1, 1),
        (n1 - 1, n2 - 1, 1, 1),
    ] {
        let gi = ci + si;
        let gj = cj + sj;
        let along1 = v[grid.pidx(ci - si, gj)] + 2.0 * dx1 * si as f64 * g(0, ci, cj);
        let along2 = v[grid.pidx(gi, cj - sj)] + 2.0 * dx2 * sj as f64 * g(1, ci, cj);
        v[grid.pidx(gi, gj)] = 0.5 * (along1 + along2);
    }
}

/// Discrete plate state `(u, v)` satisfying the clamped boundary conditions.
#[derive(Clone, Debug)]
pub struct PlateState {
    pub grid: GridSpec,
    pub bc: Arc<BoundaryData>,
    /// Nodal in-plane displacement components.
    pub u: [Vec<f64>; 2],
    /// Padded out-of-plane displacement, see [`GridSpec::pidx`].
    pub v: Vec<f64>,
}

impl PlateState {
    /// Build a state from nodal initial fields; boundary values are overwritten by the data.
    pub fn make_state(
        grid: GridSpec,
        bc: Arc<BoundaryData>,
        u_init: [Vec<f64>; 2],
        v_init: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.n_nodes();
        if bc.v_hat.len() != n {
            return Err(VkError::config("bc", format!("boundary data sized for {} nodes, grid has {n}", bc.v_hat.len())));
        }
        for (name, len) in [("u_init[0]", u_init[0].len()), ("u_init[1]", u_init[1].len()), ("v_init", v_init.len())] {
            if len != n {
                return Err(VkError::config(name, format!("expected {n} nodal values, got {len}")));
            }
        }
        if u_init.iter().chain(std::iter::once(&v_init)).any(|a| a.iter().any(|x| !x.is_finite())) {
            return Err(VkError::config("init", "non-finite initial value"));
        }
        let mut v = vec![0.0; grid.n_padded()];
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                v[grid.pidx(i as isize, j as isize)] = v_init[grid.node(i, j)];
            }
        }
        let mut s = PlateState {
            grid,
            bc,
            u: u_init,
            v,
        };
        s.apply_bc();
        Ok(s)
    }

    pub fn from_presets(grid: GridSpec, bc: Arc<BoundaryData>, u: &VectorExpr, v: &ScalarExpr) -> Result<Self> {
        let dom = grid.domain();
        let n = grid.n_nodes();
        let mut u0 = [vec![0.0; n], vec![0.0; n]];
        let mut v0 = vec![0.0; n];
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                let k = grid.node(i, j);
                let x = grid.node_x(i, j);
                let [a, b] = u.jets(x, &dom);
                u0[0][k] = a.val;
                u0[1][k] = b.val;
                v0[k] = v.value(x, &dom);
            }
        }
        Self::make_state(grid, bc, u0, v0)
    }

    /// Overwrite boundary nodes with the data and refill the ghost layer. Idempotent.
    pub fn apply_bc(&mut self) {
        let g = self.grid;
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                if g.is_boundary(i, j) {
                    let k = g.node(i, j);
                    self.u[0][k] = self.bc.u_hat[0][k];
                    self.u[1][k] = self.bc.u_hat[1][k];
                    self.v[g.pidx(i as isize, j as isize)] = self.bc.v_hat[k];
                }
            }
        }
        fill_ghosts(&g, &mut self.v, Some(&self.bc.grad_v_hat));
    }

    /// Value of `v` at node `(i, j)`; ghosts are reachable with indices -1 and n.
    pub fn v_at(&self, i: isize, j: isize) -> f64 {
        self.v[self.grid.pidx(i, j)]
    }

    /// `v` at the physical nodes, unpadded.
    pub fn v_nodal(&self) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; g.n_nodes()];
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                out[g.node(i, j)] = self.v_at(i as isize, j as isize);
            }
        }
        out
    }

    pub fn dofs(&self) -> Vec<f64> {
        let g = &self.grid;
        let m = g.n_interior();
        let mut x = vec![0.0; 3 * m];
        for (k, (i, j)) in g.interior_nodes().enumerate() {
            let n = g.node(i, j);
            x[k] = self.u[0][n];
            x[m + k] = self.u[1][n];
            x[2 * m + k] = self.v_at(i as isize, j as isize);
        }
        x
    }

    /// Copy of this state with interior values replaced by `x`.
    pub fn with_dofs(&self, x: &[f64]) -> Result<Self> {
        let g = self.grid;
        let m = g.n_interior();
        if x.len() != 3 * m {
            return Err(VkError::LengthMismatch {
                expected: 3 * m,
                got: x.len(),
            });
        }
        let mut s = self.clone();
        for (k, (i, j)) in g.interior_nodes().enumerate() {
            let n = g.node(i, j);
            s.u[0][n] = x[k];
            s.u[1][n] = x[m + k];
            let p = g.pidx(i as isize, j as isize);
            s.v[p] = x[2 * m + k];
        }
        fill_ghosts(&g, &mut s.v, Some(&s.bc.grad_v_hat));
        Ok(s)
    }

    /// Check boundary agreement, ghost consistency and finiteness.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        if !self.u.iter().chain(std::iter::once(&self.v)).all(|a| a.iter().all(|x| x.is_finite())) {
            return Err(VkError::Numeric("non-finite entry in plate state".into()));
        }
        let mut fixed = self.clone();
        fixed.apply_bc();
        let diff = max_abs_diff(&fixed.u[0], &self.u[0])
            .max(max_abs_diff(&fixed.u[1], &self.u[1]))
            .max(max_abs_diff(&fixed.v, &self.v));
        if diff > tol {
            return Err(VkError::Precondition(format!(
                "state violates boundary data by {diff:.3e}"
            )));
        }
        Ok(())
    }

    pub fn same_grid(&self, o: &PlateState) -> Result<()> {
        if self.grid != o.grid {
            return Err(VkError::GridMismatch(format!("{:?} vs {:?}", self.grid, o.grid)));
        }
        Ok(())
    }

    pub fn same_setup(&self, o: &PlateState) -> Result<()> {
        self.same_grid(o)?;
        if !Arc::ptr_eq(&self.bc, &o.bc) && *self.bc != *o.bc {
            return Err(VkError::GridMismatch("states carry different boundary data".into()));
        }
        Ok(())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Test field vanishing on the boundary with vanishing clamped gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub u: [Vec<f64>; 2],
    /// Padded; ghosts mirror the first interior row.
    pub v: Vec<f64>,
}

impl Direction {
    pub fn zero(grid: &GridSpec) -> Self {
        Direction {
            u: [vec![0.0; grid.n_nodes()], vec![0.0; grid.n_nodes()]],
            v: vec![0.0; grid.n_padded()],
        }
    }

    pub fn from_dofs(grid: &GridSpec, x: &[f64]) -> Result<Self> {
        let m = grid.n_interior();
        if x.len() != 3 * m {
            return Err(VkError::LengthMismatch {
                expected: 3 * m,
                got: x.len(),
            });
        }
        let mut d = Self::zero(grid);
        for (k, (i, j)) in grid.interior_nodes().enumerate() {
            let n = grid.node(i, j);
            d.u[0][n] = x[k];
            d.u[1][n] = x[m + k];
            d.v[grid.pidx(i as isize, j as isize)] = x[2 * m + k];
        }
        fill_ghosts(grid, &mut d.v, None);
        Ok(d)
    }

    /// From nodal fields; errors if they do not vanish on the boundary.
    pub fn from_nodal(grid: &GridSpec, u: [Vec<f64>; 2], v: Vec<f64>) -> Result<Self> {
        let n = grid.n_nodes();
        for (name, len) in [("du[0]", u[0].len()), ("du[1]", u[1].len()), ("dv", v.len())] {
            if len != n {
                return Err(VkError::config(name, format!("expected {n} nodal values, got {len}")));
            }
        }
        let mut d = Direction {
            u,
            v: vec![0.0; grid.n_padded()],
        };
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                d.v[grid.pidx(i as isize, j as isize)] = v[grid.node(i, j)];
            }
        }
        fill_ghosts(grid, &mut d.v, None);
        d.check_boundary(grid)?;
        Ok(d)
    }

    /// `s1 - s0` for states sharing grid and boundary data.
    pub fn difference(s1: &PlateState, s0: &PlateState) -> Result<Self> {
        s1.same_setup(s0)?;
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        let mut d = Direction {
            u: [sub(&s1.u[0], &s0.u[0]), sub(&s1.u[1], &s0.u[1])],
            v: sub(&s1.v, &s0.v),
        };
        // Ghost differences are exact mirrors already; refill to clear rounding.
        fill_ghosts(&s1.grid, &mut d.v, None);
        Ok(d)
    }

    pub fn dofs(&self, grid: &GridSpec) -> Vec<f64> {
        let m = grid.n_interior();
        let mut x = vec![0.0; 3 * m];
        for (k, (i, j)) in grid.interior_nodes().enumerate() {
            let n = grid.node(i, j);
            x[k] = self.u[0][n];
            x[m + k] = self.u[1][n];
            x[2 * m + k] = self.v[grid.pidx(i as isize, j as isize)];
        }
        x
    }

    pub fn check_boundary(&self, grid: &GridSpec) -> Result<()> {
        let mut worst = 0.0f64;
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                if grid.is_boundary(i, j) {
                    let k = grid.node(i, j);
                    worst = worst
                        .max(self.u[0][k].abs())
                        .max(self.u[1][k].abs())
                        .max(self.v[grid.pidx(i as isize, j as isize)].abs());
                }
            }
        }
        let (n1, n2) = (grid.n1 as isize, grid.n2 as isize);
        for j in 0..n2 {
            worst = worst
                .max((self.v[grid.pidx(-1, j)] - self.v[grid.pidx(1, j)]).abs())
                .max((self.v[grid.pidx(n1, j)] - self.v[grid.pidx(n1 - 2, j)]).abs());
        }
        for i in 0..n1 {
            worst = worst
                .max((self.v[grid.pidx(i, -1)] - self.v[grid.pidx(i, 1)]).abs())
                .max((self.v[grid.pidx(i, n2)] - self.v[grid.pidx(i, n2 - 2)]).abs());
        }
        if worst > 1e-14 {
            return Err(VkError::Precondition(format!(
                "test field has nonzero boundary trace {worst:.3e}"
            )));
        }
        Ok(())
    }
}

/// Cell-centered stencils.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub dx1: f64,
    pub dx2: f64,
}

impl Stencil {
    pub fn of(grid: &GridSpec) -> Self {
        Stencil {
            dx1: grid.dx1(),
            dx2: grid.dx2(),
        }
    }

    /// Gradient at the center from corners `[c00, c10, c01, c11]`.
    #[inline]
    pub fn grad(&self, c: [f64; 4]) -> [f64; 2] {
        [
            ((c[1] - c[0]) + (c[3] - c[2])) / (2.0 * self.dx1),
            ((c[2] - c[0]) + (c[3] - c[1])) / (2.0 * self.dx2),
        ]
    }

    /// Transpose of [`Stencil::grad`].
    #[inline]
    pub fn grad_adj(&self, q: [f64; 2]) -> [f64; 4] {
        let a = q[0] / (2.0 * self.dx1);
        let b = q[1] / (2.0 * self.dx2);
        [-a - b, a - b, -a + b, a + b]
    }

    /// Hessian at the center from a 4x4 patch; `p[a][b]` is node offset `(a - 1, b - 1)`
    /// relative to corner `c00`. Patch corners are not read.
    #[inline]
    pub fn hess(&self, p: &[[f64; 4]; 4]) -> Sym2 {
        let mut h11 = 0.0;
        let mut h22 = 0.0;
        for a in 1..3 {
            for b in 1..3 {
                h11 += p[a + 1][b] - 2.0 * p[a][b] + p[a - 1][b];
                h22 += p[a][b + 1] - 2.0 * p[a][b] + p[a][b - 1];
            }
        }
        Sym2 {
            xx: 0.25 * h11 / (self.dx1 * self.dx1),
            yy: 0.25 * h22 / (self.dx2 * self.dx2),
            xy: (p[2][2] - p[2][1] - p[1][2] + p[1][1]) / (self.dx1 * self.dx2),
        }
    }

    /// Transpose of [`Stencil::hess`] with respect to the Frobenius product.
    #[inline]
    pub fn hess_adj(&self, s: &Sym2) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        let c1 = 0.25 * s.xx / (self.dx1 * self.dx1);
        let c2 = 0.25 * s.yy / (self.dx2 * self.dx2);
        for a in 1..3 {
            for b in 1..3 {
                out[a + 1][b] += c1;
                out[a - 1][b] += c1;
                out[a][b] -= 2.0 * c1 + 2.0 * c2;
                out[a][b + 1] += c2;
                out[a][b - 1] += c2;
            }
        }
        let c3 = 2.0 * s.xy / (self.dx1 * self.dx2);
        out[2][2] += c3;
        out[2][1] -= c3;
        out[1][2] -= c3;
        out[1][1] += c3;
        out
    }
}

/// Local derivatives of `(u, v)` at one cell center.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct CellKin {
    pub gu: [[f64; 2]; 2],
    pub gv: [f64; 2],
    pub hv: Sym2,
}

impl CellKin {
    /// `e(u)`
    pub fn e_u(&self) -> Sym2 {
        Sym2::sym_of(self.gu)
    }
}

#[inline]
fn corners(grid: &GridSpec, a: &[f64], ci: usize, cj: usize) -> [f64; 4] {
    let k = grid.node(ci, cj);
    [a[k], a[k + 1], a[k + grid.n1], a[k + grid.n1 + 1]]
}

#[inline]
fn patch(grid: &GridSpec, vp: &[f64], ci: usize, cj: usize) -> [[f64; 4]; 4] {
    let pn1 = grid.pn1();
    let mut p = [[0.0; 4]; 4];
    for (a, row) in p.iter_mut().enumerate() {
        for (b, x) in row.iter_mut().enumerate() {
            *x = vp[(cj + b) * pn1 + ci + a];
        }
    }
    p
}

pub(crate) fn cell_kin(grid: &GridSpec, st: &Stencil, u: &[Vec<f64>; 2], vp: &[f64], ci: usize, cj: usize) -> CellKin {
    let vc = {
        let p = grid.pn1();
        let k = (cj + 1) * p + ci + 1;
        [vp[k], vp[k + 1], vp[k + p], vp[k + p + 1]]
    };
    CellKin {
        gu: [st.grad(corners(grid, &u[0], ci, cj)), st.grad(corners(grid, &u[1], ci, cj))],
        gv: st.grad(vc),
        hv: st.hess(&patch(grid, vp, ci, cj)),
    }
}

/// Cell kinematics for every cell, row-major over cells.
pub(crate) fn all_cell_kin(grid: &GridSpec, u: &[Vec<f64>; 2], vp: &[f64]) -> Vec<CellKin> {
    let st = Stencil::of(grid);
    let c1 = grid.c1();
    (0..grid.n_cells())
        .into_par_iter()
        .with_min_len(256)
        .map(|c| cell_kin(grid, &st, u, vp, c % c1, c / c1))
        .collect()
}

/// Gradient with respect to the padded layout: nodal u and padded v.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct PaddedGrad {
    pub u: [Vec<f64>; 2],
    pub v: Vec<f64>,
}

impl PaddedGrad {
    pub fn zero(grid: &GridSpec) -> Self {
        PaddedGrad {
            u: [vec![0.0; grid.n_nodes()], vec![0.0; grid.n_nodes()]],
            v: vec![0.0; grid.n_padded()],
        }
    }

    /// Scatter per-cell sensitivities: `du` for the two u-gradients, `dgv` for the
    /// v-gradient and `dhv` (Frobenius dual) for the v-Hessian.
    pub fn scatter(&mut self, grid: &GridSpec, st: &Stencil, ci: usize, cj: usize, du: [[f64; 2]; 2], dgv: [f64; 2], dhv: &Sym2) {
        let k = grid.node(ci, cj);
        let ks = [k, k + 1, k + grid.n1, k + grid.n1 + 1];
        for c in 0..2 {
            let w = st.grad_adj(du[c]);
            for (q, &kk) in ks.iter().enumerate() {
                self.u[c][kk] += w[q];
            }
        }
        let p = grid.pn1();
        let base = (cj + 1) * p + ci + 1;
        let w = st.grad_adj(dgv);
        for (q, off) in [0, 1, p, p + 1].into_iter().enumerate() {
            self.v[base + off] += w[q];
        }
        let h = st.hess_adj(dhv);
        for (a, row) in h.iter().enumerate() {
            for (b, x) in row.iter().enumerate() {
                if *x != 0.0 {
                    self.v[(cj + b) * p + ci + a] += x;
                }
            }
        }
    }

    /// Pull back to interior dofs: ghosts fold onto their mirror nodes, boundary rows drop.
    pub fn to_dofs(&self, grid: &GridSpec) -> Vec<f64> {
        let mut v = self.v.clone();
        let (n1, n2) = (grid.n1 as isize, grid.n2 as isize);
        for j in 0..n2 {
            v[grid.pidx(1, j)] += self.v[grid.pidx(-1, j)];
            v[grid.pidx(n1 - 2, j)] += self.v[grid.pidx(n1, j)];
        }
        for i in 0..n1 {
            v[grid.pidx(i, 1)] += self.v[grid.pidx(i, -1)];
            v[grid.pidx(i, n2 - 2)] += self.v[grid.pidx(i, n2)];
        }
        let m = grid.n_interior();
        let mut x = vec![0.0; 3 * m];
        for (k, (i, j)) in grid.interior_nodes().enumerate() {
            let n = grid.node(i, j);
            x[k] = self.u[0][n];
            x[m + k] = self.u[1][n];
            x[2 * m + k] = v[grid.pidx(i as isize, j as isize)];
        }
        x
    }
}

/// Cell-centered symmetric field, row-major over cells.
pub type StrainField = Vec<Sym2>;

/// Membrane and bending strains at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct StrainPair {
    pub g0: StrainField,
    pub g1: StrainField,
}

/// `G0 = e(u) + (1/2) grad v ⊗ grad v` at cell centers.
pub fn membrane_strain(state: &PlateState) -> StrainField {
    all_cell_kin(&state.grid, &state.u, &state.v)
        .iter()
        .map(|k| k.e_u() + Sym2::sym_outer(k.gv, k.gv).scale(0.5))
        .collect()
}

/// `G1 = -Hess v` at cell centers.
pub fn bending_strain(state: &PlateState) -> StrainField {
    all_cell_kin(&state.grid, &state.u, &state.v)
        .iter()
        .map(|k| k.hv.scale(-1.0))
        .collect()
}

pub fn strains(state: &PlateState) -> StrainPair {
    let kin = all_cell_kin(&state.grid, &state.u, &state.v);
    StrainPair {
        g0: kin
            .iter()
            .map(|k| k.e_u() + Sym2::sym_outer(k.gv, k.gv).scale(0.5))
            .collect(),
        g1: kin.iter().map(|k| k.hv.scale(-1.0)).collect(),
    }
}

/// Linearized strain `H(du, dv | v) = (e(du) + sym(grad dv ⊗ grad v), -Hess dv)`.
pub fn h_operator(dir: &Direction, at_state: &PlateState) -> Result<StrainPair> {
    dir.check_boundary(&at_state.grid)?;
    Ok(h_apply(&at_state.grid, &all_cell_kin(&at_state.grid, &at_state.u, &at_state.v), dir))
}

/// [`h_operator`] without the boundary check, with the state kinematics precomputed.
pub(crate) fn h_apply(grid: &GridSpec, kin: &[CellKin], dir: &Direction) -> StrainPair {
    let dk = all_cell_kin(grid, &dir.u, &dir.v);
    let g0 = kin
        .iter()
        .zip(&dk)
        .map(|(k, d)| d.e_u() + Sym2::sym_outer(d.gv, k.gv))
        .collect();
    let g1 = dk.iter().map(|d| d.hv.scale(-1.0)).collect();
    StrainPair { g0, g1 }
}

/// Transpose of [`h_apply`] on dofs: returns `sum_c <s0_c, H_mem> + <s1_c, H_bend>` as a dof vector.
pub(crate) fn h_transpose(grid: &GridSpec, kin: &[CellKin], s0: &[Sym2], s1: &[Sym2]) -> Vec<f64> {
    h_transpose_padded(grid, kin, s0, s1).to_dofs(grid)
}

pub(crate) fn h_transpose_padded(grid: &GridSpec, kin: &[CellKin], s0: &[Sym2], s1: &[Sym2]) -> PaddedGrad {
    let st = Stencil::of(grid);
    let c1 = grid.c1();
    let mut g = PaddedGrad::zero(grid);
    for (c, k) in kin.iter().enumerate() {
        let (ci, cj) = (c % c1, c / c1);
        let s = &s0[c];
        let du = [[s.xx, s.xy], [s.xy, s.yy]];
        let dgv = s.apply(k.gv);
        g.scatter(grid, &st, ci, cj, du, dgv, &s1[c].scale(-1.0));
    }
    g
}

/// Max defect of `G(s1) - G(s0) = H(s1 - s0 | v1) - (1/2) grad Δv ⊗ grad Δv` over cells.
pub fn strain_difference_identity_check(s0: &PlateState, s1: &PlateState) -> Result<f64> {
    let d = Direction::difference(s1, s0)?;
    let a = strains(s1);
    let b = strains(s0);
    let h = h_operator(&d, s1)?;
    let dk = all_cell_kin(&s1.grid, &d.u, &d.v);
    let mut worst = 0.0f64;
    for c in 0..a.g0.len() {
        let lhs0 = a.g0[c] - b.g0[c];
        let rhs0 = h.g0[c] - Sym2::sym_outer(dk[c].gv, dk[c].gv).scale(0.5);
        let lhs1 = a.g1[c] - b.g1[c];
        worst = worst.max((lhs0 - rhs0).max_abs()).max((lhs1 - h.g1[c]).max_abs());
    }
    Ok(worst)
}

/// Nodal divergence of a cell-centered vector field, paired with the cell gradient:
/// on interior nodes, `grad^T q = -(dx1 dx2) div q` under midpoint weights.
pub fn divergence(grid: &GridSpec, q: &[[f64; 2]]) -> Vec<f64> {
    let c1 = grid.c1();
    let cell = |ci: usize, cj: usize| q[cj * c1 + ci];
    let mut out = vec![0.0; grid.n_nodes()];
    for j in 1..grid.n2 - 1 {
        for i in 1..grid.n1 - 1 {
            let (sw, se, nw, ne) = (cell(i - 1, j - 1), cell(i, j - 1), cell(i - 1, j), cell(i, j));
            out[grid.node(i, j)] = ((se[0] + ne[0]) - (sw[0] + nw[0])) / (2.0 * grid.dx1())
                + ((nw[1] + ne[1]) - (sw[1] + se[1])) / (2.0 * grid.dx2());
        }
    }
    out
}

/// Cell gradient of a nodal scalar field.
pub fn cell_gradient(grid: &GridSpec, a: &[f64]) -> Vec<[f64; 2]> {
    let st = Stencil::of(grid);
    let c1 = grid.c1();
    (0..grid.n_cells())
        .map(|c| st.grad(corners(grid, a, c % c1, c / c1)))
        .collect()
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 32 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{ScalarTerm, VectorTerm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridSpec {
        GridSpec::new(1.0, 0.8, 7, 6).unwrap()
    }

    fn state_with(u: &VectorExpr, v: &ScalarExpr) -> PlateState {
        let g = grid();
        let bc = Arc::new(BoundaryData::from_presets(&g, u, v, None).unwrap());
        PlateState::from_presets(g, bc, u, v).unwrap()
    }

    fn max_dev(f: &[Sym2], e: Sym2) -> f64 {
        f.iter().fold(0.0, |m, s| m.max((*s - e).max_abs()))
    }

    #[test]
    fn rejects_small_or_degenerate_grids() {
        assert!(GridSpec::new(1.0, 1.0, 3, 5).is_err());
        assert!(GridSpec::new(0.0, 1.0, 5, 5).is_err());
        assert!(GridSpec::new(1.0, f64::NAN, 5, 5).is_err());
    }

    #[test]
    fn zero_state_and_constant_state() {
        let s = state_with(&VectorExpr::zero(), &ScalarExpr::zero());
        assert!(s.u[0].iter().chain(&s.u[1]).chain(&s.v).all(|x| *x == 0.0));
        let s = state_with(&VectorExpr::zero(), &ScalarExpr::term(ScalarTerm::Constant(1.0)));
        assert!(s.v.iter().all(|x| *x == 1.0));
        s.check_invariants(0.0).unwrap();
    }

    #[test]
    fn make_state_projects_boundary_and_keeps_interior() {
        let g = grid();
        let bc = Arc::new(BoundaryData::zero(&g));
        let n = g.n_nodes();
        let s = PlateState::make_state(g, bc.clone(), [vec![0.0; n], vec![0.0; n]], vec![3.0; n]).unwrap();
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                let want = if g.is_boundary(i, j) { 0.0 } else { 3.0 };
                assert_eq!(s.v_at(i as isize, j as isize), want);
            }
        }
        let mut t = s.clone();
        t.apply_bc();
        assert_eq!(t.v, s.v);
        assert_eq!(t.u, s.u);
        assert!(PlateState::make_state(g, bc, [vec![0.0; n], vec![0.0; n - 1]], vec![0.0; n]).is_err());
    }

    #[test]
    fn ghosts_reproduce_clamped_gradient_for_quadratics() {
        let v = ScalarExpr::term(ScalarTerm::Quadratic {
            a11: 1.3,
            a12: -0.4,
            a22: 0.7,
            b1: 0.2,
            b2: -0.5,
            c: 0.1,
        });
        let s = state_with(&VectorExpr::zero(), &v);
        let g = s.grid;
        let dom = g.domain();
        for j in -1..=g.n2 as isize {
            for i in -1..=g.n1 as isize {
                let corner = (i == -1 || i == g.n1 as isize) && (j == -1 || j == g.n2 as isize);
                if corner {
                    continue;
                }
                let x = [i as f64 * g.dx1(), j as f64 * g.dx2()];
                assert!((s.v_at(i, j) - v.value(x, &dom)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn membrane_strain_examples() {
        let s = state_with(&VectorExpr::zero(), &ScalarExpr::term(ScalarTerm::Linear { a: 1.0, b: 0.0, c: 0.0 }));
        assert!(max_dev(&membrane_strain(&s), Sym2::new(0.5, 0.0, 0.0)) <= 1e-13);
        let s = state_with(&VectorExpr::term(VectorTerm::Linear([[1.0, 0.0], [0.0, 0.0]])), &ScalarExpr::zero());
        assert!(max_dev(&membrane_strain(&s), Sym2::new(1.0, 0.0, 0.0)) <= 1e-13);
        // affine u and v in general
        let u = VectorExpr::term(VectorTerm::Linear([[0.3, -0.2], [0.5, 0.1]])).plus(VectorTerm::Constant(1.0, 2.0));
        let v = ScalarExpr::term(ScalarTerm::Linear { a: 0.4, b: -0.7, c: 0.3 });
        let s = state_with(&u, &v);
        let want = Sym2::sym_of([[0.3, -0.2], [0.5, 0.1]]) + Sym2::sym_outer([0.4, -0.7], [0.4, -0.7]).scale(0.5);
        assert!(max_dev(&membrane_strain(&s), want) <= 1e-13);
    }

    #[test]
    fn bending_strain_examples() {
        let q = |a11, a12, a22| {
            ScalarExpr::term(ScalarTerm::Quadratic {
                a11,
                a12,
                a22,
                b1: 0.0,
                b2: 0.0,
                c: 0.0,
            })
        };
        let s = state_with(&VectorExpr::zero(), &q(2.0, 0.0, 0.0));
        assert!(max_dev(&bending_strain(&s), Sym2::new(-2.0, 0.0, 0.0)) <= 1e-12);
        let s = state_with(&VectorExpr::zero(), &q(0.0, 1.0, 0.0));
        assert!(max_dev(&bending_strain(&s), Sym2::new(0.0, 0.0, -1.0)) <= 1e-12);
        let s = state_with(&VectorExpr::zero(), &ScalarExpr::term(ScalarTerm::Linear { a: 2.0, b: 1.0, c: 0.0 }));
        assert!(max_dev(&bending_strain(&s), Sym2::ZERO) <= 1e-12);
    }

    fn random_state(rng: &mut ChaCha8Rng, bc: Arc<BoundaryData>, g: GridSpec) -> PlateState {
        let n = g.n_nodes();
        let mut r = |s: f64| (0..n).map(|_| s * (rng.random::<f64>() - 0.5)).collect::<Vec<_>>();
        let u = [r(0.1), r(0.1)];
        let v = r(0.3);
        PlateState::make_state(g, bc, u, v).unwrap()
    }

    #[test]
    fn h_operator_examples() {
        let g = grid();
        let n = g.n_nodes();
        let s = state_with(&VectorExpr::zero(), &ScalarExpr::term(ScalarTerm::Linear { a: 1.0, b: 0.0, c: 0.0 }));
        let z = Direction::zero(&g);
        let h = h_operator(&z, &s).unwrap();
        assert!(max_dev(&h.g0, Sym2::ZERO) == 0.0 && max_dev(&h.g1, Sym2::ZERO) == 0.0);

        let mut dv = vec![0.0; n];
        for j in 1..g.n2 - 1 {
            for i in 1..g.n1 - 1 {
                let x = g.node_x(i, j);
                dv[g.node(i, j)] = x[0] * (1.0 - x[0]) * x[1] * (0.8 - x[1]);
            }
        }
        let d = Direction::from_nodal(&g, [vec![0.0; n], vec![0.0; n]], dv.clone()).unwrap();
        let h = h_operator(&d, &s).unwrap();
        let gd = cell_gradient(&g, &dv);
        for c in 0..g.n_cells() {
            let want = Sym2::sym_outer(gd[c], [1.0, 0.0]);
            assert!((h.g0[c] - want).max_abs() < 1e-14);
        }

        let mut bad = vec![0.0; n];
        bad[g.node(0, 2)] = 1e-3;
        let d = Direction {
            u: [bad, vec![0.0; n]],
            v: vec![0.0; g.n_padded()],
        };
        assert!(matches!(h_operator(&d, &s), Err(VkError::Precondition(_))));
    }

    #[test]
    fn strain_difference_identity_is_exact() {
        let g = grid();
        let bc = Arc::new(
            BoundaryData::from_presets(
                &g,
                &VectorExpr::parse("pure_bend(0.8)").unwrap(),
                &ScalarExpr::parse("pure_bend(0.8)+linear(0.1,0.2)").unwrap(),
                None,
            )
            .unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s0 = random_state(&mut rng, bc.clone(), g);
        let s1 = random_state(&mut rng, bc.clone(), g);
        assert_eq!(strain_difference_identity_check(&s0, &s0).unwrap(), 0.0);
        assert!(strain_difference_identity_check(&s0, &s1).unwrap() <= 1e-13);
        let mut s2 = s0.clone();
        let mut x = s2.dofs();
        let m = g.n_interior();
        for xi in &mut x[2 * m..] {
            *xi += 0.05 * rng.random::<f64>();
        }
        s2 = s2.with_dofs(&x).unwrap();
        assert!(strain_difference_identity_check(&s0, &s2).unwrap() <= 1e-13);
        let other = GridSpec::new(1.0, 0.8, 8, 6).unwrap();
        let s3 = PlateState::make_state(other, Arc::new(BoundaryData::zero(&other)), [vec![0.0; 48], vec![0.0; 48]], vec![0.0; 48]).unwrap();
        assert!(matches!(strain_difference_identity_check(&s0, &s3), Err(VkError::GridMismatch(_))));
    }

    #[test]
    fn gradient_adjoint_is_negative_divergence() {
        let g = GridSpec::new(1.0, 1.0, 6, 6).unwrap();
        let nc = g.n_cells();
        let w = g.cell_weight();
        // Columns of the gradient on interior nodes, against rows of the divergence.
        let interior: Vec<(usize, usize)> = g.interior_nodes().collect();
        for &(i, j) in &interior {
            let mut a = vec![0.0; g.n_nodes()];
            a[g.node(i, j)] = 1.0;
            let grad = cell_gradient(&g, &a);
            for c in 0..nc {
                for comp in 0..2 {
                    let mut q = vec![[0.0; 2]; nc];
                    q[c][comp] = 1.0;
                    let div = divergence(&g, &q);
                    let gt = w * grad[c][comp];
                    assert!((gt + w * div[g.node(i, j)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn padded_gradient_matches_directional_derivative() {
        // <H^T s, x> = <s, H x> for random s and x
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bc = Arc::new(BoundaryData::zero(&g));
        let st = random_state(&mut rng, bc, g);
        let kin = all_cell_kin(&g, &st.u, &st.v);
        let nc = g.n_cells();
        let mut rs = || Sym2::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let s0: Vec<Sym2> = (0..nc).map(|_| rs()).collect();
        let s1: Vec<Sym2> = (0..nc).map(|_| rs()).collect();
        let x: Vec<f64> = (0..g.n_dofs()).map(|k| ((k * 37 % 11) as f64) - 5.0).collect();
        let d = Direction::from_dofs(&g, &x).unwrap();
        let h = h_apply(&g, &kin, &d);
        let lhs: f64 = (0..nc).map(|c| s0[c].dot(&h.g0[c]) + s1[c].dot(&h.g1[c])).sum();
        let ht = h_transpose(&g, &kin, &s0, &s1);
        let rhs: f64 = ht.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn dofs_roundtrip() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bc = Arc::new(BoundaryData::from_presets(&g, &VectorExpr::zero(), &ScalarExpr::parse("sine(0.2)").unwrap(), None).unwrap());
        let s = random_state(&mut rng, bc, g);
        let x = s.dofs();
        let t = s.with_dofs(&x).unwrap();
        assert_eq!(t.v, s.v);
        assert!(s.with_dofs(&x[1..]).is_err());
        let d = Direction::from_dofs(&g, &x).unwrap();
        assert_eq!(d.dofs(&g), x);
    }

    #[test]
    fn pairwise_sum_is_accurate() {
        let x: Vec<f64> = (0..1000).map(|k| 0.1 * k as f64).collect();
        assert!((pairwise_sum(&x) - 49950.0).abs() < 1e-9);
    }
}
