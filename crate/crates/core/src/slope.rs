//! Local slope of the plate energy with respect to the dissipation distance.
//!
//! The slope is `sup_d <grad phi0, d> / |H d|_D` over test fields `d`, where
//! `|H d|_D^2 = int Q_D(H_mem d) + Q_D(H_bend d)/12`. The maximizer solves
//! `A x = b` with `A = H^T C_D H` and `b = grad phi0`, and the slope is `|H x|_D`.

use crate::cg::{self, CgStats};
use crate::energy::LoadField;
use crate::error::{Result, VkError};
use crate::field::{all_cell_kin, h_apply, h_transpose, CellKin, Direction, GridSpec, PlateState};
use crate::tensor::{ReducedForms, Sym2};

/// Diagonal of a linear operator on plate dofs, read off with colored probes.
/// Nodes of one color are 5 apart in each direction, so their stencils never overlap.
pub fn probe_diagonal<A>(grid: &GridSpec, apply: A) -> Vec<f64>
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let m = grid.n_interior();
    let mut diag = vec![0.0; 3 * m];
    for comp in 0..3 {
        for a in 0..5 {
            for b in 0..5 {
                let mut e = vec![0.0; 3 * m];
                let mut hit = Vec::new();
                for (k, (i, j)) in grid.interior_nodes().enumerate() {
                    if (i - 1) % 5 == a && (j - 1) % 5 == b {
                        e[comp * m + k] = 1.0;
                        hit.push(comp * m + k);
                    }
                }
                if hit.is_empty() {
                    continue;
                }
                let ae = apply(&e);
                for k in hit {
                    diag[k] = ae[k];
                }
            }
        }
    }
    diag
}

/// Matrix-free dissipation operator and energy functional at a state.
#[derive(Clone, Debug)]
pub struct SlopeSystem {
    pub grid: GridSpec,
    kin: Vec<CellKin>,
    pub forms: ReducedForms,
    pub rhs: Vec<f64>,
}

/// Scale a strain pair by the quadrature weights and a tensor.
fn weighted(grid: &GridSpec, forms: &ReducedForms, h0: &[Sym2], h1: &[Sym2], use_w: bool) -> (Vec<Sym2>, Vec<Sym2>) {
    let w = grid.cell_weight();
    let c = |g: &Sym2| if use_w { forms.cw(g) } else { forms.cd(g) };
    (
        h0.iter().map(|g| c(g).scale(w)).collect(),
        h1.iter().map(|g| c(g).scale(w / 12.0)).collect(),
    )
}

impl SlopeSystem {
    pub fn n_dofs(&self) -> usize {
        self.rhs.len()
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = Direction::from_dofs(&self.grid, x).expect("dof length");
        let h = h_apply(&self.grid, &self.kin, &d);
        let (s0, s1) = weighted(&self.grid, &self.forms, &h.g0, &h.g1, false);
        h_transpose(&self.grid, &self.kin, &s0, &s1)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        probe_diagonal(&self.grid, |x| self.apply(x))
    }

    /// `|H d|_D^2`, computed with the square root of the dissipation tensor.
    pub fn dissipation_norm_sq(&self, x: &[f64]) -> Result<f64> {
        let d = Direction::from_dofs(&self.grid, x)?;
        let h = h_apply(&self.grid, &self.kin, &d);
        let sq = |g: &Sym2| (self.forms.sqrt_cd2 * g.voigt()).norm_squared();
        let t: Vec<f64> = h.g0.iter().zip(&h.g1).map(|(a, b)| sq(a) + sq(b) / 12.0).collect();
        Ok(self.grid.cell_weight() * crate::field::pairwise_sum(&t))
    }

    /// The same norm written as `|C_D^{-1/2} (C_D H d)|`, the form in which the
    /// stress balance is stated.
    pub fn dissipation_norm_sq_dual(&self, x: &[f64]) -> Result<f64> {
        let d = Direction::from_dofs(&self.grid, x)?;
        let h = h_apply(&self.grid, &self.kin, &d);
        let sq = |g: &Sym2| (self.forms.inv_sqrt_cd2 * self.forms.cd(g).voigt()).norm_squared();
        let t: Vec<f64> = h.g0.iter().zip(&h.g1).map(|(a, b)| sq(a) + sq(b) / 12.0).collect();
        Ok(self.grid.cell_weight() * crate::field::pairwise_sum(&t))
    }
}

/// Build the system at `state`. Loads are not supported.
pub fn assemble_slope_system(state: &PlateState, forms: &ReducedForms, load: &LoadField) -> Result<SlopeSystem> {
    if !load.is_zero() {
        return Err(VkError::UnsupportedWithLoad);
    }
    let grid = state.grid;
    let kin = all_cell_kin(&grid, &state.u, &state.v);
    let g0: Vec<Sym2> = kin
        .iter()
        .map(|k| k.e_u() + Sym2::sym_outer(k.gv, k.gv).scale(0.5))
        .collect();
    let g1: Vec<Sym2> = kin.iter().map(|k| k.hv.scale(-1.0)).collect();
    let (s0, s1) = weighted(&grid, forms, &g0, &g1, true);
    let rhs = h_transpose(&grid, &kin, &s0, &s1);
    Ok(SlopeSystem {
        grid,
        kin,
        forms: *forms,
        rhs,
    })
}

#[derive(Clone, Debug)]
pub struct SlopeResult {
    pub slope: f64,
    /// Maximizing direction in dofs.
    pub minimizer: Vec<f64>,
    pub cg: CgStats,
    /// `|slope^2 - <b, x>|`: how well the solve closes the duality gap.
    pub duality_gap: f64,
    /// Difference between the primal and dual norm forms of the slope.
    pub two_form_defect: f64,
}

/// Local slope by conjugate gradients (Jacobi, relative residual 1e-10, at most 10 n iterations).
pub fn local_slope(state: &PlateState, forms: &ReducedForms, load: &LoadField) -> Result<SlopeResult> {
    let sys = assemble_slope_system(state, forms, load)?;
    solve_system(&sys)
}

pub fn solve_system(sys: &SlopeSystem) -> Result<SlopeResult> {
    let diag = sys.diagonal();
    let (x, stats) = cg::solve(|p| sys.apply(p), &sys.rhs, Some(&diag), 1e-10, 10 * sys.n_dofs())?;
    let primal = sys.dissipation_norm_sq(&x)?;
    let dual = sys.dissipation_norm_sq_dual(&x)?;
    let bx: f64 = sys.rhs.iter().zip(&x).map(|(a, b)| a * b).sum();
    let slope = primal.max(0.0).sqrt();
    Ok(SlopeResult {
        slope,
        duality_gap: (primal - bx).abs(),
        two_form_defect: (slope - dual.max(0.0).sqrt()).abs(),
        minimizer: x,
        cg: stats,
    })
}

/// `<grad phi0, d> / |H d|_D`; a lower bound for the slope.
pub fn rayleigh_ratio(sys: &SlopeSystem, direction: &[f64]) -> Result<f64> {
    if direction.len() != sys.n_dofs() {
        return Err(VkError::LengthMismatch {
            expected: sys.n_dofs(),
            got: direction.len(),
        });
    }
    let den = sys.dissipation_norm_sq(direction)?;
    if !(den > 0.0) {
        return Err(VkError::DegenerateDirection);
    }
    let num: f64 = sys.rhs.iter().zip(direction).map(|(a, b)| a * b).sum();
    Ok(num / den.sqrt())
}
