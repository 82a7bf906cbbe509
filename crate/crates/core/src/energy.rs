//! Plate energy, dissipation distance, the incremental objective and weak residuals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, VkError};
use crate::field::{
    all_cell_kin, h_transpose_padded, pairwise_sum, strains, CellKin, Direction, GridSpec, PaddedGrad,
    PlateState, StrainPair,
};
use crate::gauss;
use crate::presets::ScalarExpr;
use crate::tensor::{ReducedForms, Sym2};

/// Cell-centered normal force density.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadField {
    pub f: Vec<f64>,
}

impl LoadField {
    pub fn zero(grid: &GridSpec) -> Self {
        LoadField {
            f: vec![0.0; grid.n_cells()],
        }
    }

    pub fn from_expr(grid: &GridSpec, e: &ScalarExpr) -> Result<Self> {
        let dom = grid.domain();
        let mut f = Vec::with_capacity(grid.n_cells());
        for cj in 0..grid.c2() {
            for ci in 0..grid.c1() {
                f.push(e.value(grid.cell_center(ci, cj), &dom));
            }
        }
        Self::from_values(grid, f)
    }

    pub fn from_values(grid: &GridSpec, f: Vec<f64>) -> Result<Self> {
        if f.len() != grid.n_cells() {
            return Err(VkError::config(
                "load.f",
                format!("expected {} cell values, got {}", grid.n_cells(), f.len()),
            ));
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(VkError::config("load.f", "non-finite load value"));
        }
        Ok(LoadField { f })
    }

    pub fn is_zero(&self) -> bool {
        self.f.iter().all(|x| *x == 0.0)
    }

    fn check(&self, grid: &GridSpec) -> Result<()> {
        if self.f.len() != grid.n_cells() {
            return Err(VkError::GridMismatch(format!(
                "load has {} cells, grid has {}",
                self.f.len(),
                grid.n_cells()
            )));
        }
        Ok(())
    }
}

/// Parts of the plate energy.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub membrane: f64,
    pub bending: f64,
    pub load: f64,
    pub total: f64,
}

/// Average of `v` over the four corners of a cell.
fn cell_mean_v(grid: &GridSpec, v: &[f64], ci: usize, cj: usize) -> f64 {
    let p = grid.pn1();
    let k = (cj + 1) * p + ci + 1;
    0.25 * (v[k] + v[k + 1] + v[k + p] + v[k + p + 1])
}

fn load_work(grid: &GridSpec, v: &[f64], load: &LoadField) -> f64 {
    let c1 = grid.c1();
    let terms: Vec<f64> = load
        .f
        .iter()
        .enumerate()
        .map(|(c, f)| f * cell_mean_v(grid, v, c % c1, c / c1))
        .collect();
    grid.cell_weight() * pairwise_sum(&terms)
}

fn add_load_grad(grid: &GridSpec, load: &LoadField, g: &mut PaddedGrad) {
    let c1 = grid.c1();
    let p = grid.pn1();
    let w = grid.cell_weight();
    for (c, f) in load.f.iter().enumerate() {
        if *f == 0.0 {
            continue;
        }
        let k = (c / c1 + 1) * p + c % c1 + 1;
        for off in [0, 1, p, p + 1] {
            g.v[k + off] -= 0.25 * w * f;
        }
    }
}

/// `(membrane, bending)` integrals of given strains.
pub fn elastic_parts(grid: &GridSpec, s: &StrainPair, forms: &ReducedForms) -> (f64, f64) {
    let w = grid.cell_weight();
    let m: Vec<f64> = s.g0.iter().map(|g| 0.5 * forms.qw(g)).collect();
    let b: Vec<f64> = s.g1.iter().map(|g| forms.qw(g) / 24.0).collect();
    (w * pairwise_sum(&m), w * pairwise_sum(&b))
}

/// Plate energy by midpoint quadrature.
pub fn energy_phi0(state: &PlateState, forms: &ReducedForms, load: &LoadField) -> Result<EnergyBreakdown> {
    load.check(&state.grid)?;
    let (membrane, bending) = elastic_parts(&state.grid, &strains(state), forms);
    let l = load_work(&state.grid, &state.v, load);
    Ok(EnergyBreakdown {
        membrane,
        bending,
        load: l,
        total: membrane + bending - l,
    })
}

/// Energy as an integral over the thin domain `S x (-1/2, 1/2)` of `Q(G0 + x3 G1)/2`,
/// integrated in `x3` by an `n`-point Gauss rule.
pub fn energy_omega_form(state: &PlateState, forms: &ReducedForms, load: &LoadField, n: usize) -> Result<f64> {
    load.check(&state.grid)?;
    let s = strains(state);
    let rule = gauss::rule(n, -0.5, 0.5);
    let terms: Vec<f64> = s
        .g0
        .iter()
        .zip(&s.g1)
        .map(|(a, b)| rule.iter().map(|(x3, w)| w * 0.5 * forms.qw(&(*a + b.scale(*x3)))).sum())
        .collect();
    Ok(state.grid.cell_weight() * pairwise_sum(&terms) - load_work(&state.grid, &state.v, load))
}

/// Nodal gradient split into components.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalGradient {
    pub u: [Vec<f64>; 2],
    pub v: Vec<f64>,
}

impl NodalGradient {
    fn from_padded(grid: &GridSpec, g: &PaddedGrad, zero_boundary: bool) -> Self {
        let (n1, n2) = (grid.n1 as isize, grid.n2 as isize);
        let mut vp = g.v.clone();
        for j in 0..n2 {
            vp[grid.pidx(1, j)] += g.v[grid.pidx(-1, j)];
            vp[grid.pidx(n1 - 2, j)] += g.v[grid.pidx(n1, j)];
        }
        for i in 0..n1 {
            vp[grid.pidx(i, 1)] += g.v[grid.pidx(i, -1)];
            vp[grid.pidx(i, n2 - 2)] += g.v[grid.pidx(i, n2)];
        }
        let mut out = NodalGradient {
            u: g.u.clone(),
            v: vec![0.0; grid.n_nodes()],
        };
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                let k = grid.node(i, j);
                out.v[k] = vp[grid.pidx(i as isize, j as isize)];
                if zero_boundary && grid.is_boundary(i, j) {
                    out.u[0][k] = 0.0;
                    out.u[1][k] = 0.0;
                    out.v[k] = 0.0;
                }
            }
        }
        out
    }

    pub fn dofs(&self, grid: &GridSpec) -> Vec<f64> {
        let m = grid.n_interior();
        let mut x = vec![0.0; 3 * m];
        for (k, (i, j)) in grid.interior_nodes().enumerate() {
            let n = grid.node(i, j);
            x[k] = self.u[0][n];
            x[m + k] = self.u[1][n];
            x[2 * m + k] = self.v[n];
        }
        x
    }

    pub fn sup_norm(&self) -> f64 {
        self.u[0]
            .iter()
            .chain(&self.u[1])
            .chain(&self.v)
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn phi0_padded_grad(state: &PlateState, forms: &ReducedForms, load: &LoadField, kin: &[CellKin]) -> PaddedGrad {
    let w = state.grid.cell_weight();
    let (s0, s1): (Vec<Sym2>, Vec<Sym2>) = kin
        .par_iter()
        .with_min_len(256)
        .map(|k| {
            let g0 = k.e_u() + Sym2::sym_outer(k.gv, k.gv).scale(0.5);
            let g1 = k.hv.scale(-1.0);
            (forms.cw(&g0).scale(w), forms.cw(&g1).scale(w / 12.0))
        })
        .unzip();
    let mut g = h_transpose_padded(&state.grid, kin, &s0, &s1);
    add_load_grad(&state.grid, load, &mut g);
    g
}

/// Gradient of [`energy_phi0`] with respect to nodal values; zero on boundary nodes.
pub fn grad_phi0(state: &PlateState, forms: &ReducedForms, load: &LoadField) -> Result<NodalGradient> {
    load.check(&state.grid)?;
    let kin = all_cell_kin(&state.grid, &state.u, &state.v);
    let g = phi0_padded_grad(state, forms, load, &kin);
    Ok(NodalGradient::from_padded(&state.grid, &g, true))
}

/// Like [`grad_phi0`] but keeping the boundary rows (the reactions).
pub fn grad_phi0_all_nodes(state: &PlateState, forms: &ReducedForms, load: &LoadField) -> Result<NodalGradient> {
    load.check(&state.grid)?;
    let kin = all_cell_kin(&state.grid, &state.u, &state.v);
    let g = phi0_padded_grad(state, forms, load, &kin);
    Ok(NodalGradient::from_padded(&state.grid, &g, false))
}

/// Squared dissipation distance between strain pairs.
pub fn dissipation_sq(grid: &GridSpec, a: &StrainPair, b: &StrainPair, forms: &ReducedForms) -> f64 {
    let terms: Vec<f64> = (0..a.g0.len())
        .map(|c| forms.qd(&(b.g0[c] - a.g0[c])) + forms.qd(&(b.g1[c] - a.g1[c])) / 12.0)
        .collect();
    grid.cell_weight() * pairwise_sum(&terms)
}

/// Dissipation distance between two states.
pub fn dissipation_d0(s0: &PlateState, s1: &PlateState, forms: &ReducedForms) -> Result<f64> {
    s0.same_grid(s1)?;
    Ok(dissipation_sq(&s0.grid, &strains(s0), &strains(s1), forms).max(0.0).sqrt())
}

/// Distance squared as an integral over the thin domain with an `n`-point rule in `x3`.
pub fn dissipation_sq_omega_form(s0: &PlateState, s1: &PlateState, forms: &ReducedForms, n: usize) -> Result<f64> {
    s0.same_grid(s1)?;
    let (a, b) = (strains(s0), strains(s1));
    let rule = gauss::rule(n, -0.5, 0.5);
    let terms: Vec<f64> = (0..a.g0.len())
        .map(|c| {
            let d0 = b.g0[c] - a.g0[c];
            let d1 = b.g1[c] - a.g1[c];
            rule.iter().map(|(x3, w)| w * forms.qd(&(d0 + d1.scale(*x3)))).sum()
        })
        .collect();
    Ok(s0.grid.cell_weight() * pairwise_sum(&terms))
}

/// `Phi(trial) = phi0(trial) + D0(prev, trial)^2 / (2 tau)` with the previous strains cached.
#[derive(Clone, Debug)]
pub struct IncrementalObjective {
    pub tau: f64,
    pub prev: PlateState,
    prev_strains: StrainPair,
    pub forms: ReducedForms,
    pub load: LoadField,
}

/// Value of the incremental objective with its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncrementalValue {
    pub total: f64,
    pub phi0: f64,
    pub dist_sq: f64,
}

impl IncrementalObjective {
    pub fn new(tau: f64, prev: &PlateState, forms: &ReducedForms, load: &LoadField) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(VkError::config("time.tau", format!("must be positive, got {tau}")));
        }
        load.check(&prev.grid)?;
        Ok(IncrementalObjective {
            tau,
            prev: prev.clone(),
            prev_strains: strains(prev),
            forms: *forms,
            load: load.clone(),
        })
    }

    pub fn value(&self, trial: &PlateState) -> IncrementalValue {
        self.eval_inner(trial, false).0
    }

    /// Value and gradient with respect to the interior dofs.
    pub fn value_and_grad(&self, trial: &PlateState) -> (IncrementalValue, Vec<f64>) {
        let (v, g) = self.eval_inner(trial, true);
        (v, g.expect("gradient requested"))
    }

    fn eval_inner(&self, trial: &PlateState, want_grad: bool) -> (IncrementalValue, Option<Vec<f64>>) {
        let grid = &trial.grid;
        let w = grid.cell_weight();
        let f = &self.forms;
        let inv_tau = 1.0 / self.tau;
        let kin = all_cell_kin(grid, &trial.u, &trial.v);
        let per_cell: Vec<(f64, f64, Sym2, Sym2)> = kin
            .par_iter()
            .with_min_len(256)
            .enumerate()
            .map(|(c, k)| {
                let g0 = k.e_u() + Sym2::sym_outer(k.gv, k.gv).scale(0.5);
                let g1 = k.hv.scale(-1.0);
                let d0 = g0 - self.prev_strains.g0[c];
                let d1 = g1 - self.prev_strains.g1[c];
                let e = 0.5 * f.qw(&g0) + f.qw(&g1) / 24.0;
                let d = f.qd(&d0) + f.qd(&d1) / 12.0;
                let s0 = (f.cw(&g0) + f.cd(&d0).scale(inv_tau)).scale(w);
                let s1 = (f.cw(&g1) + f.cd(&d1).scale(inv_tau)).scale(w / 12.0);
                (e, d, s0, s1)
            })
            .collect();
        let es: Vec<f64> = per_cell.iter().map(|t| t.0).collect();
        let ds: Vec<f64> = per_cell.iter().map(|t| t.1).collect();
        let phi0 = w * pairwise_sum(&es) - load_work(grid, &trial.v, &self.load);
        let dist_sq = w * pairwise_sum(&ds);
        let val = IncrementalValue {
            total: phi0 + 0.5 * inv_tau * dist_sq,
            phi0,
            dist_sq,
        };
        if !want_grad {
            return (val, None);
        }
        let s0: Vec<Sym2> = per_cell.iter().map(|t| t.2).collect();
        let s1: Vec<Sym2> = per_cell.iter().map(|t| t.3).collect();
        let mut g = h_transpose_padded(grid, &kin, &s0, &s1);
        add_load_grad(grid, &self.load, &mut g);
        (val, Some(g.to_dofs(grid)))
    }
}

/// One-shot form of [`IncrementalObjective`]: value and dof gradient.
pub fn incremental_objective(
    tau: f64,
    prev: &PlateState,
    trial: &PlateState,
    forms: &ReducedForms,
    load: &LoadField,
) -> Result<(f64, Vec<f64>)> {
    prev.same_setup(trial)?;
    let obj = IncrementalObjective::new(tau, prev, forms, load)?;
    let (v, g) = obj.value_and_grad(trial);
    Ok((v.total, g))
}

/// Normalized weak-form residuals: `r1` for the in-plane equation, `r2` for the
/// out-of-plane one, each maximized over test fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakResidual {
    pub r1: f64,
    pub r2: f64,
}

impl WeakResidual {
    pub fn max(&self) -> f64 {
        self.r1.max(self.r2)
    }
}

/// Weak residuals at `s_next` with backward-difference rates.
pub fn weak_residual(
    s_prev: &PlateState,
    s_next: &PlateState,
    tau: f64,
    forms: &ReducedForms,
    load: &LoadField,
    tests: &[Direction],
) -> Result<WeakResidual> {
    if tests.is_empty() {
        return Err(VkError::Precondition("weak residual needs at least one test field".into()));
    }
    if !(tau > 0.0) {
        return Err(VkError::config("time.tau", format!("must be positive, got {tau}")));
    }
    s_prev.same_grid(s_next)?;
    load.check(&s_next.grid)?;
    let grid = &s_next.grid;
    let kin = all_cell_kin(grid, &s_next.u, &s_next.v);
    let kin_prev = all_cell_kin(grid, &s_prev.u, &s_prev.v);
    // Stresses at cell centers.
    let (sigma, bend): (Vec<Sym2>, Vec<Sym2>) = kin
        .iter()
        .zip(&kin_prev)
        .map(|(k, kp)| {
            let g0 = k.e_u() + Sym2::sym_outer(k.gv, k.gv).scale(0.5);
            let vdot = [(k.gv[0] - kp.gv[0]) / tau, (k.gv[1] - kp.gv[1]) / tau];
            let edot = (k.e_u() - kp.e_u()).scale(1.0 / tau);
            let rate = edot + Sym2::sym_outer(vdot, k.gv);
            let hdot = (k.hv - kp.hv).scale(1.0 / tau);
            (forms.cw(&g0) + forms.cd(&rate), forms.cw(&k.hv) + forms.cd(&hdot))
        })
        .unzip();
    let w = grid.cell_weight();
    let c1 = grid.c1();
    let mut out = WeakResidual { r1: 0.0, r2: 0.0 };
    for t in tests {
        t.check_boundary(grid)?;
        let tk = all_cell_kin(grid, &t.u, &t.v);
        let mut a1 = Vec::with_capacity(tk.len());
        let mut a2 = Vec::with_capacity(tk.len());
        let mut ne = Vec::with_capacity(tk.len());
        let mut nh = Vec::with_capacity(tk.len());
        for (c, d) in tk.iter().enumerate() {
            let e = d.e_u();
            a1.push(sigma[c].dot(&e));
            a2.push(
                sigma[c].dot(&Sym2::sym_outer(kin[c].gv, d.gv)) + bend[c].dot(&d.hv) / 12.0
                    - load.f[c] * cell_mean_v(grid, &t.v, c % c1, c / c1),
            );
            ne.push(e.norm2());
            nh.push(d.hv.norm2());
        }
        let norm = (w * pairwise_sum(&ne)).sqrt() + (w * pairwise_sum(&nh)).sqrt();
        if norm == 0.0 {
            return Err(VkError::Precondition("test field has zero energy norm".into()));
        }
        out.r1 = out.r1.max((w * pairwise_sum(&a1)).abs() / norm);
        out.r2 = out.r2.max((w * pairwise_sum(&a2)).abs() / norm);
    }
    Ok(out)
}

/// Test fields for weak residuals: tensor-product sine bumps in each component
/// for mode pairs in `{1,2}^2`, then three seeded nodal hat-bundles per component.
pub fn test_field_library(grid: &GridSpec, seed: u64) -> Vec<Direction> {
    use std::f64::consts::PI;
    let n = grid.n_nodes();
    let mut out = Vec::new();
    let build = |comp: usize, vals: Vec<f64>| -> Direction {
        let mut u = [vec![0.0; n], vec![0.0; n]];
        let mut v = vec![0.0; n];
        let mut vals = vals;
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                if grid.is_boundary(i, j) {
                    vals[grid.node(i, j)] = 0.0;
                }
            }
        }
        match comp {
            0 | 1 => u[comp] = vals,
            _ => v = vals,
        }
        Direction::from_nodal(grid, u, v).expect("library fields vanish on the boundary")
    };
    for (k1, k2) in [(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (2.0, 2.0)] {
        for comp in 0..3 {
            let mut vals = vec![0.0; n];
            for j in 0..grid.n2 {
                for i in 0..grid.n1 {
                    let x = grid.node_x(i, j);
                    let a = (k1 * PI * x[0] / grid.l1).sin();
                    let b = (k2 * PI * x[1] / grid.l2).sin();
                    vals[grid.node(i, j)] = if comp < 2 { a * b } else { a * a * b * b };
                }
            }
            out.push(build(comp, vals));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..3 {
        let i = rng.random_range(1..grid.n1 - 1);
        let j = rng.random_range(1..grid.n2 - 1);
        for comp in 0..3 {
            let mut vals = vec![0.0; n];
            for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if ii < 0 || jj < 0 || ii >= grid.n1 as isize || jj >= grid.n2 as isize {
                        continue;
                    }
                    let wgt = if di == 0 && dj == 0 { 1.0 } else { 0.5 };
                    vals[grid.node(ii as usize, jj as usize)] = wgt;
                }
            }
            out.push(build(comp, vals));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BoundaryData;
    use crate::presets::{ScalarTerm, VectorExpr, VectorTerm};
    use std::sync::Arc;

    fn forms() -> ReducedForms {
        ReducedForms::catalog(1.0, 1.0).unwrap()
    }

    fn with_bc(grid: GridSpec, u: &VectorExpr, v: &ScalarExpr) -> PlateState {
        let bc = Arc::new(BoundaryData::from_presets(&grid, u, v, None).unwrap());
        PlateState::from_presets(grid, bc, u, v).unwrap()
    }

    fn random_state(grid: GridSpec, bc: Arc<BoundaryData>, seed: u64, amp: f64) -> PlateState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.n_nodes();
        let base = PlateState::make_state(grid, bc, [vec![0.0; n], vec![0.0; n]], vec![0.0; n]).unwrap();
        let x: Vec<f64> = (0..grid.n_dofs()).map(|_| amp * (rng.random::<f64>() - 0.5)).collect();
        base.with_dofs(&x).unwrap()
    }

    #[test]
    fn flat_state_has_zero_energy_and_gradient() {
        let g = GridSpec::unit_square(8).unwrap();
        let s = with_bc(g, &VectorExpr::zero(), &ScalarExpr::zero());
        let l = LoadField::zero(&g);
        assert_eq!(energy_phi0(&s, &forms(), &l).unwrap().total, 0.0);
        assert_eq!(grad_phi0(&s, &forms(), &l).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn membrane_only_state_energy_is_one() {
        let g = GridSpec::unit_square(8).unwrap();
        let s = with_bc(g, &VectorExpr::term(VectorTerm::Linear([[1.0, 0.0], [0.0, 0.0]])), &ScalarExpr::zero());
        let e = energy_phi0(&s, &forms(), &LoadField::zero(&g)).unwrap();
        assert!((e.total - 1.0).abs() < 1e-13);
        assert!(e.bending.abs() < 1e-13);
    }

    #[test]
    fn pure_bend_energy_converges_to_one_twelfth() {
        // v = x1^2/2, u1 = -x1^3/6 on the unit square: membrane strain O(dx^2)
        let mut errs = Vec::new();
        for cells in [8, 16, 32] {
            let g = GridSpec::unit_square(cells).unwrap();
            let s = with_bc(g, &VectorExpr::parse("pure_bend(1)").unwrap(), &ScalarExpr::parse("pure_bend(1)").unwrap());
            let e = energy_phi0(&s, &forms(), &LoadField::zero(&g)).unwrap();
            assert!((e.bending - 1.0 / 12.0).abs() < 1e-12);
            errs.push((e.total - 1.0 / 12.0).abs());
        }
        assert!(errs[2] < 1e-5 && errs[1] / errs[2] > 3.0);
    }

    #[test]
    fn omega_form_matches_plate_form() {
        let g = GridSpec::new(1.0, 0.7, 9, 8).unwrap();
        let bc = Arc::new(BoundaryData::from_presets(&g, &VectorExpr::parse("sine(0.1)").unwrap(), &ScalarExpr::parse("pure_bend(0.6)").unwrap(), None).unwrap());
        let a = random_state(g, bc.clone(), 1, 0.2);
        let b = random_state(g, bc, 2, 0.2);
        let l = LoadField::from_expr(&g, &ScalarExpr::parse("constant(0.3)").unwrap()).unwrap();
        for n in [2, 3] {
            let e = energy_phi0(&a, &forms(), &l).unwrap().total;
            assert!((energy_omega_form(&a, &forms(), &l, n).unwrap() - e).abs() <= 1e-13);
            let d2 = dissipation_d0(&a, &b, &forms()).unwrap().powi(2);
            assert!((dissipation_sq_omega_form(&a, &b, &forms(), n).unwrap() - d2).abs() <= 1e-13);
        }
    }

    #[test]
    fn dissipation_examples() {
        let g = GridSpec::unit_square(16).unwrap();
        let flat = with_bc(g, &VectorExpr::zero(), &ScalarExpr::zero());
        let bent = with_bc(g, &VectorExpr::parse("pure_bend(1)").unwrap(), &ScalarExpr::parse("pure_bend(1)").unwrap());
        let f = forms();
        assert_eq!(dissipation_d0(&flat, &flat, &f).unwrap(), 0.0);
        // The compensating u leaves an O(dx^2) membrane difference.
        let d = dissipation_d0(&flat, &bent, &f).unwrap();
        assert!((d - 1.0 / 3f64.sqrt()).abs() < 1e-4);
        assert_eq!(d, dissipation_d0(&bent, &flat, &f).unwrap());
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let g = GridSpec::new(1.0, 1.0, 8, 7).unwrap();
        let bc = Arc::new(BoundaryData::from_presets(&g, &VectorExpr::zero(), &ScalarExpr::parse("bump(0.3)").unwrap(), None).unwrap());
        let f = forms();
        for seed in 0..5 {
            let a = random_state(g, bc.clone(), 3 * seed, 0.3);
            let b = random_state(g, bc.clone(), 3 * seed + 1, 0.3);
            let c = random_state(g, bc.clone(), 3 * seed + 2, 0.3);
            let ab = dissipation_d0(&a, &b, &f).unwrap();
            assert_eq!(ab, dissipation_d0(&b, &a, &f).unwrap());
            let ac = dissipation_d0(&a, &c, &f).unwrap();
            let cb = dissipation_d0(&c, &b, &f).unwrap();
            assert!(ab <= ac + cb + 1e-12);
            assert!(ab > 0.0);
            assert_eq!(dissipation_d0(&a, &a, &f).unwrap(), 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = GridSpec::new(1.0, 0.9, 8, 7).unwrap();
        let bc = Arc::new(BoundaryData::from_presets(&g, &VectorExpr::parse("pure_bend(0.5)").unwrap(), &ScalarExpr::parse("pure_bend(0.5)").unwrap(), None).unwrap());
        let l = LoadField::from_expr(&g, &ScalarExpr::parse("gaussian(0.5,0.5,0.2,1.0)").unwrap()).unwrap();
        let f = forms();
        for seed in 0..3 {
            let s = random_state(g, bc.clone(), 10 + seed, 0.4);
            let prev = random_state(g, bc.clone(), 20 + seed, 0.4);
            let grad = grad_phi0(&s, &f, &l).unwrap().dofs(&g);
            let obj = IncrementalObjective::new(0.3, &prev, &f, &l).unwrap();
            let (_, ginc) = obj.value_and_grad(&s);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dir: Vec<f64> = (0..g.n_dofs()).map(|_| rng.random::<f64>() - 0.5).collect();
            let x = s.dofs();
            let h = 1e-6;
            let at = |t: f64| -> PlateState {
                s.with_dofs(&x.iter().zip(&dir).map(|(a, b)| a + t * b).collect::<Vec<_>>()).unwrap()
            };
            let fd = (energy_phi0(&at(h), &f, &l).unwrap().total - energy_phi0(&at(-h), &f, &l).unwrap().total) / (2.0 * h);
            let an: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
            let fd = (obj.value(&at(h)).total - obj.value(&at(-h)).total) / (2.0 * h);
            let an: f64 = ginc.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }

    #[test]
    fn gradient_has_no_net_in_plane_force() {
        let g = GridSpec::unit_square(12).unwrap();
        let s = with_bc(g, &VectorExpr::parse("pure_bend(1)").unwrap(), &ScalarExpr::parse("pure_bend(1)").unwrap());
        let gr = grad_phi0_all_nodes(&s, &forms(), &LoadField::zero(&g)).unwrap();
        let scale = gr.sup_norm();
        assert!(scale > 0.0);
        for c in 0..2 {
            let total: f64 = gr.u[c].iter().sum();
            assert!(total.abs() <= 1e-12, "{total}");
        }
    }

    #[test]
    fn incremental_objective_limits() {
        let g = GridSpec::unit_square(6).unwrap();
        let bc = Arc::new(BoundaryData::zero(&g));
        let a = random_state(g, bc.clone(), 1, 0.2);
        let b = random_state(g, bc, 2, 0.2);
        let f = forms();
        let l = LoadField::zero(&g);
        let (v, _) = incremental_objective(0.1, &a, &a, &f, &l).unwrap();
        assert!((v - energy_phi0(&a, &f, &l).unwrap().total).abs() < 1e-15);
        assert!(incremental_objective(0.0, &a, &b, &f, &l).is_err());
        let phi = energy_phi0(&b, &f, &l).unwrap().total;
        let mut last = f64::INFINITY;
        for tau in [1.0, 10.0, 100.0, 1e4] {
            let (v, _) = incremental_objective(tau, &a, &b, &f, &l).unwrap();
            assert!(v >= phi && v <= last);
            last = v;
        }
        let d2 = dissipation_d0(&a, &b, &f).unwrap().powi(2);
        assert!((last - phi - d2 / 2e4).abs() <= 1e-12 * last.abs());
    }

    #[test]
    fn weak_residual_vanishes_at_rest() {
        let g = GridSpec::unit_square(8).unwrap();
        let s = with_bc(g, &VectorExpr::zero(), &ScalarExpr::zero());
        let tests = test_field_library(&g, 5);
        let r = weak_residual(&s, &s, 0.1, &forms(), &LoadField::zero(&g), &tests).unwrap();
        assert!(r.max() <= 1e-12);
        assert!(weak_residual(&s, &s, 0.1, &forms(), &LoadField::zero(&g), &[]).is_err());
    }

    #[test]
    fn weak_residual_pairs_with_objective_gradient() {
        // With tests given by unit dofs, r1 + r2 reproduces the gradient of the
        // incremental objective up to the quadratic term (1/2 tau) grad dv ⊗ grad dv.
        let g = GridSpec::unit_square(6).unwrap();
        let bc = Arc::new(BoundaryData::zero(&g));
        let a = random_state(g, bc.clone(), 4, 0.1);
        let mut b = a.clone();
        let mut x = b.dofs();
        let m = g.n_interior();
        for k in 0..2 * m {
            x[k] += 1e-3 * ((k % 5) as f64 - 2.0);
        }
        b = b.with_dofs(&x).unwrap();
        // Only u changes, so the identity is exact.
        let f = forms();
        let l = LoadField::zero(&g);
        let (_, grad) = incremental_objective(0.2, &a, &b, &f, &l).unwrap();
        let k = 2 * m + 3;
        let mut e = vec![0.0; g.n_dofs()];
        e[k] = 1.0;
        let t = Direction::from_dofs(&g, &e).unwrap();
        let tk = all_cell_kin(&g, &t.u, &t.v);
        let norm = (g.cell_weight() * tk.iter().map(|d| d.hv.norm2()).sum::<f64>()).sqrt();
        let r = weak_residual(&a, &b, 0.2, &f, &l, &[t]).unwrap();
        assert!((r.r2 * norm - grad[k].abs()).abs() < 1e-12 * grad[k].abs().max(1.0));
    }

    #[test]
    fn manufactured_membrane_flow_residual_is_second_order() {
        // u(t) = a(t) grad(exp(x1) cos x2), v = 0 solves the linear membrane flow
        // for isotropic tensors and any a(t).
        let f = forms();
        let mut res = Vec::new();
        for cells in [8, 16, 32] {
            let g = GridSpec::unit_square(cells).unwrap();
            let u0 = VectorExpr::term(VectorTerm::Harmonic { amp: 0.1 });
            let u1 = VectorExpr::term(VectorTerm::Harmonic { amp: 0.13 });
            let s0 = with_bc(g, &u0, &ScalarExpr::zero());
            let bc1 = Arc::new(BoundaryData::from_presets(&g, &u1, &ScalarExpr::zero(), None).unwrap());
            let s1 = PlateState::from_presets(g, bc1, &u1, &ScalarExpr::zero()).unwrap();
            let tests: Vec<Direction> = test_field_library(&g, 1).into_iter().take(12).collect();
            let r = weak_residual(&s0, &s1, 0.05, &f, &LoadField::zero(&g), &tests).unwrap();
            assert!(r.r2 < 1e-14);
            res.push(r.r1);
        }
        assert!(res[0] / res[1] > 3.5 && res[1] / res[2] > 3.5, "{res:?}");
    }

    #[test]
    fn load_field_shapes() {
        let g = GridSpec::unit_square(4).unwrap();
        assert!(LoadField::from_values(&g, vec![0.0; 3]).is_err());
        assert!(LoadField::from_values(&g, vec![f64::NAN; 16]).is_err());
        let l = LoadField::from_expr(&g, &ScalarExpr::term(ScalarTerm::Constant(2.0))).unwrap();
        let s = with_bc(g, &VectorExpr::zero(), &ScalarExpr::term(ScalarTerm::Constant(1.0)));
        assert!((energy_phi0(&s, &forms(), &l).unwrap().load - 2.0).abs() < 1e-14);
    }
}
