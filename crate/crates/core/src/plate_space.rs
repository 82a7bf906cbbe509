//! The discrete plate as a metric space for the minimizing-movement engine.

use crate::energy::{dissipation_d0, energy_phi0, IncrementalObjective, LoadField};
use crate::error::Result;
use crate::field::{all_cell_kin, h_apply, h_transpose, Direction, PlateState};
use crate::flow::{Incremental, MetricSpace};
use crate::slope::{local_slope, probe_diagonal};
use crate::tensor::{ReducedForms, Sym2};

/// Plate energy and dissipation distance with fixed tensors and load.
#[derive(Clone, Debug)]
pub struct PlateSpace {
    pub forms: ReducedForms,
    pub load: LoadField,
}

impl PlateSpace {
    pub fn new(forms: ReducedForms, load: LoadField) -> Self {
        PlateSpace { forms, load }
    }
}

struct PlateIncremental<'a> {
    prev: &'a PlateState,
    obj: IncrementalObjective,
}

impl Incremental for PlateIncremental<'_> {
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let trial = self.prev.with_dofs(x)?;
        let (v, g) = self.obj.value_and_grad(&trial);
        Ok((v.total, g))
    }
}

impl MetricSpace for PlateSpace {
    type State = PlateState;

    fn energy(&self, s: &PlateState) -> Result<f64> {
        Ok(energy_phi0(s, &self.forms, &self.load)?.total)
    }

    fn dist2(&self, a: &PlateState, b: &PlateState) -> Result<f64> {
        Ok(dissipation_d0(a, b, &self.forms)?.powi(2))
    }

    fn dofs(&self, s: &PlateState) -> Vec<f64> {
        s.dofs()
    }

    fn project(&self, template: &PlateState, x: &[f64]) -> Result<PlateState> {
        template.with_dofs(x)
    }

    fn incremental<'a>(&'a self, tau: f64, prev: &'a PlateState) -> Result<Box<dyn Incremental + 'a>> {
        Ok(Box::new(PlateIncremental {
            prev,
            obj: IncrementalObjective::new(tau, prev, &self.forms, &self.load)?,
        }))
    }

    /// Diagonal of `H^T (C_W + C_D / tau) H` linearized at `prev`.
    fn preconditioner(&self, tau: f64, prev: &PlateState) -> Result<Option<Vec<f64>>> {
        let grid = prev.grid;
        let kin = all_cell_kin(&grid, &prev.u, &prev.v);
        let c = self.forms.cw2 + self.forms.cd2 / tau;
        let w = grid.cell_weight();
        let apply = |x: &[f64]| {
            let d = Direction::from_dofs(&grid, x).expect("dof length");
            let h = h_apply(&grid, &kin, &d);
            let s0: Vec<Sym2> = h.g0.iter().map(|g| crate::tensor::apply_voigt(&c, g).scale(w)).collect();
            let s1: Vec<Sym2> = h.g1.iter().map(|g| crate::tensor::apply_voigt(&c, g).scale(w / 12.0)).collect();
            h_transpose(&grid, &kin, &s0, &s1)
        };
        Ok(Some(probe_diagonal(&grid, apply)))
    }

    fn slope(&self, s: &PlateState) -> Option<Result<f64>> {
        Some(local_slope(s, &self.forms, &self.load).map(|r| r.slope))
    }
}
