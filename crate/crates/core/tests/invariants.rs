//! Randomized invariants of the material forms, plate metric and flow.

use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

use vkplate::energy::{dissipation_d0, energy_phi0, LoadField};
use vkplate::field::{BoundaryData, GridSpec, PlateState};
use vkplate::flow::{mm_step, FlowOptions, MetricSpace, ToySpace};
use vkplate::plate_space::PlateSpace;
use vkplate::presets::{ScalarExpr, VectorExpr};
use vkplate::tensor::{quadform3_from_density, FormKind, MaterialSpec, ReducedForms, Sym2};
use vkplate::thin::dist_so3;

fn matrix(s: f64) -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform9(-s..s).prop_map(|a| Matrix3::from_row_slice(&a))
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform3(-3.0..3.0f64).prop_map(|a| Rotation3::from_scaled_axis(Vector3::from(a)).into_inner())
}

fn material() -> MaterialSpec {
    MaterialSpec::catalog(1.3, 0.8, 1.0, 4.0, 0.5).unwrap()
}

fn states(cells: usize, seeds: &[Vec<f64>]) -> Vec<PlateState> {
    let g = GridSpec::unit_square(cells).unwrap();
    let u = VectorExpr::parse("pure_bend(0.5)").unwrap();
    let v = ScalarExpr::parse("pure_bend(0.5)").unwrap();
    let bc = Arc::new(BoundaryData::from_presets(&g, &u, &v, None).unwrap());
    let base = PlateState::from_presets(g, bc, &u, &v).unwrap();
    seeds
        .iter()
        .map(|x| {
            let d: Vec<f64> = base.dofs().iter().zip(x.iter().cycle()).map(|(b, e)| b + e).collect();
            base.with_dofs(&d).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn densities_are_frame_indifferent(f in matrix(0.4), g in matrix(0.4), q1 in rotation(), q2 in rotation()) {
        let m = material();
        let (f, g) = (Matrix3::identity() + f, Matrix3::identity() + g);
        let w = m.w(&f);
        prop_assert!((m.w(&(q1 * f)) - w).abs() <= 1e-12 * (1.0 + w));
        let d = m.d(&f, &g);
        prop_assert!((m.d(&(q1 * f), &(q2 * g)) - d).abs() <= 1e-12 * (1.0 + d));
        prop_assert_eq!(m.d(&f, &g), m.d(&g, &f));
        prop_assert!(m.w(&q1).abs() <= 1e-24);
    }

    #[test]
    fn forms_see_only_the_symmetric_part(f in matrix(2.0)) {
        let m = material();
        let s = 0.5 * (f + f.transpose());
        for kind in [FormKind::W, FormKind::D] {
            let q = quadform3_from_density(&m, kind);
            prop_assert!((q.eval(&f) - q.eval(&s)).abs() <= 1e-12 * (1.0 + q.eval(&s)));
            prop_assert!(q.eval(&s) >= q.smallest_eigenvalue() * s.norm_squared() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn perturbation_is_convex_along_segments(a in prop::array::uniform27(-1.0..1.0f64), b in prop::array::uniform27(-1.0..1.0f64), t in 0.0..1.0f64) {
        let m = material();
        let z = |x: &[f64; 27]| {
            let mut out = [[[0.0; 3]; 3]; 3];
            for (k, v) in x.iter().enumerate() {
                out[k / 9][(k / 3) % 3][k % 3] = *v;
            }
            out
        };
        let (za, zb) = (z(&a), z(&b));
        let mut mid = za;
        for i in 0..3 { for j in 0..3 { for k in 0..3 {
            mid[i][j][k] = (1.0 - t) * za[i][j][k] + t * zb[i][j][k];
        }}}
        prop_assert!(m.p(&mid) <= (1.0 - t) * m.p(&za) + t * m.p(&zb) + 1e-12);
    }

    #[test]
    fn rotations_are_at_zero_distance(q in rotation(), s in 0.5..2.0f64) {
        prop_assert!(dist_so3(&q) <= 1e-12);
        prop_assert!((dist_so3(&(q * s)) - 3f64.sqrt() * (s - 1.0).abs()).abs() <= 1e-10);
    }

    #[test]
    fn voigt_coordinates_preserve_norms(xx in -5.0..5.0f64, yy in -5.0..5.0f64, xy in -5.0..5.0f64) {
        let g = Sym2::new(xx, yy, xy);
        prop_assert!((g.voigt().norm_squared() - g.norm2()).abs() <= 1e-12 * (1.0 + g.norm2()));
        prop_assert!((Sym2::from_voigt(&g.voigt()) - g).max_abs() <= 1e-15 * (1.0 + g.max_abs()));
    }

    #[test]
    fn toy_step_beats_its_warm_start(x0 in -10.0..10.0f64, tau in 1e-4..10.0f64) {
        let (x1, _) = mm_step(&ToySpace, tau, &x0, &FlowOptions::default()).unwrap();
        let lhs = ToySpace.energy(&x1).unwrap() + ToySpace.dist2(&x0, &x1).unwrap() / (2.0 * tau);
        prop_assert!(lhs <= ToySpace.energy(&x0).unwrap() + 1e-12);
        prop_assert!((x1 - x0 / (1.0 + tau)).abs() <= 1e-9 * (1.0 + x0.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn plate_distance_is_a_metric(
        a in prop::collection::vec(-0.2..0.2f64, 17),
        b in prop::collection::vec(-0.2..0.2f64, 19),
        c in prop::collection::vec(-0.2..0.2f64, 23),
    ) {
        let s = states(8, &[a, b, c]);
        let f = ReducedForms::catalog(1.0, 1.0).unwrap();
        let d = |i: usize, j: usize| dissipation_d0(&s[i], &s[j], &f).unwrap();
        prop_assert_eq!(d(0, 1), d(1, 0));
        prop_assert!(d(0, 1) <= d(0, 2) + d(2, 1) + 1e-12);
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert!(d(0, 1) > 0.0);
    }

    #[test]
    fn plate_step_satisfies_certificate(x in prop::collection::vec(-0.2..0.2f64, 11), tau in 1e-3..1.0f64) {
        let s = states(6, &[x]).pop().unwrap();
        let f = ReducedForms::catalog(1.0, 1.0).unwrap();
        let space = PlateSpace::new(f, LoadField::zero(&s.grid));
        let (next, _) = mm_step(&space, tau, &s, &FlowOptions::default()).unwrap();
        let e0 = energy_phi0(&s, &f, &space.load).unwrap().total;
        let e1 = energy_phi0(&next, &f, &space.load).unwrap().total;
        let d = dissipation_d0(&s, &next, &f).unwrap();
        prop_assert!(e1 + d * d / (2.0 * tau) <= e0 + 1e-10 * (1.0 + e0));
        next.check_invariants(1e-14).unwrap();
    }
}
