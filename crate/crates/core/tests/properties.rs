use std::sync::Arc;

use multiphase::exponent::{ExponentTriple, WeightPair};
use multiphase::fem::FeFunction;
use multiphase::mesh::structured_mesh;
use multiphase::modular::{luxemburg_norm, modular, DEFAULT_REL_TOL};
use multiphase::operator::check_monotone;
use multiphase::regularity::{caccioppoli_ratio, sobolev_poincare_ratio};
use multiphase::{
    Ball, Domain2D, FluxParams, MultiPhaseOperator, PhaseFunction, QuadratureMeasure, ScalarField, TriMesh,
    TriangleRule,
};
use proptest::prelude::*;

fn mesh(n: usize) -> Arc<TriMesh> {
    Arc::new(structured_mesh(&Domain2D::unit_square(), n).unwrap())
}

fn phase(p: f64, dq: f64, dr: f64, mu1: f64, mu2: f64) -> PhaseFunction {
    let d = Domain2D::unit_square();
    PhaseFunction::new(
        ExponentTriple::on_domain(
            ScalarField::affine([p, 0.2, 0.0]),
            ScalarField::affine([p + dq, 0.2, 0.0]),
            ScalarField::affine([p + dq + dr, 0.2, 0.1]),
            &d,
        )
        .unwrap(),
        WeightPair::on_domain(ScalarField::affine([mu1, 0.0, 0.3]), ScalarField::constant(mu2), &d).unwrap(),
    )
}

fn phase_strategy() -> impl Strategy<Value = PhaseFunction> {
    (1.2..3.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..2.0f64, 0.0..2.0f64)
        .prop_map(|(p, dq, dr, m1, m2)| phase(p, dq, dr, m1, m2))
}

fn nodal(n: usize, zero_boundary: bool) -> impl Strategy<Value = Vec<f64>> {
    let m = mesh(n);
    let flags = m.boundary_flags().to_vec();
    prop::collection::vec(-2.0..2.0f64, flags.len()).prop_map(move |mut v| {
        if zero_boundary {
            for (x, &b) in v.iter_mut().zip(&flags) {
                if b {
                    *x = 0.0;
                }
            }
        }
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn luxemburg_norm_is_homogeneous(tf in phase_strategy(), v in nodal(4, false), c in 0.01..100.0f64) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let m = mesh(4);
        let rule = TriangleRule::default();
        let quad = QuadratureMeasure::on_mesh(&m, &rule);
        let u = FeFunction::new(m, v).unwrap().values_at_quadrature(&rule);
        let cu: Vec<f64> = u.iter().map(|x| c * x).collect();
        let a = luxemburg_norm(&tf, &u, &quad, DEFAULT_REL_TOL).unwrap().luxemburg_norm;
        let b = luxemburg_norm(&tf, &cu, &quad, DEFAULT_REL_TOL).unwrap().luxemburg_norm;
        prop_assert!((b - c * a).abs() <= 1e-9 * c * a);
    }

    #[test]
    fn modular_is_monotone_in_scaling(tf in phase_strategy(), v in nodal(4, false), s in 1.0..10.0f64) {
        let m = mesh(4);
        let rule = TriangleRule::default();
        let quad = QuadratureMeasure::on_mesh(&m, &rule);
        let u = FeFunction::new(m, v).unwrap().values_at_quadrature(&rule);
        let su: Vec<f64> = u.iter().map(|x| s * x).collect();
        prop_assert!(modular(&tf, &su, &quad).unwrap() >= modular(&tf, &u, &quad).unwrap());
    }

    #[test]
    fn operator_is_monotone(tf in phase_strategy(), a in nodal(6, true), b in nodal(6, true)) {
        let m = mesh(6);
        let fp = FluxParams::new(tf.clone(), FluxParams::natural_eps(&tf)).unwrap();
        let op = MultiPhaseOperator::new(&fp, m.clone());
        let u = FeFunction::new(m.clone(), a).unwrap();
        let v = FeFunction::new(m, b).unwrap();
        prop_assert!(check_monotone(&op, &u, &v).unwrap() >= -1e-12);
    }

    #[test]
    fn probe_ratios_ignore_constant_shifts(tf in phase_strategy(), v in nodal(8, false), shift in -5.0..5.0f64) {
        let m = mesh(8);
        let u = FeFunction::new(m.clone(), v.clone()).unwrap();
        let w = FeFunction::new(m, v.iter().map(|x| x + shift).collect()).unwrap();
        let inner = Ball::new([0.5, 0.5], 0.15).unwrap();
        let outer = Ball::new([0.5, 0.5], 0.3).unwrap();
        let a = caccioppoli_ratio(&tf, &u, &inner, &outer).unwrap();
        let b = caccioppoli_ratio(&tf, &w, &inner, &outer).unwrap();
        prop_assert!((a.lhs - b.lhs).abs() <= 1e-9 * (1.0 + a.lhs));
        let a = sobolev_poincare_ratio(&tf, &u, &outer, 0.75, None).unwrap();
        let b = sobolev_poincare_ratio(&tf, &w, &outer, 0.75, None).unwrap();
        prop_assert!((a.ratio - b.ratio).abs() <= 1e-6 * (1.0 + a.ratio));
    }
}
