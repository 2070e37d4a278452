use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;

use hodge_maxwell::dec::{Cochain, DecOps};
use hodge_maxwell::inner::InnerSolveConfig;
use hodge_maxwell::io::{cochain_to_string, parse_cochain};
use hodge_maxwell::mesh::build_flat_torus;
use hodge_maxwell::nonlinearity::{lhs_scalar, NonlinearityModel};
use hodge_maxwell::reduced::ReducedProblem;
use hodge_maxwell::spectral::HodgeSpaces;

fn t2_ops() -> Arc<DecOps> {
    Arc::new(DecOps::new(Arc::new(build_flat_torus(2, 4).unwrap())).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn d_squared_vanishes(values in prop::collection::vec(-1000i32..1000, 16)) {
        // integer-valued cochains keep every sum exact
        let ops = t2_ops();
        let c = Cochain::new(0, DVector::from_iterator(16, values.into_iter().map(f64::from)));
        let dd = ops.exterior_derivative(&ops.exterior_derivative(&c).unwrap()).unwrap();
        prop_assert!(dd.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn functional_is_even_and_nonnegative(values in prop::collection::vec(-5.0f64..5.0, 48), eps in 0.01f64..2.0) {
        let ops = t2_ops();
        let m = NonlinearityModel::power(3.0).unwrap().perturb(eps).unwrap();
        let xi = Cochain::new(1, DVector::from_vec(values));
        let a = m.functional(&ops, &xi).unwrap();
        let b = m.functional(&ops, &xi.scale(-1.0)).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, b);
        // F_ε = F + ε|ξ|²
        let base = m.unperturbed().functional(&ops, &xi).unwrap();
        let n = ops.l2_inner(&xi, &xi).unwrap();
        prop_assert!((a - base - eps * n).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn scalar_inequality_is_nonnegative(a in -20.0f64..20.0, b in -5.0f64..5.0, p in 2.1f64..6.0) {
        prop_assert!(lhs_scalar(a, b, p) >= -1e-9 * (a.abs() + b.abs()).powf(p).max(1.0));
    }

    #[test]
    fn cochain_text_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..40), degree in 0usize..3) {
        let c = Cochain::new(degree, DVector::from_vec(values));
        let (back, hash) = parse_cochain(&cochain_to_string(&c, "abc")).unwrap();
        prop_assert_eq!(hash, "abc");
        prop_assert_eq!(back.degree(), degree);
        prop_assert_eq!(back.values(), c.values());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reduced_functional_is_even(coeffs in prop::collection::vec(-3.0f64..3.0, 33)) {
        let sp = HodgeSpaces::new(t2_ops(), 1).unwrap();
        let prob = ReducedProblem::new(&sp, NonlinearityModel::shifted_power(1.0, 3.0).unwrap(), InnerSolveConfig::default());
        let c = DVector::from_vec(coeffs);
        let a = prob.evaluate(&c).unwrap();
        let b = prob.evaluate(&(-&c)).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-10 * a.value.abs().max(1.0));
        prop_assert!((&a.gradient + &b.gradient).amax() <= 1e-8 * a.gradient.amax().max(1.0));
    }

    #[test]
    fn w_coordinates_round_trip(coeffs in prop::collection::vec(-3.0f64..3.0, 33)) {
        let sp = HodgeSpaces::new(t2_ops(), 1).unwrap();
        let c = DVector::from_vec(coeffs);
        let beta = sp.from_w_coefficients(&c);
        let back = sp.w_coefficients(&beta).unwrap();
        prop_assert!((&back - &c).amax() <= 1e-10 * c.amax().max(1.0));
        let dirichlet: f64 = c.iter().zip(sp.w_lambdas()).map(|(x, l)| l * x * x).sum();
        let db = sp.ops().exterior_derivative(&beta).unwrap();
        let direct = sp.ops().l2_inner(&db, &db).unwrap();
        prop_assert!((dirichlet - direct).abs() <= 1e-10 * direct.max(1.0));
    }
}
