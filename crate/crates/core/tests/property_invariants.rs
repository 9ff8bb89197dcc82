//! Property-based invariants: projections land in (and stay in) their target
//! sets, parameter layouts round-trip, and norm exponents survive
//! serialization.

use proptest::prelude::*;
use sro_core::generator::{
    AffineGaussianParams, GeneratorDims, GeneratorSpec, MlpTanhParams,
};
use sro_core::geometry::{
    ball_membership, lp_norm, project_ball, project_simplex, NormExponent, PerturbationBall,
};

fn finite_vec(len: usize, bound: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-bound..bound, len)
}

proptest! {
    #[test]
    fn simplex_projection_is_feasible_and_idempotent(
        v in (1usize..8).prop_flat_map(|d| finite_vec(d, 10.0))
    ) {
        let p = project_simplex(&v).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        let again = project_simplex(&p).unwrap();
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-9, "not idempotent: {a} vs {b}");
        }
    }

    #[test]
    fn ball_projection_lands_inside(
        (eps, radius, inf) in (1usize..6).prop_flat_map(|d| {
            (finite_vec(d, 5.0), 0.01f64..3.0, any::<bool>())
        })
    ) {
        let exponent = if inf { NormExponent::Inf } else { NormExponent::TWO };
        let ball = PerturbationBall::new(vec![0.0; eps.len()], radius, exponent).unwrap();
        let p = project_ball(&eps, &ball).unwrap();
        prop_assert!(ball_membership(&p, &ball).unwrap());
        // Projection never increases the norm.
        prop_assert!(lp_norm(&p, exponent) <= lp_norm(&eps, exponent) + 1e-12);
    }

    #[test]
    fn ball_projection_fixes_interior_points_exactly(
        (dir, radius) in (1usize..6).prop_flat_map(|d| (finite_vec(d, 1.0), 0.5f64..4.0))
    ) {
        // Scale the point strictly inside, then require bitwise identity.
        let norm = lp_norm(&dir, NormExponent::TWO);
        prop_assume!(norm > 1e-9);
        let inside: Vec<f64> = dir.iter().map(|e| e * 0.4 * radius / norm).collect();
        let ball = PerturbationBall::new(vec![0.0; dir.len()], radius, NormExponent::TWO).unwrap();
        let p = project_ball(&inside, &ball).unwrap();
        for (a, b) in p.iter().zip(&inside) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn norm_exponent_serde_round_trips(p in 1.0001f64..50.0, inf in any::<bool>()) {
        let exponent = if inf { NormExponent::Inf } else { NormExponent::finite(p).unwrap() };
        let text = serde_json::to_string(&exponent).unwrap();
        let back: NormExponent = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(exponent, back);
    }

    #[test]
    fn affine_layout_round_trips(
        (f, dz, d, seed) in (1usize..4, 1usize..4, 1usize..4, any::<u64>())
    ) {
        let dims = GeneratorDims::new(f, dz, d).unwrap();
        let spec: GeneratorSpec<f64> = sro_core::generator::random_affine(seed, dims, 0.5);
        let parts = AffineGaussianParams::unflatten(&spec).unwrap();
        let back = parts.flatten();
        prop_assert_eq!(spec, back);
    }

    #[test]
    fn mlp_layout_round_trips(
        (f, dz, d, h, seed) in (1usize..4, 1usize..4, 1usize..4, 1usize..6, any::<u64>())
    ) {
        let dims = GeneratorDims::new(f, dz, d).unwrap();
        let spec: GeneratorSpec<f64> = sro_core::generator::random_mlp(seed, dims, h, 0.5);
        let parts = MlpTanhParams::unflatten(&spec).unwrap();
        let back = parts.flatten();
        prop_assert_eq!(spec, back);
    }

    #[test]
    fn lp_norm_satisfies_triangle_inequality(
        (a, b, use_inf, p) in (1usize..6).prop_flat_map(|d| {
            (finite_vec(d, 10.0), finite_vec(d, 10.0), any::<bool>(), 1.0001f64..8.0)
        })
    ) {
        let exponent = if use_inf { NormExponent::Inf } else { NormExponent::finite(p).unwrap() };
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = lp_norm(&sum, exponent);
        let rhs = lp_norm(&a, exponent) + lp_norm(&b, exponent);
        prop_assert!(lhs <= rhs + 1e-9 * rhs.max(1.0), "{lhs} > {rhs}");
    }
}
