use num_complex::Complex64 as C64;
use proptest::prelude::*;

use almgren_core::angular_spectrum::{build_potential, compute_spectrum, mu1, PotentialSpec};
use almgren_core::asymptotics::{field_distance, kelvin_transform};
use almgren_core::modal_field::{characteristic_exponents, FieldSample, Side};
use almgren_core::quadrature::{tail_above, tail_below, RadialGrid};
use almgren_core::scenario::Scenario;
use almgren_core::sphere::AngularGrid;

fn ab_mu1(alpha: f64) -> f64 {
    let pot = build_potential(2, &PotentialSpec::AharonovBohm { alpha, a0: 0.0 }).unwrap();
    mu1(&compute_spectrum(&pot, 32, 2).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponents_solve_the_indicial_equation(n in 2usize..=3, shift in 1e-3f64..30.0) {
        let k = n as f64 - 2.0;
        let mu = shift - k * k / 4.0;
        let e = characteristic_exponents(n, mu).unwrap();
        prop_assert!((e.sigma_plus + e.sigma_minus + k).abs() < 1e-12);
        for s in [e.sigma_plus, e.sigma_minus] {
            prop_assert!((s * (s + k) - mu).abs() < 1e-10 * (1.0 + mu.abs()));
        }
        prop_assert!(characteristic_exponents(n, -k * k / 4.0 - shift).is_err());
    }

    #[test]
    fn three_term_tails_are_exact(
        p in 0.2f64..4.0,
        eps in 0.3f64..1.5,
        b in -0.3f64..0.3,
        c in -0.1f64..0.1,
    ) {
        let grid = RadialGrid::log_spaced(1e-4, 1.0, 200).unwrap();
        let h = grid.step();
        let s0 = grid.first().ln();
        let f: Vec<C64> = grid
            .radii()
            .iter()
            .map(|r| {
                let s = r.ln() - s0;
                C64::new((p * s).exp() * (1.0 + b * (eps * s).exp() + c * (2.0 * eps * s).exp()), 0.0)
            })
            .collect();
        let exact = 1.0 / p + b / (p + eps) + c / (p + 2.0 * eps);
        let got = tail_below(&f, h, Some(eps)).unwrap().re;
        prop_assert!((got - exact).abs() < 1e-9 * exact.abs(), "{} vs {}", got, exact);
        let rev: Vec<C64> = f.iter().rev().copied().collect();
        let got = tail_above(&rev, h, Some(eps)).unwrap().re;
        prop_assert!((got - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn hardy_constant_is_periodic_and_even(alpha in -2.0f64..2.0) {
        let m = ab_mu1(alpha);
        prop_assert!((m - ab_mu1(alpha + 1.0)).abs() < 1e-10);
        prop_assert!((m - ab_mu1(-alpha)).abs() < 1e-10);
        prop_assert!((0.0..=0.25 + 1e-12).contains(&m));
    }

    #[test]
    fn double_kelvin_is_identity(
        n in 2usize..=3,
        exterior in any::<bool>(),
        seed in proptest::collection::vec(-1.0f64..1.0, 8),
    ) {
        let radial = RadialGrid::log_spaced(1e-3, 1.0, 40).unwrap();
        let angular = match n {
            2 => AngularGrid::circle(8),
            _ => AngularGrid::sphere(4, 8),
        };
        let nq = angular.len();
        let values: Vec<C64> = (0..radial.len() * nq)
            .map(|i| C64::new(seed[i % 8] + i as f64 * 1e-3, seed[(i + 3) % 8]))
            .collect();
        let side = if exterior { Side::Exterior } else { Side::Interior };
        let f = FieldSample::new(n, side, radial, angular, values).unwrap();
        let v = kelvin_transform(&f);
        prop_assert_eq!(v.side, side.flipped());
        let back = kelvin_transform(&v);
        prop_assert!(field_distance(&f, &back).unwrap() < 1e-12);
    }

    #[test]
    fn scenario_hash_ignores_layout(alpha in -0.9f64..0.9, points in 100usize..800) {
        let a = format!(
            r#"{{"dimension": 2, "potential": {{"kind": "aharonov_bohm", "alpha": {alpha}}}, "grid": {{"points": {points}}}}}"#
        );
        let b = format!(
            "{{\n  \"grid\": {{ \"points\": {points} }},\n  \"potential\": {{ \"alpha\": {alpha}, \"kind\": \"aharonov_bohm\" }},\n  \"dimension\": 2\n}}"
        );
        let ha = Scenario::from_json(&a).unwrap().hash();
        prop_assert_eq!(ha, Scenario::from_json(&b).unwrap().hash());
    }
}
