//! The polar quadratic form against a brute-force Cartesian evaluation:
//! trapezoid rule on a square grid, gradients by central differences of the
//! closed-form test function.

use num_complex::Complex64 as C64;

use almgren_core::angular_spectrum::{build_potential, PotentialSpec};
use almgren_core::inequalities::{quadratic_form, sweep_grid, RadialBump, Recipe, TestFunction};
use almgren_core::sphere::AngularBasis;

fn recipe() -> Recipe {
    let degree = 3;
    let coeffs = (0..2 * degree + 1)
        .map(|i| C64::from_polar(0.3 + 0.1 * i as f64, 0.7 * i as f64))
        .collect();
    Recipe {
        bump: RadialBump::Annulus { inner: 0.15, outer: 0.95 },
        basis: AngularBasis::Fourier { degree },
        coeffs,
    }
}

/// `∫ |∇u + i A u|² - a(θ)|u|²/|x|²` with `A = α(θ) x^⊥/|x|²`.
fn cartesian_form(rec: &Recipe, alpha: impl Fn(f64) -> f64, a: impl Fn(f64) -> f64, n: usize) -> f64 {
    let u = |x: f64, y: f64| rec.eval(x.hypot(y), [y.atan2(x), 0.0]);
    let h = 2.0 / (n - 1) as f64;
    let d = 1e-5;
    let mut sum = 0.0;
    for i in 0..n {
        let x = -1.0 + i as f64 * h;
        for j in 0..n {
            let y = -1.0 + j as f64 * h;
            let r2 = x * x + y * y;
            if !(0.15 * 0.15..0.95 * 0.95).contains(&r2) {
                continue;
            }
            let t = y.atan2(x);
            let v = u(x, y);
            let ux = (u(x + d, y) - u(x - d, y)) / (2.0 * d);
            let uy = (u(x, y + d) - u(x, y - d)) / (2.0 * d);
            let al = alpha(t) / r2;
            let gx = ux + C64::i() * (-y * al) * v;
            let gy = uy + C64::i() * (x * al) * v;
            sum += gx.norm_sqr() + gy.norm_sqr() - a(t) * v.norm_sqr() / r2;
        }
    }
    sum * h * h
}

fn polar_form(spec: &PotentialSpec, rec: &Recipe) -> f64 {
    let pot = build_potential(2, spec).unwrap();
    let tf = TestFunction::from_recipe(rec.clone(), &sweep_grid(&pot), 800).unwrap();
    quadratic_form(&pot, &tf, 1.0).unwrap()
}

#[test]
fn aharonov_bohm_form_matches_cartesian_quadrature() {
    let rec = recipe();
    let spec = PotentialSpec::AharonovBohm { alpha: 0.3, a0: 0.1 };
    let polar = polar_form(&spec, &rec);
    let cart = cartesian_form(&rec, |_| 0.3, |_| 0.1, 2001);
    let rel = (polar - cart).abs() / cart.abs();
    assert!(rel < 1e-6, "polar {polar} cartesian {cart} relative {rel:e}");
}

#[test]
fn fourier_form_matches_cartesian_quadrature() {
    let rec = recipe();
    let spec: PotentialSpec = serde_json::from_value(serde_json::json!({
        "kind": "fourier",
        "alpha": [{"n": 0, "re": 0.2, "im": 0.0}, {"n": 1, "re": 0.1, "im": 0.05}, {"n": -1, "re": 0.1, "im": -0.05}],
        "a": [{"n": 0, "re": 0.05, "im": 0.0}, {"n": 2, "re": 0.02, "im": 0.0}, {"n": -2, "re": 0.02, "im": 0.0}]
    }))
    .unwrap();
    let polar = polar_form(&spec, &rec);
    // α(t) = 0.2 + 0.2 cos t - 0.1 sin t, a(t) = 0.05 + 0.04 cos 2t
    let cart = cartesian_form(
        &rec,
        |t| 0.2 + 0.2 * t.cos() - 0.1 * t.sin(),
        |t| 0.05 + 0.04 * (2.0 * t).cos(),
        2001,
    );
    let rel = (polar - cart).abs() / cart.abs();
    assert!(rel < 1e-6, "polar {polar} cartesian {cart} relative {rel:e}");
}
