//! Leading-order asymptotics at the singular end: exponent, eigenspace,
//! coefficients `β_i`, blow-up profiles, Kelvin transform and regularity.

use serde::{Deserialize, Serialize};

use crate::angular_spectrum::AngularSpectrum;
use crate::error::{Error, Result};
use crate::modal_field::{
    characteristic_exponents, perturbation_samples, project_onto_modes, FieldGradient,
    FieldSample, PerturbationSpec, Side,
};
use crate::quadrature::{cumulative_backward, cumulative_forward, linear_fit, tail_above, tail_below};
use crate::sphere::C64;

/// Largest admissible gap between a fitted exponent and a spectral one.
pub const BLOCK_MATCH_TOL: f64 = 1e-4;

/// Distances below this are treated as exact agreement when fitting rates.
const EXACT_FLOOR: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularityClass {
    /// `u ∈ C^{0,γ}` near the pole.
    Holder { exponent: f64 },
    Lipschitz,
    /// Leading term is bounded but does not vanish (`γ = 0`).
    Bounded,
    UnboundedAtOrigin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    #[serde(flatten)]
    pub class: RegularityClass,
    pub gamma: f64,
    /// Nontrivial solutions vanish at the pole exactly at order `γ`, never
    /// to infinite order.
    pub strong_unique_continuation: bool,
}

pub fn classify_regularity(gamma: f64, _dimension: usize) -> Regularity {
    let class = if gamma < 0.0 {
        RegularityClass::UnboundedAtOrigin
    } else if gamma >= 1.0 {
        RegularityClass::Lipschitz
    } else if gamma > 0.0 {
        RegularityClass::Holder { exponent: gamma }
    } else {
        RegularityClass::Bounded
    };
    Regularity {
        class,
        gamma,
        strong_unique_continuation: true,
    }
}

/// Exponent of mode `k` on the given side: `σ⁺_k` inside,
/// `γ̃_k = (N-2)/2 + √(((N-2)/2)² + μ_k)` outside.
pub fn side_exponent(dimension: usize, mu: f64, side: Side) -> Result<f64> {
    let e = characteristic_exponents(dimension, mu)?;
    Ok(match side {
        Side::Interior => e.sigma_plus,
        Side::Exterior => -e.sigma_minus,
    })
}

/// Block `(j0, m)` whose exponent is within `tol` of `gamma`, together with
/// that exact exponent.
pub fn match_block(
    spectrum: &AngularSpectrum,
    gamma: f64,
    side: Side,
    tol: f64,
) -> Result<((usize, usize), f64)> {
    let dim = spectrum.dimension();
    let mut best: Option<((usize, usize), f64)> = None;
    for &(j0, m) in &spectrum.blocks {
        let g = side_exponent(dim, spectrum.eigenvalues[j0 - 1], side)?;
        if (g - gamma).abs() <= tol
            && best.is_none_or(|(_, bg)| (g - gamma).abs() < (bg - gamma).abs())
        {
            best = Some(((j0, m), g));
        }
    }
    best.ok_or(Error::NoEigenvalueMatch { gamma, tol })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticProfile {
    pub gamma: f64,
    pub k0: usize,
    pub block: (usize, usize),
    pub beta: Vec<C64>,
    pub radius: f64,
    pub side: Side,
    pub regularity: Regularity,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileJson {
    pub gamma: f64,
    pub k0: usize,
    pub block: [usize; 2],
    pub beta: Vec<[f64; 2]>,
    #[serde(rename = "R")]
    pub radius: f64,
    pub side: Side,
    pub regularity: Regularity,
}

impl AsymptoticProfile {
    pub fn to_json(&self) -> ProfileJson {
        ProfileJson {
            gamma: self.gamma,
            k0: self.k0,
            block: [self.block.0, self.block.1],
            beta: self.beta.iter().map(|b| [b.re, b.im]).collect(),
            radius: self.radius,
            side: self.side,
            regularity: self.regularity.clone(),
        }
    }

    pub fn beta_norm(&self) -> f64 {
        self.beta.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Coefficients of `u` along the block matching `gamma`, from the
/// Cauchy-type representation at radius `radius` (interior fields) or its
/// exterior counterpart.
pub fn extract_coefficients(
    field: &FieldSample,
    spectrum: &AngularSpectrum,
    gamma: f64,
    radius: f64,
    h: Option<&PerturbationSpec>,
    correction: Option<f64>,
) -> Result<AsymptoticProfile> {
    let n = field.dimension as f64;
    let side = field.side;
    let ((j0, m), g) = match_block(spectrum, gamma, side, BLOCK_MATCH_TOL)?;
    let denom = match side {
        Side::Interior => 2.0 * g + n - 2.0,
        Side::Exterior => 2.0 * g - n + 2.0,
    };
    if denom.abs() < 1e-12 {
        return Err(Error::DegenerateExponent(format!(
            "weight denominator {denom:e} vanishes for exponent {g}"
        )));
    }
    let modes = j0 + m - 1;
    let ir = field.radial.nearest_index(radius)?;
    let radii = field.radial.radii();
    let rr = radii[ir];
    let phi = project_onto_modes(field, spectrum, modes)?;
    let zeta = match h.filter(|h| !h.is_zero()) {
        Some(h) => Some(perturbation_samples(h, field, spectrum, modes)?),
        None => None,
    };
    let step = field.radial.step();
    let mut beta = Vec::with_capacity(m);
    for k in (j0 - 1)..(j0 - 1 + m) {
        let mut b = match side {
            Side::Interior => phi[k][ir] * rr.powf(-g),
            Side::Exterior => phi[k][ir] * rr.powf(g),
        };
        if let Some(z) = &zeta {
            // weights written in the log variable (ds = s dln s)
            let (w1, w2): (Vec<C64>, Vec<C64>) = radii
                .iter()
                .zip(&z[k])
                .map(|(s, zk)| match side {
                    Side::Interior => (
                        zk * s.powf(2.0 - g),
                        zk * (s.powf(g + n) * rr.powf(-denom)),
                    ),
                    Side::Exterior => (
                        zk * s.powf(g + 2.0),
                        zk * (s.powf(n - g) * rr.powf(denom)),
                    ),
                })
                .unzip();
            let integral = |w: &[C64]| -> Result<C64> {
                match side {
                    Side::Interior => {
                        let c = cumulative_forward(w, step);
                        Ok(c[ir] + tail_below(w, step, correction)?)
                    }
                    Side::Exterior => {
                        let c = cumulative_backward(w, step);
                        Ok(c[ir] + tail_above(w, step, correction)?)
                    }
                }
            };
            b += (integral(&w1)? - integral(&w2)?) / denom;
        }
        beta.push(b);
    }
    Ok(AsymptoticProfile {
        gamma: g,
        k0: j0,
        block: (j0, m),
        beta,
        radius: rr,
        side,
        regularity: classify_regularity(g, field.dimension),
    })
}

pub fn extract_interior_coefficients(
    field: &FieldSample,
    spectrum: &AngularSpectrum,
    gamma: f64,
    radius: f64,
    h: Option<&PerturbationSpec>,
    correction: Option<f64>,
) -> Result<AsymptoticProfile> {
    if field.side != Side::Interior {
        return Err(Error::InvalidInput("interior extraction needs an interior field".into()));
    }
    extract_coefficients(field, spectrum, gamma, radius, h, correction)
}

pub fn extract_exterior_coefficients(
    field: &FieldSample,
    spectrum: &AngularSpectrum,
    gamma_tilde: f64,
    radius: f64,
    h: Option<&PerturbationSpec>,
    correction: Option<f64>,
) -> Result<AsymptoticProfile> {
    if field.side != Side::Exterior {
        return Err(Error::InvalidInput("exterior extraction needs an exterior field".into()));
    }
    extract_coefficients(field, spectrum, gamma_tilde, radius, h, correction)
}

/// Sup-norm distances of rescaled fields to their limit profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlowupReport {
    pub lambdas: Vec<f64>,
    pub distances: Vec<f64>,
    /// Fitted exponent `ρ` in `distance ≈ C λ^ρ` (interior) or
    /// `C λ^{-ρ}` (exterior); `None` when all distances are at roundoff.
    pub rate: Option<f64>,
}

fn fit_rate(lambdas: &[f64], distances: &[f64], side: Side) -> Option<f64> {
    let pts: Vec<(f64, f64)> = lambdas
        .iter()
        .zip(distances)
        .filter(|(_, d)| **d > EXACT_FLOOR)
        .map(|(l, d)| {
            let x = if side == Side::Interior { l.ln() } else { -l.ln() };
            (x, d.ln())
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(linear_fit(&x, &y).0)
}

fn rescale_power(profile: &AsymptoticProfile) -> f64 {
    match profile.side {
        Side::Interior => -profile.gamma,
        Side::Exterior => profile.gamma,
    }
}

/// `sup_θ |λ^{-γ} u(λθ) - Σ β_i ψ_i(θ)|` at each `λ` (`λ^{γ̃}` outside).
pub fn blowup_profile(
    field: &FieldSample,
    spectrum: &AngularSpectrum,
    profile: &AsymptoticProfile,
    lambdas: &[f64],
) -> Result<BlowupReport> {
    let (j0, m) = profile.block;
    let table = spectrum.tabulate(&field.angular, j0 + m - 1);
    let limit: Vec<C64> = (0..field.nodes())
        .map(|q| (0..m).map(|i| profile.beta[i] * table.value(q, j0 - 1 + i)).sum())
        .collect();
    let p = rescale_power(profile);
    let mut used = Vec::with_capacity(lambdas.len());
    let mut distances = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let i = field.radial.nearest_index(l)?;
        let li = field.radial.radii()[i];
        let s = li.powf(p);
        let d = (0..field.nodes())
            .map(|q| (field.value(i, q) * s - limit[q]).norm())
            .fold(0.0f64, f64::max);
        used.push(li);
        distances.push(d);
    }
    let rate = fit_rate(&used, &distances, profile.side);
    Ok(BlowupReport {
        lambdas: used,
        distances,
        rate,
    })
}

/// `sup_θ |λ^{1-γ} ∇u(λθ) - Σ β_i (γ ψ_i θ + ∇_S ψ_i)|` (with `-γ̃` and
/// `λ^{1+γ̃}` outside).
pub fn gradient_blowup_profile(
    field: &FieldSample,
    spectrum: &AngularSpectrum,
    profile: &AsymptoticProfile,
    lambdas: &[f64],
) -> Result<BlowupReport> {
    let grad = field.gradient.as_ref().ok_or(Error::MissingGradient)?;
    let (j0, m) = profile.block;
    let t = field.tangent_dim();
    let nq = field.nodes();
    let table = spectrum.tabulate(&field.angular, j0 + m - 1);
    let radial_exp = -rescale_power(profile);
    let mut lim_r = vec![C64::new(0.0, 0.0); nq];
    let mut lim_t = vec![C64::new(0.0, 0.0); nq * t];
    for q in 0..nq {
        for i in 0..m {
            let k = j0 - 1 + i;
            lim_r[q] += profile.beta[i] * table.value(q, k) * radial_exp;
            for d in 0..t {
                lim_t[q * t + d] += profile.beta[i] * table.gradient(q, k, d);
            }
        }
    }
    let p = rescale_power(profile);
    let mut used = Vec::with_capacity(lambdas.len());
    let mut distances = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let i = field.radial.nearest_index(l)?;
        let li = field.radial.radii()[i];
        // radial part λ^{1+p} ∂_r u, tangential part λ^{1+p} (∇_S u / λ)
        let sr = li.powf(1.0 + p);
        let st = li.powf(p);
        let mut d = 0.0f64;
        for q in 0..nq {
            let k = i * nq + q;
            let mut e = (grad.radial[k] * sr - lim_r[q]).norm_sqr();
            for dd in 0..t {
                e += (grad.tangential[k * t + dd] * st - lim_t[q * t + dd]).norm_sqr();
            }
            d = d.max(e.sqrt());
        }
        used.push(li);
        distances.push(d);
    }
    let rate = fit_rate(&used, &distances, profile.side);
    Ok(BlowupReport {
        lambdas: used,
        distances,
        rate,
    })
}

/// Kelvin transform `v(x) = |x|^{2-N} u(x/|x|²)`; interior and exterior
/// swap and the radial grid is reflected.
pub fn kelvin_transform(field: &FieldSample) -> FieldSample {
    let n = field.dimension as f64;
    let nr = field.radial.len();
    let nq = field.nodes();
    let t = field.tangent_dim();
    let radial = field.radial.reflected();
    let rho = radial.radii();
    let mut values = vec![C64::new(0.0, 0.0); nr * nq];
    for j in 0..nr {
        let src = nr - 1 - j;
        let s = rho[j].powf(2.0 - n);
        for q in 0..nq {
            values[j * nq + q] = field.values[src * nq + q] * s;
        }
    }
    let gradient = field.gradient.as_ref().map(|g| {
        let mut radial_d = vec![C64::new(0.0, 0.0); nr * nq];
        let mut tang = vec![C64::new(0.0, 0.0); nr * nq * t];
        for j in 0..nr {
            let src = nr - 1 - j;
            let r = rho[j];
            let a = (2.0 - n) * r.powf(1.0 - n);
            let b = r.powf(-n);
            let c = r.powf(2.0 - n);
            for q in 0..nq {
                let k = src * nq + q;
                radial_d[j * nq + q] = field.values[k] * a - g.radial[k] * b;
                for d in 0..t {
                    tang[(j * nq + q) * t + d] = g.tangential[k * t + d] * c;
                }
            }
        }
        FieldGradient {
            radial: radial_d,
            tangential: tang,
        }
    });
    FieldSample {
        dimension: field.dimension,
        side: field.side.flipped(),
        radial,
        angular: field.angular.clone(),
        values,
        gradient,
    }
}

/// Perturbation of the Kelvin-transformed equation:
/// `h ↦ |y|^{-4} h(y/|y|²)`, which keeps `c`, `ε` and the angular factor
/// and flips the side.
pub fn kelvin_perturbation(h: &PerturbationSpec) -> PerturbationSpec {
    PerturbationSpec {
        side: h.side.flipped(),
        ..h.clone()
    }
}

/// Largest difference between two fields on the same grid, relative to
/// the larger sup norm.
pub fn field_distance(a: &FieldSample, b: &FieldSample) -> Result<f64> {
    if !a.radial.same_as(&b.radial) || a.angular.spec() != b.angular.spec() {
        return Err(Error::GridMismatch("fields live on different grids".into()));
    }
    let scale = a.values.iter().chain(&b.values).fold(0.0f64, |m, v| m.max(v.norm()));
    let d = a
        .values
        .iter()
        .zip(&b.values)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
    Ok(if scale > 0.0 { d / scale } else { d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular_spectrum::{build_potential, compute_spectrum, PotentialSpec};
    use crate::modal_field::{solve_modal_problem, synthesize_field, ModalProblem, PicardOptions};
    use crate::quadrature::RadialGrid;
    use crate::sphere::AngularGrid;

    fn ab_field(
        alpha: f64,
        bc: &[(usize, C64)],
        h: Option<&PerturbationSpec>,
        side: Side,
    ) -> (AngularSpectrum, FieldSample) {
        let pot = build_potential(2, &PotentialSpec::AharonovBohm { alpha, a0: 0.0 }).unwrap();
        let s = compute_spectrum(&pot, 16, 8).unwrap();
        let grid = match side {
            Side::Interior => RadialGrid::log_spaced(1e-6, 1.0, 400).unwrap(),
            Side::Exterior => RadialGrid::log_spaced(1.0, 1e6, 400).unwrap(),
        };
        let sol = solve_modal_problem(
            &ModalProblem {
                spectrum: &s,
                perturbation: h,
                boundary: bc,
                radial: grid,
                modes: 8,
                side,
            },
            &PicardOptions::default(),
        )
        .unwrap();
        let f = synthesize_field(&s, &sol, &AngularGrid::circle(24), true).unwrap();
        (s, f)
    }

    #[test]
    fn regularity_labels() {
        assert_eq!(
            classify_regularity(0.3, 2).class,
            RegularityClass::Holder { exponent: 0.3 }
        );
        assert_eq!(classify_regularity(1.0, 3).class, RegularityClass::Lipschitz);
        assert_eq!(classify_regularity(-0.2, 3).class, RegularityClass::UnboundedAtOrigin);
    }

    #[test]
    fn homogeneous_mode_has_unit_beta_at_any_radius() {
        let (s, f) = ab_field(0.3, &[(1, C64::new(1.0, 0.0))], None, Side::Interior);
        for r in [1.0, 0.5, 1e-3] {
            let p = extract_interior_coefficients(&f, &s, 0.3, r, None, None).unwrap();
            assert_eq!(p.block, (1, 1));
            assert!((p.beta[0] - 1.0).norm() < 1e-12);
        }
        let b = blowup_profile(&f, &s, &extract_interior_coefficients(&f, &s, 0.3, 1.0, None, None).unwrap(), &[1e-5, 1e-3])
            .unwrap();
        assert!(b.distances.iter().all(|d| *d < 1e-12) && b.rate.is_none());
        assert!(matches!(
            extract_interior_coefficients(&f, &s, 0.45, 1.0, None, None),
            Err(Error::NoEigenvalueMatch { .. })
        ));
    }

    /// β against the modal limit λ^{-γ}φ(λ) → A of the series solution
    /// λ^{σ+} Σ a_n λ^{nε}, a_n = -c a_{n-1}/(nε(nε+Δ)).
    #[test]
    fn perturbed_beta_matches_series_limit() {
        let (c, eps) = (0.05, 0.5);
        let h = PerturbationSpec::new(c, eps, Side::Interior);
        let (s, f) = ab_field(0.3, &[(1, C64::new(1.0, 0.0))], Some(&h), Side::Interior);
        let mut a = vec![1.0f64];
        for n in 1..40 {
            let nf = n as f64 * eps;
            a.push(-c * a[n - 1] / (nf * (nf + 0.6)));
        }
        let amp = 1.0 / a.iter().sum::<f64>();
        let b1 = extract_interior_coefficients(&f, &s, 0.3, 1.0, Some(&h), Some(eps)).unwrap();
        let b2 = extract_interior_coefficients(&f, &s, 0.3, 0.5, Some(&h), Some(eps)).unwrap();
        assert!((b1.beta[0].re - amp).abs() < 1e-9, "{} vs {amp}", b1.beta[0]);
        assert!((b1.beta[0] - b2.beta[0]).norm() < 1e-10);
        let lams: Vec<f64> = (0..8).map(|k| 1e-5 * 2f64.powi(k)).collect();
        let bl = blowup_profile(&f, &s, &b1, &lams).unwrap();
        assert!((bl.rate.unwrap() - eps).abs() < 0.05 * eps);
        let gb = gradient_blowup_profile(&f, &s, &b1, &lams).unwrap();
        assert!((gb.rate.unwrap() - eps).abs() < 0.05 * eps);
    }

    #[test]
    fn exterior_beta_is_radius_independent() {
        let h = PerturbationSpec::new(0.05, 0.5, Side::Exterior);
        let (s, f) = ab_field(0.3, &[(1, C64::new(1.0, 0.0))], Some(&h), Side::Exterior);
        let a = extract_exterior_coefficients(&f, &s, 0.3, 1.0, Some(&h), Some(0.5)).unwrap();
        let b = extract_exterior_coefficients(&f, &s, 0.3, 4.0, Some(&h), Some(0.5)).unwrap();
        assert!((a.beta[0] - b.beta[0]).norm() < 1e-10);
        let (_, g) = ab_field(0.3, &[(1, C64::new(1.0, 0.0))], None, Side::Exterior);
        let p = extract_exterior_coefficients(&g, &s, 0.3, 10.0, None, None).unwrap();
        assert!((p.beta[0] - 1.0).norm() < 1e-12);
    }

    #[test]
    fn kelvin_is_an_involution_and_maps_powers() {
        let (s, f) = ab_field(0.3, &[(1, C64::new(1.0, 0.0)), (2, C64::new(0.2, 0.1))], None, Side::Interior);
        let v = kelvin_transform(&f);
        assert_eq!(v.side, Side::Exterior);
        // N = 2: r^{0.3}ψ ↦ ρ^{-0.3}ψ, so the exterior coefficient equals β
        let p = extract_exterior_coefficients(&v, &s, 0.3, 10.0, None, None).unwrap();
        assert!((p.beta[0] - 1.0).norm() < 1e-12);
        let back = kelvin_transform(&v);
        assert!(field_distance(&back, &f).unwrap() < 1e-12);
        let h = PerturbationSpec::new(0.1, 0.5, Side::Interior);
        assert_eq!(kelvin_perturbation(&h).side, Side::Exterior);
        assert_eq!(kelvin_perturbation(&kelvin_perturbation(&h)), h);
    }
}
