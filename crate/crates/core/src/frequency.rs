//! Almgren frequency `N(r) = D(r)/H(r)` and the identities around it.
//!
//! With `∇_A u = ∇u + i A(x/|x|) u/|x|` and polar factorization
//! `|∇_A u|² = |∂_r u|² + r^{-2} |∇_S u + i A u|²`,
//! `D(r) = r^{2-N} ∫_{B_r} |∇_A u|² - a|u|²/|x|² - Re h |u|²` and
//! `H(r) = r^{1-N} ∫_{∂B_r} |u|²`. For exterior fields the volume integral
//! runs over `{|x| > r}`.

use serde::{Deserialize, Serialize};

use crate::angular_spectrum::AngularPotential;
use crate::error::{Error, Result};
use crate::modal_field::{FieldSample, PerturbationSpec, Side};
use crate::quadrature::{
    cumulative_backward, cumulative_forward, derivative_uniform, linear_fit, tail_above,
    tail_below,
};
use crate::sphere::C64;

/// Nodes nearest the singular end left out of asymptotic fits.
pub const FIT_SKIP: usize = 5;

/// Tolerance on increments of the monotone-corrected frequency.
pub const MONOTONE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct FrequencyOptions {
    /// Exponent of the leading correction of the energy density near the
    /// singular end, used to close the tail integral.
    pub tail_correction: Option<f64>,
}

impl FrequencyOptions {
    pub fn for_perturbation(h: Option<&PerturbationSpec>) -> Self {
        Self {
            tail_correction: h.filter(|h| !h.is_zero()).map(|h| h.epsilon),
        }
    }
}

/// Angular integrals of the energy densities at every radius.
#[derive(Clone, Debug)]
pub(crate) struct Densities {
    /// `∫_S |∂_r u|² + r^{-2}|∇_S u + iAu|²`.
    pub(crate) kinetic: Vec<f64>,
    /// `∫_S a |u|² / r²`.
    pub(crate) potential: Vec<f64>,
    /// `∫_S Re h |u|²`.
    pub(crate) perturbation: Vec<f64>,
    /// `∫_S Re(h u r conj(∂_r u))`.
    pub(crate) flux: Vec<f64>,
    /// `∫_S |∂_r u|²`.
    pub(crate) normal: Vec<f64>,
    /// `∫_S |u|²`.
    pub(crate) height: Vec<f64>,
}

pub(crate) fn densities(
    field: &FieldSample,
    pot: &AngularPotential,
    h: Option<&PerturbationSpec>,
) -> Result<Densities> {
    if pot.dimension != field.dimension {
        return Err(Error::GridMismatch(format!(
            "potential dimension {} vs field dimension {}",
            pot.dimension, field.dimension
        )));
    }
    let grad = field.gradient.as_ref().ok_or(Error::MissingGradient)?;
    let samples = pot.sample(&field.angular);
    let h = h.filter(|h| !h.is_zero());
    let f = h.map(|h| h.angular.values(&field.angular));
    let w = field.angular.weights();
    let nq = field.nodes();
    let t = field.tangent_dim();
    let nr = field.radial.len();
    let mut d = Densities {
        kinetic: vec![0.0; nr],
        potential: vec![0.0; nr],
        perturbation: vec![0.0; nr],
        flux: vec![0.0; nr],
        normal: vec![0.0; nr],
        height: vec![0.0; nr],
    };
    for (i, &r) in field.radial.radii().iter().enumerate() {
        let hr = h.map(|h| h.radial_factor(r)).unwrap_or_default();
        let (mut kin, mut pe, mut pert, mut flux, mut nor, mut ht) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for q in 0..nq {
            let k = i * nq + q;
            let u = field.values[k];
            let ur = grad.radial[k];
            let mut tang = 0.0;
            for dd in 0..t {
                let mut g = grad.tangential[k * t + dd];
                if dd == 0 && field.dimension == 2 {
                    g += C64::new(0.0, samples.alpha[q]) * u;
                }
                tang += g.norm_sqr();
            }
            let u2 = u.norm_sqr();
            kin += w[q] * (ur.norm_sqr() + tang / (r * r));
            pe += w[q] * samples.electric[q] * u2 / (r * r);
            nor += w[q] * ur.norm_sqr();
            ht += w[q] * u2;
            if let Some(f) = &f {
                let hv = hr * f[q];
                pert += w[q] * hv.re * u2;
                flux += w[q] * (hv * u * r * ur.conj()).re;
            }
        }
        d.kinetic[i] = kin;
        d.potential[i] = pe;
        d.perturbation[i] = pert;
        d.flux[i] = flux;
        d.normal[i] = nor;
        d.height[i] = ht;
    }
    Ok(d)
}

/// `∫ ρ^N X(ρ) dρ/ρ` over `(0, r_i)` (interior) or `(r_i, ∞)` (exterior).
fn volume_integral(field: &FieldSample, x: &[f64], correction: Option<f64>) -> Result<Vec<f64>> {
    let n = field.dimension as i32;
    let hstep = field.radial.step();
    let g: Vec<C64> = field
        .radial
        .radii()
        .iter()
        .zip(x)
        .map(|(r, v)| C64::new(r.powi(n) * v, 0.0))
        .collect();
    let out = match field.side {
        Side::Interior => {
            let tail = tail_below(&g, hstep, correction)?;
            cumulative_forward(&g, hstep).into_iter().map(|v| (v + tail).re).collect()
        }
        Side::Exterior => {
            let tail = tail_above(&g, hstep, correction)?;
            cumulative_backward(&g, hstep).into_iter().map(|v| (v + tail).re).collect()
        }
    };
    Ok(out)
}

/// `H` and `D` at every radial node of the field.
#[derive(Clone, Debug)]
pub struct FrequencyProfile {
    pub radii: Vec<f64>,
    pub height: Vec<f64>,
    pub dirichlet: Vec<f64>,
}

pub fn frequency_profile(
    field: &FieldSample,
    pot: &AngularPotential,
    h: Option<&PerturbationSpec>,
    opts: &FrequencyOptions,
) -> Result<FrequencyProfile> {
    let d = densities(field, pot, h)?;
    let e: Vec<f64> = (0..d.kinetic.len())
        .map(|i| d.kinetic[i] - d.potential[i] - d.perturbation[i])
        .collect();
    let vol = volume_integral(field, &e, opts.tail_correction)?;
    let n = field.dimension as i32;
    let radii = field.radial.radii().to_vec();
    let dirichlet = radii.iter().zip(&vol).map(|(r, v)| v * r.powi(2 - n)).collect();
    Ok(FrequencyProfile {
        radii,
        height: d.height,
        dirichlet,
    })
}

/// `H(r)` at the grid node nearest to `r`.
pub fn height(field: &FieldSample, r: f64) -> Result<f64> {
    let i = field.radial.nearest_index(r)?;
    let w = field.angular.weights();
    Ok((0..field.nodes()).map(|q| field.value(i, q).norm_sqr() * w[q]).sum())
}

/// `D(r)` at the grid node nearest to `r`.
pub fn dirichlet(
    field: &FieldSample,
    pot: &AngularPotential,
    h: Option<&PerturbationSpec>,
    r: f64,
    opts: &FrequencyOptions,
) -> Result<f64> {
    let i = field.radial.nearest_index(r)?;
    Ok(frequency_profile(field, pot, h, opts)?.dirichlet[i])
}

/// Least-squares fit of `N(r) ≈ γ + C r^{±ε}` near the singular end.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencyFit {
    pub gamma_hat: f64,
    pub gamma_uncertainty: f64,
    /// `None` when the trace is constant to roundoff on the window.
    pub eps_hat: Option<f64>,
    pub amplitude: f64,
    pub window: [f64; 2],
    pub rms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencyTrace {
    pub side: Side,
    /// Ordered towards the singular end (decreasing for interior traces,
    /// increasing for exterior ones).
    pub radii: Vec<f64>,
    pub height: Vec<f64>,
    pub dirichlet: Vec<f64>,
    pub frequency: Vec<f64>,
    pub fit: FrequencyFit,
    /// `C₂ >= 0` making `N(r) + (2C₂/ε) r^ε` nondecreasing (interior with a
    /// perturbation only).
    pub monotone_c2: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitSummary {
    pub gamma_hat: f64,
    pub eps_hat: Option<f64>,
    pub drift: Option<f64>,
}

impl FrequencyTrace {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,H,D,N")?;
        for i in 0..self.radii.len() {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e}",
                self.radii[i], self.height[i], self.dirichlet[i], self.frequency[i]
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            gamma_hat: self.fit.gamma_hat,
            eps_hat: self.fit.eps_hat,
            drift: self.monotone_c2,
        }
    }

    /// `max |N(r) - γ|` over the stored radii.
    pub fn max_deviation(&self, gamma: f64) -> f64 {
        self.frequency.iter().fold(0.0f64, |m, v| m.max((v - gamma).abs()))
    }

    /// Smallest stored `N(r) + (N-2)/2`; positive when the lower bound holds.
    pub fn lower_bound_margin(&self, dimension: usize) -> f64 {
        let b = (dimension as f64 - 2.0) / 2.0;
        self.frequency.iter().fold(f64::INFINITY, |m, v| m.min(v + b))
    }
}

/// Frequency trace of an interior or exterior field (side taken from the
/// field). `radii = None` stores every grid node.
pub fn frequency_trace(
    field: &FieldSample,
    pot: &AngularPotential,
    h: Option<&PerturbationSpec>,
    radii: Option<&[f64]>,
    opts: &FrequencyOptions,
) -> Result<FrequencyTrace> {
    let prof = frequency_profile(field, pot, h, opts)?;
    for (r, ht) in prof.radii.iter().zip(&prof.height) {
        if !(*ht > 0.0) {
            return Err(Error::DegenerateSolution { r: *r, height: *ht });
        }
    }
    let freq: Vec<f64> = prof.dirichlet.iter().zip(&prof.height).map(|(d, h)| d / h).collect();
    let fit = fit_frequency(&prof.radii, &freq, field.side)?;
    let monotone_c2 = match (field.side, h.filter(|h| !h.is_zero())) {
        (Side::Interior, Some(h)) => Some(monotone_correction(&prof.radii, &freq, h.epsilon)),
        _ => None,
    };
    let mut idx: Vec<usize> = match radii {
        None => (0..prof.radii.len()).collect(),
        Some(rs) => rs
            .iter()
            .map(|r| field.radial.nearest_index(*r))
            .collect::<Result<_>>()?,
    };
    idx.sort_unstable();
    idx.dedup();
    if field.side == Side::Interior {
        idx.reverse();
    }
    Ok(FrequencyTrace {
        side: field.side,
        radii: idx.iter().map(|&i| prof.radii[i]).collect(),
        height: idx.iter().map(|&i| prof.height[i]).collect(),
        dirichlet: idx.iter().map(|&i| prof.dirichlet[i]).collect(),
        frequency: idx.iter().map(|&i| freq[i]).collect(),
        fit,
        monotone_c2,
    })
}

/// Exterior counterpart of [`frequency_trace`]; the field must be exterior.
pub fn exterior_frequency_trace(
    field: &FieldSample,
    pot: &AngularPotential,
    h: Option<&PerturbationSpec>,
    radii: Option<&[f64]>,
    opts: &FrequencyOptions,
) -> Result<FrequencyTrace> {
    if field.side != Side::Exterior {
        return Err(Error::InvalidInput("exterior trace needs an exterior field".into()));
    }
    frequency_trace(field, pot, h, radii, opts)
}

/// Indices of the decade next to the singular end, minus [`FIT_SKIP`]
/// nodes at the very end.
fn singular_decade(radii: &[f64], side: Side) -> Vec<usize> {
    let n = radii.len();
    match side {
        Side::Interior => {
            let lim = radii[0] * 10.0;
            (FIT_SKIP.min(n)..n).filter(|&i| radii[i] <= lim * (1.0 + 1e-12)).collect()
        }
        Side::Exterior => {
            let lim = radii[n - 1] / 10.0;
            (0..n.saturating_sub(FIT_SKIP))
                .filter(|&i| radii[i] >= lim * (1.0 - 1e-12))
                .collect()
        }
    }
}

/// Least squares in `(γ, C)` of `y ≈ γ + C x^e` for fixed `e`, returning
/// `(γ, C, rss, se(γ))`.
fn linear_in_gamma(x: &[f64], y: &[f64], e: f64) -> (f64, f64, f64, f64) {
    let z: Vec<f64> = x.iter().map(|v| v.powf(e)).collect();
    let (c, g, rms) = linear_fit(&z, y);
    let n = x.len() as f64;
    let mz = z.iter().sum::<f64>() / n;
    let szz: f64 = z.iter().map(|v| (v - mz).powi(2)).sum();
    let se = if szz > 0.0 && n > 2.0 {
        rms * (n / (n - 2.0)).sqrt() * (1.0 / n + mz * mz / szz).sqrt()
    } else {
        rms
    };
    (g, c, rms * rms * n, se)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Variable-projection fit of `N(r) ≈ γ + C r^{±ε}` on the singular decade.
pub fn fit_frequency(radii: &[f64], freq: &[f64], side: Side) -> Result<FrequencyFit> {
    let idx = singular_decade(radii, side);
    if idx.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "only {} nodes in the fit window; refine the radial grid",
            idx.len()
        )));
    }
    // normalized abscissa in (0, 1] so that x^ε stays well scaled
    let scale = match side {
        Side::Interior => radii[*idx.last().unwrap()],
        Side::Exterior => 1.0 / radii[idx[0]],
    };
    let x: Vec<f64> = idx
        .iter()
        .map(|&i| match side {
            Side::Interior => radii[i] / scale,
            Side::Exterior => 1.0 / (radii[i] * scale),
        })
        .collect();
    let y: Vec<f64> = idx.iter().map(|&i| freq[i]).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread = y.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    let window = [radii[idx[0]], radii[*idx.last().unwrap()]];
    if spread <= 1e-12 * (1.0 + mean.abs()) {
        let rms = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        return Ok(FrequencyFit {
            gamma_hat: mean,
            gamma_uncertainty: rms,
            eps_hat: None,
            amplitude: 0.0,
            window,
            rms,
        });
    }
    let rss = |e: f64| linear_in_gamma(&x, &y, e).2;
    let grid: Vec<f64> = (0..=240).map(|k| 0.01 * 1.03f64.powi(k)).collect();
    let mut best = 0;
    for k in 1..grid.len() {
        if rss(grid[k]) < rss(grid[best]) {
            best = k;
        }
    }
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let e = golden_min(rss, lo, hi, 80);
    let (g, c, r, se) = linear_in_gamma(&x, &y, e);
    Ok(FrequencyFit {
        gamma_hat: g,
        gamma_uncertainty: se,
        eps_hat: Some(e),
        amplitude: c * scale.powf(-e),
        window,
        rms: (r / x.len() as f64).sqrt(),
    })
}

/// Smallest `C₂ >= 0` such that `N(r) + (2C₂/ε) r^ε` has increments
/// `>= -MONOTONE_TOL` along increasing `r`.
pub fn monotone_correction(radii: &[f64], freq: &[f64], eps: f64) -> f64 {
    let mut c2 = 0.0f64;
    for i in 1..radii.len() {
        let dn = freq[i] - freq[i - 1];
        let dz = 2.0 / eps * (radii[i].powf(eps) - radii[i - 1].powf(eps));
        if dn < -MONOTONE_TOL && dz > 0.0 {
            c2 = c2.max((-MONOTONE_TOL - dn) / dz);
        }
    }
    c2
}

/// `max |D - s·½ r H'| / (|D| + |H|)` over nodes away from the grid ends,
/// with `s = +1` inside and `-1` outside.
pub fn check_height_derivative(
    field: &FieldSample,
    pot: &AngularPotential,
    h: Option<&PerturbationSpec>,
    opts: &FrequencyOptions,
) -> Result<f64> {
    let prof = frequency_profile(field, pot, h, opts)?;
    let dh = derivative_uniform(&prof.height, field.radial.step());
    let sign = if field.side == Side::Interior { 1.0 } else { -1.0 };
    let n = prof.radii.len();
    let mut worst = 0.0f64;
    for i in 3..n.saturating_sub(3) {
        // r H'(r) = dH/d(ln r)
        let rhs = sign * 0.5 * dh[i];
        let res = (prof.dirichlet[i] - rhs).abs()
            / (prof.dirichlet[i].abs() + prof.height[i].abs() + 1e-300);
        worst = worst.max(res);
    }
    Ok(worst)
}

/// Terms of the Pohozaev-type identity on `B_r` and its relative residual.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PohozaevTerms {
    pub r: f64,
    /// `-(N-2)/2 ∫_{B_r} |∇_A u|² - a|u|²/|x|²`.
    pub volume: f64,
    /// `r/2 ∫_{∂B_r} |∇_A u|² - a|u|²/|x|²`.
    pub boundary: f64,
    /// `r ∫_{∂B_r} |∂_ν u|²`.
    pub normal: f64,
    /// `∫_{B_r} Re(h u x·conj(∇u))`.
    pub perturbation: f64,
    pub residual: f64,
}

pub fn pohozaev_terms(
    field: &FieldSample,
    pot: &AngularPotential,
    h: Option<&PerturbationSpec>,
    opts: &FrequencyOptions,
) -> Result<Vec<PohozaevTerms>> {
    if field.side != Side::Interior {
        return Err(Error::Unsupported("Pohozaev identity is checked on interior fields".into()));
    }
    let d = densities(field, pot, h)?;
    let q: Vec<f64> = (0..d.kinetic.len()).map(|i| d.kinetic[i] - d.potential[i]).collect();
    let vq = volume_integral(field, &q, opts.tail_correction)?;
    let vf = volume_integral(field, &d.flux, opts.tail_correction)?;
    let n = field.dimension as i32;
    let half = (field.dimension as f64 - 2.0) / 2.0;
    Ok(field
        .radial
        .radii()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let surf = r.powi(n - 1);
            let volume = -half * vq[i];
            let boundary = 0.5 * r * surf * q[i];
            let normal = r * surf * d.normal[i];
            let perturbation = vf[i];
            let scale = volume.abs() + boundary.abs() + normal.abs() + perturbation.abs();
            let diff = (volume + boundary - normal - perturbation).abs();
            PohozaevTerms {
                r,
                volume,
                boundary,
                normal,
                perturbation,
                residual: if scale > 0.0 { diff / scale } else { 0.0 },
            }
        })
        .collect())
}

/// Relative Pohozaev residual at the node nearest to `r`.
/// Pohozaev balance on the annuli `r_0 < |x| < r_i` between the first grid
/// node and every other node. No tail extrapolation is involved, so it
/// also applies to rough data.
pub fn pohozaev_annular_residuals(
    field: &FieldSample,
    pot: &AngularPotential,
    h: Option<&PerturbationSpec>,
) -> Result<Vec<f64>> {
    if field.side != Side::Interior {
        return Err(Error::Unsupported("Pohozaev identity is checked on interior fields".into()));
    }
    let d = densities(field, pot, h)?;
    let n = field.dimension as i32;
    let half = (field.dimension as f64 - 2.0) / 2.0;
    let step = field.radial.step();
    let radii = field.radial.radii();
    let q: Vec<f64> = (0..d.kinetic.len()).map(|i| d.kinetic[i] - d.potential[i]).collect();
    let weigh = |x: &[f64]| -> Vec<C64> {
        radii.iter().zip(x).map(|(r, v)| C64::new(r.powi(n) * v, 0.0)).collect()
    };
    let vq = cumulative_forward(&weigh(&q), step);
    let vf = cumulative_forward(&weigh(&d.flux), step);
    let surf = |i: usize| radii[i] * radii[i].powi(n - 1);
    Ok((1..radii.len())
        .map(|i| {
            let volume = -half * vq[i].re;
            let boundary = 0.5 * (surf(i) * q[i] - surf(0) * q[0]);
            let normal = surf(i) * d.normal[i] - surf(0) * d.normal[0];
            let perturbation = vf[i].re;
            let scale = volume.abs() + boundary.abs() + normal.abs() + perturbation.abs();
            let diff = (volume + boundary - normal - perturbation).abs();
            if scale > 0.0 {
                diff / scale
            } else {
                0.0
            }
        })
        .collect())
}

pub fn pohozaev_residual(
    field: &FieldSample,
    pot: &AngularPotential,
    h: Option<&PerturbationSpec>,
    r: f64,
    opts: &FrequencyOptions,
) -> Result<f64> {
    let i = field.radial.nearest_index(r)?;
    Ok(pohozaev_terms(field, pot, h, opts)?[i].residual)
}

/// Behaviour of `r^{∓2γ} H(r)` at the singular end.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeightScaling {
    pub limit: f64,
    /// Largest relative deviation from `limit` on the window.
    pub drift: f64,
    /// Fitted log-log slope of `H` on the window.
    pub slope: f64,
    /// `|slope - 2γ|` (interior) or `|slope + 2γ̃|` (exterior).
    pub slope_error: f64,
}

/// `r^{-2γ} H(r)` on the singular decade of an interior trace (for an
/// exterior trace `r^{2γ} H(r)` with `γ = γ̃`).
pub fn height_scaling_limit(trace: &FrequencyTrace, gamma: f64) -> Result<HeightScaling> {
    let mut order: Vec<usize> = (0..trace.radii.len()).collect();
    order.sort_by(|a, b| trace.radii[*a].total_cmp(&trace.radii[*b]));
    let radii: Vec<f64> = order.iter().map(|&i| trace.radii[i]).collect();
    let height: Vec<f64> = order.iter().map(|&i| trace.height[i]).collect();
    let idx = singular_decade(&radii, trace.side);
    if idx.len() < 3 {
        return Err(Error::InvalidInput("too few nodes on the singular decade".into()));
    }
    let target = match trace.side {
        Side::Interior => 2.0 * gamma,
        Side::Exterior => -2.0 * gamma,
    };
    let scaled: Vec<f64> = idx.iter().map(|&i| height[i] * radii[i].powf(-target)).collect();
    let limit = scaled.iter().sum::<f64>() / scaled.len() as f64;
    let drift = scaled.iter().fold(0.0f64, |m, v| m.max(((v - limit) / limit).abs()));
    let x: Vec<f64> = idx.iter().map(|&i| radii[i].ln()).collect();
    let y: Vec<f64> = idx.iter().map(|&i| height[i].ln()).collect();
    let (slope, _, _) = linear_fit(&x, &y);
    Ok(HeightScaling {
        limit,
        drift,
        slope,
        slope_error: (slope - target).abs(),
    })
}
