//! Radial and angular quadrature primitives.
//!
//! Radial integrals are evaluated in the logarithmic variable `s = ln r` on a
//! uniform grid. Power-law integrands `r^p` become exponentials `e^{p s}`,
//! which a local tenth-order Lagrange rule integrates to near machine
//! precision at the default spacing. Integrals reaching the singular end
//! (`r -> 0` or `r -> inf`) are closed by a fitted power-law tail.

use std::ops::{Add, Mul};
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-uniform radial grid `r_i = r_0 e^{i h}`, strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    radii: Vec<f64>,
    step: f64,
}

impl RadialGrid {
    pub fn log_spaced(r_min: f64, r_max: f64, points: usize) -> Result<Self> {
        if !(r_min.is_finite() && r_max.is_finite()) || r_min <= 0.0 || r_max <= r_min {
            return Err(Error::InvalidInput(format!(
                "radial grid needs 0 < r_min < r_max, got [{r_min}, {r_max}]"
            )));
        }
        if points < STENCIL + 1 {
            return Err(Error::InvalidInput(format!(
                "radial grid needs at least {} points, got {points}",
                STENCIL + 1
            )));
        }
        let (lo, hi) = (r_min.ln(), r_max.ln());
        let step = (hi - lo) / (points - 1) as f64;
        let mut radii: Vec<f64> = (0..points).map(|i| (lo + i as f64 * step).exp()).collect();
        radii[0] = r_min;
        radii[points - 1] = r_max;
        Ok(Self { radii, step })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Spacing in `ln r`.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn first(&self) -> f64 {
        self.radii[0]
    }

    pub fn last(&self) -> f64 {
        self.radii[self.radii.len() - 1]
    }

    /// Image of the grid under `r -> 1/r`, reordered to stay increasing.
    pub fn reflected(&self) -> Self {
        Self {
            radii: self.radii.iter().rev().map(|r| 1.0 / r).collect(),
            step: self.step,
        }
    }

    /// Index of the node nearest to `r` in log distance.
    pub fn nearest_index(&self, r: f64) -> Result<usize> {
        let (lo, hi) = (self.first(), self.last());
        let slack = 1e-9 * self.step;
        if !(r > 0.0) || r.ln() < lo.ln() - slack || r.ln() > hi.ln() + slack {
            return Err(Error::RadiusOutOfRange { r, lo, hi });
        }
        let idx = ((r.ln() - lo.ln()) / self.step).round() as isize;
        Ok(idx.clamp(0, self.len() as isize - 1) as usize)
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .radii
                .iter()
                .zip(&other.radii)
                .all(|(a, b)| ((a - b) / a).abs() < 1e-12)
    }
}

const STENCIL: usize = 10;

/// `W[off][j] = ∫_{off}^{off+1} L_j(x) dx` for the Lagrange basis on nodes `0..STENCIL`.
fn interval_weights() -> &'static [[f64; STENCIL]; STENCIL - 1] {
    static W: OnceLock<[[f64; STENCIL]; STENCIL - 1]> = OnceLock::new();
    W.get_or_init(|| {
        let (gx, gw) = gauss_legendre(STENCIL / 2 + 1);
        let mut w = [[0.0; STENCIL]; STENCIL - 1];
        for (off, row) in w.iter_mut().enumerate() {
            for (j, wj) in row.iter_mut().enumerate() {
                *wj = gx
                    .iter()
                    .zip(&gw)
                    .map(|(&x, &g)| {
                        let t = off as f64 + 0.5 * (x + 1.0);
                        let l: f64 = (0..STENCIL)
                            .filter(|&m| m != j)
                            .map(|m| (t - m as f64) / (j as f64 - m as f64))
                            .product();
                        0.5 * g * l
                    })
                    .sum();
            }
        }
        w
    })
}

fn interval_increment<T>(f: &[T], k: usize, h: f64) -> T
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    let n = f.len();
    if n < STENCIL {
        return (f[k] + f[k + 1]) * (0.5 * h);
    }
    let j0 = k.saturating_sub(STENCIL / 2 - 1).min(n - STENCIL);
    let row = &interval_weights()[k - j0];
    let mut acc = T::default();
    for (j, &w) in row.iter().enumerate() {
        acc = acc + f[j0 + j] * w;
    }
    acc * h
}

/// `F[i] = ∫_{s_0}^{s_i} f ds` on a uniform grid of spacing `h`.
pub fn cumulative_forward<T>(f: &[T], h: f64) -> Vec<T>
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    let mut out = Vec::with_capacity(f.len());
    let mut acc = T::default();
    out.push(acc);
    for k in 0..f.len().saturating_sub(1) {
        acc = acc + interval_increment(f, k, h);
        out.push(acc);
    }
    out
}

/// `G[i] = ∫_{s_i}^{s_end} f ds`, accumulated from the far end.
pub fn cumulative_backward<T>(f: &[T], h: f64) -> Vec<T>
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    let n = f.len();
    let mut out = vec![T::default(); n];
    for k in (0..n.saturating_sub(1)).rev() {
        out[k] = out[k + 1] + interval_increment(f, k, h);
    }
    out
}

pub fn integrate<T>(f: &[T], h: f64) -> T
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    let mut acc = T::default();
    for k in 0..f.len().saturating_sub(1) {
        acc = acc + interval_increment(f, k, h);
    }
    acc
}

/// Spacing in `s = ln r` between the samples used by the tail models.
const TAIL_LOG_STEP: f64 = 0.14;

fn tail_stride(h: f64, len: usize) -> usize {
    let want = (TAIL_LOG_STEP / h.abs()).round().max(1.0) as usize;
    want.min(((len.max(3) - 1) / 3).max(1)).min((len - 1) / 2).max(1)
}

/// `∫_{-inf}^{s_0} f ds`, extrapolating three samples near the endpoint by an
/// exponential (power law in `r`).
///
/// With `correction = Some(eps)` the model is
/// `e^{p s}(A + B e^{eps s} + C e^{2 eps s})`, fitted on four samples (two-term
/// on three when fewer are available), which also captures the first two
/// corrections of a perturbed solution.
pub fn tail_below(f: &[Complex64], h: f64, correction: Option<f64>) -> Result<Complex64> {
    if f.len() < 3 {
        return Err(Error::TailFit("need at least three samples".into()));
    }
    let stride = tail_stride(h, f.len());
    let f = &f[..f.len().min(3 * stride + 1)];
    let h = h * stride as f64;
    let (f0, f1, f2) = (f[0], f[stride], f[2 * stride]);
    let scale = f0.norm().max(f1.norm()).max(f2.norm());
    if scale == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    if f0.norm() <= 1e-300 {
        return Err(Error::TailFit("integrand vanishes at the endpoint but not next to it".into()));
    }
    let single = || -> Result<Complex64> {
        let p = (f1 / f0).ln() / h;
        if p.re <= 1e-12 {
            return Err(Error::TailFit(format!(
                "fitted exponent {:.6} gives a non-integrable tail",
                p.re
            )));
        }
        Ok(f0 / p)
    };
    let eps = match correction {
        Some(e) if e > 0.0 && e.is_finite() => e,
        _ => return single(),
    };
    let x = (eps * h).exp();
    let three = f
        .get(3 * stride)
        .and_then(|&f3| refine_three_term(&[f0, f1, f2, f3], x));
    let (y, coeffs) = match three {
        Some(fit) => fit,
        None => {
            let disc = ((x + 1.0) * f1).powi(2) - 4.0 * x * f0 * f2;
            let root = disc.sqrt();
            let guess = f1 / f0;
            let y_a = ((x + 1.0) * f1 + root) / (2.0 * x * f0);
            let y_b = ((x + 1.0) * f1 - root) / (2.0 * x * f0);
            let y = if (y_a - guess).norm() <= (y_b - guess).norm() { y_a } else { y_b };
            let b = (f1 / y - f0) / (x - 1.0);
            if !b.is_finite() || b.norm() > 0.5 * f0.norm() {
                return single();
            }
            (y, vec![f0 - b, b])
        }
    };
    let p = y.ln() / h;
    if p.re <= 1e-12 || (p.re + eps) <= 1e-12 {
        return Err(Error::TailFit(format!(
            "fitted exponent {:.6} gives a non-integrable tail",
            p.re
        )));
    }
    Ok(coeffs
        .iter()
        .enumerate()
        .map(|(k, a)| a / (p + k as f64 * eps))
        .sum())
}

/// Amplitudes of `y^j x^{kj}`, `k = 0, 1, 2`, through the first three samples.
fn three_term_amplitudes(f: &[Complex64; 4], x: f64, y: Complex64) -> Option<[Complex64; 3]> {
    let z = [y, y * x, y * x * x];
    // Vandermonde solve in the nodes z.
    let (d01, d02, d12) = (z[1] - z[0], z[2] - z[0], z[2] - z[1]);
    if d01.norm() == 0.0 || d02.norm() == 0.0 || d12.norm() == 0.0 {
        return None;
    }
    let c2 = (f[2] - (z[0] + z[1]) * f[1] + z[0] * z[1] * f[0]) / (d02 * d12);
    let c1 = (f[1] - z[0] * f[0] - c2 * d02) / d01;
    let c0 = f[0] - c1 - c2;
    Some([c0, c1, c2])
}

/// Base ratio of the three-term model. The samples satisfy the recurrence
/// with characteristic roots `y, y x, y x²`, a cubic in `y`; among its roots
/// the one leaving the smallest corrections is kept.
fn refine_three_term(f: &[Complex64; 4], x: f64) -> Option<(Complex64, Vec<Complex64>)> {
    let (x2, x3) = (x * x, x * x * x);
    let a2 = -(x + x2 + x3) / x3 * (f[1] / f[0]);
    let a1 = (1.0 + x + x2) / x3 * (f[2] / f[0]);
    let a0 = -(f[3] / f[0]) / x3;
    let mut best: Option<(f64, Complex64, [Complex64; 3])> = None;
    for y in cubic_roots(a2, a1, a0) {
        let Some(c) = three_term_amplitudes(f, x, y) else { continue };
        if !y.is_finite() || c.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let score = (c[1].norm() + c[2].norm()) / f[0].norm();
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, y, c));
        }
    }
    let (score, y, c) = best?;
    (score <= 1.0).then(|| (y, c.to_vec()))
}

/// Roots of `z³ + a2 z² + a1 z + a0` by Durand–Kerner iteration.
fn cubic_roots(a2: Complex64, a1: Complex64, a0: Complex64) -> [Complex64; 3] {
    let p = |z: Complex64| ((z + a2) * z + a1) * z + a0;
    let scale = 1.0 + a2.norm().max(a1.norm()).max(a0.norm());
    let seed = Complex64::new(0.4, 0.9);
    let mut z = [seed * scale, seed.powi(2) * scale, seed.powi(3) * scale];
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..3 {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..3 {
                if j != i {
                    den *= z[i] - z[j];
                }
            }
            if den.norm() == 0.0 {
                continue;
            }
            let dz = p(z[i]) / den;
            z[i] -= dz;
            moved = moved.max(dz.norm() / z[i].norm().max(1e-300));
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

/// `∫_{s_end}^{inf} f ds`, the mirror image of [`tail_below`].
pub fn tail_above(f: &[Complex64], h: f64, correction: Option<f64>) -> Result<Complex64> {
    let stride = tail_stride(h, f.len());
    let rev: Vec<Complex64> = f.iter().rev().take(3 * stride + 1).copied().collect();
    tail_below(&rev, h, correction)
}

/// Gauss–Legendre nodes (ascending) and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp;
        loop {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Fornberg finite-difference weights for the first derivative at `z`.
fn first_derivative_weights(z: f64, nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![[0.0f64; 2]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[1]).collect()
}

const FD_POINTS: usize = 7;

fn fd_table() -> &'static [Vec<f64>; FD_POINTS] {
    static T: OnceLock<[Vec<f64>; FD_POINTS]> = OnceLock::new();
    T.get_or_init(|| {
        let nodes: Vec<f64> = (0..FD_POINTS).map(|i| i as f64).collect();
        std::array::from_fn(|pos| first_derivative_weights(pos as f64, &nodes))
    })
}

/// Sixth-order derivative `df/ds` on a uniform grid (centered in the
/// interior, one-sided seven-point stencils at the ends).
pub fn derivative_uniform<T>(f: &[T], h: f64) -> Vec<T>
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    let n = f.len();
    assert!(n >= FD_POINTS, "derivative needs at least {FD_POINTS} samples");
    let table = fd_table();
    (0..n)
        .map(|i| {
            let j0 = i.saturating_sub(FD_POINTS / 2).min(n - FD_POINTS);
            let w = &table[i - j0];
            let mut acc = T::default();
            for (k, &wk) in w.iter().enumerate() {
                acc = acc + f[j0 + k] * wk;
            }
            acc * (1.0 / h)
        })
        .collect()
}

/// Ordinary least squares `y = slope x + intercept`; returns
/// `(slope, intercept, rms residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}
