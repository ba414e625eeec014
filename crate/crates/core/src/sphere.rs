//! Angular grids and Galerkin bases on S¹ and S².
//!
//! Bases are orthonormal in `L²(S^{N-1})`: `e^{ijt}/√(2π)` on the circle and
//! real spherical harmonics on the sphere. Tangential gradients are returned
//! in the orthonormal frame `e_t` (circle) or `(e_θ, e_φ)` (sphere).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::quadrature::gauss_legendre;

pub type C64 = Complex64;

/// Parameters of an angular grid; see [`AngularGrid`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularGridSpec {
    /// Uniform nodes `t_j = 2πj/n` on the unit circle.
    Circle { nodes: usize },
    /// Gauss–Legendre in `cos θ` times uniform azimuth.
    Sphere { polar: usize, azimuthal: usize },
}

/// Quadrature grid on the unit sphere `S^{N-1}` (N = 2 or 3).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "AngularGridSpec", into = "AngularGridSpec")]
pub struct AngularGrid {
    spec: AngularGridSpec,
    /// `(t, 0)` on the circle, `(θ, φ)` on the sphere.
    angles: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl From<AngularGridSpec> for AngularGrid {
    fn from(spec: AngularGridSpec) -> Self {
        match spec {
            AngularGridSpec::Circle { nodes } => Self::circle(nodes),
            AngularGridSpec::Sphere { polar, azimuthal } => Self::sphere(polar, azimuthal),
        }
    }
}

impl From<AngularGrid> for AngularGridSpec {
    fn from(g: AngularGrid) -> Self {
        g.spec
    }
}

impl AngularGrid {
    pub fn circle(nodes: usize) -> Self {
        let w = 2.0 * PI / nodes as f64;
        Self {
            spec: AngularGridSpec::Circle { nodes },
            angles: (0..nodes).map(|j| [j as f64 * w, 0.0]).collect(),
            weights: vec![w; nodes],
        }
    }

    pub fn sphere(polar: usize, azimuthal: usize) -> Self {
        let (x, gw) = gauss_legendre(polar);
        let dphi = 2.0 * PI / azimuthal as f64;
        let mut angles = Vec::with_capacity(polar * azimuthal);
        let mut weights = Vec::with_capacity(polar * azimuthal);
        for (xp, wp) in x.iter().zip(&gw) {
            let theta = xp.acos();
            for q in 0..azimuthal {
                angles.push([theta, q as f64 * dphi]);
                weights.push(wp * dphi);
            }
        }
        Self {
            spec: AngularGridSpec::Sphere { polar, azimuthal },
            angles,
            weights,
        }
    }

    /// Grid for dimension `n` that resolves products of basis functions of
    /// degree up to `degree`.
    pub fn resolving(dimension: usize, degree: usize) -> Self {
        match dimension {
            2 => Self::circle(2 * degree + 2),
            _ => Self::sphere(degree + 2, 2 * degree + 2),
        }
    }

    pub fn spec(&self) -> AngularGridSpec {
        self.spec
    }

    pub fn dimension(&self) -> usize {
        match self.spec {
            AngularGridSpec::Circle { .. } => 2,
            AngularGridSpec::Sphere { .. } => 3,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn angles(&self) -> &[[f64; 2]] {
        &self.angles
    }

    /// Largest basis degree whose pairwise products are integrated exactly.
    pub fn resolved_degree(&self) -> usize {
        match self.spec {
            AngularGridSpec::Circle { nodes } => (nodes.saturating_sub(1)) / 2,
            AngularGridSpec::Sphere { polar, azimuthal } => {
                polar.saturating_sub(1).min(azimuthal.saturating_sub(1) / 2)
            }
        }
    }

    /// Unit vector of node `j` in R^N (third component zero for N = 2).
    pub fn point(&self, j: usize) -> [f64; 3] {
        let [a, b] = self.angles[j];
        match self.spec {
            AngularGridSpec::Circle { .. } => [a.cos(), a.sin(), 0.0],
            AngularGridSpec::Sphere { .. } => [a.sin() * b.cos(), a.sin() * b.sin(), a.cos()],
        }
    }

    /// Orthonormal tangent frame at node `j` (`N - 1` vectors).
    pub fn frame(&self, j: usize) -> Vec<[f64; 3]> {
        let [a, b] = self.angles[j];
        match self.spec {
            AngularGridSpec::Circle { .. } => vec![[-a.sin(), a.cos(), 0.0]],
            AngularGridSpec::Sphere { .. } => vec![
                [a.cos() * b.cos(), a.cos() * b.sin(), -a.sin()],
                [-b.sin(), b.cos(), 0.0],
            ],
        }
    }

    /// Surface measure `|S^{N-1}|`.
    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(usize) -> C64) -> C64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| f(j) * *w)
            .sum()
    }
}

/// Identifies a basis element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisLabel {
    Fourier(i64),
    Harmonic { l: usize, m: i64 },
}

/// Galerkin basis of the angular problem, truncated at `degree`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularBasis {
    /// `{e^{ijt}/√(2π) : |j| <= degree}`, ordered `j = -degree..=degree`.
    Fourier { degree: usize },
    /// Real spherical harmonics `l <= degree`, ordered `(l, m = -l..=l)`.
    Harmonics { degree: usize },
}

impl AngularBasis {
    pub fn dimension(&self) -> usize {
        match self {
            AngularBasis::Fourier { .. } => 2,
            AngularBasis::Harmonics { .. } => 3,
        }
    }

    pub fn degree(&self) -> usize {
        match *self {
            AngularBasis::Fourier { degree } | AngularBasis::Harmonics { degree } => degree,
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            AngularBasis::Fourier { degree } => 2 * degree + 1,
            AngularBasis::Harmonics { degree } => (degree + 1) * (degree + 1),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn label(&self, idx: usize) -> BasisLabel {
        match *self {
            AngularBasis::Fourier { degree } => BasisLabel::Fourier(idx as i64 - degree as i64),
            AngularBasis::Harmonics { .. } => {
                let l = (idx as f64).sqrt().floor() as usize;
                BasisLabel::Harmonic {
                    l,
                    m: idx as i64 - (l * l + l) as i64,
                }
            }
        }
    }

    pub fn index_of(&self, label: BasisLabel) -> Option<usize> {
        match (*self, label) {
            (AngularBasis::Fourier { degree }, BasisLabel::Fourier(j)) => {
                (j.unsigned_abs() as usize <= degree).then(|| (j + degree as i64) as usize)
            }
            (AngularBasis::Harmonics { degree }, BasisLabel::Harmonic { l, m }) => {
                (l <= degree && m.unsigned_abs() as usize <= l)
                    .then(|| ((l * l + l) as i64 + m) as usize)
            }
            _ => None,
        }
    }

    /// Degree (`|j|` or `l`) of basis element `idx`.
    pub fn degree_of(&self, idx: usize) -> usize {
        match self.label(idx) {
            BasisLabel::Fourier(j) => j.unsigned_abs() as usize,
            BasisLabel::Harmonic { l, .. } => l,
        }
    }

    /// Laplace–Beltrami eigenvalue of basis element `idx`.
    pub fn laplacian_eigenvalue(&self, idx: usize) -> f64 {
        match self.label(idx) {
            BasisLabel::Fourier(j) => (j * j) as f64,
            BasisLabel::Harmonic { l, .. } => (l * (l + 1)) as f64,
        }
    }

    /// Values and tangential gradients of every basis element at every node.
    pub fn tabulate(&self, grid: &AngularGrid) -> BasisTable {
        let n = self.len();
        let tdim = self.dimension() - 1;
        let mut values = vec![C64::new(0.0, 0.0); grid.len() * n];
        let mut gradients = vec![C64::new(0.0, 0.0); grid.len() * n * tdim];
        match *self {
            AngularBasis::Fourier { degree } => {
                let norm = 1.0 / (2.0 * PI).sqrt();
                for (q, [t, _]) in grid.angles().iter().enumerate() {
                    for idx in 0..n {
                        let j = idx as f64 - degree as f64;
                        let e = C64::from_polar(norm, j * t);
                        values[q * n + idx] = e;
                        gradients[q * n + idx] = C64::new(0.0, j) * e;
                    }
                }
            }
            AngularBasis::Harmonics { degree } => {
                for (q, &[theta, phi]) in grid.angles().iter().enumerate() {
                    let sh = real_harmonics(degree, theta, phi);
                    for idx in 0..n {
                        values[q * n + idx] = C64::new(sh.values[idx], 0.0);
                        gradients[(q * n + idx) * 2] = C64::new(sh.d_theta[idx], 0.0);
                        gradients[(q * n + idx) * 2 + 1] = C64::new(sh.d_phi_over_sin[idx], 0.0);
                    }
                }
            }
        }
        BasisTable {
            nodes: grid.len(),
            size: n,
            tangent_dim: tdim,
            values,
            gradients,
        }
    }
}

/// Basis values at grid nodes, row-major `[node][basis]`.
#[derive(Clone, Debug)]
pub struct BasisTable {
    pub nodes: usize,
    pub size: usize,
    pub tangent_dim: usize,
    values: Vec<C64>,
    gradients: Vec<C64>,
}

impl BasisTable {
    pub fn value(&self, node: usize, idx: usize) -> C64 {
        self.values[node * self.size + idx]
    }

    pub fn gradient(&self, node: usize, idx: usize, component: usize) -> C64 {
        self.gradients[(node * self.size + idx) * self.tangent_dim + component]
    }

    /// `Σ_b coeffs[b] B_b` at `node`, plus its tangential gradient.
    pub fn combine(&self, node: usize, coeffs: &[C64]) -> (C64, Vec<C64>) {
        let mut v = C64::new(0.0, 0.0);
        let mut g = vec![C64::new(0.0, 0.0); self.tangent_dim];
        for (idx, c) in coeffs.iter().enumerate() {
            if c.norm_sqr() == 0.0 {
                continue;
            }
            v += c * self.value(node, idx);
            for (d, gd) in g.iter_mut().enumerate() {
                *gd += c * self.gradient(node, idx, d);
            }
        }
        (v, g)
    }
}

/// Real spherical harmonics up to `degree` at one point, with
/// `∂_θ Y` and `(1/sin θ) ∂_φ Y`.
pub struct HarmonicValues {
    pub values: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub d_phi_over_sin: Vec<f64>,
}

/// Fully normalized associated Legendre functions `P̃_l^m(cos θ)` (no
/// Condon–Shortley phase) and their θ-derivatives, indexed `[l][m]`.
pub(crate) fn normalized_legendre(degree: usize, theta: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (s, x) = theta.sin_cos();
    let mut p = vec![vec![0.0; degree + 1]; degree + 1];
    p[0][0] = 1.0 / (4.0 * PI).sqrt();
    for m in 1..=degree {
        p[m][m] = ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s * p[m - 1][m - 1];
    }
    for m in 0..degree {
        p[m + 1][m] = ((2 * m + 3) as f64).sqrt() * x * p[m][m];
    }
    for m in 0..=degree {
        for l in (m + 2)..=degree {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[l][m] = a * (x * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    let mut dp = vec![vec![0.0; degree + 1]; degree + 1];
    for l in 1..=degree {
        for m in 0..=l {
            let (lf, mf) = (l as f64, m as f64);
            let prev = if m < l { p[l - 1][m] } else { 0.0 };
            let c = ((2.0 * lf + 1.0) / (2.0 * lf - 1.0) * (lf * lf - mf * mf)).sqrt();
            dp[l][m] = (lf * x * p[l][m] - c * prev) / s;
        }
    }
    (p, dp)
}

pub fn real_harmonics(degree: usize, theta: f64, phi: f64) -> HarmonicValues {
    let n = (degree + 1) * (degree + 1);
    let (p, dp) = normalized_legendre(degree, theta);
    let s = theta.sin();
    let mut out = HarmonicValues {
        values: vec![0.0; n],
        d_theta: vec![0.0; n],
        d_phi_over_sin: vec![0.0; n],
    };
    let sqrt2 = std::f64::consts::SQRT_2;
    for l in 0..=degree {
        let base = l * l + l;
        out.values[base] = p[l][0];
        out.d_theta[base] = dp[l][0];
        for m in 1..=l {
            let (sm, cm) = (m as f64 * phi).sin_cos();
            let mf = m as f64;
            out.values[base + m] = sqrt2 * p[l][m] * cm;
            out.d_theta[base + m] = sqrt2 * dp[l][m] * cm;
            out.d_phi_over_sin[base + m] = -sqrt2 * mf * p[l][m] * sm / s;
            out.values[base - m] = sqrt2 * p[l][m] * sm;
            out.d_theta[base - m] = sqrt2 * dp[l][m] * sm;
            out.d_phi_over_sin[base - m] = sqrt2 * mf * p[l][m] * cm / s;
        }
    }
    out
}

/// Trigonometric polynomial `f(t) = Σ_n c_n e^{int}` with finitely many terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    coeffs: BTreeMap<i64, C64>,
}

impl FourierSeries {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        let mut s = Self::default();
        s.set(0, C64::new(c, 0.0));
        s
    }

    /// `c0 + a cos t + b sin t`.
    pub fn first_harmonic(c0: f64, cos: f64, sin: f64) -> Self {
        let mut s = Self::constant(c0);
        s.set(1, C64::new(cos / 2.0, -sin / 2.0));
        s.set(-1, C64::new(cos / 2.0, sin / 2.0));
        s
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (i64, C64)>) -> Self {
        let mut s = Self::default();
        for (n, c) in terms {
            let acc = s.coeff(n) + c;
            s.set(n, acc);
        }
        s
    }

    pub fn set(&mut self, n: i64, c: C64) {
        if c.norm_sqr() == 0.0 {
            self.coeffs.remove(&n);
        } else {
            self.coeffs.insert(n, c);
        }
    }

    pub fn coeff(&self, n: i64) -> C64 {
        self.coeffs.get(&n).copied().unwrap_or_default()
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        self.coeffs.iter().map(|(n, c)| (*n, *c))
    }

    pub fn degree(&self) -> usize {
        self.coeffs.keys().map(|n| n.unsigned_abs() as usize).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn eval(&self, t: f64) -> C64 {
        self.terms().map(|(n, c)| c * C64::from_polar(1.0, n as f64 * t)).sum()
    }

    /// Coefficients of the pointwise product.
    pub fn product(&self, other: &Self) -> Self {
        let mut out = Self::default();
        for (n, a) in self.terms() {
            for (m, b) in other.terms() {
                let acc = out.coeff(n + m) + a * b;
                out.set(n + m, acc);
            }
        }
        out
    }

    /// Largest imaginary part over a grid resolving the series.
    pub fn max_imaginary(&self) -> f64 {
        let k = 4 * self.degree() + 8;
        (0..k)
            .map(|j| self.eval(2.0 * PI * j as f64 / k as f64).im.abs())
            .fold(0.0, f64::max)
    }
}
