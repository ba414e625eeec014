//! Angular potentials `(A, a)` on `S^{N-1}` and the spectrum of
//! `L_{A,a} = (-i∇_S + A)² - a` by spectral Galerkin discretization.
//!
//! On S¹ the basis is `e^{ijt}/√(2π)` and the operator acts as
//! `(-i d/dt + α)`, so `e^{ijt}` carries `(j + α)²`. On S² the basis is real
//! spherical harmonics and `A` must vanish.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{
    normalized_legendre, real_harmonics, AngularBasis, AngularGrid, BasisLabel, BasisTable,
    FourierSeries, C64,
};

/// Tolerance on the imaginary part of reconstructed real samples.
pub const REALITY_TOL: f64 = 1e-12;

pub const DEFAULT_TRUNCATION_2D: usize = 64;
pub const DEFAULT_TRUNCATION_3D: usize = 32;

pub fn default_truncation(dimension: usize) -> usize {
    if dimension == 2 {
        DEFAULT_TRUNCATION_2D
    } else {
        DEFAULT_TRUNCATION_3D
    }
}

/// One complex Fourier coefficient `c_n` of `Σ c_n e^{int}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub n: i64,
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// One real spherical-harmonic coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicTerm {
    pub l: usize,
    pub m: i64,
    pub value: f64,
}

/// Potential descriptor as it appears in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    AharonovBohm {
        alpha: f64,
        #[serde(default)]
        a0: f64,
    },
    Fourier {
        #[serde(default)]
        alpha: Vec<FourierTerm>,
        #[serde(default)]
        a: Vec<FourierTerm>,
        #[serde(default)]
        a_sh: Vec<HarmonicTerm>,
    },
    Dipole {
        lambda: f64,
        axis: [f64; 3],
    },
}

impl PotentialSpec {
    pub fn zero() -> Self {
        PotentialSpec::Fourier {
            alpha: vec![],
            a: vec![],
            a_sh: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    AharonovBohm { alpha: f64, a0: f64 },
    Fourier,
    Dipole { lambda: f64, axis: [f64; 3] },
}

/// Electric angular coefficient `a(θ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Electric {
    /// Fourier series in `t` (N = 2).
    Circle(FourierSeries),
    /// Real spherical-harmonic coefficients indexed `l² + l + m` (N = 3).
    Sphere(Vec<f64>),
    /// Constant (N ≥ 4).
    Constant(f64),
}

/// Validated angular data `(A, a)`; `A` is stored through its tangential
/// component only, so `A(θ)·θ = 0` by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularPotential {
    pub dimension: usize,
    pub kind: PotentialKind,
    /// Tangential component `α(t)` (N = 2; zero otherwise).
    pub magnetic: FourierSeries,
    pub electric: Electric,
}

pub fn build_potential(dimension: usize, spec: &PotentialSpec) -> Result<AngularPotential> {
    if dimension < 2 {
        return Err(Error::InvalidInput(format!("dimension must be >= 2, got {dimension}")));
    }
    let pot = match spec {
        PotentialSpec::AharonovBohm { alpha, a0 } => {
            if dimension != 2 {
                return Err(Error::Unsupported(format!(
                    "aharonov_bohm potential requires dimension 2, got {dimension}"
                )));
            }
            check_finite(&[*alpha, *a0])?;
            AngularPotential {
                dimension,
                kind: PotentialKind::AharonovBohm {
                    alpha: *alpha,
                    a0: *a0,
                },
                magnetic: FourierSeries::constant(*alpha),
                electric: Electric::Circle(FourierSeries::constant(*a0)),
            }
        }
        PotentialSpec::Fourier { alpha, a, a_sh } => {
            let magnetic = series_from_terms(alpha)?;
            let electric_series = series_from_terms(a)?;
            if dimension >= 3 && !magnetic.is_zero() {
                return Err(Error::Unsupported(format!(
                    "nonzero magnetic potential with dimension {dimension}"
                )));
            }
            let electric = match dimension {
                2 => {
                    if !a_sh.is_empty() {
                        return Err(Error::InvalidInput(
                            "spherical-harmonic coefficients need dimension 3".into(),
                        ));
                    }
                    Electric::Circle(electric_series)
                }
                3 => {
                    if electric_series.degree() > 0 {
                        return Err(Error::InvalidInput(
                            "for dimension 3 give a nonconstant electric potential through a_sh"
                                .into(),
                        ));
                    }
                    let lmax = a_sh.iter().map(|t| t.l).max().unwrap_or(0);
                    let mut coeffs = vec![0.0; (lmax + 1) * (lmax + 1)];
                    coeffs[0] = electric_series.coeff(0).re * (4.0 * PI).sqrt();
                    for t in a_sh {
                        if t.m.unsigned_abs() as usize > t.l {
                            return Err(Error::InvalidInput(format!(
                                "harmonic term l={} m={} has |m| > l",
                                t.l, t.m
                            )));
                        }
                        check_finite(&[t.value])?;
                        coeffs[((t.l * t.l + t.l) as i64 + t.m) as usize] += t.value;
                    }
                    Electric::Sphere(coeffs)
                }
                _ => {
                    if electric_series.degree() > 0 || !a_sh.is_empty() {
                        return Err(Error::Unsupported(format!(
                            "nonconstant electric potential with dimension {dimension}"
                        )));
                    }
                    Electric::Constant(electric_series.coeff(0).re)
                }
            };
            AngularPotential {
                dimension,
                kind: PotentialKind::Fourier,
                magnetic,
                electric,
            }
        }
        PotentialSpec::Dipole { lambda, axis } => {
            if dimension != 3 {
                return Err(Error::Unsupported(format!(
                    "dipole potential requires dimension 3, got {dimension}"
                )));
            }
            check_finite(&[*lambda, axis[0], axis[1], axis[2]])?;
            let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
            if norm == 0.0 {
                return Err(Error::InvalidInput("dipole axis must be nonzero".into()));
            }
            let e = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
            // x = k Y_{1,1}, y = k Y_{1,-1}, z = k Y_{1,0} with k = √(4π/3)
            let k = (4.0 * PI / 3.0).sqrt();
            let coeffs = vec![0.0, lambda * k * e[1], lambda * k * e[2], lambda * k * e[0]];
            AngularPotential {
                dimension,
                kind: PotentialKind::Dipole {
                    lambda: *lambda,
                    axis: e,
                },
                magnetic: FourierSeries::zero(),
                electric: Electric::Sphere(coeffs),
            }
        }
    };
    if let Electric::Circle(s) = &pot.electric {
        let im = s.max_imaginary();
        if im > REALITY_TOL {
            return Err(Error::InvalidCoefficients(format!(
                "electric potential has imaginary samples up to {im:e}"
            )));
        }
    }
    let im = pot.magnetic.max_imaginary();
    if im > REALITY_TOL {
        return Err(Error::InvalidCoefficients(format!(
            "magnetic potential has imaginary samples up to {im:e}"
        )));
    }
    Ok(pot)
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("potential parameters must be finite".into()))
    }
}

fn series_from_terms(terms: &[FourierTerm]) -> Result<FourierSeries> {
    for t in terms {
        check_finite(&[t.re, t.im])?;
    }
    Ok(FourierSeries::from_terms(
        terms.iter().map(|t| (t.n, C64::new(t.re, t.im))),
    ))
}

impl AngularPotential {
    pub fn zero(dimension: usize) -> Self {
        build_potential(dimension, &PotentialSpec::zero()).expect("zero potential is valid")
    }

    pub fn has_magnetic(&self) -> bool {
        !self.magnetic.is_zero()
    }

    /// Same electric part, magnetic part removed.
    pub fn without_magnetic(&self) -> Self {
        Self {
            kind: PotentialKind::Fourier,
            magnetic: FourierSeries::zero(),
            ..self.clone()
        }
    }

    /// Degree of the electric coefficient data.
    pub fn electric_degree(&self) -> usize {
        match &self.electric {
            Electric::Circle(s) => s.degree(),
            Electric::Sphere(c) => {
                let mut d = 0;
                for (i, v) in c.iter().enumerate() {
                    if *v != 0.0 {
                        d = (i as f64).sqrt().floor() as usize;
                    }
                }
                d
            }
            Electric::Constant(_) => 0,
        }
    }

    /// `α` at angle `t` (N = 2).
    pub fn alpha_at(&self, t: f64) -> f64 {
        self.magnetic.eval(t).re
    }

    /// `a` at the given angular coordinates (`(t, _)` or `(θ, φ)`).
    pub fn electric_at(&self, angles: [f64; 2]) -> f64 {
        match &self.electric {
            Electric::Circle(s) => s.eval(angles[0]).re,
            Electric::Sphere(c) => {
                let lmax = (c.len() as f64).sqrt() as usize - 1;
                let y = real_harmonics(lmax, angles[0], angles[1]);
                c.iter().zip(&y.values).map(|(a, b)| a * b).sum()
            }
            Electric::Constant(v) => *v,
        }
    }

    /// `α` and `a` at every node of `grid`.
    pub fn sample(&self, grid: &AngularGrid) -> PotentialSamples {
        let alpha = grid
            .angles()
            .iter()
            .map(|a| if self.dimension == 2 { self.alpha_at(a[0]) } else { 0.0 })
            .collect();
        let electric = grid.angles().iter().map(|a| self.electric_at(*a)).collect();
        PotentialSamples { alpha, electric }
    }
}

/// Potential values at angular grid nodes.
#[derive(Clone, Debug)]
pub struct PotentialSamples {
    pub alpha: Vec<f64>,
    pub electric: Vec<f64>,
}

/// Circulation `Φ_A = (1/2π) ∫ α(t) dt`.
pub fn circulation(pot: &AngularPotential) -> Result<f64> {
    if pot.dimension != 2 {
        return Err(Error::Unsupported(format!(
            "circulation is defined for dimension 2, got {}",
            pot.dimension
        )));
    }
    Ok(pot.magnetic.coeff(0).re)
}

/// `min_{k ∈ Z} |k - Φ|`.
pub fn distance_to_integers(phi: f64) -> f64 {
    (phi - phi.round()).abs()
}

/// Hermitian Galerkin matrix of the form
/// `∫ (∇ψ + iAψ)·conj(∇φ + iAφ) - a ψ conj(φ)` in an orthonormal basis.
#[derive(Clone, Debug)]
pub struct AngularMatrix {
    pub basis: AngularBasis,
    pub matrix: DMatrix<C64>,
}

pub fn assemble_angular_matrix(pot: &AngularPotential, truncation: usize) -> Result<AngularMatrix> {
    if truncation < 1 {
        return Err(Error::InvalidInput("truncation must be >= 1".into()));
    }
    match (pot.dimension, &pot.electric) {
        (2, Electric::Circle(a)) => Ok(assemble_circle(&pot.magnetic, a, truncation)),
        (3, Electric::Sphere(c)) => Ok(assemble_sphere(c, truncation)),
        (n, _) => Err(Error::Unsupported(format!(
            "angular operator assembly for dimension {n}"
        ))),
    }
}

fn assemble_circle(alpha: &FourierSeries, a: &FourierSeries, j_max: usize) -> AngularMatrix {
    let basis = AngularBasis::Fourier { degree: j_max };
    let n = basis.len();
    let alpha2 = alpha.product(alpha);
    let mut m = DMatrix::<C64>::zeros(n, n);
    for col in 0..n {
        let j = col as i64 - j_max as i64;
        for row in 0..n {
            let k = row as i64 - j_max as i64;
            let d = k - j;
            let mut v = C64::new(0.0, 0.0);
            if d == 0 {
                v += (j * k) as f64;
            }
            v += alpha.coeff(d) * (j + k) as f64 + alpha2.coeff(d) - a.coeff(d);
            m[(row, col)] = v;
        }
    }
    AngularMatrix { basis, matrix: m }
}

fn assemble_sphere(a: &[f64], l_max: usize) -> AngularMatrix {
    let basis = AngularBasis::Harmonics { degree: l_max };
    let n = basis.len();
    let l_pot = (a.len() as f64).sqrt() as usize - 1;
    let mut m = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = C64::new(basis.laplacian_eigenvalue(i), 0.0);
    }
    if a.iter().all(|v| *v == 0.0) {
        return AngularMatrix { basis, matrix: m };
    }
    // Products Y_i Y_j a have degree <= 2 l_max + l_pot; factor the
    // quadrature into an azimuthal transform per polar node.
    let total = 2 * l_max + l_pot;
    let polar = total / 2 + 1;
    let azimuthal = total + 1;
    let grid = AngularGrid::sphere(polar, azimuthal);
    let nm = 2 * l_max + 1;
    let labels: Vec<(usize, i64)> = (0..n)
        .map(|i| match basis.label(i) {
            BasisLabel::Harmonic { l, m } => (l, m),
            BasisLabel::Fourier(_) => unreachable!(),
        })
        .collect();
    let trig = |mm: i64, phi: f64| -> f64 {
        match mm.cmp(&0) {
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * (mm as f64 * phi).cos(),
            std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * (-mm as f64 * phi).sin(),
        }
    };
    let mut acc = vec![0.0f64; n * n];
    for p in 0..polar {
        let row = &grid.angles()[p * azimuthal..(p + 1) * azimuthal];
        let w = &grid.weights()[p * azimuthal..(p + 1) * azimuthal];
        let theta = row[0][0];
        let (leg, _) = normalized_legendre(l_max, theta);
        let a_vals: Vec<f64> = row
            .iter()
            .map(|ang| {
                let y = real_harmonics(l_pot, ang[0], ang[1]);
                a.iter().zip(&y.values).map(|(c, v)| c * v).sum()
            })
            .collect();
        let t: Vec<Vec<f64>> = (0..nm)
            .map(|mi| {
                let mm = mi as i64 - l_max as i64;
                row.iter().map(|ang| trig(mm, ang[1])).collect()
            })
            .collect();
        let mut g = vec![0.0f64; nm * nm];
        for mi in 0..nm {
            for mj in mi..nm {
                let s: f64 = (0..azimuthal)
                    .map(|q| w[q] * a_vals[q] * t[mi][q] * t[mj][q])
                    .sum();
                g[mi * nm + mj] = s;
                g[mj * nm + mi] = s;
            }
        }
        for i in 0..n {
            let (li, mi) = labels[i];
            let pi = leg[li][mi.unsigned_abs() as usize];
            let ri = (mi + l_max as i64) as usize;
            for j in i..n {
                let (lj, mj) = labels[j];
                let pj = leg[lj][mj.unsigned_abs() as usize];
                let rj = (mj + l_max as i64) as usize;
                acc[i * n + j] += pi * pj * g[ri * nm + rj];
            }
        }
    }
    let scale = acc.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for i in 0..n {
        for j in i..n {
            let mut v = acc[i * n + j];
            if v.abs() < 1e-14 * scale {
                v = 0.0;
            }
            m[(i, j)] -= C64::new(v, 0.0);
            if i != j {
                m[(j, i)] -= C64::new(v, 0.0);
            }
        }
    }
    AngularMatrix { basis, matrix: m }
}

impl AngularMatrix {
    /// `max |M - M^*| / max |M|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let m = &self.matrix;
        let scale = m.iter().fold(0.0f64, |s, v| s.max(v.norm())).max(f64::MIN_POSITIVE);
        let mut d = 0.0f64;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                d = d.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        d / scale
    }

    /// `‖M c - μ c‖₂`.
    pub fn residual(&self, mu: f64, coeffs: &[C64]) -> f64 {
        let c = nalgebra::DVector::from_column_slice(coeffs);
        (&self.matrix * &c - c * C64::new(mu, 0.0)).norm()
    }
}

/// Sorted eigenpairs of the Galerkin matrix. Indices `k0`, `j0` are 1-based.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AngularSpectrum {
    pub basis: AngularBasis,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<C64>>,
    /// `(j0, m)`: eigenvalues `j0..j0+m-1` coincide.
    pub blocks: Vec<(usize, usize)>,
    pub truncation: usize,
}

pub fn multiplicity_tolerance(mu: f64) -> f64 {
    1e-8 * (1.0 + mu.abs())
}

pub fn eigendecompose(matrix: &AngularMatrix, count: usize) -> Result<AngularSpectrum> {
    let m = &matrix.matrix;
    let n = m.nrows();
    if count == 0 || count > n {
        return Err(Error::InvalidInput(format!(
            "eigen count {count} must lie in 1..={n}"
        )));
    }
    let mut pairs: Vec<(f64, Vec<C64>)> = Vec::with_capacity(n);
    for comp in connected_components(m) {
        let k = comp.len();
        let sub = DMatrix::from_fn(k, k, |i, j| m[(comp[i], comp[j])]);
        let eig = nalgebra::SymmetricEigen::try_new(sub, 1e-15, 0).ok_or_else(|| {
            Error::NumericalFailure(format!("Hermitian eigensolver failed on a {k}x{k} block"))
        })?;
        for (c, mu) in eig.eigenvalues.iter().enumerate() {
            if !mu.is_finite() {
                return Err(Error::NumericalFailure("non-finite eigenvalue".into()));
            }
            let mut v = vec![C64::new(0.0, 0.0); n];
            for (i, gi) in comp.iter().enumerate() {
                v[*gi] = eig.eigenvectors[(i, c)];
            }
            fix_phase(&mut v);
            pairs.push((*mu, v));
        }
    }
    let lead = |v: &[C64]| -> usize {
        let mut best = 0;
        for (i, c) in v.iter().enumerate() {
            if c.norm() > v[best].norm() * (1.0 + 1e-9) {
                best = i;
            }
        }
        best
    };
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // inside a numerically degenerate cluster, order by leading coefficient
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && pairs[end].0 - pairs[start].0 <= multiplicity_tolerance(pairs[start].0) {
            end += 1;
        }
        pairs[start..end].sort_by_key(|p| lead(&p.1));
        start = end;
    }
    pairs.truncate(count);
    let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let blocks = group_blocks(&eigenvalues);
    Ok(AngularSpectrum {
        basis: matrix.basis,
        eigenvalues,
        eigenvectors: pairs.into_iter().map(|p| p.1).collect(),
        blocks,
        truncation: matrix.basis.degree(),
    })
}

/// Index sets of the connected components of the sparsity graph of `m`.
fn connected_components(m: &DMatrix<C64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)].norm() != 0.0 || m[(j, i)].norm() != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Rotate `v` so that its largest-magnitude entry is real and positive.
fn fix_phase(v: &mut [C64]) {
    let mut best = 0;
    for (i, c) in v.iter().enumerate() {
        if c.norm() > v[best].norm() * (1.0 + 1e-9) {
            best = i;
        }
    }
    let c = v[best];
    if c.norm() == 0.0 {
        return;
    }
    let rot = c.conj() / c.norm();
    for x in v.iter_mut() {
        *x *= rot;
    }
}

fn group_blocks(mu: &[f64]) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let mut start = 0;
    for k in 1..=mu.len() {
        if k == mu.len() || (mu[k] - mu[start]).abs() > multiplicity_tolerance(mu[start]) {
            blocks.push((start + 1, k - start));
            start = k;
        }
    }
    blocks
}

/// Assemble and decompose in one step.
pub fn compute_spectrum(
    pot: &AngularPotential,
    truncation: usize,
    count: usize,
) -> Result<AngularSpectrum> {
    eigendecompose(&assemble_angular_matrix(pot, truncation)?, count)
}

/// First eigenvalue `μ_1`.
pub fn mu1(spectrum: &AngularSpectrum) -> f64 {
    spectrum.eigenvalues[0]
}

/// Multiplicity block containing a 1-based eigenvalue index.
#[derive(Clone, Debug)]
pub struct Eigenspace {
    pub j0: usize,
    pub m: usize,
    pub vectors: Vec<Vec<C64>>,
}

pub fn eigenspace(spectrum: &AngularSpectrum, k0: usize) -> Result<Eigenspace> {
    let len = spectrum.eigenvalues.len();
    if k0 == 0 || k0 > len {
        return Err(Error::IndexOutOfRange { index: k0, len });
    }
    let (j0, m) = spectrum.block_of(k0);
    Ok(Eigenspace {
        j0,
        m,
        vectors: spectrum.eigenvectors[j0 - 1..j0 - 1 + m].to_vec(),
    })
}

/// The `count` smallest values of `(α - j)² - a0`, `j ∈ Z`.
pub fn closed_form_ab_spectrum(alpha: f64, a0: f64, count: usize) -> Vec<f64> {
    let center = alpha.round() as i64;
    let reach = count as i64 + 1;
    let mut v: Vec<f64> = (center - reach..=center + reach)
        .map(|j| (alpha - j as f64).powi(2) - a0)
        .collect();
    v.sort_by(f64::total_cmp);
    v.truncate(count);
    v
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub mu: Vec<f64>,
    pub blocks: Vec<[usize; 2]>,
    pub truncation: usize,
}

impl AngularSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.basis.dimension()
    }

    /// Block `(j0, m)` containing 1-based index `k`.
    pub fn block_of(&self, k: usize) -> (usize, usize) {
        *self
            .blocks
            .iter()
            .find(|(j0, m)| *j0 <= k && k < j0 + m)
            .expect("index inside spectrum")
    }

    pub fn summary(&self) -> SpectrumSummary {
        SpectrumSummary {
            mu: self.eigenvalues.clone(),
            blocks: self.blocks.iter().map(|&(a, b)| [a, b]).collect(),
            truncation: self.truncation,
        }
    }

    /// Maximum deviation of the coefficient Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut d = 0.0f64;
        for (i, a) in self.eigenvectors.iter().enumerate() {
            for (j, b) in self.eigenvectors.iter().enumerate() {
                let g: C64 = a.iter().zip(b).map(|(x, y)| x * y.conj()).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                d = d.max((g - e).norm());
            }
        }
        d
    }

    /// Largest basis degree carrying a nonzero coefficient in the first
    /// `count` eigenvectors.
    pub fn active_degree(&self, count: usize) -> usize {
        let mut d = 0;
        for v in self.eigenvectors.iter().take(count) {
            for (i, c) in v.iter().enumerate() {
                if c.norm() > 1e-15 {
                    d = d.max(self.basis.degree_of(i));
                }
            }
        }
        d
    }

    /// Eigenfunctions (first `count`) and their tangential gradients at
    /// every node of `grid`.
    pub fn tabulate(&self, grid: &AngularGrid, count: usize) -> ModeTable {
        let table = self.basis.tabulate(grid);
        ModeTable::from_basis(&table, &self.eigenvectors[..count.min(self.len())])
    }
}

/// Values `ψ_k(θ_q)` and tangential gradients, row-major `[node][mode]`.
#[derive(Clone, Debug)]
pub struct ModeTable {
    pub nodes: usize,
    pub modes: usize,
    pub tangent_dim: usize,
    values: Vec<C64>,
    gradients: Vec<C64>,
}

impl ModeTable {
    pub fn from_basis(table: &BasisTable, vectors: &[Vec<C64>]) -> Self {
        let modes = vectors.len();
        let tdim = table.tangent_dim;
        let mut values = vec![C64::new(0.0, 0.0); table.nodes * modes];
        let mut gradients = vec![C64::new(0.0, 0.0); table.nodes * modes * tdim];
        for q in 0..table.nodes {
            for (k, v) in vectors.iter().enumerate() {
                let (val, grad) = table.combine(q, v);
                values[q * modes + k] = val;
                for (d, g) in grad.into_iter().enumerate() {
                    gradients[(q * modes + k) * tdim + d] = g;
                }
            }
        }
        Self {
            nodes: table.nodes,
            modes,
            tangent_dim: tdim,
            values,
            gradients,
        }
    }

    pub fn value(&self, node: usize, k: usize) -> C64 {
        self.values[node * self.modes + k]
    }

    pub fn gradient(&self, node: usize, k: usize, d: usize) -> C64 {
        self.gradients[(node * self.modes + k) * self.tangent_dim + d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab(alpha: f64, a0: f64) -> AngularPotential {
        build_potential(2, &PotentialSpec::AharonovBohm { alpha, a0 }).unwrap()
    }

    #[test]
    fn zero_potential_matrix_is_diagonal_squares() {
        let m = assemble_angular_matrix(&AngularPotential::zero(2), 2).unwrap();
        let d: Vec<f64> = (0..5).map(|i| m.matrix[(i, i)].re).collect();
        assert_eq!(d, vec![4.0, 1.0, 0.0, 1.0, 4.0]);
        assert_eq!(m.matrix.iter().filter(|v| v.norm() != 0.0).count(), 4);
    }

    #[test]
    fn ab_spectrum_matches_closed_form() {
        let s = compute_spectrum(&ab(0.3, 0.0), 64, 4).unwrap();
        for (a, b) in s.eigenvalues.iter().zip([0.09, 0.49, 1.69, 2.89]) {
            assert!((a - b).abs() < 1e-12);
        }
        let h = compute_spectrum(&ab(0.5, 0.0), 64, 4).unwrap();
        assert_eq!(h.blocks, vec![(1, 2), (3, 2)]);
        assert!((h.eigenvalues[1] - 0.25).abs() < 1e-13);
        let es = eigenspace(&h, 2).unwrap();
        assert_eq!((es.j0, es.m), (1, 2));
    }

    #[test]
    fn closed_form_examples() {
        let close = |a: Vec<f64>, b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(closed_form_ab_spectrum(0.3, 0.0, 3), &[0.09, 0.49, 1.69]));
        assert!(close(closed_form_ab_spectrum(0.0, 0.0, 3), &[0.0, 1.0, 1.0]));
        assert!(close(closed_form_ab_spectrum(0.5, 0.1, 2), &[0.15, 0.15]));
    }

    #[test]
    fn zero_potential_spectra() {
        let s = compute_spectrum(&AngularPotential::zero(2), 8, 5).unwrap();
        assert_eq!(s.eigenvalues, vec![0.0, 1.0, 1.0, 4.0, 4.0]);
        let es = eigenspace(&s, 2).unwrap();
        assert_eq!((es.j0, es.m), (2, 2));
        let s3 = compute_spectrum(&AngularPotential::zero(3), 4, 9).unwrap();
        assert_eq!(mu1(&s3), 0.0);
        assert_eq!(s3.blocks, vec![(1, 1), (2, 3), (5, 5)]);
        assert!(matches!(eigenspace(&s3, 10), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn circulation_and_validation() {
        let p = build_potential(
            2,
            &PotentialSpec::Fourier {
                alpha: vec![
                    FourierTerm { n: 0, re: 0.3, im: 0.0 },
                    FourierTerm { n: 1, re: 0.25, im: 0.0 },
                    FourierTerm { n: -1, re: 0.25, im: 0.0 },
                ],
                a: vec![],
                a_sh: vec![],
            },
        )
        .unwrap();
        assert!((circulation(&p).unwrap() - 0.3).abs() < 1e-15);
        assert!((p.alpha_at(0.0) - 0.8).abs() < 1e-15);
        let bad = build_potential(
            2,
            &PotentialSpec::Fourier {
                alpha: vec![FourierTerm { n: 1, re: 1.0, im: 0.0 }],
                a: vec![],
                a_sh: vec![],
            },
        );
        assert!(matches!(bad, Err(Error::InvalidCoefficients(_))));
        let mag3 = build_potential(
            3,
            &PotentialSpec::Fourier {
                alpha: vec![FourierTerm { n: 0, re: 0.1, im: 0.0 }],
                a: vec![],
                a_sh: vec![],
            },
        );
        assert!(matches!(mag3, Err(Error::Unsupported(_))));
        let dip = build_potential(
            3,
            &PotentialSpec::Dipole {
                lambda: 1.0,
                axis: [0.0, 0.0, 1.0],
            },
        )
        .unwrap();
        for (th, ph) in [(0.3, 1.0), (2.0, 4.0)] {
            assert!((dip.electric_at([th, ph]) - f64::cos(th)).abs() < 1e-14);
        }
        assert!(circulation(&dip).is_err());
        assert!(build_potential(
            2,
            &PotentialSpec::Dipole {
                lambda: 1.0,
                axis: [0.0, 0.0, 1.0]
            }
        )
        .is_err());
    }

    #[test]
    fn dipole_matrix_matches_gaunt_coupling() {
        let pot = build_potential(
            3,
            &PotentialSpec::Dipole {
                lambda: 1.0,
                axis: [0.0, 0.0, 1.0],
            },
        )
        .unwrap();
        let m = assemble_angular_matrix(&pot, 4).unwrap();
        let b = m.basis;
        let idx = |l, mm| b.index_of(BasisLabel::Harmonic { l, m: mm }).unwrap();
        // ⟨Y_{l+1,m}| cos θ |Y_{l,m}⟩ for real harmonics of equal order
        let gaunt = |l: usize, mm: i64| {
            let (l, mm) = (l as f64, mm as f64);
            (((l + 1.0).powi(2) - mm * mm) / ((2.0 * l + 1.0) * (2.0 * l + 3.0))).sqrt()
        };
        for l in 0..=3usize {
            for mm in -(l as i64)..=(l as i64) {
                let got = -m.matrix[(idx(l + 1, mm), idx(l, mm))].re;
                assert!((got - gaunt(l, mm)).abs() < 1e-13, "l={l} m={mm}");
                assert!(m.matrix[(idx(l, mm), idx(l, mm))].re == (l * (l + 1)) as f64);
            }
        }
        for i in 0..b.len() {
            for j in 0..b.len() {
                let (BasisLabel::Harmonic { l: li, m: mi }, BasisLabel::Harmonic { l: lj, m: mj }) =
                    (b.label(i), b.label(j))
                else {
                    unreachable!()
                };
                if mi != mj || li.abs_diff(lj) > 1 {
                    assert_eq!(m.matrix[(i, j)].norm(), 0.0);
                }
            }
        }
        assert!(m.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn spectrum_invariants() {
        let pot = build_potential(
            2,
            &PotentialSpec::Fourier {
                alpha: vec![
                    FourierTerm { n: 0, re: 0.2, im: 0.0 },
                    FourierTerm { n: 2, re: 0.1, im: 0.05 },
                    FourierTerm { n: -2, re: 0.1, im: -0.05 },
                ],
                a: vec![
                    FourierTerm { n: 0, re: 0.3, im: 0.0 },
                    FourierTerm { n: 1, re: 0.2, im: 0.0 },
                    FourierTerm { n: -1, re: 0.2, im: 0.0 },
                ],
                a_sh: vec![],
            },
        )
        .unwrap();
        let m = assemble_angular_matrix(&pot, 24).unwrap();
        assert!(m.hermiticity_defect() < 1e-12);
        let s = eigendecompose(&m, 10).unwrap();
        assert!(s.orthonormality_defect() < 1e-10);
        for k in 0..10 {
            assert!(m.residual(s.eigenvalues[k], &s.eigenvectors[k]) < 1e-10);
        }
        assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let fine = compute_spectrum(&pot, 48, 10).unwrap();
        for (a, b) in s.eigenvalues.iter().zip(&fine.eigenvalues) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn phase_convention_is_deterministic() {
        let s = compute_spectrum(&ab(0.3, 0.0), 8, 3).unwrap();
        for v in &s.eigenvectors {
            let best = v.iter().fold(C64::new(0.0, 0.0), |b, c| if c.norm() > b.norm() { *c } else { b });
            assert!(best.im.abs() < 1e-15 && best.re > 0.0);
        }
    }
}
