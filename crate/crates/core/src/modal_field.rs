//! Separated solutions of `L_{A,a} u = h u`.
//!
//! A field is expanded as `u(λθ) = Σ_k φ_k(λ) ψ_k(θ)`; each profile solves
//! `-φ'' - (N-1)/λ φ' + μ_k/λ² φ = ζ_k` with `ζ_k = ⟨h u, ψ_k⟩`, and is
//! obtained in closed form by variation of parameters on the regular
//! (interior) or decaying (exterior) branch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::angular_spectrum::{AngularSpectrum, HarmonicTerm, FourierTerm, ModeTable};
use crate::error::{Error, Result};
use crate::quadrature::{
    cumulative_backward, cumulative_forward, derivative_uniform, linear_fit, tail_above,
    tail_below, RadialGrid,
};
use crate::sphere::{real_harmonics, AngularBasis, AngularGrid, FourierSeries, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Characteristic exponents `σ± = -(N-2)/2 ± √(((N-2)/2)² + μ)` of mode `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalExponents {
    pub k: usize,
    pub mu: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
}

pub fn characteristic_exponents(dimension: usize, mu: f64) -> Result<ModalExponents> {
    let half = (dimension as f64 - 2.0) / 2.0;
    let disc = half * half + mu;
    if !(disc > 0.0) {
        return Err(Error::IndefiniteForm { discriminant: disc });
    }
    let root = disc.sqrt();
    Ok(ModalExponents {
        k: 0,
        mu,
        sigma_plus: -half + root,
        sigma_minus: -half - root,
    })
}

impl ModalExponents {
    pub fn with_index(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn gap(&self) -> f64 {
        self.sigma_plus - self.sigma_minus
    }
}

/// Interior (`B_R \ {0}`) or exterior (`{|x| > R}`) problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Interior,
    Exterior,
}

impl Side {
    pub fn flipped(self) -> Self {
        match self {
            Side::Interior => Side::Exterior,
            Side::Exterior => Side::Interior,
        }
    }
}

/// Angular factor `f(θ)` of the perturbation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularFactor {
    #[default]
    Constant,
    /// `Σ c_n e^{int}` (N = 2).
    Fourier { terms: Vec<FourierTerm> },
    /// Real spherical harmonics (N = 3).
    Harmonics { terms: Vec<HarmonicTerm> },
}

impl AngularFactor {
    pub fn degree(&self) -> usize {
        match self {
            AngularFactor::Constant => 0,
            AngularFactor::Fourier { terms } => {
                terms.iter().map(|t| t.n.unsigned_abs() as usize).max().unwrap_or(0)
            }
            AngularFactor::Harmonics { terms } => terms.iter().map(|t| t.l).max().unwrap_or(0),
        }
    }

    pub fn check_dimension(&self, dimension: usize) -> Result<()> {
        match (self, dimension) {
            (AngularFactor::Constant, _)
            | (AngularFactor::Fourier { .. }, 2)
            | (AngularFactor::Harmonics { .. }, 3) => Ok(()),
            _ => Err(Error::InvalidInput(format!(
                "angular factor does not match dimension {dimension}"
            ))),
        }
    }

    pub fn values(&self, grid: &AngularGrid) -> Vec<C64> {
        match self {
            AngularFactor::Constant => vec![C64::new(1.0, 0.0); grid.len()],
            AngularFactor::Fourier { terms } => {
                let s = FourierSeries::from_terms(terms.iter().map(|t| (t.n, C64::new(t.re, t.im))));
                grid.angles().iter().map(|a| s.eval(a[0])).collect()
            }
            AngularFactor::Harmonics { terms } => {
                let lmax = self.degree();
                grid.angles()
                    .iter()
                    .map(|a| {
                        let y = real_harmonics(lmax, a[0], a[1]);
                        let v: f64 = terms
                            .iter()
                            .map(|t| t.value * y.values[((t.l * t.l + t.l) as i64 + t.m) as usize])
                            .sum();
                        C64::new(v, 0.0)
                    })
                    .collect()
            }
        }
    }
}

/// `h(x) = c |x|^{-2+ε} f(x/|x|)` (interior) or `c |x|^{-2-ε} f(x/|x|)`
/// (exterior).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(with = "complex_or_real")]
    pub c: C64,
    pub epsilon: f64,
    #[serde(default)]
    pub angular: AngularFactor,
    #[serde(default = "default_side")]
    pub side: Side,
}

fn default_side() -> Side {
    Side::Interior
}

impl PerturbationSpec {
    pub fn new(c: f64, epsilon: f64, side: Side) -> Self {
        Self {
            c: C64::new(c, 0.0),
            epsilon,
            angular: AngularFactor::Constant,
            side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Validation(format!(
                "perturbation exponent offset epsilon must be > 0 (h = O(|x|^(-2+eps)) near the pole), got {}",
                self.epsilon
            )));
        }
        if !self.c.is_finite() {
            return Err(Error::Validation("perturbation amplitude must be finite".into()));
        }
        Ok(())
    }

    /// Radial power `p` with `h = c r^p f`.
    pub fn radial_power(&self) -> f64 {
        match self.side {
            Side::Interior => -2.0 + self.epsilon,
            Side::Exterior => -2.0 - self.epsilon,
        }
    }

    pub fn radial_factor(&self, r: f64) -> C64 {
        self.c * r.powf(self.radial_power())
    }

    pub fn is_zero(&self) -> bool {
        self.c.norm() == 0.0
    }
}

mod complex_or_real {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Real(f64),
        Pair([f64; 2]),
    }

    pub fn serialize<S: Serializer>(c: &C64, s: S) -> Result<S::Ok, S::Error> {
        [c.re, c.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C64, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Real(x) => C64::new(x, 0.0),
            Repr::Pair([a, b]) => C64::new(a, b),
        })
    }
}

/// Radial profile of one mode with its derivative and forcing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialMode {
    pub exponents: ModalExponents,
    pub values: Vec<C64>,
    /// `dφ/dλ`.
    pub derivative: Vec<C64>,
    pub forcing: Vec<C64>,
}

/// Number of nodes next to the singular end used for decay checks.
const DECAY_WINDOW: usize = 12;

/// Solve the mode equation by variation of parameters, on the branch that
/// stays in the energy space at the singular end.
///
/// Interior grids end at `R = grid.last()` and
/// `φ = λ^{σ+}(c₁ + ∫_λ^R s^{1-σ+} ζ/Δ) + λ^{σ-} ∫_0^λ s^{1-σ-} ζ/Δ`.
/// Exterior grids start at `R = grid.first()` and
/// `φ = λ^{σ-}(c₂ + ∫_R^λ s^{1-σ-} ζ/Δ) + λ^{σ+} ∫_λ^∞ s^{1-σ+} ζ/Δ`.
/// `correction` is the exponent of the leading correction of `ζ` near the
/// singular end, used to close the tail integral.
pub fn solve_radial_mode(
    exp: &ModalExponents,
    zeta: &[C64],
    boundary: C64,
    grid: &RadialGrid,
    side: Side,
    correction: Option<f64>,
) -> Result<RadialMode> {
    let n = grid.len();
    if zeta.len() != n {
        return Err(Error::GridMismatch(format!(
            "forcing has {} samples, grid has {n}",
            zeta.len()
        )));
    }
    let (sp, sm) = (exp.sigma_plus, exp.sigma_minus);
    let delta = sp - sm;
    if delta <= 1e-12 * (1.0 + sp.abs()) {
        return Err(Error::DegenerateIndicial { sigma: sp });
    }
    let r = grid.radii();
    let h = grid.step();
    let (bp, bm) = if side == Side::Interior { (sp, sm) } else { (sm, sp) };
    // bp: exponent of the branch fixed by the boundary value,
    // bm: exponent of the branch suppressed at the singular end
    let forced = zeta.iter().any(|z| z.norm() > 0.0);
    if !forced {
        let rb = if side == Side::Interior { grid.last() } else { grid.first() };
        let values: Vec<C64> = r.iter().map(|x| boundary * (x / rb).powf(bp)).collect();
        let derivative = r
            .iter()
            .zip(&values)
            .map(|(x, v)| v * (bp / x))
            .collect();
        return Ok(RadialMode {
            exponents: *exp,
            values,
            derivative,
            forcing: zeta.to_vec(),
        });
    }
    check_forcing_decay(zeta, r, side, sm, sp)?;
    let gp: Vec<C64> = r.iter().zip(zeta).map(|(x, z)| z * (x.powf(2.0 - bp) / delta)).collect();
    let gm: Vec<C64> = r.iter().zip(zeta).map(|(x, z)| z * (x.powf(2.0 - bm) / delta)).collect();
    // p: integral of the boundary branch measured from R,
    // m: integral of the suppressed branch measured from the singular end.
    let (p_int, m_int, rb) = match side {
        Side::Interior => {
            let p = cumulative_backward(&gp, h);
            let tail = tail_below(&gm, h, correction)?;
            let m: Vec<C64> = cumulative_forward(&gm, h).into_iter().map(|v| v + tail).collect();
            (p, m, n - 1)
        }
        Side::Exterior => {
            let p = cumulative_forward(&gp, h);
            let tail = tail_above(&gm, h, correction)?;
            let m: Vec<C64> = cumulative_backward(&gm, h).into_iter().map(|v| v + tail).collect();
            (p, m, 0)
        }
    };
    let rr = r[rb];
    let c = (boundary - m_int[rb] * rr.powf(bm)) / rr.powf(bp);
    let mut values = Vec::with_capacity(n);
    let mut derivative = Vec::with_capacity(n);
    for i in 0..n {
        let (x, p, m) = (r[i], c + p_int[i], m_int[i]);
        values.push(p * x.powf(bp) + m * x.powf(bm));
        derivative.push(p * (bp * x.powf(bp - 1.0)) + m * (bm * x.powf(bm - 1.0)));
    }
    Ok(RadialMode {
        exponents: *exp,
        values,
        derivative,
        forcing: zeta.to_vec(),
    })
}

/// Reject forcing whose growth at the singular end makes the tail integral
/// of the suppressed branch diverge.
fn check_forcing_decay(zeta: &[C64], r: &[f64], side: Side, sm: f64, sp: f64) -> Result<()> {
    let n = r.len();
    let w = DECAY_WINDOW.min(n);
    let idx: Vec<usize> = match side {
        Side::Interior => (0..w).collect(),
        Side::Exterior => (n - w..n).collect(),
    };
    let pts: Vec<(f64, f64)> = idx
        .iter()
        .filter(|&&i| zeta[i].norm() > 0.0)
        .map(|&i| (r[i].ln(), zeta[i].norm().ln()))
        .collect();
    if pts.len() < 3 {
        return Ok(());
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (slope, _, _) = linear_fit(&x, &y);
    match side {
        Side::Interior if slope <= sm - 2.0 => Err(Error::ForcingTooSingular {
            slope,
            bound: sm - 2.0,
        }),
        // at infinity the mirror condition bounds the slope from above
        Side::Exterior if slope >= sp - 2.0 => Err(Error::ForcingTooSingular {
            slope,
            bound: sp - 2.0,
        }),
        _ => Ok(()),
    }
}

/// Fixed-point iteration controls.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PicardOptions {
    pub max_iter: usize,
    /// Stop when successive fields differ by less than `tol * max(1, sup|u|)`.
    pub tol: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-14,
        }
    }
}

pub const DEFAULT_MODES: usize = 16;

/// Inputs of a separated boundary-value problem.
#[derive(Clone, Debug)]
pub struct ModalProblem<'a> {
    pub spectrum: &'a AngularSpectrum,
    pub perturbation: Option<&'a PerturbationSpec>,
    /// 1-based mode index and boundary value `φ_k(R)`.
    pub boundary: &'a [(usize, C64)],
    pub radial: RadialGrid,
    pub modes: usize,
    pub side: Side,
}

/// Profiles of all retained modes on a common radial grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModalSolution {
    pub dimension: usize,
    pub side: Side,
    pub radial: RadialGrid,
    pub boundary_radius: f64,
    pub modes: Vec<RadialMode>,
    pub perturbation: Option<PerturbationSpec>,
    /// Sup-norm differences between successive fixed-point iterates.
    pub residuals: Vec<f64>,
}

/// Angular grid that integrates products `f ψ_j conj(ψ_k)` exactly.
pub fn coupling_grid(spectrum: &AngularSpectrum, modes: usize, factor_degree: usize) -> AngularGrid {
    let d = effective_degree(spectrum, modes);
    AngularGrid::resolving(spectrum.dimension(), d + factor_degree.div_ceil(2) + 1)
}

/// Largest basis degree with a coefficient above `1e-13` in the first
/// `modes` eigenvectors.
pub fn effective_degree(spectrum: &AngularSpectrum, modes: usize) -> usize {
    let mut d = 0;
    for v in spectrum.eigenvectors.iter().take(modes) {
        for (i, c) in v.iter().enumerate() {
            if c.norm() > 1e-13 {
                d = d.max(spectrum.basis.degree_of(i));
            }
        }
    }
    d
}

pub fn solve_modal_problem(p: &ModalProblem, opts: &PicardOptions) -> Result<ModalSolution> {
    let k = p.modes.min(p.spectrum.len());
    if k == 0 {
        return Err(Error::InvalidInput("at least one mode is required".into()));
    }
    let dim = p.spectrum.dimension();
    let mut bvals = vec![ZERO; k];
    for &(idx, v) in p.boundary {
        if idx == 0 || idx > k {
            return Err(Error::IndexOutOfRange { index: idx, len: k });
        }
        bvals[idx - 1] += v;
    }
    let exps: Vec<ModalExponents> = (0..k)
        .map(|i| characteristic_exponents(dim, p.spectrum.eigenvalues[i]).map(|e| e.with_index(i + 1)))
        .collect::<Result<_>>()?;
    let n = p.radial.len();
    let pert = p.perturbation.filter(|h| !h.is_zero());
    if let Some(h) = pert {
        h.validate()?;
        h.angular.check_dimension(dim)?;
        if h.side != p.side {
            return Err(Error::InvalidInput("perturbation side differs from problem side".into()));
        }
    }
    let solve_all = |zetas: &[Vec<C64>]| -> Result<Vec<RadialMode>> {
        (0..k)
            .map(|i| {
                solve_radial_mode(
                    &exps[i],
                    &zetas[i],
                    bvals[i],
                    &p.radial,
                    p.side,
                    pert.map(|h| h.epsilon),
                )
            })
            .collect()
    };
    let zero_forcing = vec![vec![ZERO; n]; k];
    let mut modes = solve_all(&zero_forcing)?;
    let mut residuals = Vec::new();
    if let Some(h) = pert {
        let grid = coupling_grid(p.spectrum, k, h.angular.degree());
        let table = p.spectrum.tabulate(&grid, k);
        let coupling = coupling_matrix(&table, &grid, &h.angular.values(&grid));
        let radial: Vec<C64> = p.radial.radii().iter().map(|r| h.radial_factor(*r)).collect();
        let mut converged = false;
        for _ in 0..opts.max_iter {
            let zetas = modal_forcing(&coupling, &radial, &modes);
            let next = solve_all(&zetas)?;
            let (diff, size) = sup_difference(&table, &modes, &next);
            residuals.push(diff);
            modes = next;
            if diff <= opts.tol * size.max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NotConverged {
                iterations: opts.max_iter,
                residual: residuals.last().copied().unwrap_or(f64::NAN),
            });
        }
    }
    let rb = match p.side {
        Side::Interior => p.radial.last(),
        Side::Exterior => p.radial.first(),
    };
    Ok(ModalSolution {
        dimension: dim,
        side: p.side,
        radial: p.radial.clone(),
        boundary_radius: rb,
        modes,
        perturbation: pert.cloned(),
        residuals,
    })
}

/// `F_kj = ∫ f ψ_j conj(ψ_k) dS`.
fn coupling_matrix(table: &ModeTable, grid: &AngularGrid, f: &[C64]) -> Vec<Vec<C64>> {
    let k = table.modes;
    let w = grid.weights();
    (0..k)
        .map(|row| {
            (0..k)
                .map(|col| {
                    (0..grid.len())
                        .map(|q| f[q] * table.value(q, col) * table.value(q, row).conj() * w[q])
                        .sum()
                })
                .collect()
        })
        .collect()
}

fn modal_forcing(coupling: &[Vec<C64>], radial: &[C64], modes: &[RadialMode]) -> Vec<Vec<C64>> {
    let n = radial.len();
    coupling
        .iter()
        .map(|row| {
            (0..n)
                .map(|i| {
                    let s: C64 = row
                        .iter()
                        .zip(modes)
                        .filter(|(c, _)| c.norm() > 1e-15)
                        .map(|(c, m)| c * m.values[i])
                        .sum();
                    s * radial[i]
                })
                .collect()
        })
        .collect()
}

/// `(sup |u_a - u_b|, sup |u_b|)` over the radial grid and table nodes.
fn sup_difference(table: &ModeTable, a: &[RadialMode], b: &[RadialMode]) -> (f64, f64) {
    let n = a[0].values.len();
    let (mut diff, mut size) = (0.0f64, 0.0f64);
    for i in 0..n {
        for q in 0..table.nodes {
            let mut d = ZERO;
            let mut v = ZERO;
            for (kk, (ma, mb)) in a.iter().zip(b).enumerate() {
                let psi = table.value(q, kk);
                d += (mb.values[i] - ma.values[i]) * psi;
                v += mb.values[i] * psi;
            }
            diff = diff.max(d.norm());
            size = size.max(v.norm());
        }
    }
    (diff, size)
}

impl ModalSolution {
    /// `H(r_i) = Σ_k |φ_k(r_i)|²`.
    pub fn height(&self) -> Vec<f64> {
        (0..self.radial.len())
            .map(|i| self.modes.iter().map(|m| m.values[i].norm_sqr()).sum())
            .collect()
    }

    /// Ratios of successive fixed-point residuals above the roundoff floor.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        let floor = 1e-11 * self.residuals.first().copied().unwrap_or(0.0);
        self.residuals
            .windows(2)
            .filter(|w| w[1] > floor)
            .map(|w| w[1] / w[0])
            .collect()
    }

    pub fn profile(&self, k: usize) -> Option<&RadialMode> {
        if k == 0 {
            None
        } else {
            self.modes.get(k - 1)
        }
    }

    pub fn summary(&self) -> ModalSummary {
        ModalSummary {
            dimension: self.dimension,
            side: self.side,
            boundary_radius: self.boundary_radius,
            points: self.radial.len(),
            r_min: self.radial.first(),
            r_max: self.radial.last(),
            exponents: self.modes.iter().map(|m| m.exponents).collect(),
            iterations: self.residuals.len(),
            residuals: self.residuals.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModalSummary {
    pub dimension: usize,
    pub side: Side,
    pub boundary_radius: f64,
    pub points: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub exponents: Vec<ModalExponents>,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// Gradient samples: `∂_r u` and the unit-sphere tangential gradient
/// `∇_S u` (physical tangential derivative is `∇_S u / r`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGradient {
    pub radial: Vec<C64>,
    /// Row-major `[radius][node][component]`.
    pub tangential: Vec<C64>,
}

/// Field values on a log-radial × angular polar grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub dimension: usize,
    pub side: Side,
    pub radial: RadialGrid,
    pub angular: AngularGrid,
    /// Row-major `[radius][node]`.
    pub values: Vec<C64>,
    pub gradient: Option<FieldGradient>,
}

/// Compact description of a field's grid, used next to CSV dumps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldHeader {
    pub dimension: usize,
    pub side: Side,
    pub r_min: f64,
    pub r_max: f64,
    pub radial_points: usize,
    pub angular: crate::sphere::AngularGridSpec,
    pub has_gradient: bool,
    pub columns: Vec<String>,
}

impl FieldSample {
    pub fn new(
        dimension: usize,
        side: Side,
        radial: RadialGrid,
        angular: AngularGrid,
        values: Vec<C64>,
    ) -> Result<Self> {
        if angular.dimension() != dimension {
            return Err(Error::GridMismatch(format!(
                "angular grid is for dimension {}, field has {dimension}",
                angular.dimension()
            )));
        }
        if values.len() != radial.len() * angular.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                radial.len(),
                angular.len()
            )));
        }
        Ok(Self {
            dimension,
            side,
            radial,
            angular,
            values,
            gradient: None,
        })
    }

    pub fn nodes(&self) -> usize {
        self.angular.len()
    }

    pub fn tangent_dim(&self) -> usize {
        self.dimension - 1
    }

    pub fn value(&self, i: usize, q: usize) -> C64 {
        self.values[i * self.nodes() + q]
    }

    pub fn radial_derivative(&self, i: usize, q: usize) -> Option<C64> {
        self.gradient.as_ref().map(|g| g.radial[i * self.nodes() + q])
    }

    pub fn tangential(&self, i: usize, q: usize, d: usize) -> Option<C64> {
        let t = self.tangent_dim();
        self.gradient
            .as_ref()
            .map(|g| g.tangential[(i * self.nodes() + q) * t + d])
    }

    pub fn header(&self) -> FieldHeader {
        let mut columns = vec!["r".to_string()];
        if self.dimension == 2 {
            columns.push("t".into());
        } else {
            columns.push("theta".into());
            columns.push("phi".into());
        }
        columns.push("re_u".into());
        columns.push("im_u".into());
        FieldHeader {
            dimension: self.dimension,
            side: self.side,
            r_min: self.radial.first(),
            r_max: self.radial.last(),
            radial_points: self.radial.len(),
            angular: self.angular.spec(),
            has_gradient: self.gradient.is_some(),
            columns,
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header().columns.join(","))?;
        for (i, r) in self.radial.radii().iter().enumerate() {
            for (q, ang) in self.angular.angles().iter().enumerate() {
                let u = self.value(i, q);
                if self.dimension == 2 {
                    writeln!(w, "{r:.17e},{:.17e},{:.17e},{:.17e}", ang[0], u.re, u.im)?;
                } else {
                    writeln!(
                        w,
                        "{r:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                        ang[0], ang[1], u.re, u.im
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Copy with every value multiplied by `1 + level ξ`, `ξ` uniform in
    /// `[-1, 1]`; gradients are dropped.
    pub fn corrupted(&self, level: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = self
            .values
            .iter()
            .map(|v| v * (1.0 + level * rng.gen_range(-1.0..=1.0)))
            .collect();
        Self {
            values,
            gradient: None,
            ..self.clone()
        }
    }

    /// Gradient recomputed from values alone: sixth-order differences in
    /// `ln r` and spectral differentiation in the angles.
    pub fn with_recomputed_gradient(&self) -> Result<Self> {
        let nr = self.radial.len();
        let nq = self.nodes();
        let t = self.tangent_dim();
        let h = self.radial.step();
        let mut radial = vec![ZERO; nr * nq];
        for q in 0..nq {
            let col: Vec<C64> = (0..nr).map(|i| self.value(i, q)).collect();
            let d = derivative_uniform(&col, h);
            for i in 0..nr {
                radial[i * nq + q] = d[i] / self.radial.radii()[i];
            }
        }
        let degree = self.angular.resolved_degree();
        let basis = match self.dimension {
            2 => AngularBasis::Fourier { degree },
            3 => AngularBasis::Harmonics { degree },
            n => return Err(Error::Unsupported(format!("angular differentiation in dimension {n}"))),
        };
        let table = basis.tabulate(&self.angular);
        let w = self.angular.weights();
        let mut tangential = vec![ZERO; nr * nq * t];
        for i in 0..nr {
            let coeffs: Vec<C64> = (0..basis.len())
                .map(|b| {
                    (0..nq)
                        .map(|q| self.value(i, q) * table.value(q, b).conj() * w[q])
                        .sum()
                })
                .collect();
            for q in 0..nq {
                let (_, g) = table.combine(q, &coeffs);
                for (d, gd) in g.into_iter().enumerate() {
                    tangential[(i * nq + q) * t + d] = gd;
                }
            }
        }
        Ok(Self {
            gradient: Some(FieldGradient { radial, tangential }),
            ..self.clone()
        })
    }

    /// Field restricted to radial nodes `range`.
    pub fn restricted(&self, lo: usize, hi: usize) -> Result<Self> {
        let radii = &self.radial.radii()[lo..hi];
        let radial = RadialGrid::log_spaced(radii[0], radii[radii.len() - 1], radii.len())?;
        let nq = self.nodes();
        let t = self.tangent_dim();
        Ok(Self {
            dimension: self.dimension,
            side: self.side,
            radial,
            angular: self.angular.clone(),
            values: self.values[lo * nq..hi * nq].to_vec(),
            gradient: self.gradient.as_ref().map(|g| FieldGradient {
                radial: g.radial[lo * nq..hi * nq].to_vec(),
                tangential: g.tangential[lo * nq * t..hi * nq * t].to_vec(),
            }),
        })
    }
}

/// `u = Σ_k φ_k ψ_k` on `radial × angular`, with gradients when requested.
pub fn synthesize_field(
    spectrum: &AngularSpectrum,
    solution: &ModalSolution,
    angular: &AngularGrid,
    with_gradient: bool,
) -> Result<FieldSample> {
    let k = solution.modes.len();
    if k > spectrum.len() {
        return Err(Error::GridMismatch(format!(
            "{k} modal profiles but only {} eigenfunctions",
            spectrum.len()
        )));
    }
    if angular.dimension() != spectrum.dimension() {
        return Err(Error::GridMismatch("angular grid dimension differs from spectrum".into()));
    }
    let table = spectrum.tabulate(angular, k);
    let nr = solution.radial.len();
    let nq = angular.len();
    let t = spectrum.dimension() - 1;
    let mut values = vec![ZERO; nr * nq];
    let mut radial = vec![ZERO; if with_gradient { nr * nq } else { 0 }];
    let mut tangential = vec![ZERO; if with_gradient { nr * nq * t } else { 0 }];
    for i in 0..nr {
        for q in 0..nq {
            let mut v = ZERO;
            let mut dr = ZERO;
            let mut g = [ZERO; 2];
            for (kk, m) in solution.modes.iter().enumerate() {
                let phi = m.values[i];
                if phi == ZERO && m.derivative[i] == ZERO {
                    continue;
                }
                let psi = table.value(q, kk);
                v += phi * psi;
                if with_gradient {
                    dr += m.derivative[i] * psi;
                    for (d, gd) in g.iter_mut().enumerate().take(t) {
                        *gd += phi * table.gradient(q, kk, d);
                    }
                }
            }
            values[i * nq + q] = v;
            if with_gradient {
                radial[i * nq + q] = dr;
                tangential[(i * nq + q) * t..(i * nq + q + 1) * t].copy_from_slice(&g[..t]);
            }
        }
    }
    let mut f = FieldSample::new(
        spectrum.dimension(),
        solution.side,
        solution.radial.clone(),
        angular.clone(),
        values,
    )?;
    if with_gradient {
        f.gradient = Some(FieldGradient { radial, tangential });
    }
    Ok(f)
}

fn require_resolution(field: &FieldSample, spectrum: &AngularSpectrum, modes: usize, extra: usize) -> Result<()> {
    let d = effective_degree(spectrum, modes);
    let need = 2 * d + extra;
    let have = match field.angular.spec() {
        crate::sphere::AngularGridSpec::Circle { nodes } => nodes,
        crate::sphere::AngularGridSpec::Sphere { polar, azimuthal } => (2 * polar).min(azimuthal),
    };
    if have <= need {
        return Err(Error::Aliasing {
            nodes: have,
            required: need,
        });
    }
    Ok(())
}

/// `φ_k(λ) = ∫ u(λθ) conj(ψ_k(θ)) dS` for the first `modes` eigenfunctions.
pub fn project_onto_modes(
    field: &FieldSample,
    spectrum: &AngularSpectrum,
    modes: usize,
) -> Result<Vec<Vec<C64>>> {
    let k = modes.min(spectrum.len());
    require_resolution(field, spectrum, k, 0)?;
    let table = spectrum.tabulate(&field.angular, k);
    Ok(project_with(field, &table, |i, q| field.value(i, q)))
}

fn project_with(
    field: &FieldSample,
    table: &ModeTable,
    f: impl Fn(usize, usize) -> C64,
) -> Vec<Vec<C64>> {
    let w = field.angular.weights();
    (0..table.modes)
        .map(|kk| {
            (0..field.radial.len())
                .map(|i| {
                    (0..field.nodes())
                        .map(|q| f(i, q) * table.value(q, kk).conj() * w[q])
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// `ζ_k(λ) = ∫ h(λθ) u(λθ) conj(ψ_k(θ)) dS`.
pub fn perturbation_samples(
    h: &PerturbationSpec,
    field: &FieldSample,
    spectrum: &AngularSpectrum,
    modes: usize,
) -> Result<Vec<Vec<C64>>> {
    let k = modes.min(spectrum.len());
    h.angular.check_dimension(field.dimension)?;
    require_resolution(field, spectrum, k, h.angular.degree())?;
    let table = spectrum.tabulate(&field.angular, k);
    let f = h.angular.values(&field.angular);
    let radii = field.radial.radii();
    Ok(project_with(field, &table, |i, q| {
        h.radial_factor(radii[i]) * f[q] * field.value(i, q)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular_spectrum::{build_potential, compute_spectrum, PotentialSpec};

    fn ab_spectrum(alpha: f64) -> AngularSpectrum {
        let pot = build_potential(2, &PotentialSpec::AharonovBohm { alpha, a0: 0.0 }).unwrap();
        compute_spectrum(&pot, 16, 16).unwrap()
    }

    #[test]
    fn exponent_examples() {
        let e = characteristic_exponents(2, 0.09).unwrap();
        assert!((e.sigma_plus - 0.3).abs() < 1e-15 && (e.sigma_minus + 0.3).abs() < 1e-15);
        let e = characteristic_exponents(3, 2.0).unwrap();
        assert_eq!((e.sigma_plus, e.sigma_minus), (1.0, -2.0));
        let e = characteristic_exponents(4, 0.0).unwrap();
        assert_eq!((e.sigma_plus, e.sigma_minus), (0.0, -2.0));
        assert!(matches!(
            characteristic_exponents(2, 0.0),
            Err(Error::IndefiniteForm { .. })
        ));
    }

    #[test]
    fn homogeneous_profile_is_exact_power() {
        let grid = RadialGrid::log_spaced(1e-6, 1.0, 400).unwrap();
        let e = characteristic_exponents(2, 0.09).unwrap();
        let m = solve_radial_mode(&e, &vec![ZERO; 400], C64::new(1.0, 0.0), &grid, Side::Interior, None)
            .unwrap();
        for (r, v) in grid.radii().iter().zip(&m.values) {
            assert!((v.re / r.powf(0.3) - 1.0).abs() < 1e-12);
        }
        let z = solve_radial_mode(&e, &vec![ZERO; 400], ZERO, &grid, Side::Interior, None).unwrap();
        assert!(z.values.iter().all(|v| *v == ZERO));
    }

    /// ζ = s^{σ+-2+ε}: both variation-of-parameters integrals are pure powers.
    #[test]
    fn power_forcing_matches_closed_form() {
        let (sp, sm, eps) = (0.3, -0.3, 0.5);
        let e = characteristic_exponents(2, 0.09).unwrap();
        let grid = RadialGrid::log_spaced(1e-6, 1.0, 400).unwrap();
        let zeta: Vec<C64> = grid.radii().iter().map(|s| C64::new(s.powf(sp - 2.0 + eps), 0.0)).collect();
        let m = solve_radial_mode(&e, &zeta, C64::new(1.0, 0.0), &grid, Side::Interior, None).unwrap();
        let d = sp - sm;
        // ∫_λ^1 s^{ε-1} ds / Δ and ∫_0^λ s^{Δ+ε-1} ds / Δ
        let p = |l: f64| (1.0 - l.powf(eps)) / (eps * d);
        let q = |l: f64| l.powf(d + eps) / ((d + eps) * d);
        let c1 = 1.0 - q(1.0);
        for (l, v) in grid.radii().iter().zip(&m.values) {
            let exact = l.powf(sp) * (c1 + p(*l)) + l.powf(sm) * q(*l);
            assert!((v.re - exact).abs() < 1e-9 * exact.abs().max(1e-300).max(l.powf(sp)));
        }
    }

    #[test]
    fn exterior_power_forcing_matches_closed_form() {
        let (sp, sm, eps) = (0.3, -0.3, 0.5);
        let e = characteristic_exponents(2, 0.09).unwrap();
        let grid = RadialGrid::log_spaced(1.0, 1e6, 400).unwrap();
        // decaying forcing ζ = s^{σ- - 2 - ε}
        let zeta: Vec<C64> = grid.radii().iter().map(|s| C64::new(s.powf(sm - 2.0 - eps), 0.0)).collect();
        let m = solve_radial_mode(&e, &zeta, C64::new(1.0, 0.0), &grid, Side::Exterior, None).unwrap();
        let d = sp - sm;
        // ∫_1^λ s^{-ε-1}/Δ and ∫_λ^∞ s^{sm-sp-ε-1}/Δ
        let p = |l: f64| (1.0 - l.powf(-eps)) / (eps * d);
        let q = |l: f64| l.powf(-d - eps) / ((d + eps) * d);
        let c2 = 1.0 - q(1.0);
        for (l, v) in grid.radii().iter().zip(&m.values) {
            let exact = l.powf(sm) * (c2 + p(*l)) + l.powf(sp) * q(*l);
            assert!((v.re - exact).abs() < 1e-9 * l.powf(sm), "{l}: {} vs {exact}", v.re);
        }
    }

    #[test]
    fn derivative_matches_finite_difference_of_profile() {
        let e = characteristic_exponents(2, 0.09).unwrap();
        let grid = RadialGrid::log_spaced(1e-4, 1.0, 300).unwrap();
        let zeta: Vec<C64> = grid.radii().iter().map(|s| C64::new(0.1 * s.powf(-1.2), 0.0)).collect();
        let m = solve_radial_mode(&e, &zeta, C64::new(1.0, 0.0), &grid, Side::Interior, None).unwrap();
        let d = derivative_uniform(&m.values, grid.step());
        for i in 10..290 {
            let fd = d[i] / grid.radii()[i];
            assert!((fd - m.derivative[i]).norm() < 1e-7 * m.derivative[i].norm());
        }
    }

    #[test]
    fn too_singular_forcing_is_rejected() {
        let e = characteristic_exponents(2, 0.09).unwrap();
        let grid = RadialGrid::log_spaced(1e-6, 1.0, 200).unwrap();
        let zeta: Vec<C64> = grid.radii().iter().map(|s| C64::new(s.powf(-2.5), 0.0)).collect();
        let r = solve_radial_mode(&e, &zeta, C64::new(1.0, 0.0), &grid, Side::Interior, None);
        assert!(matches!(r, Err(Error::ForcingTooSingular { .. })));
    }

    #[test]
    fn round_trip_and_parseval() {
        let s = ab_spectrum(0.3);
        let grid = RadialGrid::log_spaced(1e-3, 1.0, 60).unwrap();
        let bc = [(1, C64::new(1.0, 0.0)), (2, C64::new(0.3, -0.2)), (4, C64::new(-0.5, 0.1))];
        let sol = solve_modal_problem(
            &ModalProblem {
                spectrum: &s,
                perturbation: None,
                boundary: &bc,
                radial: grid,
                modes: 6,
                side: Side::Interior,
            },
            &PicardOptions::default(),
        )
        .unwrap();
        let ang = AngularGrid::resolving(2, effective_degree(&s, 6));
        let f = synthesize_field(&s, &sol, &ang, false).unwrap();
        let prof = project_onto_modes(&f, &s, 6).unwrap();
        for (k, p) in prof.iter().enumerate() {
            for (a, b) in p.iter().zip(&sol.modes[k].values) {
                assert!((a - b).norm() < 1e-10);
            }
        }
        let h = sol.height();
        for i in 0..f.radial.len() {
            let direct: f64 = (0..f.nodes()).map(|q| f.value(i, q).norm_sqr() * f.angular.weights()[q]).sum();
            assert!((direct - h[i]).abs() < 1e-10 * (1.0 + h[i]));
        }
        let coarse = AngularGrid::circle(4);
        let g = synthesize_field(&s, &sol, &coarse, false).unwrap();
        assert!(matches!(project_onto_modes(&g, &s, 6), Err(Error::Aliasing { .. })));
    }

    /// Independent oracle: for h = c r^{-2+ε} with constant angular factor
    /// the regular solution is λ^{σ+} Σ a_n λ^{nε} with
    /// a_n = -c a_{n-1} / (nε(nε + Δ)).
    #[test]
    fn picard_matches_series_solution() {
        let s = ab_spectrum(0.3);
        let grid = RadialGrid::log_spaced(1e-6, 1.0, 400).unwrap();
        let (c, eps) = (0.05, 0.5);
        let h = PerturbationSpec::new(c, eps, Side::Interior);
        let sol = solve_modal_problem(
            &ModalProblem {
                spectrum: &s,
                perturbation: Some(&h),
                boundary: &[(1, C64::new(1.0, 0.0))],
                radial: grid.clone(),
                modes: 4,
                side: Side::Interior,
            },
            &PicardOptions::default(),
        )
        .unwrap();
        let (sp, d) = (0.3, 0.6);
        let mut a = vec![1.0];
        for n in 1..40 {
            let nf = n as f64 * eps;
            let prev: f64 = a[n - 1];
            a.push(-c * prev / (nf * (nf + d)));
        }
        let series = |l: f64| -> f64 { a.iter().enumerate().map(|(n, an)| an * l.powf(n as f64 * eps)).sum() };
        let amp = 1.0 / series(1.0);
        for (l, v) in grid.radii().iter().zip(&sol.modes[0].values) {
            let exact = amp * l.powf(sp) * series(*l);
            assert!((v.re - exact).abs() < 1e-10 * exact.abs(), "{l}");
        }
        assert!(sol.modes[1..].iter().all(|m| m.values.iter().all(|v| v.norm() < 1e-14)));
        assert!(sol.contraction_ratios().iter().all(|r| *r < 0.9));
    }

    #[test]
    fn perturbation_samples_on_single_mode() {
        let s = ab_spectrum(0.3);
        let grid = RadialGrid::log_spaced(1e-3, 1.0, 40).unwrap();
        let sol = solve_modal_problem(
            &ModalProblem {
                spectrum: &s,
                perturbation: None,
                boundary: &[(1, C64::new(1.0, 0.0))],
                radial: grid.clone(),
                modes: 5,
                side: Side::Interior,
            },
            &PicardOptions::default(),
        )
        .unwrap();
        let ang = AngularGrid::resolving(2, effective_degree(&s, 5) + 2);
        let f = synthesize_field(&s, &sol, &ang, false).unwrap();
        let h = PerturbationSpec::new(0.7, 0.5, Side::Interior);
        let z = perturbation_samples(&h, &f, &s, 5).unwrap();
        for (i, r) in grid.radii().iter().enumerate() {
            let expect = 0.7 * r.powf(0.3 - 2.0 + 0.5);
            assert!((z[0][i].re - expect).abs() < 1e-12 * expect);
            assert!(z[1..].iter().all(|zk| zk[i].norm() < 1e-12 * expect));
        }
        // cos t couples ψ_1 = e^{i0t} to e^{±it}
        let hc = PerturbationSpec {
            angular: AngularFactor::Fourier {
                terms: vec![
                    FourierTerm { n: 1, re: 0.5, im: 0.0 },
                    FourierTerm { n: -1, re: 0.5, im: 0.0 },
                ],
            },
            ..h.clone()
        };
        let z = perturbation_samples(&hc, &f, &s, 5).unwrap();
        assert!(z[0][5].norm() < 1e-13);
        assert!(z[1][5].norm() > 1e-3 && z[2][5].norm() > 1e-3);
        let zero = PerturbationSpec::new(0.0, 0.5, Side::Interior);
        let z = perturbation_samples(&zero, &f, &s, 5).unwrap();
        assert!(z.iter().flatten().all(|v| *v == ZERO));
    }

    #[test]
    fn recomputed_gradient_matches_synthesis() {
        let s = ab_spectrum(0.3);
        let grid = RadialGrid::log_spaced(1e-2, 1.0, 200).unwrap();
        let sol = solve_modal_problem(
            &ModalProblem {
                spectrum: &s,
                perturbation: None,
                boundary: &[(1, C64::new(1.0, 0.0)), (3, C64::new(0.2, 0.1))],
                radial: grid,
                modes: 4,
                side: Side::Interior,
            },
            &PicardOptions::default(),
        )
        .unwrap();
        let ang = AngularGrid::circle(16);
        let f = synthesize_field(&s, &sol, &ang, true).unwrap();
        let g = f.with_recomputed_gradient().unwrap();
        for i in 5..195 {
            for q in 0..16 {
                let a = f.radial_derivative(i, q).unwrap();
                let b = g.radial_derivative(i, q).unwrap();
                assert!((a - b).norm() < 1e-8 * (1.0 + a.norm()));
                let ta = f.tangential(i, q, 0).unwrap();
                let tb = g.tangential(i, q, 0).unwrap();
                assert!((ta - tb).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn perturbation_json_accepts_real_or_pair() {
        let a: PerturbationSpec = serde_json::from_str(r#"{"c":0.05,"epsilon":0.5}"#).unwrap();
        assert_eq!(a.c, C64::new(0.05, 0.0));
        assert_eq!(a.side, Side::Interior);
        let b: PerturbationSpec =
            serde_json::from_str(r#"{"c":[0.05,0.01],"epsilon":1.0,"side":"exterior"}"#).unwrap();
        assert_eq!(b.c, C64::new(0.05, 0.01));
        assert!(PerturbationSpec::new(1.0, 0.0, Side::Interior).validate().is_err());
    }
}
