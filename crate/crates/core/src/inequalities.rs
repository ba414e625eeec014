//! Numerical checks of the quadratic-form toolkit: positivity, Hardy
//! inequalities with and without boundary terms, the diamagnetic
//! inequality and the comparison `μ1(A,a) ≥ μ1(0,a)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::angular_spectrum::{
    circulation, compute_spectrum, distance_to_integers, mu1, AngularPotential, Electric,
    PotentialKind,
};
use crate::error::{Error, Result};
use crate::frequency::densities;
use crate::modal_field::{FieldGradient, FieldSample, Side};
use crate::quadrature::{cumulative_forward, tail_below, RadialGrid};
use crate::sphere::{real_harmonics, AngularBasis, AngularGrid, FourierSeries, C64};

/// Quadrature tolerance for all margins.
pub const TOL_QUAD: f64 = 1e-8;
pub const DEFAULT_SWEEP_COUNT: usize = 50;
pub const MAX_TRIG_DEGREE: usize = 8;
/// Nodes with `|u|` at or below this are left out of the diamagnetic check.
pub const ZERO_SET_TOL: f64 = 1e-10;
const BUMP_POWER: i32 = 4;
const BALL_INNER_RATIO: f64 = 1e-6;

/// Compactly supported radial profile with at least two continuous
/// derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadialBump {
    /// `(1 - (r/ρ)²)^4` on `[0, ρ)`.
    Ball { radius: f64 },
    /// `(4(r-a)(b-r)/(b-a)²)^4` on `(a, b)`.
    Annulus { inner: f64, outer: f64 },
    /// Identically one on `[0, ρ]`; does not vanish at the outer edge.
    Flat { radius: f64 },
}

impl RadialBump {
    pub fn support(&self) -> f64 {
        match *self {
            RadialBump::Ball { radius } | RadialBump::Flat { radius } => radius,
            RadialBump::Annulus { outer, .. } => outer,
        }
    }

    /// `(b(r), b'(r))`.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        let p = BUMP_POWER;
        match *self {
            RadialBump::Ball { radius } => {
                if r >= radius {
                    return (0.0, 0.0);
                }
                let s = 1.0 - (r / radius).powi(2);
                (s.powi(p), p as f64 * s.powi(p - 1) * (-2.0 * r / (radius * radius)))
            }
            RadialBump::Annulus { inner, outer } => {
                if r <= inner || r >= outer {
                    return (0.0, 0.0);
                }
                let k = 4.0 / (outer - inner).powi(2);
                let s = k * (r - inner) * (outer - r);
                let ds = k * (inner + outer - 2.0 * r);
                (s.powi(p), p as f64 * s.powi(p - 1) * ds)
            }
            RadialBump::Flat { radius } => {
                if r > radius {
                    (0.0, 0.0)
                } else {
                    (1.0, 0.0)
                }
            }
        }
    }

    /// Log-spaced grid covering the support.
    pub fn grid(&self, points: usize) -> Result<RadialGrid> {
        match *self {
            RadialBump::Ball { radius } | RadialBump::Flat { radius } => {
                RadialGrid::log_spaced(radius * BALL_INNER_RATIO, radius, points)
            }
            RadialBump::Annulus { inner, outer } => RadialGrid::log_spaced(inner, outer, points),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match *self {
            RadialBump::Ball { radius } => RadialBump::Ball { radius: radius * s },
            RadialBump::Flat { radius } => RadialBump::Flat { radius: radius * s },
            RadialBump::Annulus { inner, outer } => RadialBump::Annulus {
                inner: inner * s,
                outer: outer * s,
            },
        }
    }
}

/// Closed-form test function `b(r) P(θ)`, `P` a finite combination of basis
/// elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub bump: RadialBump,
    pub basis: AngularBasis,
    pub coeffs: Vec<C64>,
}

impl Recipe {
    /// `u` at polar coordinates `(r, angles)`.
    pub fn eval(&self, r: f64, angles: [f64; 2]) -> C64 {
        let (b, _) = self.bump.eval(r);
        if b == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let p: C64 = match self.basis {
            AngularBasis::Fourier { degree } => {
                let norm = 1.0 / (2.0 * PI).sqrt();
                self.coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * C64::from_polar(norm, (i as f64 - degree as f64) * angles[0]))
                    .sum()
            }
            AngularBasis::Harmonics { degree } => {
                let y = real_harmonics(degree, angles[0], angles[1]);
                self.coeffs.iter().zip(&y.values).map(|(c, v)| c * v).sum()
            }
        };
        p * b
    }
}

/// A field with gradients that vanishes for `r ≥ support`.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub field: FieldSample,
    pub support: f64,
    pub provenance: String,
    pub recipe: Option<Recipe>,
}

impl TestFunction {
    pub fn from_recipe(recipe: Recipe, angular: &AngularGrid, points: usize) -> Result<Self> {
        let dim = recipe.basis.dimension();
        if angular.dimension() != dim {
            return Err(Error::GridMismatch("angular grid and basis dimensions differ".into()));
        }
        if recipe.coeffs.len() != recipe.basis.len() {
            return Err(Error::InvalidInput(format!(
                "{} coefficients for a basis of size {}",
                recipe.coeffs.len(),
                recipe.basis.len()
            )));
        }
        let radial = recipe.bump.grid(points)?;
        let table = recipe.basis.tabulate(angular);
        let nq = angular.len();
        let t = dim - 1;
        let ang: Vec<(C64, Vec<C64>)> = (0..nq).map(|q| table.combine(q, &recipe.coeffs)).collect();
        let nr = radial.len();
        let mut values = Vec::with_capacity(nr * nq);
        let mut rad = Vec::with_capacity(nr * nq);
        let mut tang = Vec::with_capacity(nr * nq * t);
        for &r in radial.radii() {
            let (b, db) = recipe.bump.eval(r);
            for (p, g) in &ang {
                values.push(p * b);
                rad.push(p * db);
                tang.extend(g.iter().map(|x| x * b));
            }
        }
        let mut field = FieldSample::new(dim, Side::Interior, radial, angular.clone(), values)?;
        field.gradient = Some(FieldGradient {
            radial: rad,
            tangential: tang,
        });
        let provenance = match recipe.bump {
            RadialBump::Ball { radius } => format!("angular polynomial x ball bump, radius {radius}"),
            RadialBump::Annulus { inner, outer } => {
                format!("angular polynomial x annulus bump [{inner}, {outer}]")
            }
            RadialBump::Flat { radius } => format!("angular polynomial on the ball of radius {radius}"),
        };
        Ok(Self {
            support: recipe.bump.support(),
            field,
            provenance,
            recipe: Some(recipe),
        })
    }

    /// Wraps an explicit field; it must already vanish beyond `support`.
    pub fn from_field(field: FieldSample, support: f64, provenance: impl Into<String>) -> Result<Self> {
        if field.gradient.is_none() {
            return Err(Error::MissingGradient);
        }
        let tf = Self {
            field,
            support,
            provenance: provenance.into(),
            recipe: None,
        };
        tf.check_support()?;
        Ok(tf)
    }

    /// Random `P` of degree at most [`MAX_TRIG_DEGREE`] with coefficients
    /// uniform in the unit disk, times `bump`.
    pub fn random<R: Rng>(
        rng: &mut R,
        dimension: usize,
        bump: RadialBump,
        angular: &AngularGrid,
        points: usize,
    ) -> Result<Self> {
        let degree = rng.gen_range(0..=MAX_TRIG_DEGREE);
        let basis = match dimension {
            2 => AngularBasis::Fourier { degree },
            3 => AngularBasis::Harmonics { degree },
            n => return Err(Error::Unsupported(format!("test functions in dimension {n}"))),
        };
        let coeffs = (0..basis.len())
            .map(|_| {
                let rho = rng.gen::<f64>().sqrt();
                C64::from_polar(rho, 2.0 * PI * rng.gen::<f64>())
            })
            .collect();
        let mut tf = Self::from_recipe(Recipe { bump, basis, coeffs }, angular, points)?;
        tf.provenance = format!("random degree-{degree} {}", tf.provenance);
        Ok(tf)
    }

    pub fn check_support(&self) -> Result<()> {
        for (i, &r) in self.field.radial.radii().iter().enumerate() {
            if r > self.support * (1.0 + 1e-12)
                && (0..self.field.nodes()).any(|q| self.field.value(i, q).norm() > 0.0)
            {
                return Err(Error::SupportViolation(self.support));
            }
        }
        Ok(())
    }

    /// Largest gap between stored gradients and gradients recomputed from
    /// values, relative to the largest stored gradient component.
    pub fn gradient_defect(&self) -> Result<f64> {
        let re = self.field.with_recomputed_gradient()?;
        let a = self.field.gradient.as_ref().ok_or(Error::MissingGradient)?;
        let b = re.gradient.as_ref().ok_or(Error::MissingGradient)?;
        let scale = a.radial.iter().chain(&a.tangential).fold(0.0f64, |m, v| m.max(v.norm()));
        let d = a
            .radial
            .iter()
            .zip(&b.radial)
            .chain(a.tangential.iter().zip(&b.tangential))
            .fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
        Ok(if scale > 0.0 { d / scale } else { d })
    }
}

/// Ball integrals of a test function up to radial node `upto`.
struct BallIntegrals {
    /// `∫ |∇u + iAu/|x||² - a|u|²/|x|²`.
    form: f64,
    /// `∫ |u|²/|x|²`.
    hardy: f64,
    /// `∫_{∂B_r} |u|²`.
    boundary: f64,
    r: f64,
}

fn ball_integral(field: &FieldSample, x: &[f64], upto: usize) -> Result<f64> {
    let n = field.dimension as i32;
    let h = field.radial.step();
    let g: Vec<C64> = field
        .radial
        .radii()
        .iter()
        .zip(x)
        .map(|(r, v)| C64::new(r.powi(n) * v, 0.0))
        .collect();
    // a support away from the pole leaves only roundoff at the first node
    let top = g.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let tail = if g[0].norm() > 1e-14 * top {
        tail_below(&g, h, None)?
    } else {
        C64::new(0.0, 0.0)
    };
    Ok((cumulative_forward(&g, h)[upto] + tail).re)
}

fn ball_integrals(pot: &AngularPotential, tf: &TestFunction, r: f64) -> Result<BallIntegrals> {
    let field = &tf.field;
    let r = r.min(field.radial.last());
    let i = field.radial.nearest_index(r)?;
    let d = densities(field, pot, None)?;
    let radii = field.radial.radii();
    let e: Vec<f64> = (0..radii.len()).map(|k| d.kinetic[k] - d.potential[k]).collect();
    let hardy: Vec<f64> = radii.iter().zip(&d.height).map(|(r, h)| h / (r * r)).collect();
    let ri = radii[i];
    Ok(BallIntegrals {
        form: ball_integral(field, &e, i)?,
        hardy: ball_integral(field, &hardy, i)?,
        boundary: ri.powi(field.dimension as i32 - 1) * d.height[i],
        r: ri,
    })
}

/// `Q_{A,a}(u)` over `B_r` in polar form.
pub fn quadratic_form(pot: &AngularPotential, tf: &TestFunction, r: f64) -> Result<f64> {
    if tf.support > r * (1.0 + 1e-12) {
        return Err(Error::SupportViolation(tf.support));
    }
    tf.check_support()?;
    Ok(ball_integrals(pot, tf, r)?.form)
}

/// `∫_{B_r} |u|²/|x|²`.
pub fn hardy_integral(tf: &TestFunction, r: f64) -> Result<f64> {
    Ok(ball_integrals(&AngularPotential::zero(tf.field.dimension), tf, r)?.hardy)
}

/// `λ1 = μ1 + ((N-2)/2)²`.
pub fn lambda1_from_mu1(dimension: usize, mu1: f64) -> f64 {
    let h = (dimension as f64 - 2.0) / 2.0;
    mu1 + h * h
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Positivity {
    pub positive: bool,
    pub margin: f64,
}

/// Strict positivity `μ1 > -((N-2)/2)²`.
pub fn positivity_check(dimension: usize, mu1: f64) -> Positivity {
    let margin = lambda1_from_mu1(dimension, mu1);
    Positivity {
        positive: margin > 0.0,
        margin,
    }
}

/// `Q(u) + (N-2)/(2r) ∫_{∂B_r}|u|² - λ1 ∫_{B_r}|u|²/|x|²` for `u` on `B_r`.
pub fn hardy_boundary_margin(
    pot: &AngularPotential,
    mu1: f64,
    tf: &TestFunction,
    r: f64,
) -> Result<f64> {
    let n = tf.field.dimension as f64;
    let b = ball_integrals(pot, tf, r)?;
    Ok(b.form + (n - 2.0) / (2.0 * b.r) * b.boundary - lambda1_from_mu1(tf.field.dimension, mu1) * b.hardy)
}

/// `min (|∇u + iAu/|x||² - |∇|u||²)` over nodes with `|u| > ZERO_SET_TOL`,
/// with `∇|u| = Re(ū ∇u)/|u|`. `None` if every node is excluded.
pub fn diamagnetic_margin(pot: &AngularPotential, tf: &TestFunction) -> Result<Option<f64>> {
    let field = &tf.field;
    let grad = field.gradient.as_ref().ok_or(Error::MissingGradient)?;
    let samples = pot.sample(&field.angular);
    let nq = field.nodes();
    let t = field.tangent_dim();
    let mut best: Option<f64> = None;
    for (i, &r) in field.radial.radii().iter().enumerate() {
        for q in 0..nq {
            let k = i * nq + q;
            let u = field.values[k];
            let m = u.norm();
            if m <= ZERO_SET_TOL {
                continue;
            }
            let mut comps = Vec::with_capacity(t + 1);
            comps.push(grad.radial[k]);
            for d in 0..t {
                let mut g = grad.tangential[k * t + d];
                if d == 0 && field.dimension == 2 {
                    g += C64::new(0.0, samples.alpha[q]) * u;
                }
                comps.push(g / r);
            }
            let magnetic: f64 = comps.iter().map(|g| g.norm_sqr()).sum();
            let modulus: f64 = comps.iter().map(|g| ((u.conj() * g).re / m).powi(2)).sum();
            let v = magnetic - modulus;
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    Ok(best)
}

/// `μ1(A,a) - μ1(0,a)` from two eigendecompositions.
pub fn mu1_comparison(pot: &AngularPotential, truncation: usize) -> Result<f64> {
    let with = compute_spectrum(pot, truncation, 1)?;
    let without = compute_spectrum(&pot.without_magnetic(), truncation, 1)?;
    Ok(mu1(&with) - mu1(&without))
}

/// Same magnetic part, electric part removed.
pub fn without_electric(pot: &AngularPotential) -> AngularPotential {
    let electric = match &pot.electric {
        Electric::Circle(_) => Electric::Circle(FourierSeries::zero()),
        Electric::Sphere(c) => Electric::Sphere(vec![0.0; c.len()]),
        Electric::Constant(_) => Electric::Constant(0.0),
    };
    AngularPotential {
        kind: PotentialKind::Fourier,
        electric,
        ..pot.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hardy2d {
    pub circulation: f64,
    /// `μ1(A, 0)` from the eigensolver.
    pub mu1: f64,
    /// `(min_k |k - Φ_A|)²`.
    pub closed_form: f64,
    /// Integer circulation: the constant vanishes.
    pub degenerate: bool,
}

impl Hardy2d {
    pub fn difference(&self) -> f64 {
        (self.mu1 - self.closed_form).abs()
    }
}

pub fn hardy_2d_constant_check(pot: &AngularPotential, truncation: usize) -> Result<Hardy2d> {
    if pot.dimension != 2 {
        return Err(Error::Unsupported(format!(
            "the magnetic Hardy constant check needs dimension 2, got {}",
            pot.dimension
        )));
    }
    let phi = circulation(pot)?;
    let d = distance_to_integers(phi);
    let s = compute_spectrum(&without_electric(pot), truncation, 1)?;
    Ok(Hardy2d {
        circulation: phi,
        mu1: mu1(&s),
        closed_form: d * d,
        degenerate: d < 1e-12,
    })
}

/// `Q_{A,0}(u) - (min_k|k - Φ_A|)² ∫|u|²/|x|²`.
pub fn hardy_2d_margin(pot: &AngularPotential, tf: &TestFunction) -> Result<f64> {
    let d = distance_to_integers(circulation(pot)?);
    let b = ball_integrals(&without_electric(pot), tf, tf.support)?;
    Ok(b.form - d * d * b.hardy)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Nothing to assert (e.g. integer circulation).
    Degenerate,
}

/// One line of a verification report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub count: usize,
    pub min_margin: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
}

impl CheckReport {
    pub fn from_margins(name: &str, margins: &[f64], tolerance: f64) -> Self {
        let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
        let status = if margins.iter().all(|m| *m >= -tolerance) {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Self {
            name: name.into(),
            count: margins.len(),
            min_margin,
            tolerance,
            status,
        }
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    HardyBoundary,
    Diamagnetic,
    Hardy2d,
}

impl SweepKind {
    pub fn name(&self) -> &'static str {
        match self {
            SweepKind::HardyBoundary => "hardy",
            SweepKind::Diamagnetic => "diamagnetic",
            SweepKind::Hardy2d => "hardy2d",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SweepOptions {
    pub count: usize,
    pub seed: u64,
    pub points: usize,
    pub tolerance: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            count: DEFAULT_SWEEP_COUNT,
            seed: 42,
            points: 400,
            tolerance: TOL_QUAD,
        }
    }
}

/// Random bump for sweep number `k`: annuli in two dimensions (so that
/// `|u|²/|x|²` is integrable), balls and annuli alternating in three.
fn random_bump<R: Rng>(rng: &mut R, dimension: usize, k: usize) -> RadialBump {
    let inner = 10f64.powf(rng.gen_range(-3.0..-1.0));
    if dimension == 2 || k % 2 == 1 {
        RadialBump::Annulus { inner, outer: 1.0 }
    } else {
        RadialBump::Ball { radius: 1.0 }
    }
}

/// Angular grid resolving `|P|² a` for every random test function.
pub fn sweep_grid(pot: &AngularPotential) -> AngularGrid {
    AngularGrid::resolving(pot.dimension, MAX_TRIG_DEGREE + pot.electric_degree().div_ceil(2) + 1)
}

/// Margins of one inequality over `opts.count` random test functions.
pub fn sweep(
    pot: &AngularPotential,
    mu1: f64,
    kind: SweepKind,
    opts: &SweepOptions,
) -> Result<CheckReport> {
    if kind == SweepKind::Hardy2d {
        if pot.dimension != 2 {
            return Err(Error::Unsupported("the 2-D Hardy sweep needs dimension 2".into()));
        }
        if distance_to_integers(circulation(pot)?) < 1e-12 {
            return Ok(CheckReport {
                name: kind.name().into(),
                count: 0,
                min_margin: 0.0,
                tolerance: opts.tolerance,
                status: CheckStatus::Degenerate,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let grid = sweep_grid(pot);
    let mut margins = Vec::with_capacity(opts.count);
    for k in 0..opts.count {
        let bump = random_bump(&mut rng, pot.dimension, k);
        let tf = TestFunction::random(&mut rng, pot.dimension, bump, &grid, opts.points)?;
        let m = match kind {
            SweepKind::HardyBoundary => {
                // cut inside the support so the boundary term is exercised
                let r = 0.7 * tf.support;
                hardy_boundary_margin(pot, mu1, &tf, r)?
            }
            SweepKind::Diamagnetic => match diamagnetic_margin(pot, &tf)? {
                Some(m) => m,
                None => continue,
            },
            SweepKind::Hardy2d => hardy_2d_margin(pot, &tf)?,
        };
        margins.push(m);
    }
    Ok(CheckReport::from_margins(kind.name(), &margins, opts.tolerance))
}
