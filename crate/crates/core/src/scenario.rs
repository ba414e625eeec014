//! Scenario files, the end-to-end pipeline and machine-readable reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::angular_spectrum::{
    build_potential, circulation, compute_spectrum, default_truncation, distance_to_integers, mu1,
    AngularPotential, AngularSpectrum, PotentialSpec, SpectrumSummary,
};
use crate::asymptotics::{
    blowup_profile, classify_regularity, extract_coefficients, field_distance,
    gradient_blowup_profile, kelvin_perturbation, kelvin_transform, match_block, side_exponent,
    AsymptoticProfile, BlowupReport, ProfileJson, Regularity, BLOCK_MATCH_TOL,
};
use crate::error::{Error, Result};
use crate::frequency::{
    check_height_derivative, frequency_trace, height_scaling_limit, pohozaev_annular_residuals,
    pohozaev_terms,
    FrequencyOptions, FrequencyTrace, HeightScaling,
};
use crate::inequalities::{
    hardy_2d_constant_check, mu1_comparison, positivity_check, sweep, CheckReport, CheckStatus,
    SweepKind, SweepOptions, DEFAULT_SWEEP_COUNT,
};
use crate::modal_field::{
    effective_degree, solve_modal_problem, synthesize_field, AngularFactor, FieldSample,
    ModalProblem, ModalSolution, PerturbationSpec, PicardOptions, Side,
};
use crate::quadrature::RadialGrid;
use crate::sphere::{AngularGrid, C64};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_EIGEN_COUNT: usize = 8;
pub const DEFAULT_POINTS: usize = 400;
pub const DEFAULT_R_MIN_RATIO: f64 = 1e-6;

/// Tolerances of the asserted checks before `--tol-scale`.
pub mod tolerances {
    pub const FREQUENCY_GAMMA: f64 = 1e-5;
    pub const FREQUENCY_CONSTANCY: f64 = 1e-10;
    pub const RELATIVE_RATE: f64 = 0.1;
    pub const HEIGHT_DERIVATIVE: f64 = 1e-6;
    pub const POHOZAEV: f64 = 1e-6;
    pub const POHOZAEV_NOISE: f64 = 1e-2;
    pub const NOISE_LEVEL: f64 = 0.01;
    pub const HEIGHT_SLOPE: f64 = 1e-3;
    pub const HEIGHT_DRIFT: f64 = 1e-2;
    pub const BETA_R_INDEPENDENCE: f64 = 1e-8;
    pub const BETA_UNIT: f64 = 1e-10;
    pub const BLOWUP_EXACT: f64 = 1e-10;
    pub const KELVIN_CONJUGACY: f64 = 1e-8;
    pub const KELVIN_INVOLUTION: f64 = 1e-12;
    pub const HARDY_2D_CONSTANT: f64 = 1e-9;
    pub const MU1_COMPARISON: f64 = 1e-10;
}

/// Number of matched radii in the Kelvin conjugacy check.
pub const KELVIN_RADII: usize = 20;

fn default_radius() -> f64 {
    1.0
}

fn default_points() -> usize {
    DEFAULT_POINTS
}

fn default_ratio() -> f64 {
    DEFAULT_R_MIN_RATIO
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_true() -> bool {
    true
}

fn default_sweep() -> usize {
    DEFAULT_SWEEP_COUNT
}

fn default_modes() -> Vec<ModeValue> {
    vec![ModeValue {
        index: 1,
        value: C64::new(1.0, 0.0),
    }]
}

/// Value of one mode at the boundary radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeValue {
    /// 1-based eigenvalue index.
    pub index: usize,
    #[serde(with = "complex_or_real")]
    pub value: C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_modes")]
    pub modes: Vec<ModeValue>,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self {
            radius: default_radius(),
            modes: default_modes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_points")]
    pub points: usize,
    /// `r_min / R` inside, `R / r_max` outside.
    #[serde(default = "default_ratio")]
    pub r_min_ratio: f64,
    /// Circle nodes (N = 2) or polar nodes (N = 3, with `2p - 2`
    /// azimuthal nodes); chosen from the data when absent.
    #[serde(default)]
    pub angular_nodes: Option<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: DEFAULT_POINTS,
            r_min_ratio: DEFAULT_R_MIN_RATIO,
            angular_nodes: None,
        }
    }
}

/// Perturbation as written in a scenario; the side defaults to the
/// scenario's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationInput {
    #[serde(with = "complex_or_real")]
    pub c: C64,
    pub epsilon: f64,
    #[serde(default)]
    pub angular: AngularFactor,
    #[serde(default)]
    pub side: Option<Side>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    /// Solve the problem and run frequency/asymptotic/identity checks.
    #[serde(default = "default_true")]
    pub solve: bool,
    #[serde(default = "default_true")]
    pub kelvin: bool,
    #[serde(default = "default_true")]
    pub inequalities: bool,
    #[serde(default = "default_sweep")]
    pub sweep_count: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            solve: true,
            kelvin: true,
            inequalities: true,
            sweep_count: DEFAULT_SWEEP_COUNT,
        }
    }
}

/// Output file names, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "OutputSpec::report_name")]
    pub report: String,
    #[serde(default = "OutputSpec::trace_name")]
    pub trace: String,
    #[serde(default = "OutputSpec::profile_name")]
    pub profile: String,
    #[serde(default = "OutputSpec::spectrum_name")]
    pub spectrum: String,
}

impl OutputSpec {
    fn report_name() -> String {
        "report.json".into()
    }
    fn trace_name() -> String {
        "trace.csv".into()
    }
    fn profile_name() -> String {
        "profile.json".into()
    }
    fn spectrum_name() -> String {
        "spectrum.json".into()
    }
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            report: Self::report_name(),
            trace: Self::trace_name(),
            profile: Self::profile_name(),
            spectrum: Self::spectrum_name(),
        }
    }
}

/// A complete run description. Optional fields are filled by
/// [`Scenario::normalized`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub dimension: usize,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub side: Option<Side>,
    #[serde(default)]
    pub perturbation: Option<PerturbationInput>,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub eigen_count: Option<usize>,
    #[serde(default)]
    pub truncation: Option<usize>,
    /// Radii stored in the trace; every grid node when absent.
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub outputs: OutputSpec,
}

mod complex_or_real {
    use crate::sphere::C64;
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

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite, got {v}")))
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.normalized()
    }

    pub fn side(&self) -> Side {
        self.side.unwrap_or(Side::Interior)
    }

    /// Validated copy with every default filled in.
    pub fn normalized(&self) -> Result<Self> {
        let mut sc = self.clone();
        if !(2..=3).contains(&sc.dimension) {
            return Err(invalid(format!("dimension must be 2 or 3, got {}", sc.dimension)));
        }
        build_potential(sc.dimension, &sc.potential)
            .map_err(|e| invalid(format!("potential: {e}")))?;
        let side = sc.side();
        sc.side = Some(side);
        let truncation = sc.truncation.unwrap_or_else(|| default_truncation(sc.dimension));
        if truncation == 0 {
            return Err(invalid("truncation must be positive"));
        }
        sc.truncation = Some(truncation);
        let basis_len = match sc.dimension {
            2 => 2 * truncation + 1,
            _ => (truncation + 1) * (truncation + 1),
        };
        let k = sc.eigen_count.unwrap_or(DEFAULT_EIGEN_COUNT);
        if k == 0 || k > basis_len {
            return Err(invalid(format!(
                "eigen_count must lie in 1..={basis_len} for truncation {truncation}, got {k}"
            )));
        }
        sc.eigen_count = Some(k);
        if let Some(p) = &mut sc.perturbation {
            match p.side {
                Some(s) if s != side => {
                    return Err(invalid("perturbation.side differs from the scenario side"))
                }
                _ => p.side = Some(side),
            }
            finite("perturbation.c", p.c.re)?;
            finite("perturbation.c", p.c.im)?;
            if !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
                return Err(invalid(format!(
                    "perturbation.epsilon must be > 0 so that h = O(|x|^(-2+eps)) near the pole, got {}",
                    p.epsilon
                )));
            }
            p.angular
                .check_dimension(sc.dimension)
                .map_err(|e| invalid(format!("perturbation.angular: {e}")))?;
        }
        let b = &sc.boundary;
        finite("boundary.radius", b.radius)?;
        if b.radius <= 0.0 {
            return Err(invalid(format!("boundary.radius must be > 0, got {}", b.radius)));
        }
        if b.modes.is_empty() || b.modes.iter().all(|m| m.value.norm() == 0.0) {
            return Err(invalid("boundary.modes must contain a nonzero value"));
        }
        for m in &b.modes {
            if m.index == 0 || m.index > k {
                return Err(invalid(format!(
                    "boundary mode index {} must lie in 1..={k} (eigen_count)",
                    m.index
                )));
            }
            finite("boundary mode value", m.value.re)?;
            finite("boundary mode value", m.value.im)?;
        }
        let g = &sc.grid;
        if g.points < 11 {
            return Err(invalid(format!("grid.points must be at least 11, got {}", g.points)));
        }
        if !(g.r_min_ratio > 0.0 && g.r_min_ratio < 1.0) {
            return Err(invalid(format!("grid.r_min_ratio must lie in (0, 1), got {}", g.r_min_ratio)));
        }
        if let Some(n) = g.angular_nodes {
            if n < 3 {
                return Err(invalid("grid.angular_nodes must be at least 3"));
            }
        }
        let radial = sc.radial_grid()?;
        if let Some(rs) = &sc.radii {
            for &r in rs {
                finite("radii", r)?;
                if r < radial.first() * (1.0 - 1e-12) || r > radial.last() * (1.0 + 1e-12) {
                    return Err(invalid(format!(
                        "trace radius {r} outside the grid [{}, {}]",
                        radial.first(),
                        radial.last()
                    )));
                }
            }
        }
        if sc.verify.sweep_count == 0 && sc.verify.inequalities {
            return Err(invalid("verify.sweep_count must be positive"));
        }
        Ok(sc)
    }

    pub fn radial_grid(&self) -> Result<RadialGrid> {
        let r = self.boundary.radius;
        let q = self.grid.r_min_ratio;
        match self.side() {
            Side::Interior => RadialGrid::log_spaced(r * q, r, self.grid.points),
            Side::Exterior => RadialGrid::log_spaced(r, r / q, self.grid.points),
        }
    }

    pub fn perturbation_spec(&self) -> Option<PerturbationSpec> {
        self.perturbation.as_ref().filter(|p| p.c.norm() > 0.0).map(|p| PerturbationSpec {
            c: p.c,
            epsilon: p.epsilon,
            angular: p.angular.clone(),
            side: p.side.unwrap_or(self.side()),
        })
    }

    /// SHA-256 of the normalized scenario's canonical JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

/// One asserted quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value < tolerance`.
    pub fn below(value: f64, tolerance: f64) -> Self {
        Self {
            value,
            tolerance,
            pass: value < tolerance,
        }
    }

    /// Passes when `value > tolerance`.
    pub fn above(value: f64, tolerance: f64) -> Self {
        Self {
            value,
            tolerance,
            pass: value > tolerance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pass,
    Fail,
    Error,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub contraction_ratios: Vec<f64>,
    /// Modes whose profile is not negligible, with their exponents.
    pub active_modes: Vec<usize>,
    pub leading_exponent: f64,
    pub next_exponent: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub side: Side,
    pub gamma_hat: f64,
    pub gamma_uncertainty: f64,
    pub eps_hat: Option<f64>,
    /// Spectral exponent of the matched block.
    pub gamma: f64,
    pub k0: usize,
    pub block: [usize; 2],
    pub max_deviation: f64,
    pub expected_rate: Option<f64>,
    pub monotone_c2: Option<f64>,
    pub height_scaling: HeightScaling,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KelvinReport {
    pub conjugacy_residual: f64,
    pub involution_defect: f64,
    pub radii: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub scenario_hash: String,
    pub scenario: Option<Scenario>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub spectrum: Option<SpectrumSummary>,
    pub solve: Option<SolveReport>,
    pub frequency: Option<FrequencyReport>,
    pub profile: Option<ProfileJson>,
    pub profile_half_radius: Option<ProfileJson>,
    pub blowup: Option<BlowupReport>,
    pub gradient_blowup: Option<BlowupReport>,
    pub regularity: Option<Regularity>,
    pub kelvin: Option<KelvinReport>,
    pub checks: BTreeMap<String, Check>,
    pub inequalities: Vec<CheckReport>,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    fn new(sc: Option<&Scenario>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            scenario_hash: sc.map(|s| s.hash()).unwrap_or_default(),
            scenario: sc.cloned(),
            status: RunStatus::Pass,
            error: None,
            spectrum: None,
            solve: None,
            frequency: None,
            profile: None,
            profile_half_radius: None,
            blowup: None,
            gradient_blowup: None,
            regularity: None,
            kelvin: None,
            checks: BTreeMap::new(),
            inequalities: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    fn finish(&mut self, started: Instant, result: Result<()>) {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        self.status = match result {
            Err(e) => {
                self.error = Some(e.to_string());
                RunStatus::Error
            }
            Ok(()) if self.all_passed() => RunStatus::Pass,
            Ok(()) => RunStatus::Fail,
        };
    }

    pub fn all_passed(&self) -> bool {
        self.checks.values().all(|c| c.pass) && self.inequalities.iter().all(|c| c.passed())
    }

    pub fn failed_checks(&self) -> Vec<String> {
        let mut out: Vec<String> =
            self.checks.iter().filter(|(_, c)| !c.pass).map(|(k, _)| k.clone()).collect();
        out.extend(self.inequalities.iter().filter(|c| !c.passed()).map(|c| c.name.clone()));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with the wall-clock field removed, for reproducibility checks.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("wall_clock_seconds");
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

/// Knobs that come from the command line rather than the scenario.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub tol_scale: f64,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            tol_scale: 1.0,
            seed: None,
            out_dir: None,
        }
    }
}

impl RunOptions {
    fn tol(&self, t: f64) -> f64 {
        t * self.tol_scale
    }
}

/// Intermediate results of the pipeline, computed on demand.
pub struct Pipeline {
    pub scenario: Scenario,
    pub potential: AngularPotential,
    pub spectrum: AngularSpectrum,
    pub perturbation: Option<PerturbationSpec>,
    pub solution: Option<ModalSolution>,
    pub field: Option<FieldSample>,
    pub trace: Option<FrequencyTrace>,
}

impl Pipeline {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let scenario = scenario.normalized()?;
        let potential = build_potential(scenario.dimension, &scenario.potential)?;
        let spectrum = compute_spectrum(
            &potential,
            scenario.truncation.expect("normalized"),
            scenario.eigen_count.expect("normalized"),
        )?;
        let perturbation = scenario.perturbation_spec();
        Ok(Self {
            scenario,
            potential,
            spectrum,
            perturbation,
            solution: None,
            field: None,
            trace: None,
        })
    }

    pub fn side(&self) -> Side {
        self.scenario.side()
    }

    fn frequency_options(&self) -> FrequencyOptions {
        if self.perturbation.is_some() {
            return FrequencyOptions::for_perturbation(self.perturbation.as_ref());
        }
        let (lead, next) = self.leading_exponents().unwrap_or((0.0, None));
        FrequencyOptions {
            tail_correction: next.map(|n| 2.0 * (n - lead)),
        }
    }

    fn angular_grid(&self) -> AngularGrid {
        let dim = self.scenario.dimension;
        match self.scenario.grid.angular_nodes {
            Some(n) if dim == 2 => AngularGrid::circle(n),
            Some(p) => AngularGrid::sphere(p, 2 * p - 2),
            None => {
                let k = self.scenario.eigen_count.expect("normalized");
                let data = self
                    .potential
                    .electric_degree()
                    .max(self.perturbation.as_ref().map_or(0, |h| h.angular.degree()));
                AngularGrid::resolving(dim, effective_degree(&self.spectrum, k) + data.div_ceil(2) + 1)
            }
        }
    }

    pub fn solve(&mut self) -> Result<&FieldSample> {
        if self.field.is_none() {
            let bc: Vec<(usize, C64)> =
                self.scenario.boundary.modes.iter().map(|m| (m.index, m.value)).collect();
            let sol = solve_modal_problem(
                &ModalProblem {
                    spectrum: &self.spectrum,
                    perturbation: self.perturbation.as_ref(),
                    boundary: &bc,
                    radial: self.scenario.radial_grid()?,
                    modes: self.scenario.eigen_count.expect("normalized"),
                    side: self.side(),
                },
                &PicardOptions::default(),
            )?;
            let field = synthesize_field(&self.spectrum, &sol, &self.angular_grid(), true)?;
            self.solution = Some(sol);
            self.field = Some(field);
        }
        Ok(self.field.as_ref().expect("just solved"))
    }

    /// 1-based indices of modes whose profile is not negligible.
    pub fn active_modes(&self) -> Vec<usize> {
        let Some(sol) = &self.solution else {
            return Vec::new();
        };
        let amp: Vec<f64> = sol
            .modes
            .iter()
            .map(|m| m.values.iter().fold(0.0f64, |a, v| a.max(v.norm())))
            .collect();
        let top = amp.iter().copied().fold(0.0f64, f64::max);
        (0..amp.len()).filter(|&k| amp[k] > 1e-12 * top).map(|k| k + 1).collect()
    }

    /// Smallest exponent among active modes and the next distinct one.
    pub fn leading_exponents(&self) -> Option<(f64, Option<f64>)> {
        let mut g: Vec<f64> = self
            .active_modes()
            .iter()
            .filter_map(|&k| {
                side_exponent(self.scenario.dimension, self.spectrum.eigenvalues[k - 1], self.side()).ok()
            })
            .collect();
        g.sort_by(f64::total_cmp);
        let lead = *g.first()?;
        let next = g.into_iter().find(|v| *v > lead + 1e-8);
        Some((lead, next))
    }

    pub fn frequency(&mut self) -> Result<&FrequencyTrace> {
        if self.trace.is_none() {
            self.solve()?;
            let opts = self.frequency_options();
            let trace = frequency_trace(
                self.field.as_ref().expect("solved"),
                &self.potential,
                self.perturbation.as_ref(),
                self.scenario.radii.as_deref(),
                &opts,
            )?;
            self.trace = Some(trace);
        }
        Ok(self.trace.as_ref().expect("just computed"))
    }

    /// Coefficients at `radius` along the block matching `gamma`.
    pub fn profile_at(&mut self, gamma: f64, radius: f64) -> Result<AsymptoticProfile> {
        self.solve()?;
        let opts = self.frequency_options();
        extract_coefficients(
            self.field.as_ref().expect("solved"),
            &self.spectrum,
            gamma,
            radius,
            self.perturbation.as_ref(),
            opts.tail_correction,
        )
    }

    /// Field and perturbation on the interior side: the solution itself
    /// or, for exterior problems, its Kelvin image.
    fn interior_view(&self) -> Result<(FieldSample, Option<PerturbationSpec>)> {
        let f = self.field.as_ref().ok_or(Error::InvalidInput("solve first".into()))?;
        Ok(match self.side() {
            Side::Interior => (f.clone(), self.perturbation.clone()),
            Side::Exterior => (kelvin_transform(f), self.perturbation.as_ref().map(kelvin_perturbation)),
        })
    }

    pub fn kelvin(&mut self) -> Result<KelvinReport> {
        self.solve()?;
        let opts = self.frequency_options();
        let u = self.field.as_ref().expect("solved");
        let v = kelvin_transform(u);
        let hv = self.perturbation.as_ref().map(kelvin_perturbation);
        let involution_defect = field_distance(&kelvin_transform(&v), u)?;
        let (int, h_int, ext, h_ext) = match u.side {
            Side::Interior => (&v, hv.as_ref(), u, self.perturbation.as_ref()),
            Side::Exterior => (u, self.perturbation.as_ref(), &v, hv.as_ref()),
        };
        // `int` is the interior-side field here only after swapping roles
        let (interior, h_i, exterior, h_e) = if int.side == Side::Interior {
            (int, h_int, ext, h_ext)
        } else {
            (ext, h_ext, int, h_int)
        };
        let ti = frequency_trace(interior, &self.potential, h_i, None, &opts)?;
        let te = frequency_trace(exterior, &self.potential, h_e, None, &opts)?;
        let n = interior.radial.len();
        let shift = self.scenario.dimension as f64 - 2.0;
        // ti is ordered by decreasing radius, te by increasing radius, so
        // position j in both refers to mirrored nodes
        let mut worst = 0.0f64;
        let mut radii = Vec::with_capacity(KELVIN_RADII);
        for s in 0..KELVIN_RADII {
            let j = (s * (n - 1)) / (KELVIN_RADII - 1);
            let rv = ti.radii[j];
            let ru = te.radii[j];
            debug_assert!((rv * ru - 1.0).abs() < 1e-9);
            worst = worst.max((ti.frequency[j] - (te.frequency[j] - shift)).abs());
            radii.push(rv);
        }
        Ok(KelvinReport {
            conjugacy_residual: worst,
            involution_defect,
            radii,
        })
    }
}

/// Valid names for `verify --check`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Positivity,
    Hardy,
    Diamagnetic,
    Hardy2d,
    Mu1,
    Height,
    Pohozaev,
}

impl CheckName {
    pub const ALL: [CheckName; 7] = [
        CheckName::Positivity,
        CheckName::Hardy,
        CheckName::Diamagnetic,
        CheckName::Hardy2d,
        CheckName::Mu1,
        CheckName::Height,
        CheckName::Pohozaev,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CheckName::Positivity => "positivity",
            CheckName::Hardy => "hardy",
            CheckName::Diamagnetic => "diamagnetic",
            CheckName::Hardy2d => "hardy2d",
            CheckName::Mu1 => "mu1",
            CheckName::Height => "height",
            CheckName::Pohozaev => "pohozaev",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
    }

    pub fn parse_list(s: &str) -> Result<Vec<CheckName>> {
        let mut out: Vec<CheckName> =
            s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|c| c.as_str() == s.trim())
            .copied()
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown check '{s}'; valid names: {}",
                    CheckName::valid_names()
                ))
            })
    }
}

fn relative(value: Option<f64>, expected: f64) -> f64 {
    value.map_or(f64::INFINITY, |v| (v - expected).abs() / expected.abs())
}

fn lambda_list(field: &FieldSample) -> Vec<f64> {
    let (lo, hi) = match field.side {
        Side::Interior => (field.radial.first() * 10.0, field.radial.first() * 1000.0),
        Side::Exterior => (field.radial.last() / 1000.0, field.radial.last() / 10.0),
    };
    (0..8).map(|k| lo * (hi / lo).powf(k as f64 / 7.0)).collect()
}

fn run_solution_checks(p: &mut Pipeline, rep: &mut RunReport, opts: &RunOptions) -> Result<()> {
    use tolerances as t;
    p.solve()?;
    let sol = p.solution.as_ref().expect("solved");
    let (lead, next) = p
        .leading_exponents()
        .ok_or_else(|| Error::NumericalFailure("solution vanishes identically".into()))?;
    rep.solve = Some(SolveReport {
        iterations: sol.residuals.len(),
        final_residual: sol.residuals.last().copied().unwrap_or(0.0),
        contraction_ratios: sol.contraction_ratios(),
        active_modes: p.active_modes(),
        leading_exponent: lead,
        next_exponent: next,
    });
    let eps = p.perturbation.as_ref().map(|h| h.epsilon);
    let constant_factor = p
        .perturbation
        .as_ref()
        .is_some_and(|h| matches!(h.angular, AngularFactor::Constant));
    let gap = next.map(|n| n - lead);

    // frequency
    let trace = p.frequency()?.clone();
    let fit = &trace.fit;
    let ((j0, m), gamma) = match_block(&p.spectrum, fit.gamma_hat, p.side(), BLOCK_MATCH_TOL)?;
    rep.checks.insert(
        "frequency_gamma".into(),
        Check::below((fit.gamma_hat - lead).abs(), opts.tol(t::FREQUENCY_GAMMA)),
    );
    let expected_rate = match (eps, gap) {
        (Some(e), g) if constant_factor => Some(g.map_or(e, |g| e.min(2.0 * g))),
        (None, Some(g)) => Some(2.0 * g),
        _ => None,
    };
    if let Some(r) = expected_rate {
        rep.checks.insert(
            "frequency_rate".into(),
            Check::below(relative(fit.eps_hat, r), opts.tol(t::RELATIVE_RATE)),
        );
    }
    if eps.is_none() && gap.is_none() {
        rep.checks.insert(
            "frequency_constancy".into(),
            Check::below(trace.max_deviation(lead), opts.tol(t::FREQUENCY_CONSTANCY)),
        );
    }
    let hs = height_scaling_limit(&trace, lead)?;
    rep.checks.insert("height_slope".into(), Check::below(hs.slope_error, opts.tol(t::HEIGHT_SLOPE)));
    rep.checks.insert("height_drift".into(), Check::below(hs.drift, opts.tol(t::HEIGHT_DRIFT)));
    rep.frequency = Some(FrequencyReport {
        side: trace.side,
        gamma_hat: fit.gamma_hat,
        gamma_uncertainty: fit.gamma_uncertainty,
        eps_hat: fit.eps_hat,
        gamma,
        k0: j0,
        block: [j0, m],
        max_deviation: trace.max_deviation(lead),
        expected_rate,
        monotone_c2: trace.monotone_c2,
        height_scaling: hs,
    });

    // identities
    let fopts = p.frequency_options();
    let field = p.field.clone().expect("solved");
    let hd = check_height_derivative(&field, &p.potential, p.perturbation.as_ref(), &fopts)?;
    rep.checks.insert("height_derivative".into(), Check::below(hd, opts.tol(t::HEIGHT_DERIVATIVE)));
    let (iv, ih) = p.interior_view()?;
    let poh = max_pohozaev(&iv, &p.potential, ih.as_ref(), &fopts)?;
    rep.checks.insert("pohozaev".into(), Check::below(poh, opts.tol(t::POHOZAEV)));
    let seed = opts.seed.unwrap_or(p.scenario.seed);
    let noisy = iv.corrupted(t::NOISE_LEVEL, seed).with_recomputed_gradient()?;
    let poh_noisy = pohozaev_annular_residuals(&noisy, &p.potential, ih.as_ref())?
        .into_iter()
        .fold(0.0f64, f64::max);
    rep.checks.insert("pohozaev_noise_sensitivity".into(), Check::above(poh_noisy, t::POHOZAEV_NOISE));

    // asymptotics
    let r = p.scenario.boundary.radius;
    let r2 = match p.side() {
        Side::Interior => r / 2.0,
        Side::Exterior => r * 2.0,
    };
    let prof = p.profile_at(gamma, r)?;
    let prof2 = p.profile_at(gamma, r2)?;
    let diff = prof
        .beta
        .iter()
        .zip(&prof2.beta)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).norm()));
    rep.checks.insert("beta_r_independence".into(), Check::below(diff, opts.tol(t::BETA_R_INDEPENDENCE)));
    rep.checks.insert("beta_nontrivial".into(), Check::above(prof.beta_norm(), 0.0));
    let homogeneous_single = eps.is_none() && gap.is_none();
    let single_unit = homogeneous_single
        && p.scenario.boundary.modes.len() == 1
        && p.scenario.boundary.modes[0].value == C64::new(1.0, 0.0)
        && m == 1;
    if single_unit {
        rep.checks.insert(
            "beta_unit".into(),
            Check::below((prof.beta[0] - 1.0).norm(), opts.tol(t::BETA_UNIT)),
        );
    }
    let lams = lambda_list(&field);
    let bl = blowup_profile(&field, &p.spectrum, &prof, &lams)?;
    let gb = gradient_blowup_profile(&field, &p.spectrum, &prof, &lams)?;
    let blow_rate = match (eps, gap) {
        (Some(e), g) => Some(g.map_or(e, |g| e.min(g))),
        (None, g) => g,
    };
    match blow_rate {
        Some(rate) => {
            rep.checks.insert(
                "blowup_rate".into(),
                Check::below(relative(bl.rate, rate), opts.tol(t::RELATIVE_RATE)),
            );
            rep.checks.insert(
                "gradient_blowup_rate".into(),
                Check::below(relative(gb.rate, rate), opts.tol(t::RELATIVE_RATE)),
            );
        }
        None => {
            let worst = |b: &BlowupReport| b.distances.iter().copied().fold(0.0f64, f64::max);
            rep.checks.insert("blowup_exact".into(), Check::below(worst(&bl), opts.tol(t::BLOWUP_EXACT)));
            rep.checks.insert(
                "gradient_blowup_exact".into(),
                Check::below(worst(&gb), opts.tol(t::BLOWUP_EXACT)),
            );
        }
    }
    rep.regularity = Some(classify_regularity(match p.side() {
        Side::Interior => gamma,
        // behaviour at the pole of the Kelvin image
        Side::Exterior => gamma - (p.scenario.dimension as f64 - 2.0),
    }, p.scenario.dimension));
    rep.profile = Some(prof.to_json());
    rep.profile_half_radius = Some(prof2.to_json());
    rep.blowup = Some(bl);
    rep.gradient_blowup = Some(gb);

    if p.scenario.verify.kelvin {
        let k = p.kelvin()?;
        rep.checks.insert(
            "kelvin_conjugacy".into(),
            Check::below(k.conjugacy_residual, opts.tol(t::KELVIN_CONJUGACY)),
        );
        rep.checks.insert(
            "kelvin_involution".into(),
            Check::below(k.involution_defect, opts.tol(t::KELVIN_INVOLUTION)),
        );
        rep.kelvin = Some(k);
    }
    Ok(())
}

fn max_pohozaev(
    field: &FieldSample,
    pot: &AngularPotential,
    h: Option<&PerturbationSpec>,
    opts: &FrequencyOptions,
) -> Result<f64> {
    Ok(pohozaev_terms(field, pot, h, opts)?
        .iter()
        .fold(0.0f64, |m, t| m.max(t.residual)))
}

fn run_inequality_checks(
    p: &mut Pipeline,
    rep: &mut RunReport,
    opts: &RunOptions,
    which: &[CheckName],
) -> Result<()> {
    use tolerances as t;
    let dim = p.scenario.dimension;
    let m1 = mu1(&p.spectrum);
    let sweep_opts = SweepOptions {
        count: p.scenario.verify.sweep_count,
        seed: opts.seed.unwrap_or(p.scenario.seed),
        tolerance: opts.tol(SweepOptions::default().tolerance),
        ..Default::default()
    };
    let truncation = p.scenario.truncation.expect("normalized");
    for c in which {
        match c {
            CheckName::Positivity => {
                let pc = positivity_check(dim, m1);
                rep.checks.insert("positivity".into(), Check::above(pc.margin, 0.0));
            }
            CheckName::Hardy => rep.inequalities.push(sweep(&p.potential, m1, SweepKind::HardyBoundary, &sweep_opts)?),
            CheckName::Diamagnetic => {
                rep.inequalities.push(sweep(&p.potential, m1, SweepKind::Diamagnetic, &sweep_opts)?)
            }
            CheckName::Hardy2d if dim == 2 => {
                let h = hardy_2d_constant_check(&p.potential, truncation)?;
                if !h.degenerate {
                    rep.checks.insert(
                        "hardy2d_constant".into(),
                        Check::below(h.difference(), opts.tol(t::HARDY_2D_CONSTANT)),
                    );
                }
                rep.inequalities.push(sweep(&p.potential, m1, SweepKind::Hardy2d, &sweep_opts)?);
            }
            CheckName::Mu1 if dim == 2 => {
                let d = mu1_comparison(&p.potential, truncation)?;
                rep.checks.insert("mu1_comparison".into(), Check::above(d, -opts.tol(t::MU1_COMPARISON)));
                let phi = circulation(&p.potential)?;
                if distance_to_integers(phi) == 0.0 {
                    // zero-circulation fields are gauge-equivalent to A = 0
                    rep.checks.insert(
                        "mu1_gauge_equality".into(),
                        Check::below(d.abs(), opts.tol(t::HARDY_2D_CONSTANT)),
                    );
                }
            }
            CheckName::Hardy2d | CheckName::Mu1 => {
                rep.inequalities.push(CheckReport {
                    name: c.as_str().into(),
                    count: 0,
                    min_margin: 0.0,
                    tolerance: 0.0,
                    status: CheckStatus::Degenerate,
                });
            }
            CheckName::Height => {
                p.solve()?;
                let fopts = p.frequency_options();
                let hd = check_height_derivative(
                    p.field.as_ref().expect("solved"),
                    &p.potential,
                    p.perturbation.as_ref(),
                    &fopts,
                )?;
                rep.checks.insert("height_derivative".into(), Check::below(hd, opts.tol(t::HEIGHT_DERIVATIVE)));
            }
            CheckName::Pohozaev => {
                p.solve()?;
                let fopts = p.frequency_options();
                let (iv, ih) = p.interior_view()?;
                let poh = max_pohozaev(&iv, &p.potential, ih.as_ref(), &fopts)?;
                rep.checks.insert("pohozaev".into(), Check::below(poh, opts.tol(t::POHOZAEV)));
            }
        }
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn output_dir(sc: &Scenario, opts: &RunOptions) -> Option<PathBuf> {
    opts.out_dir.clone().or_else(|| sc.outputs.dir.as_ref().map(PathBuf::from))
}

/// Full pipeline: spectrum, modal solve, frequency, asymptotics, Kelvin
/// cross-validation and inequality sweeps. Errors are recorded in the
/// report rather than returned.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> RunReport {
    let started = Instant::now();
    let mut pipeline = match Pipeline::new(sc) {
        Ok(p) => p,
        Err(e) => {
            let mut rep = RunReport::new(None);
            rep.finish(started, Err(e));
            return rep;
        }
    };
    let mut rep = RunReport::new(Some(&pipeline.scenario));
    rep.spectrum = Some(pipeline.spectrum.summary());
    let result = (|| -> Result<()> {
        if pipeline.scenario.verify.solve {
            run_solution_checks(&mut pipeline, &mut rep, opts)?;
        }
        if pipeline.scenario.verify.inequalities {
            let which = [
                CheckName::Positivity,
                CheckName::Hardy,
                CheckName::Diamagnetic,
                CheckName::Hardy2d,
                CheckName::Mu1,
            ];
            let which: Vec<CheckName> = which
                .into_iter()
                .filter(|c| pipeline.scenario.dimension == 2 || !matches!(c, CheckName::Hardy2d | CheckName::Mu1))
                .collect();
            run_inequality_checks(&mut pipeline, &mut rep, opts, &which)?;
        }
        Ok(())
    })();
    rep.finish(started, result);
    if let Some(dir) = output_dir(&pipeline.scenario, opts) {
        if let Err(e) = write_outputs(&pipeline, &rep, &dir) {
            rep.status = RunStatus::Error;
            rep.error = Some(e.to_string());
        }
    }
    rep
}

/// Selected inequality and identity checks only.
pub fn verify_suite(sc: &Scenario, checks: &[CheckName], opts: &RunOptions) -> RunReport {
    let started = Instant::now();
    let mut pipeline = match Pipeline::new(sc) {
        Ok(p) => p,
        Err(e) => {
            let mut rep = RunReport::new(None);
            rep.finish(started, Err(e));
            return rep;
        }
    };
    let mut rep = RunReport::new(Some(&pipeline.scenario));
    rep.spectrum = Some(pipeline.spectrum.summary());
    let result = run_inequality_checks(&mut pipeline, &mut rep, opts, checks);
    rep.finish(started, result);
    if let Some(dir) = output_dir(&pipeline.scenario, opts) {
        if let Err(e) = write_file(&dir, &pipeline.scenario.outputs.report, rep.to_json().as_bytes()) {
            rep.status = RunStatus::Error;
            rep.error = Some(e.to_string());
        }
    }
    rep
}

fn write_outputs(p: &Pipeline, rep: &RunReport, dir: &Path) -> Result<()> {
    let out = &p.scenario.outputs;
    let json = |v: &dyn erased::Json| v.pretty();
    write_file(dir, &out.spectrum, json(&p.spectrum.summary()).as_bytes())?;
    if let Some(trace) = &p.trace {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).map_err(|source| Error::Io {
            path: out.trace.clone(),
            source,
        })?;
        write_file(dir, &out.trace, &buf)?;
    }
    if let Some(prof) = &rep.profile {
        write_file(dir, &out.profile, json(prof).as_bytes())?;
    }
    write_file(dir, &out.report, rep.to_json().as_bytes())
}

mod erased {
    pub trait Json {
        fn pretty(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn pretty(&self) -> String {
            serde_json::to_string_pretty(self).expect("value serializes")
        }
    }
}
