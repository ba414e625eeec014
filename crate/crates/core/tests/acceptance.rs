//! Acceptance criteria, one line each. Runs as a plain binary so the lines
//! always show up in `cargo test` output; exits non-zero if any fails.

use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use almgren_core::angular_spectrum::{build_potential, compute_spectrum, mu1, PotentialSpec};
use almgren_core::asymptotics::RegularityClass;
use almgren_core::inequalities::CheckStatus;
use almgren_core::scenario::{run_scenario, RunOptions, RunReport, RunStatus, Scenario};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// Closed forms used as oracles.
fn sigma_plus(n: usize, mu: f64) -> f64 {
    let h = (n as f64 - 2.0) / 2.0;
    -h + (h * h + mu).sqrt()
}

fn gamma_exterior(n: usize, mu: f64) -> f64 {
    let h = (n as f64 - 2.0) / 2.0;
    h + (h * h + mu).sqrt()
}

fn ab_eigenvalues(alpha: f64, a0: f64, j_max: i64, count: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (-j_max..=j_max).map(|j| (alpha - j as f64).powi(2) - a0).collect();
    v.sort_by(f64::total_cmp);
    v.truncate(count);
    v
}

fn hardy_2d(phi: f64) -> f64 {
    let d = phi - phi.round();
    d * d
}

struct Run {
    label: String,
    dim: usize,
    k0: usize,
    eps: Option<f64>,
    exterior: bool,
    report: RunReport,
}

impl Run {
    fn check(&self, name: &str) -> Option<f64> {
        self.report.checks.get(name).map(|c| c.value)
    }

    fn mu_k0(&self) -> f64 {
        self.report.spectrum.as_ref().expect("spectrum").mu[self.k0 - 1]
    }

    fn ok(&self) -> bool {
        self.report.status != RunStatus::Error
    }
}

fn potential_json(kind: &str) -> serde_json::Value {
    match kind {
        "zero" => json!({"kind": "fourier"}),
        "ab" => json!({"kind": "aharonov_bohm", "alpha": 0.3, "a0": 0.0}),
        "dipole" => json!({"kind": "dipole", "lambda": 1.0, "axis": [0.0, 0.0, 1.0]}),
        _ => unreachable!(),
    }
}

fn run(kind: &str, dim: usize, k0: usize, eps: Option<f64>, exterior: bool, inequalities: bool) -> Run {
    let mut sc = json!({
        "name": kind,
        "dimension": dim,
        "potential": potential_json(kind),
        "side": if exterior { "exterior" } else { "interior" },
        "boundary": {"radius": 1.0, "modes": [{"index": k0, "value": 1.0}]},
        "grid": {"points": 400, "r_min_ratio": 1e-6},
        "eigen_count": 8,
        "verify": {"inequalities": inequalities, "sweep_count": 50}
    });
    if let Some(e) = eps {
        sc["perturbation"] = json!({"c": 0.05, "epsilon": e});
    }
    let scenario = Scenario::from_json(&sc.to_string()).expect("valid scenario");
    let report = run_scenario(&scenario, &RunOptions::default());
    let label = format!(
        "{kind} N={dim} k0={k0}{}{}",
        eps.map(|e| format!(" eps={e}")).unwrap_or_default(),
        if exterior { " exterior" } else { "" }
    );
    if let Some(e) = &report.error {
        eprintln!("  run {label} errored: {e}");
    }
    Run {
        label,
        dim,
        k0,
        eps,
        exterior,
        report,
    }
}

fn verify_only(potential: serde_json::Value) -> RunReport {
    let sc = json!({
        "name": "verify",
        "dimension": 2,
        "potential": potential,
        "verify": {"solve": false, "kelvin": false, "inequalities": true, "sweep_count": 50}
    });
    run_scenario(&Scenario::from_json(&sc.to_string()).expect("valid scenario"), &RunOptions::default())
}

/// Worst value of `f` over the runs; `None` from `f` (missing data) fails.
fn worst<'a>(runs: impl Iterator<Item = &'a Run>, f: impl Fn(&Run) -> Option<f64>) -> (f64, Vec<String>) {
    let mut w = 0.0f64;
    let mut missing = vec![];
    for r in runs {
        match f(r).filter(|v| v.is_finite()) {
            Some(v) => w = w.max(v),
            None => missing.push(r.label.clone()),
        }
    }
    (w, missing)
}

fn bound(name: &str, (w, missing): (f64, Vec<String>), tol: f64) -> Outcome {
    outcome(
        missing.is_empty() && w < tol,
        format!(
            "{name} = {w:.3e} (< {tol:e}){}",
            if missing.is_empty() { String::new() } else { format!(" missing: {}", missing.join("; ")) }
        ),
    )
}

fn combine(parts: Vec<Outcome>) -> Outcome {
    outcome(
        parts.iter().all(|o| o.pass),
        parts.iter().map(|o| o.detail.as_str()).collect::<Vec<_>>().join(", "),
    )
}

fn c1_ab_spectrum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut err = 0.0f64;
    let mut n = 0;
    while n < 20 {
        let alpha: f64 = rng.gen_range(-1.0..1.0);
        if (alpha.abs() - 0.5).abs() < 1e-3 {
            continue;
        }
        let a0: f64 = rng.gen_range(-0.5..0.5);
        let pot = build_potential(2, &PotentialSpec::AharonovBohm { alpha, a0 }).expect("potential");
        let spec = compute_spectrum(&pot, 64, 10).expect("spectrum");
        let exact = ab_eigenvalues(alpha, a0, 64, 10);
        for (a, b) in spec.eigenvalues.iter().zip(&exact) {
            err = err.max((a - b).abs());
        }
        n += 1;
    }
    outcome(err < 1e-10, format!("20 (alpha, a0), 10 eigenvalues at J=64: max error {err:.3e} (< 1e-10)"))
}

fn c2_hardy_constant() -> Outcome {
    let mut err = 0.0f64;
    for alpha in [0.1, 0.3, 0.5, 1.2] {
        let pot = build_potential(2, &PotentialSpec::AharonovBohm { alpha, a0: 0.0 }).expect("potential");
        let spec = compute_spectrum(&pot, 64, 4).expect("spectrum");
        err = err.max((mu1(&spec) - hardy_2d(alpha)).abs());
    }
    outcome(err < 1e-9, format!("alpha in {{0.1, 0.3, 0.5, 1.2}}: max |mu1 - dist(Phi, Z)^2| {err:.3e} (< 1e-9)"))
}

fn c3_constancy(homog: &[&Run]) -> Outcome {
    bound(
        "max |N - gamma|",
        worst(homog.iter().copied(), |r| {
            let dev = r.check("frequency_constancy")?;
            let g = r.report.frequency.as_ref()?;
            // the solver's exponent must also be the closed-form one
            let lead = r.report.solve.as_ref()?.leading_exponent;
            Some(dev.max((lead - sigma_plus(r.dim, r.mu_k0())).abs()).max((g.gamma - lead).abs()))
        }),
        1e-10,
    )
}

fn c4_limit(pert: &[&Run]) -> Outcome {
    combine(vec![
        bound(
            "max |gamma_hat - sigma+|",
            worst(pert.iter().copied(), |r| {
                Some((r.report.frequency.as_ref()?.gamma_hat - sigma_plus(r.dim, r.mu_k0())).abs())
            }),
            1e-5,
        ),
        bound(
            "max |eps_hat/eps - 1|",
            worst(pert.iter().copied(), |r| {
                Some((r.report.frequency.as_ref()?.eps_hat? / r.eps? - 1.0).abs())
            }),
            0.1,
        ),
    ])
}

fn c5_beta(interior: &[&Run], homog: &[&Run]) -> Outcome {
    combine(vec![
        bound("beta(R) vs beta(R/2)", worst(interior.iter().copied(), |r| r.check("beta_r_independence")), 1e-8),
        bound(
            "|beta - 1| (homogeneous)",
            worst(homog.iter().copied(), |r| {
                let b = &r.report.profile.as_ref()?.beta;
                // k0 may sit inside a block; its own coefficient is the unit one
                let j0 = r.report.frequency.as_ref()?.block[0];
                let [re, im] = b[r.k0 - j0];
                let rest = b
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != r.k0 - j0)
                    .fold(0.0f64, |a, (_, [x, y])| a.max(x.hypot(*y)));
                Some((re - 1.0).hypot(im).max(rest))
            }),
            1e-10,
        ),
    ])
}

fn c6_blowup(pert: &[&Run]) -> Outcome {
    let rel = |rate: Option<f64>, r: &Run| Some((rate? / r.eps? - 1.0).abs());
    combine(vec![
        bound(
            "max |rate/eps - 1|",
            worst(pert.iter().copied(), |r| rel(r.report.blowup.as_ref()?.rate, r)),
            0.1,
        ),
        bound(
            "gradient",
            worst(pert.iter().copied(), |r| rel(r.report.gradient_blowup.as_ref()?.rate, r)),
            0.1,
        ),
    ])
}

fn c7_identities(all: &[&Run]) -> Outcome {
    let (noisy_min, missing) = all.iter().fold((f64::INFINITY, vec![]), |(m, mut miss), r| {
        match r.check("pohozaev_noise_sensitivity") {
            Some(v) => (m.min(v), miss),
            None => {
                miss.push(r.label.clone());
                (m, miss)
            }
        }
    });
    combine(vec![
        bound("D - rH'/2", worst(all.iter().copied(), |r| r.check("height_derivative")), 1e-6),
        bound("Pohozaev", worst(all.iter().copied(), |r| r.check("pohozaev")), 1e-6),
        outcome(
            missing.is_empty() && noisy_min > 1e-2,
            format!("min noisy Pohozaev = {noisy_min:.3e} (> 1e-2)"),
        ),
    ])
}

fn c8_height(all: &[&Run]) -> Outcome {
    combine(vec![
        bound("|slope - 2 gamma|", worst(all.iter().copied(), |r| r.check("height_slope")), 1e-3),
        bound("drift", worst(all.iter().copied(), |r| r.check("height_drift")), 1e-2),
    ])
}

fn c9_kelvin(all: &[&Run]) -> Outcome {
    let dims: std::collections::BTreeSet<usize> = all.iter().map(|r| r.dim).collect();
    combine(vec![
        bound(
            "conjugacy",
            worst(all.iter().copied(), |r| {
                let k = r.report.kelvin.as_ref()?;
                (k.radii.len() == 20).then_some(k.conjugacy_residual)
            }),
            1e-8,
        ),
        bound(
            "involution",
            worst(all.iter().copied(), |r| Some(r.report.kelvin.as_ref()?.involution_defect)),
            1e-12,
        ),
        outcome(dims.contains(&2) && dims.contains(&3), format!("N in {dims:?}")),
    ])
}

fn c10_exterior(ext: &[&Run]) -> Outcome {
    combine(vec![
        bound(
            "|gamma~_hat - gamma~|",
            worst(ext.iter().copied(), |r| {
                Some((r.report.frequency.as_ref()?.gamma_hat - gamma_exterior(r.dim, r.mu_k0())).abs())
            }),
            1e-5,
        ),
        bound("beta~(R) vs beta~(2R)", worst(ext.iter().copied(), |r| r.check("beta_r_independence")), 1e-8),
    ])
}

fn c11_inequalities(reports: &[(&str, &RunReport)], gauge: &RunReport) -> Outcome {
    let mut min_margin = f64::INFINITY;
    let mut sweeps = 0;
    let mut bad = vec![];
    for (label, rep) in reports {
        if rep.status == RunStatus::Error {
            bad.push(format!("{label}: {}", rep.error.as_deref().unwrap_or("error")));
        }
        for c in &rep.inequalities {
            if c.status == CheckStatus::Degenerate {
                continue;
            }
            sweeps += 1;
            if c.count != 50 || c.status != CheckStatus::Pass {
                bad.push(format!("{label}/{}", c.name));
            }
            min_margin = min_margin.min(c.min_margin);
        }
    }
    let mu1_min = reports
        .iter()
        .filter_map(|(_, r)| r.checks.get("mu1_comparison"))
        .map(|c| c.value)
        .fold(f64::INFINITY, f64::min);
    let eq = gauge.checks.get("mu1_gauge_equality").map(|c| c.value);
    let pass = bad.is_empty()
        && min_margin >= -1e-8
        && mu1_min >= -1e-10
        && eq.is_some_and(|v| v < 1e-9)
        && sweeps >= 7;
    outcome(
        pass,
        format!(
            "{sweeps} sweeps x 50: min margin {min_margin:.3e} (>= -1e-8), min mu1(A,a) - mu1(0,a) {mu1_min:.3e} (>= -1e-10), alpha = 0.5 cos t equality {} (< 1e-9){}",
            eq.map_or("missing".into(), |v| format!("{v:.3e}")),
            if bad.is_empty() { String::new() } else { format!(" failing: {}", bad.join("; ")) }
        ),
    )
}

fn c12_regularity(ab: &Run, all: &[&Run]) -> Outcome {
    let ab_ok = matches!(
        ab.report.regularity.as_ref().map(|r| &r.class),
        Some(RegularityClass::Holder { exponent }) if (exponent - 0.3).abs() < 1e-12
    );
    let mut lipschitz = 0;
    let mut wrong = vec![];
    for r in all.iter().filter(|r| !r.exterior) {
        let Some(reg) = &r.report.regularity else { continue };
        if sigma_plus(r.dim, r.mu_k0()) >= 1.0 - 1e-12 {
            lipschitz += 1;
            if reg.class != RegularityClass::Lipschitz {
                wrong.push(r.label.clone());
            }
        }
    }
    outcome(
        ab_ok && lipschitz > 0 && wrong.is_empty(),
        format!(
            "AB(0.3, 0) -> {}, {lipschitz} scenarios with gamma >= 1 labelled Lipschitz{}",
            ab.report
                .regularity
                .as_ref()
                .map_or("missing".into(), |r| serde_json::to_string(&r.class).unwrap()),
            if wrong.is_empty() { String::new() } else { format!(" mislabelled: {}", wrong.join("; ")) }
        ),
    )
}

fn main() -> ExitCode {
    let homog = [
        run("zero", 3, 2, None, false, false),
        run("ab", 2, 1, None, false, true),
        run("dipole", 3, 1, None, false, true),
        run("dipole", 3, 2, None, false, false),
    ];
    let pert = vec![
        run("ab", 2, 1, Some(0.5), false, false),
        run("ab", 2, 1, Some(1.0), false, false),
        run("dipole", 3, 1, Some(0.5), false, false),
        run("dipole", 3, 1, Some(1.0), false, false),
    ];
    let ext = vec![
        run("ab", 2, 1, Some(0.5), true, false),
        run("dipole", 3, 1, Some(0.5), true, false),
        run("dipole", 3, 1, Some(1.0), true, false),
    ];
    let fourier = verify_only(json!({
        "kind": "fourier",
        "alpha": [{"n": 0, "re": 0.3, "im": 0.0}, {"n": 1, "re": 0.1, "im": 0.05}, {"n": -1, "re": 0.1, "im": -0.05}],
        "a": [{"n": 0, "re": 0.02, "im": 0.0}, {"n": 2, "re": 0.01, "im": 0.0}, {"n": -2, "re": 0.01, "im": 0.0}]
    }));
    let gauge = verify_only(json!({
        "kind": "fourier",
        "alpha": [{"n": 1, "re": 0.25, "im": 0.0}, {"n": -1, "re": 0.25, "im": 0.0}]
    }));

    let all: Vec<&Run> = homog.iter().chain(&pert).chain(&ext).collect();
    let errored: Vec<&str> = all.iter().filter(|r| !r.ok()).map(|r| r.label.as_str()).collect();
    if !errored.is_empty() {
        eprintln!("  runs with errors: {}", errored.join("; "));
    }
    let homog_refs: Vec<&Run> = homog.iter().collect();
    let pert_refs: Vec<&Run> = pert.iter().collect();
    let pert_all: Vec<&Run> = pert.iter().chain(&ext).collect();
    let ext_refs: Vec<&Run> = ext.iter().collect();
    let interior: Vec<&Run> = homog.iter().chain(&pert).collect();
    let ineq: Vec<(&str, &RunReport)> = vec![
        ("ab", &homog[1].report),
        ("dipole", &homog[2].report),
        ("fourier", &fourier),
        ("gauge", &gauge),
    ];

    let results = [
        ("1 Aharonov-Bohm spectrum", c1_ab_spectrum()),
        ("2 2-D Hardy constant", c2_hardy_constant()),
        ("3 frequency constancy", c3_constancy(&homog_refs)),
        ("4 frequency limit and rate", c4_limit(&pert_refs)),
        ("5 coefficient R-independence", c5_beta(&interior, &homog_refs)),
        ("6 blow-up profiles", c6_blowup(&pert_all)),
        ("7 height derivative and Pohozaev", c7_identities(&all)),
        ("8 height scaling", c8_height(&all)),
        ("9 Kelvin conjugacy", c9_kelvin(&all)),
        ("10 exterior asymptotics", c10_exterior(&ext_refs)),
        ("11 inequality sweeps", c11_inequalities(&ineq, &gauge)),
        ("12 regularity classification", c12_regularity(&homog[1], &all)),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
