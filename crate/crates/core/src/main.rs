use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use almgren_core::asymptotics::kelvin_transform;
use almgren_core::scenario::{
    parse_scenario, run_scenario, verify_suite, CheckName, Pipeline, RunOptions, RunReport,
    RunStatus, Scenario,
};
use almgren_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "almgren", version, about = "Frequency-function asymptotics for singular electromagnetic Schrödinger equations")]
struct Cli {
    /// Scenario JSON file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Multiplies every upper-bound tolerance.
    #[arg(long, global = true, value_name = "FACTOR", default_value_t = 1.0)]
    tol_scale: f64,
    /// Overrides the scenario seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Angular eigenvalues and multiplicity blocks.
    Spectrum,
    /// Modal solve; writes the sampled field.
    Solve,
    /// Frequency trace `r,H,D,N` and its fit.
    Frequency,
    /// Leading exponent, eigenspace block and coefficients.
    Asymptotics {
        /// Exponent to match; the fitted one when absent.
        #[arg(long)]
        gamma: Option<f64>,
        /// Extraction radius; the boundary radius when absent.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Kelvin transform of the solution and the conjugacy check.
    Kelvin,
    /// Inequality and identity checks only.
    Verify {
        /// Comma-separated subset of: positivity, hardy, diamagnetic,
        /// hardy2d, mu1, height, pohozaev.
        #[arg(long, value_name = "NAMES")]
        check: Option<String>,
    },
    /// Full pipeline with report.
    Run,
}

/// Writes a line to stdout; a closed pipe (`almgren ... | head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{text}").and_then(|_| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing to stdout: {e}");
        }
    }
}

fn print_json<T: Serialize>(v: &T) {
    emit(&serde_json::to_string_pretty(v).expect("value serializes"));
}

fn write_out(dir: Option<&Path>, name: &str, bytes: &[u8]) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec_pretty(v).expect("value serializes")
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

fn report_exit(rep: &RunReport) -> ExitCode {
    match rep.status {
        RunStatus::Pass => ExitCode::SUCCESS,
        RunStatus::Fail => {
            eprintln!("failed checks: {}", rep.failed_checks().join(", "));
            ExitCode::from(1)
        }
        RunStatus::Error => {
            eprintln!("error: {}", rep.error.as_deref().unwrap_or("unknown"));
            ExitCode::from(2)
        }
    }
}

fn stage(cli: &Cli, sc: &Scenario, opts: &RunOptions) -> Result<()> {
    let out = opts.out_dir.as_deref();
    let names = &sc.outputs;
    let mut p = Pipeline::new(sc)?;
    match &cli.command {
        Command::Spectrum => {
            let s = p.spectrum.summary();
            write_out(out, &names.spectrum, &to_pretty(&s))?;
            print_json(&s);
        }
        Command::Solve => {
            let field = p.solve()?.clone();
            write_out(out, "field.csv", &csv_bytes(|w| field.write_csv(w)))?;
            write_out(out, "field.json", &to_pretty(&field.header()))?;
            let summary = p.solution.as_ref().expect("solved").summary();
            write_out(out, "solve.json", &to_pretty(&summary))?;
            print_json(&summary);
        }
        Command::Frequency => {
            let t = p.frequency()?.clone();
            write_out(out, &names.trace, &csv_bytes(|w| t.write_csv(w)))?;
            print_json(&t.fit);
        }
        Command::Asymptotics { gamma, radius } => {
            let g = match gamma {
                Some(g) => *g,
                None => p.frequency()?.fit.gamma_hat,
            };
            let r = radius.unwrap_or(sc.boundary.radius);
            let prof = p.profile_at(g, r)?.to_json();
            write_out(out, &names.profile, &to_pretty(&prof))?;
            print_json(&prof);
        }
        Command::Kelvin => {
            let rep = p.kelvin()?;
            let v = kelvin_transform(p.field.as_ref().expect("solved"));
            write_out(out, "kelvin_field.csv", &csv_bytes(|w| v.write_csv(w)))?;
            write_out(out, "kelvin.json", &to_pretty(&rep))?;
            print_json(&rep);
        }
        Command::Verify { .. } | Command::Run => unreachable!("handled by the caller"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config.as_deref() else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(2);
    };
    if !(cli.tol_scale > 0.0 && cli.tol_scale.is_finite()) {
        eprintln!("error: --tol-scale must be a positive number");
        return ExitCode::from(2);
    }
    let sc = match parse_scenario(config) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        tol_scale: cli.tol_scale,
        seed: cli.seed,
        out_dir: cli.out.clone().or_else(|| sc.outputs.dir.as_ref().map(PathBuf::from)),
    };
    match &cli.command {
        Command::Run => {
            let rep = run_scenario(&sc, &opts);
            emit(&rep.to_json());
            report_exit(&rep)
        }
        Command::Verify { check } => {
            let checks = match check.as_deref() {
                None => CheckName::ALL.to_vec(),
                Some(s) => match CheckName::parse_list(s) {
                    Ok(c) if !c.is_empty() => c,
                    Ok(_) => {
                        eprintln!("error: --check needs at least one of: {}", CheckName::valid_names());
                        return ExitCode::from(2);
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(2);
                    }
                },
            };
            let rep = verify_suite(&sc, &checks, &opts);
            emit(&rep.to_json());
            report_exit(&rep)
        }
        _ => match stage(&cli, &sc, &opts) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
