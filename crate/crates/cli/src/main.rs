//! `flexcraft`: design, simulate and analyze adaptive internal-model
//! attitude control of flexible spacecraft.
//!
//! Exit codes: 0 success or satisfied check, 1 runtime failure, 2 usage or
//! schema error, or a check whose verdict is negative. Errors are printed
//! as a single line `error[kind]: message` on stderr.

mod checks;
mod files;
mod plot;
mod reproduce;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flexcraft_core::analysis::convergence::ConvergenceOptions;
use flexcraft_core::internal_model::InternalModelDesign;
use flexcraft_core::sim::{check_design, run_scenario_with_design, write_csv, AnalysisConfig, Scenario};
use serde::Serialize;

use files::{
    load_design_path, load_scenario_path, load_trajectory_path, prepare_out_dir, sha256_hex, write_output, CliError,
    CliResult, RunManifest, EXIT_USAGE,
};

#[derive(Parser)]
#[command(name = "flexcraft", version, about = "Adaptive internal-model attitude control of flexible spacecraft")]
struct Cli {
    /// Assert that the run uses no randomness. Every command is
    /// deterministic, so this only documents intent.
    #[arg(long, global = true)]
    seedless: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the internal model for a scenario and write design.json.
    Design {
        #[arg(long)]
        scenario: PathBuf,
        /// Output file for the design.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a scenario with a design; writes trajectory.csv and manifest.json.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        design: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the integration step.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the telemetry decimation.
        #[arg(long)]
        decimate: Option<usize>,
        /// Overwrite an existing non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Analysis reports; the exit code is 0 when the verdict is positive, 2 otherwise.
    Check {
        #[command(subcommand)]
        kind: CheckKind,
    },
    /// Run the worked example end to end into an output directory.
    ReproduceExample {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        decimate: Option<usize>,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Print the JSON report instead of the text table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    design: PathBuf,
}

#[derive(Subcommand)]
enum CheckKind {
    /// Search a certificate for the sufficient gain conditions on every interval.
    Gains {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Persistent-excitation test of a CSV signal or of the regressor along a trajectory.
    Pe {
        /// CSV with a header row and columns `t, w1, ..., wk`.
        #[arg(long, conflicts_with_all = ["scenario", "design", "trajectory"])]
        signal: Option<PathBuf>,
        #[arg(long, requires_all = ["design", "trajectory"])]
        scenario: Option<PathBuf>,
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Window length T0 in seconds.
        #[arg(long, default_value_t = 2.0 * std::f64::consts::PI)]
        window: f64,
        /// Excitation level; the test passes when the window Gram exceeds theta^2.
        #[arg(long, default_value_t = 0.1)]
        theta: f64,
        #[arg(long)]
        from: Option<f64>,
        #[arg(long)]
        to: Option<f64>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Check that the Lyapunov function does not grow within constant-truth intervals.
    Lyapunov {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        trajectory: PathBuf,
        /// Scalar p of the auxiliary Lyapunov equation; default from the scenario, else 1.
        #[arg(long)]
        p: Option<f64>,
        /// Scalar s of the internal-model Lyapunov equation; default from the scenario, else 1.
        #[arg(long)]
        s: Option<f64>,
        /// Allowed relative increase per record.
        #[arg(long, default_value_t = 1e-6)]
        slack: f64,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Parameter-convergence diagnostics on every adaptive interval.
    Convergence {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        rel_tol: f64,
        #[arg(long, default_value_t = 1e-3)]
        limit_tol: f64,
        #[command(flatten)]
        report: ReportArgs,
    },
}

/// Human-readable summary of a synthesized design.
pub(crate) fn design_summary(d: &InternalModelDesign) -> String {
    let ex = d.to_export();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "internal model: r = {}, orders per axis {:?}, unknown frequencies {}, basis {:?}",
        d.r(),
        ex.orders,
        d.n_sigma(),
        ex.basis.tags
    );
    let _ = writeln!(s, "nominal sigma {:?}", ex.nominal_sigma);
    let _ = writeln!(s, "Sylvester residual {:.3e}", ex.residuals.sylvester);
    let _ = writeln!(s, "parameterization fit residual {:.3e}", ex.residuals.fit);
    let _ = writeln!(s, "E0 =");
    for row in &ex.e0 {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.6}")).collect();
        let _ = writeln!(s, "  {}", cells.join(" "));
    }
    s
}

fn cmd_design(scenario: &Path, out: &Path) -> CliResult<()> {
    let (sc, _) = load_scenario_path(scenario)?;
    let d = sc.synthesize()?;
    write_output(out, (d.to_json()? + "\n").as_bytes())?;
    print!("{}", design_summary(&d));
    println!("wrote {}", out.display());
    Ok(())
}

struct SimulateArgs<'a> {
    scenario: &'a Path,
    design: &'a Path,
    out: &'a Path,
    dt: Option<f64>,
    decimate: Option<usize>,
    force: bool,
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let (mut sc, scenario_bytes) = load_scenario_path(a.scenario)?;
    let (design, design_bytes) = load_design_path(a.design)?;
    if let Some(dt) = a.dt {
        sc.dt = dt;
    }
    if let Some(dec) = a.decimate {
        sc.decimate = dec;
    }
    sc.segments()?;
    check_design(&sc, &design)?;
    prepare_out_dir(a.out, a.force)?;
    let traj = run_scenario_with_design(&sc, &design)?;
    let mut csv = Vec::new();
    write_csv(&traj, &mut csv)?;
    write_output(&a.out.join("trajectory.csv"), &csv)?;
    let overrides = format!("dt={:?};decimate={:?}", a.dt, a.decimate);
    let manifest = RunManifest {
        tool: "flexcraft simulate".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        scenario: a.scenario.to_path_buf(),
        design: a.design.to_path_buf(),
        out_dir: a.out.to_path_buf(),
        dt: sc.dt,
        decimate: sc.decimate,
        t_final: sc.t_final,
        input_sha256: sha256_hex(&[&scenario_bytes, &design_bytes, overrides.as_bytes()]),
        trajectory: "trajectory.csv".into(),
        trajectory_sha256: sha256_hex(&[&csv]),
        records: traj.records.len(),
        steps: traj.steps,
        deterministic: true,
    };
    write_output(&a.out.join("manifest.json"), manifest.to_json().as_bytes())?;
    println!(
        "{} steps, {} records, max quaternion norm drift per step {:.3e}; wrote {}",
        traj.steps,
        traj.records.len(),
        traj.max_quat_drift,
        a.out.join("trajectory.csv").display()
    );
    Ok(())
}

fn emit<R: Serialize>(outcome: checks::Outcome<R>, args: &ReportArgs) -> CliResult<ExitCode> {
    let mut json = serde_json::to_string_pretty(&outcome.report)
        .map_err(|e| CliError::runtime("io", format!("cannot serialize report: {e}")))?;
    json.push('\n');
    if let Some(path) = &args.out {
        write_output(path, json.as_bytes())?;
    }
    if args.json {
        print!("{json}");
    } else {
        print!("{}", outcome.text);
    }
    Ok(if outcome.satisfied {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_USAGE)
    })
}

fn load_pair(inputs: &Inputs) -> CliResult<(Scenario, InternalModelDesign)> {
    let (sc, _) = load_scenario_path(&inputs.scenario)?;
    let (d, _) = load_design_path(&inputs.design)?;
    check_design(&sc, &d)?;
    Ok((sc, d))
}

fn cmd_check(kind: &CheckKind) -> CliResult<ExitCode> {
    match kind {
        CheckKind::Gains { inputs, report } => {
            let (sc, d) = load_pair(inputs)?;
            emit(checks::gains(&sc, &d)?, report)
        }
        CheckKind::Pe {
            signal,
            scenario,
            design,
            trajectory,
            window,
            theta,
            from,
            to,
            report,
        } => {
            let settings = checks::PESettings {
                window: *window,
                theta: *theta,
                from: *from,
                to: *to,
            };
            match (signal, scenario, design, trajectory) {
                (Some(path), _, _, _) => emit(checks::pe_signal(path, &settings)?, report),
                (None, Some(s), Some(d), Some(t)) => {
                    let (sc, d) = load_pair(&Inputs {
                        scenario: s.clone(),
                        design: d.clone(),
                    })?;
                    let traj = load_trajectory_path(t, &sc, &d)?;
                    emit(checks::pe_regressor(&traj, &sc, &d, &settings)?, report)
                }
                _ => Err(CliError::usage(
                    "check pe needs either --signal or all of --scenario, --design and --trajectory",
                )),
            }
        }
        CheckKind::Lyapunov {
            inputs,
            trajectory,
            p,
            s,
            slack,
            report,
        } => {
            let (sc, d) = load_pair(inputs)?;
            let traj = load_trajectory_path(trajectory, &sc, &d)?;
            let base = sc.analysis.unwrap_or_default();
            let cfg = AnalysisConfig {
                p: p.unwrap_or(base.p),
                s: s.unwrap_or(base.s),
            };
            emit(checks::lyapunov(&traj, &sc, &d, cfg, *slack)?, report)
        }
        CheckKind::Convergence {
            inputs,
            trajectory,
            rel_tol,
            limit_tol,
            report,
        } => {
            let (sc, d) = load_pair(inputs)?;
            let traj = load_trajectory_path(trajectory, &sc, &d)?;
            let opts = ConvergenceOptions {
                rel_tol: *rel_tol,
                limit_tol: *limit_tol,
                ..ConvergenceOptions::default()
            };
            emit(checks::convergence(&traj, &sc, &d, &opts)?, report)
        }
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match &cli.command {
        Command::Design { scenario, out } => cmd_design(scenario, out).map(|_| ExitCode::SUCCESS),
        Command::Simulate {
            scenario,
            design,
            out,
            dt,
            decimate,
            force,
        } => cmd_simulate(&SimulateArgs {
            scenario,
            design,
            out,
            dt: *dt,
            decimate: *decimate,
            force: *force,
        })
        .map(|_| ExitCode::SUCCESS),
        Command::Check { kind } => cmd_check(kind),
        Command::ReproduceExample {
            out,
            force,
            dt,
            decimate,
        } => {
            let suite = reproduce::reproduce(
                out,
                &reproduce::ReproduceOptions {
                    dt: *dt,
                    decimate: *decimate,
                    force: *force,
                },
            )?;
            let failed: Vec<&str> = suite.iter().filter(|l| !l.pass).map(|l| l.name.as_str()).collect();
            if failed.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(CliError::runtime(
                    "suite",
                    format!("stage suite: {} example check(s) failed: {}", failed.len(), failed.join(", ")),
                ))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(first.to_string()));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code)
        }
    }
}
