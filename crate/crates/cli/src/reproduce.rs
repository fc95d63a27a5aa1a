//! One-command reproduction of the worked example: scenario, design,
//! simulation, every check, the example suite and the two figures.

use std::fmt::Write as _;
use std::path::Path;

use flexcraft_core::analysis::convergence::ConvergenceOptions;
use flexcraft_core::scenario::example_scenario_file;
use flexcraft_core::sim::{csv_header, run_scenario_with_design, write_csv, AnalysisConfig, Trajectory};
use serde::Serialize;

use crate::checks::{self, PESettings};
use crate::files::{prepare_out_dir, sha256_hex, write_output, CliError, CliResult, RunManifest};
use crate::plot::{gnuplot_script, render_svg, Panel, Series};

/// Largest `‖q_ev‖` on [150, 200] s of the reference run (dt = 1e-3,
/// decimate = 100), calibrated once and frozen.
pub const PLATEAU_A: f64 = 1.3087641532059935e-6;
pub const REFERENCE_DT: f64 = 1e-3;
pub const REFERENCE_DECIMATE: usize = 100;

/// Tolerances of the example suite. Only the comparison with the frozen
/// plateau depends on the step: it is calibrated at the reference step and
/// sampling, and other settings move the sampled maximum by a few 1e-3.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SuiteTolerances {
    pub settled: f64,
    pub excursion_factor: f64,
    pub sqrt_r3: f64,
    pub z2_eta: f64,
    /// Relative agreement with [`PLATEAU_A`].
    pub plateau_repro: f64,
}

impl SuiteTolerances {
    pub fn for_step(dt: f64, decimate: usize) -> Self {
        let reference = dt == REFERENCE_DT && decimate == REFERENCE_DECIMATE;
        SuiteTolerances {
            settled: 1e-2,
            excursion_factor: 5.0,
            sqrt_r3: 0.05,
            z2_eta: 1e-6,
            plateau_repro: if reference { 1e-3 } else { 5e-2 },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn max_qev(traj: &Trajectory, t0: f64, t1: f64) -> f64 {
    traj.window(t0, t1).map(|r| r.q_ev_norm()).fold(0.0, f64::max)
}

fn eta_norm_at(traj: &Trajectory, t: f64) -> f64 {
    traj.records
        .iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .map_or(f64::NAN, |r| r.eta.norm())
}

/// Phase behavior, frequency-estimate convergence and the auxiliary-state
/// identity on the example trajectory.
pub fn example_suite(
    traj: &Trajectory,
    conv: &checks::ConvergenceCheck,
    tol: &SuiteTolerances,
) -> Vec<SuiteLine> {
    let mut out = Vec::new();
    let mut line = |name: &str, pass: bool, detail: String| {
        out.push(SuiteLine {
            name: name.into(),
            pass,
            detail,
        })
    };
    let a = max_qev(traj, 150.0, 200.0);
    line(
        "phase (a) settled",
        a < tol.settled,
        format!("max |q_ev| on [150, 200] s = {a:.4e} (< {:.0e})", tol.settled),
    );
    let dev = (a - PLATEAU_A).abs() / PLATEAU_A;
    line(
        "phase (a) plateau",
        dev <= tol.plateau_repro,
        format!(
            "relative deviation from the reference plateau {PLATEAU_A:.6e}: {dev:.3e} (<= {:.0e})",
            tol.plateau_repro
        ),
    );
    let b = traj
        .records
        .iter()
        .filter(|r| r.t > 200.0 && r.t <= 400.0)
        .map(|r| r.q_ev_norm())
        .fold(0.0, f64::max);
    line(
        "phase (b) excursion",
        b > tol.excursion_factor * a,
        format!("sup |q_ev| on (200, 400] s = {b:.4e} (> {} x {a:.4e})", tol.excursion_factor),
    );
    let c = max_qev(traj, 580.0, 600.0);
    line(
        "phase (c) settled",
        c < tol.settled,
        format!("max |q_ev| on [580, 600] s = {c:.4e} (< {:.0e})", tol.settled),
    );
    let d = max_qev(traj, 780.0, 800.0);
    line(
        "phase (d) settled",
        d < tol.settled,
        format!("max |q_ev| on [780, 800] s = {d:.4e} (< {:.0e})", tol.settled),
    );
    let etas = [200.0, 600.0, 800.0].map(|t| eta_norm_at(traj, t));
    line(
        "phase (e) modes",
        etas.iter().all(|e| *e < tol.settled),
        format!("|eta| at 200, 600, 800 s = {:.3e}, {:.3e}, {:.3e}", etas[0], etas[1], etas[2]),
    );
    let p = traj.layout.p;
    let sqrt_err = traj
        .window(580.0, 600.0)
        .map(|r| (r.r_hat[p - 1].max(0.0).sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    line(
        "frequency estimate",
        sqrt_err <= tol.sqrt_r3,
        format!("max |sqrt(Rhat_{p}) - 1| on [580, 600] s = {sqrt_err:.3e} (<= {})", tol.sqrt_r3),
    );
    let r1 = conv
        .reports
        .iter()
        .find(|r| r.t_start <= 580.0 && r.t_end >= 600.0)
        .and_then(|r| r.components.first());
    line(
        "Rhat_1 flagged",
        r1.is_some_and(|c| !c.converged),
        match r1 {
            Some(c) => format!(
                "Rhat_1 final {:.4} vs truth {:.4}: {}",
                c.final_estimate,
                c.truth,
                if c.converged { "converged" } else { "not converged" }
            ),
            None => "no convergence report covers [580, 600] s".into(),
        },
    );
    let n = traj.layout.n;
    let z2 = traj
        .records
        .iter()
        .map(|r| (r.z.rows(n, n) - &r.eta).amax())
        .fold(0.0, f64::max);
    line(
        "z2 = eta",
        z2 <= tol.z2_eta,
        format!("max |z2 - eta| = {z2:.3e} (<= {:.0e})", tol.z2_eta),
    );
    out
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).expect("known column")
}

fn series(traj: &Trajectory, label: &str, f: impl Fn(&flexcraft_core::sim::TelemetryRecord) -> f64) -> Series {
    Series {
        label: label.into(),
        x: traj.records.iter().map(|r| r.t).collect(),
        y: traj.records.iter().map(f).collect(),
    }
}

/// Writes `plots/*.gp` and `plots/*.svg` for the attitude error and the
/// adaptive parameters.
pub fn write_plots(dir: &Path, traj: &Trajectory) -> CliResult<()> {
    let header = csv_header(&traj.layout);
    let q_cols: Vec<(String, usize)> = (1..=3).map(|i| (format!("qe{i}"), col(&header, &format!("qe{i}")))).collect();
    let r_cols: Vec<(String, usize)> = (1..=traj.layout.p)
        .map(|i| (format!("Rhat{i}"), col(&header, &format!("Rhat{i}"))))
        .collect();
    let q_script = gnuplot_script(
        "../trajectory.csv",
        "quaternion_errors_gnuplot.svg",
        "attitude error",
        &[
            ("quaternion error, vector part", false, q_cols.clone()),
            ("|quaternion error|, log scale", true, q_cols),
        ],
    );
    let r_script = gnuplot_script(
        "../trajectory.csv",
        "adaptive_parameters_gnuplot.svg",
        "adaptive parameters",
        &r_cols.iter().map(|c| ("estimate", false, vec![c.clone()])).collect::<Vec<_>>(),
    );
    write_output(&dir.join("quaternion_errors.gp"), q_script.as_bytes())?;
    write_output(&dir.join("adaptive_parameters.gp"), r_script.as_bytes())?;

    let q_panels = vec![
        Panel {
            title: "quaternion error, vector part".into(),
            y_label: "q_e".into(),
            log_y: false,
            series: (0..3).map(|i| series(traj, &format!("q_e{}", i + 1), |r| r.q_e[i])).collect(),
        },
        Panel {
            title: "|q_ev|, log scale".into(),
            y_label: "|q_ev|".into(),
            log_y: true,
            series: vec![series(traj, "|q_ev|", |r| r.q_ev_norm())],
        },
    ];
    let mut r_panels: Vec<Panel> = (0..traj.layout.p)
        .map(|i| Panel {
            title: format!("Rhat_{}", i + 1),
            y_label: format!("Rhat_{}", i + 1),
            log_y: false,
            series: vec![series(traj, &format!("Rhat_{}", i + 1), |r| r.r_hat[i])],
        })
        .collect();
    let p = traj.layout.p;
    r_panels.push(Panel {
        title: format!("sqrt(Rhat_{p})"),
        y_label: "frequency estimate".into(),
        log_y: false,
        series: vec![series(traj, &format!("sqrt(Rhat_{p})"), |r| r.r_hat[p - 1].max(0.0).sqrt())],
    });
    write_output(
        &dir.join("quaternion_errors.svg"),
        render_svg("attitude error", "t [s]", &q_panels).as_bytes(),
    )?;
    write_output(
        &dir.join("adaptive_parameters.svg"),
        render_svg("adaptive parameters", "t [s]", &r_panels).as_bytes(),
    )?;
    Ok(())
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

pub struct ReproduceOptions {
    pub dt: Option<f64>,
    pub decimate: Option<usize>,
    pub force: bool,
}

/// Runs every stage into `out`. Returns the suite lines; a failed stage
/// aborts with the stage name in the error.
pub fn reproduce(out: &Path, opts: &ReproduceOptions) -> CliResult<Vec<SuiteLine>> {
    prepare_out_dir(out, opts.force)?;
    let stage = |name: &'static str| move |e: CliError| e.in_stage(name);
    let convert = |e: flexcraft_core::Error| CliError::from(e);

    let mut file = example_scenario_file();
    if let Some(dt) = opts.dt {
        file.dt = dt;
    }
    if let Some(dec) = opts.decimate {
        file.decimate = dec;
    }
    let scenario_text = file.to_json().map_err(convert).map_err(stage("scenario"))? + "\n";
    let sc = file.to_scenario().map_err(convert).map_err(stage("scenario"))?;
    write_output(&out.join("scenario.json"), scenario_text.as_bytes())?;

    let design = sc.synthesize().map_err(convert).map_err(stage("design"))?;
    let design_text = design.to_json().map_err(convert).map_err(stage("design"))? + "\n";
    write_output(&out.join("design.json"), design_text.as_bytes())?;
    write_output(&out.join("design.txt"), crate::design_summary(&design).as_bytes())?;

    let traj = run_scenario_with_design(&sc, &design).map_err(convert).map_err(stage("simulate"))?;
    let mut csv = Vec::new();
    write_csv(&traj, &mut csv).map_err(convert).map_err(stage("simulate"))?;
    write_output(&out.join("trajectory.csv"), &csv)?;
    let manifest = RunManifest {
        tool: "flexcraft reproduce-example".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        scenario: out.join("scenario.json"),
        design: out.join("design.json"),
        out_dir: out.to_path_buf(),
        dt: sc.dt,
        decimate: sc.decimate,
        t_final: sc.t_final,
        input_sha256: sha256_hex(&[scenario_text.as_bytes(), design_text.as_bytes(), b""]),
        trajectory: "trajectory.csv".into(),
        trajectory_sha256: sha256_hex(&[&csv]),
        records: traj.records.len(),
        steps: traj.steps,
        deterministic: true,
    };
    write_output(&out.join("manifest.json"), manifest.to_json().as_bytes())?;

    let reports = out.join("reports");
    let gains = checks::gains(&sc, &design).map_err(stage("check gains"))?;
    write_output(&reports.join("gains.json"), &json(&gains.report))?;
    write_output(&reports.join("gains.txt"), gains.text.as_bytes())?;
    let conv = checks::convergence(&traj, &sc, &design, &ConvergenceOptions::default()).map_err(stage("check convergence"))?;
    write_output(&reports.join("convergence.json"), &json(&conv.report))?;
    write_output(&reports.join("convergence.txt"), conv.text.as_bytes())?;
    let lyap = checks::lyapunov(&traj, &sc, &design, sc.analysis.unwrap_or(AnalysisConfig::default()), 1e-6)
        .map_err(stage("check lyapunov"))?;
    write_output(&reports.join("lyapunov.json"), &json(&lyap.report))?;
    write_output(&reports.join("lyapunov.txt"), lyap.text.as_bytes())?;
    let pe_settings = PESettings {
        window: 2.0 * std::f64::consts::PI,
        theta: 0.1,
        from: Some(400.0),
        to: Some(600.0),
    };
    let pe = checks::pe_regressor(&traj, &sc, &design, &pe_settings).map_err(stage("check pe"))?;
    write_output(&reports.join("pe_regressor.json"), &json(&pe.report))?;
    write_output(&reports.join("pe_regressor.txt"), pe.text.as_bytes())?;

    let tol = SuiteTolerances::for_step(sc.dt, sc.decimate);
    let suite = example_suite(&traj, &conv.report, &tol);
    let mut summary = format!("example suite at dt = {}, decimate = {}\n", sc.dt, sc.decimate);
    for l in &suite {
        let _ = writeln!(summary, "{} {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.name, l.detail);
    }
    let _ = writeln!(summary, "gain conditions: {}", if gains.satisfied { "satisfied" } else { "not satisfied" });
    let _ = writeln!(summary, "convergence check: {}", if conv.satisfied { "satisfied" } else { "not satisfied" });
    let _ = writeln!(summary, "Lyapunov check: {}", if lyap.satisfied { "nonincreasing" } else { "increases" });
    let _ = writeln!(summary, "regressor PE on [400, 600] s: {}", if pe.satisfied { "PE" } else { "not PE" });
    write_output(&out.join("summary.txt"), summary.as_bytes())?;
    #[derive(Serialize)]
    struct Summary<'a> {
        tolerances: SuiteTolerances,
        suite: &'a [SuiteLine],
    }
    write_output(&reports.join("suite.json"), &json(&Summary { tolerances: tol, suite: &suite }))?;

    write_plots(&out.join("plots"), &traj).map_err(stage("plots"))?;
    print!("{summary}");
    Ok(suite)
}
