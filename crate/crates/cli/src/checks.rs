//! The `check` reports. Each returns a serializable report, a plain-text
//! table and a verdict.

use std::fmt::Write as _;
use std::path::Path;

use flexcraft_core::analysis::convergence::{scenario_convergence_reports, ConvergenceOptions, ConvergenceReport};
use flexcraft_core::analysis::lyapunov::{search_certificate, GainReport};
use flexcraft_core::analysis::pe::{pe_check, PEReport, PESignalConfig};
use flexcraft_core::internal_model::{regressor_rho, InternalModelDesign};
use flexcraft_core::sim::{lyapunov_series, AnalysisConfig, Scenario, Trajectory};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::files::{read_input, CliError, CliResult, EXIT_USAGE};

pub struct Outcome<R> {
    pub report: R,
    pub text: String,
    pub satisfied: bool,
}

#[derive(Debug, Serialize)]
pub struct SegmentGains {
    pub t_start: f64,
    pub t_end: f64,
    pub sigma: Vec<f64>,
    pub report: GainReport,
}

#[derive(Debug, Serialize)]
pub struct GainsCheck {
    pub k1: f64,
    pub k2: f64,
    pub satisfied: bool,
    pub segments: Vec<SegmentGains>,
}

/// Searches a certificate for every constant-truth interval of the scenario.
pub fn gains(sc: &Scenario, design: &InternalModelDesign) -> CliResult<Outcome<GainsCheck>> {
    let mut segments = Vec::new();
    let mut text = String::new();
    for seg in sc.segments()? {
        let (_, report) = search_certificate(&seg.spacecraft, design, &seg.sigma, sc.gains.k1, sc.gains.k2)?;
        let _ = writeln!(
            text,
            "interval [{:.3}, {:.3}] s, sigma = {:?}: p = {:.4e}, s = {:.4e} -> {}",
            seg.start,
            seg.end,
            seg.sigma,
            report.p,
            report.s,
            if report.satisfied { "satisfied" } else { "not satisfied" }
        );
        let _ = writeln!(text, "  {:<4} {:>14} {:>14} {:>14}", "cond", "lhs", "rhs", "margin");
        for q in &report.inequalities {
            let _ = writeln!(text, "  {:<4} {:>14.6e} {:>14.6e} {:>14.6e}", q.name, q.lhs, q.rhs, q.margin);
        }
        segments.push(SegmentGains {
            t_start: seg.start,
            t_end: seg.end,
            sigma: seg.sigma.clone(),
            report,
        });
    }
    let satisfied = segments.iter().all(|s| s.report.satisfied);
    let _ = writeln!(
        text,
        "gain conditions (k1 = {}, k2 = {}): {}",
        sc.gains.k1,
        sc.gains.k2,
        if satisfied { "satisfied" } else { "not satisfied" }
    );
    Ok(Outcome {
        report: GainsCheck {
            k1: sc.gains.k1,
            k2: sc.gains.k2,
            satisfied,
            segments,
        },
        text,
        satisfied,
    })
}

#[derive(Debug, Serialize)]
pub struct PECheck {
    /// `signal` for a user-supplied CSV, `regressor` for ρ along a trajectory.
    pub source: String,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    pub report: PEReport,
}

pub struct PESettings {
    pub window: f64,
    pub theta: f64,
    pub from: Option<f64>,
    pub to: Option<f64>,
}

fn in_range(t: f64, s: &PESettings) -> bool {
    s.from.is_none_or(|a| t >= a) && s.to.is_none_or(|b| t <= b)
}

fn pe_outcome(source: &str, times: Vec<f64>, samples: Vec<DMatrix<f64>>, s: &PESettings) -> CliResult<Outcome<PECheck>> {
    if times.len() < 2 {
        return Err(CliError::runtime("invalid-input", "PE test needs at least two samples in range"));
    }
    let cfg = PESignalConfig {
        a0: None,
        window: s.window,
        theta: s.theta,
        t0: times[0],
        dt: times[1] - times[0],
    };
    let report = pe_check(&times, &samples, &cfg)?;
    let (t_start, t_end) = (times[0], *times.last().unwrap());
    let text = format!(
        "PE test of the {source} on [{t_start:.3}, {t_end:.3}] s ({} samples)\n\
         form: {}\n\
         window {:.6} s, {} windows, direction b = {:?}\n\
         min window Gram eigenvalue {:.6e} (worst window at {:.3} s) vs theta^2 = {:.3e} -> {}\n",
        times.len(),
        report.test_form,
        s.window,
        report.windows,
        report.direction,
        report.min_window_gram_eig,
        report.worst_window_start,
        s.theta * s.theta,
        if report.is_pe { "PE" } else { "not PE" }
    );
    let satisfied = report.is_pe;
    Ok(Outcome {
        report: PECheck {
            source: source.into(),
            t_start,
            t_end,
            samples: times.len(),
            report,
        },
        text,
        satisfied,
    })
}

/// PE test of a signal stored as CSV: a header row, then `t, w1, ..., wk`.
/// Each row is read as the column vector `w(t)`.
pub fn pe_signal(path: &Path, s: &PESettings) -> CliResult<Outcome<PECheck>> {
    let bytes = read_input(path, "signal")?;
    let schema = |m: String| CliError {
        kind: "schema",
        code: EXIT_USAGE,
        message: m,
    };
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let width = rdr.headers().map_err(|e| schema(format!("signal: {e}")))?.len();
    if width < 2 {
        return Err(schema("signal: need a time column and at least one value column".into()));
    }
    let (mut times, mut samples) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| schema(format!("signal: {e}")))?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| schema(format!("signal row {}: {e}", i + 2)))?;
        if in_range(vals[0], s) {
            times.push(vals[0]);
            samples.push(DMatrix::from_column_slice(width - 1, 1, &vals[1..]));
        }
    }
    pe_outcome("signal", times, samples, s)
}

/// PE test of the regressor ρ(t) recomputed from a trajectory.
pub fn pe_regressor(
    traj: &Trajectory,
    sc: &Scenario,
    design: &InternalModelDesign,
    s: &PESettings,
) -> CliResult<Outcome<PECheck>> {
    let known = sc.inertia.known();
    let (mut times, mut samples) = (Vec::new(), Vec::new());
    for r in traj.records.iter().filter(|r| in_range(r.t, s)) {
        times.push(r.t);
        samples.push(regressor_rho(&r.omega_e, &r.zeta, &r.v, design, &known)?);
    }
    pe_outcome("regressor rho", times, samples, s)
}

#[derive(Debug, Serialize)]
pub struct SegmentLyapunov {
    pub t_start: f64,
    pub t_end: f64,
    pub records: usize,
    pub v_first: f64,
    pub v_last: f64,
    /// Largest `(V(k+1) − V(k)) / max(1, V(k))` between consecutive records.
    pub worst_rel_increase: f64,
    pub worst_at: f64,
    pub nonincreasing: bool,
}

#[derive(Debug, Serialize)]
pub struct LyapunovCheck {
    pub p: f64,
    pub s: f64,
    pub slack: f64,
    pub satisfied: bool,
    pub segments: Vec<SegmentLyapunov>,
}

/// Re-evaluates `V` along the trajectory and tests that it does not grow
/// within any constant-truth interval.
pub fn lyapunov(
    traj: &Trajectory,
    sc: &Scenario,
    design: &InternalModelDesign,
    cfg: AnalysisConfig,
    slack: f64,
) -> CliResult<Outcome<LyapunovCheck>> {
    let values = lyapunov_series(traj, sc, design, &cfg)?;
    let mut segments = Vec::new();
    let mut text = format!("Lyapunov function with p = {}, s = {}, slack {:.1e}\n", cfg.p, cfg.s, slack);
    let _ = writeln!(
        text,
        "{:>10} {:>10} {:>8} {:>13} {:>13} {:>13} {:>10}  verdict",
        "t_start", "t_end", "records", "V first", "V last", "worst rise", "at"
    );
    for seg in sc.segments()? {
        // records at an event time carry the post-event truth
        let idx: Vec<usize> = (0..traj.records.len())
            .filter(|&i| {
                let t = traj.records[i].t;
                t >= seg.start && (t < seg.end || (t == seg.end && seg.end == sc.t_final))
            })
            .collect();
        if idx.is_empty() {
            continue;
        }
        let (mut worst, mut at) = (f64::NEG_INFINITY, seg.start);
        for w in idx.windows(2) {
            let (a, b) = (values[w[0]].v, values[w[1]].v);
            let rise = (b - a) / a.max(1.0);
            if rise > worst {
                worst = rise;
                at = traj.records[w[1]].t;
            }
        }
        let nonincreasing = idx.len() < 2 || worst <= slack;
        let entry = SegmentLyapunov {
            t_start: seg.start,
            t_end: seg.end,
            records: idx.len(),
            v_first: values[idx[0]].v,
            v_last: values[*idx.last().unwrap()].v,
            worst_rel_increase: if idx.len() < 2 { 0.0 } else { worst },
            worst_at: at,
            nonincreasing,
        };
        let _ = writeln!(
            text,
            "{:>10.3} {:>10.3} {:>8} {:>13.6e} {:>13.6e} {:>13.3e} {:>10.3}  {}",
            entry.t_start,
            entry.t_end,
            entry.records,
            entry.v_first,
            entry.v_last,
            entry.worst_rel_increase,
            entry.worst_at,
            if nonincreasing { "nonincreasing" } else { "increases" }
        );
        segments.push(entry);
    }
    let satisfied = segments.iter().all(|s| s.nonincreasing);
    Ok(Outcome {
        report: LyapunovCheck {
            p: cfg.p,
            s: cfg.s,
            slack,
            satisfied,
            segments,
        },
        text,
        satisfied,
    })
}

#[derive(Debug, Serialize)]
pub struct ConvergenceCheck {
    pub satisfied: bool,
    pub reports: Vec<ConvergenceReport>,
}

/// Convergence diagnostics for every adaptive interval. Satisfied when each
/// interval has a PE `y` and all intermediate limits below tolerance.
pub fn convergence(
    traj: &Trajectory,
    sc: &Scenario,
    design: &InternalModelDesign,
    opts: &ConvergenceOptions,
) -> CliResult<Outcome<ConvergenceCheck>> {
    let reports = scenario_convergence_reports(traj, sc, design, opts)?;
    let mut text = String::new();
    for r in &reports {
        text.push_str(&r.to_text());
        text.push('\n');
    }
    let satisfied = !reports.is_empty()
        && reports
            .iter()
            .all(|r| r.y_pe.is_pe && r.rho_r_tilde.below_tolerance && r.limits.iter().all(|l| l.below_tolerance));
    if reports.is_empty() {
        text.push_str("no adaptive interval in the trajectory\n");
    }
    let _ = writeln!(text, "convergence: {}", if satisfied { "satisfied" } else { "not satisfied" });
    Ok(Outcome {
        report: ConvergenceCheck { satisfied, reports },
        text,
        satisfied,
    })
}
