//! Parameter-convergence diagnostics over a constant-truth interval of a
//! simulated run.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::pe::{column_excitation, pe_check, y_signal, PEReport, PESignalConfig};
use crate::error::{invalid, Result};
use crate::exosystem::exosystem_state;
use crate::internal_model::{regressor_rho, true_r, InternalModelDesign};
use crate::linalg::expm;
use crate::plant::{DisturbanceModel, KnownInertia};
use crate::sim::{Scenario, TelemetryRecord, Trajectory};

/// The true parameters in force over `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTruth {
    pub t_start: f64,
    pub t_end: f64,
    pub sigma: Vec<f64>,
    pub mu: DVector<f64>,
    pub disturbance: DisturbanceModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceOptions {
    /// Relative error accepted as converged.
    pub rel_tol: f64,
    /// Fraction of the interval, counted from its end, used as the tail.
    pub tail_fraction: f64,
    /// Threshold for the tail averages of the intermediate limits.
    pub limit_tol: f64,
    /// PE settings; `t0` is taken relative to `t_start`.
    pub pe: PESignalConfig,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        ConvergenceOptions {
            rel_tol: 0.05,
            tail_fraction: 0.1,
            limit_tol: 1e-3,
            pe: PESignalConfig {
                a0: None,
                window: 2.0 * std::f64::consts::PI,
                theta: 0.1,
                t0: 0.0,
                dt: 1e-3,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    /// 1-based index into `R̂`.
    pub index: usize,
    /// `mu1`, `sigma1^2*mu1`, `sigma1^2`, ...
    pub name: String,
    pub truth: f64,
    pub final_estimate: f64,
    pub final_error: f64,
    /// Largest `|R̃_i| / |R_i|` over the tail.
    pub tail_rel_error: f64,
    /// For `σ_k²` components: the tail extreme of `|√R̂ − σ_k| / σ_k`.
    pub sqrt_tail_rel_error: Option<f64>,
    pub sqrt_final_estimate: Option<f64>,
    pub converged: bool,
    /// Window-Gram excitation of this column of `y` not explained by the others.
    pub excitation_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub name: String,
    pub tail_average: f64,
    pub tail_max: f64,
    pub below_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub t_start: f64,
    pub t_end: f64,
    pub tail_start: f64,
    pub components: Vec<ComponentReport>,
    /// `‖ρ R̃‖` over the tail.
    pub rho_r_tilde: LimitReport,
    /// `‖A − ζ‖`, `‖T(σ)ϱ − Aμ + v‖` and `‖y − ρ‖` over the tail.
    pub limits: Vec<LimitReport>,
    /// Largest `‖R̂(t) − R̂(t_start)‖` over the interval.
    pub r_hat_variation: f64,
    /// PE test of `y`, restricted to the rows that carry signal.
    pub y_pe: PEReport,
    /// 1-based rows of `y` that were tested.
    pub y_rows_tested: Vec<usize>,
    pub limit_tol: f64,
    pub rel_tol: f64,
}

/// Names of the `R` components, following `[μ; Ω ⊗ μ; Ω]`.
pub fn component_names(design: &InternalModelDesign, n_mu: usize) -> Vec<String> {
    let tags = design.basis.tags();
    let mut out: Vec<String> = (1..=n_mu).map(|i| format!("mu{i}")).collect();
    for tag in &tags {
        out.extend((1..=n_mu).map(|i| format!("{tag}*mu{i}")));
    }
    out.extend(tags.iter().cloned());
    out
}

/// Index `k` of the unknown frequency when basis function `j` is exactly `σ_k²`.
fn squared_frequency(design: &InternalModelDesign, j: usize) -> Option<usize> {
    let e = &design.basis.exponents[j];
    let nz: Vec<usize> = (0..e.len()).filter(|&k| e[k] != 0).collect();
    (nz.len() == 1 && e[nz[0]] == 2).then(|| nz[0])
}

fn limit(name: &str, values: &[f64], tol: f64) -> LimitReport {
    let avg = if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    LimitReport {
        name: name.into(),
        tail_average: avg,
        tail_max: max,
        below_tolerance: avg <= tol,
    }
}

pub fn estimate_convergence_report(
    traj: &Trajectory,
    design: &InternalModelDesign,
    inertia: &KnownInertia,
    truth: &ConvergenceTruth,
    opts: &ConvergenceOptions,
) -> Result<ConvergenceReport> {
    let n_mu = truth.mu.len();
    let r = design.r();
    let recs: Vec<&TelemetryRecord> = traj.window(truth.t_start, truth.t_end).collect();
    if recs.len() < 2 {
        return Err(invalid(format!(
            "no telemetry between {} s and {} s",
            truth.t_start, truth.t_end
        )));
    }
    let a0 = opts.pe.a0.clone().unwrap_or_else(|| DMatrix::zeros(r, n_mu));
    if a0.shape() != (r, n_mu) {
        return Err(invalid(format!("A0 must be {r} x {n_mu}")));
    }
    let r_true = true_r(&truth.sigma, &truth.mu, &design.basis);
    if recs[0].r_hat.len() != r_true.len() {
        return Err(invalid("telemetry R̂ length does not match the design"));
    }
    let t_sigma = design.t_of(&truth.sigma)?;
    let orders = design.structure.orders();
    let tail_start = truth.t_end - opts.tail_fraction * (truth.t_end - truth.t_start);

    let mut times = Vec::with_capacity(recs.len());
    let mut ys = Vec::with_capacity(recs.len());
    let mut rho_rt = Vec::new();
    let mut a_zeta = Vec::new();
    let mut v_lim = Vec::new();
    let mut y_rho = Vec::new();
    let mut tail_rel = vec![0.0f64; r_true.len()];
    let mut tail_sqrt = vec![0.0f64; r_true.len()];
    let mut variation = 0.0f64;
    let ell = design.ell();
    let sq_offset = n_mu + ell * n_mu;

    for rec in &recs {
        let tau = rec.t - truth.t_start;
        let a = expm(&(&design.m * tau)) * &a0;
        let y = y_signal(tau, rec.t, &a0, design, &t_sigma, &truth.disturbance, &truth.mu)?;
        variation = variation.max((&rec.r_hat - &recs[0].r_hat).norm());
        times.push(rec.t);
        if rec.t >= tail_start {
            let rho = regressor_rho(&rec.omega_e, &rec.zeta, &rec.v, design, inertia)?;
            let rt = &rec.r_hat - &r_true;
            rho_rt.push((&rho * &rt).norm());
            a_zeta.push((&a - &rec.zeta).norm());
            let varrho = exosystem_state(&truth.disturbance, &orders, rec.t)?;
            v_lim.push((&t_sigma * varrho - &a * &truth.mu + &rec.v).norm());
            y_rho.push((&y - &rho).norm());
            for i in 0..r_true.len() {
                tail_rel[i] = tail_rel[i].max(rt[i].abs() / r_true[i].abs().max(f64::MIN_POSITIVE));
            }
            for j in 0..ell {
                if let Some(k) = squared_frequency(design, j) {
                    let i = sq_offset + j;
                    let s = truth.sigma[k];
                    tail_sqrt[i] = tail_sqrt[i].max((rec.r_hat[i].max(0.0).sqrt() - s).abs() / s);
                }
            }
        }
        ys.push(y);
    }

    // rows of y that vanish on the whole interval cannot be excited by any b
    let scale = ys.iter().map(|y| y.amax()).fold(0.0f64, f64::max);
    let rows: Vec<usize> = (0..3)
        .filter(|&i| ys.iter().any(|y| y.row(i).amax() > 1e-12 * scale.max(f64::MIN_POSITIVE)))
        .collect();
    let mut pe_cfg = opts.pe.clone();
    pe_cfg.t0 = truth.t_start + opts.pe.t0;
    let y_pe = if rows.is_empty() {
        PEReport {
            is_pe: false,
            min_window_gram_eig: 0.0,
            worst_window_start: pe_cfg.t0,
            direction: vec![0.0; r_true.len()],
            windows: 0,
            threshold: pe_cfg.theta,
            test_form: super::pe::PE_TEST_FORM.into(),
        }
    } else {
        let reduced: Vec<DMatrix<f64>> = ys.iter().map(|y| y.select_rows(rows.iter())).collect();
        pe_check(&times, &reduced, &pe_cfg)?
    };
    let floors = column_excitation(&times, &ys, &pe_cfg)?;

    let last = recs[recs.len() - 1];
    let names = component_names(design, n_mu);
    let components = (0..r_true.len())
        .map(|i| {
            let is_sq = i >= sq_offset && squared_frequency(design, i - sq_offset).is_some();
            let sqrt_tail = is_sq.then_some(tail_sqrt[i]);
            let converged = match sqrt_tail {
                Some(e) => e <= opts.rel_tol,
                None => tail_rel[i] <= opts.rel_tol,
            };
            ComponentReport {
                index: i + 1,
                name: names[i].clone(),
                truth: r_true[i],
                final_estimate: last.r_hat[i],
                final_error: last.r_hat[i] - r_true[i],
                tail_rel_error: tail_rel[i],
                sqrt_tail_rel_error: sqrt_tail,
                sqrt_final_estimate: is_sq.then(|| last.r_hat[i].max(0.0).sqrt()),
                converged,
                excitation_floor: floors[i],
            }
        })
        .collect();

    Ok(ConvergenceReport {
        t_start: truth.t_start,
        t_end: truth.t_end,
        tail_start,
        components,
        rho_r_tilde: limit("|rho R~|", &rho_rt, opts.limit_tol),
        limits: vec![
            limit("|A - zeta|", &a_zeta, opts.limit_tol),
            limit("|T rho_exo - A mu + v|", &v_lim, opts.limit_tol),
            limit("|y - rho|", &y_rho, opts.limit_tol),
        ],
        r_hat_variation: variation,
        y_pe,
        y_rows_tested: rows.iter().map(|i| i + 1).collect(),
        limit_tol: opts.limit_tol,
        rel_tol: opts.rel_tol,
    })
}

/// One report per constant-truth interval during which adaptation is on.
pub fn scenario_convergence_reports(
    traj: &Trajectory,
    scenario: &Scenario,
    design: &InternalModelDesign,
    opts: &ConvergenceOptions,
) -> Result<Vec<ConvergenceReport>> {
    let know = scenario.inertia.known();
    scenario
        .segments()?
        .iter()
        .filter(|s| s.adaptation_enabled && s.end > s.start)
        .map(|s| {
            let truth = ConvergenceTruth {
                t_start: s.start,
                t_end: s.end,
                sigma: s.sigma.clone(),
                mu: s.inertia.mu_true.clone(),
                disturbance: s.disturbance.clone(),
            };
            estimate_convergence_report(traj, design, &know, &truth, opts)
        })
        .collect()
}

impl ConvergenceReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "interval [{:.3}, {:.3}] s, tail from {:.3} s",
            self.t_start, self.t_end, self.tail_start
        );
        let _ = writeln!(
            s,
            "{:>3}  {:<16} {:>14} {:>14} {:>12} {:>12} {:>10}  verdict",
            "i", "component", "truth", "estimate", "tail rel", "sqrt rel", "excitation"
        );
        for c in &self.components {
            let _ = writeln!(
                s,
                "{:>3}  {:<16} {:>14.6e} {:>14.6e} {:>12.3e} {:>12} {:>10.3e}  {}",
                c.index,
                c.name,
                c.truth,
                c.final_estimate,
                c.tail_rel_error,
                c.sqrt_tail_rel_error.map_or("-".to_string(), |e| format!("{e:.3e}")),
                c.excitation_floor,
                if c.converged { "converged" } else { "not converged" }
            );
        }
        for l in std::iter::once(&self.rho_r_tilde).chain(&self.limits) {
            let _ = writeln!(
                s,
                "{:<24} tail avg {:.3e}  tail max {:.3e}  {}",
                l.name,
                l.tail_average,
                l.tail_max,
                if l.below_tolerance { "ok" } else { "above tolerance" }
            );
        }
        let _ = writeln!(
            s,
            "y PE (rows {:?}): min window Gram eig {:.6e} vs theta^2 {:.3e} -> {}",
            self.y_rows_tested,
            self.y_pe.min_window_gram_eig,
            self.y_pe.threshold * self.y_pe.threshold,
            if self.y_pe.is_pe { "PE" } else { "not PE" }
        );
        s
    }
}
