//! Persistent-excitation tests on sampled signals and the excitation
//! signal `y(t)` whose excitation governs parameter convergence.
//!
//! The test computed here is the sliding-window Gram form
//! `λ_min((1/T₀) ∫_t^{t+T₀} g gᵀ ds) ≥ ϑ²`. It is sufficient for the
//! L¹ form `(1/T₀) ∫ |cᵀ g| ds ≥ ϑ` used in the definition of PE: if
//! `|cᵀ g| ≤ G` on the window, then `∫ |cᵀ g| ≥ (1/G) ∫ (cᵀ g)²`, and with
//! the Gram bound `∫ (cᵀ g)² ≥ T₀ ϑ²`. The report always names this form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exosystem::exosystem_state;
use crate::internal_model::{block_row_product, InternalModelDesign};
use crate::linalg::{expm, sym_min_eig};
use crate::plant::DisturbanceModel;

/// Name of the tested PE form, echoed in every report.
pub const PE_TEST_FORM: &str = "sliding-window Gram: min eigenvalue of (1/T0) int g g^T >= theta^2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PESignalConfig {
    /// `A(0)` in `A(t) = e^{M t} A₀` (r x n_mu); `None` means zero.
    #[serde(skip)]
    pub a0: Option<DMatrix<f64>>,
    /// Window length T₀ (s).
    pub window: f64,
    /// Threshold ϑ.
    pub theta: f64,
    /// First window start t₀ (s).
    pub t0: f64,
    /// Sample spacing (s), used when a signal is generated rather than read.
    pub dt: f64,
}

impl PESignalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0) || !(self.theta > 0.0) || !(self.dt > 0.0) {
            return Err(invalid("PE window, threshold and dt must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PEReport {
    pub is_pe: bool,
    /// Infimum over windows of the smallest Gram eigenvalue.
    pub min_window_gram_eig: f64,
    /// Start time of the window that attains the infimum.
    pub worst_window_start: f64,
    /// Direction `b` used to reduce a matrix signal to the vector `f b`.
    pub direction: Vec<f64>,
    pub windows: usize,
    pub threshold: f64,
    pub test_form: String,
}

/// Dominant right-singular direction of the vertically stacked samples.
/// The sign is fixed so that the largest-magnitude entry is positive.
pub fn dominant_direction(samples: &[DMatrix<f64>]) -> Result<DVector<f64>> {
    let first = samples.first().ok_or_else(|| invalid("no samples"))?;
    let (q, m) = first.shape();
    if samples.iter().any(|s| s.shape() != (q, m)) {
        return Err(invalid("samples have inconsistent shapes"));
    }
    if q == 0 || m == 0 {
        return Err(invalid("signal has no entries"));
    }
    if m == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    // Gram of the stack, m x m; its top eigenvector is the top right-singular vector
    let mut gram = DMatrix::zeros(m, m);
    for s in samples {
        gram += s.tr_mul(s);
    }
    let eig = gram.symmetric_eigen();
    let (imax, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    let mut b = eig.eigenvectors.column(imax).into_owned();
    let (jmax, _) = b
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |acc, (j, &x)| if x.abs() > acc.1 { (j, x.abs()) } else { acc });
    if b[jmax] < 0.0 {
        b = -b;
    }
    Ok(b)
}

/// Prefix trapezoid integrals of `g gᵀ` and window Gram matrices.
struct GramIntegral {
    times: Vec<f64>,
    prefix: Vec<DMatrix<f64>>,
}

impl GramIntegral {
    fn new(times: &[f64], g: &[DVector<f64>]) -> Self {
        let q = g[0].len();
        let mut prefix = Vec::with_capacity(g.len());
        prefix.push(DMatrix::zeros(q, q));
        for k in 1..g.len() {
            let h = times[k] - times[k - 1];
            let inc = (&g[k] * g[k].transpose() + &g[k - 1] * g[k - 1].transpose()) * (0.5 * h);
            let next = &prefix[k - 1] + inc;
            prefix.push(next);
        }
        GramIntegral {
            times: times.to_vec(),
            prefix,
        }
    }

    /// Integral from `times[0]` to `t`, linear between samples.
    fn at(&self, t: f64) -> DMatrix<f64> {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.prefix[0].clone();
        }
        if k >= self.times.len() {
            return self.prefix[self.times.len() - 1].clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        &self.prefix[k - 1] * (1.0 - w) + &self.prefix[k] * w
    }
}

fn check_times(times: &[f64], n: usize) -> Result<()> {
    if times.len() != n {
        return Err(invalid("times and samples differ in length"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("sample times must be strictly increasing"));
    }
    Ok(())
}

/// Window-Gram PE test of a sampled matrix signal `f(t)` (q x m).
pub fn pe_check(times: &[f64], samples: &[DMatrix<f64>], config: &PESignalConfig) -> Result<PEReport> {
    config.validate()?;
    check_times(times, samples.len())?;
    let t_end = *times.last().ok_or_else(|| invalid("no samples"))?;
    if t_end - config.t0 < 2.0 * config.window {
        return Err(invalid(format!(
            "samples cover {:.3} s after t0 but two windows need {:.3} s",
            t_end - config.t0,
            2.0 * config.window
        )));
    }
    let b = dominant_direction(samples)?;
    let g: Vec<DVector<f64>> = samples.iter().map(|f| f * &b).collect();
    let integral = GramIntegral::new(times, &g);
    let mut worst = (f64::INFINITY, config.t0);
    let mut windows = 0;
    for &t in times.iter().filter(|&&t| t >= config.t0 && t + config.window <= t_end) {
        let gram = (integral.at(t + config.window) - integral.at(t)) / config.window;
        let l = sym_min_eig(&gram);
        windows += 1;
        if l < worst.0 {
            worst = (l, t);
        }
    }
    Ok(PEReport {
        is_pe: worst.0 >= config.theta * config.theta,
        min_window_gram_eig: worst.0,
        worst_window_start: worst.1,
        direction: b.iter().cloned().collect(),
        windows,
        threshold: config.theta,
        test_form: PE_TEST_FORM.into(),
    })
}

/// Per-column excitation of a sampled matrix signal `y(t)` (q x p): for
/// column j, the infimum over windows of the Schur complement of the
/// window Gram `(1/T₀) ∫ yᵀ y` with respect to the other columns. It is
/// the energy in column j that no combination of the other columns
/// explains; a positive floor means the j-th parameter is identifiable.
pub fn column_excitation(times: &[f64], samples: &[DMatrix<f64>], config: &PESignalConfig) -> Result<Vec<f64>> {
    config.validate()?;
    check_times(times, samples.len())?;
    let p = samples.first().ok_or_else(|| invalid("no samples"))?.ncols();
    let t_end = *times.last().unwrap_or(&0.0);
    let mut prefix = vec![DMatrix::<f64>::zeros(p, p)];
    for k in 1..samples.len() {
        let h = times[k] - times[k - 1];
        let inc = (samples[k].tr_mul(&samples[k]) + samples[k - 1].tr_mul(&samples[k - 1])) * (0.5 * h);
        let next = &prefix[k - 1] + inc;
        prefix.push(next);
    }
    let integral = GramIntegral {
        times: times.to_vec(),
        prefix,
    };
    let mut floor = vec![f64::INFINITY; p];
    for &t in times.iter().filter(|&&t| t >= config.t0 && t + config.window <= t_end) {
        let gram = (integral.at(t + config.window) - integral.at(t)) / config.window;
        for (j, f) in floor.iter_mut().enumerate() {
            *f = f.min(schur_complement(&gram, j));
        }
    }
    Ok(floor)
}

fn schur_complement(g: &DMatrix<f64>, j: usize) -> f64 {
    let p = g.nrows();
    let others: Vec<usize> = (0..p).filter(|&i| i != j).collect();
    if others.is_empty() {
        return g[(j, j)];
    }
    let goo = DMatrix::from_fn(others.len(), others.len(), |a, b| g[(others[a], others[b])]);
    let goj = DVector::from_fn(others.len(), |a, _| g[(others[a], j)]);
    let scale = goo.amax().max(g[(j, j)].abs()).max(f64::MIN_POSITIVE);
    let pinv = goo
        .pseudo_inverse(1e-12 * scale)
        .unwrap_or_else(|_| DMatrix::zeros(others.len(), others.len()));
    (g[(j, j)] - (goj.transpose() * pinv * &goj)[0]).max(0.0)
}

/// `y(t) = [B(t)  E∘A(t)  E∘(T(σ) ϱ(t) − A(t) μ)]` with `A(t) = e^{M t} A₀`
/// and `B = E₀ A`. `t` is measured from the start of the constant-parameter
/// interval; `t_abs` is the absolute time at which ϱ is evaluated.
pub fn y_signal(
    t: f64,
    t_abs: f64,
    a0: &DMatrix<f64>,
    design: &InternalModelDesign,
    t_sigma: &DMatrix<f64>,
    model: &DisturbanceModel,
    mu: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let r = design.r();
    let n_mu = mu.len();
    if a0.shape() != (r, n_mu) {
        return Err(invalid(format!("A0 must be {r} x {n_mu}")));
    }
    let a = expm(&(&design.m * t)) * a0;
    let varrho = exosystem_state(model, &design.structure.orders(), t_abs)?;
    let third = t_sigma * varrho - &a * mu;
    let b = &design.e0 * &a;
    let ea = block_row_product(&design.e_blocks, &a)?;
    let e3 = block_row_product(&design.e_blocks, &DMatrix::from_column_slice(r, 1, third.as_slice()))?;
    let ell = design.ell();
    let mut y = DMatrix::zeros(3, n_mu + ell * n_mu + ell);
    y.view_mut((0, 0), (3, n_mu)).copy_from(&b);
    y.view_mut((0, n_mu), (3, ell * n_mu)).copy_from(&ea);
    y.view_mut((0, n_mu + ell * n_mu), (3, ell)).copy_from(&e3);
    Ok(y)
}
