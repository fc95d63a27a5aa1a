//! Companion-form exosystems for bias + multi-tone disturbances, the
//! internal-model pair (M, N) and the Sylvester equation linking them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};
use crate::linalg::{
    block_diag, companion, controllability_matrix, eigenvalues, frobenius, min_singular_value,
    observability_matrix, poly_from_roots, rank, solve_sylvester_general,
};
use crate::plant::DisturbanceModel;

/// Frequency of one tone as seen by the controller designer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencySpec {
    Known(f64),
    /// Index into the unknown-frequency vector σ.
    Unknown(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisStructure {
    pub has_bias: bool,
    pub tones: Vec<FrequencySpec>,
}

impl AxisStructure {
    pub fn order(&self) -> usize {
        2 * self.tones.len() + usize::from(self.has_bias)
    }

    pub fn has_unknown(&self) -> bool {
        self.tones
            .iter()
            .any(|t| matches!(t, FrequencySpec::Unknown(_)))
    }
}

/// Disturbance structure per axis: which modes exist and which frequencies
/// are unknown. Resolving against a σ value yields concrete frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExosystemStructure {
    pub axes: [AxisStructure; 3],
}

impl ExosystemStructure {
    /// Structure of `model` with the tones flagged in `unknown[axis][tone]`
    /// treated as unknown; σ indices are assigned in axis-then-tone order.
    pub fn from_model(model: &DisturbanceModel, unknown: &[Vec<bool>; 3]) -> Result<Self> {
        let mut next = 0;
        let mut axes: [AxisStructure; 3] = Default::default();
        for i in 0..3 {
            let tones = &model.axes[i].tones;
            if unknown[i].len() != tones.len() {
                return Err(dim(format!(
                    "axis {}: unknown flags do not match tone count",
                    i + 1
                )));
            }
            axes[i].has_bias = model.axes[i].bias.is_some();
            for (tone, &flag) in tones.iter().zip(&unknown[i]) {
                axes[i].tones.push(if flag {
                    next += 1;
                    FrequencySpec::Unknown(next - 1)
                } else {
                    FrequencySpec::Known(tone.frequency)
                });
            }
        }
        Ok(ExosystemStructure { axes })
    }

    pub fn n_sigma(&self) -> usize {
        self.axes
            .iter()
            .flat_map(|a| a.tones.iter())
            .filter_map(|t| match t {
                FrequencySpec::Unknown(k) => Some(k + 1),
                FrequencySpec::Known(_) => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn orders(&self) -> [usize; 3] {
        [self.axes[0].order(), self.axes[1].order(), self.axes[2].order()]
    }

    /// Concrete per-axis frequency lists for a given σ.
    pub fn frequencies(&self, sigma: &[f64]) -> Result<[Vec<f64>; 3]> {
        if sigma.len() != self.n_sigma() {
            return Err(dim(format!(
                "σ has {} entries, structure expects {}",
                sigma.len(),
                self.n_sigma()
            )));
        }
        let mut out: [Vec<f64>; 3] = Default::default();
        for (i, ax) in self.axes.iter().enumerate() {
            out[i] = ax
                .tones
                .iter()
                .map(|t| match *t {
                    FrequencySpec::Known(b) => b,
                    FrequencySpec::Unknown(k) => sigma[k],
                })
                .collect();
        }
        Ok(out)
    }

    /// Values of the unknown frequencies as currently set in `model`.
    pub fn sigma_of(&self, model: &DisturbanceModel) -> Vec<f64> {
        let mut sigma = vec![0.0; self.n_sigma()];
        for (i, ax) in self.axes.iter().enumerate() {
            for (j, t) in ax.tones.iter().enumerate() {
                if let (FrequencySpec::Unknown(k), Some(tone)) = (t, model.axes[i].tones.get(j)) {
                    sigma[*k] = tone.frequency;
                }
            }
        }
        sigma
    }

    /// Exosystem for σ without the distinct-frequency checks; σ = 0 and
    /// negative σ are allowed (only σ² enters Φ).
    pub fn exosystem_unchecked(&self, sigma: &[f64]) -> Result<ExosystemDesign> {
        let freqs = self.frequencies(sigma)?;
        let bias = [self.axes[0].has_bias, self.axes[1].has_bias, self.axes[2].has_bias];
        Ok(assemble_exosystem(&freqs, bias))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisExosystem {
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl AxisExosystem {
    pub fn order(&self) -> usize {
        self.phi.nrows()
    }
}

/// Per-axis companion realizations and their block-diagonal aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExosystemDesign {
    pub axes: Vec<AxisExosystem>,
    pub phi: DMatrix<f64>,
    /// 3 x r
    pub psi: DMatrix<f64>,
}

impl ExosystemDesign {
    pub fn r(&self) -> usize {
        self.phi.nrows()
    }

    pub fn orders(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.order()).collect()
    }
}

/// Ascending coefficients of `λ^b Π_j (λ² + b_j²)`.
fn exosystem_polynomial(freqs: &[f64], bias: bool) -> Vec<f64> {
    let mut poly = vec![1.0];
    if bias {
        poly.insert(0, 0.0);
    }
    for &b in freqs {
        let mut next = vec![0.0; poly.len() + 2];
        for (k, &c) in poly.iter().enumerate() {
            next[k] += c * b * b;
            next[k + 2] += c;
        }
        poly = next;
    }
    poly
}

fn assemble_exosystem(freqs: &[Vec<f64>; 3], bias: [bool; 3]) -> ExosystemDesign {
    let axes: Vec<AxisExosystem> = (0..3)
        .map(|i| {
            let poly = exosystem_polynomial(&freqs[i], bias[i]);
            let r = poly.len() - 1;
            let last: Vec<f64> = poly[..r].iter().map(|c| -c).collect();
            let mut psi = DMatrix::zeros(1, r);
            if r > 0 {
                psi[(0, 0)] = 1.0;
            }
            AxisExosystem {
                phi: companion(&last),
                psi,
            }
        })
        .collect();
    let phi = block_diag(&axes.iter().map(|a| a.phi.clone()).collect::<Vec<_>>());
    let psi = block_diag(&axes.iter().map(|a| a.psi.clone()).collect::<Vec<_>>());
    ExosystemDesign { axes, phi, psi }
}

/// Companion-form exosystem whose characteristic polynomial is
/// `λ^b Π_j (λ² + b_{ij}²)` on each axis.
pub fn build_exosystem(freqs_per_axis: &[Vec<f64>; 3], has_bias: [bool; 3]) -> Result<ExosystemDesign> {
    for (i, freqs) in freqs_per_axis.iter().enumerate() {
        for (j, &b) in freqs.iter().enumerate() {
            if !(b > 0.0) || !b.is_finite() {
                return Err(invalid(format!("axis {}: frequency {b} must be positive", i + 1)));
            }
            if freqs[..j].contains(&b) {
                return Err(invalid(format!("axis {}: duplicate frequency {b}", i + 1)));
            }
        }
    }
    let exo = assemble_exosystem(freqs_per_axis, has_bias);
    for (i, ax) in exo.axes.iter().enumerate() {
        let r = ax.order();
        if r == 0 {
            continue;
        }
        let eig = eigenvalues(&ax.phi);
        let max_re = eig.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
        let mut min_gap = f64::INFINITY;
        for a in 0..eig.len() {
            for b in a + 1..eig.len() {
                min_gap = min_gap.min((eig[a] - eig[b]).norm());
            }
        }
        if max_re > 1e-9 || min_gap <= 1e-9 {
            return Err(invalid(format!(
                "axis {}: exosystem eigenvalues not distinct on the imaginary axis",
                i + 1
            )));
        }
        if rank(&observability_matrix(&ax.phi, &ax.psi), 1e-12) < r {
            return Err(invalid(format!("axis {}: (Φ, Ψ) not observable", i + 1)));
        }
    }
    Ok(exo)
}

/// Stacked derivatives `ϱ_i = [d_i, ḋ_i, …, d_i^{(r_i−1)}]` for all axes.
pub fn exosystem_state(model: &DisturbanceModel, orders: &[usize], t: f64) -> Result<DVector<f64>> {
    if orders.len() != 3 {
        return Err(dim("exosystem must have three axes"));
    }
    let r: usize = orders.iter().sum();
    let mut out = DVector::zeros(r);
    let mut off = 0;
    for (ax, &ri) in model.axes.iter().zip(orders) {
        let expected = 2 * ax.tones.len() + usize::from(ax.bias.is_some());
        if expected != ri {
            return Err(dim(format!(
                "disturbance axis needs order {expected}, exosystem has {ri}"
            )));
        }
        for k in 0..ri {
            out[off + k] = ax.derivative(k, t);
        }
        off += ri;
    }
    Ok(out)
}

/// Default internal-model poles: −1 ± i√2 (from λ² + 2λ + 3) extended with
/// real poles at −2; a first-order model uses −2 alone.
pub fn default_poles(r: usize) -> Vec<Complex64> {
    match r {
        0 => Vec::new(),
        1 => vec![Complex64::new(-2.0, 0.0)],
        _ => {
            let mut p = vec![
                Complex64::new(-1.0, 2f64.sqrt()),
                Complex64::new(-1.0, -(2f64.sqrt())),
            ];
            p.extend(std::iter::repeat_n(Complex64::new(-2.0, 0.0), r - 2));
            p
        }
    }
}

/// Ascending coefficients of `λ² + 2λ + 3` times `(λ + 2)^{r−2}` (or `λ + 2`
/// for r = 1), expanded in exact arithmetic on small integers.
pub fn default_polynomial(r: usize) -> Vec<f64> {
    let mut poly = if r == 1 { vec![2.0, 1.0] } else { vec![3.0, 2.0, 1.0] };
    for _ in 2..r {
        let mut next = vec![0.0; poly.len() + 1];
        for (k, &c) in poly.iter().enumerate() {
            next[k] += 2.0 * c;
            next[k + 1] += c;
        }
        poly = next;
    }
    poly
}

/// Companion-form Hurwitz `M_i` with the requested poles and `N_i = e_r`.
pub fn choose_mn(r: usize, poles: Option<&[Complex64]>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if r == 0 {
        return Err(invalid("internal-model order must be at least 1"));
    }
    let coeffs = match poles {
        Some(poles) => {
            if poles.len() != r {
                return Err(invalid(format!("expected {r} poles, got {}", poles.len())));
            }
            if let Some(p) = poles.iter().find(|p| !(p.re < 0.0)) {
                return Err(invalid(format!("pole {p} is not in the open left half-plane")));
            }
            poly_from_roots(poles)?
        }
        None => default_polynomial(r),
    };
    let last: Vec<f64> = coeffs[..r].iter().map(|c| -c).collect();
    let m = companion(&last);
    let mut n = DVector::zeros(r);
    n[r - 1] = 1.0;
    let ctrb = controllability_matrix(&m, &DMatrix::from_column_slice(r, 1, n.as_slice()));
    if rank(&ctrb, 1e-12) < r {
        return Err(Error::Synthesis {
            matrix: "M".into(),
            reason: "(M, N) not controllable".into(),
        });
    }
    Ok((m, n))
}

/// Residual gate for the Sylvester solve.
pub const SYLVESTER_TOL: f64 = 1e-10;

/// Solves `T Φ − M T = N Ψ` and checks residual and invertibility.
pub fn solve_sylvester(
    phi: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n: &DMatrix<f64>,
    psi: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let rhs = n * psi;
    let t = solve_sylvester_general(phi, m, &rhs)?;
    let res = sylvester_residual(&t, phi, m, n, psi);
    let scale = 1.0f64.max(frobenius(&t) * (frobenius(phi) + frobenius(m)));
    if !(res <= SYLVESTER_TOL * scale) {
        return Err(Error::Synthesis {
            matrix: "T".into(),
            reason: format!("Sylvester residual {res:.3e} above tolerance"),
        });
    }
    if !t.is_empty() && !(min_singular_value(&t) > 1e-9) {
        return Err(Error::Synthesis {
            matrix: "T".into(),
            reason: "numerically singular".into(),
        });
    }
    Ok(t)
}

/// Frobenius norm of `T Φ − M T − N Ψ`.
pub fn sylvester_residual(
    t: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n: &DMatrix<f64>,
    psi: &DMatrix<f64>,
) -> f64 {
    frobenius(&(t * phi - m * t - n * psi))
}
