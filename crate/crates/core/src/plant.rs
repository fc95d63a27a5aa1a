//! Flexible spacecraft plant: inertia parameterization, the coupled
//! rigid/flexible equations of motion and the multi-tone disturbance.
//!
//! Units: torques in N·m, rates in rad/s, inertia in kg·m². The coupling
//! matrix δ is used as given and never converted.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};
use crate::linalg::sym_min_eig;
use crate::quat::{kinematics, skew, Quaternion};

/// Order of the packed inertia vector `[J11 J22 J33 J23 J13 J12]`.
pub const INERTIA_ENTRY_NAMES: [&str; 6] = ["J11", "J22", "J33", "J23", "J13", "J12"];

/// Physical plant parameters with `J_mb = J − δδᵀ` precomputed.
#[derive(Debug, Clone)]
pub struct SpacecraftParams {
    pub inertia: Matrix3<f64>,
    pub coupling: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    j_mb: Matrix3<f64>,
    j_mb_inv: Matrix3<f64>,
}

fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Configuration(format!("{what} must be square")));
    }
    if m.is_empty() {
        return Ok(());
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(1.0) {
        return Err(Error::Configuration(format!("{what} is not symmetric")));
    }
    let lmin = sym_min_eig(m);
    if !(lmin > 0.0) {
        return Err(Error::Configuration(format!(
            "{what} is not positive definite (min eigenvalue {lmin:.3e})"
        )));
    }
    Ok(())
}

impl SpacecraftParams {
    pub fn new(
        inertia: Matrix3<f64>,
        coupling: DMatrix<f64>,
        damping: DMatrix<f64>,
        stiffness: DMatrix<f64>,
    ) -> Result<Self> {
        let n = coupling.ncols();
        if coupling.nrows() != 3 {
            return Err(dim("coupling δ must have 3 rows"));
        }
        if damping.shape() != (n, n) || stiffness.shape() != (n, n) {
            return Err(dim(format!(
                "damping/stiffness must be {n}x{n} to match the coupling matrix"
            )));
        }
        check_spd(&DMatrix::from_column_slice(3, 3, inertia.as_slice()), "J")?;
        check_spd(&damping, "C")?;
        check_spd(&stiffness, "K")?;
        let dd = &coupling * coupling.transpose();
        let j_mb = inertia - Matrix3::from_column_slice(dd.as_slice());
        check_spd(&DMatrix::from_column_slice(3, 3, j_mb.as_slice()), "J_mb = J - δδᵀ")?;
        let j_mb_inv = j_mb
            .try_inverse()
            .ok_or_else(|| Error::Configuration("J_mb is singular".into()))?;
        Ok(SpacecraftParams {
            inertia,
            coupling,
            damping,
            stiffness,
            j_mb,
            j_mb_inv,
        })
    }

    /// Number of flexible modes.
    pub fn modes(&self) -> usize {
        self.coupling.ncols()
    }

    pub fn j_mb(&self) -> &Matrix3<f64> {
        &self.j_mb
    }

    /// Same flexible structure, different rigid inertia.
    pub fn with_inertia(&self, inertia: Matrix3<f64>) -> Result<Self> {
        SpacecraftParams::new(
            inertia,
            self.coupling.clone(),
            self.damping.clone(),
            self.stiffness.clone(),
        )
    }
}

/// `[J11 J22 J33 J23 J13 J12]ᵀ = L̄₁ μ + L̄₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct InertiaParameterization {
    pub lbar1: DMatrix<f64>,
    pub lbar0: Vector6<f64>,
    /// True values of the unknown entries; read only by the simulator and the
    /// analysis tools.
    pub mu_true: DVector<f64>,
}

pub fn pack_inertia(j: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(j[(0, 0)], j[(1, 1)], j[(2, 2)], j[(1, 2)], j[(0, 2)], j[(0, 1)])
}

pub fn unpack_inertia(p: &Vector6<f64>) -> Matrix3<f64> {
    Matrix3::new(p[0], p[5], p[4], p[5], p[1], p[3], p[4], p[3], p[2])
}

impl InertiaParameterization {
    pub fn new(lbar1: DMatrix<f64>, lbar0: Vector6<f64>, mu_true: DVector<f64>) -> Result<Self> {
        if lbar1.nrows() != 6 || lbar1.ncols() > 6 {
            return Err(dim("L̄₁ must be 6 x n_mu with n_mu ≤ 6"));
        }
        if mu_true.len() != lbar1.ncols() {
            return Err(dim("μ length must equal the column count of L̄₁"));
        }
        Ok(InertiaParameterization {
            lbar1,
            lbar0,
            mu_true,
        })
    }

    /// Marks the named entries of `j` (from [`INERTIA_ENTRY_NAMES`]) as
    /// unknown; their current values become `μ`.
    pub fn from_unknown_entries(j: &Matrix3<f64>, unknown: &[String]) -> Result<Self> {
        let packed = pack_inertia(j);
        let mut idx = Vec::with_capacity(unknown.len());
        for name in unknown {
            let k = INERTIA_ENTRY_NAMES
                .iter()
                .position(|n| n.eq_ignore_ascii_case(name))
                .ok_or_else(|| invalid(format!("unknown inertia entry name {name:?}")))?;
            if idx.contains(&k) {
                return Err(invalid(format!("inertia entry {name} listed twice")));
            }
            idx.push(k);
        }
        let mut lbar1 = DMatrix::zeros(6, idx.len());
        let mut lbar0 = packed;
        let mut mu = DVector::zeros(idx.len());
        for (col, &k) in idx.iter().enumerate() {
            lbar1[(k, col)] = 1.0;
            lbar0[k] = 0.0;
            mu[col] = packed[k];
        }
        InertiaParameterization::new(lbar1, lbar0, mu)
    }

    pub fn n_mu(&self) -> usize {
        self.lbar1.ncols()
    }

    /// Inertia matrix for a given `μ`.
    pub fn inertia_for(&self, mu: &DVector<f64>) -> Matrix3<f64> {
        let p = &self.lbar1 * mu;
        unpack_inertia(&(Vector6::from_column_slice(p.as_slice()) + self.lbar0))
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        self.inertia_for(&self.mu_true)
    }

    pub fn with_mu(&self, mu: DVector<f64>) -> Result<Self> {
        InertiaParameterization::new(self.lbar1.clone(), self.lbar0, mu)
    }
}

/// The known part of the inertia model, `(L̄₁, L̄₀)`. Everything the
/// controller needs about `J` is reachable through this trait.
pub trait InertiaStructure {
    fn lbar1(&self) -> &DMatrix<f64>;
    fn lbar0(&self) -> &Vector6<f64>;
    fn n_mu(&self) -> usize {
        self.lbar1().ncols()
    }
}

/// `(L̄₁, L̄₀)` without the true `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownInertia {
    pub lbar1: DMatrix<f64>,
    pub lbar0: Vector6<f64>,
}

impl InertiaStructure for KnownInertia {
    fn lbar1(&self) -> &DMatrix<f64> {
        &self.lbar1
    }
    fn lbar0(&self) -> &Vector6<f64> {
        &self.lbar0
    }
}

impl InertiaStructure for InertiaParameterization {
    fn lbar1(&self) -> &DMatrix<f64> {
        &self.lbar1
    }
    fn lbar0(&self) -> &Vector6<f64> {
        &self.lbar0
    }
}

impl InertiaParameterization {
    /// Drops the true `μ`, keeping only what a controller may know.
    pub fn known(&self) -> KnownInertia {
        KnownInertia {
            lbar1: self.lbar1.clone(),
            lbar0: self.lbar0,
        }
    }
}

/// `L(x)` with `J x = L(x) [J11 J22 J33 J23 J13 J12]ᵀ`.
pub fn regressor_l(x: &Vector3<f64>) -> SMatrix<f64, 3, 6> {
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    #[rustfmt::skip]
    let l = SMatrix::<f64, 3, 6>::from_row_slice(&[
        x1, 0.0, 0.0, 0.0, x3, x2,
        0.0, x2, 0.0, x3, 0.0, x1,
        0.0, 0.0, x3, x2, x1, 0.0,
    ]);
    l
}

/// `(L₁(x), L₀(x)) = (L(x) L̄₁, L(x) L̄₀)`.
pub fn split_l<P: InertiaStructure + ?Sized>(x: &Vector3<f64>, par: &P) -> (DMatrix<f64>, Vector3<f64>) {
    let l = regressor_l(x);
    let l_dyn = DMatrix::from_column_slice(3, 6, l.as_slice());
    (l_dyn * par.lbar1(), l * par.lbar0())
}

/// `F_i(ω) = −ω^× L_i(ω)` so that `−ω^× J ω = F₁ μ + F₀`.
pub fn f_terms<P: InertiaStructure + ?Sized>(omega: &Vector3<f64>, par: &P) -> (DMatrix<f64>, Vector3<f64>) {
    let (l1, l0) = split_l(omega, par);
    let w = skew(omega);
    let w_dyn = DMatrix::from_column_slice(3, 3, w.as_slice());
    (-(w_dyn * l1), -(w * l0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub amplitude: f64,
    /// rad/s
    pub frequency: f64,
    /// rad
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisDisturbance {
    /// Step magnitude `C_{i0}`. `None` means the exosystem carries no bias mode.
    #[serde(default)]
    pub bias: Option<f64>,
    #[serde(default)]
    pub tones: Vec<Tone>,
}

impl AxisDisturbance {
    pub fn eval(&self, t: f64) -> f64 {
        self.bias.unwrap_or(0.0)
            + self
                .tones
                .iter()
                .map(|c| c.amplitude * (c.frequency * t + c.phase).sin())
                .sum::<f64>()
    }

    /// k-th time derivative, evaluated analytically.
    pub fn derivative(&self, k: usize, t: f64) -> f64 {
        if k == 0 {
            return self.eval(t);
        }
        let shift = k as f64 * std::f64::consts::FRAC_PI_2;
        self.tones
            .iter()
            .map(|c| c.amplitude * c.frequency.powi(k as i32) * (c.frequency * t + c.phase + shift).sin())
            .sum()
    }
}

/// `d_i(t) = C_{i0} + Σ_j C_{ij} sin(b_{ij} t + l_{ij})` per body axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceModel {
    pub axes: [AxisDisturbance; 3],
}

impl DisturbanceModel {
    pub fn validate(&self) -> Result<()> {
        for (i, ax) in self.axes.iter().enumerate() {
            for (j, tone) in ax.tones.iter().enumerate() {
                if !(tone.frequency > 0.0) || !tone.frequency.is_finite() {
                    return Err(invalid(format!(
                        "axis {}: tone {} frequency must be positive",
                        i + 1,
                        j + 1
                    )));
                }
                if ax.tones[..j].iter().any(|o| o.frequency == tone.frequency) {
                    return Err(invalid(format!(
                        "axis {}: duplicate frequency {}",
                        i + 1,
                        tone.frequency
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Vector3<f64> {
        Vector3::new(self.axes[0].eval(t), self.axes[1].eval(t), self.axes[2].eval(t))
    }
}

/// Evaluates the external disturbance torque at time `t`.
pub fn disturbance_eval(model: &DisturbanceModel, t: f64) -> Vector3<f64> {
    model.eval(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub q: Quaternion,
    pub omega: Vector3<f64>,
    pub eta: DVector<f64>,
    pub eta_dot: DVector<f64>,
}

impl PlantState {
    pub fn at_rest(q: Quaternion, modes: usize) -> Self {
        PlantState {
            q,
            omega: Vector3::zeros(),
            eta: DVector::zeros(modes),
            eta_dot: DVector::zeros(modes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantDerivative {
    pub q_dot: Vector4<f64>,
    pub omega_dot: Vector3<f64>,
    pub eta_dot: DVector<f64>,
    pub eta_ddot: DVector<f64>,
}

/// Coupled equations of motion solved for `(ω̇, η̈)`:
/// `J_mb ω̇ = −ω^× J ω + u + d + δ(C η̇ + K η)`, then
/// `η̈ = −C η̇ − K η − δᵀ ω̇`.
pub fn plant_rhs(
    state: &PlantState,
    u: &Vector3<f64>,
    d: &Vector3<f64>,
    par: &SpacecraftParams,
) -> PlantDerivative {
    let modal_force = &par.damping * &state.eta_dot + &par.stiffness * &state.eta;
    let coupling_torque = &par.coupling * &modal_force;
    let gyro = -state.omega.cross(&(par.inertia * state.omega));
    let rhs = gyro + u + d + Vector3::from_column_slice(coupling_torque.as_slice());
    let omega_dot = par.j_mb_inv * rhs;
    let eta_ddot = -modal_force - par.coupling.transpose() * omega_dot;
    PlantDerivative {
        q_dot: kinematics(&state.q, &state.omega),
        omega_dot,
        eta_dot: state.eta_dot.clone(),
        eta_ddot,
    }
}

/// Parameters of the worked example: `J = [μ 3 0; 3 100 0; 0 0 10]` with
/// four flexible modes.
pub fn example_spacecraft(mu: f64) -> SpacecraftParams {
    let (j, delta, c, k) = example_matrices(mu);
    SpacecraftParams::new(j, delta, c, k).expect("example parameters are valid")
}

pub fn example_matrices(mu: f64) -> (Matrix3<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let j = Matrix3::new(mu, 3.0, 0.0, 3.0, 100.0, 0.0, 0.0, 0.0, 10.0);
    #[rustfmt::skip]
    let delta = DMatrix::from_row_slice(3, 4, &[
        1.3523, 1.1519, 2.2167, 1.2364,
        1.2784, 1.0176, 1.5891, -1.6537,
        2.1530, -1.2724, -0.8324, 0.2251,
    ]);
    let c = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1229, 0.2195, 0.2646, 0.1145]));
    let k = DMatrix::from_diagonal(&DVector::from_vec(vec![1.2041, 1.6284, 2.7351, 5.2409]));
    (j, delta, c, k)
}
