//! The adaptive control law: parameter update, virtual control and the
//! torque command with its input transformation.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::internal_model::{regressor_rho, ControllerState, InternalModelDesign};
use crate::plant::{f_terms, split_l, InertiaParameterization, InertiaStructure, KnownInertia, SpacecraftParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// Adaptation gain.
    pub k: f64,
    /// Attitude gain.
    pub k1: f64,
    /// Rate gain.
    pub k2: f64,
    pub adaptation_enabled: bool,
}

impl Gains {
    pub fn new(k: f64, k1: f64, k2: f64, adaptation_enabled: bool) -> Result<Self> {
        let g = Gains {
            k,
            k1,
            k2,
            adaptation_enabled,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("k", self.k), ("k1", self.k1), ("k2", self.k2)] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(invalid(format!("gain {name} must be positive, got {x}")));
            }
        }
        Ok(())
    }
}

impl Default for Gains {
    fn default() -> Self {
        Gains {
            k: 10.0,
            k1: 10.0,
            k2: 50.0,
            adaptation_enabled: true,
        }
    }
}

/// The plant information a controller is allowed to use: the inertia
/// structure `(L̄₁, L̄₀)` and `δ C δᵀ`. No true `μ`, σ, modal state or
/// disturbance is stored here.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerKnowledge {
    pub inertia: KnownInertia,
    /// `δ C δᵀ`
    pub coupling_damping: Matrix3<f64>,
}

impl ControllerKnowledge {
    pub fn new(spacecraft: &SpacecraftParams, inertia: &InertiaParameterization) -> Self {
        let dcd = &spacecraft.coupling * &spacecraft.damping * spacecraft.coupling.transpose();
        ControllerKnowledge {
            inertia: inertia.known(),
            coupling_damping: Matrix3::from_column_slice(dcd.as_slice()),
        }
    }

    pub fn n_mu(&self) -> usize {
        self.inertia.n_mu()
    }
}

/// `Ṙ̂ = k ρᵀ ω_e`, or zero while adaptation is disabled.
pub fn adaptive_law(rho: &DMatrix<f64>, omega_e: &Vector3<f64>, gains: &Gains) -> DVector<f64> {
    if !gains.adaptation_enabled {
        return DVector::zeros(rho.ncols());
    }
    rho.tr_mul(&DVector::from_column_slice(omega_e.as_slice())) * gains.k
}

/// `ǔ = −k₁ q_ev − k₂ ω_e − ρ R̂`.
pub fn virtual_control(
    q_ev: &Vector3<f64>,
    omega_e: &Vector3<f64>,
    rho: &DMatrix<f64>,
    r_hat: &DVector<f64>,
    gains: &Gains,
) -> Vector3<f64> {
    let rr = rho * r_hat;
    -gains.k1 * q_ev - gains.k2 * omega_e - Vector3::new(rr[0], rr[1], rr[2])
}

/// Terms added to `ǔ` to form the torque:
/// `−E₀ N L₀(ω_e) + δ C δᵀ ω_e + E₀ v − F₀(ω_e)`.
pub fn input_transformation(
    omega_e: &Vector3<f64>,
    v: &DVector<f64>,
    design: &InternalModelDesign,
    know: &ControllerKnowledge,
) -> Vector3<f64> {
    let (_, l0) = split_l(omega_e, &know.inertia);
    let (_, f0) = f_terms(omega_e, &know.inertia);
    let e0n = &design.e0 * &design.n;
    let e0n = Matrix3::from_column_slice(e0n.as_slice());
    let e0v = &design.e0 * v;
    -(e0n * l0) + know.coupling_damping * omega_e + Vector3::new(e0v[0], e0v[1], e0v[2]) - f0
}

/// Full controller output at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: Vector3<f64>,
    pub rho: DMatrix<f64>,
    pub r_hat_dot: DVector<f64>,
}

/// Evaluates torque, regressor and parameter update together.
pub fn evaluate(
    q_ev: &Vector3<f64>,
    omega_e: &Vector3<f64>,
    state: &ControllerState,
    design: &InternalModelDesign,
    know: &ControllerKnowledge,
    gains: &Gains,
) -> Result<ControlOutput> {
    let rho = regressor_rho(omega_e, &state.zeta, &state.v, design, &know.inertia)?;
    if rho.ncols() != state.r_hat.len() {
        return Err(invalid(format!(
            "R̂ has {} entries, regressor has {} columns",
            state.r_hat.len(),
            rho.ncols()
        )));
    }
    let u = virtual_control(q_ev, omega_e, &rho, &state.r_hat, gains)
        + input_transformation(omega_e, &state.v, design, know);
    let r_hat_dot = adaptive_law(&rho, omega_e, gains);
    Ok(ControlOutput { u, rho, r_hat_dot })
}

/// `u = −k₁q_ev − k₂ω_e − ρR̂ − E₀NL₀ + δCδᵀω_e + E₀v − F₀`.
pub fn control_torque(
    q_ev: &Vector3<f64>,
    omega_e: &Vector3<f64>,
    state: &ControllerState,
    design: &InternalModelDesign,
    know: &ControllerKnowledge,
    gains: &Gains,
) -> Result<Vector3<f64>> {
    Ok(evaluate(q_ev, omega_e, state, design, know, gains)?.u)
}
