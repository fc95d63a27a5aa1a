//! Auxiliary modal dynamics, Lyapunov certificates, the sufficient gain
//! conditions and evaluation of the composite Lyapunov function.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::internal_model::{true_r, ControllerState, InternalModelDesign};
use crate::linalg::{frobenius, solve_lyapunov, spectral_norm, sym_max_eig, sym_min_eig};
use crate::plant::{InertiaParameterization, PlantState, SpacecraftParams};
use crate::quat::Quaternion;

/// Residual gate for both Lyapunov equations.
pub const LYAPUNOV_TOL: f64 = 1e-10;

/// `A = [0 I; −K −C]`.
pub fn auxiliary_matrix(par: &SpacecraftParams) -> DMatrix<f64> {
    let n = par.modes();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    a.view_mut((n, 0), (n, n)).copy_from(&(-&par.stiffness));
    a.view_mut((n, n), (n, n)).copy_from(&(-&par.damping));
    a
}

/// `ż = A z + [0; −δᵀ ω_e]`.
pub fn auxiliary_rhs(z: &DVector<f64>, omega_e: &Vector3<f64>, par: &SpacecraftParams) -> Result<DVector<f64>> {
    let n = par.modes();
    if z.len() != 2 * n {
        return Err(dim(format!("z has {} entries, expected {}", z.len(), 2 * n)));
    }
    let z1 = z.rows(0, n);
    let z2 = z.rows(n, n);
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&z2);
    let w = DVector::from_column_slice(omega_e.as_slice());
    let lower = -(&par.stiffness * z1) - &par.damping * z2 - par.coupling.tr_mul(&w);
    out.rows_mut(n, n).copy_from(&lower);
    Ok(out)
}

/// `z₂(0) = η(0)` and `z₁(0) = −K⁻¹(η̇(0) + C η(0) + δᵀ ω(0))`, which makes
/// `ż₂(0) = η̇(0)` and hence `z₂ ≡ η`.
pub fn initial_z(state: &PlantState, par: &SpacecraftParams) -> Result<DVector<f64>> {
    let n = par.modes();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let w = DVector::from_column_slice(state.omega.as_slice());
    let rhs = &state.eta_dot + &par.damping * &state.eta + par.coupling.tr_mul(&w);
    let z1 = -par
        .stiffness
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Configuration("stiffness K is singular".into()))?;
    let mut z = DVector::zeros(2 * n);
    z.rows_mut(0, n).copy_from(&z1);
    z.rows_mut(n, n).copy_from(&state.eta);
    Ok(z)
}

/// Solves `P A + Aᵀ P = −p I` and `S M + Mᵀ S = −s I`.
pub fn solve_lyapunov_pair(
    par: &SpacecraftParams,
    design: &InternalModelDesign,
    p: f64,
    s: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(p > 0.0) || !(s > 0.0) {
        return Err(Error::Certificate("p and s must be positive".into()));
    }
    let a = auxiliary_matrix(par);
    let big_p = solve_checked(&a, p, "P")?;
    let big_s = solve_checked(&design.m, s, "S")?;
    Ok((big_p, big_s))
}

fn solve_checked(a: &DMatrix<f64>, c: f64, what: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let q = DMatrix::identity(n, n) * (-c);
    let x = solve_lyapunov(a, &q).map_err(|e| Error::Certificate(format!("{what}: {e}")))?;
    let res = frobenius(&(&x * a + a.transpose() * &x - &q));
    if !(res <= LYAPUNOV_TOL * c.max(1.0) * (1.0 + frobenius(&x))) {
        return Err(Error::Certificate(format!("{what}: residual {res:.3e} above tolerance")));
    }
    if !(sym_min_eig(&x) > 0.0) {
        return Err(Error::Certificate(format!("{what} is not positive definite")));
    }
    Ok(x)
}

/// The coupling matrices appearing in the gain conditions, built for the
/// true σ.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatrices {
    /// `Ψ T⁻¹ N δ δᵀ`
    pub alpha: DMatrix<f64>,
    /// `δ(C² − K) + Ψ T⁻¹ N δ C`
    pub alpha1: DMatrix<f64>,
    /// `δ C K + Ψ T⁻¹ N δ K`
    pub alpha2: DMatrix<f64>,
    /// `Ψ T⁻¹`
    pub alpha3: DMatrix<f64>,
    /// `S M N δ K`
    pub alpha4: DMatrix<f64>,
    /// `S M N δ C`
    pub alpha5: DMatrix<f64>,
    /// `S M N δ δᵀ`
    pub alpha6: DMatrix<f64>,
}

impl AlphaMatrices {
    pub fn new(
        par: &SpacecraftParams,
        design: &InternalModelDesign,
        psi_tinv: &DMatrix<f64>,
        big_s: &DMatrix<f64>,
    ) -> Self {
        let d = &par.coupling;
        let c = &par.damping;
        let k = &par.stiffness;
        let ptn = psi_tinv * &design.n;
        let smn = big_s * &design.mn;
        AlphaMatrices {
            alpha: &ptn * d * d.transpose(),
            alpha1: d * (c * c - k) + &ptn * d * c,
            alpha2: d * c * k + &ptn * d * k,
            alpha3: psi_tinv.clone(),
            alpha4: &smn * d * k,
            alpha5: &smn * d * c,
            alpha6: &smn * d * d.transpose(),
        }
    }

    /// Spectral norms `[‖α‖, ‖α₁‖, …, ‖α₆‖]`.
    pub fn norms(&self) -> [f64; 7] {
        [
            spectral_norm(&self.alpha),
            spectral_norm(&self.alpha1),
            spectral_norm(&self.alpha2),
            spectral_norm(&self.alpha3),
            spectral_norm(&self.alpha4),
            spectral_norm(&self.alpha5),
            spectral_norm(&self.alpha6),
        ]
    }
}

/// `P`, `S`, the free constants ε₁..ε₈ and the derived bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub p: f64,
    pub s: f64,
    pub big_p: DMatrix<f64>,
    pub big_s: DMatrix<f64>,
    pub epsilons: [f64; 8],
    pub beta1: f64,
    pub beta2: f64,
    pub alphas: AlphaMatrices,
    /// True σ the certificate was built for.
    pub sigma: Vec<f64>,
}

impl LyapunovCertificate {
    pub fn new(
        par: &SpacecraftParams,
        design: &InternalModelDesign,
        sigma: &[f64],
        p: f64,
        s: f64,
        epsilons: [f64; 8],
    ) -> Result<Self> {
        if epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Certificate("every ε must be positive".into()));
        }
        let (big_p, big_s) = solve_lyapunov_pair(par, design, p, s)?;
        let psi_tinv = design.psi_tinv(sigma)?;
        let alphas = AlphaMatrices::new(par, design, &psi_tinv, &big_s);
        Ok(LyapunovCertificate {
            p,
            s,
            // no flexible modes: V₁ vanishes and so do its bounds
            beta1: if big_p.is_empty() { 0.0 } else { sym_min_eig(&big_p) },
            beta2: if big_p.is_empty() { 0.0 } else { sym_max_eig(&big_p) },
            big_p,
            big_s,
            epsilons,
            alphas,
            sigma: sigma.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs − rhs`; satisfied when nonnegative.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub satisfied: bool,
    pub inequalities: Vec<Inequality>,
    pub p: f64,
    pub s: f64,
    pub epsilons: [f64; 8],
    pub beta1: f64,
    pub beta2: f64,
    /// Spectral norms of α, α₁..α₆.
    pub alpha_norms: [f64; 7],
}

impl GainReport {
    pub fn worst_margin(&self) -> f64 {
        self.inequalities
            .iter()
            .map(|q| q.margin)
            .fold(f64::INFINITY, f64::min)
    }
}

struct Bounds {
    s: f64,
    p: f64,
    k2: f64,
}

/// Right-hand sides of the four sufficient conditions. `a` holds the
/// α-norms, with α₄..α₆ scaled to the given `s`.
fn condition_rhs(eps: &[f64; 8], a: &[f64; 7], beta2: f64, delta_norm: f64) -> Bounds {
    let [e1, e2, e3, e4, e5, e6, e7, e8] = *eps;
    let [a0, a1, a2, a3, a4, a5, a6] = *a;
    Bounds {
        s: 2.0 / e5 + 0.5 * a4 * a4 * e7 + 0.5 * a5 * a5 * e6 + 0.5 * a6 * a6 * e8 + 1.0,
        p: (1.0 / e1 + 1.0 / e3 + 1.0 / e6 + 1.0).max(1.0 / e1 + 1.0 / e4 + 1.0 / e7 + 1.0),
        k2: 1.0 / e2
            + 0.25 * a0 * a0 * e2
            + 0.25 * a1 * a1 * e3
            + 0.25 * a2 * a2 * e4
            + 0.25 * a3 * a3 * e5
            + 1.0 / e8
            + e1 * beta2 * beta2 * delta_norm * delta_norm
            + 1.0,
    }
}

/// Evaluates the four inequalities on `s`, `p`, `k₁` and `k₂`.
pub fn check_gain_conditions(
    cert: &LyapunovCertificate,
    k1: f64,
    k2: f64,
    par: &SpacecraftParams,
) -> GainReport {
    let norms = cert.alphas.norms();
    let b = condition_rhs(&cert.epsilons, &norms, cert.beta2, spectral_norm(&par.coupling));
    let ineq = |name: &str, lhs: f64, rhs: f64| Inequality {
        name: name.into(),
        lhs,
        rhs,
        margin: lhs - rhs,
    };
    let inequalities = vec![
        ineq("s", cert.s, b.s),
        ineq("p", cert.p, b.p),
        ineq("k1", k1, 1.0),
        ineq("k2", k2, b.k2),
    ];
    GainReport {
        satisfied: inequalities.iter().all(|q| q.margin >= 0.0),
        inequalities,
        p: cert.p,
        s: cert.s,
        epsilons: cert.epsilons,
        beta1: cert.beta1,
        beta2: cert.beta2,
        alpha_norms: norms,
    }
}

/// Searches `(ε₁..ε₈, p, s)` for the largest worst-case relative margin.
///
/// `P` and `S` scale linearly with `p` and `s`, so the unit solutions are
/// computed once and the search runs on scalars. Coordinate descent in log
/// space, deterministic, from a fixed set of starting points.
pub fn search_certificate(
    par: &SpacecraftParams,
    design: &InternalModelDesign,
    sigma: &[f64],
    k1: f64,
    k2: f64,
) -> Result<(LyapunovCertificate, GainReport)> {
    let unit = LyapunovCertificate::new(par, design, sigma, 1.0, 1.0, [1.0; 8])?;
    let base = unit.alphas.norms();
    let beta2_unit = unit.beta2;
    let delta_norm = spectral_norm(&par.coupling);

    // x = ln [ε₁..ε₈, p, s]
    let score = |x: &[f64; 10]| -> f64 {
        let eps: [f64; 8] = std::array::from_fn(|i| x[i].exp());
        let p = x[8].exp();
        let s = x[9].exp();
        let mut a = base;
        for v in &mut a[4..] {
            *v *= s;
        }
        let b = condition_rhs(&eps, &a, beta2_unit * p, delta_norm);
        let m = [(s - b.s) / s, (p - b.p) / p, (k2 - b.k2) / k2];
        m.iter().cloned().fold(f64::INFINITY, f64::min)
    };

    let starts: [[f64; 10]; 3] = [
        [0.0; 10],
        [0.0, 0.0, 0.0, 0.0, 0.0, -2.0, -2.0, -2.0, 2.0, 2.0],
        [-1.0, 3.0, 1.0, 1.0, -1.0, -4.0, -4.0, -4.0, 3.0, 4.0],
    ];
    let mut best = (f64::NEG_INFINITY, [0.0; 10]);
    for start in starts {
        let mut x = start;
        let mut f = score(&x);
        let mut step = 1.0;
        let mut iters = 0;
        while step > 1e-6 && iters < 20_000 {
            let mut improved = false;
            for i in 0..10 {
                for dir in [step, -step] {
                    let mut y = x;
                    y[i] += dir;
                    let fy = score(&y);
                    if fy > f {
                        x = y;
                        f = fy;
                        improved = true;
                        break;
                    }
                }
                iters += 1;
            }
            if !improved {
                step *= 0.5;
            }
        }
        if f > best.0 {
            best = (f, x);
        }
    }
    let x = best.1;
    let eps: [f64; 8] = std::array::from_fn(|i| x[i].exp());
    let cert = LyapunovCertificate::new(par, design, sigma, x[8].exp(), x[9].exp(), eps)?;
    let report = check_gain_conditions(&cert, k1, k2, par);
    Ok((cert, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovValues {
    pub v: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
}

/// Everything needed to evaluate `V = V₁ + V₂ + V₃` while the true
/// parameters stay constant.
#[derive(Debug, Clone)]
pub struct LyapunovEvaluator {
    pub big_p: DMatrix<f64>,
    pub big_s: DMatrix<f64>,
    /// `T(σ)` at the true σ.
    pub t_sigma: DMatrix<f64>,
    pub r_true: DVector<f64>,
    pub mu: DVector<f64>,
    pub inertia: Matrix3<f64>,
    pub j_mb: Matrix3<f64>,
    pub n: DMatrix<f64>,
    /// `N δ`
    pub n_delta: DMatrix<f64>,
    pub k1: f64,
    pub k: f64,
}

impl LyapunovEvaluator {
    pub fn new(
        big_p: DMatrix<f64>,
        big_s: DMatrix<f64>,
        design: &InternalModelDesign,
        par: &SpacecraftParams,
        inertia: &InertiaParameterization,
        sigma: &[f64],
        k1: f64,
        k: f64,
    ) -> Result<Self> {
        Ok(LyapunovEvaluator {
            big_p,
            big_s,
            t_sigma: design.t_of(sigma)?,
            r_true: true_r(sigma, &inertia.mu_true, &design.basis),
            mu: inertia.mu_true.clone(),
            inertia: par.inertia,
            j_mb: *par.j_mb(),
            n: design.n.clone(),
            n_delta: &design.n * &par.coupling,
            k1,
            k,
        })
    }

    /// `v̂ = v − θ − N δ η̇ − N J ω_e − ζ μ` with `θ = −T(σ) ϱ`.
    pub fn v_hat(
        &self,
        omega_e: &Vector3<f64>,
        eta_dot: &DVector<f64>,
        ctrl: &ControllerState,
        varrho: &DVector<f64>,
    ) -> DVector<f64> {
        let jw = self.inertia * omega_e;
        &ctrl.v + &self.t_sigma * varrho
            - &self.n_delta * eta_dot
            - &self.n * DVector::from_column_slice(jw.as_slice())
            - &ctrl.zeta * &self.mu
    }

    pub fn eval(
        &self,
        q_e: &Quaternion,
        omega_e: &Vector3<f64>,
        eta_dot: &DVector<f64>,
        ctrl: &ControllerState,
        z: &DVector<f64>,
        varrho: &DVector<f64>,
    ) -> LyapunovValues {
        let v1 = (z.transpose() * &self.big_p * z)[0];
        let r_tilde = &ctrl.r_hat - &self.r_true;
        let v2 = self.k1 * ((q_e.q4 - 1.0).powi(2) + q_e.qv.norm_squared())
            + 0.5 * omega_e.dot(&(self.j_mb * omega_e))
            + r_tilde.norm_squared() / (2.0 * self.k);
        let vh = self.v_hat(omega_e, eta_dot, ctrl, varrho);
        let v3 = 0.5 * (vh.transpose() * &self.big_s * &vh)[0];
        LyapunovValues {
            v: v1 + v2 + v3,
            v1,
            v2,
            v3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::example_spacecraft;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_lyapunov_cases() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let p = solve_checked(&a, 2.0, "P").unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-14);
        let m = DMatrix::from_element(1, 1, -2.0);
        let s = solve_checked(&m, 4.0, "S").unwrap();
        assert_relative_eq!(s[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn example_auxiliary_matrix_is_hurwitz() {
        let sc = example_spacecraft(20.0);
        let a = auxiliary_matrix(&sc);
        assert!(crate::linalg::is_hurwitz(&a));
        let p = solve_checked(&a, 1.0, "P").unwrap();
        let res = &p * &a + a.transpose() * &p + DMatrix::identity(8, 8);
        assert!(frobenius(&res) < 1e-10);
    }

    #[test]
    fn auxiliary_rhs_zero_cases() {
        let sc = example_spacecraft(20.0);
        let z = DVector::zeros(8);
        assert_eq!(auxiliary_rhs(&z, &Vector3::zeros(), &sc).unwrap(), DVector::zeros(8));
        assert!(auxiliary_rhs(&DVector::zeros(3), &Vector3::zeros(), &sc).is_err());
    }

    #[test]
    fn initial_z_matches_modal_rate() {
        let sc = example_spacecraft(20.0);
        let mut st = PlantState::at_rest(Quaternion::identity(), 4);
        st.omega = Vector3::new(0.1, -0.2, 0.05);
        st.eta = DVector::from_vec(vec![0.01, -0.02, 0.0, 0.03]);
        st.eta_dot = DVector::from_vec(vec![0.1, 0.0, -0.1, 0.2]);
        let z = initial_z(&st, &sc).unwrap();
        let zd = auxiliary_rhs(&z, &st.omega, &sc).unwrap();
        assert!((zd.rows(4, 4) - &st.eta_dot).amax() < 1e-14);
        assert_eq!(z.rows(4, 4), st.eta.rows(0, 4));
    }
}
