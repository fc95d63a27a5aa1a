//! Attitude quaternions with the scalar part last, `q = [q_v; q_4]`.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tolerance on `|q|² − 1` for inputs that must already be unit.
pub const UNIT_INPUT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub qv: Vector3<f64>,
    pub q4: f64,
}

impl Quaternion {
    pub const fn identity() -> Self {
        Quaternion {
            qv: Vector3::new(0.0, 0.0, 0.0),
            q4: 1.0,
        }
    }

    /// Raw constructor; no normalization.
    pub fn from_parts(qv: Vector3<f64>, q4: f64) -> Self {
        Quaternion { qv, q4 }
    }

    /// Builds from `[q1, q2, q3, q4]` and normalizes.
    pub fn new_normalized(q: [f64; 4]) -> Result<Self> {
        normalize(&Quaternion::from_array(q))
    }

    pub fn from_array(q: [f64; 4]) -> Self {
        Quaternion {
            qv: Vector3::new(q[0], q[1], q[2]),
            q4: q[3],
        }
    }

    pub fn from_vector4(v: &Vector4<f64>) -> Self {
        Quaternion {
            qv: Vector3::new(v[0], v[1], v[2]),
            q4: v[3],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.qv[0], self.qv[1], self.qv[2], self.q4]
    }

    pub fn to_vector4(&self) -> Vector4<f64> {
        Vector4::new(self.qv[0], self.qv[1], self.qv[2], self.q4)
    }

    pub fn norm_squared(&self) -> f64 {
        self.qv.norm_squared() + self.q4 * self.q4
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm_squared() - 1.0).abs() <= tol
    }

    /// Relative attitude of `self` with respect to `desired`, without unit checks.
    ///
    /// `q_ev = q_d4 q_v − q_dv^× q_v − q_4 q_dv`, `q_e4 = q_dvᵀ q_v + q_4 q_d4`.
    pub fn error_from(&self, desired: &Quaternion) -> Quaternion {
        let qdv = &desired.qv;
        let qv = desired.q4 * self.qv - qdv.cross(&self.qv) - self.q4 * qdv;
        let q4 = qdv.dot(&self.qv) + self.q4 * desired.q4;
        Quaternion { qv, q4 }
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Quaternion::identity()
    }
}

/// Cross-product matrix: `skew(x)·y = x × y`.
pub fn skew(x: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -x[2], x[1], x[2], 0.0, -x[0], -x[1], x[0], 0.0)
}

/// Attitude error of `q` relative to the desired attitude `q_d`.
pub fn quat_error(q: &Quaternion, q_d: &Quaternion) -> Result<Quaternion> {
    for (name, x) in [("q", q), ("q_d", q_d)] {
        if !x.is_unit(UNIT_INPUT_TOL) {
            return Err(invalid(format!(
                "{name} is not a unit quaternion (|q|² = {})",
                x.norm_squared()
            )));
        }
    }
    Ok(q.error_from(q_d))
}

/// `q̇ = ½ [q_4 I₃ + q_v^×; −q_vᵀ] ω`. Serves both the body attitude and the
/// attitude error (with `ω_d = 0` the two share this form).
pub fn kinematics(q: &Quaternion, omega: &Vector3<f64>) -> Vector4<f64> {
    let dv = 0.5 * (q.q4 * omega + q.qv.cross(omega));
    let d4 = -0.5 * q.qv.dot(omega);
    Vector4::new(dv[0], dv[1], dv[2], d4)
}

/// Error kinematics `q̇_e` for angular-velocity error `ω_e`.
pub fn error_kinematics(q_e: &Quaternion, omega_e: &Vector3<f64>) -> Vector4<f64> {
    kinematics(q_e, omega_e)
}

pub fn normalize(q: &Quaternion) -> Result<Quaternion> {
    let n = q.norm_squared().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(invalid("cannot normalize a zero or non-finite quaternion"));
    }
    // already unit to rounding: returning the input keeps this idempotent
    if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(*q);
    }
    Ok(Quaternion {
        qv: q.qv / n,
        q4: q.q4 / n,
    })
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_quat() -> impl Strategy<Value = Quaternion> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("nonzero", |a| a.iter().map(|x| x * x).sum::<f64>() > 1e-3)
            .prop_map(|a| Quaternion::new_normalized(a).unwrap())
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(-5.0f64..5.0).prop_map(Vector3::from)
    }

    #[test]
    fn skew_examples() {
        let s = skew(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(
            s,
            Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0)
        );
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let x = Vector3::new(0.3, -0.2, -0.3);
        assert_eq!(skew(&x) * x, Vector3::zeros());
    }

    #[test]
    fn error_of_identical_attitudes_has_zero_vector_part() {
        let q = Quaternion::new_normalized([0.3, -0.2, -0.3, 0.8832]).unwrap();
        let e = quat_error(&q, &q).unwrap();
        assert_eq!(e.qv, Vector3::zeros());
        assert_relative_eq!(e.q4, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn error_against_identity_desired() {
        let q = Quaternion::new_normalized([0.3, -0.2, -0.3, 0.8832]).unwrap();
        let e = quat_error(&q, &Quaternion::identity()).unwrap();
        assert_eq!(e.qv, q.qv);
        assert_eq!(e.q4, q.q4);
    }

    #[test]
    fn error_example_attitudes_fixture() {
        // Oracle: Hamilton product conj(q_d) ⊗ q through nalgebra's
        // quaternion type, a route independent of `error_from`.
        let q = Quaternion::new_normalized([0.3, -0.2, -0.3, 0.8832]).unwrap();
        let qd = Quaternion::new_normalized([-0.24, -0.57, -0.18, 0.77]).unwrap();
        let hq = nalgebra::Quaternion::new(q.q4, q.qv[0], q.qv[1], q.qv[2]);
        let hd = nalgebra::Quaternion::new(qd.q4, qd.qv[0], qd.qv[1], qd.qv[2]);
        let prod = hd.conjugate() * hq;
        let e = quat_error(&q, &qd).unwrap();
        assert_relative_eq!(e.qv[0], prod.i, epsilon = 1e-15);
        assert_relative_eq!(e.qv[1], prod.j, epsilon = 1e-15);
        assert_relative_eq!(e.qv[2], prod.k, epsilon = 1e-15);
        assert_relative_eq!(e.q4, prod.w, epsilon = 1e-15);
        // frozen from a 40-digit evaluation of the same inputs
        let frozen = [
            0.30676742686892724243,
            0.47357062146629800923,
            -0.2898894808457459275,
            0.77303861558865580668,
        ];
        for (got, want) in e.to_array().iter().zip(frozen) {
            assert_relative_eq!(*got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn error_rejects_non_unit() {
        let raw = Quaternion::from_array([0.3, -0.2, -0.3, 0.8832]);
        assert!(quat_error(&raw, &Quaternion::identity()).is_err());
    }

    #[test]
    fn kinematics_examples() {
        let q = Quaternion::new_normalized([0.1, 0.2, 0.3, 0.9]).unwrap();
        assert_eq!(error_kinematics(&q, &Vector3::zeros()), Vector4::zeros());
        let d = error_kinematics(&Quaternion::identity(), &Vector3::new(1.0, -2.0, 4.0));
        assert_eq!(d, Vector4::new(0.5, -1.0, 2.0, 0.0));
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&Quaternion::from_array([0.0, 0.0, 0.0, 2.0])).unwrap();
        assert_eq!(n, Quaternion::identity());
        let u = Quaternion::new_normalized([0.1, 0.2, 0.3, 0.9]).unwrap();
        let uu = normalize(&u).unwrap();
        assert!((uu.to_vector4() - u.to_vector4()).amax() <= 1e-15);
        let s = 1.17f64.sqrt();
        let w = normalize(&Quaternion::from_array([0.6, 0.0, 0.0, 0.9])).unwrap();
        assert_relative_eq!(w.qv[0], 0.6 / s, epsilon = 1e-15);
        assert_relative_eq!(w.q4, 0.9 / s, epsilon = 1e-15);
        assert!(normalize(&Quaternion::from_array([0.0; 4])).is_err());
    }

    proptest! {
        #[test]
        fn skew_is_antisymmetric_cross(x in vec3(), y in vec3()) {
            let s = skew(&x);
            prop_assert_eq!(s + s.transpose(), Matrix3::zeros());
            prop_assert!((s * y - x.cross(&y)).amax() < 1e-12);
        }

        #[test]
        fn self_error_vector_part_zero(q in unit_quat()) {
            prop_assert_eq!(q.error_from(&q).qv, Vector3::zeros());
        }

        #[test]
        fn error_is_unit(q in unit_quat(), qd in unit_quat()) {
            prop_assert!(quat_error(&q, &qd).unwrap().is_unit(1e-12));
        }

        #[test]
        fn kinematics_orthogonal_to_state(q in unit_quat(), w in vec3()) {
            let d = error_kinematics(&q, &w);
            prop_assert!(d.dot(&q.to_vector4()).abs() < 1e-12);
        }

        #[test]
        fn normalize_idempotent(a in prop::array::uniform4(-3.0f64..3.0)) {
            let q = Quaternion::from_array(a);
            prop_assume!(q.norm_squared() > 1e-6);
            let once = normalize(&q).unwrap();
            let twice = normalize(&once).unwrap();
            prop_assert!(once.is_unit(1e-15));
            prop_assert_eq!(twice, once);
        }
    }
}
