//! SE(2) and SE(3) with right-perturbation conventions.
//!
//! Tangent vectors are ordered translation first, rotation last:
//! `[x, y, theta]` for SE(2) and `[rho_x, rho_y, rho_z, phi_x, phi_y, phi_z]`
//! for SE(3). `retract(a, v) = a * exp(v)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix6, Quaternion, Rotation2, SMatrix, SVector, UnitQuaternion, Vector2, Vector3, Vector6};

const SMALL_ANGLE: f64 = 1e-4;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut a = theta.sin().atan2(theta.cos());
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

pub trait LieGroup<const N: usize>: Copy + Sized {
    fn identity() -> Self;
    fn compose(&self, other: &Self) -> Self;
    fn inverse(&self) -> Self;
    fn log(&self) -> SVector<f64, N>;
    fn exp(v: &SVector<f64, N>) -> Self;
    /// Adjoint such that `a * exp(v) * a^-1 = exp(Ad(a) v)`.
    fn adjoint(&self) -> SMatrix<f64, N, N>;

    /// Inverse right Jacobian of `log`: `log(exp(e) * exp(d)) ~ e + J^-1(e) d`.
    fn right_jacobian_inv(e: &SVector<f64, N>) -> SMatrix<f64, N, N>;

    fn retract(&self, v: &SVector<f64, N>) -> Self {
        self.compose(&Self::exp(v))
    }

    /// `self^-1 * other`.
    fn between(&self, other: &Self) -> Self {
        self.inverse().compose(other)
    }
}

pub fn se_compose<G: LieGroup<N>, const N: usize>(a: &G, b: &G) -> G {
    a.compose(b)
}

pub fn se_inverse<G: LieGroup<N>, const N: usize>(a: &G) -> G {
    a.inverse()
}

pub fn se_log<G: LieGroup<N>, const N: usize>(a: &G) -> SVector<f64, N> {
    a.log()
}

pub fn se_exp<G: LieGroup<N>, const N: usize>(v: &SVector<f64, N>) -> G {
    G::exp(v)
}

pub fn se_retract<G: LieGroup<N>, const N: usize>(a: &G, v: &SVector<f64, N>) -> G {
    a.retract(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    fn rotation(&self) -> Rotation2<f64> {
        Rotation2::new(self.theta)
    }
}

// (sin t / t, (1 - cos t) / t) with series near zero.
fn se2_v_coeffs(theta: f64) -> (f64, f64) {
    if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, theta / 2.0 - theta * t2 / 24.0)
    } else {
        let half = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * half * half / theta)
    }
}

impl LieGroup<3> for Pose2 {
    fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    fn compose(&self, other: &Self) -> Self {
        let t = self.translation() + self.rotation() * other.translation();
        Pose2::new(t.x, t.y, self.theta + other.theta)
    }

    fn inverse(&self) -> Self {
        let t = -(self.rotation().inverse() * self.translation());
        Pose2::new(t.x, t.y, -self.theta)
    }

    fn log(&self) -> Vector3<f64> {
        let theta = self.theta;
        let (a, b) = se2_v_coeffs(theta);
        let det = a * a + b * b;
        let (x, y) = (self.x, self.y);
        Vector3::new((a * x + b * y) / det, (-b * x + a * y) / det, theta)
    }

    fn exp(v: &Vector3<f64>) -> Self {
        let theta = v[2];
        let (a, b) = se2_v_coeffs(theta);
        Pose2::new(a * v[0] - b * v[1], b * v[0] + a * v[1], theta)
    }

    fn adjoint(&self) -> Matrix3<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix3::new(c, -s, self.y, s, c, -self.x, 0.0, 0.0, 1.0)
    }

    fn right_jacobian_inv(e: &Vector3<f64>) -> Matrix3<f64> {
        let (r1, r2, t) = (e[0], e[1], e[2]);
        let jr = if t.abs() < SMALL_ANGLE {
            Matrix3::new(1.0, t / 2.0, -r2 / 2.0, -t / 2.0, 1.0, r1 / 2.0, 0.0, 0.0, 1.0)
        } else {
            let s = t.sin();
            let half = (0.5 * t).sin();
            // 1 - cos t without cancellation
            let omc = 2.0 * half * half;
            let t2 = t * t;
            Matrix3::new(
                s / t,
                omc / t,
                (t * r1 - r2 * omc - r1 * s) / t2,
                -omc / t,
                s / t,
                (r1 * omc + t * r2 - r2 * s) / t2,
                0.0,
                0.0,
                1.0,
            )
        };
        jr.try_inverse().unwrap_or_else(Matrix3::identity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3 {
    pub translation: Vector3<f64>,
    /// Unit quaternion with `w >= 0`.
    pub rotation: UnitQuaternion<f64>,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Pose3 {
    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation: canonical(rotation),
        }
    }

    /// Builds a pose from a possibly unnormalized quaternion `(w, x, y, z)`.
    pub fn from_parts(t: [f64; 3], w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        Self::new(Vector3::new(t[0], t[1], t[2]), q)
    }
}

// V = I + b K + c K^2 with K = [phi]x, theta = |phi|.
fn so3_v(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let (b, c) = if theta < SMALL_ANGLE {
        (0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0)
    } else {
        let t2 = theta * theta;
        let half = (0.5 * theta).sin();
        (2.0 * half * half / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + k * b + k * k * c
}

fn so3_v_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

impl LieGroup<6> for Pose3 {
    fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    fn compose(&self, other: &Self) -> Self {
        Pose3::new(
            self.translation + self.rotation * other.translation,
            self.rotation * other.rotation,
        )
    }

    fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Pose3::new(-(inv * self.translation), inv)
    }

    fn log(&self) -> Vector6<f64> {
        let phi = self.rotation.scaled_axis();
        let rho = so3_v_inv(&phi) * self.translation;
        Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z)
    }

    fn exp(v: &Vector6<f64>) -> Self {
        let rho = Vector3::new(v[0], v[1], v[2]);
        let phi = Vector3::new(v[3], v[4], v[5]);
        Pose3::new(so3_v(&phi) * rho, UnitQuaternion::from_scaled_axis(phi))
    }

    fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&self.translation) * r));
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad
    }

    fn right_jacobian_inv(e: &Vector6<f64>) -> Matrix6<f64> {
        // Central differences of log(exp(e) exp(d)) around d = 0.
        let base = Pose3::exp(e);
        let h = 1e-6;
        let mut j = Matrix6::zeros();
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            let plus = base.retract(&d).log();
            let minus = base.retract(&(-d)).log();
            j.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn se2_identity_and_composition() {
        let p = Pose2::new(1.5, -0.3, 2.0);
        assert_eq!(se_compose(&Pose2::identity(), &p), p);
        let c = se_compose(&Pose2::new(1.0, 0.0, PI / 2.0), &Pose2::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(c.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.theta, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn se2_log_exp_round_trip() {
        let v = Vector3::new(0.1, 0.2, 0.3);
        let back = se_log(&se_exp::<Pose2, 3>(&v));
        assert_abs_diff_eq!(back, v, epsilon = 1e-12);
    }

    #[test]
    fn angle_normalization_keeps_pi() {
        assert_abs_diff_eq!(normalize_angle(PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        let p = Pose2::new(0.0, 0.0, PI).compose(&Pose2::new(0.0, 0.0, PI));
        assert_abs_diff_eq!(p.theta, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn se2_log_at_half_turn() {
        let p = Pose2::new(0.3, -0.7, PI);
        let v = p.log();
        assert_abs_diff_eq!(v[2], PI, epsilon = 1e-15);
        let q = Pose2::exp(&v);
        assert_abs_diff_eq!(q.x, p.x, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, p.y, epsilon = 1e-12);
    }

    #[test]
    fn se3_log_exp_round_trip() {
        let v = Vector6::new(0.4, -0.2, 1.0, 0.3, -0.5, 0.2);
        let back = Pose3::exp(&v).log();
        assert_abs_diff_eq!(back, v, epsilon = 1e-12);
        let tiny = Vector6::new(1e-3, 0.0, 0.0, 1e-9, 0.0, 0.0);
        assert_abs_diff_eq!(Pose3::exp(&tiny).log(), tiny, epsilon = 1e-15);
    }

    #[test]
    fn se3_quaternion_is_canonical() {
        let p = Pose3::from_parts([0.0; 3], -0.5, 0.5, 0.5, 0.5);
        assert!(p.rotation.w >= 0.0);
        assert_abs_diff_eq!(p.rotation.norm(), 1.0, epsilon = 1e-12);
    }

    fn check_adjoint<G: LieGroup<N>, const N: usize>(a: G, v: SVector<f64, N>) {
        let lhs = a.compose(&G::exp(&v)).compose(&a.inverse()).log();
        let rhs = a.adjoint() * v;
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
    }

    #[test]
    fn adjoint_identity() {
        check_adjoint(Pose2::new(1.0, 2.0, 0.7), Vector3::new(0.1, -0.3, 0.2));
        check_adjoint(
            Pose3::exp(&Vector6::new(1.0, -2.0, 0.5, 0.2, 0.4, -0.1)),
            Vector6::new(0.1, 0.2, -0.1, 0.05, -0.02, 0.1),
        );
    }

    fn check_jr_inv<G: LieGroup<N>, const N: usize>(e: SVector<f64, N>) {
        let base = G::exp(&e);
        let jinv = G::right_jacobian_inv(&e);
        let h = 1e-6;
        for k in 0..N {
            let mut d = SVector::<f64, N>::zeros();
            d[k] = h;
            let fd = (base.retract(&d).log() - base.retract(&(-d)).log()) / (2.0 * h);
            assert_abs_diff_eq!(fd, jinv.column(k).into_owned(), epsilon = 1e-7);
        }
    }

    #[test]
    fn right_jacobian_inverse_matches_differences() {
        check_jr_inv::<Pose2, 3>(Vector3::new(0.5, -1.0, 1.2));
        check_jr_inv::<Pose2, 3>(Vector3::new(0.5, -1.0, 1e-8));
        check_jr_inv::<Pose3, 6>(Vector6::new(0.5, -1.0, 0.3, 0.3, -0.2, 0.9));
    }
}
