//! Planar rigid-body poses.
//!
//! A [`Pose2`] is an element of SE(2) stored as `(x, y, theta)`. Every
//! constructor and operation wraps the heading into `(-π, π]`, so two poses
//! that describe the same transform compare equal field by field.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("angle is not finite: {0}")]
    NonFiniteAngle(f64),
}

/// Wraps an angle into `(-π, π]`.
///
/// Rejects NaN and infinities.
pub fn normalize_angle(theta: f64) -> Result<f64, GeometryError> {
    if !theta.is_finite() {
        return Err(GeometryError::NonFiniteAngle(theta));
    }
    Ok(wrap_angle(theta))
}

/// Unchecked variant of [`normalize_angle`]; NaN passes through unchanged.
#[inline]
pub(crate) fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// SE(2) pose: translation in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.theta)
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    /// Returns `self ⊕ other`: `other` is expressed in this pose's frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Relative pose of `other` seen from `self`, i.e. `self⁻¹ ⊕ other`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }

    pub fn translation(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

pub fn inverse(a: &Pose2) -> Pose2 {
    a.inverse()
}

pub fn between(a: &Pose2, b: &Pose2) -> Pose2 {
    a.between(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Homogeneous-matrix representation, used as an independent oracle.
    fn to_matrix(p: &Pose2) -> [[f64; 3]; 3] {
        let (s, c) = p.theta.sin_cos();
        [[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]]
    }

    fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        out
    }

    fn from_matrix(m: &[[f64; 3]; 3]) -> Pose2 {
        Pose2::new(m[0][2], m[1][2], m[1][0].atan2(m[0][0]))
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        wrap_angle(a - b).abs()
    }

    fn assert_pose_close(a: &Pose2, b: &Pose2, tol: f64) {
        assert!(
            (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && angle_diff(a.theta, b.theta) < tol,
            "{a} vs {b}"
        );
    }

    fn pose() -> impl Strategy<Value = Pose2> {
        (-100.0..100.0f64, -100.0..100.0f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_angle(0.0).unwrap(), 0.0);
        assert!((normalize_angle(3.0 * PI).unwrap() - PI).abs() < 1e-12);
        assert_eq!(normalize_angle(-PI).unwrap(), PI);
        assert_eq!(normalize_angle(PI).unwrap(), PI);
        assert!(normalize_angle(f64::NAN).is_err());
        assert!(normalize_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn compose_examples() {
        let p = Pose2::new(1.0, 2.0, 0.3);
        assert_eq!(Pose2::identity().compose(&p), p);
        assert_eq!(p.compose(&Pose2::identity()), p);
        let q = Pose2::new(1.0, 0.0, PI / 2.0).compose(&Pose2::new(1.0, 0.0, 0.0));
        assert_pose_close(&q, &Pose2::new(1.0, 1.0, PI / 2.0), 1e-12);
    }

    #[test]
    fn inverse_and_between_examples() {
        assert_eq!(Pose2::identity().inverse(), Pose2::identity());
        assert_pose_close(&Pose2::new(1.0, 0.0, 0.0).inverse(), &Pose2::new(-1.0, 0.0, 0.0), 0.0 + 1e-15);
        let p = Pose2::new(3.0, -1.0, 2.0);
        assert_pose_close(&p.between(&p), &Pose2::identity(), 1e-12);
        assert_eq!(
            Pose2::identity().between(&Pose2::new(2.0, 0.0, 0.0)),
            Pose2::new(2.0, 0.0, 0.0)
        );
    }

    proptest! {
        #[test]
        fn compose_matches_matrix_product(a in pose(), b in pose()) {
            let oracle = from_matrix(&matmul(&to_matrix(&a), &to_matrix(&b)));
            assert_pose_close(&a.compose(&b), &oracle, 1e-9);
        }

        #[test]
        fn inverse_round_trip(a in pose()) {
            assert_pose_close(&a.compose(&a.inverse()), &Pose2::identity(), 1e-12);
        }

        #[test]
        fn between_round_trip(a in pose(), b in pose()) {
            assert_pose_close(&a.compose(&a.between(&b)), &b, 1e-9);
        }

        #[test]
        fn associativity(a in pose(), b in pose(), c in pose()) {
            assert_pose_close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-9);
        }

        #[test]
        fn theta_in_half_open_range(a in pose(), b in pose(), t in -1e6..1e6f64) {
            for p in [a.compose(&b), a.inverse(), a.between(&b)] {
                prop_assert!(p.theta > -PI && p.theta <= PI);
            }
            let w = normalize_angle(t).unwrap();
            prop_assert!(w > -PI && w <= PI);
            // Same residue mod 2π.
            let k = ((t - w) / TAU).round();
            prop_assert!((t - w - k * TAU).abs() < 1e-6);
        }
    }

    #[test]
    fn between_compose_ten_thousand_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let a = Pose2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-4.0..4.0));
            let b = Pose2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-4.0..4.0));
            assert_pose_close(&a.compose(&a.between(&b)), &b, 1e-9);
        }
    }
}
