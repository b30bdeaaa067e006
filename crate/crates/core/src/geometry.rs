//! Planar rigid-body poses.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid maps -π to +π already; guard the case 2π - ε rounding to π + tiny
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// An SE(2) pose: position in meters plus heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// `self ⊕ other`: applies `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.heading.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.heading + other.heading,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.heading.sin_cos();
        Pose2::new(-c * self.x - s * self.y, s * self.x - c * self.y, -self.heading)
    }

    /// Pose of `other` expressed in the frame of `self` (`self⁻¹ ⊕ other`).
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Maps a parent-frame point into this pose's local frame.
    pub fn inverse_transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_keeps_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.1 - 2.0 * PI) - 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(
            x in -50.0f64..50.0, y in -50.0f64..50.0, h in -10.0f64..10.0
        ) {
            let p = Pose2::new(x, y, h);
            let id = p.compose(&p.inverse());
            prop_assert!(id.x.abs() < 1e-12 && id.y.abs() < 1e-12);
            prop_assert!(wrap_angle(id.heading).abs() < 1e-12);
            let id2 = p.inverse().compose(&p);
            prop_assert!(id2.translation_norm() < 1e-12);
        }

        #[test]
        fn point_round_trip(
            x in -20.0f64..20.0, y in -20.0f64..20.0, h in -4.0f64..4.0,
            px in -30.0f64..30.0, py in -30.0f64..30.0
        ) {
            let p = Pose2::new(x, y, h);
            let q = p.inverse_transform_point(p.transform_point([px, py]));
            prop_assert!((q[0] - px).abs() < 1e-10 && (q[1] - py).abs() < 1e-10);
        }
    }
}
