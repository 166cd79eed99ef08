use super::Vec3;

/// A unit quaternion representing a 3D rotation. `q` and `-q` denote the
/// same rotation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }.normalized()
    }

    pub fn normalized(self) -> Self {
        let n = (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        debug_assert!(n > 0.0, "normalizing zero quaternion");
        Self {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    /// Rotation of `angle` radians about the (nonzero) `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let axis = axis.normalized();
        let (s, c) = (angle / 2.0).sin_cos();
        Self {
            w: c,
            x: axis.x * s,
            y: axis.y * s,
            z: axis.z * s,
        }
    }

    /// Exponential map of a rotation vector (axis * angle).
    /// Quaternion of the rotation whose matrix columns are the given
    /// orthonormal right-handed frame (`x.cross(y) == z`).
    pub fn from_basis(x: Vec3, y: Vec3, z: Vec3) -> Self {
        debug_assert!(x.cross(y).dot(z) > 0.9);
        let m = [[x.x, y.x, z.x], [x.y, y.y, z.y], [x.z, y.z, z.z]];
        let trace = m[0][0] + m[1][1] + m[2][2];
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self::new(
                s / 4.0,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Self::new(
                (m[2][1] - m[1][2]) / s,
                s / 4.0,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Self::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                s / 4.0,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Self::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                s / 4.0,
            )
        }
    }

    pub fn from_rotation_vector(v: Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            // first-order expansion near identity
            Self {
                w: 1.0,
                x: v.x / 2.0,
                y: v.y / 2.0,
                z: v.z / 2.0,
            }
            .normalized()
        } else {
            Self::from_axis_angle(v, angle)
        }
    }

    /// Logarithm map: the rotation vector whose exponential is `self`,
    /// with angle in [0, pi].
    pub fn to_rotation_vector(self) -> Vec3 {
        let q = if self.w < 0.0 { -self } else { self };
        let v = Vec3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-12 {
            v * 2.0
        } else {
            let angle = 2.0 * s.atan2(q.w);
            v * (angle / s)
        }
    }

    pub fn conjugate(self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(self, o: UnitQuat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Hamilton product `self * o`.
    pub fn mul(self, o: UnitQuat) -> Self {
        Self {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
        .normalized()
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    /// Canonical hemisphere representative (w >= 0).
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Rotation angle in [0, pi] between `self` and `o`, antipodally
    /// identified.
    pub fn angle_to(self, o: UnitQuat) -> f64 {
        let d = self.dot(o).abs().clamp(0.0, 1.0);
        2.0 * d.acos()
    }

    pub fn is_unit(self, tol: f64) -> bool {
        (self.dot(self) - 1.0).abs() <= tol
    }
}

impl std::ops::Neg for UnitQuat {
    type Output = UnitQuat;
    fn neg(self) -> UnitQuat {
        UnitQuat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// A rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose {
    pub rotation: UnitQuat,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: UnitQuat::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: UnitQuat, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuat::IDENTITY, t)
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// Composition: `(self * o).apply(p) == self.apply(o.apply(p))`.
    pub fn compose(&self, o: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul(o.rotation),
            translation: self.rotation.rotate(o.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rinv = self.rotation.conjugate();
        Pose {
            rotation: rinv,
            translation: -rinv.rotate(self.translation),
        }
    }

    /// Pose as the flat `[qw, qx, qy, qz, tx, ty, tz]` convention used in
    /// demonstration and grasp files.
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.rotation.w,
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Pose {
            rotation: UnitQuat::new(a[0], a[1], a[2], a[3]),
            translation: Vec3::new(a[4], a[5], a[6]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_then_inverse_is_identity() {
        let a = Pose::new(
            UnitQuat::from_axis_angle(Vec3::new(1.0, 2.0, -0.5), 0.7),
            Vec3::new(0.1, -0.2, 0.3),
        );
        let id = a.inverse().compose(&a);
        assert!(id.translation.norm() < 1e-9);
        assert!(id.rotation.angle_to(UnitQuat::IDENTITY) < 1e-9);
    }

    #[test]
    fn composition_associative() {
        let a = Pose::new(UnitQuat::from_axis_angle(Vec3::X, 0.3), Vec3::new(1.0, 0.0, 0.0));
        let b = Pose::new(UnitQuat::from_axis_angle(Vec3::Y, -1.1), Vec3::new(0.0, 2.0, 0.0));
        let c = Pose::new(UnitQuat::from_axis_angle(Vec3::Z, 2.0), Vec3::new(0.0, 0.0, -1.0));
        let p = Vec3::new(0.3, -0.4, 0.5);
        let lhs = a.compose(&b).compose(&c).apply(p);
        let rhs = a.compose(&b.compose(&c)).apply(p);
        assert!((lhs - rhs).norm() < 1e-9);
    }

    #[test]
    fn log_exp_roundtrip() {
        let q = UnitQuat::from_axis_angle(Vec3::new(0.2, -1.0, 0.4), 1.9);
        // acos near 1 limits angle_to resolution to ~1e-8
        let back = UnitQuat::from_rotation_vector(q.to_rotation_vector());
        assert!(q.angle_to(back) < 1e-7);
        // antipode maps to the same rotation vector
        let back2 = UnitQuat::from_rotation_vector((-q).to_rotation_vector());
        assert!(q.angle_to(back2) < 1e-7);
    }

    #[test]
    fn rotate_matches_axis_angle() {
        let q = UnitQuat::from_axis_angle(Vec3::Z, std::f64::consts::FRAC_PI_2);
        let r = q.rotate(Vec3::X);
        assert!((r - Vec3::Y).norm() < 1e-12);
    }
}
