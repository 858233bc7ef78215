//! Rigid transforms shared by the coupling and camera code.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_axis_angle(rotation_vector: Vector3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: *Rotation3::new(rotation_vector).matrix(),
            translation,
        }
    }

    pub fn rotation_z(angle: f64) -> Self {
        RigidTransform::from_axis_angle(Vector3::z() * angle, Vector3::zeros())
    }

    pub fn translation_z(dz: f64) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::new(0.0, 0.0, dz),
        }
    }

    /// Camera-to-world pose of a camera at `eye` looking at `target`, using
    /// the x-right / y-down / z-forward camera convention.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Option<Self> {
        let forward = (target - eye).try_normalize(1e-12)?;
        let right = forward.cross(&up).try_normalize(1e-12)?;
        let down = forward.cross(&right);
        Some(RigidTransform {
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation: eye,
        })
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation angle in radians, accurate for tiny rotations.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    pub fn is_proper_rotation(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    /// Homogeneous 4x4 matrix, row-major.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.rotation - other.rotation)
            .abs()
            .max()
            .max((self.translation - other.translation).abs().max())
    }
}

/// Angle of a rotation matrix via `atan2`, which stays accurate near zero
/// where `acos` of the trace does not.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let cos = (r.trace() - 1.0) / 2.0;
    (skew.norm() / 2.0).atan2(cos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_angles_resolved() {
        for angle in [1e-12, 1e-9, 1e-3, 1.0, 3.0] {
            let t = RigidTransform::from_axis_angle(Vector3::new(1.0, 2.0, -0.5).normalize() * angle, Vector3::zeros());
            assert_abs_diff_eq!(t.rotation_angle(), angle, epsilon = 1e-15 + angle * 1e-12);
        }
    }

    #[test]
    fn look_at_points_camera_z_at_target() {
        let eye = Vector3::new(10.0, -200.0, 50.0);
        let pose = RigidTransform::look_at(eye, Vector3::zeros(), Vector3::z()).unwrap();
        assert!(pose.is_proper_rotation(1e-12));
        let forward = pose.apply_vector(&Vector3::z());
        assert_abs_diff_eq!(forward, -eye.normalize(), epsilon = 1e-12);
        // image "down" has a negative world-Z component
        assert!(pose.apply_vector(&Vector3::y()).z < 0.0);
        assert!(RigidTransform::look_at(eye, eye, Vector3::z()).is_none());
    }

    #[test]
    fn inverse_and_compose() {
        let t = RigidTransform::from_axis_angle(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let id = t.compose(&t.inverse());
        assert!(id.max_abs_diff(&RigidTransform::identity()) < 1e-14);
        let m = t.to_row_major();
        assert_eq!(m[3], 1.0);
        assert_eq!(m[15], 1.0);
    }
}
