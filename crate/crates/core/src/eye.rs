//! Schematic eye: a scleral sphere with a refracting corneal cap, and a pupil
//! disc that rotates with gaze about the eyeball center.
//!
//! Eye frame: +z is the primary gaze direction, +y up, +x toward positive
//! horizontal gaze angles.

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::optics::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EyeGeometry {
    pub eyeball_center: [f64; 3],
    pub eyeball_radius: f64,
    pub cornea_radius: f64,
    /// Corneal sphere center, anterior of the eyeball center along the gaze axis.
    pub cornea_center_offset: f64,
    pub cornea_index: f64,
    pub pupil_radius: f64,
    /// Pupil disc center, anterior of the eyeball center along the gaze axis.
    pub pupil_plane_offset: f64,
}

impl Default for EyeGeometry {
    fn default() -> Self {
        EyeGeometry {
            eyeball_center: [0.0; 3],
            eyeball_radius: 12.0,
            cornea_radius: 7.8,
            cornea_center_offset: 5.6,
            cornea_index: 1.336,
            pupil_radius: 2.0,
            pupil_plane_offset: 9.6,
        }
    }
}

impl EyeGeometry {
    pub fn center(&self) -> Vec3 {
        Vec3::from(self.eyeball_center)
    }

    pub fn cornea_center(&self, pose: &EyePose) -> Vec3 {
        self.center() + gaze_direction(pose) * self.cornea_center_offset
    }

    pub fn cornea_apex(&self, pose: &EyePose) -> Vec3 {
        self.center() + gaze_direction(pose) * (self.cornea_center_offset + self.cornea_radius)
    }

    pub fn pupil_center(&self, pose: &EyePose) -> Vec3 {
        self.center() + gaze_direction(pose) * self.pupil_plane_offset
    }

    /// Outer radius of the iris disc: where the pupil plane meets the sclera.
    pub fn iris_radius(&self) -> f64 {
        let r2 = self.eyeball_radius.powi(2) - self.pupil_plane_offset.powi(2);
        r2.max(0.0).sqrt()
    }

    /// Distance along the gaze axis of the limbus plane (cornea/sclera junction).
    pub fn limbus_offset(&self) -> f64 {
        let (r, rc, c) = (self.eyeball_radius, self.cornea_radius, self.cornea_center_offset);
        (r * r - rc * rc + c * c) / (2.0 * c)
    }

    /// True if `p` lies on the visible corneal cap (outside the scleral sphere).
    pub fn on_corneal_cap(&self, p: &Vec3) -> bool {
        (p - self.center()).norm() >= self.eyeball_radius - 1e-9
    }

    /// Every violated invariant, as a human-readable message.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, value) in [
            ("eye.eyeball_radius", self.eyeball_radius),
            ("eye.cornea_radius", self.cornea_radius),
            ("eye.pupil_radius", self.pupil_radius),
            ("eye.cornea_index", self.cornea_index),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                v.push(format!("{name} must be positive and finite (got {value})"));
            }
        }
        if self.cornea_index < 1.0 {
            v.push(format!("eye.cornea_index must be >= 1 (got {})", self.cornea_index));
        }
        if self.cornea_center_offset + self.cornea_radius <= self.eyeball_radius {
            v.push("cornea must bulge past the scleral sphere (cornea_center_offset + cornea_radius > eyeball_radius)".into());
        }
        if self.cornea_center_offset <= 0.0 {
            v.push("eye.cornea_center_offset must be positive".into());
        }
        // The pupil rim must lie strictly inside the corneal sphere.
        let rim = Vec3::new(self.pupil_radius, 0.0, self.pupil_plane_offset - self.cornea_center_offset);
        if rim.norm() >= self.cornea_radius {
            v.push("pupil circle must lie strictly behind the corneal surface".into());
        }
        if self.pupil_radius >= self.iris_radius() {
            v.push("eye.pupil_radius must be smaller than the iris radius at the pupil plane".into());
        }
        v
    }
}

/// Gaze as horizontal and vertical rotation angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyePose {
    pub theta_h: f64,
    pub theta_v: f64,
}

impl EyePose {
    pub const PRIMARY: EyePose = EyePose { theta_h: 0.0, theta_v: 0.0 };

    pub fn new(theta_h: f64, theta_v: f64) -> Self {
        EyePose { theta_h, theta_v }
    }

    pub fn is_valid(&self) -> bool {
        self.theta_h.abs() <= 45.0 && self.theta_v.abs() <= 45.0
    }

    /// Fick rotation: about the vertical axis by `theta_h`, then about the
    /// rotated horizontal axis by `theta_v` (positive looks up).
    pub fn rotation(&self) -> Rotation3<f64> {
        let yaw = Rotation3::from_axis_angle(&Vec3::y_axis(), self.theta_h.to_radians());
        let pitch = Rotation3::from_axis_angle(&Vec3::x_axis(), -self.theta_v.to_radians());
        yaw * pitch
    }
}

/// Unit gaze vector in the eye frame.
pub fn gaze_direction(pose: &EyePose) -> Vec3 {
    let (h, v) = (pose.theta_h.to_radians(), pose.theta_v.to_radians());
    Vec3::new(v.cos() * h.sin(), v.sin(), v.cos() * h.cos())
}

/// Inverse of [`gaze_direction`] for a unit vector in the eye frame.
pub fn fick_angles(d: &Vec3) -> (f64, f64) {
    let d = d.normalize();
    (d.x.atan2(d.z).to_degrees(), d.y.clamp(-1.0, 1.0).asin().to_degrees())
}

/// `k` points evenly spaced on the 3D pupil rim, starting on the rotated
/// horizontal axis and proceeding toward the rotated vertical axis.
pub fn pupil_contour(pose: &EyePose, eye: &EyeGeometry, k: usize) -> Vec<Vec3> {
    let rot = pose.rotation();
    let a = rot * Vec3::x();
    let b = rot * Vec3::y();
    let center = eye.pupil_center(pose);
    (0..k)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / k as f64;
            center + (a * phi.cos() + b * phi.sin()) * eye.pupil_radius
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::angle_between;

    #[test]
    fn primary_and_horizontal() {
        assert!((gaze_direction(&EyePose::PRIMARY) - Vec3::z()).norm() < 1e-15);
        let g = gaze_direction(&EyePose::new(20.0, 0.0));
        let t = 20f64.to_radians();
        assert!((g - Vec3::new(t.sin(), 0.0, t.cos())).norm() < 1e-15);
    }

    #[test]
    fn diagonal_angle_from_composed_rotations() {
        // Independent route: compose elementary rotations about fixed axes
        // (vertical first, then about the rotated horizontal axis).
        let h = Rotation3::from_axis_angle(&Vec3::y_axis(), 20f64.to_radians());
        let rotated_x = nalgebra::Unit::new_normalize(h * Vec3::x());
        let v = Rotation3::from_axis_angle(&rotated_x, -20f64.to_radians());
        let expected = v * h * Vec3::z();
        let g = gaze_direction(&EyePose::new(20.0, 20.0));
        assert!((g - expected).norm() < 1e-14);
        let angle = angle_between(&g, &Vec3::z()).to_degrees();
        // cos(angle) = cos(h)·cos(v) for Fick angles.
        let closed = (20f64.to_radians().cos().powi(2)).acos().to_degrees();
        assert!((angle - closed).abs() < 1e-12);
        assert!((angle - 27.990_890_7).abs() < 1e-6, "{angle}");
    }

    #[test]
    fn rotation_matches_gaze_direction() {
        for (h, v) in [(0.0, 0.0), (13.0, -7.0), (-20.0, 20.0), (44.0, 3.0)] {
            let p = EyePose::new(h, v);
            assert!((p.rotation() * Vec3::z() - gaze_direction(&p)).norm() < 1e-14);
            let (hh, vv) = fick_angles(&gaze_direction(&p));
            assert!((hh - h).abs() < 1e-12 && (vv - v).abs() < 1e-12);
        }
    }

    #[test]
    fn mirror_symmetry() {
        for (h, v) in [(5.0, 7.0), (20.0, -20.0), (-13.0, 2.0)] {
            let a = gaze_direction(&EyePose::new(h, v));
            let b = gaze_direction(&EyePose::new(-h, -v));
            assert!((Vec3::new(-a.x, -a.y, a.z) - b).norm() < 1e-15);
        }
    }

    #[test]
    fn contour_primary_k4() {
        let eye = EyeGeometry::default();
        let pts = pupil_contour(&EyePose::PRIMARY, &eye, 4);
        let c = eye.pupil_center(&EyePose::PRIMARY);
        let expected = [Vec3::x(), Vec3::y(), -Vec3::x(), -Vec3::y()];
        for (p, e) in pts.iter().zip(expected) {
            assert!((p - (c + e * 2.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn contour_on_circle_in_plane() {
        let eye = EyeGeometry::default();
        for k in [3, 7, 10] {
            let pose = EyePose::new(20.0, 0.0);
            let c = eye.pupil_center(&pose);
            let g = gaze_direction(&pose);
            for p in pupil_contour(&pose, &eye, k) {
                assert!(((p - c).norm() - eye.pupil_radius).abs() < 1e-12);
                assert!((p - c).dot(&g).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contour_centroid_for_even_k() {
        let eye = EyeGeometry::default();
        let pose = EyePose::new(-12.0, 17.0);
        for k in [4, 10, 16] {
            let pts = pupil_contour(&pose, &eye, k);
            let centroid = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / k as f64;
            assert!((centroid - eye.pupil_center(&pose)).norm() < 1e-12);
        }
    }

    #[test]
    fn default_eye_is_consistent() {
        let eye = EyeGeometry::default();
        assert!(eye.violations().is_empty(), "{:?}", eye.violations());
        assert!(eye.limbus_offset() > eye.pupil_plane_offset);
    }
}
