//! Pinhole camera.
//!
//! Image coordinates: `u` grows to the right, `v` grows downward, pixel
//! `(i, j)` covers `[i, i+1) × [j, j+1)`. The camera frame used for
//! unprojection follows the same convention: x right, y down, z forward.

use serde::{Deserialize, Serialize};

use crate::optics::{Ray, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        ImagePoint { u, v }
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub focal_px: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    /// Camera at `position` looking at `target`, rolled so that `world_up`
    /// projects upward in the image.
    pub fn look_at(position: Vec3, target: Vec3, world_up: Vec3, focal_px: f64, width: u32, height: u32) -> Self {
        let forward = (target - position).normalize();
        let right = forward.cross(&world_up).normalize();
        let up = right.cross(&forward);
        Camera { position, right, up, forward, focal_px, width, height }
    }

    pub fn principal_point(&self) -> ImagePoint {
        ImagePoint::new(0.5 * self.width as f64, 0.5 * self.height as f64)
    }

    /// World point in the camera frame (x right, y down, z forward).
    pub fn to_camera_frame(&self, p: &Vec3) -> Vec3 {
        self.direction_to_camera_frame(&(p - self.position))
    }

    pub fn direction_to_camera_frame(&self, d: &Vec3) -> Vec3 {
        Vec3::new(d.dot(&self.right), -d.dot(&self.up), d.dot(&self.forward))
    }

    pub fn direction_from_camera_frame(&self, d: &Vec3) -> Vec3 {
        self.right * d.x - self.up * d.y + self.forward * d.z
    }

    /// Image of a world-space viewing direction (from the pinhole outward).
    pub fn project_direction(&self, d: &Vec3) -> Option<ImagePoint> {
        let c = self.direction_to_camera_frame(d);
        if c.z <= 0.0 {
            return None;
        }
        let pp = self.principal_point();
        Some(ImagePoint::new(pp.u + self.focal_px * c.x / c.z, pp.v + self.focal_px * c.y / c.z))
    }

    /// Whether `p` falls on the sensor.
    pub fn in_frame(&self, p: &ImagePoint) -> bool {
        (0.0..self.width as f64).contains(&p.u) && (0.0..self.height as f64).contains(&p.v)
    }

    /// Straight-line pinhole projection.
    pub fn project_point(&self, p: &Vec3) -> Option<ImagePoint> {
        self.project_direction(&(p - self.position))
    }

    /// Viewing direction through image point `(u, v)`.
    pub fn direction_through(&self, u: f64, v: f64) -> Vec3 {
        let pp = self.principal_point();
        let c = Vec3::new((u - pp.u) / self.focal_px, (v - pp.v) / self.focal_px, 1.0);
        self.direction_from_camera_frame(&c).normalize()
    }

    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        Ray { origin: self.position, direction: self.direction_through(u, v) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::look_at(Vec3::new(0.0, -25.0, 35.0), Vec3::zeros(), Vec3::y(), 1400.0, 640, 480)
    }

    #[test]
    fn target_projects_to_principal_point() {
        let c = cam();
        let p = c.project_point(&Vec3::zeros()).unwrap();
        assert!(p.distance(&c.principal_point()) < 1e-9);
    }

    #[test]
    fn orientation() {
        let c = cam();
        // +x world appears right, +y world appears up (smaller v).
        let o = c.project_point(&Vec3::zeros()).unwrap();
        let px = c.project_point(&Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let py = c.project_point(&Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert!(px.u > o.u && (px.v - o.v).abs() < 1e-9);
        assert!(py.v < o.v);
    }

    #[test]
    fn direction_roundtrip() {
        let c = cam();
        for (u, v) in [(0.0, 0.0), (320.0, 240.0), (611.5, 17.25)] {
            let d = c.direction_through(u, v);
            let p = c.project_direction(&d).unwrap();
            assert!((p.u - u).abs() < 1e-9 && (p.v - v).abs() < 1e-9);
        }
    }

    #[test]
    fn frame_bounds() {
        let c = cam();
        assert!(c.in_frame(&ImagePoint::new(0.0, 0.0)));
        assert!(c.in_frame(&ImagePoint::new(639.99, 479.99)));
        assert!(!c.in_frame(&ImagePoint::new(640.0, 10.0)));
        assert!(!c.in_frame(&ImagePoint::new(10.0, -0.5)));
    }
}
