//! Model-based gaze: unproject the pupil ellipse to a 3D circle and map its
//! normal to gaze angles through a five-point axis calibration.
//!
//! All 3D quantities live in the camera frame (x right, y down, z forward, mm).

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2};
use thiserror::Error;

use crate::camera::Camera;
use crate::eye::EyePose;
use crate::optics::Vec3;
use crate::projection::Ellipse;
use crate::scene::Scene;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GeometricError {
    #[error("ellipse cone is degenerate (eigenvalue signs {0:?})")]
    DegenerateCone([f64; 3]),
    #[error("pupil radius must be positive, got {0}")]
    Radius(f64),
    #[error("calibration normals {0} and {1} are parallel")]
    DegenerateCalibration(&'static str, &'static str),
    #[error("calibration needs poses (0,0), (±20,0), (0,±20); missing {0}")]
    MissingPose(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleCandidate {
    pub center: Vec3,
    /// Unit normal facing the camera.
    pub normal: Vec3,
    pub radius: f64,
}

/// Cone through the pinhole and the image ellipse, in the camera frame.
fn ellipse_cone(e: &Ellipse, camera: &Camera) -> Matrix3<f64> {
    let [a, b, c, d, ee, f] = e.conic();
    let m = Matrix3::new(a, 0.5 * b, 0.5 * d, 0.5 * b, c, 0.5 * ee, 0.5 * d, 0.5 * ee, f);
    let pp = camera.principal_point();
    let k = Matrix3::new(camera.focal_px, 0.0, pp.u, 0.0, camera.focal_px, pp.v, 0.0, 0.0, 1.0);
    let q = k.transpose() * m * k;
    // Scale-free: normalize for conditioning.
    q / q.norm()
}

/// The two 3D circles of radius `pupil_radius` whose projection is `e`.
pub fn unproject_ellipse(e: &Ellipse, camera: &Camera, pupil_radius: f64) -> Result<[CircleCandidate; 2], GeometricError> {
    if !(pupil_radius > 0.0) {
        return Err(GeometricError::Radius(pupil_radius));
    }
    let mut q = ellipse_cone(e, camera);
    let eig = SymmetricEigen::new(q);
    let positives = eig.eigenvalues.iter().filter(|l| **l > 0.0).count();
    let sorted = |v: &nalgebra::Vector3<f64>| [v[0], v[1], v[2]];
    let eig = match positives {
        2 => eig,
        1 => {
            q = -q;
            SymmetricEigen::new(q)
        }
        _ => return Err(GeometricError::DegenerateCone(sorted(&eig.eigenvalues))),
    };
    // Order: l1 ≥ l2 > 0 > l3.
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let (l1, l2, l3) = (eig.eigenvalues[idx[0]], eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    if !(l2 > 0.0 && l3 < 0.0) {
        return Err(GeometricError::DegenerateCone([l1, l2, l3]));
    }
    let e1: Vec3 = eig.eigenvectors.column(idx[0]).into();
    let e2: Vec3 = eig.eigenvectors.column(idx[1]).into();
    let e3: Vec3 = eig.eigenvectors.column(idx[2]).into();

    // On the cone, l2·|X|² = −(a x − b z)(a x + b z) in the eigenframe, so
    // planes a x ∓ b z = const cut it in circles.
    let a = (l1 - l2).max(0.0).sqrt();
    let b = (l2 - l3).sqrt();
    let s = (l1 - l3).sqrt();
    let candidate = |sign: f64| {
        let n_eig = Vec3::new(a / s, 0.0, -sign * b / s);
        let w_eig = Vec3::new(a, 0.0, sign * b);
        let to_cam = |v: &Vec3| e1 * v.x + e2 * v.y + e3 * v.z;
        let n = to_cam(&n_eig);
        let w = to_cam(&w_eig);
        // Sphere through the pinhole that meets the plane n·X = 1 in the circle.
        let sphere_center = -w * (s / (2.0 * l2));
        let sphere_radius = s * s / (2.0 * l2);
        let off = n.dot(&sphere_center) - 1.0;
        let c1 = sphere_center - n * off;
        let rho1 = (sphere_radius * sphere_radius - off * off).max(0.0).sqrt();
        let mut scale = pupil_radius / rho1;
        if c1.z * scale < 0.0 {
            scale = -scale;
        }
        let center = c1 * scale;
        let normal = if n.dot(&-center) > 0.0 { n } else { -n };
        CircleCandidate { center, normal, radius: pupil_radius }
    };
    Ok([candidate(1.0), candidate(-1.0)])
}

/// Picks the candidate whose normal points away from the eyeball center.
pub fn disambiguate(cands: &[CircleCandidate; 2], eyeball_center_estimate: &Vec3) -> CircleCandidate {
    let score = |c: &CircleCandidate| c.normal.dot(&(c.center - eyeball_center_estimate));
    if score(&cands[1]) > score(&cands[0]) {
        cands[1]
    } else {
        cands[0]
    }
}

/// Unprojects and disambiguates a pupil ellipse using the scene's eye center.
pub fn pupil_circle(scene: &Scene, e: &Ellipse) -> Result<CircleCandidate, GeometricError> {
    let cands = unproject_ellipse(e, &scene.camera, scene.eye.pupil_radius)?;
    let eye_center = scene.camera.to_camera_frame(&scene.eye.center());
    Ok(disambiguate(&cands, &eye_center))
}

/// Frame and per-quadrant angular maps from the five calibration normals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisCalibration {
    pub origin_normal: Vec3,
    pub h_axis: Vec3,
    pub v_axis: Vec3,
    /// Angular scale for negative and positive raw horizontal angles.
    pub h_scale: [f64; 2],
    pub v_scale: [f64; 2],
    /// Raw angles (degrees) of the (+20,0), (0,+20), (−20,0), (0,−20) normals.
    pub anchors: [Vector2<f64>; 4],
    /// Degrees assigned to the anchors.
    pub targets: [Vector2<f64>; 4],
}

const CAL_ANGLE: f64 = 20.0;

fn find(obs: &[(EyePose, CircleCandidate)], h: f64, v: f64, name: &'static str) -> Result<Vec3, GeometricError> {
    obs.iter()
        .find(|(p, _)| p.theta_h == h && p.theta_v == v)
        .map(|(_, c)| c.normal)
        .ok_or(GeometricError::MissingPose(name))
}

impl AxisCalibration {
    /// Fick-style angles of `n` in the calibrated frame, degrees.
    pub fn raw_angles(&self, n: &Vec3) -> Vector2<f64> {
        let (x, y, z) = (n.dot(&self.h_axis), n.dot(&self.v_axis), n.dot(&self.origin_normal));
        Vector2::new(x.atan2(z).to_degrees(), (y / n.norm()).clamp(-1.0, 1.0).asin().to_degrees())
    }
}

pub fn calibrate_axes(obs: &[(EyePose, CircleCandidate)]) -> Result<AxisCalibration, GeometricError> {
    let c = CAL_ANGLE;
    let named = [
        ("(0,0)", find(obs, 0.0, 0.0, "(0,0)")?),
        ("(+20,0)", find(obs, c, 0.0, "(+20,0)")?),
        ("(-20,0)", find(obs, -c, 0.0, "(-20,0)")?),
        ("(0,+20)", find(obs, 0.0, c, "(0,+20)")?),
        ("(0,-20)", find(obs, 0.0, -c, "(0,-20)")?),
    ];
    for i in 0..5 {
        for j in i + 1..5 {
            if named[i].1.normalize().cross(&named[j].1.normalize()).norm() < 1e-6 {
                return Err(GeometricError::DegenerateCalibration(named[i].0, named[j].0));
            }
        }
    }
    let [o, hp, hm, vp, vm] = named.map(|(_, n)| n.normalize());
    let h_raw = hp - hm;
    let h_axis = (h_raw - o * h_raw.dot(&o)).normalize();
    let v_raw = vp - vm;
    let v_axis = (v_raw - o * v_raw.dot(&o) - h_axis * v_raw.dot(&h_axis)).normalize();
    let mut cal = AxisCalibration {
        origin_normal: o,
        h_axis,
        v_axis,
        h_scale: [1.0; 2],
        v_scale: [1.0; 2],
        anchors: [Vector2::zeros(); 4],
        targets: [
            Vector2::new(c, 0.0),
            Vector2::new(0.0, c),
            Vector2::new(-c, 0.0),
            Vector2::new(0.0, -c),
        ],
    };
    cal.anchors = [hp, vp, hm, vm].map(|n| cal.raw_angles(&n));
    cal.h_scale = [c / -cal.anchors[2].x, c / cal.anchors[0].x];
    cal.v_scale = [c / -cal.anchors[3].y, c / cal.anchors[1].y];
    for k in 0..4 {
        let m = Matrix2::from_columns(&[cal.anchors[k], cal.anchors[(k + 1) % 4]]);
        if m.determinant().abs() < 1e-12 {
            return Err(GeometricError::DegenerateCalibration("quadrant", "anchors"));
        }
    }
    Ok(cal)
}

/// Gaze angles (degrees) of an observed pupil circle.
///
/// The raw angles are expressed in the cone spanned by the two neighbouring
/// calibration anchors and mapped linearly onto their target angles. Along the
/// axes this reduces to the per-axis scales.
pub fn predict_geometric(obs: &CircleCandidate, cal: &AxisCalibration) -> (f64, f64) {
    let r = cal.raw_angles(&obs.normal);
    let mut best: Option<(f64, Vector2<f64>)> = None;
    for k in 0..4 {
        let (a, b) = (cal.anchors[k], cal.anchors[(k + 1) % 4]);
        let m = Matrix2::from_columns(&[a, b]);
        let Some(w) = m.lu().solve(&r) else { continue };
        let margin = w.x.min(w.y);
        if best.as_ref().is_none_or(|(m0, _)| margin > *m0) {
            best = Some((margin, cal.targets[k] * w.x + cal.targets[(k + 1) % 4] * w.y));
        }
    }
    let out = best.map_or(Vector2::zeros(), |(_, v)| v);
    (out.x, out.y)
}
