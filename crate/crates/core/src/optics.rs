//! Vector geometry and physical-optics primitives.
//!
//! Lengths are millimeters, wavelengths micrometers, angles radians.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Distance a ray origin is advanced along its new direction after a surface
/// interaction, so the next intersection query does not re-hit the same surface.
pub const SURFACE_EPSILON: f64 = 1e-6;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum OpticsError {
    #[error("wavelength {wavelength} µm hits a Sellmeier pole (C = {pole} µm²)")]
    SellmeierPole { wavelength: f64, pole: f64 },
    #[error("wavelength {0} µm outside the supported range [0.3, 2.0]")]
    WavelengthRange(f64),
    #[error("Sellmeier index is not real at {0} µm")]
    ComplexIndex(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Ray { origin, direction: direction.normalize() }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Ray leaving `point` in `direction`, nudged off the surface it starts on.
    pub fn spawn(point: Vec3, direction: Vec3) -> Self {
        let direction = direction.normalize();
        Ray { origin: point + direction * SURFACE_EPSILON, direction }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub t: f64,
    pub point: Vec3,
    /// Unit normal facing the incoming ray.
    pub normal: Vec3,
}

/// Refractive index model of an optical material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialIndex {
    Constant { n: f64 },
    /// `n² = 1 + Σ Bᵢλ²/(λ² − Cᵢ)`, λ in µm, C in µm².
    Sellmeier { b: [f64; 3], c: [f64; 3] },
}

impl MaterialIndex {
    /// Schott N-BK7 catalog coefficients.
    pub const N_BK7: MaterialIndex = MaterialIndex::Sellmeier {
        b: [1.039_612_12, 0.231_792_344, 1.010_469_45],
        c: [0.006_000_698_67, 0.020_017_914_4, 103.560_653],
    };

    pub fn index_at(&self, wavelength_um: f64) -> Result<f64, OpticsError> {
        sellmeier_index(self, wavelength_um)
    }
}

impl Default for MaterialIndex {
    fn default() -> Self {
        MaterialIndex::N_BK7
    }
}

/// Snell refraction of unit direction `d` at a surface with unit normal `n`
/// facing the incoming ray. `None` on total internal reflection.
pub fn refract(d: &Vec3, n: &Vec3, n1: f64, n2: f64) -> Option<Vec3> {
    let eta = n1 / n2;
    let cos_i = -d.dot(n);
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i).max(0.0);
    if sin2_t > 1.0 {
        return None;
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    let t = d * eta + n * (eta * cos_i - cos_t);
    Some(t.normalize())
}

/// Mirror reflection of `d` about the unit normal `n`.
pub fn reflect(d: &Vec3, n: &Vec3) -> Vec3 {
    (d - n * (2.0 * d.dot(n))).normalize()
}

/// Unpolarized Fresnel reflectance for a ray arriving from medium `n1` into `n2`.
pub fn fresnel_reflectance(cos_i: f64, n1: f64, n2: f64) -> f64 {
    let cos_i = cos_i.clamp(0.0, 1.0);
    let eta = n1 / n2;
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i);
    if sin2_t >= 1.0 {
        return 1.0;
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    let rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t);
    let rp = (n2 * cos_i - n1 * cos_t) / (n2 * cos_i + n1 * cos_t);
    (0.5 * (rs * rs + rp * rp)).clamp(0.0, 1.0)
}

pub fn sellmeier_index(m: &MaterialIndex, wavelength_um: f64) -> Result<f64, OpticsError> {
    match *m {
        MaterialIndex::Constant { n } => Ok(n),
        MaterialIndex::Sellmeier { b, c } => {
            if !(0.3..=2.0).contains(&wavelength_um) {
                return Err(OpticsError::WavelengthRange(wavelength_um));
            }
            let l2 = wavelength_um * wavelength_um;
            let mut n2 = 1.0;
            for (bi, ci) in b.iter().zip(c.iter()) {
                let denom = l2 - ci;
                if denom == 0.0 {
                    return Err(OpticsError::SellmeierPole { wavelength: wavelength_um, pole: *ci });
                }
                n2 += bi * l2 / denom;
            }
            if n2 <= 0.0 {
                return Err(OpticsError::ComplexIndex(wavelength_um));
            }
            Ok(n2.sqrt())
        }
    }
}

/// All forward intersections (t > 0) of `r` with a sphere, ascending in `t`.
/// Normals face the incoming ray.
pub fn intersect_sphere(r: &Ray, center: &Vec3, radius: f64) -> Vec<SurfaceHit> {
    let oc = r.origin - center;
    let b = oc.dot(&r.direction);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // Numerically stable pair of roots.
    let q = if b > 0.0 { -b - sq } else { -b + sq };
    let (mut t0, mut t1) = if q != 0.0 { (q, c / q) } else { (-b, -b) };
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    let mut hits = Vec::with_capacity(2);
    for t in [t0, t1] {
        if t > 0.0 {
            if hits.iter().any(|h: &SurfaceHit| h.t == t) {
                continue;
            }
            let point = r.at(t);
            let outward = (point - center) / radius;
            let normal = if outward.dot(&r.direction) > 0.0 { -outward } else { outward };
            hits.push(SurfaceHit { t, point, normal: normal.normalize() });
        }
    }
    hits
}

pub fn intersect_plane(r: &Ray, point: &Vec3, normal: &Vec3) -> Option<SurfaceHit> {
    let denom = r.direction.dot(normal);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = (point - r.origin).dot(normal) / denom;
    if t <= 0.0 {
        return None;
    }
    let n = if denom > 0.0 { -normal } else { *normal };
    Some(SurfaceHit { t, point: r.at(t), normal: n })
}

/// Forward intersections with an infinite cylinder of `radius` around the line
/// through `axis_point` with unit direction `axis`.
pub(crate) fn intersect_cylinder(r: &Ray, axis_point: &Vec3, axis: &Vec3, radius: f64) -> Vec<SurfaceHit> {
    let oc = r.origin - axis_point;
    let d_perp = r.direction - axis * r.direction.dot(axis);
    let o_perp = oc - axis * oc.dot(axis);
    let a = d_perp.norm_squared();
    if a < 1e-18 {
        return Vec::new();
    }
    let b = o_perp.dot(&d_perp);
    let c = o_perp.norm_squared() - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    let mut hits = Vec::with_capacity(2);
    for t in [(-b - sq) / a, (-b + sq) / a] {
        if t > 0.0 {
            let point = r.at(t);
            let rel = point - axis_point;
            let mut outward = rel - axis * rel.dot(axis);
            outward /= radius;
            let normal = if outward.dot(&r.direction) > 0.0 { -outward } else { outward };
            hits.push(SurfaceHit { t, point, normal });
        }
    }
    hits
}

/// Unsigned angle between two vectors, robust near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Any unit vector orthogonal to `v`, and a second completing a right-handed frame.
pub fn orthonormal_basis(v: &Vec3) -> (Vec3, Vec3) {
    let w = v.normalize();
    let helper = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = helper.cross(&w).normalize();
    let e2 = w.cross(&e1);
    (e1, e2)
}
