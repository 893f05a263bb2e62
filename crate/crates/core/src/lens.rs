//! Plano-convex / plano-concave spectacle lens built from a diopter prescription.
//!
//! The lens solid is the intersection of a cylinder (the aperture), a half-space
//! bounded by the planar face and a ball (convex) or ball complement (concave).
//! Positive power puts the planar face toward the eye, negative power puts the
//! curved face toward the eye. Curvature uses the 589 nm index, tracing the
//! 900 nm index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{
    fresnel_reflectance, intersect_cylinder, intersect_plane, intersect_sphere, refract, sellmeier_index,
    MaterialIndex, OpticsError, Ray, SurfaceHit, Vec3,
};

pub const DESIGN_WAVELENGTH_UM: f64 = 0.589;
pub const TRACE_WAVELENGTH_UM: f64 = 0.900;
pub const DEFAULT_COATING_REFLECTANCE: f64 = 0.025;

const FACE_SLACK: f64 = 1e-9;
const MAX_CROSSINGS: usize = 8;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LensError {
    #[error("lens power must be non-zero (0 dpt means no lens)")]
    ZeroPower,
    #[error("lens power {0} dpt outside the supported range (0, 20]")]
    PowerOutOfRange(f64),
    #[error("design index {0} must exceed 1")]
    DesignIndex(f64),
    #[error("curvature radius {radius:.3} mm is smaller than the half aperture {half_aperture:.3} mm")]
    ApertureTooLarge { radius: f64, half_aperture: f64 },
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("coating reflectance {0} outside [0, 1]")]
    Reflectance(f64),
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LensPrescription {
    /// Diopters; the sign selects convex (+) or concave (−). Zero means no lens.
    pub power: f64,
    pub material: MaterialIndex,
    pub coated: bool,
    /// Per-surface reflectance of the anti-reflex coating.
    pub coating_reflectance: f64,
    pub diameter: f64,
    /// Center thickness for concave lenses, edge thickness for convex ones.
    pub min_thickness: f64,
    /// Distance from the corneal apex to the eye-side lens vertex.
    pub vertex_distance: f64,
}

impl Default for LensPrescription {
    fn default() -> Self {
        LensPrescription {
            power: 0.0,
            material: MaterialIndex::N_BK7,
            coated: true,
            coating_reflectance: DEFAULT_COATING_REFLECTANCE,
            diameter: 50.0,
            min_thickness: 2.0,
            vertex_distance: 12.0,
        }
    }
}

impl LensPrescription {
    pub fn with_power(power: f64) -> Self {
        LensPrescription { power, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LensFace {
    Planar,
    Curved,
    /// Cylindrical edge; absorbs.
    Rim,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReflectanceModel {
    Fresnel,
    Coated { per_surface: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensGeometry {
    pub power: f64,
    /// Unit axis pointing away from the eye.
    pub axis: Vec3,
    pub planar_point: Vec3,
    /// Outward normal of the planar face (away from the lens material).
    pub planar_normal: Vec3,
    pub sphere_center: Vec3,
    pub sphere_radius: f64,
    pub concave: bool,
    /// Eye-side vertex on the axis.
    pub vertex: Vec3,
    pub diameter: f64,
    pub n_design: f64,
    pub n_trace: f64,
    pub reflectance: ReflectanceModel,
}

/// A crossing of the lens boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensHit {
    pub hit: SurfaceHit,
    pub face: LensFace,
    /// True when the ray passes from air into the lens material.
    pub entering: bool,
}

/// Outcome of sending a ray at the lens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LensPass {
    Missed,
    Exited(Ray),
    Blocked,
}

/// Plano lens radius from the thin-lens lensmaker relation, in millimeters.
pub fn curvature_radius(power: f64, n_design: f64) -> Result<f64, LensError> {
    if power == 0.0 {
        return Err(LensError::ZeroPower);
    }
    if !power.is_finite() || power.abs() > 20.0 {
        return Err(LensError::PowerOutOfRange(power));
    }
    if !(n_design > 1.0) {
        return Err(LensError::DesignIndex(n_design));
    }
    Ok(1000.0 * (n_design - 1.0) / power.abs())
}

pub fn build_lens(p: &LensPrescription, optical_axis: &Vec3, cornea_apex: &Vec3) -> Result<LensGeometry, LensError> {
    for (name, value) in [
        ("diameter", p.diameter),
        ("min_thickness", p.min_thickness),
        ("vertex_distance", p.vertex_distance),
    ] {
        if !(value > 0.0) {
            return Err(LensError::NonPositive { name, value });
        }
    }
    if !(0.0..=1.0).contains(&p.coating_reflectance) {
        return Err(LensError::Reflectance(p.coating_reflectance));
    }
    let n_design = sellmeier_index(&p.material, DESIGN_WAVELENGTH_UM)?;
    let n_trace = sellmeier_index(&p.material, TRACE_WAVELENGTH_UM)?;
    let radius = curvature_radius(p.power, n_design)?;
    let half = 0.5 * p.diameter;
    if radius <= half {
        return Err(LensError::ApertureTooLarge { radius, half_aperture: half });
    }
    let axis = optical_axis.normalize();
    let vertex = cornea_apex + axis * p.vertex_distance;
    let sag = radius - (radius * radius - half * half).sqrt();
    let concave = p.power < 0.0;

    let (planar_point, planar_normal, sphere_center) = if concave {
        // Curved face toward the eye, center of curvature on the eye side.
        let center = vertex - axis * radius;
        (vertex + axis * p.min_thickness, axis, center)
    } else {
        // Planar face toward the eye; the cap bulges away from it.
        let center_thickness = p.min_thickness + sag;
        let center = vertex + axis * (center_thickness - radius);
        (vertex, -axis, center)
    };

    let reflectance = if p.coated {
        ReflectanceModel::Coated { per_surface: p.coating_reflectance }
    } else {
        ReflectanceModel::Fresnel
    };

    Ok(LensGeometry {
        power: p.power,
        axis,
        planar_point,
        planar_normal,
        sphere_center,
        sphere_radius: radius,
        concave,
        vertex,
        diameter: p.diameter,
        n_design,
        n_trace,
        reflectance,
    })
}

/// Refracts a ray through both faces. `None` when the ray misses the aperture,
/// is absorbed by the rim, or is trapped by total internal reflection.
pub fn trace_through_lens(r: &Ray, lens: &LensGeometry) -> Option<Ray> {
    match lens.pass(r) {
        LensPass::Exited(ray) => Some(ray),
        LensPass::Missed | LensPass::Blocked => None,
    }
}

pub fn surface_reflectance(lens: &LensGeometry, cos_i: f64) -> f64 {
    lens.reflectance_at(cos_i, false)
}

impl LensGeometry {
    pub fn aperture_radius(&self) -> f64 {
        0.5 * self.diameter
    }

    /// Face adjacent to the eye.
    pub fn eye_side_face(&self) -> LensFace {
        if self.concave {
            LensFace::Curved
        } else {
            LensFace::Planar
        }
    }

    pub fn camera_side_face(&self) -> LensFace {
        if self.concave {
            LensFace::Planar
        } else {
            LensFace::Curved
        }
    }

    /// Same geometry traced with a different material index.
    pub fn with_trace_index(mut self, n_trace: f64) -> Self {
        self.n_trace = n_trace;
        self
    }

    fn radial_distance(&self, q: &Vec3) -> f64 {
        let rel = q - self.vertex;
        (rel - self.axis * rel.dot(&self.axis)).norm()
    }

    fn behind_plane(&self, q: &Vec3) -> bool {
        (q - self.planar_point).dot(&self.planar_normal) <= FACE_SLACK
    }

    fn on_material_side_of_sphere(&self, q: &Vec3) -> bool {
        let rel = q - self.sphere_center;
        let d = rel.norm();
        if self.concave {
            d >= self.sphere_radius - FACE_SLACK && rel.dot(&self.axis) > 0.0
        } else {
            d <= self.sphere_radius + FACE_SLACK
        }
    }

    fn within_aperture(&self, q: &Vec3) -> bool {
        self.radial_distance(q) <= self.aperture_radius() + FACE_SLACK
    }

    /// True if `q` lies inside the lens solid.
    pub fn contains(&self, q: &Vec3) -> bool {
        self.within_aperture(q) && self.behind_plane(q) && self.on_material_side_of_sphere(q)
    }

    /// Outward (away from material) unit normal at a boundary point of `face`.
    pub fn outward_normal(&self, face: LensFace, q: &Vec3) -> Vec3 {
        match face {
            LensFace::Planar => self.planar_normal,
            LensFace::Curved => {
                let n = (q - self.sphere_center) / self.sphere_radius;
                if self.concave {
                    -n
                } else {
                    n
                }
            }
            LensFace::Rim => {
                let rel = q - self.vertex;
                (rel - self.axis * rel.dot(&self.axis)).normalize()
            }
        }
    }

    /// Nearest crossing of the lens boundary along `r`.
    pub fn boundary_hit(&self, r: &Ray) -> Option<LensHit> {
        let mut best: Option<(SurfaceHit, LensFace)> = None;
        let mut consider = |hit: SurfaceHit, face: LensFace| {
            if best.is_none_or(|(b, _)| hit.t < b.t) {
                best = Some((hit, face));
            }
        };
        if let Some(h) = intersect_plane(r, &self.planar_point, &self.planar_normal) {
            if self.within_aperture(&h.point) && self.on_material_side_of_sphere(&h.point) {
                consider(h, LensFace::Planar);
            }
        }
        for h in intersect_sphere(r, &self.sphere_center, self.sphere_radius) {
            let rel = h.point - self.sphere_center;
            let right_cap = if self.concave { rel.dot(&self.axis) > 0.0 } else { true };
            if right_cap && self.within_aperture(&h.point) && self.behind_plane(&h.point) {
                consider(h, LensFace::Curved);
            }
        }
        for h in intersect_cylinder(r, &self.vertex, &self.axis, self.aperture_radius()) {
            if self.behind_plane(&h.point) && self.on_material_side_of_sphere(&h.point) {
                consider(h, LensFace::Rim);
            }
        }
        best.map(|(hit, face)| {
            let outward = self.outward_normal(face, &hit.point);
            LensHit { hit, face, entering: r.direction.dot(&outward) < 0.0 }
        })
    }

    /// Reflectance of one face for a ray on the given side.
    pub fn reflectance_at(&self, cos_i: f64, from_inside: bool) -> f64 {
        match self.reflectance {
            ReflectanceModel::Coated { per_surface } => per_surface,
            ReflectanceModel::Fresnel => {
                if from_inside {
                    fresnel_reflectance(cos_i, self.n_trace, 1.0)
                } else {
                    fresnel_reflectance(cos_i, 1.0, self.n_trace)
                }
            }
        }
    }

    /// Transmits `r` through the lens, refracting at every face crossing.
    pub fn pass(&self, r: &Ray) -> LensPass {
        let mut ray = *r;
        let mut touched = false;
        let mut inside = false;
        for _ in 0..MAX_CROSSINGS {
            let Some(lh) = self.boundary_hit(&ray) else {
                break;
            };
            if lh.face == LensFace::Rim {
                return LensPass::Blocked;
            }
            touched = true;
            let (n1, n2) = if lh.entering { (1.0, self.n_trace) } else { (self.n_trace, 1.0) };
            match refract(&ray.direction, &lh.hit.normal, n1, n2) {
                Some(d) => ray = Ray::spawn(lh.hit.point, d),
                None => return LensPass::Blocked,
            }
            inside = lh.entering;
        }
        if inside {
            return LensPass::Blocked;
        }
        if touched {
            LensPass::Exited(ray)
        } else {
            LensPass::Missed
        }
    }
}
