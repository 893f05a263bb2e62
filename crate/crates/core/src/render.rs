//! Deterministic Whitted-style renderer for IR-look grayscale eye images.
//!
//! Camera rays are traced through the spectacle lens (refracted and reflected
//! branches weighted by the surface reflectance), onto the sclera, or through
//! the cornea onto the iris and pupil. Rays that leave the scene pick up the
//! procedural environment plus the LEDs, which are small Gaussian emitters;
//! that is what makes corneal and lens glints appear.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eye::{gaze_direction, EyePose};
use crate::lens::{LensFace, LensGeometry};
use crate::optics::{intersect_plane, intersect_sphere, orthonormal_basis, reflect, refract, fresnel_reflectance, Ray, Vec3};
use crate::scene::Scene;

/// Hard cap on interface crossings along one path, independent of depth.
const MAX_SEGMENTS: u32 = 48;
/// Branches carrying less weight than this are dropped.
const MIN_WEIGHT: f64 = 1e-6;

/// Bright rectangle in the environment (window, monitor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentPatch {
    pub direction: [f64; 3],
    pub half_width_deg: f64,
    pub half_height_deg: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentParams {
    /// Radiance straight up.
    pub sky: f64,
    /// Radiance straight down.
    pub floor: f64,
    pub patches: Vec<EnvironmentPatch>,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        EnvironmentParams {
            sky: 0.6,
            floor: 0.08,
            patches: vec![EnvironmentPatch {
                direction: [0.15, 0.55, 0.82],
                half_width_deg: 14.0,
                half_height_deg: 9.0,
                intensity: 1.0,
            }],
        }
    }
}

impl EnvironmentParams {
    /// Environment emitting nothing.
    pub fn black() -> Self {
        EnvironmentParams { sky: 0.0, floor: 0.0, patches: Vec::new() }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [("environment.sky", self.sky), ("environment.floor", self.floor)] {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("{name} must lie in [0, 1] (got {x})"));
            }
        }
        for (i, p) in self.patches.iter().enumerate() {
            if !(Vec3::from(p.direction).norm() > 0.0) {
                v.push(format!("environment.patches[{i}].direction must be non-zero"));
            }
            if !(0.0..=1.0).contains(&p.intensity) {
                v.push(format!("environment.patches[{i}].intensity must lie in [0, 1]"));
            }
            for x in [p.half_width_deg, p.half_height_deg] {
                if !(x > 0.0 && x < 90.0) {
                    v.push(format!("environment.patches[{i}] half extents must lie in (0, 90) degrees"));
                }
            }
        }
        v
    }
}

/// Surface appearance and LED emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadingParams {
    pub ambient: f64,
    pub sclera_albedo: f64,
    pub iris_albedo: f64,
    /// Irradiance of each LED at normal incidence on a diffuse surface.
    pub led_power: f64,
    /// Weight of the Phong lobe on the sclera.
    pub specular: f64,
    pub phong_exponent: f64,
    /// Peak radiance of an LED seen directly.
    pub led_radiance: f64,
    pub led_radius_mm: f64,
}

impl Default for ShadingParams {
    fn default() -> Self {
        ShadingParams {
            ambient: 0.2,
            sclera_albedo: 0.9,
            iris_albedo: 0.35,
            led_power: 0.35,
            specular: 0.15,
            phong_exponent: 120.0,
            led_radiance: 60.0,
            led_radius_mm: 0.5,
        }
    }
}

impl ShadingParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [
            ("shading.ambient", self.ambient),
            ("shading.sclera_albedo", self.sclera_albedo),
            ("shading.iris_albedo", self.iris_albedo),
            ("shading.led_power", self.led_power),
            ("shading.specular", self.specular),
        ] {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("{name} must lie in [0, 1] (got {x})"));
            }
        }
        if !(self.phong_exponent >= 1.0) {
            v.push("shading.phong_exponent must be at least 1".into());
        }
        if !(self.led_radiance >= 0.0 && self.led_radiance.is_finite()) {
            v.push("shading.led_radiance must be non-negative".into());
        }
        if !(self.led_radius_mm > 0.0) {
            v.push("shading.led_radius_mm must be positive".into());
        }
        v
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Radiance of the procedural environment seen along `direction` (+y is up).
pub fn environment_radiance(direction: &Vec3, params: &EnvironmentParams) -> f64 {
    let d = direction.normalize();
    for p in params.patches.iter().rev() {
        let c = Vec3::from(p.direction).normalize();
        let along = d.dot(&c);
        if along <= 0.0 {
            continue;
        }
        let (e1, e2) = patch_frame(&c);
        let x = d.dot(&e1).atan2(along).to_degrees();
        let y = d.dot(&e2).atan2(along).to_degrees();
        if x.abs() <= p.half_width_deg && y.abs() <= p.half_height_deg {
            return p.intensity;
        }
    }
    params.floor + (params.sky - params.floor) * smoothstep(0.5 * (1.0 + d.y))
}

/// Horizontal and vertical tangent directions of a patch.
fn patch_frame(c: &Vec3) -> (Vec3, Vec3) {
    let h = Vec3::y().cross(c);
    if h.norm() < 1e-9 {
        return orthonormal_basis(c);
    }
    let h = h.normalize();
    (h, c.cross(&h))
}

/// What the primary (fully transmitted) camera path lands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SurfaceId {
    Background,
    Sclera,
    Iris,
    Pupil,
    LensRim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major intensities in [0, 1].
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8).collect()
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn write_pgm(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode_pgm())
    }

    pub fn write_png(&self, path: &Path) -> Result<(), image::ImageError> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.to_bytes())
            .expect("buffer size matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// Row-major surface classification of the transmitted path.
    pub surfaces: Vec<SurfaceId>,
    /// Largest pixel value before clamping.
    pub max_unclamped: f64,
}

struct Tracer<'a> {
    scene: &'a Scene,
    max_depth: u32,
    cornea_center: Vec3,
    gaze: Vec3,
    pupil_center: Vec3,
}

enum EyeHit {
    Sclera(Vec3, Vec3),
    Cornea(Vec3, Vec3),
}

impl<'a> Tracer<'a> {
    fn new(scene: &'a Scene, pose: EyePose, max_depth: u32) -> Self {
        Tracer {
            scene,
            max_depth,
            cornea_center: scene.eye.cornea_center(&pose),
            gaze: gaze_direction(&pose),
            pupil_center: scene.eye.pupil_center(&pose),
        }
    }

    /// First hit on the outer eye surface (union of scleral and corneal balls).
    fn eye_hit(&self, r: &Ray) -> Option<(f64, EyeHit)> {
        let eye = &self.scene.eye;
        let c = eye.center();
        let mut best: Option<(f64, EyeHit)> = None;
        for h in intersect_sphere(r, &c, eye.eyeball_radius) {
            if (h.point - self.cornea_center).norm() > eye.cornea_radius {
                best = Some((h.t, EyeHit::Sclera(h.point, h.normal)));
                break;
            }
        }
        for h in intersect_sphere(r, &self.cornea_center, eye.cornea_radius) {
            if best.as_ref().is_some_and(|(t, _)| h.t >= *t) {
                break;
            }
            if eye.on_corneal_cap(&h.point) {
                best = Some((h.t, EyeHit::Cornea(h.point, h.normal)));
                break;
            }
        }
        best
    }

    fn escape(&self, r: &Ray) -> f64 {
        let sh = &self.scene.shading;
        let mut total = environment_radiance(&r.direction, &self.scene.environment);
        for led in &self.scene.leds {
            let to = led - r.origin;
            let dist = to.norm();
            let cos = r.direction.dot(&to) / dist;
            if cos <= 0.0 {
                continue;
            }
            let angle = r.direction.cross(&to).norm().atan2(r.direction.dot(&to));
            let sigma = sh.led_radius_mm / dist;
            total += sh.led_radiance * (-0.5 * (angle / sigma).powi(2)).exp();
        }
        total
    }

    fn diffuse(&self, p: &Vec3, n: &Vec3, albedo: f64) -> f64 {
        let sh = &self.scene.shading;
        let direct: f64 = self
            .scene
            .leds
            .iter()
            .map(|l| sh.led_power * (l - p).normalize().dot(n).max(0.0))
            .sum();
        albedo * (sh.ambient + direct)
    }

    fn shade_sclera(&self, p: &Vec3, n: &Vec3, view: &Vec3) -> f64 {
        let sh = &self.scene.shading;
        let spec: f64 = self
            .scene
            .leds
            .iter()
            .map(|l| {
                let to_led = (l - p).normalize();
                let mirror = reflect(view, n);
                mirror.dot(&to_led).max(0.0).powf(sh.phong_exponent)
            })
            .sum();
        self.diffuse(p, n, sh.sclera_albedo) + sh.specular * spec
    }

    /// Ray inside the cornea heading for the iris plane.
    fn shade_interior(&self, r: &Ray) -> (f64, SurfaceId) {
        let eye = &self.scene.eye;
        let Some(h) = intersect_plane(r, &self.pupil_center, &self.gaze) else {
            return (0.0, SurfaceId::Pupil);
        };
        let rho = (h.point - self.pupil_center).norm();
        if rho < eye.pupil_radius {
            (0.0, SurfaceId::Pupil)
        } else {
            (self.diffuse(&h.point, &self.gaze, self.scene.shading.iris_albedo), SurfaceId::Iris)
        }
    }

    fn trace(&self, r: &Ray, depth: u32, segments: u32, weight: f64, inside_lens: bool) -> (f64, SurfaceId) {
        if segments >= MAX_SEGMENTS || weight < MIN_WEIGHT {
            return (0.0, SurfaceId::Background);
        }
        if inside_lens {
            let lens = self.scene.lens.as_ref().expect("inside a lens implies one exists");
            return match lens.boundary_hit(r) {
                Some(lh) if lh.face != LensFace::Rim => self.split(lens, r, &lh.hit.point, &lh.hit.normal, true, depth, segments, weight),
                _ => (0.0, SurfaceId::LensRim),
            };
        }
        let lens_hit = self.scene.lens.as_ref().and_then(|l| l.boundary_hit(r).map(|h| (l, h)));
        let eye_hit = self.eye_hit(r);
        let lens_first = match (&lens_hit, &eye_hit) {
            (Some((_, lh)), Some((te, _))) => lh.hit.t < *te,
            (Some(_), None) => true,
            _ => false,
        };
        if lens_first {
            let (lens, lh) = lens_hit.unwrap();
            if lh.face == LensFace::Rim {
                return (0.0, SurfaceId::LensRim);
            }
            return self.split(lens, r, &lh.hit.point, &lh.hit.normal, false, depth, segments, weight);
        }
        match eye_hit {
            None => (self.escape(r), SurfaceId::Background),
            Some((_, EyeHit::Sclera(p, n))) => (self.shade_sclera(&p, &n, &r.direction), SurfaceId::Sclera),
            Some((_, EyeHit::Cornea(p, n))) => {
                let n_eye = self.scene.eye.cornea_index;
                let cos_i = -r.direction.dot(&n);
                let rho = fresnel_reflectance(cos_i, 1.0, n_eye);
                let (inner, id) = match refract(&r.direction, &n, 1.0, n_eye) {
                    Some(d) => self.shade_interior(&Ray::spawn(p, d)),
                    None => (0.0, SurfaceId::Pupil),
                };
                let mut value = (1.0 - rho) * inner;
                if depth < self.max_depth {
                    let refl = Ray::spawn(p, reflect(&r.direction, &n));
                    value += rho * self.trace(&refl, depth + 1, segments + 1, weight * rho, false).0;
                }
                (value, id)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn split(&self, lens: &LensGeometry, r: &Ray, p: &Vec3, n: &Vec3, from_inside: bool, depth: u32, segments: u32, weight: f64) -> (f64, SurfaceId) {
        let cos_i = -r.direction.dot(n);
        let (n1, n2) = if from_inside { (lens.n_trace, 1.0) } else { (1.0, lens.n_trace) };
        let refl = Ray::spawn(*p, reflect(&r.direction, n));
        match refract(&r.direction, n, n1, n2) {
            None => {
                if depth < self.max_depth {
                    let v = self.trace(&refl, depth + 1, segments + 1, weight, from_inside).0;
                    (v, SurfaceId::LensRim)
                } else {
                    (0.0, SurfaceId::LensRim)
                }
            }
            Some(d) => {
                let rho = lens.reflectance_at(cos_i, from_inside);
                let (through, id) = self.trace(&Ray::spawn(*p, d), depth, segments + 1, weight * (1.0 - rho), !from_inside);
                let mut value = (1.0 - rho) * through;
                if depth < self.max_depth && rho > 0.0 {
                    value += rho * self.trace(&refl, depth + 1, segments + 1, weight * rho, from_inside).0;
                }
                (value, id)
            }
        }
    }

    fn pixel(&self, x: u32, y: u32, spp: u32) -> (f64, SurfaceId) {
        let cam = &self.scene.camera;
        let mut sum = 0.0;
        let mut first = SurfaceId::Background;
        for s in 0..spp {
            let (ox, oy) = if spp == 1 { (0.5, 0.5) } else { (halton(s + 1, 2), halton(s + 1, 3)) };
            let (v, id) = self.trace(&cam.ray_through(x as f64 + ox, y as f64 + oy), 0, 0, 1.0, false);
            if s == 0 {
                first = id;
            }
            sum += v;
        }
        (sum / spp as f64, first)
    }
}

fn halton(mut i: u32, base: u32) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Renders the eye at `pose`, with surface classification and pre-clamp maximum.
pub fn render_with_stats(scene: &Scene, pose: &EyePose, max_depth: u32, samples_per_pixel: u32) -> RenderOutput {
    let tracer = Tracer::new(scene, *pose, max_depth);
    let (w, h) = (scene.camera.width, scene.camera.height);
    let spp = samples_per_pixel.max(1);
    let rows: Vec<Vec<(f64, SurfaceId)>> = (0..h)
        .into_par_iter()
        .map(|y| (0..w).map(|x| tracer.pixel(x, y, spp)).collect())
        .collect();
    let flat: Vec<(f64, SurfaceId)> = rows.into_iter().flatten().collect();
    let max_unclamped = flat.iter().map(|p| p.0).fold(0.0, f64::max);
    RenderOutput {
        image: Image { width: w, height: h, pixels: flat.iter().map(|p| p.0.clamp(0.0, 1.0)).collect() },
        surfaces: flat.iter().map(|p| p.1).collect(),
        max_unclamped,
    }
}

pub fn render(scene: &Scene, pose: &EyePose, max_depth: u32, samples_per_pixel: u32) -> Image {
    render_with_stats(scene, pose, max_depth, samples_per_pixel).image
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{assemble_scene, Config};

    fn small(cfg: &mut Config) {
        // Quarter-resolution crop around the eye keeps tests fast.
        cfg.camera.width = 160;
        cfg.camera.height = 120;
        cfg.camera.focal_length_px = 350.0;
    }

    #[test]
    fn environment_by_construction() {
        let p = EnvironmentParams::default();
        assert_eq!(environment_radiance(&Vec3::y(), &p), p.sky);
        assert_eq!(environment_radiance(&-Vec3::y(), &p), p.floor);
        let patch = &p.patches[0];
        assert_eq!(environment_radiance(&Vec3::from(patch.direction), &p), patch.intensity);
        let mid = environment_radiance(&Vec3::x(), &p);
        assert!(mid > p.floor && mid < p.sky);
    }

    #[test]
    fn ambient_only_image() {
        let mut cfg = Config::default();
        small(&mut cfg);
        cfg.leds.clear();
        cfg.environment = EnvironmentParams::black();
        let scene = assemble_scene(&cfg).unwrap();
        let out = render_with_stats(&scene, &EyePose::PRIMARY, 4, 1);
        let sh = scene.shading;
        let mut seen = [false; 3];
        let cc = scene.eye.cornea_center(&EyePose::PRIMARY);
        for (i, (v, id)) in out.image.pixels.iter().zip(&out.surfaces).enumerate() {
            let (x, y) = ((i as u32 % out.image.width) as f64 + 0.5, (i as u32 / out.image.width) as f64 + 0.5);
            match id {
                SurfaceId::Background | SurfaceId::Pupil => assert_eq!(*v, 0.0),
                SurfaceId::Sclera => {
                    seen[0] = true;
                    assert_eq!(*v, sh.sclera_albedo * sh.ambient);
                }
                SurfaceId::Iris => {
                    seen[1] = true;
                    // Seen through the cornea: only the transmitted share survives.
                    let ray = scene.camera.ray_through(x, y);
                    let hit = intersect_sphere(&ray, &cc, scene.eye.cornea_radius)[0];
                    let f = fresnel_reflectance(-ray.direction.dot(&hit.normal), 1.0, scene.eye.cornea_index);
                    let expected = (1.0 - f) * sh.iris_albedo * sh.ambient;
                    assert!((*v - expected).abs() < 1e-12, "{v} vs {expected}");
                }
                SurfaceId::LensRim => seen[2] = true,
            }
        }
        assert!(seen[0] && seen[1] && !seen[2]);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut cfg = Config::default().with_diopter(-3.0);
        small(&mut cfg);
        let scene = assemble_scene(&cfg).unwrap();
        let pose = EyePose::new(10.0, 5.0);
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| render(&scene, &pose, 4, 1).encode_pgm())
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert_eq!(a, run(3));
    }

    #[test]
    fn lens_changes_image() {
        let mut cfg = Config::default();
        small(&mut cfg);
        let plain = render(&assemble_scene(&cfg).unwrap(), &EyePose::PRIMARY, 4, 1);
        let with = render(&assemble_scene(&cfg.with_diopter(-1.0)).unwrap(), &EyePose::PRIMARY, 4, 1);
        let diff: f64 = plain.pixels.iter().zip(&with.pixels).map(|(a, b)| (a - b).abs()).sum::<f64>() / plain.pixels.len() as f64;
        assert!(diff > 0.0);
    }

    #[test]
    fn pupil_darker_than_iris_and_energy_bounded() {
        for power in [0.0, -5.0] {
            let mut cfg = Config::default().with_diopter(power);
            small(&mut cfg);
            let scene = assemble_scene(&cfg).unwrap();
            let out = render_with_stats(&scene, &EyePose::PRIMARY, 4, 1);
            assert!(out.max_unclamped < 4.0, "{}", out.max_unclamped);
            let iris: Vec<f64> = out
                .image
                .pixels
                .iter()
                .zip(&out.surfaces)
                .filter(|(_, id)| **id == SurfaceId::Iris)
                .map(|(v, _)| *v)
                .collect();
            let mean_iris = iris.iter().sum::<f64>() / iris.len() as f64;
            let c = scene.camera.project_point(&scene.eye.pupil_center(&EyePose::PRIMARY)).unwrap();
            let v = out.image.get(c.u as u32, c.v as u32);
            assert!(v < mean_iris, "{v} vs {mean_iris}");
        }
    }

    #[test]
    fn pgm_header_and_size() {
        let img = Image { width: 3, height: 2, pixels: vec![0.0, 0.5, 1.0, 0.2, 0.0, 1.0] };
        let bytes = img.encode_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 51, 0, 255]);
    }
}
