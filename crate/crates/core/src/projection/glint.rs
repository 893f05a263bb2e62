//! Specular glints of the IR LEDs on the cornea and on both lens faces.
//!
//! For every (LED, surface) pair we search the surface for the point where
//! the light path from the LED reflects into the pinhole. Light paths between
//! the surface point and the LED/pinhole are themselves solved through any
//! refracting media (the lens for corneal glints, the camera-side lens face
//! for reflections off the eye-side face from inside the glass).

use crate::camera::ImagePoint;
use crate::eye::EyePose;
use crate::lens::{LensFace, LensGeometry};
use crate::optics::{orthonormal_basis, reflect, Vec3};
use crate::scene::Scene;
use crate::solver::{nelder_mead, NelderMeadOptions, ShootingSolution};

use super::{solve_path, Interface, MediaStack};

/// Maximum law-of-reflection residual of an emitted glint.
pub const GLINT_RESIDUAL_TOLERANCE: f64 = 1e-8;

const SEEDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GlintSurface {
    Cornea,
    /// Lens face toward the camera (external reflection).
    LensFront,
    /// Lens face toward the eye (reflection inside the glass).
    LensBack,
}

impl GlintSurface {
    pub const ALL: [GlintSurface; 3] = [GlintSurface::Cornea, GlintSurface::LensFront, GlintSurface::LensBack];

    pub fn name(&self) -> &'static str {
        match self {
            GlintSurface::Cornea => "cornea",
            GlintSurface::LensFront => "lens_front",
            GlintSurface::LensBack => "lens_back",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Glint {
    pub led: usize,
    pub surface: GlintSurface,
    /// Reflection point on the surface.
    pub point: Vec3,
    /// Unit normal at `point`, facing the side the light arrives from.
    pub normal: Vec3,
    pub image: ImagePoint,
    /// `|reflect(−u_led, n) − u_cam|` at the solved point.
    pub residual: f64,
}

/// Two-parameter chart of a reflecting surface.
#[derive(Debug, Clone)]
struct SurfaceChart {
    kind: ChartKind,
    e1: Vec3,
    e2: Vec3,
    /// Stack from the surface point to LED and camera.
    stack: MediaStack,
    seed_radius: f64,
    fd_step: f64,
}

#[derive(Debug, Clone, Copy)]
enum ChartKind {
    /// Gnomonic chart of a sphere around `pole`; `sign` flips the normal
    /// so it faces the light.
    Sphere { center: Vec3, radius: f64, pole: Vec3, sign: f64 },
    Plane { origin: Vec3, normal: Vec3 },
}

impl SurfaceChart {
    fn point_normal(&self, a: f64, b: f64) -> (Vec3, Vec3) {
        match self.kind {
            ChartKind::Sphere { center, radius, pole, sign } => {
                let dir = (pole + self.e1 * a + self.e2 * b).normalize();
                (center + dir * radius, dir * sign)
            }
            ChartKind::Plane { origin, normal } => (origin + self.e1 * a + self.e2 * b, normal),
        }
    }
}

struct Evaluation {
    point: Vec3,
    normal: Vec3,
    to_led: ShootingSolution,
    to_cam: ShootingSolution,
    residual: f64,
}

fn chart_for(scene: &Scene, pose: &EyePose, surface: GlintSurface, led: &Vec3) -> Option<(SurfaceChart, Option<LensGeometry>)> {
    let cam = scene.camera.position;
    match surface {
        GlintSurface::Cornea => {
            let center = scene.eye.cornea_center(pose);
            let pole = ((led - center).normalize() + (cam - center).normalize()).normalize();
            let (e1, e2) = orthonormal_basis(&pole);
            let kind = ChartKind::Sphere { center, radius: scene.eye.cornea_radius, pole, sign: 1.0 };
            Some((SurfaceChart { kind, e1, e2, stack: MediaStack::from_air(scene), seed_radius: 0.15, fd_step: 1e-7 }, None))
        }
        GlintSurface::LensFront | GlintSurface::LensBack => {
            let lens = scene.lens?;
            let (e1, e2) = orthonormal_basis(&lens.axis);
            let front = surface == GlintSurface::LensFront;
            let face = if front { lens.camera_side_face() } else { lens.eye_side_face() };
            let stack = if front { MediaStack::default() } else { MediaStack(vec![Interface::LensExitToCamera]) };
            // Reflecting normal faces the camera side in both cases: outward for
            // the front face, into the glass for the back face.
            let kind = match face {
                LensFace::Planar => {
                    let normal = if front { lens.planar_normal } else { -lens.planar_normal };
                    // Flat-mirror estimate as the chart origin.
                    let n = lens.planar_normal;
                    let led_img = led - n * (2.0 * (led - lens.planar_point).dot(&n));
                    let dir = cam - led_img;
                    let t = (lens.planar_point - led_img).dot(&n) / dir.dot(&n);
                    let origin = led_img + dir * t;
                    ChartKind::Plane { origin, normal }
                }
                LensFace::Curved => {
                    let sign = if lens.concave == front { -1.0 } else { 1.0 };
                    ChartKind::Sphere { center: lens.sphere_center, radius: lens.sphere_radius, pole: lens.axis, sign }
                }
                LensFace::Rim => unreachable!("rim is never a reflecting face"),
            };
            let (seed_radius, fd_step) = match kind {
                ChartKind::Plane { .. } => (0.25 * lens.aperture_radius(), 1e-6),
                ChartKind::Sphere { radius, .. } => (0.25 * lens.aperture_radius() / radius, 1e-8),
            };
            Some((SurfaceChart { kind, e1, e2, stack, seed_radius, fd_step }, Some(lens)))
        }
    }
}

fn valid_point(scene: &Scene, surface: GlintSurface, lens: Option<&LensGeometry>, p: &Vec3) -> bool {
    match surface {
        GlintSurface::Cornea => scene.eye.on_corneal_cap(p),
        _ => lens.is_some_and(|l| {
            let rel = p - l.vertex;
            (rel - l.axis * rel.dot(&l.axis)).norm() < l.aperture_radius()
        }),
    }
}

fn evaluate(scene: &Scene, chart: &SurfaceChart, led: &Vec3, x: &[f64]) -> Option<Evaluation> {
    let (point, normal) = chart.point_normal(x[0], x[1]);
    let to_led = solve_path(&point, led, scene, &chart.stack)?;
    let to_cam = solve_path(&point, &scene.camera.position, scene, &chart.stack)?;
    let (u_in, u_out) = (to_led.initial_direction, to_cam.initial_direction);
    if u_in.dot(&normal) <= 0.0 || u_out.dot(&normal) <= 0.0 {
        return None;
    }
    let residual = (reflect(&-u_in, &normal) - u_out).norm();
    Some(Evaluation { point, normal, to_led, to_cam, residual })
}

/// Newton refinement of a near-solution.
fn polish(scene: &Scene, chart: &SurfaceChart, led: &Vec3, start: [f64; 2]) -> Option<(Evaluation, [f64; 2])> {
    let mut x = start;
    let mut best = evaluate(scene, chart, led, &x)?;
    for _ in 0..30 {
        if best.residual < 1e-13 {
            break;
        }
        let h = chart.fd_step;
        let mut jac = nalgebra::Matrix2::zeros();
        // The tangent frame depends on the normal; evaluate columns in the
        // frame of the current point.
        let (t1, t2) = orthonormal_basis(&best.normal);
        let g = |e: &Evaluation| {
            let hv = e.to_led.initial_direction + e.to_cam.initial_direction;
            let hn = hv - e.normal * hv.dot(&e.normal);
            nalgebra::Vector2::new(hn.dot(&t1), hn.dot(&t2))
        };
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let ep = evaluate(scene, chart, led, &xp)?;
            let em = evaluate(scene, chart, led, &xm)?;
            jac.set_column(k, &((g(&ep) - g(&em)) / (2.0 * h)));
        }
        let delta = jac.lu().solve(&(-g(&best)))?;
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let cand = [x[0] + scale * delta[0], x[1] + scale * delta[1]];
            if let Some(e) = evaluate(scene, chart, led, &cand) {
                if e.residual < best.residual {
                    x = cand;
                    best = e;
                    improved = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some((best, x))
}

fn solve_glint(scene: &Scene, pose: &EyePose, led_index: usize, surface: GlintSurface) -> Option<Glint> {
    let led = scene.leds[led_index];
    let (chart, lens) = chart_for(scene, pose, surface, &led)?;
    let objective = |x: &[f64]| match evaluate(scene, &chart, &led, x) {
        Some(e) => e.residual * e.residual,
        None => f64::INFINITY,
    };
    let opts = NelderMeadOptions { max_evaluations: 400, f_tolerance: 1e-20, x_tolerance: 1e-10 };
    for s in 0..SEEDS {
        let seed = if s == 0 {
            [0.0, 0.0]
        } else {
            let phi = std::f64::consts::TAU * (s - 1) as f64 / (SEEDS - 1) as f64;
            [chart.seed_radius * phi.cos(), chart.seed_radius * phi.sin()]
        };
        if !objective(&seed).is_finite() {
            continue;
        }
        let m = nelder_mead(objective, &seed, 0.2 * chart.seed_radius, &opts);
        if !(m.value < 1e-6) {
            continue;
        }
        let Some((e, _)) = polish(scene, &chart, &led, [m.x[0], m.x[1]]) else {
            continue;
        };
        if e.residual >= GLINT_RESIDUAL_TOLERANCE || !valid_point(scene, surface, lens.as_ref(), &e.point) {
            continue;
        }
        let image = scene.camera.project_direction(&-e.to_cam.exit_ray.direction)?;
        return Some(Glint { led: led_index, surface, point: e.point, normal: e.normal, image, residual: e.residual });
    }
    None
}

/// All glints of all LEDs on the cornea and on each lens face, ordered by
/// LED index then surface.
pub fn compute_glints(scene: &Scene, pose: &EyePose) -> Vec<Glint> {
    let mut out = Vec::new();
    for led in 0..scene.leds.len() {
        for surface in GlintSurface::ALL {
            if surface != GlintSurface::Cornea && scene.lens.is_none() {
                continue;
            }
            if let Some(g) = solve_glint(scene, pose, led, surface) {
                out.push(g);
            }
        }
    }
    out
}
