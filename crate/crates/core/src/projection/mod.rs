//! Image-plane feature synthesis.
//!
//! A feature point is imaged by solving for the ray that leaves it, refracts at
//! every interface between it and the camera, and passes through the pinhole.

mod ellipse;
mod glint;

pub use ellipse::{ellipse_from_conic, fit_ellipse, Ellipse, FitError};
pub use glint::{compute_glints, Glint, GlintSurface, GLINT_RESIDUAL_TOLERANCE};

use thiserror::Error;

use crate::camera::ImagePoint;
use crate::eye::{pupil_contour, EyePose};
use crate::lens::LensPass;
use crate::optics::{intersect_sphere, refract, Ray, Vec3};
use crate::scene::Scene;
use crate::solver::{shoot, shoot_from, ShootingOptions, ShootingSolution};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("only {imaged} of {requested} pupil contour points could be imaged (need at least 5)")]
    TooFewImaged { imaged: usize, requested: usize },
    #[error("pupil contour needs at least 5 points, got {0}")]
    TooFewRequested(usize),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// One refracting interface on the way from a feature to the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interface {
    /// Leave the aqueous/corneal medium through the corneal cap.
    CorneaExit(EyePose),
    /// Cross the spectacle lens from air to air; rays missing the aperture
    /// continue unchanged.
    Lens,
    /// Leave the lens material through its camera-side face.
    LensExitToCamera,
}

/// Ordered interfaces, eye side first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MediaStack(pub Vec<Interface>);

impl MediaStack {
    /// Interfaces between a point inside the eye at `pose` and the camera.
    pub fn from_pupil(scene: &Scene, pose: EyePose) -> Self {
        let mut v = vec![Interface::CorneaExit(pose)];
        if scene.lens.is_some() {
            v.push(Interface::Lens);
        }
        MediaStack(v)
    }

    /// Interfaces between a point in air on the eye side of the lens and the camera.
    pub fn from_air(scene: &Scene) -> Self {
        MediaStack(if scene.lens.is_some() { vec![Interface::Lens] } else { Vec::new() })
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Forward-traces `ray` through the stack; `None` if blocked, occluded or TIR.
pub fn trace_stack(scene: &Scene, stack: &MediaStack, ray: &Ray) -> Option<Ray> {
    let mut r = *ray;
    for iface in &stack.0 {
        r = match *iface {
            Interface::CorneaExit(pose) => {
                let eye = &scene.eye;
                let center = eye.cornea_center(&pose);
                let hit = *intersect_sphere(&r, &center, eye.cornea_radius).first()?;
                if !eye.on_corneal_cap(&hit.point) {
                    return None;
                }
                let d = refract(&r.direction, &hit.normal, eye.cornea_index, 1.0)?;
                Ray::spawn(hit.point, d)
            }
            Interface::Lens => match scene.lens.as_ref() {
                None => r,
                Some(lens) => match lens.pass(&r) {
                    LensPass::Missed => r,
                    LensPass::Exited(out) => out,
                    LensPass::Blocked => return None,
                },
            },
            Interface::LensExitToCamera => {
                let lens = scene.lens.as_ref()?;
                let lh = lens.boundary_hit(&r)?;
                if lh.entering || lh.face != lens.camera_side_face() {
                    return None;
                }
                let d = refract(&r.direction, &lh.hit.normal, lens.n_trace, 1.0)?;
                let out = Ray::spawn(lh.hit.point, d);
                // Must not re-enter the lens on the way out.
                if lens.boundary_hit(&out).is_some() {
                    return None;
                }
                out
            }
        };
    }
    Some(r)
}

const CONTINUATION_STEPS: usize = 8;

/// Solves the path from `p` through `stack` to `target`.
///
/// Newton starts from the straight line. When that fails (typically because
/// the straight-line ray is totally reflected inside a strong lens), the
/// refractive indices are ramped from 1 to their true values and each stage
/// starts from the previous stage's solution.
pub fn solve_path(p: &Vec3, target: &Vec3, scene: &Scene, stack: &MediaStack) -> Option<ShootingSolution> {
    let opts = ShootingOptions::default();
    if let Some(sol) = shoot(p, target, |r| trace_stack(scene, stack, r), &opts) {
        return Some(sol);
    }
    let mut guess = target - p;
    let mut last = None;
    for step in 1..=CONTINUATION_STEPS {
        let t = step as f64 / CONTINUATION_STEPS as f64;
        let mut staged = scene.clone();
        staged.eye.cornea_index = 1.0 + t * (scene.eye.cornea_index - 1.0);
        staged.lens = scene.lens.map(|l| l.with_trace_index(1.0 + t * (l.n_trace - 1.0)));
        let sol = shoot_from(p, target, &guess, |r| trace_stack(&staged, stack, r), &opts)?;
        guess = sol.initial_direction;
        last = Some(sol);
    }
    last
}

/// Image of a feature point seen through `media_stack`, or `None` if the
/// point cannot be imaged.
pub fn trace_feature_point(p: &Vec3, scene: &Scene, media_stack: &MediaStack) -> Option<ImagePoint> {
    let sol = solve_path(p, &scene.camera.position, scene, media_stack)?;
    scene.camera.project_direction(&-sol.exit_ray.direction)
}

pub fn project_pupil(scene: &Scene, pose: &EyePose, k: usize) -> Result<Vec<ImagePoint>, ProjectionError> {
    if k < 5 {
        return Err(ProjectionError::TooFewRequested(k));
    }
    let stack = MediaStack::from_pupil(scene, *pose);
    let imaged: Vec<ImagePoint> = pupil_contour(pose, &scene.eye, k)
        .iter()
        .filter_map(|p| trace_feature_point(p, scene, &stack))
        .collect();
    if imaged.len() < 5 {
        return Err(ProjectionError::TooFewImaged { imaged: imaged.len(), requested: k });
    }
    Ok(imaged)
}

/// Synthesized pupil measurement for one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilObservation {
    pub pose: EyePose,
    pub contour: Vec<ImagePoint>,
    pub ellipse: Ellipse,
    /// Image of the 3D pupil center, when it can be traced.
    pub traced_center: Option<ImagePoint>,
}

impl PupilObservation {
    /// Pupil-center feature used for gaze mapping: the fitted ellipse center.
    pub fn center(&self) -> ImagePoint {
        self.ellipse.center
    }
}

pub fn observe_pupil(scene: &Scene, pose: &EyePose, k: usize) -> Result<PupilObservation, ProjectionError> {
    let contour = project_pupil(scene, pose, k)?;
    let ellipse = fit_ellipse(&contour)?;
    let stack = MediaStack::from_pupil(scene, *pose);
    let traced_center = trace_feature_point(&scene.eye.pupil_center(pose), scene, &stack);
    Ok(PupilObservation { pose: *pose, contour, ellipse, traced_center })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{assemble_scene, Config};

    fn scene_with(cornea_index: f64, power: f64) -> Scene {
        let mut cfg = Config::default().with_diopter(power);
        cfg.eye.cornea_index = cornea_index;
        assemble_scene(&cfg).unwrap()
    }

    #[test]
    fn index_one_matches_pinhole() {
        let scene = scene_with(1.0, 0.0);
        let pose = EyePose::new(12.0, -7.0);
        let stack = MediaStack::from_pupil(&scene, pose);
        for p in pupil_contour(&pose, &scene.eye, 10) {
            let traced = trace_feature_point(&p, &scene, &stack).unwrap();
            let straight = scene.camera.project_point(&p).unwrap();
            assert!(traced.distance(&straight) < 1e-9, "{traced:?} {straight:?}");
        }
    }

    #[test]
    fn corneal_refraction_shifts_pupil_center() {
        let scene = scene_with(1.336, 0.0);
        let p = scene.eye.pupil_center(&EyePose::PRIMARY);
        let stack = MediaStack::from_pupil(&scene, EyePose::PRIMARY);
        let traced = trace_feature_point(&p, &scene, &stack).unwrap();
        let straight = scene.camera.project_point(&p).unwrap();
        assert!(traced.distance(&straight) > 1.0);
    }

    #[test]
    fn converged_paths_hit_the_pinhole() {
        for power in [0.0, -1.0, -5.0] {
            let scene = scene_with(1.336, power);
            let pose = EyePose::new(-15.0, 5.0);
            let stack = MediaStack::from_pupil(&scene, pose);
            for p in pupil_contour(&pose, &scene.eye, 10) {
                let sol = solve_path(&p, &scene.camera.position, &scene, &stack).unwrap();
                // Independent forward re-trace of the solved initial direction.
                let exit = trace_stack(&scene, &stack, &Ray::new(p, sol.initial_direction)).unwrap();
                let w = scene.camera.position - exit.origin;
                let miss = (w - exit.direction * w.dot(&exit.direction)).norm();
                assert!(miss < 1e-6, "power {power}: miss {miss}");
            }
        }
    }

    #[test]
    fn project_pupil_images_all_points_without_lens() {
        let scene = scene_with(1.336, 0.0);
        assert_eq!(project_pupil(&scene, &EyePose::PRIMARY, 10).unwrap().len(), 10);
        assert!(matches!(project_pupil(&scene, &EyePose::PRIMARY, 4), Err(ProjectionError::TooFewRequested(4))));
    }

    #[test]
    fn strong_lens_displaces_pupil_center() {
        let a = observe_pupil(&scene_with(1.336, 0.0), &EyePose::PRIMARY, 10).unwrap();
        let b = observe_pupil(&scene_with(1.336, -5.0), &EyePose::PRIMARY, 10).unwrap();
        assert!(a.center().distance(&b.center()) > 0.5);
    }

    #[test]
    fn horizontal_mirror_symmetry() {
        let scene = scene_with(1.336, -3.0);
        let pp = scene.camera.project_point(&scene.eye.center()).unwrap();
        for (h, v) in [(10.0, 5.0), (20.0, -20.0), (5.0, 15.0)] {
            let a = observe_pupil(&scene, &EyePose::new(h, v), 10).unwrap().center();
            let b = observe_pupil(&scene, &EyePose::new(-h, v), 10).unwrap().center();
            assert!(((a.u - pp.u) + (b.u - pp.u)).abs() < 1e-6, "{a:?} {b:?}");
            assert!((a.v - b.v).abs() < 1e-6);
        }
    }
}
