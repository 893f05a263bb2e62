//! Scene configuration and assembly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Camera;
use crate::eye::{EyeGeometry, EyePose};
use crate::lens::{build_lens, LensGeometry, LensPrescription};
use crate::optics::Vec3;
use crate::render::{EnvironmentParams, ShadingParams};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// Pinhole position relative to the eye frame, mm.
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub focal_length_px: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            position: [0.0, -25.0, 35.0],
            look_at: [0.0, 0.0, 0.0],
            focal_length_px: 1400.0,
            width: 640,
            height: 480,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub max_depth: u32,
    pub samples_per_pixel: u32,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings { max_depth: 4, samples_per_pixel: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Polynomial,
    Geometric,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Polynomial => "polynomial",
            Method::Geometric => "geometric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub diopters: Vec<f64>,
    pub methods: Vec<Method>,
    /// Reserved; the pipeline is deterministic.
    pub seed: u64,
    pub output_dir: String,
    /// Pupil contour samples per image.
    pub contour_points: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            diopters: vec![0.0, -1.0, -3.0, -5.0],
            methods: vec![Method::Polynomial, Method::Geometric],
            seed: 0,
            output_dir: "out".into(),
            contour_points: 10,
        }
    }
}

/// Complete configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub eye: EyeGeometry,
    pub lens: LensPrescription,
    pub camera: CameraConfig,
    pub leds: Vec<[f64; 3]>,
    pub environment: EnvironmentParams,
    pub shading: ShadingParams,
    pub render: RenderSettings,
    pub experiment: ExperimentSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            eye: EyeGeometry::default(),
            lens: LensPrescription::default(),
            camera: CameraConfig::default(),
            leds: vec![[15.0, -25.0, 35.0], [-15.0, -25.0, 35.0]],
            environment: EnvironmentParams::default(),
            shading: ShadingParams::default(),
            render: RenderSettings::default(),
            experiment: ExperimentSettings::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Same configuration with the lens power replaced.
    pub fn with_diopter(&self, power: f64) -> Config {
        let mut c = self.clone();
        c.lens.power = power;
        c
    }

    /// Experiment-level invariants.
    pub fn experiment_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.experiment.diopters.is_empty() {
            v.push("experiment.diopters must not be empty".into());
        }
        if self.experiment.methods.is_empty() {
            v.push("experiment.methods must not be empty".into());
        }
        if self.experiment.contour_points < 5 {
            v.push("experiment.contour_points must be at least 5".into());
        }
        for d in &self.experiment.diopters {
            if !d.is_finite() || d.abs() > 20.0 {
                v.push(format!("experiment.diopters entry {d} outside [-20, 20]"));
            }
        }
        v
    }
}

/// Immutable assembly of eye, optional lens, camera, LEDs and environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub eye: EyeGeometry,
    pub lens: Option<LensGeometry>,
    pub camera: Camera,
    pub leds: Vec<Vec3>,
    pub environment: EnvironmentParams,
    pub shading: ShadingParams,
}

impl Scene {
    /// Optical axis of the spectacle lens: the primary gaze direction.
    pub fn lens_axis() -> Vec3 {
        Vec3::z()
    }
}

pub fn assemble_scene(cfg: &Config) -> Result<Scene, SceneError> {
    let mut errors = cfg.eye.violations();
    let eye = cfg.eye;
    let cc = &cfg.camera;

    if !(cc.focal_length_px > 0.0) {
        errors.push(format!("camera.focal_length_px must be positive (got {})", cc.focal_length_px));
    }
    if cc.width == 0 || cc.height == 0 {
        errors.push("camera.width and camera.height must be positive".into());
    }
    let position = Vec3::from(cc.position);
    let target = Vec3::from(cc.look_at);
    if (target - position).norm() < 1e-9 {
        errors.push("camera.look_at must differ from camera.position".into());
    }
    let forward = (target - position).normalize();
    if forward.cross(&Vec3::y()).norm() < 1e-9 {
        errors.push("camera must not look straight up or down".into());
    }
    // The cornea sweeps a ball of this radius around the eyeball center.
    let eye_reach = (eye.cornea_center_offset + eye.cornea_radius).max(eye.eyeball_radius);
    if (position - eye.center()).norm() <= eye_reach {
        errors.push("camera pinhole lies inside the eyeball volume".into());
    }
    for (i, led) in cfg.leds.iter().enumerate() {
        let p = Vec3::from(*led);
        if !p.iter().all(|x| x.is_finite()) {
            errors.push(format!("leds[{i}] must be finite"));
        } else if (p - eye.center()).norm() <= eye_reach {
            errors.push(format!("leds[{i}] lies inside the eyeball volume"));
        }
    }
    errors.extend(cfg.environment.violations());
    errors.extend(cfg.shading.violations());

    let mut lens = None;
    if cfg.lens.power != 0.0 {
        let apex = eye.cornea_apex(&EyePose::PRIMARY);
        match build_lens(&cfg.lens, &Scene::lens_axis(), &apex) {
            Ok(l) => {
                if l.contains(&position) {
                    errors.push("camera pinhole lies inside the lens volume".into());
                }
                for (i, led) in cfg.leds.iter().enumerate() {
                    if l.contains(&Vec3::from(*led)) {
                        errors.push(format!("leds[{i}] lies inside the lens volume"));
                    }
                }
                let a = l.aperture_radius();
                let sag = l.sphere_radius - (l.sphere_radius.powi(2) - a * a).sqrt();
                let (e1, _) = crate::optics::orthonormal_basis(&l.axis);
                let rim = l.vertex + e1 * a - if l.concave { l.axis * sag } else { Vec3::zeros() };
                let c = eye.center();
                if (rim - c).norm().min((l.vertex - c).norm()) <= eye_reach {
                    errors.push("lens intersects the space swept by the cornea".into());
                }
                lens = Some(l);
            }
            Err(e) => errors.push(format!("lens: {e}")),
        }
    }

    if !errors.is_empty() {
        return Err(SceneError::Validation(errors));
    }
    Ok(Scene {
        eye,
        lens,
        camera: Camera::look_at(position, target, Vec3::y(), cc.focal_length_px, cc.width, cc.height),
        leds: cfg.leds.iter().map(|p| Vec3::from(*p)).collect(),
        environment: cfg.environment.clone(),
        shading: cfg.shading,
    })
}
