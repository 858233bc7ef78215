//! Flat key/value configuration file (TOML syntax).
//!
//! Every key is optional; omitted keys take the defaults below. Unknown keys
//! are rejected so typos do not silently fall back to defaults.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{DEFAULT_CLIP_TOLERANCE, DEFAULT_STRIDE};
use crate::coupling::{CouplingGeometry, DEFAULT_BALL_CIRCLE_RADIUS, DEFAULT_CTE};
use crate::defect::{FaultRules, DEFAULT_INLIER_TOLERANCE};
use crate::kinematics::MachineConfig;
use crate::scan::{CameraMount, CameraName, Intrinsics};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // machine
    pub build_volume: [f64; 3],
    pub bed_size: [f64; 2],
    pub heated_region: [f64; 2],
    pub z_pitch: f64,
    pub steps_per_rev: u32,
    pub microsteps: u32,
    pub bed_rotation_gear_ratio: f64,
    pub bearing_od: f64,
    pub disengage_travel: f64,

    // cameras, chamber frame
    pub lower_camera_position: [f64; 3],
    pub lower_camera_target: [f64; 3],
    pub upper_camera_position: [f64; 3],
    pub upper_camera_target: [f64; 3],
    pub image_width: u32,
    pub image_height: u32,
    pub pixel_pitch: f64,
    pub focal_length: f64,

    // coupling
    pub ball_circle_radius: f64,
    pub vee_half_angle_deg: f64,
    pub ball_radius: f64,
    pub screw_heights: [f64; 3],
    /// Groove directions; radial when absent.
    pub vee_axes: Option<[[f64; 3]; 3]>,
    pub cte: f64,
    pub thermal_sweep_max: f64,
    pub thermal_sweep_steps: u32,

    // capture
    pub stride: u32,
    pub clip_tolerance: f64,

    // defect
    pub inlier_tolerance: f64,
    pub tolerable_p95: f64,
    pub terminal_max: f64,
    pub terminal_missing_fraction: f64,

    // reseat trials
    pub seed: u64,
    pub reseat_trials: usize,
    pub reseat_perturbation: f64,
}

impl Default for Config {
    fn default() -> Self {
        let m = MachineConfig::default();
        let i = Intrinsics::default();
        let g = CouplingGeometry::default();
        let rules = FaultRules::default();
        Config {
            build_volume: m.build_volume.into(),
            bed_size: m.bed_size,
            heated_region: m.heated_region,
            z_pitch: m.z_pitch,
            steps_per_rev: m.steps_per_rev,
            microsteps: m.microsteps,
            bed_rotation_gear_ratio: m.bed_rotation_gear_ratio,
            bearing_od: m.bearing_od,
            disengage_travel: m.disengage_travel,
            lower_camera_position: [150.0, -170.0, 0.0],
            lower_camera_target: [0.0, 0.0, 0.0],
            upper_camera_position: [150.0, -170.0, 250.0],
            upper_camera_target: [0.0, 0.0, 10.0],
            image_width: i.width,
            image_height: i.height,
            pixel_pitch: i.pixel_pitch,
            focal_length: i.focal_length,
            ball_circle_radius: DEFAULT_BALL_CIRCLE_RADIUS,
            vee_half_angle_deg: g.vee_half_angle.to_degrees(),
            ball_radius: g.ball_radius,
            screw_heights: g.screw_heights,
            vee_axes: None,
            cte: DEFAULT_CTE,
            thermal_sweep_max: 200.0,
            thermal_sweep_steps: 11,
            stride: DEFAULT_STRIDE,
            clip_tolerance: DEFAULT_CLIP_TOLERANCE,
            inlier_tolerance: DEFAULT_INLIER_TOLERANCE,
            tolerable_p95: rules.tolerable_p95,
            terminal_max: rules.terminal_max,
            terminal_missing_fraction: rules.terminal_missing_fraction,
            seed: 0,
            reseat_trials: 100,
            reseat_perturbation: 0.5,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.machine().map_err(|e| invalid(&e))?.validate().map_err(|e| invalid(&e))?;
        self.geometry().map_err(|e| invalid(&e))?.validate().map_err(|e| invalid(&e))?;
        self.fault_rules().validate().map_err(|e| invalid(&e))?;
        if self.stride == 0 {
            return Err(ConfigError::Invalid("stride must be at least 1".into()));
        }
        if !(self.clip_tolerance >= 0.0) || !(self.inlier_tolerance >= 0.0) {
            return Err(ConfigError::Invalid("tolerances must be non-negative".into()));
        }
        if !self.cte.is_finite() || !(self.reseat_perturbation >= 0.0) {
            return Err(ConfigError::Invalid("cte and reseat_perturbation must be finite".into()));
        }
        if self.thermal_sweep_steps < 2 || !self.thermal_sweep_max.is_finite() {
            return Err(ConfigError::Invalid("thermal sweep needs at least 2 steps".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            width: self.image_width,
            height: self.image_height,
            pixel_pitch: self.pixel_pitch,
            focal_length: self.focal_length,
        }
    }

    pub fn machine(&self) -> Result<MachineConfig, ConfigError> {
        let i = self.intrinsics();
        let mount = |name, eye: [f64; 3], target: [f64; 3]| {
            CameraMount::looking_at(name, eye.into(), target.into(), i).map_err(|e| ConfigError::Invalid(e.to_string()))
        };
        Ok(MachineConfig {
            build_volume: self.build_volume.into(),
            bed_size: self.bed_size,
            heated_region: self.heated_region,
            z_pitch: self.z_pitch,
            steps_per_rev: self.steps_per_rev,
            microsteps: self.microsteps,
            bed_rotation_gear_ratio: self.bed_rotation_gear_ratio,
            bearing_od: self.bearing_od,
            disengage_travel: self.disengage_travel,
            camera_mounts: [
                mount(CameraName::Lower, self.lower_camera_position, self.lower_camera_target)?,
                mount(CameraName::Upper, self.upper_camera_position, self.upper_camera_target)?,
            ],
        })
    }

    pub fn geometry(&self) -> Result<CouplingGeometry, ConfigError> {
        let mut g = CouplingGeometry::canonical(self.ball_circle_radius);
        g.vee_half_angle = self.vee_half_angle_deg.to_radians();
        g.ball_radius = self.ball_radius;
        g.screw_heights = self.screw_heights;
        if let Some(axes) = self.vee_axes {
            for (slot, a) in g.vee_axes.iter_mut().zip(axes) {
                *slot = Vector3::from(a)
                    .try_normalize(1e-12)
                    .ok_or_else(|| ConfigError::Invalid("vee axis has zero length".into()))?;
            }
        }
        Ok(g)
    }

    pub fn fault_rules(&self) -> FaultRules {
        FaultRules {
            tolerable_p95: self.tolerable_p95,
            terminal_max: self.terminal_max,
            terminal_missing_fraction: self.terminal_missing_fraction,
        }
    }
}
