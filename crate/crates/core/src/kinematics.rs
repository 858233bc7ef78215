//! CoreXY + leadscrew motion model.
//!
//! The belt convention is `a = x + y`, `b = x - y` (both belts positive when
//! the carriage moves +X). Z is a single 8 mm pitch acme screw; backlash is
//! taken as zero because the weight of the Z carriage keeps the nut loaded.

use std::f64::consts::TAU;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scan::CameraMount;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisViolation {
    pub axis: Axis,
    pub value: f64,
    pub max: f64,
}

impl fmt::Display for AxisViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={} outside [0, {}]", self.axis, self.value, self.max)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("limit error: {}", fmt_violations(.0))]
    Limit(Vec<AxisViolation>),
    #[error("invalid machine config: {0}")]
    Config(String),
}

impl KinematicsError {
    pub fn violated_axes(&self) -> Vec<Axis> {
        match self {
            KinematicsError::Limit(v) => v.iter().map(|v| v.axis).collect(),
            KinematicsError::Config(_) => Vec::new(),
        }
    }
}

fn fmt_violations(v: &[AxisViolation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Static machine constants.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineConfig {
    /// Printable travel, mm.
    pub build_volume: Vector3<f64>,
    pub bed_size: [f64; 2],
    /// Part of the bed directly over the heater pad.
    pub heated_region: [f64; 2],
    /// Leadscrew lead, mm per revolution.
    pub z_pitch: f64,
    pub steps_per_rev: u32,
    pub microsteps: u32,
    /// Reduction of the geared bed-rotation stepper.
    pub bed_rotation_gear_ratio: f64,
    /// Outer diameter of the bearing the bed rests on while spinning.
    pub bearing_od: f64,
    /// Extra Z travel past the printable volume at which the coupling has
    /// separated and the bed rests on the pillars.
    pub disengage_travel: f64,
    pub camera_mounts: [CameraMount; 2],
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            build_volume: Vector3::new(300.0, 300.0, 265.0),
            bed_size: [330.0, 330.0],
            heated_region: [300.0, 300.0],
            z_pitch: 8.0,
            steps_per_rev: 200,
            microsteps: 16,
            bed_rotation_gear_ratio: 5.18,
            bearing_od: 120.0,
            disengage_travel: 10.0,
            camera_mounts: CameraMount::default_pair(),
        }
    }
}

impl MachineConfig {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let positive = [
            ("build_volume.x", self.build_volume.x),
            ("build_volume.y", self.build_volume.y),
            ("build_volume.z", self.build_volume.z),
            ("bed_size.x", self.bed_size[0]),
            ("bed_size.y", self.bed_size[1]),
            ("heated_region.x", self.heated_region[0]),
            ("heated_region.y", self.heated_region[1]),
            ("z_pitch", self.z_pitch),
            ("bed_rotation_gear_ratio", self.bed_rotation_gear_ratio),
            ("bearing_od", self.bearing_od),
            ("disengage_travel", self.disengage_travel),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(KinematicsError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.steps_per_rev == 0 || self.microsteps == 0 {
            return Err(KinematicsError::Config("step resolution must be positive".into()));
        }
        if self.heated_region[0] > self.bed_size[0] || self.heated_region[1] > self.bed_size[1] {
            return Err(KinematicsError::Config("heated region larger than the bed".into()));
        }
        for mount in &self.camera_mounts {
            mount
                .validate()
                .map_err(|e| KinematicsError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Microsteps per mm of Z travel.
    pub fn z_steps_per_mm(&self) -> f64 {
        (self.steps_per_rev * self.microsteps) as f64 / self.z_pitch
    }

    /// Machine Z coordinate of the scan position (bed on the pillars).
    pub fn scan_machine_z(&self) -> f64 {
        self.build_volume.z + self.disengage_travel
    }

    /// Height of the build surface in the chamber frame for a machine Z.
    ///
    /// The chamber frame has its origin on the bed rotation axis, at the
    /// build-surface height of the lowest printing position (machine Z =
    /// `build_volume.z`). Larger machine Z means a lower bed.
    pub fn bed_height(&self, machine_z: f64) -> f64 {
        self.build_volume.z - machine_z
    }

    /// Motor microsteps needed to turn the bed by `angle` radians.
    pub fn bed_rotation_steps(&self, angle: f64) -> i64 {
        let per_rev = (self.steps_per_rev * self.microsteps) as f64 * self.bed_rotation_gear_ratio;
        (angle / TAU * per_rev).round() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MachinePhase {
    Printing,
    Scanning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineState {
    pub position: Vector3<f64>,
    pub bed_angle: f64,
    pub hotend_temp: f64,
    pub bed_temp: f64,
    pub phase: MachinePhase,
    pub current_layer: u32,
}

impl Default for MachineState {
    fn default() -> Self {
        MachineState {
            position: Vector3::zeros(),
            bed_angle: 0.0,
            hotend_temp: 0.0,
            bed_temp: 0.0,
            phase: MachinePhase::Printing,
            current_layer: 0,
        }
    }
}

pub fn cartesian_to_motor(dx: f64, dy: f64) -> (f64, f64) {
    (dx + dy, dx - dy)
}

pub fn motor_to_cartesian(da: f64, db: f64) -> (f64, f64) {
    ((da + db) / 2.0, (da - db) / 2.0)
}

/// Leadscrew microstep count for an absolute Z position.
pub fn z_to_steps(z: f64, cfg: &MachineConfig) -> Result<i64, KinematicsError> {
    if !(0.0..=cfg.build_volume.z).contains(&z) {
        return Err(KinematicsError::Limit(vec![AxisViolation {
            axis: Axis::Z,
            value: z,
            max: cfg.build_volume.z,
        }]));
    }
    Ok((z * cfg.z_steps_per_mm()).round() as i64)
}

pub fn steps_to_z(steps: i64, cfg: &MachineConfig) -> f64 {
    steps as f64 / cfg.z_steps_per_mm()
}

/// Checks a target against the build volume, reporting every violated axis.
pub fn clamp_move(target: Vector3<f64>, cfg: &MachineConfig) -> Result<Vector3<f64>, KinematicsError> {
    let axes = [Axis::X, Axis::Y, Axis::Z];
    let violations: Vec<_> = axes
        .iter()
        .enumerate()
        .filter(|&(i, _)| !(0.0..=cfg.build_volume[i]).contains(&target[i]))
        .map(|(i, &axis)| AxisViolation {
            axis,
            value: target[i],
            max: cfg.build_volume[i],
        })
        .collect();
    if violations.is_empty() {
        Ok(target)
    } else {
        Err(KinematicsError::Limit(violations))
    }
}
