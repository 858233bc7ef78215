//! The `M102` scan cycle.
//!
//! On a scan word the Z carriage drops past the printing range until the
//! bed's bearing lands on the support pillars and the coupling separates.
//! The bed is then stepped through `P` equally spaced angles, both cameras
//! capture at each stop, the bed is turned back to zero along the same path
//! and the carriage rises to re-seat the coupling and return to the
//! pre-scan height.
//!
//! Cameras are fixed in the chamber. Turning the bed by `θ` is equivalent to
//! orbiting the camera by `-θ` around the bed axis, which is how per-capture
//! poses are expressed in the bed frame.

use std::f64::consts::TAU;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{analyze_constraints, contact_points, CouplingError, CouplingGeometry};
use crate::gcode::{CommandKind, GCodeCommand};
use crate::kinematics::{MachineConfig, MachinePhase, MachineState};
use crate::rigid::RigidTransform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("scan requires P >= 1")]
    InvalidPositions,
    #[error("state error: scan started while machine is already scanning")]
    AlreadyScanning,
    #[error("state error: command is not a scan word")]
    NotAScanWord,
    #[error("mechanism error: {0}")]
    Mechanism(#[from] CouplingError),
    #[error("invalid camera: {0}")]
    Camera(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraName {
    Lower,
    Upper,
}

impl fmt::Display for CameraName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CameraName::Lower => "lower",
            CameraName::Upper => "upper",
        })
    }
}

/// Pinhole intrinsics. Lengths in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub pixel_pitch: f64,
    pub focal_length: f64,
}

impl Default for Intrinsics {
    /// 2 MP sensor with 3.3 µm pixels; the 4 mm lens is a placeholder.
    fn default() -> Self {
        Intrinsics {
            width: 1920,
            height: 1080,
            pixel_pitch: 3.3e-3,
            focal_length: 4.0,
        }
    }
}

impl Intrinsics {
    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        self.focal_length / self.pixel_pitch
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Camera-frame direction (z = 1) through pixel coordinates `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let f = self.focal_px();
        let (cx, cy) = self.principal_point();
        Vector3::new((u - cx) / f, (v - cy) / f, 1.0)
    }

    pub fn project(&self, p_camera: &Vector3<f64>) -> Option<(f64, f64)> {
        if p_camera.z <= 0.0 {
            return None;
        }
        let f = self.focal_px();
        let (cx, cy) = self.principal_point();
        Some((cx + f * p_camera.x / p_camera.z, cy + f * p_camera.y / p_camera.z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CameraMount {
    pub name: CameraName,
    /// Camera frame to chamber frame.
    pub pose_world: RigidTransform,
    pub intrinsics: Intrinsics,
}

impl CameraMount {
    pub fn looking_at(name: CameraName, eye: Vector3<f64>, target: Vector3<f64>, intrinsics: Intrinsics) -> Result<Self, ScanError> {
        let pose_world = RigidTransform::look_at(eye, target, Vector3::z())
            .ok_or_else(|| ScanError::Camera(format!("{name} camera cannot look from {eye:?} at {target:?}")))?;
        Ok(CameraMount {
            name,
            pose_world,
            intrinsics,
        })
    }

    /// Upper camera in the top front corner, lower camera near the bottom
    /// of bed travel; both aimed at the bed axis.
    pub fn default_pair() -> [CameraMount; 2] {
        let i = Intrinsics::default();
        [
            CameraMount::looking_at(CameraName::Lower, Vector3::new(150.0, -170.0, 0.0), Vector3::new(0.0, 0.0, 0.0), i),
            CameraMount::looking_at(CameraName::Upper, Vector3::new(150.0, -170.0, 250.0), Vector3::new(0.0, 0.0, 10.0), i),
        ]
        .map(|m| m.expect("default camera placement is valid"))
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if !self.pose_world.is_proper_rotation(1e-9) {
            return Err(ScanError::Camera(format!("{} camera rotation is not orthonormal", self.name)));
        }
        let i = &self.intrinsics;
        if i.width == 0 || i.height == 0 || !(i.pixel_pitch > 0.0) || !(i.focal_length > 0.0) {
            return Err(ScanError::Camera(format!("{} camera intrinsics must be positive", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPlan {
    pub positions: u32,
    pub bed_angles: Vec<f64>,
    pub capture_order: Vec<(u32, CameraName)>,
}

/// Capture order at each stop.
pub const CAMERA_ORDER: [CameraName; 2] = [CameraName::Lower, CameraName::Upper];

pub fn position_angle(k: u32, positions: u32) -> f64 {
    TAU * k as f64 / positions as f64
}

pub fn plan_scan(positions: u32) -> Result<ScanPlan, ScanError> {
    if positions == 0 {
        return Err(ScanError::InvalidPositions);
    }
    Ok(ScanPlan {
        positions,
        bed_angles: (0..positions).map(|k| position_angle(k, positions)).collect(),
        capture_order: (0..positions)
            .flat_map(|k| CAMERA_ORDER.map(|c| (k, c)))
            .collect(),
    })
}

/// Camera-to-bed-frame pose for a capture at `bed_angle` with the build
/// surface at chamber height `scan_z`.
pub fn effective_camera_pose(mount: &CameraMount, bed_angle: f64, scan_z: f64) -> RigidTransform {
    RigidTransform::translation_z(-scan_z)
        .compose(&RigidTransform::rotation_z(-bed_angle))
        .compose(&mount.pose_world)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum ScanPhase {
    Printing,
    LoweringZ,
    Disengaged,
    Rotating { position: u32 },
    Capturing { position: u32, camera: CameraName },
    Reversing,
    Reengaging,
    RaisingZ,
}

impl ScanPhase {
    /// Canonical successor in a cycle of `positions` stops. `Printing` is
    /// both the start and the end; `None` after `RaisingZ`'s successor.
    pub fn next(self, positions: u32) -> Option<ScanPhase> {
        use ScanPhase::*;
        Some(match self {
            Printing => LoweringZ,
            LoweringZ => Disengaged,
            Disengaged => Rotating { position: 0 },
            Rotating { position } => Capturing {
                position,
                camera: CAMERA_ORDER[0],
            },
            Capturing { position, camera } => {
                let idx = CAMERA_ORDER.iter().position(|&c| c == camera).unwrap_or(0);
                if idx + 1 < CAMERA_ORDER.len() {
                    Capturing {
                        position,
                        camera: CAMERA_ORDER[idx + 1],
                    }
                } else if position + 1 < positions {
                    Rotating { position: position + 1 }
                } else {
                    Reversing
                }
            }
            Reversing => Reengaging,
            Reengaging => RaisingZ,
            RaisingZ => return None,
        })
    }

    pub fn is_legal_transition(from: ScanPhase, to: ScanPhase, positions: u32) -> bool {
        match from.next(positions) {
            Some(next) => next == to,
            None => to == ScanPhase::Printing,
        }
    }
}

/// Full phase sequence of a cycle, from `Printing` back to `Printing`.
pub fn canonical_trace(positions: u32) -> Vec<ScanPhase> {
    let mut trace = vec![ScanPhase::Printing];
    let mut phase = ScanPhase::Printing;
    while let Some(next) = phase.next(positions) {
        trace.push(next);
        phase = next;
    }
    trace.push(ScanPhase::Printing);
    trace
}

#[derive(Debug, Clone, Copy)]
pub struct CaptureRequest<'a> {
    pub position: u32,
    pub bed_angle: f64,
    pub camera: &'a CameraMount,
    /// Camera-to-bed-frame pose.
    pub pose: RigidTransform,
    pub layer: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureRecord {
    pub position: u32,
    pub bed_angle: f64,
    pub camera: CameraName,
    pub effective_camera_pose: RigidTransform,
    pub points: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRecord {
    pub layer: u32,
    pub positions: u32,
    /// Chamber height of the build surface while resting on the pillars.
    pub scan_z: f64,
    pub captures: Vec<CaptureRecord>,
    /// Signed bed moves in units of one stop (`2π / P`).
    pub rotation_increments: Vec<i64>,
    pub phase_trace: Vec<ScanPhase>,
}

impl ScanRecord {
    pub fn net_rotation_stops(&self) -> i64 {
        self.rotation_increments.iter().sum()
    }
}

/// Runs one scan cycle for `cmd` and returns the restored state plus the
/// record of every capture.
pub fn execute_scan<F>(
    state: &MachineState,
    cmd: &GCodeCommand,
    machine: &MachineConfig,
    geometry: &CouplingGeometry,
    mut capture_fn: F,
) -> Result<(MachineState, ScanRecord), ScanError>
where
    F: FnMut(&CaptureRequest<'_>) -> Vec<Vector3<f64>>,
{
    if state.phase != MachinePhase::Printing {
        return Err(ScanError::AlreadyScanning);
    }
    if cmd.kind != CommandKind::ScanCapture {
        return Err(ScanError::NotAScanWord);
    }
    let positions = cmd.scan_positions().ok_or(ScanError::InvalidPositions)?;
    let plan = plan_scan(positions)?;
    // the bed has to come back to the same seat
    let rank = analyze_constraints(&contact_points(geometry)?).rank;
    if rank < 6 {
        return Err(CouplingError::Underconstrained { rank }.into());
    }

    let saved = state.clone();
    let mut live = state.clone();
    let scan_z = machine.bed_height(machine.scan_machine_z());
    let mut record = ScanRecord {
        layer: state.current_layer,
        positions,
        scan_z,
        captures: Vec::with_capacity(plan.capture_order.len()),
        rotation_increments: Vec::new(),
        phase_trace: vec![ScanPhase::Printing],
    };
    let mut stop: u32 = 0;
    let mut phase = ScanPhase::Printing;

    while let Some(next) = phase.next(positions) {
        debug_assert!(ScanPhase::is_legal_transition(phase, next, positions));
        match next {
            ScanPhase::LoweringZ => {
                live.phase = MachinePhase::Scanning;
                live.position.z = machine.scan_machine_z();
            }
            ScanPhase::Disengaged | ScanPhase::Reengaging => {}
            ScanPhase::Rotating { position } => {
                let delta = position as i64 - stop as i64;
                if delta != 0 {
                    record.rotation_increments.push(delta);
                }
                stop = position;
                live.bed_angle = position_angle(stop, positions);
            }
            ScanPhase::Capturing { position, camera } => {
                let mount = machine
                    .camera_mounts
                    .iter()
                    .find(|m| m.name == camera)
                    .ok_or_else(|| ScanError::Camera(format!("no {camera} camera mounted")))?;
                let bed_angle = position_angle(position, positions);
                let pose = effective_camera_pose(mount, bed_angle, scan_z);
                let points = capture_fn(&CaptureRequest {
                    position,
                    bed_angle,
                    camera: mount,
                    pose,
                    layer: record.layer,
                });
                record.captures.push(CaptureRecord {
                    position,
                    bed_angle,
                    camera,
                    effective_camera_pose: pose,
                    points,
                });
            }
            ScanPhase::Reversing => {
                if stop != 0 {
                    record.rotation_increments.push(-(stop as i64));
                }
                stop = 0;
                live.bed_angle = 0.0;
            }
            ScanPhase::RaisingZ => {
                live.position.z = saved.position.z;
            }
            ScanPhase::Printing => unreachable!("Printing is never a successor"),
        }
        record.phase_trace.push(next);
        phase = next;
    }
    live.phase = MachinePhase::Printing;
    record.phase_trace.push(ScanPhase::Printing);
    debug_assert_eq!(record.net_rotation_stops(), 0);
    Ok((live, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scan_cmd(p: u32) -> GCodeCommand {
        GCodeCommand::scan_capture(p)
    }

    #[test]
    fn plan_examples() {
        let p = plan_scan(1).unwrap();
        assert_eq!(p.bed_angles, vec![0.0]);
        assert_eq!(p.capture_order.len(), 2);
        let p = plan_scan(4).unwrap();
        let deg: Vec<f64> = p.bed_angles.iter().map(|a| a.to_degrees()).collect();
        for (d, e) in deg.iter().zip([0.0, 90.0, 180.0, 270.0]) {
            assert_abs_diff_eq!(*d, e, epsilon = 1e-12);
        }
        let p = plan_scan(20).unwrap();
        assert_eq!(p.bed_angles.len(), 20);
        assert_eq!(p.capture_order.len(), 40);
        assert_eq!(p.capture_order[0], (0, CameraName::Lower));
        assert_eq!(p.capture_order[1], (0, CameraName::Upper));
        assert_eq!(plan_scan(0), Err(ScanError::InvalidPositions));
    }

    #[test]
    fn effective_pose_identity_rotation() {
        let mount = CameraMount::default_pair()[1];
        let pose = effective_camera_pose(&mount, 0.0, -10.0);
        let expected = RigidTransform::translation_z(10.0).compose(&mount.pose_world);
        assert!(pose.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn effective_pose_half_turn() {
        // R_z(π) maps (x, y, h) to (-x, -y, h)
        let mount = CameraMount::looking_at(
            CameraName::Upper,
            Vector3::new(120.0, -80.0, 200.0),
            Vector3::zeros(),
            Intrinsics::default(),
        )
        .unwrap();
        let pose = effective_camera_pose(&mount, std::f64::consts::PI, 0.0);
        assert_abs_diff_eq!(pose.translation, Vector3::new(-120.0, 80.0, 200.0), epsilon = 1e-12);
    }

    #[test]
    fn effective_pose_group_inverse() {
        let mount = CameraMount::default_pair()[0];
        let theta = 0.7;
        let a = effective_camera_pose(&mount, theta, 0.0);
        // undo the orbit: rotate back by +θ about the bed axis
        let back = RigidTransform::rotation_z(theta).compose(&a);
        assert!(back.max_abs_diff(&effective_camera_pose(&mount, 0.0, 0.0)) < 1e-13);
    }

    #[test]
    fn trace_for_two_positions() {
        use ScanPhase::*;
        let expected = vec![
            Printing,
            LoweringZ,
            Disengaged,
            Rotating { position: 0 },
            Capturing { position: 0, camera: CameraName::Lower },
            Capturing { position: 0, camera: CameraName::Upper },
            Rotating { position: 1 },
            Capturing { position: 1, camera: CameraName::Lower },
            Capturing { position: 1, camera: CameraName::Upper },
            Reversing,
            Reengaging,
            RaisingZ,
            Printing,
        ];
        assert_eq!(canonical_trace(2), expected);
        let state = MachineState::default();
        let (_, rec) = execute_scan(
            &state,
            &scan_cmd(2),
            &MachineConfig::default(),
            &CouplingGeometry::default(),
            |_| Vec::new(),
        )
        .unwrap();
        assert_eq!(rec.phase_trace, expected);
        for w in rec.phase_trace.windows(2) {
            assert!(ScanPhase::is_legal_transition(w[0], w[1], 2));
        }
        assert!(!ScanPhase::is_legal_transition(Disengaged, Reversing, 2));
    }

    #[test]
    fn twenty_positions() {
        let state = MachineState {
            position: Vector3::new(100.0, 120.0, 12.4),
            hotend_temp: 215.0,
            bed_temp: 60.0,
            current_layer: 62,
            ..MachineState::default()
        };
        let mut calls = 0;
        let (after, rec) = execute_scan(
            &state,
            &scan_cmd(20),
            &MachineConfig::default(),
            &CouplingGeometry::default(),
            |_| {
                calls += 1;
                vec![Vector3::zeros()]
            },
        )
        .unwrap();
        assert_eq!(calls, 40);
        assert_eq!(rec.captures.len(), 40);
        assert_eq!(after, state);
        assert_eq!(after.bed_angle, 0.0);
        assert_eq!(rec.net_rotation_stops(), 0);
        assert_eq!(rec.rotation_increments.iter().filter(|&&d| d > 0).sum::<i64>(), 19);
        assert_eq!(rec.layer, 62);
    }

    #[test]
    fn single_position_needs_no_rotation() {
        let (_, rec) = execute_scan(
            &MachineState::default(),
            &scan_cmd(1),
            &MachineConfig::default(),
            &CouplingGeometry::default(),
            |_| Vec::new(),
        )
        .unwrap();
        assert_eq!(rec.captures.len(), 2);
        assert!(rec.rotation_increments.is_empty());
    }

    #[test]
    fn scanning_twice_is_a_state_error() {
        let state = MachineState {
            phase: MachinePhase::Scanning,
            ..MachineState::default()
        };
        let err = execute_scan(&state, &scan_cmd(2), &MachineConfig::default(), &CouplingGeometry::default(), |_| Vec::new());
        assert_eq!(err.unwrap_err(), ScanError::AlreadyScanning);
    }

    #[test]
    fn underconstrained_coupling_is_a_mechanism_error() {
        let g = CouplingGeometry::parallel_vees(140.0, Vector3::x());
        let err = execute_scan(&MachineState::default(), &scan_cmd(2), &MachineConfig::default(), &g, |_| Vec::new());
        assert!(matches!(err, Err(ScanError::Mechanism(CouplingError::Underconstrained { rank: 5 }))));
    }

    #[test]
    fn capture_requests_carry_effective_poses() {
        let machine = MachineConfig::default();
        let mut seen = Vec::new();
        execute_scan(&MachineState::default(), &scan_cmd(3), &machine, &CouplingGeometry::default(), |req| {
            seen.push((req.position, req.camera.name, req.pose));
            Vec::new()
        })
        .unwrap();
        let scan_z = machine.bed_height(machine.scan_machine_z());
        for (k, cam, pose) in seen {
            let mount = machine.camera_mounts.iter().find(|m| m.name == cam).unwrap();
            let expected = effective_camera_pose(mount, position_angle(k, 3), scan_z);
            assert!(pose.max_abs_diff(&expected) == 0.0);
        }
    }

    proptest! {
        #[test]
        fn pose_equivalence(theta in -7.0..7.0f64, px in -100.0..100.0f64, py in -100.0..100.0f64,
                            pz in 0.0..100.0f64, scan_z in -20.0..20.0f64) {
            // a bed-fixed point seen by the fixed camera with the bed turned
            // must match the orbiting effective camera looking at the still bed
            let mount = CameraMount::default_pair()[1];
            let p_bed = Vector3::new(px, py, pz);
            let bed_to_world = RigidTransform::translation_z(scan_z).compose(&RigidTransform::rotation_z(theta));
            let p_world = bed_to_world.apply(&p_bed);
            let via_world = mount.pose_world.inverse().apply(&p_world);
            let via_bed = effective_camera_pose(&mount, theta, scan_z).inverse().apply(&p_bed);
            prop_assert!((via_world - via_bed).norm() < 1e-10);
        }

        #[test]
        fn state_restored_for_any_p(p in 1u32..40, x in 0.0..300.0f64, y in 0.0..300.0f64, z in 0.0..265.0f64,
                                    hot in 0.0..260.0f64, bed in 0.0..110.0f64, layer in 0u32..1000) {
            let state = MachineState { position: Vector3::new(x, y, z), hotend_temp: hot, bed_temp: bed,
                                       current_layer: layer, ..MachineState::default() };
            let (after, rec) = execute_scan(&state, &scan_cmd(p), &MachineConfig::default(),
                                            &CouplingGeometry::default(), |_| Vec::new()).unwrap();
            prop_assert_eq!(after, state);
            prop_assert_eq!(rec.captures.len(), 2 * p as usize);
            prop_assert_eq!(rec.net_rotation_stops(), 0);
            prop_assert_eq!(rec.phase_trace, canonical_trace(p));
        }
    }
}
