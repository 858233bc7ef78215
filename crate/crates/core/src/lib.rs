//! Simulation toolkit for an FDM printer whose heated bed sits on a
//! three-ball / three-vee kinematic coupling and can be lowered off the
//! coupling and spun for in-situ photogrammetric capture.
//!
//! The crate is organised bottom-up:
//!
//! - [`gcode`]: the G-code dialect, including the `M102 P<n>` scan word and
//!   every-N-layers injection.
//! - [`kinematics`]: CoreXY/leadscrew transforms, step quantization and
//!   build-volume limits.
//! - [`coupling`]: exact-constraint analysis of the coupling, bed seating,
//!   thermal growth and leveling.
//! - [`scan`]: the scan-cycle state machine and camera pose bookkeeping.
//! - [`capture`]: STL ingestion, ray-cast depth capture and point clouds.
//! - [`defect`]: point-to-mesh deviation statistics and fault verdicts.
//! - [`cli`]: the `inject` / `simulate` / `analyze-coupling` pipeline.

pub mod capture;
pub mod cli;
pub mod config;
pub mod coupling;
pub mod defect;
pub mod fixtures;
pub mod gcode;
pub mod kinematics;
pub mod rigid;
pub mod scan;

pub use capture::{PointCloud, TriangleMesh};
pub use config::Config;
pub use coupling::{BedPose, ConstraintAnalysis, CouplingGeometry};
pub use defect::{DeviationReport, FaultClassification, Verdict};
pub use gcode::{GCodeCommand, GCodeProgram, InjectionConfig};
pub use kinematics::{MachineConfig, MachineState};
pub use scan::{CameraMount, ScanPlan, ScanRecord};
