//! Python bindings for `fdmscan-core`.

use fdmscan_core::capture::{self, raycast_capture, TriangleMesh};
use fdmscan_core::coupling::{self, analyze_constraints, contact_points, CouplingGeometry};
use fdmscan_core::defect::{self, DeviationReport, FaultRules};
use fdmscan_core::gcode::{self, CommandKind, GCodeProgram, InjectionConfig};
use fdmscan_core::kinematics::{self, MachineConfig, MachineState};
use fdmscan_core::scan::{self, execute_scan};
use fdmscan_core::{fixtures, PointCloud};
use nalgebra::Vector3;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn v3(p: [f64; 3]) -> Vector3<f64> {
    Vector3::from(p)
}

/// Parsed G-code program.
#[pyclass(name = "Program", module = "fdmscan")]
pub struct PyProgram(GCodeProgram);

#[pymethods]
impl PyProgram {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        gcode::parse_program(text).map(PyProgram).map_err(value_err)
    }

    fn serialize(&self) -> String {
        gcode::serialize_program(&self.0)
    }

    /// New program with `M102 P<positions>` after every `every_n_layers` layers.
    fn inject(&self, every_n_layers: u32, positions: u32) -> PyResult<Self> {
        let cfg = InjectionConfig::new(every_n_layers, positions).map_err(value_err)?;
        Ok(PyProgram(gcode::inject_scan_words(&self.0, cfg)))
    }

    #[getter]
    fn layer_count(&self) -> u32 {
        self.0.layer_count()
    }

    #[getter]
    fn scan_word_count(&self) -> usize {
        self.0.scan_word_count()
    }

    fn layer_index(&self) -> Vec<u32> {
        self.0.layer_index().to_vec()
    }

    /// `(kind, {letter: value}, source_line)` per command.
    fn commands<'py>(&self, py: Python<'py>) -> PyResult<Vec<(String, Bound<'py, PyDict>, usize)>> {
        self.0
            .commands()
            .iter()
            .map(|c| {
                let params = PyDict::new(py);
                for w in &c.params {
                    params.set_item(w.letter.to_string(), w.value)?;
                }
                let kind = match c.kind {
                    CommandKind::LinearMove => "linear_move",
                    CommandKind::Home => "home",
                    CommandKind::SetHotendTemp => "set_hotend_temp",
                    CommandKind::SetBedTemp => "set_bed_temp",
                    CommandKind::ScanCapture => "scan_capture",
                    CommandKind::Comment => "comment",
                    CommandKind::Other => "other",
                };
                Ok((kind.to_string(), params, c.source_line))
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyfunction]
fn cartesian_to_motor(x: f64, y: f64) -> (f64, f64) {
    kinematics::cartesian_to_motor(x, y)
}

#[pyfunction]
fn motor_to_cartesian(a: f64, b: f64) -> (f64, f64) {
    kinematics::motor_to_cartesian(a, b)
}

/// Leadscrew microsteps for Z with the default machine.
#[pyfunction]
fn z_to_steps(z: f64) -> PyResult<i64> {
    kinematics::z_to_steps(z, &MachineConfig::default()).map_err(value_err)
}

/// Kinematic coupling geometry.
#[pyclass(name = "Coupling", module = "fdmscan")]
pub struct PyCoupling(CouplingGeometry);

#[pymethods]
impl PyCoupling {
    #[new]
    #[pyo3(signature = (radius = coupling::DEFAULT_BALL_CIRCLE_RADIUS))]
    fn new(radius: f64) -> Self {
        PyCoupling(CouplingGeometry::canonical(radius))
    }

    #[staticmethod]
    #[pyo3(signature = (axis, radius = coupling::DEFAULT_BALL_CIRCLE_RADIUS))]
    fn parallel(axis: [f64; 3], radius: f64) -> Self {
        PyCoupling(CouplingGeometry::parallel_vees(radius, v3(axis)))
    }

    fn with_vee_rotated(&self, index: usize, degrees: f64) -> PyResult<Self> {
        if index > 2 {
            return Err(value_err("vee index must be 0, 1 or 2"));
        }
        Ok(PyCoupling(self.0.with_vee_rotated(index, degrees.to_radians())))
    }

    fn analyze<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let a = analyze_constraints(&contact_points(&self.0).map_err(value_err)?);
        let d = PyDict::new(py);
        d.set_item("rank", a.rank)?;
        d.set_item("smallest_singular_value", a.smallest_singular_value)?;
        d.set_item("singular_values", a.singular_values.iter().copied().collect::<Vec<_>>())?;
        let free: Vec<Vec<f64>> = a.free_motions.iter().map(|m| m.iter().copied().collect()).collect();
        d.set_item("free_motions", free)?;
        Ok(d)
    }

    /// `(center_displacement, out_of_plane_warp)` in mm.
    #[pyo3(signature = (delta_t, cte = coupling::DEFAULT_CTE))]
    fn thermal_growth(&self, delta_t: f64, cte: f64) -> PyResult<(f64, f64)> {
        let r = coupling::thermal_growth(&self.0, delta_t, cte).map_err(value_err)?;
        Ok((r.center_displacement, r.out_of_plane_warp))
    }

    /// `(max_translation, max_rotation)` over perturbed reseats.
    #[pyo3(signature = (perturbation = 0.5, trials = 100, seed = 0))]
    fn reseat(&self, perturbation: f64, trials: usize, seed: u64) -> PyResult<(f64, f64)> {
        let s = coupling::reseat_repeatability(&self.0, perturbation, trials, seed).map_err(value_err)?;
        Ok((s.max_translation, s.max_rotation))
    }
}

/// Bed angles, in radians, for a scan with `positions` stops.
#[pyfunction]
fn plan_scan(positions: u32) -> PyResult<Vec<f64>> {
    scan::plan_scan(positions).map(|p| p.bed_angles).map_err(value_err)
}

#[pyclass(name = "Mesh", module = "fdmscan")]
pub struct PyMesh(TriangleMesh);

#[pymethods]
impl PyMesh {
    #[new]
    fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> PyResult<Self> {
        TriangleMesh::new(vertices.into_iter().map(v3).collect(), triangles)
            .map(PyMesh)
            .map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        capture::load_mesh(path).map(PyMesh).map_err(|e| match e {
            capture::CaptureError::Io(io) => PyIOError::new_err(io.to_string()),
            other => value_err(other),
        })
    }

    /// 20 mm test cube on the bed, each face split `n x n`.
    #[staticmethod]
    #[pyo3(signature = (n = 4))]
    fn cube(n: usize) -> Self {
        PyMesh(fixtures::cube_20mm(n))
    }

    /// Copy with the `x >= 0, y >= 0` quadrant shifted by `offset`.
    fn displace_corner(&self, offset: [f64; 3]) -> Self {
        PyMesh(fixtures::displace_corner_region(&self.0, v3(offset)))
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.0.triangle_count()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.0.vertices().len()
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let b = self.0.bounds();
        (b.min.into(), b.max.into())
    }

    fn distance(&self, point: [f64; 3]) -> PyResult<f64> {
        defect::point_to_mesh_distance(&v3(point), &self.0).map_err(value_err)
    }

    /// Merged bed-frame cloud of one `positions`-stop scan with the default
    /// machine, clipped at `height` when given.
    #[pyo3(signature = (positions, stride = capture::DEFAULT_STRIDE, height = None))]
    fn scan(&self, py: Python<'_>, positions: u32, stride: u32, height: Option<f64>) -> PyResult<Vec<[f64; 3]>> {
        let mesh = &self.0;
        let record = py
            .detach(|| {
                execute_scan(
                    &MachineState::default(),
                    &gcode::GCodeCommand::scan_capture(positions),
                    &MachineConfig::default(),
                    &CouplingGeometry::default(),
                    |req| {
                        let pts = raycast_capture(mesh, &req.pose, &req.camera.intrinsics, stride);
                        match height {
                            Some(h) => capture::clip_to_height(&pts, h, capture::DEFAULT_CLIP_TOLERANCE),
                            None => pts,
                        }
                    },
                )
            })
            .map_err(value_err)?
            .1;
        Ok(capture::merge_scan(&record).points.iter().map(|p| (*p).into()).collect())
    }
}

/// Deviation statistics and verdict of `points` against `mesh`.
#[pyfunction]
#[pyo3(signature = (points, mesh, tolerance = defect::DEFAULT_INLIER_TOLERANCE, tolerable_p95 = defect::DEFAULT_TOLERABLE_P95, terminal_max = defect::DEFAULT_TERMINAL_MAX, terminal_missing_fraction = defect::DEFAULT_TERMINAL_MISSING_FRACTION))]
fn deviation<'py>(
    py: Python<'py>,
    points: Vec<[f64; 3]>,
    mesh: &PyMesh,
    tolerance: f64,
    tolerable_p95: f64,
    terminal_max: f64,
    terminal_missing_fraction: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cloud = PointCloud {
        points: points.into_iter().map(v3).collect(),
        sources: Vec::new(),
    };
    let rules = FaultRules {
        tolerable_p95,
        terminal_max,
        terminal_missing_fraction,
    };
    let report: DeviationReport = py
        .detach(|| defect::deviation_report(&cloud, &mesh.0, tolerance))
        .map_err(value_err)?;
    let class = defect::classify(&report, &rules).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("count", report.stats.count)?;
    d.set_item("max", report.stats.max)?;
    d.set_item("mean", report.stats.mean)?;
    d.set_item("rms", report.stats.rms)?;
    d.set_item("p95", report.stats.p95)?;
    d.set_item("inlier_fraction", report.inlier_fraction)?;
    d.set_item("verdict", format!("{:?}", class.verdict).to_lowercase())?;
    Ok(d)
}

/// Runs the command line with `args` (without the program name) and returns
/// its exit status.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    let argv = std::iter::once("fdmscan".to_string()).chain(args);
    fdmscan_core::cli::run(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

#[pymodule]
fn fdmscan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProgram>()?;
    m.add_class::<PyCoupling>()?;
    m.add_class::<PyMesh>()?;
    m.add_function(wrap_pyfunction!(cartesian_to_motor, m)?)?;
    m.add_function(wrap_pyfunction!(motor_to_cartesian, m)?)?;
    m.add_function(wrap_pyfunction!(z_to_steps, m)?)?;
    m.add_function(wrap_pyfunction!(plan_scan, m)?)?;
    m.add_function(wrap_pyfunction!(deviation, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
