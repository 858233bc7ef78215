//! `fdmscan` command line: `inject`, `simulate`, `analyze-coupling`.
//!
//! Exit status: 0 on success, 1 on any error, 2 when `simulate` produced a
//! terminal verdict (unless `--allow-terminal`).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::capture::{self, clip_to_height, merge_scan, ply, raycast_capture, CaptureError, TriangleMesh};
use crate::config::{Config, ConfigError};
use crate::coupling::{analyze_constraints, contact_points, reseat_repeatability, thermal_growth};
use crate::defect::{classify, deviation_report, DefectError, DeviationReport, FaultClassification, Verdict};
use crate::gcode::{inject_scan_words, parse_program, serialize_program, CommandKind, ExtrusionTracker, GCodeError, InjectionConfig};
use crate::kinematics::{clamp_move, KinematicsError, MachineState};
use crate::scan::{execute_scan, CameraName, ScanError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_TERMINAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fdmscan", version, about = "Scan-enabled FDM printer simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Insert `M102 P<positions>` after every N-th layer.
    Inject(InjectArgs),
    /// Run a program on the virtual machine and scan at every M102.
    Simulate(SimulateArgs),
    /// Constraint rank, thermal sweep and reseat statistics of the coupling.
    AnalyzeCoupling(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Scan every N layers.
    #[arg(short = 'n', long = "every", default_value_t = 10)]
    pub every: u32,
    /// Capture positions per scan.
    #[arg(short = 'p', long = "positions", default_value_t = 20)]
    pub positions: u32,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub gcode: PathBuf,
    /// Reference mesh (STL) in the bed frame.
    pub mesh: PathBuf,
    #[arg(short, long, default_value = "fdmscan-out")]
    pub out_dir: PathBuf,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Mesh standing in for the part actually printed; defaults to the reference.
    #[arg(long)]
    pub printed_mesh: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<u32>,
    #[arg(long)]
    pub tolerable_p95: Option<f64>,
    #[arg(long)]
    pub terminal_max: Option<f64>,
    #[arg(long)]
    pub terminal_missing_fraction: Option<f64>,
    /// Exit 0 even when a scan is classified terminal.
    #[arg(long)]
    pub allow_terminal: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    GCode { path: String, source: GCodeError },
    #[error("{path}: {source}")]
    Mesh { path: String, source: CaptureError },
    #[error("line {line}: {source}")]
    Limit { line: usize, source: KinematicsError },
    #[error("line {line}: {source}")]
    Scan { line: usize, source: ScanError },
    #[error(transparent)]
    Defect(#[from] DefectError),
    #[error(transparent)]
    Coupling(#[from] crate::coupling::CouplingError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Inject(a) => cmd_inject(a, out),
        Command::Simulate(a) => cmd_simulate(a, out, err),
        Command::AnalyzeCoupling(a) => cmd_analyze_coupling(a, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn cmd_inject(args: &InjectArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = InjectionConfig::new(args.every, args.positions).map_err(|source| CliError::GCode {
        path: args.input.display().to_string(),
        source,
    })?;
    let text = fs::read_to_string(&args.input).map_err(io_err(&args.input))?;
    let program = parse_program(&text).map_err(|source| CliError::GCode {
        path: args.input.display().to_string(),
        source,
    })?;
    let injected = inject_scan_words(&program, cfg);
    let inserted = injected.scan_word_count() - program.scan_word_count();
    fs::write(&args.output, serialize_program(&injected)).map_err(io_err(&args.output))?;
    writeln!(out, "{inserted} scan words inserted").map_err(io_err(&args.output))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
pub struct FileIdentity {
    pub path: String,
    pub sha256: String,
}

impl FileIdentity {
    fn of(path: &Path, bytes: &[u8]) -> Self {
        FileIdentity {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Inputs {
    pub gcode: FileIdentity,
    pub mesh: FileIdentity,
    pub printed_mesh: Option<FileIdentity>,
}

#[derive(Debug, Serialize)]
pub struct CaptureEntry {
    pub position: u32,
    pub bed_angle: f64,
    pub camera: CameraName,
    /// Camera-to-bed transform, row-major 4x4.
    pub pose: [f64; 16],
    pub point_file: String,
    pub point_count: usize,
}

#[derive(Debug, Serialize)]
pub struct ScanEntry {
    pub index: usize,
    pub layer: u32,
    pub source_line: usize,
    pub positions: u32,
    pub scan_z: f64,
    pub printed_height: f64,
    pub point_file: String,
    pub point_count: usize,
    pub captures: Vec<CaptureEntry>,
    pub deviation: DeviationReport,
    pub classification: FaultClassification,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub scans: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config: Config,
    pub inputs: Inputs,
    pub scans: Vec<ScanEntry>,
    pub summary: Summary,
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn read_mesh(path: &Path) -> Result<(TriangleMesh, Vec<u8>), CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mesh = capture::stl::parse_stl(&bytes)
        .and_then(|f| TriangleMesh::from_facets(&f))
        .map_err(|source| CliError::Mesh {
            path: path.display().to_string(),
            source,
        })?;
    Ok((mesh, bytes))
}

fn write_points(path: &Path, points: &[Vector3<f64>], as_ply: bool) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    if as_ply {
        ply::write_ply_ascii(&mut w, points)
    } else {
        ply::write_xyz(&mut w, points)
    }
    .and_then(|_| w.flush())
    .map_err(io_err(path))
}

/// Runs the simulation and writes all outputs; returns the manifest.
pub fn simulate(args: &SimulateArgs) -> Result<RunManifest, CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = args.stride {
        cfg.stride = s;
    }
    if let Some(v) = args.tolerable_p95 {
        cfg.tolerable_p95 = v;
    }
    if let Some(v) = args.terminal_max {
        cfg.terminal_max = v;
    }
    if let Some(v) = args.terminal_missing_fraction {
        cfg.terminal_missing_fraction = v;
    }
    cfg.validate()?;
    let machine = cfg.machine()?;
    let geometry = cfg.geometry()?;
    let rules = cfg.fault_rules();

    let gcode_bytes = fs::read(&args.gcode).map_err(io_err(&args.gcode))?;
    let gcode_err = |source| CliError::GCode {
        path: args.gcode.display().to_string(),
        source,
    };
    let text = String::from_utf8_lossy(&gcode_bytes);
    let program = parse_program(&text).map_err(gcode_err)?;
    let (reference, mesh_bytes) = read_mesh(&args.mesh)?;
    let (printed, printed_id) = match &args.printed_mesh {
        Some(p) => {
            let (m, bytes) = read_mesh(p)?;
            (Some(m), Some(FileIdentity::of(p, &bytes)))
        }
        None => (None, None),
    };
    let printed = printed.as_ref().unwrap_or(&reference);

    fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;

    let mut state = MachineState::default();
    let mut tracker = ExtrusionTracker::default();
    let mut relative = false;
    let mut printed_height: f64 = 0.0;
    let mut scans = Vec::new();

    for (i, cmd) in program.commands().iter().enumerate() {
        let line = cmd.source_line;
        state.current_layer = program.layer_index()[i];
        if let Some(z) = tracker.step(cmd) {
            printed_height = printed_height.max(z);
        }
        match cmd.kind {
            CommandKind::LinearMove => {
                let mut target = state.position;
                for (k, letter) in ['X', 'Y', 'Z'].into_iter().enumerate() {
                    if let Some(v) = cmd.param(letter) {
                        target[k] = if relative { target[k] + v } else { v };
                    }
                }
                state.position = clamp_move(target, &machine).map_err(|source| CliError::Limit { line, source })?;
            }
            CommandKind::Home => {
                let all = !['X', 'Y', 'Z'].iter().any(|&l| cmd.param(l).is_some());
                for (k, letter) in ['X', 'Y', 'Z'].into_iter().enumerate() {
                    if all || cmd.param(letter).is_some() {
                        state.position[k] = 0.0;
                    }
                }
            }
            CommandKind::SetHotendTemp => {
                if let Some(s) = cmd.param('S') {
                    state.hotend_temp = s;
                }
            }
            CommandKind::SetBedTemp => {
                if let Some(s) = cmd.param('S') {
                    state.bed_temp = s;
                }
            }
            CommandKind::ScanCapture => {
                let stride = cfg.stride;
                let clip_tol = cfg.clip_tolerance;
                let height = printed_height;
                let (restored, record) = execute_scan(&state, cmd, &machine, &geometry, |req| {
                    let pts = raycast_capture(printed, &req.pose, &req.camera.intrinsics, stride);
                    clip_to_height(&pts, height, clip_tol)
                })
                .map_err(|source| CliError::Scan { line, source })?;
                state = restored;

                let index = scans.len();
                let stem = format!("scan_{index:03}_layer_{:05}", record.layer);
                let mut captures = Vec::with_capacity(record.captures.len());
                for (c, cap) in record.captures.iter().enumerate() {
                    let name = format!("{stem}_capture_{c:03}_{}.xyz", cap.camera);
                    write_points(&args.out_dir.join(&name), &cap.points, false)?;
                    captures.push(CaptureEntry {
                        position: cap.position,
                        bed_angle: cap.bed_angle,
                        camera: cap.camera,
                        pose: cap.effective_camera_pose.to_row_major(),
                        point_file: name,
                        point_count: cap.points.len(),
                    });
                }
                let cloud = merge_scan(&record);
                let point_file = format!("{stem}.ply");
                write_points(&args.out_dir.join(&point_file), &cloud.points, true)?;
                let deviation = deviation_report(&cloud, &reference, cfg.inlier_tolerance)?;
                let classification = classify(&deviation, &rules)?;
                scans.push(ScanEntry {
                    index,
                    layer: record.layer,
                    source_line: line,
                    positions: record.positions,
                    scan_z: record.scan_z,
                    printed_height,
                    point_file,
                    point_count: cloud.len(),
                    captures,
                    deviation,
                    classification,
                });
            }
            CommandKind::Other => match cmd.code {
                Some(c) if c.letter == 'G' && c.value == 90.0 => relative = false,
                Some(c) if c.letter == 'G' && c.value == 91.0 => relative = true,
                _ if cmd.is_set_position() => {
                    for (k, letter) in ['X', 'Y', 'Z'].into_iter().enumerate() {
                        if let Some(v) = cmd.param(letter) {
                            state.position[k] = v;
                        }
                    }
                }
                _ => {}
            },
            CommandKind::Comment => {}
        }
    }

    let verdict = scans
        .iter()
        .map(|s| s.classification.verdict)
        .max()
        .unwrap_or(Verdict::Nominal);
    let manifest = RunManifest {
        config: cfg,
        inputs: Inputs {
            gcode: FileIdentity::of(&args.gcode, &gcode_bytes),
            mesh: FileIdentity::of(&args.mesh, &mesh_bytes),
            printed_mesh: printed_id,
        },
        summary: Summary {
            scans: scans.len(),
            verdict,
        },
        scans,
    };
    let path = args.out_dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let manifest = simulate(args)?;
    let w = |e| CliError::Io {
        path: "stdout".into(),
        source: e,
    };
    writeln!(out, "{:>4} {:>6} {:>4} {:>8} {:>10} {:>10} {:>10} {:>8}  verdict", "scan", "layer", "P", "points", "max", "mean", "p95", "inliers").map_err(w)?;
    for s in &manifest.scans {
        let st = &s.deviation.stats;
        writeln!(
            out,
            "{:>4} {:>6} {:>4} {:>8} {:>10.6} {:>10.6} {:>10.6} {:>8.4}  {:?}",
            s.index, s.layer, s.positions, s.point_count, st.max, st.mean, st.p95, s.deviation.inlier_fraction, s.classification.verdict
        )
        .map_err(w)?;
    }
    writeln!(out, "{} scans, verdict {:?}", manifest.summary.scans, manifest.summary.verdict).map_err(w)?;
    if manifest.summary.verdict == Verdict::Terminal {
        if args.allow_terminal {
            writeln!(err, "warning: terminal fault detected (allowed)").map_err(w)?;
        } else {
            writeln!(err, "terminal fault detected").map_err(w)?;
            return Ok(EXIT_TERMINAL);
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_analyze_coupling(args: &AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.reseat_trials = t;
    }
    let geometry = cfg.geometry()?;
    let w = |e| CliError::Io {
        path: "stdout".into(),
        source: e,
    };
    let analysis = analyze_constraints(&contact_points(&geometry)?);
    writeln!(out, "constraint rank: {}", analysis.rank).map_err(w)?;
    writeln!(out, "smallest singular value: {:.6e}", analysis.smallest_singular_value).map_err(w)?;
    let sv: Vec<String> = analysis.singular_values.iter().map(|s| format!("{s:.6e}")).collect();
    writeln!(out, "singular values: {}", sv.join(" ")).map_err(w)?;
    writeln!(out, "radial misalignment: {:.6} deg", geometry.radial_misalignment().to_degrees()).map_err(w)?;
    if analysis.rank < 6 {
        writeln!(err, "warning: coupling is underconstrained (rank {})", analysis.rank).map_err(w)?;
        for m in &analysis.free_motions {
            let c: Vec<String> = m.iter().map(|v| format!("{v:+.6}")).collect();
            writeln!(out, "free motion [vx vy vz wx wy wz]: {}", c.join(" ")).map_err(w)?;
        }
        return Ok(EXIT_OK);
    }

    writeln!(out, "thermal sweep (cte {:e} 1/K):", cfg.cte).map_err(w)?;
    writeln!(out, "{:>10} {:>26} {:>26}", "dT [K]", "center displacement [mm]", "out-of-plane warp [mm]").map_err(w)?;
    let steps = cfg.thermal_sweep_steps;
    for k in 0..steps {
        let dt = cfg.thermal_sweep_max * k as f64 / (steps - 1) as f64;
        let r = thermal_growth(&geometry, dt, cfg.cte)?;
        writeln!(out, "{:>10.3} {:>26.6e} {:>26.6e}", dt, r.center_displacement, r.out_of_plane_warp).map_err(w)?;
    }
    let stats = reseat_repeatability(&geometry, cfg.reseat_perturbation, cfg.reseat_trials, cfg.seed)?;
    writeln!(
        out,
        "reseat: {} trials (seed {}), max translation {:.3e} mm, max rotation {:.3e} rad",
        stats.trials, cfg.seed, stats.max_translation, stats.max_rotation
    )
    .map_err(w)?;
    Ok(EXIT_OK)
}
