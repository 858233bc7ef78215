//! Exact-constraint model of the three-ball / three-vee bed coupling.
//!
//! The balls sit on leveling screws on the Z carriage; the vee blocks hang
//! under the bed with their groove axes pointing at the bed center. Each
//! ball touches both flanks of its vee, giving six point contacts for the
//! six rigid-body freedoms.
//!
//! Frames: the bed frame has its origin at the bed center in the plane of
//! the coupling, +Z up into the bed. At nominal seating it coincides with
//! the carriage frame. [`BedPose`] maps bed-frame points to carriage-frame
//! points.
//!
//! Contact is frictionless and rigid. A ball constrained by a vee can only
//! move along the groove, so seating reduces to: find the rigid pose for
//! which every ball center lies on its (transformed) groove line. That is a
//! square 6x6 nonlinear system whose Jacobian is the contact wrench matrix,
//! solved here by Gauss-Newton.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix6, Rotation3, SVector, Unit, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::rigid::RigidTransform;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-9;
/// Worst allowed point-to-groove distance after seating, mm.
pub const SEATING_TOLERANCE: f64 = 1e-9;
/// Default ball-circle radius, mm.
pub const DEFAULT_BALL_CIRCLE_RADIUS: f64 = 140.0;
/// Default coefficient of thermal expansion of the aluminum bed plate, 1/K.
pub const DEFAULT_CTE: f64 = 23.6e-6;
/// Admissible temperature change for [`thermal_growth`], K.
pub const THERMAL_RANGE: (f64, f64) = (-50.0, 250.0);

const MAX_SEATING_ITERATIONS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("underconstrained coupling: wrench matrix rank {rank} < 6")]
    Underconstrained { rank: usize },
    #[error("overconstrained seating: residual {residual:e} mm exceeds {tolerance:e} mm")]
    OverconstrainedSeating { residual: f64, tolerance: f64 },
    #[error("temperature change {0} K outside [-50, 250] K")]
    TemperatureOutOfRange(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingGeometry {
    /// Ball/seat centers in the bed frame at nominal seating, mm.
    pub ball_centers: [Vector3<f64>; 3],
    /// Sliding direction of each groove, unit length.
    pub vee_axes: [Vector3<f64>; 3],
    /// Angle between each flank and the groove's vertical bisector, rad.
    pub vee_half_angle: f64,
    pub ball_radius: f64,
    /// Leveling-screw offsets of each ball along +Z, mm.
    pub screw_heights: [f64; 3],
}

impl Default for CouplingGeometry {
    fn default() -> Self {
        CouplingGeometry::canonical(DEFAULT_BALL_CIRCLE_RADIUS)
    }
}

impl CouplingGeometry {
    /// Balls at 90°, 210° and 330° on a circle of `radius`, radial vees,
    /// 45° half-angle.
    pub fn canonical(radius: f64) -> Self {
        let ball_centers = [90.0f64, 210.0, 330.0].map(|deg| {
            let (s, c) = deg.to_radians().sin_cos();
            Vector3::new(radius * c, radius * s, 0.0)
        });
        CouplingGeometry {
            vee_axes: ball_centers.map(|b| radial_axis(&b)),
            ball_centers,
            vee_half_angle: 45f64.to_radians(),
            ball_radius: 6.35,
            screw_heights: [0.0; 3],
        }
    }

    /// All three grooves along the same direction: translation along it is free.
    pub fn parallel_vees(radius: f64, axis: Vector3<f64>) -> Self {
        let mut g = CouplingGeometry::canonical(radius);
        g.vee_axes = [axis.normalize(); 3];
        g
    }

    /// Copy with groove `index` turned by `angle` about +Z.
    pub fn with_vee_rotated(&self, index: usize, angle: f64) -> Self {
        let mut g = self.clone();
        g.vee_axes[index] = Rotation3::from_axis_angle(&Vector3::z_axis(), angle) * g.vee_axes[index];
        g
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        for (i, a) in self.vee_axes.iter().enumerate() {
            if (a.norm() - 1.0).abs() > 1e-12 {
                return Err(CouplingError::Geometry(format!("vee axis {i} is not unit length")));
            }
        }
        if !(self.ball_radius > 0.0) {
            return Err(CouplingError::Geometry("ball radius must be positive".into()));
        }
        if !(self.vee_half_angle > 0.0 && self.vee_half_angle < FRAC_PI_2) {
            return Err(CouplingError::Geometry(format!(
                "vee half-angle {}° outside (0°, 90°)",
                self.vee_half_angle.to_degrees()
            )));
        }
        if collinear(&self.ball_centers) {
            return Err(CouplingError::Geometry("ball centers are collinear".into()));
        }
        Ok(())
    }

    /// Largest in-plane angle between a groove axis and the direction from
    /// its ball to the bed center.
    pub fn radial_misalignment(&self) -> f64 {
        self.ball_centers
            .iter()
            .zip(&self.vee_axes)
            .map(|(b, a)| {
                let inward = radial_axis(b);
                let a = Vector3::new(a.x, a.y, 0.0);
                let cross = inward.cross(&a).z;
                cross.atan2(inward.dot(&a)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Ball centers on the carriage, including the leveling offsets.
    pub fn carriage_balls(&self) -> [Vector3<f64>; 3] {
        let mut balls = self.ball_centers;
        for (b, h) in balls.iter_mut().zip(self.screw_heights) {
            b.z += h;
        }
        balls
    }

    /// Mean distance of the balls from the rotation axis.
    pub fn characteristic_radius(&self) -> f64 {
        self.ball_centers.iter().map(|b| b.xy().norm()).sum::<f64>() / 3.0
    }
}

/// Horizontal unit vector from `ball` toward the Z axis.
fn radial_axis(ball: &Vector3<f64>) -> Vector3<f64> {
    -Vector3::new(ball.x, ball.y, 0.0).normalize()
}

fn collinear(points: &[Vector3<f64>; 3]) -> bool {
    let scale = (points[1] - points[0]).norm().max((points[2] - points[0]).norm());
    let n = (points[1] - points[0]).cross(&(points[2] - points[0]));
    scale == 0.0 || n.norm() <= 1e-12 * scale * scale
}

/// Two unit vectors spanning the plane perpendicular to a groove axis: the
/// lateral direction and the in-groove "up" direction.
fn groove_frame(axis: &Vector3<f64>) -> Result<(Vector3<f64>, Vector3<f64>), CouplingError> {
    let lateral = Vector3::z().cross(axis);
    if lateral.norm() < 1e-12 {
        return Err(CouplingError::Geometry("vee axis is vertical".into()));
    }
    let lateral = lateral.normalize();
    let up = axis.cross(&lateral).normalize();
    Ok((lateral, up))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contact {
    pub ball: usize,
    pub point: Vector3<f64>,
    /// Unit normal pointing into the bed.
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContactSet {
    pub contacts: Vec<Contact>,
}

impl ContactSet {
    pub fn transformed(&self, pose: &BedPose) -> ContactSet {
        ContactSet {
            contacts: self
                .contacts
                .iter()
                .map(|c| Contact {
                    ball: c.ball,
                    point: pose.apply(&c.point),
                    normal: pose.rotation * c.normal,
                })
                .collect(),
        }
    }
}

/// Tangency points of each ball with the two flanks of its vee.
pub fn contact_points(geometry: &CouplingGeometry) -> Result<ContactSet, CouplingError> {
    geometry.validate()?;
    let (s, c) = geometry.vee_half_angle.sin_cos();
    let mut contacts = Vec::with_capacity(6);
    for (i, (center, axis)) in geometry.ball_centers.iter().zip(&geometry.vee_axes).enumerate() {
        let (lateral, up) = groove_frame(axis)?;
        for side in [1.0, -1.0] {
            let normal = s * up + side * c * lateral;
            contacts.push(Contact {
                ball: i,
                point: center + geometry.ball_radius * normal,
                normal,
            });
        }
    }
    Ok(ContactSet { contacts })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintAnalysis {
    /// One row per contact: `[normal, point × normal]`.
    pub wrench_matrix: Matrix6<f64>,
    /// Descending.
    pub singular_values: Vector6<f64>,
    pub rank: usize,
    pub smallest_singular_value: f64,
    /// Twists `[v, ω]` the contacts do not resist (right singular vectors of
    /// the zero singular values).
    pub free_motions: Vec<Vector6<f64>>,
}

impl ConstraintAnalysis {
    pub fn is_exactly_constrained(&self) -> bool {
        self.rank == 6
    }
}

/// Builds the wrench matrix of a six-contact set and reports its numerical rank.
///
/// Sets with fewer than six contacts are padded with zero rows; extra
/// contacts beyond six are ignored.
pub fn analyze_constraints(contacts: &ContactSet) -> ConstraintAnalysis {
    let mut wrench = Matrix6::zeros();
    for (row, c) in contacts.contacts.iter().take(6).enumerate() {
        let moment = c.point.cross(&c.normal);
        for k in 0..3 {
            wrench[(row, k)] = c.normal[k];
            wrench[(row, k + 3)] = moment[k];
        }
    }
    let svd = wrench.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values = Vector6::from_iterator(order.iter().map(|&i| svd.singular_values[i]));
    let largest = singular_values[0];
    let threshold = RANK_TOLERANCE * largest;
    let rank = singular_values.iter().filter(|&&s| s > threshold && largest > 0.0).count();
    let free_motions = order
        .iter()
        .filter(|&&i| !(svd.singular_values[i] > threshold && largest > 0.0))
        .map(|&i| v_t.row(i).transpose())
        .collect();
    ConstraintAnalysis {
        wrench_matrix: wrench,
        singular_values,
        rank,
        smallest_singular_value: singular_values[5],
        free_motions,
    }
}

/// Rigid transform from the bed frame to the carriage frame.
pub type BedPose = RigidTransform;

/// Outcome of a seating solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seating {
    pub pose: BedPose,
    /// Where each ball ended up along its groove, measured from the seat
    /// point along the groove axis, mm.
    pub slides: [f64; 3],
    /// Largest ball-to-groove-line distance, mm.
    pub residual: f64,
    pub iterations: usize,
}

/// Finds the pose that puts each carriage ball on its bed-frame groove line
/// (through `seats[i]` along `axes[i]`).
pub fn seat(
    balls: &[Vector3<f64>; 3],
    seats: &[Vector3<f64>; 3],
    axes: &[Vector3<f64>; 3],
    initial: BedPose,
    max_iterations: usize,
) -> Result<Seating, CouplingError> {
    let frames = axes
        .iter()
        .map(groove_frame)
        .collect::<Result<Vec<_>, _>>()?;
    let mut pose = initial;
    let mut iterations = 0;

    let residuals = |pose: &BedPose| -> (SVector<f64, 6>, Matrix6<f64>) {
        let mut r = SVector::<f64, 6>::zeros();
        let mut jac = Matrix6::zeros();
        for i in 0..3 {
            let p = pose.apply(&seats[i]);
            let e = balls[i] - p;
            let (lateral, up) = frames[i];
            for (k, basis) in [lateral, up].iter().enumerate() {
                let b = pose.rotation * basis;
                let row = 2 * i + k;
                r[row] = e.dot(&b);
                let dv = -b;
                let dw = -p.cross(&b) + b.cross(&e);
                for c in 0..3 {
                    jac[(row, c)] = dv[c];
                    jac[(row, c + 3)] = dw[c];
                }
            }
        }
        (r, jac)
    };

    loop {
        let (r, jac) = residuals(&pose);
        if r.amax() < 1e-14 || iterations >= max_iterations {
            break;
        }
        let step = jac
            .lu()
            .solve(&-r)
            .ok_or_else(|| CouplingError::Underconstrained {
                rank: jac.rank(RANK_TOLERANCE * jac.amax()),
            })?;
        let v = step.fixed_rows::<3>(0).into_owned();
        let w = step.fixed_rows::<3>(3).into_owned();
        let delta = BedPose::from_axis_angle(w, v);
        pose = delta.compose(&pose);
        iterations += 1;
        if step.amax() < 1e-17 {
            break;
        }
    }

    let mut slides = [0.0; 3];
    let mut residual: f64 = 0.0;
    for i in 0..3 {
        let p = pose.apply(&seats[i]);
        let d = pose.rotation * axes[i];
        let e = balls[i] - p;
        slides[i] = e.dot(&d);
        residual = residual.max((e - slides[i] * d).norm());
    }
    if residual > SEATING_TOLERANCE {
        return Err(CouplingError::OverconstrainedSeating {
            residual,
            tolerance: SEATING_TOLERANCE,
        });
    }
    Ok(Seating {
        pose,
        slides,
        residual,
        iterations,
    })
}

fn require_exact_constraint(geometry: &CouplingGeometry) -> Result<(), CouplingError> {
    let analysis = analyze_constraints(&contact_points(geometry)?);
    if analysis.rank < 6 {
        return Err(CouplingError::Underconstrained { rank: analysis.rank });
    }
    Ok(())
}

fn displaced_seats(geometry: &CouplingGeometry, radial_slides: &[f64; 3]) -> [Vector3<f64>; 3] {
    let mut seats = geometry.ball_centers;
    for (s, d) in seats.iter_mut().zip(radial_slides) {
        *s -= *d * radial_axis(s);
    }
    seats
}

/// Seats the bed after each vee seat has moved `radial_slides[i]` mm
/// outward along its radial line in the bed frame (thermal growth moves all
/// three seats outward).
///
/// With radial grooves a radial slide runs along the groove and the pose is
/// unchanged; with skewed grooves part of the slide is lateral and the bed
/// has to move.
pub fn solve_bed_pose(geometry: &CouplingGeometry, radial_slides: [f64; 3]) -> Result<BedPose, CouplingError> {
    solve_bed_pose_from(geometry, radial_slides, BedPose::identity()).map(|s| s.pose)
}

/// Like [`solve_bed_pose`] with an explicit initial guess, returning the
/// full seating record.
pub fn solve_bed_pose_from(
    geometry: &CouplingGeometry,
    radial_slides: [f64; 3],
    initial: BedPose,
) -> Result<Seating, CouplingError> {
    require_exact_constraint(geometry)?;
    let seats = displaced_seats(geometry, &radial_slides);
    seat(
        &geometry.carriage_balls(),
        &seats,
        &geometry.vee_axes,
        initial,
        MAX_SEATING_ITERATIONS,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalResponse {
    /// Geometry of the grown bed (seat points scaled about the center).
    pub geometry: CouplingGeometry,
    pub pose: BedPose,
    /// Radial seat travel fed to the seating solve, mm.
    pub radial_slides: [f64; 3],
    /// Movement of the bed center, mm.
    pub center_displacement: f64,
    /// Largest out-of-plane movement of a seat point relative to the cold
    /// seated bed plane, mm.
    pub out_of_plane_warp: f64,
}

/// Grows the bed plate uniformly by `cte * delta_t` and re-seats it.
pub fn thermal_growth(geometry: &CouplingGeometry, delta_t: f64, cte: f64) -> Result<ThermalResponse, CouplingError> {
    if !(THERMAL_RANGE.0..=THERMAL_RANGE.1).contains(&delta_t) {
        return Err(CouplingError::TemperatureOutOfRange(delta_t));
    }
    let strain = cte * delta_t;
    let radial_slides = geometry.ball_centers.map(|b| strain * b.xy().norm());
    let mut grown = geometry.clone();
    for b in grown.ball_centers.iter_mut() {
        b.x *= 1.0 + strain;
        b.y *= 1.0 + strain;
    }

    let cold = solve_bed_pose(geometry, [0.0; 3])?;
    let pose = solve_bed_pose(geometry, radial_slides)?;
    let center_displacement = (pose.apply(&Vector3::zeros()) - cold.apply(&Vector3::zeros())).norm();
    let plane_normal = cold.rotation * Vector3::z();
    let out_of_plane_warp = grown
        .ball_centers
        .iter()
        .zip(&geometry.ball_centers)
        .map(|(hot, nominal)| (pose.apply(hot) - cold.apply(nominal)).dot(&plane_normal).abs())
        .fold(0.0, f64::max);
    Ok(ThermalResponse {
        geometry: grown,
        pose,
        radial_slides,
        center_displacement,
        out_of_plane_warp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    /// `normal · x = offset` for points on the plane.
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Plane through the three ball tops after raising them by `screw_heights`.
pub fn leveling_plane(screw_heights: [f64; 3], geometry: &CouplingGeometry) -> Result<Plane, CouplingError> {
    if collinear(&geometry.ball_centers) {
        return Err(CouplingError::Geometry("ball centers are collinear".into()));
    }
    let tops: Vec<_> = geometry
        .ball_centers
        .iter()
        .zip(screw_heights)
        .map(|(b, h)| b + Vector3::z() * (geometry.ball_radius + h))
        .collect();
    let n = (tops[1] - tops[0]).cross(&(tops[2] - tops[0]));
    let mut normal = Unit::new_normalize(n).into_inner();
    if normal.z < 0.0 {
        normal = -normal;
    }
    Ok(Plane {
        normal,
        offset: normal.dot(&tops[0]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReseatStats {
    pub trials: usize,
    pub max_translation: f64,
    pub max_rotation: f64,
}

/// Re-seats the bed from `trials` randomly perturbed starting poses and
/// reports the worst deviation from the nominal seated pose.
///
/// Translations are drawn per axis from `±perturbation_scale` mm; rotations
/// have angle up to `perturbation_scale / R` rad about a random axis, where
/// `R` is the ball-circle radius.
pub fn reseat_repeatability(
    geometry: &CouplingGeometry,
    perturbation_scale: f64,
    trials: usize,
    seed: u64,
) -> Result<ReseatStats, CouplingError> {
    let nominal = solve_bed_pose_from(geometry, [0.0; 3], BedPose::identity())?.pose;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_angle = perturbation_scale / geometry.characteristic_radius();
    let mut stats = ReseatStats {
        trials,
        max_translation: 0.0,
        max_rotation: 0.0,
    };
    for _ in 0..trials {
        let t = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0)) * perturbation_scale;
        let axis = loop {
            let v = Vector3::<f64>::from_fn(|_, _| rng.random_range(-1.0..=1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n;
            }
        };
        let angle = rng.random_range(0.0..=max_angle);
        let start = BedPose::from_axis_angle(axis * angle, t).compose(&nominal);
        let solved = solve_bed_pose_from(geometry, [0.0; 3], start)?.pose;
        let diff = nominal.inverse().compose(&solved);
        stats.max_translation = stats.max_translation.max((solved.translation - nominal.translation).norm());
        stats.max_rotation = stats.max_rotation.max(diff.rotation_angle());
    }
    Ok(stats)
}
