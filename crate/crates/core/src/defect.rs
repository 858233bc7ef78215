//! Deviation of a captured cloud from the reference mesh, and fault verdicts.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::capture::{PointCloud, TriangleMesh};

pub const DEFAULT_TOLERABLE_P95: f64 = 0.3;
pub const DEFAULT_TERMINAL_MAX: f64 = 1.0;
pub const DEFAULT_TERMINAL_MISSING_FRACTION: f64 = 0.5;
/// Distance under which a point counts as an inlier, mm.
pub const DEFAULT_INLIER_TOLERANCE: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum DefectError {
    #[error("reference mesh has no triangles")]
    EmptyMesh,
    #[error("invalid fault rules: {0}")]
    Config(String),
}

/// Unsigned distance from `point` to the nearest triangle of `mesh`.
pub fn point_to_mesh_distance(point: &Vector3<f64>, mesh: &TriangleMesh) -> Result<f64, DefectError> {
    mesh.closest_point(point)
        .map(|c| c.distance_squared.sqrt())
        .ok_or(DefectError::EmptyMesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationStats {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
    pub rms: f64,
    /// Nearest-rank 95th percentile.
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    #[serde(skip)]
    pub per_point_distance: Vec<f64>,
    pub stats: DeviationStats,
    pub inlier_fraction: f64,
    pub tolerance: f64,
}

impl DeviationReport {
    pub fn from_distances(distances: Vec<f64>, tolerance: f64) -> Self {
        let count = distances.len();
        if count == 0 {
            return DeviationReport {
                per_point_distance: distances,
                stats: DeviationStats {
                    count: 0,
                    max: 0.0,
                    mean: 0.0,
                    rms: 0.0,
                    p95: 0.0,
                },
                inlier_fraction: 1.0,
                tolerance,
            };
        }
        let n = count as f64;
        let max = distances.iter().copied().fold(0.0, f64::max);
        let mean = distances.iter().sum::<f64>() / n;
        let rms = (distances.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
        let mut sorted = distances.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((0.95 * n).ceil() as usize).clamp(1, count);
        let p95 = sorted[rank - 1];
        let inliers = distances.iter().filter(|&&d| d <= tolerance).count();
        DeviationReport {
            per_point_distance: distances,
            stats: DeviationStats {
                count,
                max,
                mean,
                rms,
                p95,
            },
            inlier_fraction: inliers as f64 / n,
            tolerance,
        }
    }
}

pub fn deviation_report(cloud: &PointCloud, mesh: &TriangleMesh, tolerance: f64) -> Result<DeviationReport, DefectError> {
    if mesh.is_empty() {
        return Err(DefectError::EmptyMesh);
    }
    let distances = cloud
        .points
        .par_iter()
        .map(|p| point_to_mesh_distance(p, mesh))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DeviationReport::from_distances(distances, tolerance))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FaultRules {
    pub tolerable_p95: f64,
    pub terminal_max: f64,
    pub terminal_missing_fraction: f64,
}

impl Default for FaultRules {
    fn default() -> Self {
        FaultRules {
            tolerable_p95: DEFAULT_TOLERABLE_P95,
            terminal_max: DEFAULT_TERMINAL_MAX,
            terminal_missing_fraction: DEFAULT_TERMINAL_MISSING_FRACTION,
        }
    }
}

impl FaultRules {
    pub fn validate(&self) -> Result<(), DefectError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.tolerable_p95) || !positive(self.terminal_max) {
            return Err(DefectError::Config("thresholds must be positive".into()));
        }
        if !positive(self.terminal_missing_fraction) || self.terminal_missing_fraction > 1.0 {
            return Err(DefectError::Config("terminal_missing_fraction must be in (0, 1]".into()));
        }
        if self.tolerable_p95 > self.terminal_max {
            return Err(DefectError::Config(format!(
                "tolerable_p95 {} exceeds terminal_max {}",
                self.tolerable_p95, self.terminal_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Nominal,
    Tolerable,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    TerminalMax,
    TerminalMissing,
    TolerableP95,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evidence {
    pub rule: Rule,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FaultClassification {
    pub verdict: Verdict,
    pub evidence: Option<Evidence>,
}

pub fn classify(report: &DeviationReport, rules: &FaultRules) -> Result<FaultClassification, DefectError> {
    rules.validate()?;
    let fired = |rule, value, threshold| Some(Evidence { rule, value, threshold });
    let min_inliers = 1.0 - rules.terminal_missing_fraction;
    let (verdict, evidence) = if report.stats.max > rules.terminal_max {
        (Verdict::Terminal, fired(Rule::TerminalMax, report.stats.max, rules.terminal_max))
    } else if report.inlier_fraction < min_inliers {
        (Verdict::Terminal, fired(Rule::TerminalMissing, report.inlier_fraction, min_inliers))
    } else if report.stats.p95 > rules.tolerable_p95 {
        (Verdict::Tolerable, fired(Rule::TolerableP95, report.stats.p95, rules.tolerable_p95))
    } else {
        (Verdict::Nominal, None)
    };
    Ok(FaultClassification { verdict, evidence })
}
