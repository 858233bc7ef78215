//! Synthetic depth capture against a reference mesh.
//!
//! Photogrammetric reconstruction is replaced by exact ray casting: each
//! sampled pixel of an effective camera pose is cast into the mesh and the
//! nearest hit is kept. Points are then clipped to the height printed so
//! far and merged per scan.

mod bvh;
pub mod ply;
pub mod stl;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use bvh::{closest_point_on_triangle, ray_triangle, Aabb, ClosestPoint, RayHit};

use crate::rigid::RigidTransform;
use crate::scan::{CameraName, Intrinsics, ScanRecord};

/// Vertices closer than this are merged on ingestion, mm.
pub const WELD_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_STRIDE: u32 = 8;
/// One layer height, admitting the layer in progress.
pub const DEFAULT_CLIP_TOLERANCE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
    /// Triangle corners, kept alongside the index form for the BVH.
    soup: Vec<[Vector3<f64>; 3]>,
    bvh: bvh::Bvh,
}

impl TriangleMesh {
    /// Indexed mesh; indices must be in range. Degenerate triangles are
    /// dropped, vertices are used as given.
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self, CaptureError> {
        if let Some(bad) = triangles.iter().flatten().find(|&&i| i as usize >= vertices.len()) {
            return Err(CaptureError::InvalidMesh(format!(
                "vertex index {bad} out of range ({} vertices)",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(CaptureError::InvalidMesh("non-finite vertex".into()));
        }
        let triangles: Vec<[u32; 3]> = triangles
            .into_iter()
            .filter(|t| !is_degenerate(&vertices, t))
            .collect();
        let soup: Vec<[Vector3<f64>; 3]> = triangles
            .iter()
            .map(|t| t.map(|i| vertices[i as usize]))
            .collect();
        let bvh = bvh::Bvh::build(&soup);
        Ok(TriangleMesh {
            vertices,
            triangles,
            soup,
            bvh,
        })
    }

    /// Builds an indexed mesh from raw facets, welding vertices within
    /// [`WELD_TOLERANCE`] and dropping degenerate facets.
    pub fn from_facets(facets: &[[Vector3<f64>; 3]]) -> Result<Self, CaptureError> {
        let mut welder = Welder::default();
        let triangles = facets
            .iter()
            .map(|f| f.map(|p| welder.insert(p)))
            .collect();
        TriangleMesh::new(welder.vertices, triangles)
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Triangle corner positions in index order.
    pub fn facets(&self) -> &[[Vector3<f64>; 3]] {
        &self.soup
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.bounds()
    }

    /// Nearest hit along a ray, as the ray parameter and triangle index.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<RayHit> {
        self.bvh.raycast(&self.soup, origin, dir)
    }

    /// Closest surface point, `None` for an empty mesh.
    pub fn closest_point(&self, p: &Vector3<f64>) -> Option<ClosestPoint> {
        self.bvh.closest_point(&self.soup, p)
    }

    /// Copy with every vertex passed through `f`.
    pub fn map_vertices(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Result<Self, CaptureError> {
        TriangleMesh::new(self.vertices.iter().map(f).collect(), self.triangles.clone())
    }
}

fn is_degenerate(vertices: &[Vector3<f64>], t: &[u32; 3]) -> bool {
    if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
        return true;
    }
    let [a, b, c] = t.map(|i| vertices[i as usize]);
    (b - a).cross(&(c - a)).norm() == 0.0
}

#[derive(Default)]
struct Welder {
    vertices: Vec<Vector3<f64>>,
    grid: HashMap<[i64; 3], Vec<u32>>,
}

impl Welder {
    fn key(p: &Vector3<f64>) -> [i64; 3] {
        [0, 1, 2].map(|k| (p[k] / WELD_TOLERANCE).floor() as i64)
    }

    fn insert(&mut self, p: Vector3<f64>) -> u32 {
        let key = Welder::key(&p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let k = [key[0] + dx, key[1] + dy, key[2] + dz];
                    if let Some(ids) = self.grid.get(&k) {
                        if let Some(&id) = ids
                            .iter()
                            .find(|&&id| (self.vertices[id as usize] - p).norm() <= WELD_TOLERANCE)
                        {
                            return id;
                        }
                    }
                }
            }
        }
        let id = self.vertices.len() as u32;
        self.vertices.push(p);
        self.grid.entry(key).or_default().push(id);
        id
    }
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh, CaptureError> {
    let bytes = fs::read(path)?;
    TriangleMesh::from_facets(&stl::parse_stl(&bytes)?)
}

/// Ray-casts every `stride`-th pixel (row and column) of a pinhole camera.
///
/// Returns bed-frame hit points in row-major pixel order.
pub fn raycast_capture(
    mesh: &TriangleMesh,
    camera_pose: &RigidTransform,
    intrinsics: &Intrinsics,
    stride: u32,
) -> Vec<Vector3<f64>> {
    let stride = stride.max(1);
    let rows: Vec<u32> = (0..intrinsics.height).step_by(stride as usize).collect();
    let origin = camera_pose.translation;
    rows.par_iter()
        .flat_map_iter(|&row| {
            (0..intrinsics.width).step_by(stride as usize).filter_map(move |col| {
                let dir_cam = intrinsics.ray_direction(col as f64 + 0.5, row as f64 + 0.5);
                let dir = camera_pose.apply_vector(&dir_cam);
                mesh.raycast(&origin, &dir).map(|hit| origin + dir * hit.t)
            })
        })
        .collect()
}

/// Keeps the points with `z <= z_max + tolerance`.
pub fn clip_to_height(points: &[Vector3<f64>], z_max: f64, tolerance: f64) -> Vec<Vector3<f64>> {
    let limit = z_max + tolerance.max(0.0);
    points.iter().copied().filter(|p| p.z <= limit).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointSource {
    pub layer: u32,
    pub bed_angle: f64,
    pub camera: CameraName,
}

/// Bed-frame points with their capture provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub sources: Vec<PointSource>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>, source: PointSource) -> Self {
        let sources = vec![source; points.len()];
        PointCloud { points, sources }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: PointCloud) {
        self.points.extend(other.points);
        self.sources.extend(other.sources);
    }
}

/// Concatenates the captures of one scan in capture order.
pub fn merge_scan(record: &ScanRecord) -> PointCloud {
    let mut cloud = PointCloud::default();
    for cap in &record.captures {
        let source = PointSource {
            layer: record.layer,
            bed_angle: cap.bed_angle,
            camera: cap.camera,
        };
        cloud.points.extend_from_slice(&cap.points);
        cloud.sources.extend(std::iter::repeat_n(source, cap.points.len()));
    }
    cloud
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::scan::{CaptureRecord, ScanRecord};

    #[test]
    fn unit_cube_welds_to_eight_vertices() {
        let facets = fixtures::box_facets(Vector3::zeros(), Vector3::repeat(1.0), 1);
        assert_eq!(facets.len(), 12);
        let mesh = TriangleMesh::from_facets(&facets).unwrap();
        assert_eq!(mesh.triangle_count(), 12);
        assert_eq!(mesh.vertices().len(), 8);
        let b = mesh.bounds();
        assert_eq!(b.min, Vector3::zeros());
        assert_eq!(b.max, Vector3::repeat(1.0));
    }

    #[test]
    fn weld_merges_near_duplicates_only() {
        let e = WELD_TOLERANCE * 0.5;
        let facets = [
            [Vector3::zeros(), Vector3::x(), Vector3::y()],
            [Vector3::new(e, 0.0, 0.0), Vector3::x(), Vector3::new(1.0, 1.0, 0.0)],
            [Vector3::new(3.0 * WELD_TOLERANCE, 0.0, 0.0), Vector3::x(), Vector3::new(0.0, 0.0, 1.0)],
        ];
        let mesh = TriangleMesh::from_facets(&facets).unwrap();
        assert_eq!(mesh.vertices().len(), 6);
    }

    #[test]
    fn degenerate_facets_dropped() {
        let facets = [
            [Vector3::zeros(), Vector3::x(), Vector3::y()],
            [Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0],
            [Vector3::zeros(), Vector3::zeros(), Vector3::y()],
        ];
        let mesh = TriangleMesh::from_facets(&facets).unwrap();
        assert_eq!(mesh.triangle_count(), 1);
    }

    #[test]
    fn index_out_of_range() {
        assert!(TriangleMesh::new(vec![Vector3::zeros()], vec![[0, 1, 2]]).is_err());
    }

    fn cube() -> TriangleMesh {
        TriangleMesh::from_facets(&fixtures::box_facets(Vector3::zeros(), Vector3::repeat(1.0), 1)).unwrap()
    }

    #[test]
    fn camera_looking_away_sees_nothing() {
        let pose = RigidTransform::look_at(Vector3::new(0.5, -100.0, 0.5), Vector3::new(0.5, -200.0, 0.5), Vector3::z()).unwrap();
        assert!(raycast_capture(&cube(), &pose, &Intrinsics::default(), 16).is_empty());
    }

    #[test]
    fn centered_camera_hits_face_at_range() {
        // face y = 0 of the unit cube, camera 100 mm in front on its axis
        let pose = RigidTransform::look_at(Vector3::new(0.5, -100.0, 0.5), Vector3::new(0.5, 0.0, 0.5), Vector3::z()).unwrap();
        let i = Intrinsics::default();
        let (cx, cy) = i.principal_point();
        let dir = pose.apply_vector(&i.ray_direction(cx, cy));
        let hit = cube().raycast(&pose.translation, &dir).unwrap();
        assert!((hit.t - 100.0).abs() < 1e-12);
        let pts = raycast_capture(&cube(), &pose, &i, 2);
        assert!(!pts.is_empty());
        for p in pts {
            // depth along the optical axis is the face distance
            assert!((p.y - 0.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_examples() {
        let pts: Vec<_> = [0.1, 0.5, 1.0, 1.2, 2.0].iter().map(|&z| Vector3::new(0.0, 0.0, z)).collect();
        assert_eq!(clip_to_height(&pts, 10.0, 0.0), pts);
        assert!(clip_to_height(&pts, 0.0, 0.0).is_empty());
        let kept: Vec<f64> = clip_to_height(&pts, 1.0, 0.2).iter().map(|p| p.z).collect();
        assert_eq!(kept, vec![0.1, 0.5, 1.0, 1.2]);
    }

    #[test]
    fn merge_concatenates_in_order() {
        let cap = |n: usize, camera| CaptureRecord {
            position: 0,
            bed_angle: 0.5,
            camera,
            effective_camera_pose: RigidTransform::identity(),
            points: vec![Vector3::repeat(n as f64); n],
        };
        let mut rec = ScanRecord {
            layer: 3,
            positions: 1,
            scan_z: 0.0,
            captures: vec![],
            rotation_increments: vec![],
            phase_trace: vec![],
        };
        assert!(merge_scan(&rec).is_empty());
        rec.captures = vec![cap(2, CameraName::Lower), cap(3, CameraName::Upper)];
        let cloud = merge_scan(&rec);
        assert_eq!(cloud.len(), 5);
        assert_eq!(cloud.sources[0].camera, CameraName::Lower);
        assert_eq!(cloud.sources[4].camera, CameraName::Upper);
        assert_eq!(cloud.sources[4].layer, 3);
        assert_eq!(cloud.points[2], Vector3::repeat(3.0));
    }
}
