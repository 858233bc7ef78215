mod common;

use std::fs;

use fdmscan_core::capture::stl::{write_ascii_stl, write_binary_stl};
use fdmscan_core::capture::{clip_to_height, load_mesh, merge_scan, raycast_capture, CaptureError};
use fdmscan_core::defect::{deviation_report, point_to_mesh_distance};
use fdmscan_core::gcode::GCodeCommand;
use fdmscan_core::rigid::RigidTransform;
use fdmscan_core::scan::{effective_camera_pose, execute_scan};
use fdmscan_core::{fixtures, CouplingGeometry, MachineConfig, MachineState, TriangleMesh};
use nalgebra::Vector3;
use proptest::prelude::*;
use tempfile::TempDir;

#[test]
fn ascii_unit_cube_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("cube.stl");
    let mut buf = Vec::new();
    write_ascii_stl(&mut buf, "cube", fixtures::unit_cube().facets()).unwrap();
    fs::write(&path, &buf).unwrap();
    let mesh = load_mesh(&path).unwrap();
    assert_eq!(mesh.triangle_count(), 12);
    assert_eq!(mesh.vertices().len(), 8);
}

#[test]
fn binary_header_count_mismatch() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.stl");
    let mut buf = Vec::new();
    write_binary_stl(&mut buf, fixtures::unit_cube().facets()).unwrap();
    buf[80..84].copy_from_slice(&13u32.to_le_bytes());
    fs::write(&path, &buf).unwrap();
    match load_mesh(&path) {
        Err(CaptureError::Format { offset, .. }) => assert_eq!(offset, buf.len()),
        other => panic!("{other:?}"),
    }
    buf.truncate(100);
    fs::write(&path, &buf).unwrap();
    assert!(matches!(load_mesh(&path), Err(CaptureError::Format { offset: 100, .. })));
}

/// Bounds straight from the file bytes, without going through the loader.
fn raw_binary_bounds(bytes: &[u8]) -> ([f32; 3], [f32; 3], usize) {
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for f in 0..count {
        for v in 0..3 {
            for k in 0..3 {
                let o = 84 + f * 50 + 12 + v * 12 + k * 4;
                let c = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
                lo[k] = lo[k].min(c);
                hi[k] = hi[k].max(c);
            }
        }
    }
    (lo, hi, count)
}

#[test]
fn large_mesh_loads_with_bounds() {
    let src = fixtures::sphere(30.0, 250, 400);
    // shift and squash so the bounds are not symmetric
    let src = src.map_vertices(|v| Vector3::new(v.x * 1.2 + 5.0, v.y - 2.0, v.z * 0.5 + 15.0)).unwrap();
    assert!(src.triangle_count() > 190_000);
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("big.stl");
    common::write_stl(&path, &src);
    let bytes = fs::read(&path).unwrap();
    let (lo, hi, count) = raw_binary_bounds(&bytes);

    let mesh = load_mesh(&path).unwrap();
    assert_eq!(mesh.triangle_count(), count);
    let b = mesh.bounds();
    for k in 0..3 {
        assert_eq!(b.min[k], lo[k] as f64);
        assert_eq!(b.max[k], hi[k] as f64);
    }
    assert!((b.max.x - 41.0).abs() < 1e-4 && (b.min.z - 0.0).abs() < 1e-4);
}

fn scan_points(mesh: &TriangleMesh, positions: u32, stride: u32) -> Vec<Vector3<f64>> {
    let machine = MachineConfig::default();
    let (_, record) = execute_scan(
        &MachineState::default(),
        &GCodeCommand::scan_capture(positions),
        &machine,
        &CouplingGeometry::default(),
        |req| raycast_capture(mesh, &req.pose, &req.camera.intrinsics, stride),
    )
    .unwrap();
    merge_scan(&record).points
}

#[test]
fn hits_lie_on_the_surface() {
    for mesh in [fixtures::cube_20mm(4), fixtures::sphere(12.0, 24, 48).map_vertices(|v| v + Vector3::z() * 12.0).unwrap()] {
        let pts = scan_points(&mesh, 6, 8);
        assert!(pts.len() > 500);
        for p in &pts {
            assert!(point_to_mesh_distance(p, &mesh).unwrap() < 1e-7);
        }
    }
}

#[test]
fn bed_rotation_equals_camera_orbit() {
    // Rotating the part on the bed and casting from the fixed camera gives
    // the same hits as casting from the effective pose in the bed frame.
    let machine = MachineConfig::default();
    let bed_mesh = fixtures::cube_20mm(3);
    let scan_z = machine.bed_height(machine.scan_machine_z());
    for (i, theta) in [0.0, 0.3, 1.7, 3.9, 5.5].into_iter().enumerate() {
        let mount = &machine.camera_mounts[i % 2];
        let bed_to_world = RigidTransform::translation_z(scan_z).compose(&RigidTransform::rotation_z(theta));
        let world_mesh = bed_mesh.map_vertices(|v| bed_to_world.apply(v)).unwrap();
        let world_hits = raycast_capture(&world_mesh, &mount.pose_world, &mount.intrinsics, 10);
        let pose = effective_camera_pose(mount, theta, scan_z);
        let bed_hits = raycast_capture(&bed_mesh, &pose, &mount.intrinsics, 10);
        assert_eq!(world_hits.len(), bed_hits.len());
        assert!(!bed_hits.is_empty());
        let back = bed_to_world.inverse();
        for (w, b) in world_hits.iter().zip(&bed_hits) {
            assert!((back.apply(w) - b).norm() < 1e-9);
        }
        for b in &bed_hits {
            assert!(point_to_mesh_distance(b, &bed_mesh).unwrap() < 1e-6);
        }
    }
}

#[test]
fn doubling_positions_keeps_statistics() {
    let reference = fixtures::cube_20mm(20);
    let printed = fixtures::displace_corner_region(&reference, Vector3::new(0.5, 0.5, 0.0));
    let stats = |p| {
        let cloud = fdmscan_core::PointCloud {
            sources: vec![],
            points: scan_points(&printed, p, 8),
        };
        deviation_report(&cloud, &reference, 0.3).unwrap().stats
    };
    let a = stats(8);
    let b = stats(16);
    assert!(b.count > a.count);
    for (x, y) in [(a.mean, b.mean), (a.rms, b.rms), (a.max, b.max)] {
        assert!((x - y).abs() <= 0.1 * x.max(y), "{a:?} vs {b:?}");
    }
}

proptest! {
    #[test]
    fn clipping_is_idempotent_and_monotone(
        zs in proptest::collection::vec(-5.0f64..25.0, 0..200),
        z1 in -5.0f64..25.0,
        dz in 0.0f64..10.0,
        tol in 0.0f64..0.5,
    ) {
        let pts: Vec<_> = zs.iter().map(|&z| Vector3::new(z * 0.1, -z, z)).collect();
        let once = clip_to_height(&pts, z1, tol);
        prop_assert_eq!(clip_to_height(&once, z1, tol), once.clone());
        let wider = clip_to_height(&pts, z1 + dz, tol);
        prop_assert!(once.iter().all(|p| wider.contains(p)));
        prop_assert!(once.iter().all(|p| p.z <= z1 + tol));
        prop_assert_eq!(once.len(), zs.iter().filter(|&&z| z <= z1 + tol).count());
    }
}
