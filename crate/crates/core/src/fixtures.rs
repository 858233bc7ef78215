//! Deterministic meshes and G-code used by tests, the CLI demos and the
//! Python bindings.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::capture::TriangleMesh;

/// Axis-aligned box with each face split into `n x n` cells of two
/// outward-wound triangles, `12 n²` facets in total.
pub fn box_facets(min: Vector3<f64>, max: Vector3<f64>, n: usize) -> Vec<[Vector3<f64>; 3]> {
    let n = n.max(1);
    let mut out = Vec::with_capacity(12 * n * n);
    // (normal axis, u axis, v axis) with u x v along +normal
    for (axis, u, v) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        for high in [false, true] {
            let corner = |i: usize, j: usize| {
                let mut p = Vector3::zeros();
                p[axis] = if high { max[axis] } else { min[axis] };
                p[u] = min[u] + (max[u] - min[u]) * i as f64 / n as f64;
                p[v] = min[v] + (max[v] - min[v]) * j as f64 / n as f64;
                p
            };
            for i in 0..n {
                for j in 0..n {
                    let (a, b, c, d) = (corner(i, j), corner(i + 1, j), corner(i + 1, j + 1), corner(i, j + 1));
                    if high {
                        out.push([a, b, c]);
                        out.push([a, c, d]);
                    } else {
                        out.push([a, c, b]);
                        out.push([a, d, c]);
                    }
                }
            }
        }
    }
    out
}

pub fn unit_cube() -> TriangleMesh {
    TriangleMesh::from_facets(&box_facets(Vector3::zeros(), Vector3::repeat(1.0), 1)).unwrap()
}

/// 20 mm cube standing on the bed, centred on the bed axis.
pub fn cube_20mm(n: usize) -> TriangleMesh {
    TriangleMesh::from_facets(&box_facets(Vector3::new(-10.0, -10.0, 0.0), Vector3::new(10.0, 10.0, 20.0), n)).unwrap()
}

/// UV sphere centred at the origin with `2 * slices * (stacks - 1)` facets.
pub fn sphere(radius: f64, stacks: usize, slices: usize) -> TriangleMesh {
    let stacks = stacks.max(2);
    let slices = slices.max(3);
    let mut vertices = vec![Vector3::new(0.0, 0.0, radius)];
    for i in 1..stacks {
        let phi = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let theta = 2.0 * PI * j as f64 / slices as f64;
            vertices.push(radius * Vector3::new(phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos()));
        }
    }
    let south = vertices.len() as u32;
    vertices.push(Vector3::new(0.0, 0.0, -radius));
    let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
    let mut triangles = Vec::new();
    for j in 0..slices {
        triangles.push([0, ring(1, j), ring(1, j + 1)]);
        triangles.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b, c, d) = (ring(i, j), ring(i + 1, j), ring(i + 1, j + 1), ring(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriangleMesh::new(vertices, triangles).unwrap()
}

/// Moves every vertex in the `x >= 0, y >= 0` quadrant by `offset`.
pub fn displace_corner_region(mesh: &TriangleMesh, offset: Vector3<f64>) -> TriangleMesh {
    mesh.map_vertices(|v| if v.x >= 0.0 && v.y >= 0.0 { v + offset } else { *v })
        .unwrap()
}

/// Uniformly scaled copy about the origin.
pub fn scaled(mesh: &TriangleMesh, factor: f64) -> TriangleMesh {
    mesh.map_vertices(|v| v * factor).unwrap()
}

#[derive(Debug, Clone)]
pub struct PrintProgram {
    pub layers: u32,
    pub layer_height: f64,
    /// Half width of the square perimeter, mm.
    pub half_width: f64,
    /// Bed centre in machine XY.
    pub center: [f64; 2],
    pub z_hop: bool,
    pub vendor_words: bool,
}

impl Default for PrintProgram {
    fn default() -> Self {
        PrintProgram {
            layers: 30,
            layer_height: 0.2,
            half_width: 10.0,
            center: [150.0, 150.0],
            z_hop: true,
            vendor_words: true,
        }
    }
}

impl PrintProgram {
    /// Square-perimeter print with absolute extrusion.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let [cx, cy] = self.center;
        let h = self.half_width;
        let corners = [(-h, -h), (h, -h), (h, h), (-h, h), (-h, -h)];
        writeln!(s, "; square perimeter test print, {} layers", self.layers).unwrap();
        writeln!(s, "M140 S60").unwrap();
        writeln!(s, "M104 S210").unwrap();
        writeln!(s, "G28").unwrap();
        writeln!(s, "G21 ; millimetres").unwrap();
        writeln!(s, "G90").unwrap();
        writeln!(s, "M82").unwrap();
        writeln!(s, "G92 E0").unwrap();
        let mut e = 0.0;
        for layer in 1..=self.layers {
            let z = fmt_mm(layer as f64 * self.layer_height);
            writeln!(s, ";LAYER:{}", layer - 1).unwrap();
            if self.vendor_words {
                writeln!(s, "M73 P{}", 100 * (layer - 1) / self.layers).unwrap();
            }
            writeln!(s, "G0 X{} Y{} Z{} F6000", fmt_mm(cx - h), fmt_mm(cy - h), z).unwrap();
            for &(x, y) in &corners[1..] {
                e += 0.8;
                writeln!(s, "G1 X{} Y{} E{} F1800", fmt_mm(cx + x), fmt_mm(cy + y), fmt_mm(e)).unwrap();
            }
            if self.z_hop {
                let hop = fmt_mm(layer as f64 * self.layer_height + 0.4);
                writeln!(s, "G1 Z{hop} F3000").unwrap();
                writeln!(s, "G0 X{} Y{}", fmt_mm(cx), fmt_mm(cy)).unwrap();
                writeln!(s, "G1 Z{z}").unwrap();
            }
        }
        if self.vendor_words {
            writeln!(s, "M117 done").unwrap();
        }
        writeln!(s, "M104 S0").unwrap();
        writeln!(s, "M140 S0").unwrap();
        s
    }
}

fn fmt_mm(v: f64) -> String {
    // four decimals avoids binary noise like 0.6000000000000001
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}
