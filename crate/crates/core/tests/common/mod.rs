#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use fdmscan_core::capture::stl::write_binary_stl;
use fdmscan_core::TriangleMesh;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn corpus() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(data_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "gcode"))
        .collect();
    files.sort();
    files
}

pub fn write_stl(path: &Path, mesh: &TriangleMesh) {
    let mut w = BufWriter::new(File::create(path).unwrap());
    write_binary_stl(&mut w, mesh.facets()).unwrap();
}

/// The 100-layer, 20 mm tall square print with a single `M102 P<p>` after
/// the last layer.
pub fn cube_print_with_scan(p: u32) -> String {
    let text = std::fs::read_to_string(data_dir().join("cube_100_layers.gcode")).unwrap();
    let mut out = String::new();
    let mut pending = false;
    for line in text.lines() {
        if line.starts_with("M104 S0") && !pending {
            out.push_str(&format!("M102 P{p}\n"));
            pending = true;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}
