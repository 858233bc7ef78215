//! Point cloud output: ASCII PLY and plain XYZ.

use std::io::{self, Write};

use nalgebra::Vector3;

/// ASCII PLY with one `vertex` element of float x/y/z.
pub fn write_ply_ascii<W: Write>(mut w: W, points: &[Vector3<f64>]) -> io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "end_header")?;
    for p in points {
        writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    Ok(())
}

/// One `x y z` line per point at full precision.
pub fn write_xyz<W: Write>(mut w: W, points: &[Vector3<f64>]) -> io::Result<()> {
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}
