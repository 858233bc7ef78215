//! STL reading and writing (ASCII and little-endian binary).

use std::io::{self, Write};

use nalgebra::Vector3;

use super::CaptureError;

const HEADER_LEN: usize = 80;
const FACET_LEN: usize = 50;

/// Parses STL bytes into raw facets (vertex triples).
///
/// A file whose length matches `84 + 50 * count` is binary even if its
/// header starts with `solid`, which some exporters write.
pub fn parse_stl(bytes: &[u8]) -> Result<Vec<[Vector3<f64>; 3]>, CaptureError> {
    if let Some(count) = binary_count(bytes) {
        if bytes.len() == HEADER_LEN + 4 + FACET_LEN * count as usize {
            return parse_binary(bytes, count);
        }
    }
    let starts_solid = bytes
        .iter()
        .position(|b| !b.is_ascii_whitespace())
        .is_some_and(|i| bytes[i..].starts_with(b"solid"));
    if starts_solid {
        if let Ok(text) = std::str::from_utf8(bytes) {
            return parse_ascii(text);
        }
    }
    match binary_count(bytes) {
        None => Err(CaptureError::Format {
            offset: bytes.len(),
            message: "truncated STL header".into(),
        }),
        Some(count) => {
            let expected = HEADER_LEN + 4 + FACET_LEN * count as usize;
            Err(CaptureError::Format {
                offset: if bytes.len() < expected { bytes.len() } else { expected },
                message: format!(
                    "binary STL declares {count} facets ({expected} bytes) but file has {} bytes",
                    bytes.len()
                ),
            })
        }
    }
}

fn binary_count(bytes: &[u8]) -> Option<u32> {
    let raw = bytes.get(HEADER_LEN..HEADER_LEN + 4)?;
    Some(u32::from_le_bytes(raw.try_into().ok()?))
}

fn parse_binary(bytes: &[u8], count: u32) -> Result<Vec<[Vector3<f64>; 3]>, CaptureError> {
    let read_f32 = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
    let mut facets = Vec::with_capacity(count as usize);
    for f in 0..count as usize {
        let base = HEADER_LEN + 4 + f * FACET_LEN;
        // skip the 12-byte normal
        let tri = [0, 1, 2].map(|v| {
            let o = base + 12 + v * 12;
            Vector3::new(read_f32(o), read_f32(o + 4), read_f32(o + 8))
        });
        if tri.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(CaptureError::Format {
                offset: base,
                message: format!("facet {f} has a non-finite vertex"),
            });
        }
        facets.push(tri);
    }
    Ok(facets)
}

struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let rest = &self.text[self.pos..];
        let start = self.pos + (rest.len() - rest.trim_start().len());
        let rest = &self.text[start..];
        if rest.is_empty() {
            self.pos = start;
            return None;
        }
        let len = rest.find(|c: char| c.is_whitespace()).unwrap_or(rest.len());
        self.pos = start + len;
        Some((start, &rest[..len]))
    }

    fn expect(&mut self, word: &str) -> Result<usize, CaptureError> {
        match self.next() {
            Some((off, tok)) if tok.eq_ignore_ascii_case(word) => Ok(off),
            Some((off, tok)) => Err(CaptureError::Format {
                offset: off,
                message: format!("expected '{word}', found '{tok}'"),
            }),
            None => Err(self.eof(word)),
        }
    }

    fn number(&mut self) -> Result<f64, CaptureError> {
        match self.next() {
            Some((off, tok)) => tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CaptureError::Format {
                    offset: off,
                    message: format!("bad number '{tok}'"),
                }),
            None => Err(self.eof("number")),
        }
    }

    fn eof(&self, wanted: &str) -> CaptureError {
        CaptureError::Format {
            offset: self.text.len(),
            message: format!("unexpected end of file, expected {wanted}"),
        }
    }

    /// Skips the rest of the current line (the solid name).
    fn skip_line(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.find('\n').map(|i| i + 1).unwrap_or(rest.len());
    }
}

fn parse_ascii(text: &str) -> Result<Vec<[Vector3<f64>; 3]>, CaptureError> {
    let mut tok = Tokens { text, pos: 0 };
    tok.expect("solid")?;
    tok.skip_line();
    let mut facets = Vec::new();
    loop {
        match tok.next() {
            Some((_, t)) if t.eq_ignore_ascii_case("endsolid") => break,
            Some((_, t)) if t.eq_ignore_ascii_case("facet") => {
                tok.expect("normal")?;
                for _ in 0..3 {
                    tok.number()?;
                }
                tok.expect("outer")?;
                tok.expect("loop")?;
                let mut tri = [Vector3::zeros(); 3];
                for v in tri.iter_mut() {
                    tok.expect("vertex")?;
                    *v = Vector3::new(tok.number()?, tok.number()?, tok.number()?);
                }
                tok.expect("endloop")?;
                tok.expect("endfacet")?;
                facets.push(tri);
            }
            Some((off, t)) => {
                return Err(CaptureError::Format {
                    offset: off,
                    message: format!("expected 'facet' or 'endsolid', found '{t}'"),
                })
            }
            None => return Err(tok.eof("endsolid")),
        }
    }
    Ok(facets)
}

fn facet_normal(tri: &[Vector3<f64>; 3]) -> Vector3<f64> {
    (tri[1] - tri[0])
        .cross(&(tri[2] - tri[0]))
        .try_normalize(0.0)
        .unwrap_or_else(Vector3::zeros)
}

pub fn write_binary_stl<W: Write>(mut w: W, facets: &[[Vector3<f64>; 3]]) -> io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    let tag = b"binary stl";
    header[..tag.len()].copy_from_slice(tag);
    w.write_all(&header)?;
    w.write_all(&(facets.len() as u32).to_le_bytes())?;
    for tri in facets {
        let n = facet_normal(tri);
        for v in std::iter::once(&n).chain(tri.iter()) {
            for c in v.iter() {
                w.write_all(&(*c as f32).to_le_bytes())?;
            }
        }
        w.write_all(&[0, 0])?;
    }
    Ok(())
}

pub fn write_ascii_stl<W: Write>(mut w: W, name: &str, facets: &[[Vector3<f64>; 3]]) -> io::Result<()> {
    writeln!(w, "solid {name}")?;
    for tri in facets {
        let n = facet_normal(tri);
        writeln!(w, "  facet normal {} {} {}", n.x, n.y, n.z)?;
        writeln!(w, "    outer loop")?;
        for v in tri {
            writeln!(w, "      vertex {} {} {}", v.x, v.y, v.z)?;
        }
        writeln!(w, "    endloop")?;
        writeln!(w, "  endfacet")?;
    }
    writeln!(w, "endsolid {name}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_facet() -> Vec<[Vector3<f64>; 3]> {
        vec![[Vector3::zeros(), Vector3::x(), Vector3::y()]]
    }

    #[test]
    fn ascii_round_trip() {
        let mut buf = Vec::new();
        write_ascii_stl(&mut buf, "t", &one_facet()).unwrap();
        assert_eq!(parse_stl(&buf).unwrap(), one_facet());
    }

    #[test]
    fn binary_round_trip_even_with_solid_header() {
        let mut buf = Vec::new();
        write_binary_stl(&mut buf, &one_facet()).unwrap();
        buf[..5].copy_from_slice(b"solid");
        assert_eq!(parse_stl(&buf).unwrap(), one_facet());
    }

    #[test]
    fn binary_count_mismatch() {
        let mut buf = Vec::new();
        write_binary_stl(&mut buf, &one_facet()).unwrap();
        buf[80..84].copy_from_slice(&3u32.to_le_bytes());
        match parse_stl(&buf) {
            Err(CaptureError::Format { offset, message }) => {
                assert_eq!(offset, buf.len());
                assert!(message.contains("3 facets"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_header() {
        assert!(matches!(parse_stl(&[0u8; 40]), Err(CaptureError::Format { offset: 40, .. })));
    }

    #[test]
    fn ascii_errors_carry_offsets() {
        let text = "solid x\n facet normal 0 0 1\n outer loop\n vertex 0 0 zero\n";
        match parse_stl(text.as_bytes()) {
            Err(CaptureError::Format { offset, .. }) => assert_eq!(&text[offset..offset + 4], "zero"),
            other => panic!("{other:?}"),
        }
        let text = "solid x\n facet normal 0 0 1\n outer loop\n";
        assert!(matches!(parse_stl(text.as_bytes()), Err(CaptureError::Format { .. })));
    }
}
