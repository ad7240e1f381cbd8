//! Wavefront OBJ export and import (`v`, `vt`, `f v/vt`).

use std::io::{self, BufRead, Write};

use nalgebra::Point3;

/// Writes positions, UVs and triangles. Vertex `i` is written as OBJ index
/// `i + 1`, so ids survive a round trip.
pub fn write_obj<W: Write>(
    mut w: W,
    positions: &[Point3<f64>],
    uv: &[[f64; 2]],
    triangles: &[[u32; 3]],
) -> io::Result<()> {
    for p in positions {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
    }
    for t in uv {
        writeln!(w, "vt {} {}", t[0], t[1])?;
    }
    let with_uv = uv.len() == positions.len();
    for f in triangles {
        let [a, b, c] = f.map(|v| v + 1);
        if with_uv {
            writeln!(w, "f {a}/{a} {b}/{b} {c}/{c}")?;
        } else {
            writeln!(w, "f {a} {b} {c}")?;
        }
    }
    Ok(())
}

/// Parsed OBJ contents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjData {
    pub positions: Vec<Point3<f64>>,
    pub uv: Vec<[f64; 2]>,
    pub triangles: Vec<[u32; 3]>,
}

fn bad(line: usize, msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {msg}"))
}

/// Reads the subset written by [`write_obj`]. Faces must be triangles;
/// texture indices in faces are ignored.
pub fn read_obj<R: BufRead>(r: R) -> io::Result<ObjData> {
    let mut out = ObjData::default();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let nums = |parts: std::str::SplitWhitespace<'_>| -> io::Result<Vec<f64>> {
            parts.map(|s| s.parse::<f64>().map_err(|_| bad(n + 1, "bad number"))).collect()
        };
        match parts.next() {
            Some("v") => {
                let v = nums(parts)?;
                if v.len() < 3 {
                    return Err(bad(n + 1, "vertex needs 3 coordinates"));
                }
                out.positions.push(Point3::new(v[0], v[1], v[2]));
            }
            Some("vt") => {
                let v = nums(parts)?;
                if v.len() < 2 {
                    return Err(bad(n + 1, "texture coordinate needs 2 values"));
                }
                out.uv.push([v[0], v[1]]);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|s| {
                        s.split('/')
                            .next()
                            .and_then(|i| i.parse::<u32>().ok())
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| bad(n + 1, "bad face index"))
                    })
                    .collect::<io::Result<_>>()?;
                if idx.len() != 3 {
                    return Err(bad(n + 1, "only triangles are supported"));
                }
                out.triangles.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let pts = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.5, 0.0, 0.25), Point3::new(0.0, 1.0, -0.125)];
        let uv = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let tris = vec![[0, 1, 2]];
        let mut buf = Vec::new();
        write_obj(&mut buf, &pts, &uv, &tris).unwrap();
        let back = read_obj(buf.as_slice()).unwrap();
        assert_eq!(back, ObjData { positions: pts, uv, triangles: tris });
    }
}
