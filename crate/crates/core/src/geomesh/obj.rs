use std::fmt::Write as _;
use std::path::Path;

use crate::math::V3;
use crate::sceneio::IoError;

use super::TriangleMesh;

/// ASCII OBJ with `v` and `f` records (1-based indices).
pub fn encode_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(32 * (mesh.vertices.len() + mesh.triangles.len()));
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

/// Parse `v`/`f` records; polygons are fan-triangulated, other records ignored.
pub fn decode_obj(text: &str) -> Result<TriangleMesh, IoError> {
    let mut mesh = TriangleMesh::default();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut it = line.split_whitespace();
        let ctx = |m: String| IoError::Invalid(format!("line {}: {m}", ln + 1));
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| ctx(format!("bad vertex coordinate `{t}`"))))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 || !c.iter().all(|v| v.is_finite()) {
                    return Err(ctx("vertex needs 3 finite coordinates".into()));
                }
                mesh.vertices.push(V3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let n = mesh.vertices.len() as i64;
                let idx: Vec<u32> = it
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| ctx(format!("bad face index `{t}`")))?;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 || i >= n {
                            return Err(ctx(format!("face index {t} out of range ({n} vertices)")));
                        }
                        Ok(i as u32)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(ctx("face needs at least 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))?;
    decode_obj(&text).map_err(|e| e.at(path))
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), IoError> {
    std::fs::write(path, encode_obj(mesh)).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_is_fanned() {
        let m = decode_obj("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_indices() {
        let m = decode_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn out_of_range_is_error() {
        assert!(decode_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }
}
