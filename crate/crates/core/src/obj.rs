//! ASCII OBJ output (`v` and `f` records only).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(32 * (mesh.vertices.len() + mesh.triangles.len()));
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).expect("string write");
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("string write");
    }
    out
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    fs::write(path, obj_string(mesh)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn records() {
        let m = TriangleMesh {
            vertices: vec![Vector3::new(0.0, 0.5, -1.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 2.25)],
            triangles: vec![[0, 1, 2]],
            keys: Vec::new(),
        };
        assert_eq!(obj_string(&m), "v 0 0.5 -1\nv 1 0 0\nv 0 0 2.25\nf 1 2 3\n");
        // shortest roundtrip formatting keeps every bit
        let v = Vector3::new(0.1 + 0.2, 1.0 / 3.0, -7e-12);
        let s = obj_string(&TriangleMesh { vertices: vec![v], ..Default::default() });
        let back: Vec<f64> = s[2..].split_whitespace().map(|x| x.parse().unwrap()).collect();
        assert_eq!(back, vec![v.x, v.y, v.z]);
    }
}
