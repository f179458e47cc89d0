//! Wavefront OBJ with the `v x y z r g b` vertex-color extension.

use std::fs;
use std::path::Path;

use glam::DVec3;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    super::create_parent(path)?;
    let mut out = String::with_capacity(mesh.vertices.len() * 48);
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.vertex_colors {
            Some(colors) => {
                let c = colors[i];
                out.push_str(&format!(
                    "v {:.9} {:.9} {:.9} {:.6} {:.6} {:.6}\n",
                    v.x, v.y, v.z, c[0], c[1], c[2]
                ));
            }
            None => out.push_str(&format!("v {:.9} {:.9} {:.9}\n", v.x, v.y, v.z)),
        }
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut vertices = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut any_color = false;
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let nums: Vec<f64> = parts.map_while(|t| t.parse().ok()).collect();
                if nums.len() < 3 {
                    return Err(Error::Format(format!(
                        "{}:{}: vertex needs 3 coordinates",
                        path.display(),
                        ln + 1
                    )));
                }
                vertices.push(DVec3::new(nums[0], nums[1], nums[2]));
                if nums.len() >= 6 {
                    any_color = true;
                    colors.push([nums[3], nums[4], nums[5]]);
                } else {
                    colors.push([0.0; 3]);
                }
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or(t);
                        head.parse::<i64>().map(|i| (i - 1) as u32)
                    })
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| {
                        Error::Format(format!(
                            "{}:{}: bad face index",
                            path.display(),
                            ln + 1
                        ))
                    })?;
                if idx.len() < 3 {
                    return Err(Error::Format(format!(
                        "{}:{}: face needs 3 indices",
                        path.display(),
                        ln + 1
                    )));
                }
                // Triangulate fans.
                for t in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[t], idx[t + 1]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriMesh::new(vertices, faces);
    if any_color {
        mesh.vertex_colors = Some(colors);
    }
    mesh.validate()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_tetrahedron;
    use proptest::prelude::*;

    #[test]
    fn round_trip_with_colors() {
        let dir = std::env::temp_dir().join("lamella_obj_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tet.obj");
        let mut mesh = unit_tetrahedron();
        mesh.vertex_colors = Some(vec![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.25, 0.5, 0.75],
        ]);
        write_obj(&mesh, &path).unwrap();
        let back = read_obj(&path).unwrap();
        assert_eq!(back.faces, mesh.faces);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert!((*a - *b).length() < 1e-8);
        }
        let colors = back.vertex_colors.unwrap();
        for (a, b) in colors.iter().zip(mesh.vertex_colors.as_ref().unwrap()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-5);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        // Geometry survives a write/read cycle within the printed precision.
        #[test]
        fn vertices_survive_round_trip(coords in proptest::collection::vec(-10.0f64..10.0, 9)) {
            let mesh = TriMesh::new(
                vec![
                    DVec3::new(coords[0], coords[1], coords[2]),
                    DVec3::new(coords[3], coords[4], coords[5]),
                    DVec3::new(coords[6], coords[7], coords[8]),
                ],
                vec![[0, 1, 2]],
            );
            prop_assume!(mesh.face_area(0) > 1e-9);
            let path = std::env::temp_dir().join(format!(
                "lamella_obj_prop_{}.obj",
                std::process::id()
            ));
            write_obj(&mesh, &path).unwrap();
            let back = read_obj(&path).unwrap();
            for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
                prop_assert!((*a - *b).length() < 1e-7);
            }
        }
    }
}
