//! Binary little-endian PLY export.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

pub fn write_ply(mesh: &TriMesh, path: &Path) -> Result<()> {
    super::create_parent(path)?;
    let has_colors = mesh.vertex_colors.is_some();
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", mesh.vertices.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if has_colors {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!("element face {}\n", mesh.faces.len()));
    header.push_str("property list uchar uint vertex_indices\nend_header\n");

    let mut bytes = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in [v.x, v.y, v.z] {
            bytes.extend_from_slice(&(c as f32).to_le_bytes());
        }
        if let Some(colors) = &mesh.vertex_colors {
            for c in colors[i] {
                bytes.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    for f in &mesh.faces {
        bytes.push(3);
        for &i in f {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_tetrahedron;

    #[test]
    fn header_and_sizes_are_consistent() {
        let dir = std::env::temp_dir().join("lamella_ply_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tet.ply");
        let mut mesh = unit_tetrahedron();
        mesh.vertex_colors = Some(vec![[0.5; 3]; 4]);
        write_ply(&mesh, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes
            .windows(11)
            .position(|w| w == b"end_header\n")
            .unwrap()
            + 11;
        let body = &bytes[header_end..];
        // 4 vertices × (12 + 3) bytes + 4 faces × 13 bytes.
        assert_eq!(body.len(), 4 * 15 + 4 * 13);
        let text = String::from_utf8_lossy(&bytes[..header_end]);
        assert!(text.contains("element vertex 4"));
        assert!(text.contains("element face 4"));
        assert!(text.contains("binary_little_endian"));
    }
}
