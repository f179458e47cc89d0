//! Portable float maps for depth and normal buffers.
//!
//! `Pf` grayscale and `PF` color, negative scale (little-endian), rows
//! written bottom-to-top per the format convention.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_pfm_gray(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::shape(format!(
            "{} values for {width}x{height}",
            data.len()
        )));
    }
    super::create_parent(path)?;
    let mut bytes = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for row in (0..height).rev() {
        for col in 0..width {
            bytes.extend_from_slice(&(data[row * width + col] as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_pfm_color(path: &Path, width: usize, height: usize, data: &[[f64; 3]]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::shape(format!(
            "{} pixels for {width}x{height}",
            data.len()
        )));
    }
    super::create_parent(path)?;
    let mut bytes = format!("PF\n{width} {height}\n-1.0\n").into_bytes();
    for row in (0..height).rev() {
        for col in 0..width {
            for c in data[row * width + col] {
                bytes.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_header_and_row_order() {
        let dir = std::env::temp_dir().join("lamella_pfm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("depth.pfm");
        write_pfm_gray(&path, 2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text_end = 3 + 4 + 5; // "Pf\n" + "2 2\n" + "-1.0\n"
        assert_eq!(&bytes[..text_end], b"Pf\n2 2\n-1.0\n");
        // Bottom row (3,4) first.
        let f = f32::from_le_bytes(bytes[text_end..text_end + 4].try_into().unwrap());
        assert_eq!(f, 3.0);
    }
}
