//! Persistence formats: meshes (OBJ, binary PLY), grids (SGRD), images
//! (PNG, PFM), CSV tables, and the run manifest.

pub mod manifest;
pub mod obj;
pub mod pfm;
pub mod png_io;
pub mod ply;
pub mod sgrd;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use manifest::Manifest;
pub use obj::{read_obj, write_obj};
pub use pfm::{write_pfm_color, write_pfm_gray};
pub use png_io::{write_alpha_png, write_rgb_png, write_semantic_png};
pub use ply::write_ply;
pub use sgrd::{read_sgrd, write_sgrd};

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    Ok(())
}

/// Writes a CSV file from rows of string fields (first row: header).
pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    create_parent(path)?;
    let mut out = String::new();
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
