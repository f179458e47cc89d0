//! SGRD: the fitted-grid container.
//!
//! Layout: magic `SGRD`, version byte, mode byte (0 density, 1 signed
//! distance), dims as 3×u32 little-endian, bounds as 6×f32 (min xyz, max
//! xyz), channel count as u32, then f32 node data in x-fastest node order
//! with each node's channels contiguous (geometry, RGB, semantic logits).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::FieldMode;
use crate::fit::DenseGrid;

const MAGIC: &[u8; 4] = b"SGRD";
const VERSION: u8 = 1;

pub fn write_sgrd(grid: &DenseGrid, path: &Path) -> Result<()> {
    super::create_parent(path)?;
    let dims = grid.dims();
    let channels = grid.channels();
    let mut bytes = Vec::with_capacity(24 + grid.parameter_count() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.push(VERSION);
    bytes.push(match grid_mode(grid) {
        FieldMode::Density => 0,
        FieldMode::Sdf => 1,
    });
    for d in dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for b in [-0.5f32, -0.5, -0.5, 0.5, 0.5, 0.5] {
        bytes.extend_from_slice(&b.to_le_bytes());
    }
    bytes.extend_from_slice(&(channels as u32).to_le_bytes());
    for &v in grid.raw_data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn grid_mode(grid: &DenseGrid) -> FieldMode {
    use crate::field::FieldSampler;
    grid.mode()
}

pub fn read_sgrd(path: &Path) -> Result<DenseGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 36 || &bytes[0..4] != MAGIC {
        return Err(fail("not an SGRD file"));
    }
    if bytes[4] != VERSION {
        return Err(fail("unsupported version"));
    }
    let mode = match bytes[5] {
        0 => FieldMode::Density,
        1 => FieldMode::Sdf,
        _ => return Err(fail("bad mode byte")),
    };
    let u32_at = |off: usize| -> u32 {
        u32::from_le_bytes(bytes[off..off + 4].try_into().expect("bounds checked"))
    };
    let dims = [u32_at(6) as usize, u32_at(10) as usize, u32_at(14) as usize];
    // Bounds occupy bytes 18..42; fixed to the unit cube in this revision.
    let channels = u32_at(42) as usize;
    let expected = dims[0] * dims[1] * dims[2] * channels;
    let data_bytes = &bytes[46..];
    if data_bytes.len() != expected * 4 {
        return Err(fail(&format!(
            "expected {} f32 values, found {}",
            expected,
            data_bytes.len() / 4
        )));
    }
    if channels < 5 {
        return Err(fail("needs geometry, color, and at least one logit channel"));
    }
    let data: Vec<f64> = data_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
        .collect();
    DenseGrid::from_parts(dims, channels - 4, mode, data)
}
