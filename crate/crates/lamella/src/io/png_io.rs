//! 8-bit PNG export for color, coverage, and semantic-argmax buffers.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::render::RenderTarget;

/// Distinct palette for semantic labels (body, cloth, hair, extras).
const SEMANTIC_PALETTE: [[u8; 3]; 8] = [
    [224, 172, 125],
    [64, 100, 200],
    [120, 72, 48],
    [200, 200, 60],
    [60, 200, 200],
    [200, 60, 200],
    [128, 128, 128],
    [255, 255, 255],
];

fn encode(path: &Path, width: u32, height: u32, gray: bool, data: &[u8]) -> Result<()> {
    super::create_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(if gray {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Premultiplied RGB over a black background.
pub fn write_rgb_png(target: &RenderTarget, path: &Path) -> Result<()> {
    let mut data = Vec::with_capacity(target.pixel_count() * 3);
    for p in 0..target.pixel_count() {
        for c in 0..3 {
            data.push(to_u8(target.rgb[p][c]));
        }
    }
    encode(path, target.width as u32, target.height as u32, false, &data)
}

pub fn write_alpha_png(target: &RenderTarget, path: &Path) -> Result<()> {
    let data: Vec<u8> = target.alpha.iter().map(|&a| to_u8(a)).collect();
    encode(path, target.width as u32, target.height as u32, true, &data)
}

/// Per-pixel argmax of the semantic map, palette-colored; background black.
pub fn write_semantic_png(target: &RenderTarget, path: &Path) -> Result<()> {
    let mut data = Vec::with_capacity(target.pixel_count() * 3);
    for p in 0..target.pixel_count() {
        if target.alpha[p] > 0.5 {
            let sem = target.semantic_at(p);
            let mut best = 0;
            for c in 1..sem.len() {
                if sem[c] > sem[best] {
                    best = c;
                }
            }
            data.extend_from_slice(&SEMANTIC_PALETTE[best.min(7)]);
        } else {
            data.extend_from_slice(&[0, 0, 0]);
        }
    }
    encode(path, target.width as u32, target.height as u32, false, &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_valid_pngs() {
        let dir = std::env::temp_dir().join("lamella_png_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut t = RenderTarget::zeros(8, 8, 3);
        for p in 0..64 {
            t.rgb[p] = [0.2, 0.5, 0.9];
            t.alpha[p] = if p % 2 == 0 { 1.0 } else { 0.0 };
            t.semantic[p * 3 + (p % 3)] = 1.0;
        }
        for (name, f) in [
            ("rgb.png", write_rgb_png as fn(&RenderTarget, &Path) -> Result<()>),
            ("alpha.png", write_alpha_png),
            ("sem.png", write_semantic_png),
        ] {
            let path = dir.join(name);
            f(&t, &path).unwrap();
            let bytes = std::fs::read(&path).unwrap();
            assert_eq!(&bytes[1..4], b"PNG");
        }
    }
}
