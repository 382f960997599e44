//! Binary PGM (P5) reader/writer, plus the grid <-> byte conventions used by
//! the dataset layout: images quantize [0, 1] to 0..=255, masks store 0/255
//! and load back through a >= 128 threshold.
//!
//! Header layout written here is exactly "P5\n{w} {h}\n255\n" followed by
//! w*h raw bytes. The reader accepts any ASCII whitespace between header
//! tokens but no comments; maxval must be 255.

use crate::error::{Result, SsbError};
use crate::grid::Grid;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write bytes to a sibling temp file and rename it into place, so readers
/// never observe a half-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tag = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(
        ".{}.tmp-{}-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id(),
        tag
    ));
    let ctx = |e: std::io::Error| SsbError::io(tmp.display().to_string(), e);
    let mut f = std::fs::File::create(&tmp).map_err(ctx)?;
    f.write_all(bytes).map_err(ctx)?;
    f.sync_all().map_err(ctx)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| SsbError::io(path.display().to_string(), e))
}

/// Serialize an 8-bit grayscale buffer as P5.
pub fn encode_pgm(width: usize, height: usize, bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() != width * height || width == 0 || height == 0 {
        return Err(SsbError::InvalidArgument(format!(
            "pgm buffer length {} does not match {}x{}",
            bytes.len(),
            width,
            height
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    Ok(out)
}

/// Parse a P5 buffer into (width, height, pixels).
pub fn decode_pgm(data: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |msg: &str| SsbError::Dataset(format!("pgm: {msg}"));
    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> Result<Vec<u8>> {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(data[start..pos].to_vec())
    };
    if token(data)? != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let parse = |t: Vec<u8>| -> Result<usize> {
        std::str::from_utf8(&t)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| bad("non-numeric header field"))
    };
    let width = parse(token(data)?)?;
    let height = parse(token(data)?)?;
    let maxval = parse(token(data)?)?;
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    pos += 1;
    let need = width * height;
    if pos > data.len() || data.len() - pos != need {
        return Err(bad("pixel payload length mismatch"));
    }
    Ok((width, height, data[pos..].to_vec()))
}

/// Quantize an image grid ([0, 1], clamped) to bytes.
pub fn image_to_bytes(g: &Grid) -> Vec<u8> {
    g.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Expand stored image bytes back to [0, 1].
pub fn image_from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Grid> {
    Grid::from_vec(height, width, bytes.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Binary mask to 0/255 bytes; rejects non-binary grids.
pub fn mask_to_bytes(g: &Grid) -> Result<Vec<u8>> {
    if !g.is_binary() {
        return Err(SsbError::InvalidArgument("mask grid is not binary".into()));
    }
    Ok(g.data().iter().map(|&v| if v == 1.0 { 255u8 } else { 0u8 }).collect())
}

/// Threshold stored bytes at 128 into a binary mask grid.
pub fn mask_from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Grid> {
    Grid::from_vec(
        height,
        width,
        bytes.iter().map(|&b| if b >= 128 { 1.0 } else { 0.0 }).collect(),
    )
}

pub fn write_image_pgm(path: &Path, g: &Grid) -> Result<()> {
    atomic_write(path, &encode_pgm(g.width(), g.height(), &image_to_bytes(g))?)
}

pub fn write_mask_pgm(path: &Path, g: &Grid) -> Result<()> {
    atomic_write(path, &encode_pgm(g.width(), g.height(), &mask_to_bytes(g)?)?)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| SsbError::io(path.display().to_string(), e))
}

pub fn read_image_pgm(path: &Path) -> Result<Grid> {
    let (w, h, bytes) = decode_pgm(&read_file(path)?)?;
    image_from_bytes(w, h, &bytes)
}

pub fn read_mask_pgm(path: &Path) -> Result<Grid> {
    let (w, h, bytes) = decode_pgm(&read_file(path)?)?;
    mask_from_bytes(w, h, &bytes)
}
