use std::path::Path;

use crate::error::{Error, Result};

pub const RASTER_MAGIC: &[u8; 4] = b"RAS1";

/// Dense `h x w` grid of thaw values in centimetres (negative = thaw,
/// positive = heave). `NaN` marks a void cell. Row `r`, column `c` covers
/// `[origin_x + c * cell, origin_x + (c + 1) * cell)` by
/// `[origin_y + r * cell, origin_y + (r + 1) * cell)`, so row 0 is the
/// southern edge.
#[derive(Debug, Clone)]
pub struct ThawRaster {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
    pub origin: [f64; 2],
    pub cell_size: f64,
}

impl PartialEq for ThawRaster {
    /// Bitwise on values so void cells compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.h == other.h
            && self.w == other.w
            && self.origin.map(f64::to_bits) == other.origin.map(f64::to_bits)
            && self.cell_size.to_bits() == other.cell_size.to_bits()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.values.len() == other.values.len()
    }
}

impl ThawRaster {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || values.len() != h * w {
            return Err(Error::Dimension(format!("raster {h}x{w} with {} values", values.len())));
        }
        Ok(Self { h, w, values, origin: [0.0, 0.0], cell_size: 0.1 })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.w + c]
    }

    /// `true` where the cell holds a value.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.values.iter().map(|v| !v.is_nan()).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }
}

/// Encode as `RAS1`: magic, `u32` h, `u32` w, `f64` origin x, `f64` origin y,
/// `f64` cell size, then `h * w` little-endian `f32` values (NaN = void).
pub fn encode_raster(r: &ThawRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + 4 * r.values.len());
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&(r.h as u32).to_le_bytes());
    out.extend_from_slice(&(r.w as u32).to_le_bytes());
    out.extend_from_slice(&r.origin[0].to_le_bytes());
    out.extend_from_slice(&r.origin[1].to_le_bytes());
    out.extend_from_slice(&r.cell_size.to_le_bytes());
    for v in &r.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raster(buf: &[u8]) -> Result<ThawRaster> {
    let need = |at: usize, n: usize, what: &str| -> Result<()> {
        if buf.len() < at + n {
            Err(Error::format(at as u64, format!("truncated {what}")))
        } else {
            Ok(())
        }
    };
    need(0, 4, "magic")?;
    if &buf[..4] != RASTER_MAGIC {
        return Err(Error::format(0, "bad magic, expected RAS1"));
    }
    need(4, 32, "header")?;
    let h = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let f = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let origin = [f(12), f(20)];
    let cell_size = f(28);
    if h == 0 || w == 0 {
        return Err(Error::format(4, "zero raster dimension"));
    }
    let n = h.checked_mul(w).ok_or_else(|| Error::format(4, "raster too large"))?;
    need(36, n * 4, "payload")?;
    if buf.len() != 36 + n * 4 {
        return Err(Error::format((36 + n * 4) as u64, "trailing bytes after payload"));
    }
    let values = buf[36..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    Ok(ThawRaster { h, w, values, origin, cell_size })
}

pub fn write_raster(r: &ThawRaster, path: &Path) -> Result<()> {
    std::fs::write(path, encode_raster(r))?;
    Ok(())
}

pub fn read_raster(path: &Path) -> Result<ThawRaster> {
    decode_raster(&std::fs::read(path)?)
}
