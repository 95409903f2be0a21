use std::path::Path;

use crate::error::{Error, Result};

pub const TILE_MAGIC: &[u8; 4] = b"PCT1";
const RECORD_BYTES: usize = 7 * 4 + 1;

/// Vegetation categories carried per point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum PointClass {
    Ground = 0,
    LowVegetation = 1,
    MediumVegetation = 2,
    HighVegetation = 3,
    Other = 4,
}

impl PointClass {
    pub const COUNT: usize = 5;

    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => PointClass::Ground,
            1 => PointClass::LowVegetation,
            2 => PointClass::MediumVegetation,
            3 => PointClass::HighVegetation,
            4 => PointClass::Other,
            _ => return Err(Error::Data(format!("unknown point class label {v}"))),
        })
    }
}

/// A lidar tile: per-point position, colour + intensity, and class label.
///
/// Before normalisation `xyz` is in metres with x, y relative to `origin`;
/// afterwards x, y are in `[-1, 1]` and z in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudTile {
    pub xyz: Vec<[f64; 3]>,
    /// r, g, b, intensity.
    pub attrs: Vec<[f64; 4]>,
    pub labels: Vec<u8>,
    /// Lower-left corner of the tile in projected (UTM) metres.
    pub origin: [f64; 2],
    /// Tile width and height in metres.
    pub extent: [f64; 2],
    pub epoch: String,
    pub coords_normalized: bool,
    pub attrs_standardized: bool,
}

impl PointCloudTile {
    pub fn new(xyz: Vec<[f64; 3]>, attrs: Vec<[f64; 4]>, labels: Vec<u8>) -> Result<Self> {
        let t = Self {
            xyz,
            attrs,
            labels,
            origin: [0.0, 0.0],
            extent: [1.0, 1.0],
            epoch: String::new(),
            coords_normalized: false,
            attrs_standardized: false,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.xyz.is_empty() {
            return Err(Error::Degenerate("tile has no points".into()));
        }
        if self.attrs.len() != self.xyz.len() || self.labels.len() != self.xyz.len() {
            return Err(Error::Data(format!(
                "tile arrays disagree: {} points, {} attrs, {} labels",
                self.xyz.len(),
                self.attrs.len(),
                self.labels.len()
            )));
        }
        if let Some(i) = self.xyz.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Data(format!("point {i} has a non-finite coordinate")));
        }
        Ok(())
    }

    /// Keep the points at `ids`, in that order.
    pub fn select(&self, ids: &[usize]) -> Self {
        Self {
            xyz: ids.iter().map(|&i| self.xyz[i]).collect(),
            attrs: ids.iter().map(|&i| self.attrs[i]).collect(),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            xyz: Vec::new(),
            attrs: Vec::new(),
            labels: Vec::new(),
            origin: self.origin,
            extent: self.extent,
            epoch: self.epoch.clone(),
            coords_normalized: self.coords_normalized,
            attrs_standardized: self.attrs_standardized,
        }
    }

    /// The 7-wide per-point input row: x, y, z, r, g, b, intensity.
    pub fn input_row(&self, i: usize) -> [f64; 7] {
        let (p, a) = (self.xyz[i], self.attrs[i]);
        [p[0], p[1], p[2], a[0], a[1], a[2], a[3]]
    }
}

/// Encode as `PCT1`: magic, `u32` count, then per point seven little-endian
/// `f32` (x, y, z, r, g, b, intensity) and a `u8` class label.
pub fn encode_tile(tile: &PointCloudTile) -> Result<Vec<u8>> {
    tile.validate()?;
    let n = u32::try_from(tile.len()).map_err(|_| Error::Data("too many points".into()))?;
    let mut out = Vec::with_capacity(8 + tile.len() * RECORD_BYTES);
    out.extend_from_slice(TILE_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    for i in 0..tile.len() {
        for v in tile.input_row(i) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.push(tile.labels[i]);
    }
    Ok(out)
}

pub fn decode_tile(buf: &[u8]) -> Result<PointCloudTile> {
    if buf.len() < 4 {
        return Err(Error::format(0, "truncated magic"));
    }
    if &buf[..4] != TILE_MAGIC {
        return Err(Error::format(0, "bad magic, expected PCT1"));
    }
    if buf.len() < 8 {
        return Err(Error::format(4, "truncated point count"));
    }
    let n = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let mut xyz = Vec::with_capacity(n);
    let mut attrs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let at = 8 + i * RECORD_BYTES;
        if buf.len() < at + RECORD_BYTES {
            return Err(Error::format(at as u64, format!("truncated record {i} of {n}")));
        }
        let mut v = [0.0f64; 7];
        for (j, slot) in v.iter_mut().enumerate() {
            let o = at + 4 * j;
            let f = f32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
            if j < 3 && !f.is_finite() {
                return Err(Error::format(o as u64, format!("non-finite coordinate in record {i}")));
            }
            *slot = f as f64;
        }
        xyz.push([v[0], v[1], v[2]]);
        attrs.push([v[3], v[4], v[5], v[6]]);
        labels.push(buf[at + 28]);
    }
    let end = 8 + n * RECORD_BYTES;
    if buf.len() != end {
        return Err(Error::format(end as u64, "trailing bytes after last record"));
    }
    PointCloudTile::new(xyz, attrs, labels)
}

pub fn write_tile(tile: &PointCloudTile, path: &Path) -> Result<()> {
    std::fs::write(path, encode_tile(tile)?)?;
    Ok(())
}

pub fn read_tile(path: &Path) -> Result<PointCloudTile> {
    decode_tile(&std::fs::read(path)?)
}

/// Round every stored value to `f32` precision so in-memory tiles equal
/// what a write/read cycle produces.
pub fn quantize_to_f32(tile: &mut PointCloudTile) {
    for p in tile.xyz.iter_mut() {
        p.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    for a in tile.attrs.iter_mut() {
        a.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}
