use std::collections::BTreeMap;
use std::path::Path;

use super::classes::{class_counts, class_weights, discretize, WeightScheme, NUM_CLASSES};
use super::raster::ThawRaster;
use super::tile::PointCloudTile;
use crate::error::{Error, Result};

/// Dataset-wide normalisation statistics, computed from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub z_min: f64,
    pub z_max: f64,
    pub attr_mean: [f64; 4],
    pub attr_std: [f64; 4],
    pub target_mean: f64,
    pub target_std: f64,
    pub clip_low: f64,
    pub clip_high: f64,
    pub class_weights: [f64; NUM_CLASSES],
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl NormStats {
    /// Statistics over raw (unnormalised) training tiles and their rasters.
    pub fn compute(tiles: &[&PointCloudTile], rasters: &[&ThawRaster], scheme: WeightScheme) -> Result<Self> {
        if tiles.is_empty() || rasters.is_empty() {
            return Err(Error::Degenerate("no training tiles for statistics".into()));
        }
        let (mut z_min, mut z_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut sum = [0.0; 4];
        let mut n = 0usize;
        for t in tiles {
            for (p, a) in t.xyz.iter().zip(&t.attrs) {
                z_min = z_min.min(p[2]);
                z_max = z_max.max(p[2]);
                for j in 0..4 {
                    sum[j] += a[j];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Degenerate("training tiles contain no points".into()));
        }
        let attr_mean = sum.map(|s| s / n as f64);
        let mut ss = [0.0; 4];
        for t in tiles {
            for a in &t.attrs {
                for j in 0..4 {
                    ss[j] += (a[j] - attr_mean[j]).powi(2);
                }
            }
        }
        let attr_std = ss.map(|s| (s / n as f64).sqrt());
        let mut values: Vec<f64> = rasters.iter().flat_map(|r| r.values.iter().copied()).filter(|v| !v.is_nan()).collect();
        if values.len() < 2 {
            return Err(Error::Degenerate("fewer than two valid target cells".into()));
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let clip_low = percentile(&values, 1.0);
        let clip_high = percentile(&values, 99.0);
        let clipped: Vec<f64> = values.iter().map(|v| v.clamp(clip_low, clip_high)).collect();
        let target_mean = clipped.iter().sum::<f64>() / clipped.len() as f64;
        let target_std = (clipped.iter().map(|v| (v - target_mean).powi(2)).sum::<f64>() / clipped.len() as f64).sqrt();
        let classes: Vec<u8> = values.iter().map(|&v| discretize(v)).collect::<Result<_>>()?;
        let counts = class_counts(&classes);
        let stats = Self {
            z_min,
            z_max,
            attr_mean,
            attr_std,
            target_mean,
            target_std,
            clip_low,
            clip_high,
            class_weights: class_weights(&counts, scheme),
        };
        stats.check()?;
        Ok(stats)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.z_max > self.z_min) {
            return Err(Error::Data("z range is empty".into()));
        }
        if self.attr_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Data("attribute with zero standard deviation".into()));
        }
        if !(self.target_std > 0.0) {
            return Err(Error::Data("target standard deviation is zero".into()));
        }
        if !(self.clip_low < self.clip_high) {
            return Err(Error::Data("clip bounds are not ordered".into()));
        }
        Ok(())
    }

    const KEYS: [&'static str; 21] = [
        "z_min",
        "z_max",
        "attr_mean_r",
        "attr_mean_g",
        "attr_mean_b",
        "attr_mean_intensity",
        "attr_std_r",
        "attr_std_g",
        "attr_std_b",
        "attr_std_intensity",
        "target_mean",
        "target_std",
        "clip_low",
        "clip_high",
        "class_weight_1",
        "class_weight_2",
        "class_weight_3",
        "class_weight_4",
        "class_weight_5",
        "class_weight_6",
        "class_weight_7",
    ];

    fn values_in_key_order(&self) -> Vec<f64> {
        let mut v = vec![self.z_min, self.z_max];
        v.extend(self.attr_mean);
        v.extend(self.attr_std);
        v.extend([self.target_mean, self.target_std, self.clip_low, self.clip_high]);
        v.extend(self.class_weights);
        v
    }

    /// Flat `key=value` text with 17 significant digits.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .zip(self.values_in_key_order())
            .map(|(k, v)| format!("{k}={v:.16e}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Data(format!("stats line {}: missing `=`", ln + 1)))?;
            if !Self::KEYS.contains(&k) {
                return Err(Error::Data(format!("stats line {}: unknown key `{k}`", ln + 1)));
            }
            let v: f64 = v.parse().map_err(|_| Error::Data(format!("stats line {}: bad number", ln + 1)))?;
            map.insert(k.to_string(), v);
        }
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::Data(format!("stats missing key `{k}`")));
        let mut cw = [0.0; NUM_CLASSES];
        for (c, slot) in cw.iter_mut().enumerate() {
            *slot = get(&format!("class_weight_{}", c + 1))?;
        }
        let s = Self {
            z_min: get("z_min")?,
            z_max: get("z_max")?,
            attr_mean: [get("attr_mean_r")?, get("attr_mean_g")?, get("attr_mean_b")?, get("attr_mean_intensity")?],
            attr_std: [get("attr_std_r")?, get("attr_std_g")?, get("attr_std_b")?, get("attr_std_intensity")?],
            target_mean: get("target_mean")?,
            target_std: get("target_std")?,
            clip_low: get("clip_low")?,
            clip_high: get("clip_high")?,
            class_weights: cw,
        };
        s.check()?;
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Map x, y from the tile extent to `[-1, 1]`, z by the global range to
/// `[0, 1]`, and standardise attributes.
pub fn normalize_tile(tile: &PointCloudTile, stats: &NormStats) -> Result<PointCloudTile> {
    if tile.coords_normalized || tile.attrs_standardized {
        return Err(Error::Data("tile is already normalised".into()));
    }
    if !(tile.extent[0] > 0.0 && tile.extent[1] > 0.0) {
        return Err(Error::Data(format!("degenerate tile extent {:?}", tile.extent)));
    }
    let zr = stats.z_max - stats.z_min;
    let mut out = tile.clone();
    for p in out.xyz.iter_mut() {
        p[0] = 2.0 * p[0] / tile.extent[0] - 1.0;
        p[1] = 2.0 * p[1] / tile.extent[1] - 1.0;
        p[2] = (p[2] - stats.z_min) / zr;
    }
    for a in out.attrs.iter_mut() {
        for j in 0..4 {
            a[j] = (a[j] - stats.attr_mean[j]) / stats.attr_std[j];
        }
    }
    out.coords_normalized = true;
    out.attrs_standardized = true;
    Ok(out)
}

/// Clip to the percentile bounds, then z-score. Void cells stay `NaN`.
pub fn normalize_target(values: &[f64], stats: &NormStats) -> Result<Vec<f64>> {
    if !(stats.target_std > 0.0) {
        return Err(Error::Data("target standard deviation is zero".into()));
    }
    Ok(values
        .iter()
        .map(|&v| if v.is_nan() { v } else { (v.clamp(stats.clip_low, stats.clip_high) - stats.target_mean) / stats.target_std })
        .collect())
}

pub fn denormalize(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|&v| v * stats.target_std + stats.target_mean).collect()
}
