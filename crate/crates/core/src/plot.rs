//! Binary PPM (P6) heat maps of rasters.

use std::fs;
use std::path::Path;

use crate::dataio::{ThawRaster, NUM_CLASSES};
use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

pub const VOID: Rgb = [128, 128, 128];
/// Colour of 0 cm on the diverging scale.
pub const CENTER: Rgb = [247, 247, 247];
const NEGATIVE: Rgb = [33, 102, 172];
const POSITIVE: Rgb = [178, 24, 43];

/// C1 (strongest subsidence) through C7 (strongest heave).
pub const CLASS_COLORS: [Rgb; NUM_CLASSES] =
    [[5, 48, 97], [67, 147, 195], [146, 197, 222], [240, 240, 170], [244, 165, 130], [214, 96, 77], [103, 0, 13]];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm())?;
        Ok(())
    }

    pub fn distinct_colors(&self) -> usize {
        let mut c = self.pixels.clone();
        c.sort_unstable();
        c.dedup();
        c.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Palette {
    /// Symmetric about 0 cm, scaled by the largest `|value|`.
    Diverging,
    /// Values are class indices 0..7.
    Classes,
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
    [mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])]
}

/// Colour of `v` on the diverging scale with half-range `scale`.
pub fn diverging(v: f64, scale: f64) -> Rgb {
    if scale <= 0.0 || v == 0.0 {
        return CENTER;
    }
    let t = (v / scale).clamp(-1.0, 1.0);
    if t < 0.0 {
        lerp(CENTER, NEGATIVE, -t)
    } else {
        lerp(CENTER, POSITIVE, t)
    }
}

fn half_range(rasters: &[&ThawRaster]) -> f64 {
    rasters.iter().flat_map(|r| r.values.iter()).filter(|v| !v.is_nan()).fold(0.0, |m, v| m.max(v.abs()))
}

fn cell_color(v: f64, palette: Palette, scale: f64) -> Result<Rgb> {
    if v.is_nan() {
        return Ok(VOID);
    }
    match palette {
        Palette::Diverging => Ok(diverging(v, scale)),
        Palette::Classes => {
            if v.fract() != 0.0 || !(0.0..NUM_CLASSES as f64).contains(&v) {
                return Err(Error::Data(format!("{v} is not a class index")));
            }
            Ok(CLASS_COLORS[v as usize])
        }
    }
}

/// Rasters side by side, one void-coloured column between them, each cell
/// drawn as a `cell_px` square. Continuous rasters share one scale.
pub fn render(rasters: &[&ThawRaster], palette: Palette, cell_px: usize) -> Result<Image> {
    let first = rasters.first().ok_or_else(|| Error::Data("nothing to plot".into()))?;
    if cell_px == 0 {
        return Err(Error::Config("cell size must be at least one pixel".into()));
    }
    if rasters.iter().any(|r| r.h != first.h) {
        return Err(Error::Dimension("side-by-side rasters need equal heights".into()));
    }
    let scale = half_range(rasters);
    let cols: usize = rasters.iter().map(|r| r.w).sum::<usize>() + rasters.len() - 1;
    let mut cells = vec![VOID; first.h * cols];
    let mut x0 = 0;
    for r in rasters {
        for row in 0..r.h {
            for col in 0..r.w {
                // Row 0 of a raster is its southern edge; images run top-down.
                cells[(r.h - 1 - row) * cols + x0 + col] = cell_color(r.get(row, col), palette, scale)?;
            }
        }
        x0 += r.w + 1;
    }
    let (width, height) = (cols * cell_px, first.h * cell_px);
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            pixels.push(cells[(y / cell_px) * cols + x / cell_px]);
        }
    }
    Ok(Image { width, height, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_raster_is_uniform_center() {
        let r = ThawRaster::new(3, 3, vec![0.0; 9]).unwrap();
        let img = render(&[&r], Palette::Diverging, 2).unwrap();
        assert!(img.pixels.iter().all(|&p| p == CENTER));
    }

    #[test]
    fn midpoint_is_zero_whatever_the_range() {
        for vals in [vec![0.0, 5.0, 10.0, 1.0], vec![-1.0, 0.0, 0.5, 0.2]] {
            let r = ThawRaster::new(2, 2, vals).unwrap();
            let img = render(&[&r], Palette::Diverging, 1).unwrap();
            // Cell (0, 1) holds 0 and lands at the bottom row.
            let zero_at = if r.get(0, 0) == 0.0 { (1, 0) } else { (1, 1) };
            assert_eq!(img.pixels[zero_at.0 * 2 + zero_at.1], CENTER);
        }
    }

    #[test]
    fn class_palette_has_eight_colors() {
        let mut v: Vec<f64> = (0..7).map(|c| c as f64).collect();
        v.push(f64::NAN);
        v.push(3.0);
        let r = ThawRaster::new(3, 3, v).unwrap();
        let img = render(&[&r], Palette::Classes, 3).unwrap();
        assert_eq!(img.distinct_colors(), 8);
        assert!(render(&[&ThawRaster::new(1, 1, vec![2.5]).unwrap()], Palette::Classes, 1).is_err());
    }

    #[test]
    fn ppm_header() {
        let r = ThawRaster::new(1, 2, vec![1.0, -1.0]).unwrap();
        let img = render(&[&r, &r], Palette::Diverging, 1).unwrap();
        assert_eq!((img.width, img.height), (5, 1));
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n5 1\n255\n"));
        assert_eq!(bytes.len(), 11 + 15);
        assert_eq!(img.pixels[2], VOID);
    }
}
