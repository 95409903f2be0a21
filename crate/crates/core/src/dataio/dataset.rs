use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::raster::{read_raster, write_raster, ThawRaster};
use super::stats::NormStats;
use super::tile::{read_tile, write_tile, PointCloudTile};
use super::transforms::Split;
use crate::error::{Error, Result};

/// Tiles, targets, statistics and split on disk:
///
/// ```text
/// <dir>/manifest.txt        name split origin_x origin_y extent_x extent_y
/// <dir>/stats.txt
/// <dir>/tiles/<name>.pct
/// <dir>/rasters/<name>.ras
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub tiles: Vec<PointCloudTile>,
    pub rasters: Vec<ThawRaster>,
    pub stats: NormStats,
    pub split: Split,
}

pub const MANIFEST_HEADER: &str = "# name split origin_x origin_y extent_x extent_y";

impl Dataset {
    pub fn new(tiles: Vec<PointCloudTile>, rasters: Vec<ThawRaster>, stats: NormStats, split: Split) -> Result<Self> {
        if tiles.len() != rasters.len() {
            return Err(Error::Data(format!("{} tiles but {} rasters", tiles.len(), rasters.len())));
        }
        let names = (0..tiles.len()).map(|i| format!("tile_{i:04}")).collect();
        Ok(Self { names, tiles, rasters, stats, split })
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn split_name(&self, i: usize) -> &'static str {
        if self.split.eval.contains(&i) {
            "eval"
        } else {
            "train"
        }
    }

    pub fn manifest_text(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for (i, (n, t)) in self.names.iter().zip(&self.tiles).enumerate() {
            let _ = writeln!(s, "{n} {} {} {} {} {}", self.split_name(i), t.origin[0], t.origin[1], t.extent[0], t.extent[1]);
        }
        let _ = writeln!(s, "# train={} eval={}", self.split.train.len(), self.split.eval.len());
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("tiles"))?;
        fs::create_dir_all(dir.join("rasters"))?;
        for ((n, t), r) in self.names.iter().zip(&self.tiles).zip(&self.rasters) {
            write_tile(t, &dir.join("tiles").join(format!("{n}.pct")))?;
            write_raster(r, &dir.join("rasters").join(format!("{n}.ras")))?;
        }
        self.stats.write(&dir.join("stats.txt"))?;
        fs::write(dir.join("manifest.txt"), self.manifest_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let stats = NormStats::read(&dir.join("stats.txt"))?;
        let (mut names, mut tiles, mut rasters) = (Vec::new(), Vec::new(), Vec::new());
        let mut split = Split { train: Vec::new(), eval: Vec::new() };
        for (ln, line) in manifest.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Data(format!("manifest line {}: `{line}`", ln + 1));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let i = names.len();
            match f[1] {
                "train" => split.train.push(i),
                "eval" => split.eval.push(i),
                _ => return Err(bad()),
            }
            let mut t = read_tile(&dir.join("tiles").join(format!("{}.pct", f[0])))?;
            t.origin = [num(f[2])?, num(f[3])?];
            t.extent = [num(f[4])?, num(f[5])?];
            tiles.push(t);
            rasters.push(read_raster(&dir.join("rasters").join(format!("{}.ras", f[0])))?);
            names.push(f[0].to_string());
        }
        if names.is_empty() {
            return Err(Error::Data("manifest lists no tiles".into()));
        }
        Ok(Self { names, tiles, rasters, stats, split })
    }
}
