//! Synthetic boreal scenes where the thaw signal is carried by ground
//! returns that canopy partly hides.
//!
//! A site is a grid of square tiles over smooth latent fields:
//!
//! * canopy cover `c(x) in [0, 1]`, suppressed inside depressions;
//! * ground roughness `r(x)`, unit variance, visible only in the intensity
//!   of ground returns;
//! * Gaussian depressions `dep(x) in [0, 1]` that lower the ground surface.
//!
//! Thaw in centimetres is `offset + b * r - depth * dep + noise`. Ground
//! returns thin out under canopy by the factor `1 - occlusion * c`.

use crate::dataio::{quantize_to_f32, row_major_order, split_tiles, NormStats, PointClass, PointCloudTile, Split, ThawRaster, WeightScheme};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, label, SplitMix64};

const FOURIER_TERMS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub tiles: usize,
    pub points_per_tile: usize,
    /// Tile edge in metres.
    pub tile_size: f64,
    /// Raster cells per tile edge.
    pub raster_cells: usize,
    /// Lower-left corner of the site in projected metres.
    pub site_origin: [f64; 2],
    /// Correlation length of the canopy field, metres.
    pub canopy_scale: f64,
    /// Mean canopy cover in `[0, 1]`.
    pub canopy_cover: f64,
    /// Correlation length of the roughness field, metres.
    pub roughness_scale: f64,
    /// Thaw contribution of unit roughness, cm.
    pub roughness_gain_cm: f64,
    pub depressions_per_tile: f64,
    /// Thaw at a depression centre, cm.
    pub depression_depth_cm: f64,
    pub depression_radius_m: f64,
    /// Surface lowering at a depression centre, metres.
    pub depression_relief_m: f64,
    /// Amplitude of smooth terrain undulation, metres.
    pub terrain_amplitude_m: f64,
    pub ground_elevation_m: f64,
    /// Constant thaw offset, cm (positive = heave).
    pub thaw_offset_cm: f64,
    pub noise_sigma_cm: f64,
    pub occlusion: f64,
    pub ground_heights: [f64; 2],
    pub understory_heights: [f64; 2],
    pub canopy_heights: [f64; 2],
    /// Relative return densities: ground, understory, canopy, other.
    pub stratum_weights: [f64; 4],
    /// Per-point intensity noise on ground returns.
    pub ground_intensity_noise: f64,
    pub weight_scheme: WeightScheme,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tiles: 80,
            points_per_tile: 4000,
            tile_size: 6.4,
            raster_cells: 16,
            site_origin: [512_000.0, 7_170_000.0],
            canopy_scale: 3.0,
            canopy_cover: 0.45,
            roughness_scale: 2.0,
            roughness_gain_cm: 1.0,
            depressions_per_tile: 0.6,
            depression_depth_cm: 2.5,
            depression_radius_m: 1.2,
            depression_relief_m: 0.15,
            terrain_amplitude_m: 0.1,
            ground_elevation_m: 240.0,
            thaw_offset_cm: 1.1,
            noise_sigma_cm: 0.15,
            occlusion: 0.8,
            ground_heights: [0.0, 0.2],
            understory_heights: [0.5, 2.0],
            canopy_heights: [5.0, 15.0],
            stratum_weights: [1.0, 0.35, 1.2, 0.03],
            ground_intensity_noise: 0.25,
            weight_scheme: WeightScheme::InverseFrequency,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.tiles == 0 || self.points_per_tile == 0 || self.raster_cells == 0 {
            return bad("tiles, points_per_tile and raster_cells must be positive");
        }
        if !(self.tile_size > 0.0 && self.canopy_scale > 0.0 && self.roughness_scale > 0.0 && self.depression_radius_m > 0.0) {
            return bad("sizes and length scales must be positive");
        }
        if !(0.0..=1.0).contains(&self.occlusion) || !(0.0..=1.0).contains(&self.canopy_cover) {
            return bad("occlusion and canopy_cover must lie in [0, 1]");
        }
        if !(self.noise_sigma_cm >= 0.0 && self.depressions_per_tile >= 0.0 && self.ground_intensity_noise >= 0.0) {
            return bad("noise and depression counts must be non-negative");
        }
        for (name, h) in [("ground", self.ground_heights), ("understory", self.understory_heights), ("canopy", self.canopy_heights)] {
            if !(h[0] >= 0.0 && h[1] > h[0]) {
                return Err(Error::Config(format!("{name} heights must be ordered and non-negative: {h:?}")));
            }
        }
        if !(self.ground_heights[1] <= self.understory_heights[0] && self.understory_heights[1] <= self.canopy_heights[0]) {
            return bad("strata height ranges must not overlap");
        }
        if self.stratum_weights.iter().any(|w| !(*w >= 0.0)) || self.stratum_weights[0] <= 0.0 {
            return bad("stratum weights must be non-negative with a positive ground weight");
        }
        Ok(())
    }

    pub fn grid_cols(&self) -> usize {
        (self.tiles as f64).sqrt().ceil() as usize
    }

    pub fn tile_origin(&self, i: usize) -> [f64; 2] {
        let cols = self.grid_cols();
        [self.site_origin[0] + (i % cols) as f64 * self.tile_size, self.site_origin[1] + (i / cols) as f64 * self.tile_size]
    }
}

/// Sum of random cosines with Gaussian frequencies: a stationary field with
/// unit variance and squared-exponential correlation of length `scale`.
#[derive(Debug, Clone)]
struct FourierField {
    terms: Vec<([f64; 2], f64)>,
    amp: f64,
}

impl FourierField {
    fn new(rng: &mut SplitMix64, scale: f64) -> Self {
        let terms = (0..FOURIER_TERMS)
            .map(|_| ([rng.normal() / scale, rng.normal() / scale], rng.uniform(0.0, std::f64::consts::TAU)))
            .collect();
        Self { terms, amp: (2.0 / FOURIER_TERMS as f64).sqrt() }
    }

    fn at(&self, p: [f64; 2]) -> f64 {
        self.amp * self.terms.iter().map(|(w, ph)| (w[0] * p[0] + w[1] * p[1] + ph).cos()).sum::<f64>()
    }
}

/// Latent fields over site-local coordinates (metres from the site origin).
#[derive(Debug, Clone)]
pub struct SiteFields {
    canopy: FourierField,
    roughness: FourierField,
    terrain: FourierField,
    depressions: Vec<[f64; 2]>,
    cfg: SceneConfig,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

impl SiteFields {
    pub fn new(cfg: &SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(derive_seed(cfg.seed, &[label("fields")]));
        let canopy = FourierField::new(&mut rng, cfg.canopy_scale);
        let roughness = FourierField::new(&mut rng, cfg.roughness_scale);
        let terrain = FourierField::new(&mut rng, 2.0 * cfg.canopy_scale);
        let cols = cfg.grid_cols();
        let rows = cfg.tiles.div_ceil(cols);
        let (w, h) = (cols as f64 * cfg.tile_size, rows as f64 * cfg.tile_size);
        let n = (cfg.depressions_per_tile * cfg.tiles as f64).round() as usize;
        let depressions = (0..n).map(|_| [rng.uniform(0.0, w), rng.uniform(0.0, h)]).collect();
        Ok(Self { canopy, roughness, terrain, depressions, cfg: cfg.clone() })
    }

    /// Depression indicator in `[0, 1]` (overlapping depressions saturate).
    pub fn depression(&self, p: [f64; 2]) -> f64 {
        let s2 = 2.0 * self.cfg.depression_radius_m.powi(2);
        let miss: f64 = self
            .depressions
            .iter()
            .map(|c| 1.0 - (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / s2).exp())
            .product();
        1.0 - miss
    }

    pub fn roughness(&self, p: [f64; 2]) -> f64 {
        self.roughness.at(p)
    }

    pub fn cover(&self, p: [f64; 2]) -> f64 {
        if self.cfg.canopy_cover <= 0.0 {
            return 0.0;
        }
        logistic(logit(self.cfg.canopy_cover) + 2.0 * self.canopy.at(p)) * (1.0 - 0.9 * self.depression(p))
    }

    /// Ground surface elevation, metres.
    pub fn ground(&self, p: [f64; 2]) -> f64 {
        self.cfg.ground_elevation_m + self.cfg.terrain_amplitude_m * self.terrain.at(p) - self.cfg.depression_relief_m * self.depression(p)
    }

    /// Noiseless elevation change, cm.
    pub fn thaw(&self, p: [f64; 2]) -> f64 {
        self.cfg.thaw_offset_cm + self.cfg.roughness_gain_cm * self.roughness(p) - self.cfg.depression_depth_cm * self.depression(p)
    }

    /// Probabilities of ground, understory, canopy and other returns.
    pub fn stratum_probs(&self, p: [f64; 2]) -> [f64; 4] {
        let c = self.cover(p);
        let w = self.cfg.stratum_weights;
        let raw = [w[0] * (1.0 - self.cfg.occlusion * c), w[1], w[2] * c, w[3]];
        let s: f64 = raw.iter().sum();
        raw.map(|v| v / s)
    }

    fn site_local(&self, tile_origin: [f64; 2], local: [f64; 2]) -> [f64; 2] {
        [tile_origin[0] - self.cfg.site_origin[0] + local[0], tile_origin[1] - self.cfg.site_origin[1] + local[1]]
    }

    fn cell_center(&self, r: usize, c: usize) -> [f64; 2] {
        let cell = self.cfg.tile_size / self.cfg.raster_cells as f64;
        [(c as f64 + 0.5) * cell, (r as f64 + 0.5) * cell]
    }

    /// Noiseless raster for the tile with origin `tile_origin`.
    pub fn oracle_raster(&self, tile_origin: [f64; 2]) -> ThawRaster {
        let n = self.cfg.raster_cells;
        let values = (0..n * n).map(|i| self.thaw(self.site_local(tile_origin, self.cell_center(i / n, i % n)))).collect();
        let mut r = ThawRaster::new(n, n, values).unwrap();
        r.origin = tile_origin;
        r.cell_size = self.cfg.tile_size / n as f64;
        r
    }
}

/// A generated dataset, tiles in row-major order by origin.
#[derive(Debug, Clone)]
pub struct Scene {
    pub tiles: Vec<PointCloudTile>,
    pub rasters: Vec<ThawRaster>,
    /// Statistics over the training split.
    pub stats: NormStats,
    pub split: Split,
}

fn generate_tile(fields: &SiteFields, cfg: &SceneConfig, index: usize) -> Result<(PointCloudTile, ThawRaster)> {
    let origin = cfg.tile_origin(index);
    let mut rng = SplitMix64::new(derive_seed(cfg.seed, &[label("tile"), index as u64]));
    let n = cfg.points_per_tile;
    let (mut xyz, mut attrs, mut labels) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let local = [rng.uniform(0.0, cfg.tile_size), rng.uniform(0.0, cfg.tile_size)];
        let p = fields.site_local(origin, local);
        let probs = fields.stratum_probs(p);
        let u = rng.next_f64();
        let mut stratum = 3;
        let mut acc = 0.0;
        for (s, &pr) in probs.iter().enumerate() {
            acc += pr;
            if u < acc {
                stratum = s;
                break;
            }
        }
        let g = fields.ground(p);
        let noise = |rng: &mut SplitMix64, s: f64| s * rng.normal();
        let (h, class, rgb, intensity) = match stratum {
            0 => {
                let h = rng.uniform(cfg.ground_heights[0], cfg.ground_heights[1]);
                let i = 0.5 + 0.2 * fields.roughness(p) + noise(&mut rng, 0.2 * cfg.ground_intensity_noise);
                (h, PointClass::Ground, [0.45, 0.38, 0.30], i)
            }
            1 => {
                let h = rng.uniform(cfg.understory_heights[0], cfg.understory_heights[1]);
                let class = if h < 1.0 { PointClass::LowVegetation } else { PointClass::MediumVegetation };
                (h, class, [0.30, 0.45, 0.25], rng.uniform(0.1, 0.9))
            }
            2 => {
                let h = rng.uniform(cfg.canopy_heights[0], cfg.canopy_heights[1]);
                (h, PointClass::HighVegetation, [0.20, 0.40, 0.22], rng.uniform(0.1, 0.9))
            }
            _ => {
                let h = rng.uniform(0.0, cfg.understory_heights[1]);
                (h, PointClass::Other, [0.50, 0.50, 0.50], rng.uniform(0.1, 0.9))
            }
        };
        xyz.push([local[0], local[1], g + h]);
        let c = |b: f64, rng: &mut SplitMix64| b + 0.05 * rng.normal();
        attrs.push([c(rgb[0], &mut rng), c(rgb[1], &mut rng), c(rgb[2], &mut rng), intensity]);
        labels.push(class as u8);
    }
    let mut tile = PointCloudTile::new(xyz, attrs, labels)?;
    tile.origin = origin;
    tile.extent = [cfg.tile_size, cfg.tile_size];
    quantize_to_f32(&mut tile);
    let mut raster = fields.oracle_raster(origin);
    for v in raster.values.iter_mut() {
        *v = (*v + cfg.noise_sigma_cm * rng.normal()) as f32 as f64;
    }
    Ok((tile, raster))
}

/// Generate all tiles and rasters and the training-split statistics.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    let fields = SiteFields::new(cfg)?;
    let mut pairs = (0..cfg.tiles).map(|i| generate_tile(&fields, cfg, i)).collect::<Result<Vec<_>>>()?;
    let order = row_major_order(&pairs.iter().map(|(t, _)| t.origin).collect::<Vec<_>>());
    let mut sorted = Vec::with_capacity(pairs.len());
    let mut slots: Vec<Option<(PointCloudTile, ThawRaster)>> = pairs.drain(..).map(Some).collect();
    for i in order {
        sorted.push(slots[i].take().unwrap());
    }
    let (tiles, rasters): (Vec<_>, Vec<_>) = sorted.into_iter().unzip();
    let split = split_tiles(tiles.len());
    let train_tiles: Vec<&PointCloudTile> = split.train.iter().map(|&i| &tiles[i]).collect();
    let train_rasters: Vec<&ThawRaster> = split.train.iter().map(|&i| &rasters[i]).collect();
    let stats = if train_tiles.is_empty() {
        NormStats::compute(&tiles.iter().collect::<Vec<_>>(), &rasters.iter().collect::<Vec<_>>(), cfg.weight_scheme)?
    } else {
        NormStats::compute(&train_tiles, &train_rasters, cfg.weight_scheme)?
    };
    Ok(Scene { tiles, rasters, stats, split })
}

/// The generator's noiseless thaw raster for a tile of this scene.
pub fn oracle_predictor(tile: &PointCloudTile, cfg: &SceneConfig) -> Result<ThawRaster> {
    Ok(SiteFields::new(cfg)?.oracle_raster(tile.origin))
}
