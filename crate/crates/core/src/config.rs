//! Flat `key = value` run configuration covering scene, model and training.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Lists are comma separated. Keys not in [`KEYS`] are rejected, as are
//! repeated keys.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataio::WeightScheme;
use crate::decoder::{DecoderConfig, QueryGrid};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::geometry::SamplingMode;
use crate::model::{Head, ModelConfig, ModelKind};
use crate::rng::{derive_seed, label};
use crate::synthgen::SceneConfig;
use crate::trainer::TrainConfig;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed; scene and training seeds are derived from it"),
    ("scene.tiles", "number of generated tiles"),
    ("scene.points_per_tile", "points generated per tile"),
    ("scene.tile_size", "tile edge, metres"),
    ("scene.raster_cells", "target raster cells per tile edge (must equal model.grid)"),
    ("scene.site_origin", "lower-left site corner x,y in projected metres"),
    ("scene.canopy_scale", "canopy field correlation length, metres"),
    ("scene.canopy_cover", "mean canopy cover in [0, 1]"),
    ("scene.roughness_scale", "roughness field correlation length, metres"),
    ("scene.roughness_gain_cm", "thaw per unit roughness, cm"),
    ("scene.depressions_per_tile", "expected depressions per tile"),
    ("scene.depression_depth_cm", "thaw at a depression centre, cm"),
    ("scene.depression_radius_m", "depression radius, metres"),
    ("scene.depression_relief_m", "surface lowering at a depression centre, metres"),
    ("scene.terrain_amplitude_m", "smooth terrain amplitude, metres"),
    ("scene.ground_elevation_m", "base ground elevation, metres"),
    ("scene.thaw_offset_cm", "constant thaw offset, cm"),
    ("scene.noise_sigma_cm", "thaw noise standard deviation, cm"),
    ("scene.occlusion", "ground-return loss under full canopy, [0, 1]"),
    ("scene.ground_heights", "ground stratum height range lo,hi in metres"),
    ("scene.understory_heights", "understory height range lo,hi in metres"),
    ("scene.canopy_heights", "canopy height range lo,hi in metres"),
    ("scene.stratum_weights", "relative densities ground,understory,canopy,other"),
    ("scene.ground_intensity_noise", "intensity noise on ground returns"),
    ("model.kind", "stratified | mean_pool | histogram"),
    ("model.head", "regression | classification"),
    ("model.grid", "output grid edge (square)"),
    ("encoder.channels", "four stage widths"),
    ("encoder.voxel_sizes", "three pooling voxel edges, normalised units"),
    ("decoder.d", "projected feature width D"),
    ("decoder.k", "profile length k"),
    ("decoder.m_multiplier", "candidate pool multiplier M"),
    ("decoder.tau", "XY falloff threshold"),
    ("decoder.lambda", "XY falloff rate"),
    ("decoder.use_z_embedding", "add the height embedding to point features"),
    ("decoder.sampling", "stratified | closest_k"),
    ("decoder.stages", "encoder stages projected and fused, e.g. 1,2,3,4"),
    ("decoder.mean_pool_profile", "mean of neighbour features instead of the profile MLP"),
    ("decoder.groups", "GroupNorm groups in the fusion head"),
    ("train.lr", "peak learning rate"),
    ("train.warmup_epochs", "linear warmup epochs"),
    ("train.epochs", "total epochs"),
    ("train.accumulation", "tiles per optimizer step"),
    ("train.poly_power", "polynomial decay power"),
    ("train.weight_scheme", "class weights: inv_freq | inv_square | uniform"),
    ("train.weight_decay", "AdamW decoupled weight decay"),
    ("train.max_points", "points kept per tile"),
    ("train.augment", "random 90 degree rotation and jitter"),
    ("train.jitter_sigma", "xyz jitter standard deviation, normalised units"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// The `seed` field here is ignored; see [`RunConfig::scene_config`].
    pub scene: SceneConfig,
    pub model: ModelConfig,
    /// The `seed` field here is ignored; see [`RunConfig::train_config`].
    pub train: TrainConfig,
}

impl Default for RunConfig {
    /// Full-scale hyperparameters: D = 128, k = 32, M = 2, a 64 x 64 grid,
    /// encoder widths 64..512, lr 1e-5 for 100 epochs, 60k points per tile.
    fn default() -> Self {
        let scene = SceneConfig { raster_cells: 64, points_per_tile: 16_000, ..SceneConfig::default() };
        let model = ModelConfig {
            kind: ModelKind::Stratified,
            head: Head::Regression,
            encoder: EncoderConfig::full_scale(),
            decoder: DecoderConfig::default(),
            grid: QueryGrid::square(64),
        };
        Self { seed: 0, scene, model, train: TrainConfig::default() }
    }
}

impl RunConfig {
    /// Scaled down for a single CPU core: 4k points, a 16 x 16 grid, encoder
    /// widths 16..128, D = 16, k = 16 and a short high-lr schedule.
    pub fn desk() -> Self {
        let model = ModelConfig {
            kind: ModelKind::Stratified,
            head: Head::Regression,
            encoder: EncoderConfig::with_base(16),
            decoder: DecoderConfig { d: 16, k: 16, groups: 2, ..DecoderConfig::default() },
            grid: QueryGrid::square(16),
        };
        let train = TrainConfig { lr: 2e-3, warmup_epochs: 1, epochs: 15, ..TrainConfig::default() };
        Self { seed: 0, scene: SceneConfig::default(), model, train }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("unknown preset `{name}` (expected full or desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.grid.h != self.model.grid.w {
            return Err(Error::Config("model grid must be square".into()));
        }
        if self.scene.raster_cells != self.model.grid.h {
            return Err(Error::Config(format!(
                "scene.raster_cells = {} but model.grid = {}",
                self.scene.raster_cells, self.model.grid.h
            )));
        }
        if self.scene.weight_scheme != self.train.weight_scheme {
            return Err(Error::Config("scene and training weight schemes differ".into()));
        }
        Ok(())
    }

    /// Scene settings with the seed `derive_seed(seed, ["scene"])`.
    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig { seed: derive_seed(self.seed, &[label("scene")]), ..self.scene.clone() }
    }

    /// Training settings with the seed `derive_seed(seed, ["train"])`.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, &[label("train")]), ..self.train.clone() }
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{line}`", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", ln + 1)));
            }
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", ln + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (s, m, t) = (&mut self.scene, &mut self.model, &mut self.train);
        match key {
            "seed" => self.seed = num(key, v)?,
            "scene.tiles" => s.tiles = num(key, v)?,
            "scene.points_per_tile" => s.points_per_tile = num(key, v)?,
            "scene.tile_size" => s.tile_size = num(key, v)?,
            "scene.raster_cells" => s.raster_cells = num(key, v)?,
            "scene.site_origin" => s.site_origin = arr(key, v)?,
            "scene.canopy_scale" => s.canopy_scale = num(key, v)?,
            "scene.canopy_cover" => s.canopy_cover = num(key, v)?,
            "scene.roughness_scale" => s.roughness_scale = num(key, v)?,
            "scene.roughness_gain_cm" => s.roughness_gain_cm = num(key, v)?,
            "scene.depressions_per_tile" => s.depressions_per_tile = num(key, v)?,
            "scene.depression_depth_cm" => s.depression_depth_cm = num(key, v)?,
            "scene.depression_radius_m" => s.depression_radius_m = num(key, v)?,
            "scene.depression_relief_m" => s.depression_relief_m = num(key, v)?,
            "scene.terrain_amplitude_m" => s.terrain_amplitude_m = num(key, v)?,
            "scene.ground_elevation_m" => s.ground_elevation_m = num(key, v)?,
            "scene.thaw_offset_cm" => s.thaw_offset_cm = num(key, v)?,
            "scene.noise_sigma_cm" => s.noise_sigma_cm = num(key, v)?,
            "scene.occlusion" => s.occlusion = num(key, v)?,
            "scene.ground_heights" => s.ground_heights = arr(key, v)?,
            "scene.understory_heights" => s.understory_heights = arr(key, v)?,
            "scene.canopy_heights" => s.canopy_heights = arr(key, v)?,
            "scene.stratum_weights" => s.stratum_weights = arr(key, v)?,
            "scene.ground_intensity_noise" => s.ground_intensity_noise = num(key, v)?,
            "model.kind" => m.kind = ModelKind::parse(v)?,
            "model.head" => m.head = Head::parse(v)?,
            "model.grid" => m.grid = QueryGrid::square(num(key, v)?),
            "encoder.channels" => m.encoder.channels = arr(key, v)?,
            "encoder.voxel_sizes" => m.encoder.voxel_sizes = arr(key, v)?,
            "decoder.d" => m.decoder.d = num(key, v)?,
            "decoder.k" => m.decoder.k = num(key, v)?,
            "decoder.m_multiplier" => m.decoder.m_multiplier = num(key, v)?,
            "decoder.tau" => m.decoder.tau = num(key, v)?,
            "decoder.lambda" => m.decoder.lambda = num(key, v)?,
            "decoder.use_z_embedding" => m.decoder.use_z_embedding = boolean(key, v)?,
            "decoder.sampling" => m.decoder.sampling = SamplingMode::parse(v)?,
            "decoder.stages" => m.decoder.stages = list(key, v)?,
            "decoder.mean_pool_profile" => m.decoder.mean_pool_profile = boolean(key, v)?,
            "decoder.groups" => m.decoder.groups = num(key, v)?,
            "train.lr" => t.lr = num(key, v)?,
            "train.warmup_epochs" => t.warmup_epochs = num(key, v)?,
            "train.epochs" => t.epochs = num(key, v)?,
            "train.accumulation" => t.accumulation = num(key, v)?,
            "train.poly_power" => t.poly_power = num(key, v)?,
            "train.weight_scheme" => {
                t.weight_scheme = WeightScheme::parse(v)?;
                s.weight_scheme = t.weight_scheme;
            }
            "train.weight_decay" => t.weight_decay = num(key, v)?,
            "train.max_points" => t.max_points = num(key, v)?,
            "train.augment" => t.augment = boolean(key, v)?,
            "train.jitter_sigma" => t.jitter_sigma = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Current value of every key, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (s, m, t) = (&self.scene, &self.model, &self.train);
        let (e, d) = (&m.encoder, &m.decoder);
        KEYS.iter()
            .map(|&(k, _)| {
                let v = match k {
                    "seed" => self.seed.to_string(),
                    "scene.tiles" => s.tiles.to_string(),
                    "scene.points_per_tile" => s.points_per_tile.to_string(),
                    "scene.tile_size" => s.tile_size.to_string(),
                    "scene.raster_cells" => s.raster_cells.to_string(),
                    "scene.site_origin" => join(&s.site_origin),
                    "scene.canopy_scale" => s.canopy_scale.to_string(),
                    "scene.canopy_cover" => s.canopy_cover.to_string(),
                    "scene.roughness_scale" => s.roughness_scale.to_string(),
                    "scene.roughness_gain_cm" => s.roughness_gain_cm.to_string(),
                    "scene.depressions_per_tile" => s.depressions_per_tile.to_string(),
                    "scene.depression_depth_cm" => s.depression_depth_cm.to_string(),
                    "scene.depression_radius_m" => s.depression_radius_m.to_string(),
                    "scene.depression_relief_m" => s.depression_relief_m.to_string(),
                    "scene.terrain_amplitude_m" => s.terrain_amplitude_m.to_string(),
                    "scene.ground_elevation_m" => s.ground_elevation_m.to_string(),
                    "scene.thaw_offset_cm" => s.thaw_offset_cm.to_string(),
                    "scene.noise_sigma_cm" => s.noise_sigma_cm.to_string(),
                    "scene.occlusion" => s.occlusion.to_string(),
                    "scene.ground_heights" => join(&s.ground_heights),
                    "scene.understory_heights" => join(&s.understory_heights),
                    "scene.canopy_heights" => join(&s.canopy_heights),
                    "scene.stratum_weights" => join(&s.stratum_weights),
                    "scene.ground_intensity_noise" => s.ground_intensity_noise.to_string(),
                    "model.kind" => m.kind.name().to_string(),
                    "model.head" => m.head.name().to_string(),
                    "model.grid" => m.grid.h.to_string(),
                    "encoder.channels" => join(&e.channels),
                    "encoder.voxel_sizes" => join(&e.voxel_sizes),
                    "decoder.d" => d.d.to_string(),
                    "decoder.k" => d.k.to_string(),
                    "decoder.m_multiplier" => d.m_multiplier.to_string(),
                    "decoder.tau" => d.tau.to_string(),
                    "decoder.lambda" => d.lambda.to_string(),
                    "decoder.use_z_embedding" => d.use_z_embedding.to_string(),
                    "decoder.sampling" => d.sampling.name().to_string(),
                    "decoder.stages" => join(&d.stages),
                    "decoder.mean_pool_profile" => d.mean_pool_profile.to_string(),
                    "decoder.groups" => d.groups.to_string(),
                    "train.lr" => t.lr.to_string(),
                    "train.warmup_epochs" => t.warmup_epochs.to_string(),
                    "train.epochs" => t.epochs.to_string(),
                    "train.accumulation" => t.accumulation.to_string(),
                    "train.poly_power" => t.poly_power.to_string(),
                    "train.weight_scheme" => t.weight_scheme.name().to_string(),
                    "train.weight_decay" => t.weight_decay.to_string(),
                    "train.max_points" => t.max_points.to_string(),
                    "train.augment" => t.augment.to_string(),
                    "train.jitter_sigma" => t.jitter_sigma.to_string(),
                    _ => unreachable!("key table and entries out of sync: {k}"),
                };
                (k, v)
            })
            .collect()
    }

    /// Every key with its description as a comment; parses back to `self`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for ((k, v), (_, doc)) in self.entries().into_iter().zip(KEYS) {
            let _ = writeln!(out, "# {doc}\n{k} = {v}");
        }
        out
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| num(key, p.trim())).collect()
}

fn arr<T: std::str::FromStr + std::fmt::Debug, const N: usize>(key: &str, v: &str) -> Result<[T; N]> {
    let items: Vec<T> = list(key, v)?;
    let n = items.len();
    items.try_into().map_err(|_| Error::Config(format!("`{key}`: expected {N} values, got {n}")))
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
