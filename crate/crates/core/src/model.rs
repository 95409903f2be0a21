//! Complete models: the stratified decoder and the two baselines behind one
//! interface, with losses and tile prediction.

use std::sync::Arc;

use crate::baselines::{binning_plan, cell_bins, histogram_cnn_on_tape, histogram_features, init_histogram_params, mean_pool_on_tape};
use crate::dataio::{discretize, normalize_target, NormStats, PointCloudTile, ThawRaster, NUM_CLASSES};
use crate::decoder::{self, argmax, fuse_on_tape, neighborhoods, project_stage_with_plan, stage_plan, DecoderConfig, QueryGrid};
use crate::encoder::{self, build_hierarchy, encode_on_tape, EncoderConfig, StageGeometry};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{DenseArray, GatherPlan, ParameterStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Regression,
    Classification,
}

impl Head {
    pub fn out_channels(self) -> usize {
        match self {
            Head::Regression => 1,
            Head::Classification => NUM_CLASSES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::Regression => "regression",
            Head::Classification => "classification",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Head::Regression),
            "classification" => Ok(Head::Classification),
            _ => Err(Error::Config(format!("unknown head `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Height-aware profile projection.
    Stratified,
    /// Per-cell mean of projected point features.
    MeanPool,
    /// Class histograms and a small CNN, no encoder.
    Histogram,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Stratified => "stratified",
            ModelKind::MeanPool => "mean_pool",
            ModelKind::Histogram => "histogram",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stratified" => Ok(ModelKind::Stratified),
            "mean_pool" => Ok(ModelKind::MeanPool),
            "histogram" => Ok(ModelKind::Histogram),
            _ => Err(Error::Config(format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub head: Head,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub grid: QueryGrid,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()
    }

    pub fn init_params(&self, rng: &mut SplitMix64) -> Result<ParameterStore> {
        self.validate()?;
        let mut store = ParameterStore::new();
        let out = self.head.out_channels();
        if self.kind == ModelKind::Histogram {
            init_histogram_params(&mut store, out, rng)?;
            return Ok(store);
        }
        encoder::init_params(&mut store, &self.encoder, rng)?;
        let d = &self.decoder;
        let mean_pool = DecoderConfig { mean_pool_profile: true, ..d.clone() };
        let dcfg = if self.kind == ModelKind::MeanPool { &mean_pool } else { d };
        for &s in &d.stages {
            decoder::init_stage_params(&mut store, dcfg, s, self.encoder.channels[s - 1], rng)?;
        }
        if d.use_z_embedding {
            decoder::init_z_embedding(&mut store, d.d, rng)?;
        }
        decoder::init_fuse_params(&mut store, d.d, d.stages.len(), out, rng)?;
        Ok(store)
    }

    /// Decoder settings as used by this model kind.
    fn effective_decoder(&self) -> DecoderConfig {
        match self.kind {
            ModelKind::MeanPool => DecoderConfig { mean_pool_profile: true, ..self.decoder.clone() },
            _ => self.decoder.clone(),
        }
    }
}

/// A normalised tile with everything that does not depend on parameters
/// precomputed: voxel hierarchy, per-stage gather plans, or histograms.
#[derive(Debug, Clone)]
pub struct PreparedTile {
    pub tile: PointCloudTile,
    hierarchy: Vec<StageGeometry>,
    plans: Vec<(usize, Arc<GatherPlan>)>,
    hist: Option<DenseArray>,
}

pub fn prepare(tile: &PointCloudTile, cfg: &ModelConfig) -> Result<PreparedTile> {
    if tile.is_empty() {
        return Err(Error::Degenerate("empty tile".into()));
    }
    if !tile.coords_normalized {
        return Err(Error::Data("tile must be normalised before prediction".into()));
    }
    if cfg.kind == ModelKind::Histogram {
        return Ok(PreparedTile {
            tile: tile.clone(),
            hierarchy: Vec::new(),
            plans: Vec::new(),
            hist: Some(histogram_features(tile, &cfg.grid)?),
        });
    }
    let hierarchy = build_hierarchy(&tile.xyz, &cfg.encoder)?;
    let dcfg = cfg.effective_decoder();
    let mut plans = Vec::with_capacity(dcfg.stages.len());
    for &s in &dcfg.stages {
        let coords = &hierarchy[s - 1].coords;
        let plan = match cfg.kind {
            ModelKind::MeanPool => binning_plan(&cell_bins(coords, &cfg.grid), cfg.grid.len()),
            _ => stage_plan(&neighborhoods(coords, &cfg.grid, &dcfg)?, &dcfg),
        };
        plans.push((s, Arc::new(plan)));
    }
    Ok(PreparedTile { tile: tile.clone(), hierarchy, plans, hist: None })
}

/// Output logits `[H, W, C_out]` on a tape.
pub fn forward(tape: &mut Tape, store: &ParameterStore, prep: &PreparedTile, cfg: &ModelConfig) -> Result<Var> {
    if let Some(h) = &prep.hist {
        return histogram_cnn_on_tape(tape, store, h, &cfg.grid);
    }
    let dcfg = cfg.effective_decoder();
    let stages = encode_on_tape(tape, store, &prep.tile, &prep.hierarchy)?;
    let mut maps = Vec::with_capacity(prep.plans.len());
    for (s, plan) in &prep.plans {
        let sv = &stages[s - 1];
        let m = match cfg.kind {
            ModelKind::MeanPool => mean_pool_on_tape(tape, store, sv, plan.clone(), &dcfg)?,
            _ => project_stage_with_plan(tape, store, sv, plan.clone(), cfg.grid.len(), &dcfg)?,
        };
        maps.push(m);
    }
    fuse_on_tape(tape, store, &maps, &cfg.grid, dcfg.groups)
}

/// Training target for one tile on the model grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TileTarget {
    /// Clipped, z-scored values (0 in void cells).
    pub values: Vec<f64>,
    pub classes: Vec<usize>,
    pub mask: Vec<bool>,
}

impl TileTarget {
    pub fn new(raster: &ThawRaster, stats: &NormStats) -> Result<Self> {
        let mask = raster.valid_mask();
        let values = normalize_target(&raster.values, stats)?.into_iter().map(|v| if v.is_nan() { 0.0 } else { v }).collect();
        let classes = raster
            .values
            .iter()
            .map(|&v| if v.is_nan() { Ok(0) } else { discretize(v).map(usize::from) })
            .collect::<Result<_>>()?;
        Ok(Self { values, classes, mask })
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Head-appropriate loss: masked MSE in normalised units, or class-weighted
/// cross entropy.
pub fn loss(tape: &mut Tape, logits: Var, target: &TileTarget, head: Head, stats: &NormStats) -> Result<Var> {
    let rows = tape.value(logits).rows();
    if rows != target.mask.len() {
        return Err(Error::Dimension(format!("target has {} cells, model grid {}", target.mask.len(), rows)));
    }
    match head {
        Head::Regression => tape.mse_loss(logits, &target.values, &target.mask),
        Head::Classification => tape.weighted_ce_loss(logits, &target.classes, &stats.class_weights, &target.mask),
    }
}

/// Per-cell model output on the query grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Denormalised values in centimetres.
    Regression(ThawRaster),
    /// Class indices `0..7` (C1..C7), row-major.
    Classes { h: usize, w: usize, classes: Vec<u8> },
}

impl Prediction {
    /// As a raster (class predictions store the index as the value).
    pub fn to_raster(&self) -> ThawRaster {
        match self {
            Prediction::Regression(r) => r.clone(),
            Prediction::Classes { h, w, classes } => ThawRaster::new(*h, *w, classes.iter().map(|&c| c as f64).collect()).unwrap(),
        }
    }
}

pub fn predict_prepared(store: &ParameterStore, prep: &PreparedTile, cfg: &ModelConfig, stats: &NormStats) -> Result<Prediction> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, store, prep, cfg)?;
    let v = tape.value(out);
    let (h, w) = (cfg.grid.h, cfg.grid.w);
    match cfg.head {
        Head::Regression => {
            let values = crate::dataio::denormalize(v.data(), stats);
            let mut r = ThawRaster::new(h, w, values)?;
            r.origin = prep.tile.origin;
            r.cell_size = prep.tile.extent[0] / w as f64;
            Ok(Prediction::Regression(r))
        }
        Head::Classification => {
            let classes = (0..v.rows()).map(|i| argmax(v.row(i)) as u8).collect();
            Ok(Prediction::Classes { h, w, classes })
        }
    }
}

/// Predict a normalised tile.
pub fn predict_tile(tile: &PointCloudTile, cfg: &ModelConfig, store: &ParameterStore, stats: &NormStats) -> Result<Prediction> {
    predict_prepared(store, &prepare(tile, cfg)?, cfg, stats)
}
