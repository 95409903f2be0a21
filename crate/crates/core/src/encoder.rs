//! Reference hierarchical point encoder.
//!
//! Stage 1 applies a per-point MLP to the 7-wide input (xyz, rgb,
//! intensity). Each later stage voxel-pools the previous stage (count
//! weighted, so pooled coordinates are true centroids of the underlying
//! points) and applies another per-point MLP that doubles the width.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::dataio::PointCloudTile;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{DenseArray, GatherPlan, ParameterStore, Tape, Var};

pub const NUM_STAGES: usize = 4;
pub const INPUT_WIDTH: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Output width per stage.
    pub channels: [usize; NUM_STAGES],
    /// Voxel edge length for stages 2-4 (stage 1 is unpooled), normalised units.
    pub voxel_sizes: [f64; NUM_STAGES - 1],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::with_base(16)
    }
}

impl EncoderConfig {
    /// Channel ladder `{C, 2C, 4C, 8C}` with the default voxel octaves.
    pub fn with_base(base: usize) -> Self {
        Self { channels: [base, 2 * base, 4 * base, 8 * base], voxel_sizes: [0.125, 0.25, 0.5] }
    }

    pub fn full_scale() -> Self {
        Self::with_base(64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("encoder channels must be positive".into()));
        }
        if !(self.voxel_sizes[0] > 0.0) || self.voxel_sizes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!("voxel sizes must be positive and increasing: {:?}", self.voxel_sizes)));
        }
        Ok(())
    }
}

/// Point geometry of one stage plus the pooling map from the previous one.
#[derive(Debug, Clone)]
pub struct StageGeometry {
    pub coords: Vec<[f64; 3]>,
    /// Number of input points represented by each stage point.
    pub counts: Vec<usize>,
    pub pool: Option<Arc<GatherPlan>>,
}

/// Per-stage coordinates and features produced by [`encode`].
#[derive(Debug, Clone)]
pub struct StageFeatures {
    pub stage: usize,
    pub coords: Vec<[f64; 3]>,
    pub feats: DenseArray,
}

/// Stage features still attached to a tape.
#[derive(Debug, Clone)]
pub struct StageVar {
    pub stage: usize,
    pub coords: Arc<Vec<[f64; 3]>>,
    pub feats: Var,
}

fn voxel_key(p: &[f64; 3], size: f64) -> (i64, i64, i64) {
    (((p[0] + 1.0) / size).floor() as i64, ((p[1] + 1.0) / size).floor() as i64, (p[2] / size).floor() as i64)
}

/// Voxel hierarchy for normalised coordinates. Voxels are ordered by key,
/// and members summed by ascending id, so the result does not depend on
/// input order beyond the ids themselves.
pub fn build_hierarchy(xyz: &[[f64; 3]], cfg: &EncoderConfig) -> Result<Vec<StageGeometry>> {
    if xyz.is_empty() {
        return Err(Error::Degenerate("empty tile".into()));
    }
    cfg.validate()?;
    let mut stages = vec![StageGeometry { coords: xyz.to_vec(), counts: vec![1; xyz.len()], pool: None }];
    for &size in &cfg.voxel_sizes {
        let prev = stages.last().unwrap();
        let mut voxels: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in prev.coords.iter().enumerate() {
            voxels.entry(voxel_key(p, size)).or_default().push(i);
        }
        let mut plan = GatherPlan::with_capacity(voxels.len(), prev.coords.len());
        let mut coords = Vec::with_capacity(voxels.len());
        let mut counts = Vec::with_capacity(voxels.len());
        for members in voxels.values() {
            let total: usize = members.iter().map(|&i| prev.counts[i]).sum();
            let mut c = [0.0; 3];
            for &i in members {
                let w = prev.counts[i] as f64;
                for a in 0..3 {
                    c[a] += w * prev.coords[i][a];
                }
            }
            coords.push(c.map(|v| v / total as f64));
            counts.push(total);
            plan.push_row(members.iter().map(|&i| (i, prev.counts[i] as f64 / total as f64)));
        }
        stages.push(StageGeometry { coords, counts, pool: Some(Arc::new(plan)) });
    }
    Ok(stages)
}

pub fn init_params(store: &mut ParameterStore, cfg: &EncoderConfig, rng: &mut SplitMix64) -> Result<()> {
    cfg.validate()?;
    let mut fan_in = INPUT_WIDTH;
    for (s, &c) in cfg.channels.iter().enumerate() {
        store.insert_linear(&format!("encoder.stage{}", s + 1), fan_in, c, rng)?;
        fan_in = c;
    }
    Ok(())
}

/// The 7-wide input matrix of a tile.
pub fn input_matrix(tile: &PointCloudTile) -> DenseArray {
    let data = (0..tile.len()).flat_map(|i| tile.input_row(i)).collect();
    DenseArray::new(vec![tile.len(), INPUT_WIDTH], data).unwrap()
}

/// Run the encoder on a tape.
pub fn encode_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    tile: &PointCloudTile,
    hierarchy: &[StageGeometry],
) -> Result<Vec<StageVar>> {
    if tile.is_empty() {
        return Err(Error::Degenerate("empty tile".into()));
    }
    let mut out = Vec::with_capacity(NUM_STAGES);
    let mut x = tape.constant(input_matrix(tile));
    for (s, geom) in hierarchy.iter().enumerate() {
        if let Some(plan) = &geom.pool {
            x = tape.gather(x, plan.clone())?;
        }
        let w = tape.param(store, &format!("encoder.stage{}.w", s + 1))?;
        let b = tape.param(store, &format!("encoder.stage{}.b", s + 1))?;
        let h = tape.linear(x, w, Some(b))?;
        x = tape.gelu(h);
        out.push(StageVar { stage: s + 1, coords: Arc::new(geom.coords.clone()), feats: x });
    }
    Ok(out)
}

/// Evaluate the encoder and return plain arrays for all four stages.
pub fn encode(tile: &PointCloudTile, cfg: &EncoderConfig, store: &ParameterStore) -> Result<Vec<StageFeatures>> {
    let hierarchy = build_hierarchy(&tile.xyz, cfg)?;
    let mut tape = Tape::new();
    let stages = encode_on_tape(&mut tape, store, tile, &hierarchy)?;
    Ok(stages
        .into_iter()
        .map(|s| StageFeatures { stage: s.stage, coords: (*s.coords).clone(), feats: tape.value(s.feats).clone() })
        .collect())
}
