//! Comparison systems: cell mean-pooling of point features, and a small CNN
//! over per-cell class histograms.

use std::sync::Arc;

use crate::dataio::{PointClass, PointCloudTile};
use crate::decoder::{projected_features, DecoderConfig, QueryGrid, StageGrid};
use crate::encoder::{StageFeatures, StageVar};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{DenseArray, GatherPlan, ParameterStore, Tape, Var};

/// Channels of [`histogram_features`]: five class proportions and log density.
pub const HIST_CHANNELS: usize = PointClass::COUNT + 1;
pub const HIST_WIDTH: usize = 32;

/// Cell index of every point, by XY binning of normalised coordinates.
pub fn cell_bins(coords: &[[f64; 3]], grid: &QueryGrid) -> Vec<usize> {
    coords.iter().map(|p| grid.cell_of(p[0], p[1])).collect()
}

/// One row per cell averaging the points that fall in it; empty cells get
/// an empty row (zero output). Members are summed in ascending id order.
pub fn binning_plan(bins: &[usize], cells: usize) -> GatherPlan {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cells];
    for (i, &c) in bins.iter().enumerate() {
        members[c].push(i);
    }
    let mut plan = GatherPlan::with_capacity(cells, bins.len());
    for m in &members {
        let inv = 1.0 / m.len().max(1) as f64;
        plan.push_row(m.iter().map(|&i| (i, inv)));
    }
    plan
}

/// Cell-mean of `f~` for one stage on a tape, `[H * W, D]`.
pub fn mean_pool_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    stage: &StageVar,
    plan: Arc<GatherPlan>,
    cfg: &DecoderConfig,
) -> Result<Var> {
    let ft = projected_features(tape, store, stage, cfg)?;
    tape.gather(ft, plan)
}

/// Mean-pooling projection of plain stage features.
pub fn mean_pool_project(stage: &StageFeatures, grid: &QueryGrid, cfg: &DecoderConfig, store: &ParameterStore) -> Result<StageGrid> {
    if stage.coords.is_empty() {
        return Err(Error::Degenerate("empty stage".into()));
    }
    let plan = Arc::new(binning_plan(&cell_bins(&stage.coords, grid), grid.len()));
    let mut tape = Tape::new();
    let feats = tape.constant(stage.feats.clone());
    let sv = StageVar { stage: stage.stage, coords: Arc::new(stage.coords.clone()), feats };
    let out = mean_pool_on_tape(&mut tape, store, &sv, plan, cfg)?;
    let d = tape.value(out).cols();
    Ok(StageGrid { stage: stage.stage, data: tape.value(out).clone().reshape(&[grid.h, grid.w, d])? })
}

/// `[H, W, 6]`: per-cell proportions of the five point classes, then
/// `ln(1 + count)`. Empty cells are all zero.
pub fn histogram_features(tile: &PointCloudTile, grid: &QueryGrid) -> Result<DenseArray> {
    let mut counts = vec![[0usize; PointClass::COUNT]; grid.len()];
    for (p, &l) in tile.xyz.iter().zip(&tile.labels) {
        let class = PointClass::from_u8(l)? as usize;
        counts[grid.cell_of(p[0], p[1])][class] += 1;
    }
    let mut data = Vec::with_capacity(grid.len() * HIST_CHANNELS);
    for c in &counts {
        let n: usize = c.iter().sum();
        if n == 0 {
            data.extend([0.0; HIST_CHANNELS]);
        } else {
            data.extend(c.iter().map(|&v| v as f64 / n as f64));
            data.push((1.0 + n as f64).ln());
        }
    }
    DenseArray::new(vec![grid.h, grid.w, HIST_CHANNELS], data)
}

/// Patch-extraction plan for a 3x3 zero-padded convolution: row
/// `cell * 9 + tap` copies the neighbour at offset `(tap / 3 - 1, tap % 3 - 1)`
/// or is empty beyond the border.
pub fn im2col_plan(grid: &QueryGrid) -> GatherPlan {
    let mut plan = GatherPlan::with_capacity(grid.len() * 9, grid.len() * 9);
    for r in 0..grid.h as isize {
        for c in 0..grid.w as isize {
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= grid.h as isize || cc >= grid.w as isize {
                        plan.push_row(std::iter::empty());
                    } else {
                        plan.push_row([(rr as usize * grid.w + cc as usize, 1.0)]);
                    }
                }
            }
        }
    }
    plan
}

/// 3x3 convolution of `[H * W, Cin]` with weights `[9 * Cin, Cout]`
/// (tap-major, then input channel).
pub fn conv3x3(tape: &mut Tape, x: Var, plan: &Arc<GatherPlan>, w: Var, b: Var) -> Result<Var> {
    let (rows, cin) = (tape.value(x).rows(), tape.value(x).cols());
    let patches = tape.gather(x, plan.clone())?;
    let patches = tape.reshape(patches, &[rows, 9 * cin])?;
    tape.linear(patches, w, Some(b))
}

pub fn init_histogram_params(store: &mut ParameterStore, out: usize, rng: &mut SplitMix64) -> Result<()> {
    store.insert_linear("hist.c1", 9 * HIST_CHANNELS, HIST_WIDTH, rng)?;
    store.insert_linear("hist.c2", 9 * HIST_WIDTH, HIST_WIDTH, rng)?;
    store.insert_linear("hist.c3", 9 * HIST_WIDTH, out, rng)
}

/// Histogram CNN on a tape. `feats` is `[H, W, 6]`; returns `[H, W, Cout]`.
pub fn histogram_cnn_on_tape(tape: &mut Tape, store: &ParameterStore, feats: &DenseArray, grid: &QueryGrid) -> Result<Var> {
    if feats.shape() != [grid.h, grid.w, HIST_CHANNELS] {
        return Err(Error::Dimension(format!("histogram features {:?} for a {}x{} grid", feats.shape(), grid.h, grid.w)));
    }
    let plan = Arc::new(im2col_plan(grid));
    let mut x = tape.constant(feats.clone().reshape(&[grid.len(), HIST_CHANNELS])?);
    for (i, name) in ["hist.c1", "hist.c2", "hist.c3"].iter().enumerate() {
        let w = tape.param(store, &format!("{name}.w"))?;
        let b = tape.param(store, &format!("{name}.b"))?;
        x = conv3x3(tape, x, &plan, w, b)?;
        if i < 2 {
            x = tape.gelu(x);
        }
    }
    let cout = tape.value(x).cols();
    tape.reshape(x, &[grid.h, grid.w, cout])
}

pub fn histogram_cnn(feats: &DenseArray, store: &ParameterStore) -> Result<DenseArray> {
    let s = feats.shape();
    if s.len() != 3 {
        return Err(Error::Dimension(format!("histogram features must be [H, W, 6], got {s:?}")));
    }
    let grid = QueryGrid::new(s[0], s[1])?;
    let mut tape = Tape::new();
    let out = histogram_cnn_on_tape(&mut tape, store, feats, &grid)?;
    Ok(tape.value(out).clone())
}
