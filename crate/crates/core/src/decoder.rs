//! Height-aware projection of point features onto a 2-D query grid, and the
//! multi-scale fusion head.
//!
//! For every grid cell centre `q_j` and encoder stage:
//!
//! 1. take the `M * k` XY-nearest stage points and keep `k` of them by
//!    farthest point sampling in z (or the `k` nearest, in `closest_k` mode);
//! 2. project each kept point `f~_i = phi(f_i) + psi(z_i)`, where `phi` is a
//!    stage-specific linear map to `D` and `psi` is a small MLP on height;
//! 3. sort the points bottom to top, scale each by its XY weight
//!    `w_i = exp(-lambda * max(0, |q_j - p_i| - tau))` and concatenate into a
//!    `k * D` profile;
//! 4. reduce the profile with `Linear(kD, D) -> LayerNorm -> GELU -> Linear(D, D)`.
//!
//! The per-stage `[H, W, D]` maps are concatenated and reduced by 1x1
//! convolutions `nD -> 2D -> D -> C_out` with GroupNorm and GELU between.

use std::sync::Arc;

use rayon::prelude::*;

use crate::encoder::{StageFeatures, StageVar};
use crate::error::{Error, Result};
use crate::geometry::{build_neighborhood, Neighborhood, NeighborhoodSpec, SamplingMode, XYIndex};
use crate::rng::SplitMix64;
use crate::tensor::{DenseArray, GatherPlan, ParameterStore, Tape, Var};

/// Regular grid of cell-centre queries over `[-1, 1]^2`, row-major with
/// row 0 at `y = -1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryGrid {
    pub h: usize,
    pub w: usize,
}

impl QueryGrid {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Config("query grid must be at least 1x1".into()));
        }
        Ok(Self { h, w })
    }

    pub fn square(n: usize) -> Self {
        Self::new(n, n).expect("grid size must be positive")
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Centre of cell `(row, col)`: `-1 + (2i + 1) / n` on each axis.
    pub fn center(&self, row: usize, col: usize) -> [f64; 2] {
        [-1.0 + (2 * col + 1) as f64 / self.w as f64, -1.0 + (2 * row + 1) as f64 / self.h as f64]
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.h).flat_map(|r| (0..self.w).map(move |c| (r, c))).map(|(r, c)| self.center(r, c)).collect()
    }

    /// Flat cell index containing a normalised XY position (clamped to the grid).
    pub fn cell_of(&self, x: f64, y: f64) -> usize {
        let clamp = |v: f64, n: usize| -> usize {
            let c = ((v + 1.0) * 0.5 * n as f64).floor();
            if c < 0.0 {
                0
            } else {
                (c as usize).min(n - 1)
            }
        };
        clamp(y, self.h) * self.w + clamp(x, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Common feature width `D`.
    pub d: usize,
    /// Profile length `k`.
    pub k: usize,
    /// Candidate pool multiplier `M`.
    pub m_multiplier: usize,
    pub tau: f64,
    pub lambda: f64,
    pub use_z_embedding: bool,
    pub sampling: SamplingMode,
    /// Encoder stages (1-based) that are projected and fused.
    pub stages: Vec<usize>,
    /// Replace the ordered profile and its MLP by an unweighted mean of `f~_i`.
    pub mean_pool_profile: bool,
    /// GroupNorm groups in the fusion head.
    pub groups: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            d: 128,
            k: 32,
            m_multiplier: 2,
            tau: 0.1,
            lambda: 10.0,
            use_z_embedding: true,
            sampling: SamplingMode::Stratified,
            stages: vec![1, 2, 3, 4],
            mean_pool_profile: false,
            groups: 8,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.m_multiplier == 0 {
            return Err(Error::Config("decoder d, k and m_multiplier must be at least 1".into()));
        }
        if !(self.tau >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config("tau and lambda must be non-negative".into()));
        }
        if self.stages.is_empty() || self.stages.iter().any(|&s| !(1..=4).contains(&s)) {
            return Err(Error::Config(format!("stages must be a non-empty subset of 1..=4, got {:?}", self.stages)));
        }
        let mut s = self.stages.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.stages.len() {
            return Err(Error::Config("duplicate stage".into()));
        }
        if self.groups == 0 || self.d % self.groups != 0 {
            return Err(Error::Config(format!("{} groups do not divide D = {}", self.groups, self.d)));
        }
        Ok(())
    }

    pub fn neighborhood_spec(&self) -> NeighborhoodSpec {
        NeighborhoodSpec { k: self.k, m_multiplier: self.m_multiplier, tau: self.tau, lambda: self.lambda, mode: self.sampling }
    }

    /// Bucket edge for the XY index over `n` points, sized so the 3x3
    /// buckets around a query hold about 1.5 candidate pools.
    pub fn bucket_size(&self, n: usize) -> f64 {
        let pool = (self.k * self.m_multiplier) as f64;
        (0.667 * pool / n.max(1) as f64).sqrt().clamp(1e-3, 2.0)
    }
}

/// One projected stage as a plain `[H, W, D]` array.
#[derive(Debug, Clone)]
pub struct StageGrid {
    pub stage: usize,
    pub data: DenseArray,
}

/// Parameters for the projection of `stage` with input width `channels`.
pub fn init_stage_params(store: &mut ParameterStore, cfg: &DecoderConfig, stage: usize, channels: usize, rng: &mut SplitMix64) -> Result<()> {
    store.insert_linear(&format!("decoder.stage{stage}.phi"), channels, cfg.d, rng)?;
    if !cfg.mean_pool_profile {
        let p = format!("decoder.stage{stage}.profile");
        store.insert_linear(&format!("{p}.l1"), cfg.k * cfg.d, cfg.d, rng)?;
        store.insert_norm(&format!("{p}.ln"), cfg.d)?;
        store.insert_linear(&format!("{p}.l2"), cfg.d, cfg.d, rng)?;
    }
    Ok(())
}

/// The height embedding `psi: R -> R^D`, shared by all stages.
pub fn init_z_embedding(store: &mut ParameterStore, d: usize, rng: &mut SplitMix64) -> Result<()> {
    store.insert_linear("decoder.psi.l1", 1, d, rng)?;
    store.insert_linear("decoder.psi.l2", d, d, rng)
}

/// Fusion head parameters for `n_stages` inputs of width `d`.
pub fn init_fuse_params(store: &mut ParameterStore, d: usize, n_stages: usize, out: usize, rng: &mut SplitMix64) -> Result<()> {
    store.insert_linear("fuse.c1", n_stages * d, 2 * d, rng)?;
    store.insert_norm("fuse.gn1", 2 * d)?;
    store.insert_linear("fuse.c2", 2 * d, d, rng)?;
    store.insert_norm("fuse.gn2", d)?;
    store.insert_linear("fuse.out", d, out, rng)
}

/// Profile neighbourhoods for every query of `grid`, in row-major order.
pub fn neighborhoods(coords: &[[f64; 3]], grid: &QueryGrid, cfg: &DecoderConfig) -> Result<Vec<Neighborhood>> {
    let index = XYIndex::build(coords.iter().map(|p| [p[0], p[1]]).collect(), cfg.bucket_size(coords.len()))?;
    let z: Vec<f64> = coords.iter().map(|p| p[2]).collect();
    let spec = cfg.neighborhood_spec();
    grid.centers().par_iter().map(|&q| build_neighborhood(&index, &z, q, &spec)).collect()
}

/// Gather plan laying each query's weighted profile out as `k` consecutive rows.
pub fn profile_plan(hoods: &[Neighborhood], k: usize) -> GatherPlan {
    let mut plan = GatherPlan::with_capacity(hoods.len() * k, hoods.len() * k);
    for n in hoods {
        for (&id, &w) in n.selected.iter().zip(&n.weights) {
            plan.push_row([(id, w)]);
        }
    }
    plan
}

/// Gather plan averaging each query's selected points with equal weight.
pub fn mean_plan(hoods: &[Neighborhood]) -> GatherPlan {
    let mut plan = GatherPlan::with_capacity(hoods.len(), hoods.iter().map(|n| n.selected.len()).sum());
    for n in hoods {
        let inv = 1.0 / n.selected.len() as f64;
        plan.push_row(n.selected.iter().map(|&id| (id, inv)));
    }
    plan
}

fn linear_param(tape: &mut Tape, store: &ParameterStore, x: Var, prefix: &str) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    tape.linear(x, w, Some(b))
}

fn norm_param(tape: &mut Tape, store: &ParameterStore, prefix: &str) -> Result<(Var, Var)> {
    Ok((tape.param(store, &format!("{prefix}.gamma"))?, tape.param(store, &format!("{prefix}.beta"))?))
}

/// `f~ = phi(f) + psi(z)` for every point of a stage (just `phi(f)` without
/// the height embedding).
pub fn projected_features(tape: &mut Tape, store: &ParameterStore, stage: &StageVar, cfg: &DecoderConfig) -> Result<Var> {
    let phi = linear_param(tape, store, stage.feats, &format!("decoder.stage{}.phi", stage.stage))?;
    if !cfg.use_z_embedding {
        return Ok(phi);
    }
    let z = DenseArray::new(vec![stage.coords.len(), 1], stage.coords.iter().map(|p| p[2]).collect())?;
    let z = tape.constant(z);
    let h = linear_param(tape, store, z, "decoder.psi.l1")?;
    let h = tape.gelu(h);
    let psi = linear_param(tape, store, h, "decoder.psi.l2")?;
    tape.add(phi, psi)
}

/// Project one stage onto the grid, returning `[H * W, D]`.
pub fn project_stage_on_tape(
    tape: &mut Tape,
    store: &ParameterStore,
    stage: &StageVar,
    hoods: &[Neighborhood],
    cfg: &DecoderConfig,
) -> Result<Var> {
    if stage.coords.is_empty() {
        return Err(Error::Degenerate("empty stage".into()));
    }
    project_stage_with_plan(tape, store, stage, Arc::new(stage_plan(hoods, cfg)), hoods.len(), cfg)
}

/// The gather plan [`project_stage_with_plan`] expects for these neighbourhoods.
pub fn stage_plan(hoods: &[Neighborhood], cfg: &DecoderConfig) -> GatherPlan {
    if cfg.mean_pool_profile {
        mean_plan(hoods)
    } else {
        profile_plan(hoods, cfg.k)
    }
}

/// As [`project_stage_on_tape`], with the neighbourhood plan precomputed.
pub fn project_stage_with_plan(
    tape: &mut Tape,
    store: &ParameterStore,
    stage: &StageVar,
    plan: Arc<GatherPlan>,
    queries: usize,
    cfg: &DecoderConfig,
) -> Result<Var> {
    let ft = projected_features(tape, store, stage, cfg)?;
    if cfg.mean_pool_profile {
        return tape.gather(ft, plan);
    }
    let rows = tape.gather(ft, plan)?;
    let profile = tape.reshape(rows, &[queries, cfg.k * cfg.d])?;
    let p = format!("decoder.stage{}.profile", stage.stage);
    let h = linear_param(tape, store, profile, &format!("{p}.l1"))?;
    let (g, b) = norm_param(tape, store, &format!("{p}.ln"))?;
    let h = tape.layer_norm(h, g, b)?;
    let h = tape.gelu(h);
    linear_param(tape, store, h, &format!("{p}.l2"))
}

/// Channel-concatenate per-stage `[H * W, D]` maps and run the fusion head.
/// Returns `[H, W, C_out]`.
pub fn fuse_on_tape(tape: &mut Tape, store: &ParameterStore, maps: &[Var], grid: &QueryGrid, groups: usize) -> Result<Var> {
    let first = maps.first().ok_or_else(|| Error::Dimension("fuse: no stage maps".into()))?;
    let shape = tape.value(*first).shape().to_vec();
    for m in maps {
        if tape.value(*m).shape() != shape.as_slice() {
            return Err(Error::Dimension(format!("fuse: stage shapes {:?} vs {:?}", tape.value(*m).shape(), shape)));
        }
    }
    if tape.value(*first).rows() != grid.len() {
        return Err(Error::Dimension(format!("fuse: {} rows for a {}x{} grid", tape.value(*first).rows(), grid.h, grid.w)));
    }
    let cat = if maps.len() == 1 { maps[0] } else { tape.concat(maps)? };
    let c = tape.value(cat).cols();
    let x = tape.reshape(cat, &[grid.h, grid.w, c])?;
    let x = linear_param(tape, store, x, "fuse.c1")?;
    let (g, b) = norm_param(tape, store, "fuse.gn1")?;
    let x = tape.group_norm(x, groups, g, b)?;
    let x = tape.gelu(x);
    let x = linear_param(tape, store, x, "fuse.c2")?;
    let (g, b) = norm_param(tape, store, "fuse.gn2")?;
    let x = tape.group_norm(x, groups, g, b)?;
    let x = tape.gelu(x);
    linear_param(tape, store, x, "fuse.out")
}

/// Project plain stage features onto `grid`.
pub fn project_stage(stage: &StageFeatures, grid: &QueryGrid, cfg: &DecoderConfig, store: &ParameterStore) -> Result<StageGrid> {
    cfg.validate()?;
    let hoods = neighborhoods(&stage.coords, grid, cfg)?;
    let mut tape = Tape::new();
    let feats = tape.constant(stage.feats.clone());
    let sv = StageVar { stage: stage.stage, coords: Arc::new(stage.coords.clone()), feats };
    let out = project_stage_on_tape(&mut tape, store, &sv, &hoods, cfg)?;
    let data = tape.value(out).clone().reshape(&[grid.h, grid.w, cfg.d])?;
    Ok(StageGrid { stage: stage.stage, data })
}

/// Fuse plain stage grids (all `[H, W, D]`) into `[H, W, C_out]`.
pub fn fuse(grids: &[StageGrid], store: &ParameterStore, groups: usize) -> Result<DenseArray> {
    let first = grids.first().ok_or_else(|| Error::Dimension("fuse: no stage grids".into()))?;
    let s = first.data.shape();
    if s.len() != 3 {
        return Err(Error::Dimension(format!("stage grid must be [H, W, D], got {s:?}")));
    }
    let grid = QueryGrid::new(s[0], s[1])?;
    let mut tape = Tape::new();
    let mut maps = Vec::with_capacity(grids.len());
    for g in grids {
        if g.data.shape() != s {
            return Err(Error::Dimension(format!("stage grid {:?} vs {:?}", g.data.shape(), s)));
        }
        let flat = g.data.clone().reshape(&[grid.len(), s[2]])?;
        maps.push(tape.constant(flat));
    }
    let out = fuse_on_tape(&mut tape, store, &maps, &grid, groups)?;
    Ok(tape.value(out).clone())
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
