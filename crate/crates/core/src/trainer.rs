//! Training loop: AdamW with linear warmup and polynomial decay, gradient
//! accumulation, best-by-validation checkpointing, and evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataio::{
    augment, cap_points, class_counts, class_weights, discretize, normalize_tile, validate_target, Dataset, NormStats, PointCloudTile,
    ThawRaster, WeightScheme, NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::metrics::{iou_metrics, maecu, qwk, regression_metrics, ConfusionMatrix, MetricsReport, RasterPair};
use crate::model::{forward, loss, predict_prepared, prepare, Head, ModelConfig, Prediction, PreparedTile, TileTarget};
use crate::rng::{derive_seed, label, SplitMix64};
use crate::tensor::{checkpoint, AdamW, ParameterStore, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub accumulation: usize,
    pub poly_power: f64,
    pub seed: u64,
    pub weight_scheme: WeightScheme,
    pub weight_decay: f64,
    /// Points kept per tile (3-D FPS above this).
    pub max_points: usize,
    pub augment: bool,
    pub jitter_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            warmup_epochs: 2,
            epochs: 100,
            accumulation: 2,
            poly_power: 0.9,
            seed: 0,
            weight_scheme: WeightScheme::InverseFrequency,
            weight_decay: 0.01,
            max_points: 60_000,
            augment: true,
            jitter_sigma: 0.005,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.accumulation == 0 || self.max_points == 0 {
            return Err(Error::Config("epochs, accumulation and max_points must be at least 1".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!("warmup ({}) must be shorter than training ({})", self.warmup_epochs, self.epochs)));
        }
        if !(self.lr > 0.0) || !(self.poly_power > 0.0) || !(self.weight_decay >= 0.0) || !(self.jitter_sigma >= 0.0) {
            return Err(Error::Config("lr and poly_power must be positive; weight_decay and jitter non-negative".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW { weight_decay: self.weight_decay, ..AdamW::default() }
    }
}

/// Learning rate schedule over optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub power: f64,
}

impl Schedule {
    pub fn new(cfg: &TrainConfig, steps_per_epoch: u64) -> Self {
        Self {
            lr: cfg.lr,
            warmup_steps: cfg.warmup_epochs as u64 * steps_per_epoch,
            total_steps: cfg.epochs as u64 * steps_per_epoch,
            power: cfg.poly_power,
        }
    }
}

/// `0.1 lr -> lr` linearly over the warmup, then `lr (1 - progress)^power`,
/// reaching 0 at `total_steps`.
pub fn lr_at(step: u64, s: &Schedule) -> f64 {
    if step < s.warmup_steps {
        return s.lr * (0.1 + 0.9 * step as f64 / s.warmup_steps as f64);
    }
    let span = s.total_steps.saturating_sub(s.warmup_steps).max(1);
    let progress = ((step - s.warmup_steps) as f64 / span as f64).min(1.0);
    s.lr * (1.0 - progress).powf(s.power)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,lr";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }
    s
}

pub fn parse_history(text: &str) -> Result<Vec<EpochRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != HISTORY_HEADER {
                return Err(Error::Data(format!("history header `{line}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Data(format!("history line {}: `{line}`", i + 1));
        if f.len() != 4 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        out.push(EpochRecord { epoch: f[0].parse().map_err(|_| bad())?, train_loss: num(f[1])?, val_loss: num(f[2])?, lr: num(f[3])? });
    }
    Ok(out)
}

/// A tile ready for training: capped, normalised, with its raw raster.
#[derive(Debug, Clone)]
pub struct TrainTile {
    pub name: String,
    pub tile: PointCloudTile,
    pub raster: ThawRaster,
}

/// Cap, normalise and validate tiles; tiles whose target exceeds the
/// allowed change are dropped.
pub fn preprocess(data: &Dataset, indices: &[usize], max_points: usize) -> Result<Vec<TrainTile>> {
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        if validate_target(&data.rasters[i]).is_err() {
            continue;
        }
        let capped = cap_points(&data.tiles[i], max_points)?;
        out.push(TrainTile { name: data.names[i].clone(), tile: normalize_tile(&capped, &data.stats)?, raster: data.rasters[i].clone() });
    }
    Ok(out)
}

/// Statistics with class weights recomputed from the training rasters.
pub fn training_stats(data: &Dataset, scheme: WeightScheme) -> Result<NormStats> {
    let mut stats = data.stats.clone();
    let mut classes = Vec::new();
    for &i in &data.split.train {
        for &v in &data.rasters[i].values {
            if !v.is_nan() {
                classes.push(discretize(v)?);
            }
        }
    }
    if !classes.is_empty() {
        stats.class_weights = class_weights(&class_counts(&classes), scheme);
    }
    Ok(stats)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for checkpoints and history; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Continue from `last.spck` and `history.csv` in `out_dir`.
    pub resume: bool,
    /// Per-epoch progress on stderr.
    pub verbose: bool,
    /// Return once the history holds this many epochs.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best: ParameterStore,
    pub last: ParameterStore,
    pub best_epoch: usize,
    pub stats: NormStats,
}

struct Prepared {
    name: String,
    prep: PreparedTile,
    target: TileTarget,
}

fn prepare_eval(tiles: &[TrainTile], model: &ModelConfig, stats: &NormStats) -> Result<Vec<Prepared>> {
    tiles
        .iter()
        .map(|t| Ok(Prepared { name: t.name.clone(), prep: prepare(&t.tile, model)?, target: TileTarget::new(&t.raster, stats)? }))
        .collect()
}

fn mean_loss(store: &ParameterStore, tiles: &[Prepared], model: &ModelConfig, stats: &NormStats) -> Result<f64> {
    let mut total = 0.0;
    for t in tiles {
        let mut tape = Tape::new();
        let out = forward(&mut tape, store, &t.prep, model)?;
        let l = loss(&mut tape, out, &t.target, model.head, stats)?;
        total += tape.value(l).data()[0];
    }
    Ok(total / tiles.len() as f64)
}

/// Train `model` on the dataset's training split, validating on its eval split.
pub fn train(data: &Dataset, model: &ModelConfig, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    let stats = training_stats(data, cfg.weight_scheme)?;
    let train_tiles = preprocess(data, &data.split.train, cfg.max_points)?;
    let eval_tiles = preprocess(data, &data.split.eval, cfg.max_points)?;
    if train_tiles.is_empty() || eval_tiles.is_empty() {
        return Err(Error::Degenerate(format!("{} train / {} eval tiles after validation", train_tiles.len(), eval_tiles.len())));
    }
    let eval_prepared = prepare_eval(&eval_tiles, model, &stats)?;
    let steps_per_epoch = train_tiles.len().div_ceil(cfg.accumulation) as u64;
    let schedule = Schedule::new(cfg, steps_per_epoch);
    let opt = cfg.optimizer();

    let mut history = Vec::new();
    let mut store = model.init_params(&mut SplitMix64::new(derive_seed(cfg.seed, &[label("init")])))?;
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    if opts.resume {
        let dir = opts.out_dir.as_ref().ok_or_else(|| Error::Config("resume needs an output directory".into()))?;
        store = checkpoint::load(&dir.join("last.spck"))?;
        history = parse_history(&fs::read_to_string(dir.join("history.csv"))?)?;
        if let Some(r) = history.iter().min_by(|a, b| a.val_loss.total_cmp(&b.val_loss)) {
            let best_store = checkpoint::load(&dir.join("best.spck"))?;
            best = Some((r.val_loss, r.epoch, best_store));
        }
    }
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
    }

    let end = opts.stop_after.map_or(cfg.epochs, |n| n.min(cfg.epochs));
    for epoch in history.len()..end {
        let mut rng = SplitMix64::new(derive_seed(cfg.seed, &[label("epoch"), epoch as u64]));
        let mut order: Vec<usize> = (0..train_tiles.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut lr = lr_at(store.step_count(), &schedule);
        for (pos, &ti) in order.iter().enumerate() {
            let t = &train_tiles[ti];
            let (tile, raster) = if cfg.augment {
                let (tile, raster, _) = augment(&t.tile, &t.raster, &mut rng, cfg.jitter_sigma)?;
                (tile, raster)
            } else {
                (t.tile.clone(), t.raster.clone())
            };
            let prep = prepare(&tile, model)?;
            let target = TileTarget::new(&raster, &stats)?;
            let mut tape = Tape::new();
            let out = forward(&mut tape, &store, &prep, model)?;
            let l = loss(&mut tape, out, &target, model.head, &stats)?;
            let lv = tape.value(l).data()[0];
            if !lv.is_finite() {
                return Err(Error::NonFinite { step: store.step_count(), tile: t.name.clone(), loss: lv });
            }
            total += lv;
            tape.backward(l)?.accumulate_into(&mut store, 1.0 / cfg.accumulation as f64)?;
            if (pos + 1) % cfg.accumulation == 0 || pos + 1 == order.len() {
                lr = lr_at(store.step_count(), &schedule);
                store.adamw_step(lr, &opt);
            }
        }
        let val_loss = mean_loss(&store, &eval_prepared, model, &stats)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite { step: store.step_count(), tile: eval_prepared[0].name.clone(), loss: val_loss });
        }
        let rec = EpochRecord { epoch, train_loss: total / train_tiles.len() as f64, val_loss, lr };
        history.push(rec);
        if opts.verbose {
            eprintln!("epoch {epoch:>4} train {:.6} val {:.6} lr {:.3e}", rec.train_loss, rec.val_loss, rec.lr);
        }
        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, store.clone()));
        }
        if let Some(dir) = &opts.out_dir {
            if improved {
                checkpoint::save(&store, &dir.join("best.spck"), false)?;
            }
            checkpoint::save(&store, &dir.join("last.spck"), true)?;
            fs::write(dir.join("history.csv"), history_csv(&history))?;
        }
    }
    let (_, best_epoch, best_store) = best.ok_or_else(|| Error::Degenerate("no epochs were run".into()))?;
    Ok(TrainOutcome { history, best: best_store, last: store, best_epoch, stats })
}

/// Pooled evaluation of one split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<Prediction>,
}

/// Evaluate `store` on the tiles at `indices`. Regression heads report
/// RMSE, MAE and R^2 in centimetres; classification heads report per-class
/// IoU, mIoU, QWK and MAECU. All metrics pool every valid cell of the split.
pub fn evaluate(data: &Dataset, indices: &[usize], model: &ModelConfig, store: &ParameterStore, stats: &NormStats, max_points: usize) -> Result<Evaluation> {
    let tiles = preprocess(data, indices, max_points)?;
    if tiles.is_empty() {
        return Err(Error::Degenerate("no valid tiles to evaluate".into()));
    }
    let mut report = MetricsReport::default();
    report.notes.push(format!("head={} kind={} tiles={}", model.head.name(), model.kind.name(), tiles.len()));
    report.notes.push("metrics pooled over all valid cells of the split (global, not per-tile means)".into());
    let mut predictions = Vec::with_capacity(tiles.len());
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    let mut cm = ConfusionMatrix::new(NUM_CLASSES);
    let (mut pc, mut tc, mut mask) = (Vec::new(), Vec::new(), Vec::new());
    for t in &tiles {
        let p = predict_prepared(store, &prepare(&t.tile, model)?, model, stats)?;
        match &p {
            Prediction::Regression(r) => {
                if r.values.len() != t.raster.values.len() {
                    return Err(Error::Dimension("prediction and target rasters differ in size".into()));
                }
                pred.extend_from_slice(&r.values);
                truth.extend_from_slice(&t.raster.values);
            }
            Prediction::Classes { classes, .. } => {
                let target = TileTarget::new(&t.raster, stats)?;
                for ((&c, &y), &m) in classes.iter().zip(&target.classes).zip(&target.mask) {
                    pc.push(c);
                    tc.push(y as u8);
                    mask.push(m);
                    if m {
                        cm.add(y, c as usize)?;
                    }
                }
            }
        }
        predictions.push(p);
    }
    match model.head {
        Head::Regression => {
            let pair = RasterPair::from_truth_voids(pred, truth)?;
            let m = regression_metrics(&pair)?;
            report.push("rmse", m.rmse);
            report.push("mae", m.mae);
            report.push("r2", m.r2);
            report.push("cells", pair.valid_count() as f64);
        }
        Head::Classification => {
            let iou = iou_metrics(&cm)?;
            for (c, v) in iou.per_class.iter().enumerate() {
                report.push(format!("iou_c{}", c + 1), v.unwrap_or(f64::NAN));
            }
            report.push("miou", iou.miou);
            report.push("qwk", qwk(&cm).unwrap_or(f64::NAN));
            report.push("maecu", maecu(&pc, &tc, &mask)?);
            report.push("cells", cm.total() as f64);
        }
    }
    Ok(Evaluation { report, predictions })
}

/// Write checkpoint, history and normalisation statistics of an outcome.
pub fn write_outcome(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    checkpoint::save(&outcome.best, &dir.join("best.spck"), false)?;
    checkpoint::save(&outcome.last, &dir.join("last.spck"), true)?;
    fs::write(dir.join("history.csv"), history_csv(&outcome.history))?;
    outcome.stats.write(&dir.join("stats.txt"))
}
