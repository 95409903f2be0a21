mod common;

use strata::dataio::{Dataset, Split};
use strata::model::{forward, loss, prepare, Head, ModelKind, TileTarget};
use strata::rng::SplitMix64;
use strata::tensor::{checkpoint, AdamW, ParameterStore, Tape};
use strata::trainer::{evaluate, lr_at, parse_history, preprocess, train, Schedule, TrainConfig, TrainOptions};
use strata::Error;

fn dataset(n: usize, all_train: bool) -> Dataset {
    let mut d = common::random_dataset(100, n, 120, 4);
    if all_train {
        d.split = Split { train: (0..n).collect(), eval: vec![0] };
    }
    d
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { lr: 5e-3, warmup_epochs: 1, epochs, accumulation: 1, augment: false, weight_decay: 0.0, seed: 3, ..TrainConfig::default() }
}

#[test]
fn schedule_examples() {
    let s = Schedule::new(&TrainConfig { lr: 1e-5, warmup_epochs: 2, epochs: 100, ..TrainConfig::default() }, 312);
    assert_eq!((s.warmup_steps, s.total_steps), (624, 31200));
    assert!((lr_at(0, &s) - 1e-6).abs() < 1e-20);
    assert!(lr_at(300, &s) > lr_at(0, &s) && lr_at(300, &s) < 1e-5);
    assert_eq!(lr_at(624, &s), 1e-5);
    assert_eq!(lr_at(31200, &s), 0.0);
    let later: Vec<f64> = (624..31200).step_by(1000).map(|t| lr_at(t, &s)).collect();
    assert!(later.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn overfits_five_tiles() {
    let data = dataset(5, true);
    let model = common::tiny_model(ModelKind::Stratified, Head::Regression, 4);
    let out = train(&data, &model, &quick(200), &TrainOptions::default()).unwrap();
    let first = out.history[0].train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < 0.01, "train MSE {first} -> {last}");
}

fn tile_loss(tape: &mut Tape, store: &ParameterStore, data: &Dataset, i: usize) -> strata::tensor::Var {
    let model = common::tiny_model(ModelKind::Stratified, Head::Regression, 4);
    let t = &preprocess(data, &[i], 60_000).unwrap()[0];
    let out = forward(tape, store, &prepare(&t.tile, &model).unwrap(), &model).unwrap();
    loss(tape, out, &TileTarget::new(&t.raster, &data.stats).unwrap(), Head::Regression, &data.stats).unwrap()
}

#[test]
fn accumulation_matches_batch_of_two() {
    let data = dataset(5, true);
    let model = common::tiny_model(ModelKind::Stratified, Head::Regression, 4);
    let init = model.init_params(&mut SplitMix64::new(101)).unwrap();
    let opt = AdamW::default();

    let mut accumulated = init.clone();
    for i in [1, 2] {
        let mut tape = Tape::new();
        let l = tile_loss(&mut tape, &accumulated, &data, i);
        tape.backward(l).unwrap().accumulate_into(&mut accumulated, 0.5).unwrap();
    }
    accumulated.adamw_step(1e-3, &opt);

    let mut batched = init.clone();
    let mut tape = Tape::new();
    let a = tile_loss(&mut tape, &batched, &data, 1);
    let b = tile_loss(&mut tape, &batched, &data, 2);
    let sum = tape.add(a, b).unwrap();
    let mean = tape.scale(sum, 0.5);
    tape.backward(mean).unwrap().accumulate_into(&mut batched, 1.0).unwrap();
    batched.adamw_step(1e-3, &opt);

    assert_eq!(accumulated.values(), batched.values());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let data = dataset(10, false);
    let model = common::tiny_model(ModelKind::Stratified, Head::Classification, 4);
    let cfg = TrainConfig { augment: true, accumulation: 2, ..quick(4) };
    let whole = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let full = train(&data, &model, &cfg, &TrainOptions { out_dir: Some(whole.path().into()), ..TrainOptions::default() }).unwrap();
    let half = TrainOptions { out_dir: Some(split.path().into()), stop_after: Some(2), ..TrainOptions::default() };
    assert_eq!(train(&data, &model, &cfg, &half).unwrap().history.len(), 2);
    let resumed = train(&data, &model, &cfg, &TrainOptions { resume: true, stop_after: None, ..half }).unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.last.values(), full.last.values());
    assert_eq!(resumed.best_epoch, full.best_epoch);
    let written = parse_history(&std::fs::read_to_string(split.path().join("history.csv")).unwrap()).unwrap();
    assert_eq!(written, full.history);
    assert_eq!(checkpoint::load(&split.path().join("best.spck")).unwrap().values(), full.best.values());
}

#[test]
fn runs_are_bit_identical_and_keep_the_best_epoch() {
    let data = dataset(10, false);
    let model = common::tiny_model(ModelKind::MeanPool, Head::Regression, 4);
    let cfg = TrainConfig { augment: true, ..quick(5) };
    let a = train(&data, &model, &cfg, &TrainOptions::default()).unwrap();
    let b = train(&data, &model, &cfg, &TrainOptions::default()).unwrap();
    let bits = |h: &[strata::trainer::EpochRecord]| h.iter().map(|r| (r.train_loss.to_bits(), r.val_loss.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a.history), bits(&b.history));
    let best = a.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(a.history[a.best_epoch].val_loss, best);
    let other = train(&data, &model, &TrainConfig { seed: 4, ..cfg }, &TrainOptions::default()).unwrap();
    assert_ne!(bits(&a.history), bits(&other.history));
    // The retained checkpoint scores its recorded validation loss.
    let mut total = 0.0;
    for &i in &data.split.eval {
        let mut tape = Tape::new();
        let t = &preprocess(&data, &[i], cfg.max_points).unwrap()[0];
        let out = forward(&mut tape, &a.best, &prepare(&t.tile, &model).unwrap(), &model).unwrap();
        let l = loss(&mut tape, out, &TileTarget::new(&t.raster, &a.stats).unwrap(), model.head, &a.stats).unwrap();
        total += tape.value(l).data()[0];
    }
    assert!((total / data.split.eval.len() as f64 - best).abs() < 1e-12);
}

#[test]
fn divergence_names_step_and_tile() {
    let data = dataset(5, false);
    let model = common::tiny_model(ModelKind::Histogram, Head::Regression, 4);
    match train(&data, &model, &TrainConfig { lr: 1e300, ..quick(3) }, &TrainOptions::default()) {
        Err(Error::NonFinite { tile, .. }) => assert!(tile.starts_with("tile_")),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
    assert!(train(&data, &model, &TrainConfig { warmup_epochs: 3, ..quick(3) }, &TrainOptions::default()).is_err());
}

#[test]
fn evaluation_reports_the_head_metrics() {
    let data = dataset(10, false);
    let stats = data.stats.clone();
    for head in [Head::Regression, Head::Classification] {
        let model = common::tiny_model(ModelKind::Stratified, head, 4);
        let store = model.init_params(&mut SplitMix64::new(102)).unwrap();
        let a = evaluate(&data, &data.split.eval, &model, &store, &stats, 60_000).unwrap();
        let b = evaluate(&data, &data.split.eval, &model, &store, &stats, 60_000).unwrap();
        assert_eq!(format!("{:?}", a.report), format!("{:?}", b.report));
        assert_eq!(a.predictions.len(), 2);
        let keys: Vec<&str> = a.report.values.iter().map(|(k, _)| k.as_str()).collect();
        let want: &[&str] = match head {
            Head::Regression => &["rmse", "mae", "r2", "cells"],
            Head::Classification => &["iou_c1", "iou_c2", "iou_c3", "iou_c4", "iou_c5", "iou_c6", "iou_c7", "miou", "qwk", "maecu", "cells"],
        };
        assert_eq!(keys, want);
    }
}
