//! Finite-difference checks of every differentiable op and of whole models.

use std::sync::Arc;

use strata::decoder::{init_stage_params, init_z_embedding, neighborhoods, project_stage_on_tape, DecoderConfig, QueryGrid};
use strata::encoder::StageVar;
use strata::model::{forward, loss, prepare, Head, ModelKind, TileTarget};
use strata::rng::SplitMix64;
use strata::tensor::{conv1x1, grad_check, DenseArray, GatherPlan, ParameterStore, Tape, Var, FD_STEP};

pub fn rand(rng: &mut SplitMix64, shape: &[usize]) -> DenseArray {
    let n = shape.iter().product();
    DenseArray::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Reduce any tensor to a scalar with fixed random weights, so every output
/// entry affects the checked value.
pub fn probe(t: &mut Tape, x: Var, seed: u64) -> Var {
    let n = t.value(x).len();
    let mut rng = SplitMix64::new(seed);
    let target: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let flat = t.reshape(x, &[n, 1]).unwrap();
    t.mse_loss(flat, &target, &vec![true; n]).unwrap()
}

pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    /// Tolerance expected of this op alone.
    pub tol: f64,
}

fn run<F: Fn(&mut Tape, &[Var]) -> strata::Result<Var>>(name: &'static str, f: F, inputs: &[DenseArray], tol: f64) -> OpCheck {
    let r = grad_check(f, inputs, FD_STEP, 64).unwrap();
    OpCheck { name, max_rel_error: r.max_rel_error, tol }
}

/// Every tape op, each through a random probe.
pub fn op_suite() -> Vec<OpCheck> {
    let mut rng = SplitMix64::new(1);
    let mut out = Vec::new();
    let ins = [rand(&mut rng, &[3, 4]), rand(&mut rng, &[4, 2]), rand(&mut rng, &[2])];
    out.push(run("linear", |t, v| {
        let y = t.linear(v[0], v[1], Some(v[2]))?;
        Ok(probe(t, y, 2))
    }, &ins, 1e-6));
    let ins = [rand(&mut rng, &[5, 3]), rand(&mut rng, &[5, 3])];
    out.push(run("add", |t, v| {
        let y = t.add(v[0], v[1])?;
        Ok(probe(t, y, 4))
    }, &ins, 1e-6));
    out.push(run("scale", |t, v| {
        let y = t.scale(v[0], -2.5);
        Ok(probe(t, y, 5))
    }, &ins[..1], 1e-6));
    out.push(run("gelu", |t, v| {
        let y = t.gelu(v[0]);
        Ok(probe(t, y, 6))
    }, &ins[..1], 1e-6));
    let ins = [rand(&mut rng, &[4, 6]), rand(&mut rng, &[6]), rand(&mut rng, &[6])];
    out.push(run("layer_norm", |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2])?;
        Ok(probe(t, y, 8))
    }, &ins, 1e-5));
    let ins = [rand(&mut rng, &[2, 3, 8]), rand(&mut rng, &[8]), rand(&mut rng, &[8])];
    out.push(run("group_norm", |t, v| {
        let y = t.group_norm(v[0], 2, v[1], v[2])?;
        Ok(probe(t, y, 9))
    }, &ins, 1e-5));
    let mut plan = GatherPlan::new();
    plan.push_row([(0, 0.5), (2, -1.0)]);
    plan.push_row(std::iter::empty());
    plan.push_row([(1, 2.0), (1, 0.25), (3, 1.0)]);
    let plan = Arc::new(plan);
    let ins = [rand(&mut rng, &[4, 3]), rand(&mut rng, &[4, 2])];
    out.push(run("gather", |t, v| {
        let y = t.gather(v[0], plan.clone())?;
        Ok(probe(t, y, 11))
    }, &ins[..1], 1e-6));
    out.push(run("reshape+concat", |t, v| {
        let c = t.concat(&[v[0], v[1]])?;
        let r = t.reshape(c, &[2, 10])?;
        Ok(probe(t, r, 12))
    }, &ins, 1e-6));
    let conv = [rand(&mut rng, &[2, 2, 3]), rand(&mut rng, &[3, 2]), rand(&mut rng, &[2])];
    out.push(run("conv1x1", |t, v| {
        let y = conv1x1(t, v[0], v[1], v[2])?;
        Ok(probe(t, y, 13))
    }, &conv, 1e-6));
    let ins = [rand(&mut rng, &[6, 7])];
    let labels = [0, 3, 6, 2, 2, 5];
    let weights = [1.0, 1.53, 1.56, 2.91, 2.19, 1.55, 3.51];
    let mask = [true, true, false, true, true, true];
    out.push(run("weighted_ce", |t, v| t.weighted_ce_loss(v[0], &labels, &weights, &mask), &ins, 1e-6));
    let ins = [rand(&mut rng, &[6, 1])];
    let target: Vec<f64> = (0..6).map(|i| i as f64 * 0.3).collect();
    out.push(run("mse", |t, v| t.mse_loss(v[0], &target, &mask), &ins, 1e-6));

    let tile = super::random_tile(&mut rng, 30);
    let cfg = DecoderConfig { d: 4, k: 3, groups: 2, ..DecoderConfig::default() };
    let hoods = neighborhoods(&tile.xyz, &QueryGrid::square(3), &cfg).unwrap();
    let mut store = ParameterStore::new();
    init_stage_params(&mut store, &cfg, 1, 5, &mut rng).unwrap();
    init_z_embedding(&mut store, cfg.d, &mut rng).unwrap();
    let coords = Arc::new(tile.xyz.clone());
    let ins = [rand(&mut rng, &[30, 5])];
    out.push(run("stage_projection", |t, v| {
        let sv = StageVar { stage: 1, coords: coords.clone(), feats: v[0] };
        let y = project_stage_on_tape(t, &store, &sv, &hoods, &cfg)?;
        Ok(probe(t, y, 18))
    }, &ins, 1e-5));
    out
}

/// Worst relative error over sampled entries of every parameter of a full
/// model on a 50-point tile, by perturbing the store directly.
pub fn model_grad_error(kind: ModelKind, head: Head) -> f64 {
    let mut rng = SplitMix64::new(15);
    let mut tile = super::random_tile(&mut rng, 50);
    tile.labels.iter_mut().enumerate().for_each(|(i, l)| *l = (i % 5) as u8);
    let cfg = super::tiny_model(kind, head, 4);
    let mut store = cfg.init_params(&mut SplitMix64::new(16)).unwrap();
    // Keep LayerNorm inputs away from zero variance.
    for n in store.names().map(String::from).collect::<Vec<_>>() {
        store.value_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| *v += 0.1 * rng.normal());
    }
    let prep = prepare(&tile, &cfg).unwrap();
    let vals: Vec<f64> = (0..16).map(|i| -6.0 + i as f64 * 0.7).collect();
    let stats = super::test_stats();
    let target = TileTarget::new(&strata::dataio::ThawRaster::new(4, 4, vals).unwrap(), &stats).unwrap();
    let eval = |s: &ParameterStore| {
        let mut t = Tape::new();
        let o = forward(&mut t, s, &prep, &cfg).unwrap();
        let l = loss(&mut t, o, &target, head, &stats).unwrap();
        t.value(l).data()[0]
    };
    let mut t = Tape::new();
    let o = forward(&mut t, &store, &prep, &cfg).unwrap();
    let l = loss(&mut t, o, &target, head, &stats).unwrap();
    t.backward(l).unwrap().accumulate_into(&mut store, 1.0).unwrap();
    let names: Vec<String> = store.names().map(String::from).collect();
    let mut worst = 0.0f64;
    for n in names {
        let len = store.value(&n).unwrap().len();
        for idx in (0..len).step_by((len / 6).max(1)) {
            let a = store.grad(&n).unwrap().data()[idx];
            let orig = store.value(&n).unwrap().data()[idx];
            store.value_mut(&n).unwrap().data_mut()[idx] = orig + FD_STEP;
            let fp = eval(&store);
            store.value_mut(&n).unwrap().data_mut()[idx] = orig - FD_STEP;
            let fm = eval(&store);
            store.value_mut(&n).unwrap().data_mut()[idx] = orig;
            let num = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-6));
        }
    }
    worst
}
