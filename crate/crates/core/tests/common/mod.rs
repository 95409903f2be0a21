//! Independent brute-force implementations used as test oracles, plus small
//! fixtures shared by several test targets.
#![allow(dead_code)]

pub mod fixtures;
pub mod gradcheck;
pub mod reference;

use strata::dataio::{Dataset, NormStats, PointCloudTile, Split, ThawRaster, WeightScheme};
use strata::decoder::{DecoderConfig, QueryGrid};
use strata::encoder::EncoderConfig;
use strata::model::{Head, ModelConfig, ModelKind};
use strata::rng::SplitMix64;
use strata::tensor::{ParameterStore, GELU_A, GELU_C, NORM_EPS};

/// The `m` nearest ids by full sort on (squared distance, id).
pub fn brute_knn(xy: &[[f64; 2]], q: [f64; 2], m: usize) -> Vec<usize> {
    let mut v: Vec<(f64, usize)> = xy.iter().enumerate().map(|(i, p)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), i)).collect();
    v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    v.into_iter().take(m).map(|(_, i)| i).collect()
}

/// Search over every ordered sequence of `k` distinct candidate positions
/// for the one in which the first element is the lowest (z, id) and each
/// later element attains the largest min-distance to its predecessors among
/// all remaining candidates, ties to the lower id.
pub fn exhaustive_fps(cands: &[(usize, f64)], k: usize) -> Vec<usize> {
    let n = cands.len();
    assert!(k <= n && n <= 10);
    let mut found: Vec<Vec<usize>> = Vec::new();
    let mut seq = Vec::with_capacity(k);
    fn rec(cands: &[(usize, f64)], k: usize, seq: &mut Vec<usize>, found: &mut Vec<Vec<usize>>) {
        if seq.len() == k {
            found.push(seq.clone());
            return;
        }
        for i in 0..cands.len() {
            if !seq.contains(&i) {
                seq.push(i);
                rec(cands, k, seq, found);
                seq.pop();
            }
        }
    }
    rec(cands, k, &mut seq, &mut found);
    let mind = |prefix: &[usize], i: usize| prefix.iter().map(|&p| (cands[p].1 - cands[i].1).abs()).fold(f64::INFINITY, f64::min);
    let valid: Vec<Vec<usize>> = found
        .into_iter()
        .filter(|s| {
            let first_ok = (0..n).all(|j| {
                let (a, b) = (cands[s[0]], cands[j]);
                a.1 < b.1 || (a.1 == b.1 && a.0 <= b.0)
            });
            first_ok
                && (1..k).all(|t| {
                    let pre = &s[..t];
                    let d = mind(pre, s[t]);
                    (0..n).filter(|j| !pre.contains(j)).all(|j| {
                        let dj = mind(pre, j);
                        d > dj || (d == dj && cands[s[t]].0 <= cands[j].0)
                    })
                })
        })
        .collect();
    assert_eq!(valid.len(), 1, "exactly one greedy maximin sequence");
    valid.into_iter().next().unwrap()
}

/// QWK via all (truth, prediction) cell pairs, without a confusion matrix:
/// `1 - N * sum_a w(t_a, p_a) / sum_{a,b} w(t_a, p_b)`.
pub fn brute_qwk(truth: &[u8], pred: &[u8], k: usize) -> f64 {
    let w = |i: u8, j: u8| (i as f64 - j as f64).powi(2) / ((k - 1) * (k - 1)) as f64;
    let n = truth.len() as f64;
    let obs: f64 = truth.iter().zip(pred).map(|(&t, &p)| w(t, p)).sum();
    let mut exp = 0.0;
    for &t in truth {
        for &p in pred {
            exp += w(t, p);
        }
    }
    1.0 - n * obs / exp
}

/// Per-class IoU from explicit TP / FP / FN counts over cells.
pub fn brute_iou(truth: &[u8], pred: &[u8], k: usize) -> (Vec<Option<f64>>, f64) {
    let mut per = Vec::new();
    for c in 0..k as u8 {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        per.push((tp + fp + fn_ > 0).then(|| tp as f64 / (tp + fp + fn_) as f64));
    }
    let d: Vec<f64> = per.iter().flatten().copied().collect();
    let miou = d.iter().sum::<f64>() / d.len() as f64;
    (per, miou)
}

pub fn brute_maecu(truth: &[u8], pred: &[u8], mask: &[bool]) -> f64 {
    let mut s = 0i64;
    let mut n = 0i64;
    for i in 0..truth.len() {
        if mask[i] {
            s += (truth[i] as i64 - pred[i] as i64).abs();
            n += 1;
        }
    }
    s as f64 / n as f64
}

/// Moran's I by a double loop over every ordered pair of valid cells.
pub fn brute_morans(values: &[f64], h: usize, w: usize, mask: &[bool]) -> f64 {
    let valid: Vec<usize> = (0..h * w).filter(|&i| mask[i] && !values[i].is_nan()).collect();
    let n = valid.len() as f64;
    let mean = valid.iter().map(|&i| values[i]).sum::<f64>() / n;
    let (mut num, mut wsum) = (0.0, 0.0);
    for &i in &valid {
        for &j in &valid {
            let (ri, ci, rj, cj) = ((i / w) as i64, (i % w) as i64, (j / w) as i64, (j % w) as i64);
            if (ri - rj).abs() + (ci - cj).abs() == 1 {
                num += (values[i] - mean) * (values[j] - mean);
                wsum += 1.0;
            }
        }
    }
    let den: f64 = valid.iter().map(|&i| (values[i] - mean).powi(2)).sum();
    n / wsum * num / den
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

/// `x W + b` for a single row with `W` stored `[in, out]` row-major.
pub fn affine(x: &[f64], store: &ParameterStore, prefix: &str) -> Vec<f64> {
    let w = store.value(&format!("{prefix}.w")).unwrap();
    let b = store.value(&format!("{prefix}.b")).unwrap();
    let (fin, fout) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), fin);
    (0..fout).map(|o| b.data()[o] + (0..fin).map(|i| x[i] * w.data()[i * fout + o]).sum::<f64>()).collect()
}

pub fn layer_norm(x: &[f64], store: &ParameterStore, prefix: &str) -> Vec<f64> {
    let g = store.value(&format!("{prefix}.gamma")).unwrap().data();
    let b = store.value(&format!("{prefix}.beta")).unwrap().data();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().enumerate().map(|(i, v)| (v - mean) / (var + NORM_EPS).sqrt() * g[i] + b[i]).collect()
}

pub fn group_norm(x: &[f64], groups: usize, store: &ParameterStore, prefix: &str) -> Vec<f64> {
    let g = store.value(&format!("{prefix}.gamma")).unwrap().data();
    let b = store.value(&format!("{prefix}.beta")).unwrap().data();
    let size = x.len() / groups;
    let mut out = vec![0.0; x.len()];
    for gi in 0..groups {
        let s = &x[gi * size..(gi + 1) * size];
        let mean = s.iter().sum::<f64>() / size as f64;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / size as f64;
        for j in 0..size {
            let c = gi * size + j;
            out[c] = (x[c] - mean) / (var + NORM_EPS).sqrt() * g[c] + b[c];
        }
    }
    out
}

pub fn random_tile(rng: &mut SplitMix64, n: usize) -> PointCloudTile {
    let xyz = (0..n).map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(0.0, 1.0)]).collect();
    let attrs = (0..n).map(|_| [rng.normal(), rng.normal(), rng.normal(), rng.normal()]).collect();
    let labels = (0..n).map(|_| rng.below(5) as u8).collect();
    let mut t = PointCloudTile::new(xyz, attrs, labels).unwrap();
    t.coords_normalized = true;
    t.attrs_standardized = true;
    t
}

pub fn tiny_model(kind: ModelKind, head: Head, grid: usize) -> ModelConfig {
    ModelConfig {
        kind,
        head,
        encoder: EncoderConfig::with_base(4),
        decoder: DecoderConfig { d: 8, k: 4, groups: 2, ..DecoderConfig::default() },
        grid: QueryGrid::square(grid),
    }
}

/// `n` tiles of raw (unnormalised) random points with smooth targets.
pub fn random_dataset(seed: u64, n: usize, points: usize, cells: usize) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let mut tiles = Vec::new();
    let mut rasters = Vec::new();
    for i in 0..n {
        let xyz = (0..points).map(|_| [rng.uniform(0.0, 6.4), rng.uniform(0.0, 6.4), 240.0 + rng.uniform(0.0, 10.0)]).collect();
        let attrs = (0..points).map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64(), rng.next_f64()]).collect();
        let labels = (0..points).map(|_| rng.below(5) as u8).collect();
        let mut t = PointCloudTile::new(xyz, attrs, labels).unwrap();
        t.origin = [i as f64 * 6.4, 0.0];
        t.extent = [6.4, 6.4];
        tiles.push(t);
        let vals = (0..cells * cells).map(|c| ((c % cells) as f64 * 0.3 + i as f64).sin() * 2.0).collect();
        rasters.push(ThawRaster::new(cells, cells, vals).unwrap());
    }
    let split: Split = strata::dataio::split_tiles(n);
    let tr: Vec<&PointCloudTile> = split.train.iter().map(|&i| &tiles[i]).collect();
    let rr: Vec<&ThawRaster> = split.train.iter().map(|&i| &rasters[i]).collect();
    let stats = NormStats::compute(&tr, &rr, WeightScheme::InverseFrequency).unwrap();
    Dataset::new(tiles, rasters, stats, split).unwrap()
}

/// Identity-like statistics: z in [0, 1], standard attributes, targets
/// centred at -1 cm with a 2 cm spread.
pub fn test_stats() -> NormStats {
    NormStats {
        z_min: 0.0,
        z_max: 1.0,
        attr_mean: [0.0; 4],
        attr_std: [1.0; 4],
        target_mean: -1.0,
        target_std: 2.0,
        clip_low: -20.0,
        clip_high: 20.0,
        class_weights: [1.0, 1.53, 1.56, 2.91, 2.19, 1.55, 3.51],
    }
}
