//! Straight-line model reference: nested loops, no index structures, no tape.

use std::collections::HashMap;

use strata::dataio::PointCloudTile;
use strata::geometry::SamplingMode;
use strata::model::{ModelConfig, ModelKind};
use strata::tensor::ParameterStore;

use super::{affine, brute_knn, gelu, group_norm, layer_norm};

pub struct RefStage {
    pub coords: Vec<[f64; 3]>,
    pub feats: Vec<Vec<f64>>,
}

fn dense_gelu(x: &[f64], store: &ParameterStore, prefix: &str) -> Vec<f64> {
    affine(x, store, prefix).into_iter().map(gelu).collect()
}

pub fn encoder(tile: &PointCloudTile, cfg: &ModelConfig, store: &ParameterStore) -> Vec<RefStage> {
    let mut coords: Vec<[f64; 3]> = tile.xyz.clone();
    let mut counts: Vec<f64> = vec![1.0; coords.len()];
    let mut x: Vec<Vec<f64>> = (0..tile.len()).map(|i| tile.input_row(i).to_vec()).collect();
    let mut out = Vec::new();
    for s in 0..4 {
        if s > 0 {
            let size = cfg.encoder.voxel_sizes[s - 1];
            let mut groups: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
            for (i, p) in coords.iter().enumerate() {
                let key = (((p[0] + 1.0) / size).floor() as i64, ((p[1] + 1.0) / size).floor() as i64, (p[2] / size).floor() as i64);
                groups.entry(key).or_default().push(i);
            }
            let mut keys: Vec<_> = groups.keys().copied().collect();
            keys.sort();
            let (mut nc, mut nn, mut nx) = (Vec::new(), Vec::new(), Vec::new());
            for key in keys {
                let members = &groups[&key];
                let total: f64 = members.iter().map(|&i| counts[i]).sum();
                let mut c = [0.0; 3];
                let mut f = vec![0.0; x[0].len()];
                for &i in members {
                    for a in 0..3 {
                        c[a] += counts[i] * coords[i][a];
                    }
                    for (j, v) in f.iter_mut().enumerate() {
                        *v += counts[i] / total * x[i][j];
                    }
                }
                nc.push(c.map(|v| v / total));
                nn.push(total);
                nx.push(f);
            }
            coords = nc;
            counts = nn;
            x = nx;
        }
        x = x.iter().map(|r| dense_gelu(r, store, &format!("encoder.stage{}", s + 1))).collect();
        out.push(RefStage { coords: coords.clone(), feats: x.clone() });
    }
    out
}

/// Greedy vertical farthest point sampling by direct search, then the
/// bottom-to-top order (cyclic repeats when there are too few candidates).
fn select(cands: &[(usize, f64)], k: usize, mode: SamplingMode) -> Vec<usize> {
    let by_z = |v: &mut Vec<(usize, f64)>| v.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    if cands.len() < k {
        let mut s = cands.to_vec();
        by_z(&mut s);
        return (0..k).map(|i| s[i % s.len()].0).collect();
    }
    let mut picked: Vec<(usize, f64)> = Vec::new();
    if mode == SamplingMode::ClosestK {
        picked = cands[..k].to_vec();
    } else {
        let mut rest = cands.to_vec();
        by_z(&mut rest);
        picked.push(rest.remove(0));
        while picked.len() < k {
            let score = |c: &(usize, f64)| picked.iter().map(|p| (p.1 - c.1).abs()).fold(f64::INFINITY, f64::min);
            let mut best = 0;
            for i in 1..rest.len() {
                let (a, b) = (score(&rest[i]), score(&rest[best]));
                if a > b || (a == b && rest[i].0 < rest[best].0) {
                    best = i;
                }
            }
            picked.push(rest.remove(best));
        }
    }
    by_z(&mut picked);
    picked.into_iter().map(|p| p.0).collect()
}

fn projected(stage: &RefStage, s: usize, cfg: &ModelConfig, store: &ParameterStore) -> Vec<Vec<f64>> {
    (0..stage.coords.len())
        .map(|i| {
            let mut f = affine(&stage.feats[i], store, &format!("decoder.stage{s}.phi"));
            if cfg.decoder.use_z_embedding {
                let h = dense_gelu(&[stage.coords[i][2]], store, "decoder.psi.l1");
                let psi = affine(&h, store, "decoder.psi.l2");
                f.iter_mut().zip(psi).for_each(|(a, b)| *a += b);
            }
            f
        })
        .collect()
}

/// One stage on the model grid, `H * W` rows of width `D`.
pub fn project(stage: &RefStage, s: usize, cfg: &ModelConfig, store: &ParameterStore) -> Vec<Vec<f64>> {
    let dc = &cfg.decoder;
    let ft = projected(stage, s, cfg, store);
    let xy: Vec<[f64; 2]> = stage.coords.iter().map(|p| [p[0], p[1]]).collect();
    let mut out = Vec::new();
    for r in 0..cfg.grid.h {
        for c in 0..cfg.grid.w {
            let q = [-1.0 + (2 * c + 1) as f64 / cfg.grid.w as f64, -1.0 + (2 * r + 1) as f64 / cfg.grid.h as f64];
            if cfg.kind == ModelKind::MeanPool {
                let members: Vec<usize> = (0..xy.len()).filter(|&i| cell(xy[i], cfg) == r * cfg.grid.w + c).collect();
                let mut g = vec![0.0; dc.d];
                for &i in &members {
                    g.iter_mut().zip(&ft[i]).for_each(|(a, b)| *a += b / members.len() as f64);
                }
                out.push(g);
                continue;
            }
            let pool = if dc.sampling == SamplingMode::Stratified { dc.k * dc.m_multiplier } else { dc.k };
            let near = brute_knn(&xy, q, pool);
            let cands: Vec<(usize, f64)> = near.iter().map(|&i| (i, stage.coords[i][2])).collect();
            let sel = select(&cands, dc.k, dc.sampling);
            if dc.mean_pool_profile {
                let mut g = vec![0.0; dc.d];
                for &i in &sel {
                    g.iter_mut().zip(&ft[i]).for_each(|(a, b)| *a += b / sel.len() as f64);
                }
                out.push(g);
                continue;
            }
            let mut v = Vec::with_capacity(dc.k * dc.d);
            for &i in &sel {
                let d = ((xy[i][0] - q[0]).powi(2) + (xy[i][1] - q[1]).powi(2)).sqrt();
                let w = (-dc.lambda * (d - dc.tau).max(0.0)).exp();
                v.extend(ft[i].iter().map(|f| w * f));
            }
            let p = format!("decoder.stage{s}.profile");
            let h = affine(&v, store, &format!("{p}.l1"));
            let h: Vec<f64> = layer_norm(&h, store, &format!("{p}.ln")).into_iter().map(gelu).collect();
            out.push(affine(&h, store, &format!("{p}.l2")));
        }
    }
    out
}

fn cell(p: [f64; 2], cfg: &ModelConfig) -> usize {
    let f = |v: f64, n: usize| (((v + 1.0) * 0.5 * n as f64).floor().max(0.0) as usize).min(n - 1);
    f(p[1], cfg.grid.h) * cfg.grid.w + f(p[0], cfg.grid.w)
}

pub fn fuse(maps: &[Vec<Vec<f64>>], groups: usize, store: &ParameterStore) -> Vec<Vec<f64>> {
    (0..maps[0].len())
        .map(|j| {
            let x: Vec<f64> = maps.iter().flat_map(|m| m[j].iter().copied()).collect();
            let x = affine(&x, store, "fuse.c1");
            let x: Vec<f64> = group_norm(&x, groups, store, "fuse.gn1").into_iter().map(gelu).collect();
            let x = affine(&x, store, "fuse.c2");
            let x: Vec<f64> = group_norm(&x, groups, store, "fuse.gn2").into_iter().map(gelu).collect();
            affine(&x, store, "fuse.out")
        })
        .collect()
}

/// Six-channel class histogram of a normalised tile.
pub fn histogram(tile: &PointCloudTile, cfg: &ModelConfig) -> Vec<Vec<f64>> {
    let cells = cfg.grid.len();
    let mut out = vec![vec![0.0; 6]; cells];
    for j in 0..cells {
        let members: Vec<usize> = (0..tile.len()).filter(|&i| cell([tile.xyz[i][0], tile.xyz[i][1]], cfg) == j).collect();
        if members.is_empty() {
            continue;
        }
        for &i in &members {
            out[j][tile.labels[i] as usize] += 1.0 / members.len() as f64;
        }
        out[j][5] = (1.0 + members.len() as f64).ln();
    }
    out
}

/// Zero-padded 3x3 convolution with weights `[9 * Cin, Cout]`, tap-major.
pub fn conv3x3(x: &[Vec<f64>], h: usize, w: usize, store: &ParameterStore, prefix: &str) -> Vec<Vec<f64>> {
    let wt = store.value(&format!("{prefix}.w")).unwrap();
    let b = store.value(&format!("{prefix}.b")).unwrap().data();
    let (cin, cout) = (x[0].len(), wt.shape()[1]);
    let mut out = Vec::new();
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut y = b.to_vec();
            for tap in 0..9 {
                let (rr, cc) = (r + tap / 3 - 1, c + tap % 3 - 1);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let src = &x[rr as usize * w + cc as usize];
                for (i, &v) in src.iter().enumerate() {
                    for (o, yo) in y.iter_mut().enumerate() {
                        *yo += v * wt.data()[(tap as usize * cin + i) * cout + o];
                    }
                }
            }
            out.push(y);
        }
    }
    out
}

/// Model output `[H * W][C_out]` for a normalised tile.
pub fn forward(tile: &PointCloudTile, cfg: &ModelConfig, store: &ParameterStore) -> Vec<Vec<f64>> {
    let (h, w) = (cfg.grid.h, cfg.grid.w);
    if cfg.kind == ModelKind::Histogram {
        let x = histogram(tile, cfg);
        let x: Vec<Vec<f64>> = conv3x3(&x, h, w, store, "hist.c1").into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
        let x: Vec<Vec<f64>> = conv3x3(&x, h, w, store, "hist.c2").into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
        return conv3x3(&x, h, w, store, "hist.c3");
    }
    let stages = encoder(tile, cfg, store);
    let maps: Vec<Vec<Vec<f64>>> = cfg.decoder.stages.iter().map(|&s| project(&stages[s - 1], s, cfg, store)).collect();
    fuse(&maps, cfg.decoder.groups, store)
}
