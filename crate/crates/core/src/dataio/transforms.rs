use std::cmp::Ordering;

use super::raster::ThawRaster;
use super::tile::PointCloudTile;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Largest admissible absolute change in a target raster, in centimetres.
pub const MAX_ABS_CHANGE_CM: f64 = 100.0;

/// Reject rasters with changes beyond one metre.
pub fn validate_target(r: &ThawRaster) -> Result<()> {
    if let Some(i) = r.values.iter().position(|v| !v.is_nan() && v.abs() > MAX_ABS_CHANGE_CM) {
        return Err(Error::Data(format!("cell {i} exceeds +/-1 m change ({} cm)", r.values[i])));
    }
    Ok(())
}

/// Reduce a tile to at most `max_n` points by 3-D farthest point sampling,
/// seeded at the point nearest the centroid. Ties go to the lower id. The
/// kept points are returned in ascending id order.
pub fn cap_points(tile: &PointCloudTile, max_n: usize) -> Result<PointCloudTile> {
    Ok(tile.select(&cap_indices(&tile.xyz, max_n)?))
}

pub fn cap_indices(xyz: &[[f64; 3]], max_n: usize) -> Result<Vec<usize>> {
    if max_n == 0 {
        return Err(Error::Config("point cap must be at least 1".into()));
    }
    let n = xyz.len();
    if n <= max_n {
        return Ok((0..n).collect());
    }
    let mut c = [0.0; 3];
    for p in xyz {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let c = c.map(|v| v / n as f64);
    let d2 = |p: &[f64; 3], q: &[f64; 3]| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
    let mut seed = 0;
    let mut best = f64::INFINITY;
    for (i, p) in xyz.iter().enumerate() {
        let d = d2(p, &c);
        if d < best {
            best = d;
            seed = i;
        }
    }
    let mut mind = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut picked = vec![seed];
    taken[seed] = true;
    let mut last = seed;
    while picked.len() < max_n {
        let mut arg = usize::MAX;
        let mut far = -1.0;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = d2(&xyz[i], &xyz[last]);
            if d < mind[i] {
                mind[i] = d;
            }
            if mind[i] > far {
                far = mind[i];
                arg = i;
            }
        }
        taken[arg] = true;
        picked.push(arg);
        last = arg;
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Rotate normalised XY by `quarter_turns * 90` degrees counter-clockwise.
pub fn rotate_tile(tile: &PointCloudTile, quarter_turns: u8) -> PointCloudTile {
    let mut out = tile.clone();
    for p in out.xyz.iter_mut() {
        for _ in 0..quarter_turns % 4 {
            let (x, y) = (p[0], p[1]);
            p[0] = -y;
            p[1] = x;
        }
    }
    out
}

/// Rotate a square raster consistently with [`rotate_tile`]: cell `(r, c)`
/// moves to `(c, n - 1 - r)` per quarter turn.
pub fn rotate_raster(r: &ThawRaster, quarter_turns: u8) -> Result<ThawRaster> {
    if r.h != r.w {
        return Err(Error::Dimension(format!("rotation needs a square raster, got {}x{}", r.h, r.w)));
    }
    let n = r.h;
    let mut cur = r.values.clone();
    for _ in 0..quarter_turns % 4 {
        let mut next = vec![0.0; n * n];
        for row in 0..n {
            for col in 0..n {
                next[col * n + (n - 1 - row)] = cur[row * n + col];
            }
        }
        cur = next;
    }
    Ok(ThawRaster { values: cur, ..r.clone() })
}

/// Gaussian jitter on x, y, z, clipped to three standard deviations.
pub fn jitter(tile: &PointCloudTile, sigma: f64, rng: &mut SplitMix64) -> PointCloudTile {
    let mut out = tile.clone();
    if sigma > 0.0 {
        for p in out.xyz.iter_mut() {
            for v in p.iter_mut() {
                *v += (rng.normal() * sigma).clamp(-3.0 * sigma, 3.0 * sigma);
            }
        }
    }
    out
}

/// Random quarter-turn rotation of tile and target together, then jitter
/// on the points only.
pub fn augment(tile: &PointCloudTile, target: &ThawRaster, rng: &mut SplitMix64, sigma: f64) -> Result<(PointCloudTile, ThawRaster, u8)> {
    let turns = rng.below(4) as u8;
    let t = rotate_tile(tile, turns);
    let r = rotate_raster(target, turns)?;
    Ok((jitter(&t, sigma, rng), r, turns))
}

/// Order tiles row-major by origin (south to north, then west to east).
pub fn row_major_order(origins: &[[f64; 2]]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..origins.len()).collect();
    idx.sort_by(|&a, &b| {
        let (oa, ob) = (origins[a], origins[b]);
        oa[1].partial_cmp(&ob[1]).unwrap_or(Ordering::Equal).then(oa[0].partial_cmp(&ob[0]).unwrap_or(Ordering::Equal))
    });
    idx
}

/// Train / eval partition of ordered tile positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Every fifth tile, starting with the first (positions 0, 5, 10, ...),
/// goes to evaluation.
pub fn split_tiles(n: usize) -> Split {
    let (eval, train) = (0..n).partition(|i| i % 5 == 0);
    Split { train, eval }
}
