//! XY neighbour search, vertical farthest point sampling and distance weights.
//!
//! Ties are always broken by the lower point id, which makes every result
//! independent of insertion order.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Exact XY k-nearest-neighbour index over a uniform bucket grid.
///
/// The grid covers `[-1, 1]^2` extended to the bounding box of the data, so
/// every point lies inside its bucket's rectangle and ring lower bounds hold.
#[derive(Debug, Clone)]
pub struct XYIndex {
    xy: Vec<[f64; 2]>,
    origin: [f64; 2],
    bucket: f64,
    nx: usize,
    ny: usize,
    /// CSR layout: bucket `b` holds `ids[starts[b]..starts[b + 1]]`, ascending.
    starts: Vec<usize>,
    ids: Vec<usize>,
}

impl XYIndex {
    pub fn build(xy: Vec<[f64; 2]>, bucket: f64) -> Result<Self> {
        if xy.is_empty() {
            return Err(Error::Degenerate("empty point set".into()));
        }
        if !(bucket > 0.0) || !bucket.is_finite() {
            return Err(Error::Config(format!("bucket size must be positive, got {bucket}")));
        }
        let (mut lo, mut hi) = ([-1.0f64, -1.0], [1.0f64, 1.0]);
        for p in &xy {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::Data("non-finite coordinate".into()));
            }
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let nx = (((hi[0] - lo[0]) / bucket).ceil() as usize).max(1);
        let ny = (((hi[1] - lo[1]) / bucket).ceil() as usize).max(1);
        let mut index = Self { xy, origin: lo, bucket, nx, ny, starts: Vec::new(), ids: Vec::new() };
        let mut counts = vec![0usize; nx * ny + 1];
        let cells: Vec<usize> = index.xy.iter().map(|p| index.cell_of(*p)).collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut ids = vec![0; index.xy.len()];
        for (id, &c) in cells.iter().enumerate() {
            ids[fill[c]] = id;
            fill[c] += 1;
        }
        index.starts = counts;
        index.ids = ids;
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xy.is_empty()
    }

    pub fn point(&self, id: usize) -> [f64; 2] {
        self.xy[id]
    }

    fn axis_cell(&self, v: f64, axis: usize) -> usize {
        let n = if axis == 0 { self.nx } else { self.ny };
        let c = ((v - self.origin[axis]) / self.bucket).floor();
        if c < 0.0 {
            0
        } else {
            (c as usize).min(n - 1)
        }
    }

    fn cell_of(&self, p: [f64; 2]) -> usize {
        self.axis_cell(p[1], 1) * self.nx + self.axis_cell(p[0], 0)
    }

    /// The `m` XY-nearest point ids to `q`, nearest first, ties by lower id.
    /// Returns all points when fewer than `m` exist.
    pub fn knn(&self, q: [f64; 2], m: usize) -> Vec<Candidate> {
        let m = m.min(self.xy.len());
        if m == 0 {
            return Vec::new();
        }
        let (cx, cy) = (self.axis_cell(q[0], 0) as isize, self.axis_cell(q[1], 1) as isize);
        let max_ring = self.nx.max(self.ny) as isize;
        let mut found: Vec<Candidate> = Vec::new();
        for ring in 0..=max_ring {
            for dy in -ring..=ring {
                let y = cy + dy;
                if y < 0 || y >= self.ny as isize {
                    continue;
                }
                let edge_row = dy.abs() == ring;
                let step = if edge_row || ring == 0 { 1 } else { (2 * ring) as usize };
                let mut dx = -ring;
                while dx <= ring {
                    let x = cx + dx;
                    if x >= 0 && x < self.nx as isize {
                        let b = y as usize * self.nx + x as usize;
                        for &id in &self.ids[self.starts[b]..self.starts[b + 1]] {
                            let p = self.xy[id];
                            let (ex, ey) = (p[0] - q[0], p[1] - q[1]);
                            found.push(Candidate { id, dist2: ex * ex + ey * ey });
                        }
                    }
                    dx += step as isize;
                }
            }
            if found.len() >= m {
                if found.len() > m {
                    found.select_nth_unstable_by(m - 1, Candidate::cmp_dist);
                    found.truncate(m);
                }
                let kth = found.iter().map(|c| c.dist2).fold(0.0, f64::max);
                // Anything outside rings 0..=ring is at least `ring * bucket` away.
                let bound = ring as f64 * self.bucket * (1.0 - 1e-9);
                if kth < bound * bound {
                    break;
                }
            }
        }
        found.sort_by(Candidate::cmp_dist);
        found.truncate(m);
        found
    }
}

/// A neighbour candidate with its squared XY distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub dist2: f64,
}

impl Candidate {
    pub fn dist(&self) -> f64 {
        self.dist2.sqrt()
    }

    pub fn cmp_dist(a: &Candidate, b: &Candidate) -> Ordering {
        a.dist2.partial_cmp(&b.dist2).unwrap_or(Ordering::Equal).then(a.id.cmp(&b.id))
    }
}

/// Convenience wrapper over [`XYIndex::knn`] returning ids only.
pub fn knn_xy(index: &XYIndex, q: [f64; 2], m: usize) -> Result<Vec<usize>> {
    if index.is_empty() {
        return Err(Error::Degenerate("empty point set".into()));
    }
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    Ok(index.knn(q, m).into_iter().map(|c| c.id).collect())
}

/// Farthest point sampling over z.
///
/// `candidates` are `(id, z)`. The seed is the minimum-z candidate; each
/// later pick maximises the minimum `|z - z_selected|`. Ties go to the lower
/// id. Returns positions into `candidates` in pick order. With fewer than `k`
/// candidates, all are selected and the z-sorted sequence is repeated
/// cyclically to length `k`.
pub fn fps_z(candidates: &[(usize, f64)], k: usize) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::Degenerate("fps_z: no candidates".into()));
    }
    if k == 0 {
        return Err(Error::Config("fps_z: k must be at least 1".into()));
    }
    let n = candidates.len();
    if n < k {
        let sorted = z_sorted_positions(candidates, 0..n);
        return Ok((0..k).map(|i| sorted[i % n]).collect());
    }
    let lower = |a: usize, b: usize| candidates[a].0 < candidates[b].0;
    let mut seed = 0;
    for i in 1..n {
        let (zi, zs) = (candidates[i].1, candidates[seed].1);
        if zi < zs || (zi == zs && lower(i, seed)) {
            seed = i;
        }
    }
    let mut picked = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut mind = vec![f64::INFINITY; n];
    let mut last = seed;
    picked.push(seed);
    taken[seed] = true;
    while picked.len() < k {
        let zl = candidates[last].1;
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = (candidates[i].1 - zl).abs();
            if d < mind[i] {
                mind[i] = d;
            }
            best = match best {
                None => Some(i),
                Some(b) if mind[i] > mind[b] || (mind[i] == mind[b] && lower(i, b)) => Some(i),
                keep => keep,
            };
        }
        let b = best.unwrap();
        taken[b] = true;
        picked.push(b);
        last = b;
    }
    Ok(picked)
}

/// Positions sorted by z ascending, ties by lower id.
fn z_sorted_positions(candidates: &[(usize, f64)], pos: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = pos.collect();
    v.sort_by(|&a, &b| {
        candidates[a].1.partial_cmp(&candidates[b].1).unwrap_or(Ordering::Equal).then(candidates[a].0.cmp(&candidates[b].0))
    });
    v
}

/// `exp(-lambda * max(0, d - tau))`: one inside the threshold, exponential falloff beyond.
pub fn xy_weight(d: f64, tau: f64, lambda: f64) -> f64 {
    (-lambda * (d - tau).max(0.0)).exp()
}

/// How the `k` profile points are chosen from the XY candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Farthest point sampling in z over `m_multiplier * k` candidates.
    Stratified,
    /// The `k` XY-nearest points, no vertical sampling.
    ClosestK,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::Stratified => "stratified",
            SamplingMode::ClosestK => "closest_k",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stratified" => Ok(SamplingMode::Stratified),
            "closest_k" => Ok(SamplingMode::ClosestK),
            _ => Err(Error::Config(format!("unknown sampling mode `{s}`"))),
        }
    }
}

/// Parameters of [`build_neighborhood`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborhoodSpec {
    pub k: usize,
    pub m_multiplier: usize,
    pub tau: f64,
    pub lambda: f64,
    pub mode: SamplingMode,
}

/// Profile points for one query: ids sorted by ascending z (ties by id),
/// with their XY distance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub candidates: Vec<usize>,
    pub selected: Vec<usize>,
    pub weights: Vec<f64>,
}

pub fn build_neighborhood(index: &XYIndex, z: &[f64], q: [f64; 2], spec: &NeighborhoodSpec) -> Result<Neighborhood> {
    if spec.k == 0 || spec.m_multiplier == 0 {
        return Err(Error::Config("k and m_multiplier must be at least 1".into()));
    }
    if index.is_empty() {
        return Err(Error::Degenerate("empty point set".into()));
    }
    let pool = match spec.mode {
        SamplingMode::Stratified => spec.k * spec.m_multiplier,
        SamplingMode::ClosestK => spec.k,
    };
    let cands = index.knn(q, pool);
    let pairs: Vec<(usize, f64)> = cands.iter().map(|c| (c.id, z[c.id])).collect();
    let picked = match spec.mode {
        SamplingMode::Stratified => fps_z(&pairs, spec.k)?,
        SamplingMode::ClosestK => {
            let n = pairs.len();
            if n >= spec.k {
                (0..spec.k).collect()
            } else {
                let sorted = z_sorted_positions(&pairs, 0..n);
                (0..spec.k).map(|i| sorted[i % n]).collect()
            }
        }
    };
    // Sort the profile bottom to top; padded repeats keep their cyclic order.
    let order = if picked.len() <= pairs.len() && is_unique(&picked) { z_sorted_positions(&pairs, picked.into_iter()) } else { picked };
    let selected: Vec<usize> = order.iter().map(|&p| pairs[p].0).collect();
    let weights = order.iter().map(|&p| xy_weight(cands[p].dist(), spec.tau, spec.lambda)).collect();
    Ok(Neighborhood { candidates: cands.iter().map(|c| c.id).collect(), selected, weights })
}

fn is_unique(v: &[usize]) -> bool {
    let mut s = v.to_vec();
    s.sort_unstable();
    s.windows(2).all(|w| w[0] != w[1])
}
