//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to run the vector-Jacobian product later. Nodes only ever reference
//! earlier nodes, so walking the tape backwards is a valid topological order.

use std::sync::Arc;

use super::array::DenseArray;
use super::store::ParameterStore;
use crate::error::{Error, Result};

/// Normalisation epsilon shared by layer norm and group norm.
pub const NORM_EPS: f64 = 1e-5;

/// `sqrt(2 / pi)` for the tanh form of GELU.
pub const GELU_C: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh form of GELU.
pub const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation:
/// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(GELU_C * (x + GELU_A * x * x * x)))
}

/// `tanh` through one `exp` of a non-positive argument.
fn tanh(u: f64) -> f64 {
    let e = (-2.0 * u.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(u)
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse row combination: output row `r` is `sum_e weight[e] * x[index[e]]`
/// over the entries of row `r`. Rows with no entries are zero.
///
/// Covers gathering, weighted gathering, segment means and zero-padded
/// im2col layouts with a single backward rule.
#[derive(Debug, Clone, Default)]
pub struct GatherPlan {
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl GatherPlan {
    pub fn new() -> Self {
        Self { offsets: vec![0], index: Vec::new(), weight: Vec::new() }
    }

    pub fn with_capacity(rows: usize, entries: usize) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        offsets.push(0);
        Self { offsets, index: Vec::with_capacity(entries), weight: Vec::with_capacity(entries) }
    }

    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) {
        for (i, w) in entries {
            self.index.push(i);
            self.weight.push(w);
        }
        self.offsets.push(self.index.len());
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        self.index[a..b].iter().copied().zip(self.weight[a..b].iter().copied())
    }

    fn max_index(&self) -> Option<usize> {
        self.index.iter().copied().max()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Scale(Var, f64),
    Gelu { x: Var, slope: Vec<f64> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gather { x: Var, plan: Arc<GatherPlan> },
    Reshape(Var),
    Concat(Vec<Var>),
    Mse { pred: Var, diff: Vec<f64>, count: usize },
    WeightedCe { logits: Var, probs: Vec<f64>, labels: Vec<usize>, weights: Vec<f64>, mask: Vec<bool>, count: usize },
}

#[derive(Debug)]
struct Node {
    value: DenseArray,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. See the module docs.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseArray, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf | Op::Param(_) => true,
            Op::Linear { x, w, b } => self.needs(*x) || self.needs(*w) || b.is_some_and(|b| self.needs(b)),
            Op::Add(a, b) => self.needs(*a) || self.needs(*b),
            Op::Scale(x, _) | Op::Gelu { x, .. } | Op::Gather { x, .. } | Op::Reshape(x) => self.needs(*x),
            Op::LayerNorm { x, gamma, beta, .. } | Op::GroupNorm { x, gamma, beta, .. } => {
                self.needs(*x) || self.needs(*gamma) || self.needs(*beta)
            }
            Op::Concat(parts) => parts.iter().any(|p| self.needs(*p)),
            Op::Mse { pred, .. } => self.needs(*pred),
            Op::WeightedCe { logits, .. } => self.needs(*logits),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf)
    }

    /// An input that is never differentiated; [`Gradients::wrt`] returns
    /// `None` for it and everything computed only from constants.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Copy a named parameter onto the tape. Its gradient can later be
    /// accumulated back into the store with [`Gradients::accumulate_into`].
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        let value = store
            .value(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?
            .clone();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    /// `x W + b` over rows of `x` (last axis = features). Leading axes of
    /// `x` are preserved, so this is also a 1x1 convolution on `[H, W, C]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x);
        let ws = self.value(w);
        if ws.shape().len() != 2 || ws.shape()[0] != xs.cols() {
            return Err(Error::Dimension(format!(
                "linear: input {:?} vs weight {:?}",
                xs.shape(),
                ws.shape()
            )));
        }
        let (n_in, n_out) = (ws.shape()[0], ws.shape()[1]);
        if let Some(b) = b {
            if self.value(b).len() != n_out {
                return Err(Error::Dimension(format!(
                    "linear: bias {:?} vs output width {n_out}",
                    self.value(b).shape()
                )));
            }
        }
        let rows = xs.rows();
        let mut out = vec![0.0; rows * n_out];
        let wd = ws.data();
        let xd = xs.data();
        for r in 0..rows {
            let orow = &mut out[r * n_out..(r + 1) * n_out];
            if let Some(b) = b {
                orow.copy_from_slice(self.nodes[b.0].value.data());
            }
            let xrow = &xd[r * n_in..(r + 1) * n_in];
            for (i, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[i * n_out..(i + 1) * n_out];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = n_out;
        let value = DenseArray::new(shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension(format!("add: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = DenseArray::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * factor).collect();
        let value = DenseArray::new(xv.shape().to_vec(), data).unwrap();
        self.push(value, Op::Scale(x, factor))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.len();
        let (mut data, mut slope) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for &v in xv.data() {
            let t = tanh(GELU_C * (v + GELU_A * v * v * v));
            data.push(0.5 * v * (1.0 + t));
            slope.push(0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v));
        }
        let value = DenseArray::new(xv.shape().to_vec(), data).unwrap();
        self.push(value, Op::Gelu { x, slope })
    }

    /// Normalise each row over the last axis, then apply `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let c = self.value(x).cols();
        self.check_affine("layer_norm", c, gamma, beta)?;
        let (value, xhat, inv_std) = self.normalize_groups(x, 1, gamma, beta);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Group normalisation: at each spatial location (row), channels are
    /// split into `groups` contiguous groups and each group is normalised
    /// independently before the per-channel affine map.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if groups == 0 || c % groups != 0 {
            return Err(Error::Config(format!("group_norm: {groups} groups do not divide {c} channels")));
        }
        self.check_affine("group_norm", c, gamma, beta)?;
        let (value, xhat, inv_std) = self.normalize_groups(x, groups, gamma, beta);
        Ok(self.push(value, Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std }))
    }

    fn check_affine(&self, what: &str, c: usize, gamma: Var, beta: Var) -> Result<()> {
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::Dimension(format!(
                "{what}: affine params {:?}/{:?} vs {c} channels",
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        Ok(())
    }

    fn normalize_groups(&self, x: Var, groups: usize, gamma: Var, beta: Var) -> (DenseArray, Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        let gs = c / groups;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(rows * groups);
        for r in 0..rows {
            for grp in 0..groups {
                let lo = r * c + grp * gs;
                let seg = &xv.data()[lo..lo + gs];
                let mean = seg.iter().sum::<f64>() / gs as f64;
                let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gs as f64;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                inv_std.push(is);
                for (j, &v) in seg.iter().enumerate() {
                    let ch = grp * gs + j;
                    let h = (v - mean) * is;
                    xhat[lo + j] = h;
                    out[lo + j] = g[ch] * h + b[ch];
                }
            }
        }
        (DenseArray::new(xv.shape().to_vec(), out).unwrap(), xhat, inv_std)
    }

    /// Apply a [`GatherPlan`] to the rows of `x`, producing `[plan.rows(), cols]`.
    pub fn gather(&mut self, x: Var, plan: Arc<GatherPlan>) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if let Some(m) = plan.max_index() {
            if m >= xv.rows() {
                return Err(Error::Dimension(format!("gather: index {m} out of {} rows", xv.rows())));
            }
        }
        if plan.rows() == 0 {
            return Err(Error::Dimension("gather: empty plan".into()));
        }
        let mut out = vec![0.0; plan.rows() * c];
        for r in 0..plan.rows() {
            let orow = &mut out[r * c..(r + 1) * c];
            for (i, w) in plan.row(r) {
                for (o, &v) in orow.iter_mut().zip(xv.row(i)) {
                    *o += w * v;
                }
            }
        }
        let value = DenseArray::new(vec![plan.rows(), c], out)?;
        Ok(self.push(value, Op::Gather { x, plan }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Concatenate along the last axis. All inputs must share row structure.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Dimension("concat: no inputs".into()))?;
        let lead = self.value(*first).shape()[..self.value(*first).shape().len() - 1].to_vec();
        for p in parts {
            let s = self.value(*p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::Dimension(format!("concat: {:?} vs leading {lead:?}", s)));
            }
        }
        let rows = self.value(*first).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = DenseArray::new(shape, out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Mean squared error over rows where `mask` is set. `pred` must have
    /// one value per mask entry.
    pub fn mse_loss(&mut self, pred: Var, target: &[f64], mask: &[bool]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.len() != mask.len() {
            return Err(Error::Dimension(format!(
                "mse: pred {} / target {} / mask {}",
                pv.len(),
                target.len(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Degenerate("mse: empty mask".into()));
        }
        let diff: Vec<f64> = pv
            .data()
            .iter()
            .zip(target)
            .zip(mask)
            .map(|((p, t), &m)| if m { p - t } else { 0.0 })
            .collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count as f64;
        Ok(self.push(DenseArray::scalar(loss), Op::Mse { pred, diff, count }))
    }

    /// Class-weighted cross entropy with a stable log-softmax. `logits` has
    /// `C` columns; the loss is `mean over valid rows of weights[y] * -log p_y`.
    pub fn weighted_ce_loss(&mut self, logits: Var, labels: &[usize], weights: &[f64], mask: &[bool]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, c) = (lv.rows(), lv.cols());
        if labels.len() != rows || mask.len() != rows || weights.len() != c {
            return Err(Error::Dimension(format!(
                "ce: logits {:?}, labels {}, mask {}, weights {}",
                lv.shape(),
                labels.len(),
                mask.len(),
                weights.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Degenerate("ce: empty mask".into()));
        }
        let mut probs = vec![0.0; rows * c];
        let mut total = 0.0;
        for r in 0..rows {
            let row = lv.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for (j, &v) in row.iter().enumerate() {
                probs[r * c + j] = (v - lse).exp();
            }
            if mask[r] {
                let y = labels[r];
                if y >= c {
                    return Err(Error::Data(format!("ce: label {y} outside {c} classes")));
                }
                total += weights[y] * (lse - row[y]);
            }
        }
        let loss = total / count as f64;
        let op = Op::WeightedCe {
            logits,
            probs,
            labels: labels.to_vec(),
            weights: weights.to_vec(),
            mask: mask.to_vec(),
            count,
        };
        Ok(self.push(DenseArray::scalar(loss), op))
    }

    /// Run the reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar, got {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<DenseArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(DenseArray::scalar(1.0));
        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].needs_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Param(name) => Some((name.clone(), i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, idx: usize, g: &DenseArray, grads: &mut [Option<DenseArray>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n_in, n_out) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                let gd = g.data();
                let want_dx = self.needs(*x);
                let mut dx = if want_dx { vec![0.0; xv.len()] } else { Vec::new() };
                let mut dw = vec![0.0; wv.len()];
                for r in 0..rows {
                    let grow = &gd[r * n_out..(r + 1) * n_out];
                    let xrow = xv.row(r);
                    for i in 0..n_in {
                        if want_dx {
                            let wrow = &wv.data()[i * n_out..(i + 1) * n_out];
                            dx[r * n_in + i] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        }
                        let xv_i = xrow[i];
                        if xv_i != 0.0 {
                            let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
                            for (d, &gv) in dwrow.iter_mut().zip(grow) {
                                *d += xv_i * gv;
                            }
                        }
                    }
                }
                if want_dx {
                    accumulate(grads, *x, DenseArray::new(xv.shape().to_vec(), dx).unwrap());
                }
                accumulate(grads, *w, DenseArray::new(wv.shape().to_vec(), dw).unwrap());
                if let Some(b) = b {
                    let mut db = vec![0.0; n_out];
                    for r in 0..rows {
                        for (d, &gv) in db.iter_mut().zip(&gd[r * n_out..(r + 1) * n_out]) {
                            *d += gv;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    accumulate(grads, *b, DenseArray::new(shape, db).unwrap());
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Scale(x, f) => {
                let d = g.data().iter().map(|v| v * f).collect();
                accumulate(grads, *x, DenseArray::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Gelu { x, slope } => {
                let d = slope.iter().zip(g.data()).map(|(&s, &gi)| gi * s).collect();
                accumulate(grads, *x, DenseArray::new(self.value(*x).shape().to_vec(), d).unwrap());
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                self.norm_backward(g, *x, *gamma, *beta, 1, xhat, inv_std, grads);
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std } => {
                self.norm_backward(g, *x, *gamma, *beta, *groups, xhat, inv_std, grads);
            }
            Op::Gather { x, plan } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                for r in 0..plan.rows() {
                    let grow = &g.data()[r * c..(r + 1) * c];
                    for (i, w) in plan.row(r) {
                        for (d, &gv) in dx[i * c..(i + 1) * c].iter_mut().zip(grow) {
                            *d += w * gv;
                        }
                    }
                }
                accumulate(grads, *x, DenseArray::new(xv.shape().to_vec(), dx).unwrap());
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, g.clone().reshape(&shape).unwrap());
            }
            Op::Concat(parts) => {
                let total = g.cols();
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let c = pv.cols();
                    let mut d = Vec::with_capacity(pv.len());
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    accumulate(grads, *p, DenseArray::new(pv.shape().to_vec(), d).unwrap());
                    offset += c;
                }
            }
            Op::Mse { pred, diff, count } => {
                let s = g.data()[0] * 2.0 / *count as f64;
                let d = diff.iter().map(|v| v * s).collect();
                let shape = self.value(*pred).shape().to_vec();
                accumulate(grads, *pred, DenseArray::new(shape, d).unwrap());
            }
            Op::WeightedCe { logits, probs, labels, weights, mask, count } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let s = g.data()[0] / *count as f64;
                let mut d = vec![0.0; lv.len()];
                for r in 0..lv.rows() {
                    if !mask[r] {
                        continue;
                    }
                    let y = labels[r];
                    let f = s * weights[y];
                    for j in 0..c {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        d[r * c + j] = f * (probs[r * c + j] - onehot);
                    }
                }
                accumulate(grads, *logits, DenseArray::new(lv.shape().to_vec(), d).unwrap());
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn norm_backward(
        &self,
        g: &DenseArray,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        xhat: &[f64],
        inv_std: &[f64],
        grads: &mut [Option<DenseArray>],
    ) {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        let gs = c / groups;
        let gam = self.value(gamma).data();
        let mut dx = vec![0.0; xv.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let gd = g.data();
        let mut dxhat = vec![0.0; gs];
        for r in 0..rows {
            for grp in 0..groups {
                let lo = r * c + grp * gs;
                let mut sum_d = 0.0;
                let mut sum_dh = 0.0;
                for j in 0..gs {
                    let ch = grp * gs + j;
                    let gv = gd[lo + j];
                    dgamma[ch] += gv * xhat[lo + j];
                    dbeta[ch] += gv;
                    dxhat[j] = gv * gam[ch];
                    sum_d += dxhat[j];
                    sum_dh += dxhat[j] * xhat[lo + j];
                }
                let is = inv_std[r * groups + grp];
                let n = gs as f64;
                for j in 0..gs {
                    dx[lo + j] = is / n * (n * dxhat[j] - sum_d - xhat[lo + j] * sum_dh);
                }
            }
        }
        accumulate(grads, x, DenseArray::new(xv.shape().to_vec(), dx).unwrap());
        let gshape = self.value(gamma).shape().to_vec();
        let bshape = self.value(beta).shape().to_vec();
        accumulate(grads, gamma, DenseArray::new(gshape, dgamma).unwrap());
        accumulate(grads, beta, DenseArray::new(bshape, dbeta).unwrap());
    }
}

fn accumulate(grads: &mut [Option<DenseArray>], v: Var, contrib: DenseArray) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&contrib),
        slot @ None => *slot = Some(contrib),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseArray>>,
    params: Vec<(String, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Option<&DenseArray> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Add `scale * grad` into the store's gradient buffers, in tape order.
    pub fn accumulate_into(&self, store: &mut ParameterStore, scale: f64) -> Result<()> {
        for (name, idx) in &self.params {
            if let Some(g) = &self.grads[*idx] {
                store.accumulate_grad(name, g, scale)?;
            }
        }
        Ok(())
    }

    /// Parameter name / gradient pairs in tape order.
    pub fn params(&self) -> impl Iterator<Item = (&str, Option<&DenseArray>)> {
        self.params.iter().map(|(n, i)| (n.as_str(), self.grads[*i].as_ref()))
    }
}
