//! Evaluation metrics over rasters with void cells.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `K x K` counts, rows = truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        assert!(k > 0);
        Self { k, counts: vec![0; k * k] }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if k == 0 || counts.len() != k * k {
            return Err(Error::Dimension(format!("{} counts for a {k}x{k} matrix", counts.len())));
        }
        Ok(Self { k, counts })
    }

    /// Count `(truth, pred)` pairs where `mask` is set.
    pub fn from_labels(k: usize, truth: &[u8], pred: &[u8], mask: &[bool]) -> Result<Self> {
        if truth.len() != pred.len() || truth.len() != mask.len() {
            return Err(Error::Dimension(format!("{} truth, {} pred, {} mask", truth.len(), pred.len(), mask.len())));
        }
        let mut cm = Self::new(k);
        for ((&t, &p), &m) in truth.iter().zip(pred).zip(mask) {
            if m {
                cm.add(t as usize, p as usize)?;
            }
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::Data(format!("class pair ({truth}, {pred}) outside {} classes", self.k)));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Dimension("confusion matrices of different size".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.k).map(|i| (0..self.k).map(|j| self.get(i, j)).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k).map(|j| (0..self.k).map(|i| self.get(i, j)).sum()).collect()
    }
}

/// Prediction and truth over the same cells, with the cells to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterPair {
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
    pub mask: Vec<bool>,
}

impl RasterPair {
    /// Cells are valid when `mask` is set and both values are non-NaN.
    pub fn new(pred: Vec<f64>, truth: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if pred.len() != truth.len() || pred.len() != mask.len() {
            return Err(Error::Dimension(format!("{} pred, {} truth, {} mask", pred.len(), truth.len(), mask.len())));
        }
        let mask = mask.iter().zip(pred.iter().zip(&truth)).map(|(&m, (p, t))| m && !p.is_nan() && !t.is_nan()).collect();
        Ok(Self { pred, truth, mask })
    }

    /// Valid wherever the truth is not void.
    pub fn from_truth_voids(pred: Vec<f64>, truth: Vec<f64>) -> Result<Self> {
        let mask = vec![true; truth.len()];
        Self::new(pred, truth, mask)
    }

    pub fn valid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.mask.iter().zip(self.pred.iter().zip(&self.truth)).filter(|(m, _)| **m).map(|(_, (&p, &t))| (p, t))
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
}

pub fn regression_metrics(pair: &RasterPair) -> Result<RegressionMetrics> {
    let n = pair.valid_count();
    if n < 2 {
        return Err(Error::Undefined(format!("regression metrics need at least 2 valid cells, got {n}")));
    }
    let mean = pair.valid().map(|(_, t)| t).sum::<f64>() / n as f64;
    let (mut se, mut ae, mut tot) = (0.0, 0.0, 0.0);
    for (p, t) in pair.valid() {
        se += (p - t) * (p - t);
        ae += (p - t).abs();
        tot += (t - mean) * (t - mean);
    }
    if tot == 0.0 {
        return Err(Error::Undefined("R^2 undefined: truth has zero variance".into()));
    }
    Ok(RegressionMetrics { rmse: (se / n as f64).sqrt(), mae: ae / n as f64, r2: 1.0 - se / tot })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouMetrics {
    /// `None` for classes absent from both truth and prediction.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

pub fn iou_metrics(cm: &ConfusionMatrix) -> Result<IouMetrics> {
    let (rows, cols) = (cm.row_sums(), cm.col_sums());
    let per_class: Vec<Option<f64>> = (0..cm.k())
        .map(|c| {
            let tp = cm.get(c, c);
            let union = rows[c] + cols[c] - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Undefined("mIoU undefined: no class present".into()));
    }
    Ok(IouMetrics { miou: defined.iter().sum::<f64>() / defined.len() as f64, per_class })
}

/// Quadratic weighted kappa.
pub fn qwk(cm: &ConfusionMatrix) -> Result<f64> {
    let k = cm.k();
    let total = cm.total();
    if total == 0 {
        return Err(Error::Undefined("QWK undefined: empty confusion matrix".into()));
    }
    if k == 1 {
        return Err(Error::Undefined("QWK undefined for a single class".into()));
    }
    let (rows, cols) = (cm.row_sums(), cm.col_sums());
    let denom_k = ((k - 1) * (k - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64).powi(2)) / denom_k;
            num += w * cm.get(i, j) as f64;
            den += w * rows[i] as f64 * cols[j] as f64 / total as f64;
        }
    }
    if den == 0.0 {
        return Err(Error::Undefined("QWK undefined: expected disagreement is zero".into()));
    }
    Ok(1.0 - num / den)
}

/// Mean absolute class-index difference over masked cells.
pub fn maecu(pred: &[u8], truth: &[u8], mask: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(Error::Dimension(format!("{} pred, {} truth, {} mask", pred.len(), truth.len(), mask.len())));
    }
    let (mut sum, mut n) = (0u64, 0u64);
    for ((&p, &t), &m) in pred.iter().zip(truth).zip(mask) {
        if m {
            sum += (p as i64 - t as i64).unsigned_abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Undefined("MAECU undefined: no valid cells".into()));
    }
    Ok(sum as f64 / n as f64)
}

/// Moran's I of an `h x w` row-major raster with binary rook weights. Cells
/// that are masked out or NaN take no part, neither as values nor neighbours.
pub fn morans_i(values: &[f64], h: usize, w: usize, mask: &[bool]) -> Result<f64> {
    if values.len() != h * w || mask.len() != h * w {
        return Err(Error::Dimension(format!("{} values / {} mask for {h}x{w}", values.len(), mask.len())));
    }
    let ok = |i: usize| mask[i] && !values[i].is_nan();
    let n = (0..h * w).filter(|&i| ok(i)).count();
    if n < 2 {
        return Err(Error::Undefined("Moran's I needs at least 2 valid cells".into()));
    }
    let mean = (0..h * w).filter(|&i| ok(i)).map(|i| values[i]).sum::<f64>() / n as f64;
    let var: f64 = (0..h * w).filter(|&i| ok(i)).map(|i| (values[i] - mean).powi(2)).sum();
    if var == 0.0 {
        return Err(Error::Undefined("Moran's I undefined: zero variance".into()));
    }
    let (mut cross, mut wsum) = (0.0, 0.0);
    // Each undirected rook edge visited once and counted for both directions.
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !ok(i) {
                continue;
            }
            for j in [(c + 1 < w).then(|| i + 1), (r + 1 < h).then(|| i + w)].into_iter().flatten() {
                if ok(j) {
                    cross += 2.0 * (values[i] - mean) * (values[j] - mean);
                    wsum += 2.0;
                }
            }
        }
    }
    if wsum == 0.0 {
        return Err(Error::Undefined("Moran's I undefined: no adjacent valid cells".into()));
    }
    Ok(n as f64 / wsum * cross / var)
}

/// Flat `key=value` report with optional `#` comment lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub notes: Vec<String>,
    pub values: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn push(&mut self, key: impl Into<String>, v: f64) {
        self.values.push((key.into(), v));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for n in &self.notes {
            let _ = writeln!(s, "# {n}");
        }
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(n) = line.strip_prefix('#') {
                r.notes.push(n.trim().to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Data(format!("bad report line `{line}`")))?;
            let v: f64 = v.parse().map_err(|_| Error::Data(format!("bad value in `{line}`")))?;
            r.values.push((k.to_string(), v));
        }
        Ok(r)
    }
}
