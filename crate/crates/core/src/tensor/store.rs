use std::collections::BTreeMap;

use super::array::DenseArray;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// One trainable array with its gradient buffer and AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: DenseArray,
    pub grad: DenseArray,
    pub(crate) m: DenseArray,
    pub(crate) v: DenseArray,
}

impl ParamEntry {
    fn new(value: DenseArray) -> Self {
        let z = DenseArray::zeros(value.shape());
        Self { grad: z.clone(), m: z.clone(), v: z, value }
    }
}

/// AdamW hyperparameters. Defaults: betas (0.9, 0.999), eps 1e-8, decay 0.01.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Named trainable arrays, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, ParamEntry>,
    step_count: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: DenseArray) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name.to_string(), ParamEntry::new(value));
        Ok(())
    }

    /// Weight `[fan_in, fan_out]` drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero bias.
    pub fn insert_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
        self.insert(&format!("{prefix}.w"), DenseArray::new(vec![fan_in, fan_out], w)?)?;
        self.insert(&format!("{prefix}.b"), DenseArray::zeros(&[fan_out]))
    }

    /// Unit scale, zero shift.
    pub fn insert_norm(&mut self, prefix: &str, channels: usize) -> Result<()> {
        self.insert(&format!("{prefix}.gamma"), DenseArray::filled(&[channels], 1.0))?;
        self.insert(&format!("{prefix}.beta"), DenseArray::zeros(&[channels]))
    }

    pub fn value(&self, name: &str) -> Option<&DenseArray> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn grad(&self, name: &str) -> Option<&DenseArray> {
        self.entries.get(name).map(|e| &e.grad)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn set_step_count(&mut self, n: u64) {
        self.step_count = n;
    }

    pub(crate) fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &DenseArray, scale: f64) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter `{name}`")))?;
        if e.grad.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "gradient for `{name}`: {:?} vs {:?}",
                g.shape(),
                e.grad.shape()
            )));
        }
        for (a, b) in e.grad.data_mut().iter_mut().zip(g.data()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// One decoupled-weight-decay Adam step, then zero all gradients.
    ///
    /// With `t = step_count + 1`:
    /// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`,
    /// `theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps) + lr * wd * theta`.
    pub fn adamw_step(&mut self, lr: f64, opt: &AdamW) {
        let t = (self.step_count + 1) as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for e in self.entries.values_mut() {
            let n = e.value.len();
            let (val, grad, m, v) = (e.value.data_mut(), e.grad.data_mut(), e.m.data_mut(), e.v.data_mut());
            for i in 0..n {
                let g = grad[i];
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let decay = lr * opt.weight_decay * val[i];
                val[i] = val[i] - decay - lr * mhat / (vhat.sqrt() + opt.eps);
                grad[i] = 0.0;
            }
        }
        self.step_count += 1;
    }

    /// Parameter values only, for audits and best-checkpoint snapshots.
    pub fn values(&self) -> BTreeMap<String, DenseArray> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect()
    }
}
