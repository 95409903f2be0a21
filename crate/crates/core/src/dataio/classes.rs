//! Seven ordinal severity classes, from high heave (index 0, "C1") to high
//! thaw (index 6, "C7").

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 7;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "high_heave",
    "medium_high_heave",
    "medium_low_heave",
    "low_heave",
    "no_change",
    "low_thaw",
    "high_thaw",
];

/// Map an elevation change in centimetres to its class index.
///
/// C1 `> 1.6`, C2 `(1.0, 1.6]`, C3 `(0.5, 1.0]`, C4 `(0.2, 0.5]`,
/// C5 `[-0.2, 0.2]`, C6 `[-1.0, -0.2)`, C7 `< -1.0`.
pub fn discretize(v: f64) -> Result<u8> {
    if !v.is_finite() {
        return Err(Error::Data(format!("cannot discretize non-finite value {v}")));
    }
    Ok(if v > 1.6 {
        0
    } else if v > 1.0 {
        1
    } else if v > 0.5 {
        2
    } else if v > 0.2 {
        3
    } else if v >= -0.2 {
        4
    } else if v >= -1.0 {
        5
    } else {
        6
    })
}

/// Discretize a raster; void cells map to `None`.
pub fn discretize_raster(values: &[f64]) -> Result<Vec<Option<u8>>> {
    values.iter().map(|&v| if v.is_nan() { Ok(None) } else { discretize(v).map(Some) }).collect()
}

pub fn class_counts(classes: &[u8]) -> [u64; NUM_CLASSES] {
    let mut c = [0u64; NUM_CLASSES];
    for &k in classes {
        c[k as usize] += 1;
    }
    c
}

/// Class-weighting scheme for the cross-entropy loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    /// `max_count / count_c`.
    InverseFrequency,
    /// `(max_count / count_c)^2`.
    InverseSquare,
    Uniform,
}

impl WeightScheme {
    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::InverseFrequency => "inv_freq",
            WeightScheme::InverseSquare => "inv_square",
            WeightScheme::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inv_freq" => Ok(WeightScheme::InverseFrequency),
            "inv_square" => Ok(WeightScheme::InverseSquare),
            "uniform" => Ok(WeightScheme::Uniform),
            _ => Err(Error::Config(format!("unknown weight scheme `{s}`"))),
        }
    }
}

/// Per-class loss weights. Absent classes get the largest weight among the
/// present ones; if nothing is present all weights are one.
pub fn class_weights(counts: &[u64; NUM_CLASSES], scheme: WeightScheme) -> [f64; NUM_CLASSES] {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 || scheme == WeightScheme::Uniform {
        return [1.0; NUM_CLASSES];
    }
    let mut w = [0.0; NUM_CLASSES];
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            let r = max as f64 / n as f64;
            w[c] = match scheme {
                WeightScheme::InverseSquare => r * r,
                _ => r,
            };
        }
    }
    let top = w.iter().cloned().fold(0.0, f64::max);
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            w[c] = top;
        }
    }
    w
}
