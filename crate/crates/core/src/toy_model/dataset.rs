use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::vector::Vector;

/// Recipe for a toy dataset.
///
/// Every condition owns `variants` distinct smooth patterns. The first one is
/// the condition's paired training sample `x` and is repeated `dup_factor`
/// times; the others appear once each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub dim: usize,
    pub dup_factors: Vec<usize>,
    pub variants: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn num_conds(&self) -> usize {
        self.dup_factors.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    items: Vec<(Vector, usize)>,
    paired: Vec<Vector>,
    dup_factors: Vec<usize>,
    dim: usize,
}

impl ToyDataset {
    /// Deterministic construction from a spec.
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        if spec.dup_factors.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one condition".into()));
        }
        if spec.dim == 0 {
            return Err(Error::InvalidArgument("dataset dimension must be positive".into()));
        }
        if spec.variants == 0 {
            return Err(Error::InvalidArgument("each condition needs at least one variant".into()));
        }
        if let Some(c) = spec.dup_factors.iter().position(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("condition {c} has dup_factor 0")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut items = Vec::new();
        let mut paired = Vec::with_capacity(spec.num_conds());
        for (c, &dup) in spec.dup_factors.iter().enumerate() {
            let x = smooth_pattern(spec.dim, &mut rng);
            items.extend(std::iter::repeat_n((x.clone(), c), dup));
            for _ in 1..spec.variants {
                items.push((smooth_pattern(spec.dim, &mut rng), c));
            }
            paired.push(x);
        }
        Ok(ToyDataset { items, paired, dup_factors: spec.dup_factors.clone(), dim: spec.dim })
    }

    /// Builds a dataset from explicit items. `paired[c]` is the reference
    /// sample of condition `c`; duplication counts are inferred from exact copies.
    pub fn from_items(items: Vec<(Vector, usize)>, paired: Vec<Vector>) -> Result<Self> {
        let num_conds = paired.len();
        if num_conds == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one condition".into()));
        }
        let dim = paired[0].dim();
        for p in &paired {
            check_dims(dim, p.dim())?;
        }
        let mut dup_factors = vec![0; num_conds];
        for (x, c) in &items {
            check_dims(dim, x.dim())?;
            if *c >= num_conds {
                return Err(Error::ConditionOutOfRange { cond: *c, num_conds });
            }
            if x == &paired[*c] {
                dup_factors[*c] += 1;
            }
        }
        if let Some(c) = dup_factors.iter().position(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("condition {c} has no copy of its paired sample")));
        }
        Ok(ToyDataset { items, paired, dup_factors, dim })
    }

    pub fn items(&self) -> &[(Vector, usize)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_conds(&self) -> usize {
        self.paired.len()
    }

    pub fn dup_factor(&self, cond: usize) -> usize {
        self.dup_factors[cond]
    }

    pub fn dup_factors(&self) -> &[usize] {
        &self.dup_factors
    }

    /// The training sample a memorizing model would reproduce for `cond`.
    pub fn train_x(&self, cond: usize) -> &Vector {
        &self.paired[cond]
    }

    /// Requires at least one unduplicated condition and one at or above `threshold`.
    pub fn check_contrast(&self, threshold: usize) -> Result<()> {
        let has_normal = self.dup_factors.contains(&1);
        let has_heavy = self.dup_factors.iter().any(|&d| d >= threshold);
        if !(has_normal && has_heavy) {
            return Err(Error::InvalidArgument(format!(
                "dataset needs a dup_factor 1 condition and one with dup_factor >= {threshold}"
            )));
        }
        Ok(())
    }
}

/// A random smooth pattern with values in (−1, 1), contrast-stretched so
/// most pixels sit near ±1. Square dimensions are
/// laid out as images; other dimensions use a 1-D layout.
const CONTRAST: f64 = 2.0;

fn smooth_pattern(dim: usize, rng: &mut ChaCha8Rng) -> Vector {
    let side = (dim as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == dim { (side, side) } else { (1, dim) };
    let mut v = vec![0.0; dim];
    for _ in 0..4 {
        let amp: f64 = rng.random_range(0.3..1.0);
        let fy: f64 = if rows > 1 { rng.random_range(-1.5..1.5) } else { 0.0 };
        let fx: f64 = rng.random_range(-1.5..1.5);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        for r in 0..rows {
            for c in 0..cols {
                let arg = 2.0 * PI * (fy * r as f64 / rows as f64 + fx * c as f64 / cols.max(2) as f64) + phase;
                v[r * cols + c] += amp * arg.cos();
            }
        }
    }
    let mean = v.iter().sum::<f64>() / dim as f64;
    v.iter_mut().for_each(|a| *a -= mean);
    let rms = (v.iter().map(|a| a * a).sum::<f64>() / dim as f64).sqrt();
    if rms > 0.0 {
        v.iter_mut().for_each(|a| *a = (CONTRAST * *a / rms).tanh());
    }
    Vector::new(v)
}
