//! Flat real-valued latent vectors.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Result};

/// A flattened latent or data point of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Draws `dim` independent standard normal entries.
    pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self((0..dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn scale(&self, k: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * k).collect())
    }

    /// `a·self + b·other`, elementwise.
    pub fn lin_comb(a: f64, x: &Vector, b: f64, y: &Vector) -> Vector {
        debug_assert_eq!(x.dim(), y.dim());
        Vector(x.0.iter().zip(&y.0).map(|(p, q)| a * p + b * q).collect())
    }

    /// Checked variant of [`Vector::lin_comb`] for public entry points.
    pub fn try_lin_comb(a: f64, x: &Vector, b: f64, y: &Vector) -> Result<Vector> {
        check_dims(x.dim(), y.dim())?;
        Ok(Self::lin_comb(a, x, b, y))
    }

    pub fn centered(&self) -> Vector {
        let m = self.mean();
        Vector(self.0.iter().map(|v| v - m).collect())
    }

    /// Rounds every entry through `f32`.
    pub fn round_f32(&self) -> Vector {
        Vector(self.0.iter().map(|&v| v as f32 as f64).collect())
    }

    pub fn sq_dist(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &Vector {
    type Output = Vector;
    fn add(self, rhs: &Vector) -> Vector {
        Vector::lin_comb(1.0, self, 1.0, rhs)
    }
}

impl Sub for &Vector {
    type Output = Vector;
    fn sub(self, rhs: &Vector) -> Vector {
        Vector::lin_comb(1.0, self, -1.0, rhs)
    }
}

impl Mul<f64> for &Vector {
    type Output = Vector;
    fn mul(self, k: f64) -> Vector {
        self.scale(k)
    }
}

impl Neg for &Vector {
    type Output = Vector;
    fn neg(self) -> Vector {
        self.scale(-1.0)
    }
}

/// Cosine similarity of the raw vectors; `None` when either norm is zero.
pub fn cosine(a: &Vector, b: &Vector) -> Option<f64> {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        None
    } else {
        Some((a.dot(b) / denom).clamp(-1.0, 1.0))
    }
}
