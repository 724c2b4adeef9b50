//! Dense row-major `f32` tensors and seeded synthetic generation.
//!
//! Random tensors are drawn from `Xoshiro256PlusPlus` seeded with
//! `seed_from_u64(seed)`. Gaussian samples use `rand_distr::StandardNormal`;
//! Laplace samples use the inverse CDF on a uniform draw. The generator is
//! pinned so every number produced by the toolkit is reproducible.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The pinned generator used everywhere in the toolkit.
pub type SeededRng = Xoshiro256PlusPlus;

pub fn seeded_rng(seed: u64) -> SeededRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, rejecting empty or zero-sized shapes, length
    /// mismatches, and non-finite elements.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = shape_len(&shape)?;
        if data.len() != expected {
            return Err(Error::LengthMismatch { len: data.len(), expected });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape_len(&shape)?;
        Ok(Self { shape, data: vec![0.0; n] })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the innermost axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("shape is nonempty")
    }

    /// Product of all axes but the last.
    pub fn outer_len(&self) -> usize {
        self.len() / self.last_dim()
    }

    /// Iterates over contiguous rows along the last axis.
    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.last_dim())
    }

    pub fn max_abs(&self) -> f32 {
        max_abs(&self.data)
    }
}

pub fn max_abs(xs: &[f32]) -> f32 {
    xs.iter().fold(0.0f32, |m, x| m.max(x.abs()))
}

pub(crate) fn shape_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(shape.to_vec()))
}

/// Distribution for synthetic tensors. The random variants are zero-mean;
/// Gaussian and Laplace have unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Gaussian,
    Laplace,
    /// Gaussian body where each element is independently replaced, with
    /// probability `rate`, by `±magnitude` (in units of the body's σ).
    OutlierInjected { rate: f64, magnitude: f64 },
    /// Uniform on `[-1, 1)`.
    Uniform,
    Constant { value: f64 },
}

impl Dist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Gaussian => rng.sample(StandardNormal),
            Dist::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                let b = std::f64::consts::FRAC_1_SQRT_2;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Dist::OutlierInjected { rate, magnitude } => {
                let body: f64 = rng.sample(StandardNormal);
                if rng.random::<f64>() < rate {
                    if rng.random::<bool>() {
                        magnitude
                    } else {
                        -magnitude
                    }
                } else {
                    body
                }
            }
            Dist::Uniform => rng.random_range(-1.0..1.0),
            Dist::Constant { value } => value,
        }
    }
}

/// Draws a tensor of i.i.d. samples. Deterministic for a fixed
/// `(shape, seed, dist)`.
pub fn tensor_randn(shape: &[usize], seed: u64, dist: Dist) -> Result<Tensor> {
    let n = shape_len(shape)?;
    let mut rng = seeded_rng(seed);
    let data = (0..n).map(|_| dist.sample(&mut rng) as f32).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let a = tensor_randn(&[4], 7, Dist::Gaussian).unwrap();
        let b = tensor_randn(&[4], 7, Dist::Gaussian).unwrap();
        assert_eq!(a.data(), b.data());
        let c = tensor_randn(&[4], 8, Dist::Gaussian).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn gaussian_moments() {
        let t = tensor_randn(&[4096], 1, Dist::Gaussian).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = t.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.1, "std {}", var.sqrt());
    }

    #[test]
    fn laplace_has_unit_variance() {
        let t = tensor_randn(&[1 << 16], 3, Dist::Laplace).unwrap();
        let n = t.len() as f64;
        let ms = t.data().iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / n;
        assert!((ms - 1.0).abs() < 0.05, "{ms}");
    }

    #[test]
    fn outliers_appear_at_rate() {
        let d = Dist::OutlierInjected { rate: 0.01, magnitude: 50.0 };
        let t = tensor_randn(&[1 << 15], 5, d).unwrap();
        let hits = t.data().iter().filter(|x| x.abs() == 50.0).count();
        assert!((200..=460).contains(&hits), "{hits}");
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(tensor_randn(&[3, 0], 1, Dist::Gaussian), Err(Error::InvalidShape(_))));
        assert!(matches!(tensor_randn(&[], 1, Dist::Gaussian), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn new_checks_invariants() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![0.0; 3]),
            Err(Error::LengthMismatch { len: 3, expected: 4 })
        ));
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f32::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(Tensor::new(vec![1], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn rows_follow_last_axis() {
        let t = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let rows: Vec<_> = t.rows().collect();
        assert_eq!(rows, vec![&[1., 2., 3.][..], &[4., 5., 6.][..]]);
        assert_eq!(t.outer_len(), 2);
        assert_eq!(t.max_abs(), 6.0);
    }
}
