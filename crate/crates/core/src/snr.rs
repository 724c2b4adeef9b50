//! Quantization signal-to-noise ratio: empirical measurement and the
//! uniform-noise closed forms for the three schemes.
//!
//! All values are in decibels, `10 * log10(signal / noise)`, accumulated
//! in `f64`. An exactly zero error yields `f64::INFINITY`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp8::{E8m0Rounding, Fp8Format};
use crate::quant::{self, QuantizedTensor, Scheme, DEFAULT_GROUP_SIZE};
use crate::tensor::{max_abs, tensor_randn, Dist, Tensor};

/// Quantizer parameters shared by the empirical and model paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrParams {
    pub format: Fp8Format,
    pub group_size: usize,
    pub rounding: E8m0Rounding,
}

impl Default for SnrParams {
    fn default() -> Self {
        Self { format: Fp8Format::E4M3, group_size: DEFAULT_GROUP_SIZE, rounding: E8m0Rounding::CeilPow2 }
    }
}

impl SnrParams {
    pub fn quantize(&self, x: &Tensor, scheme: Scheme) -> Result<QuantizedTensor> {
        Ok(match scheme {
            Scheme::Tensor => quant::quant_per_tensor(x, self.format)?.into(),
            Scheme::Group => quant::quant_per_group(x, self.format, self.group_size)?.into(),
            Scheme::Mx2 => quant::quant_two_level(x, self.format, self.rounding)?.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub scheme: Scheme,
    pub empirical_snr_db: f64,
    pub model_snr_db: f64,
    /// σ_X² (population variance).
    pub signal_power: f64,
    /// Mean squared dequantization error.
    pub noise_power: f64,
    /// Number of scale groups (1, N, or N_g).
    pub n_groups: usize,
}

pub fn snr_empirical(x: &Tensor, dq: &Tensor) -> Result<f64> {
    if x.shape() != dq.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), dq.shape())));
    }
    let (signal, noise) = x.data().iter().zip(dq.data()).fold((0.0f64, 0.0f64), |(s, n), (&a, &d)| {
        let a = a as f64;
        let e = d as f64 - a;
        (s + a * a, n + e * e)
    });
    if signal == 0.0 {
        return Err(Error::InvalidArgument("signal is identically zero".into()));
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

fn variance(xs: &[f32]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / n;
    xs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Closed-form SNR under the uniform-error model:
///
/// - per-tensor: `10 log10(12 σ² Δ² / max|X|²)`
/// - per-group:  `10 log10(12 N σ² Δ² / Σ_g max|X_g|²)`
/// - two-level:  `10 log10(12 N_g σ² / Σ_g (s · ss_g)²)`, using the actual
///   micro-scales; with a single level-1 span this is
///   `10 log10(12 N_g σ² Δ² / (max|X|² Σ_g ss_g²))`.
pub fn snr_model(x: &Tensor, scheme: Scheme, params: &SnrParams) -> Result<f64> {
    Ok(model_terms(x, scheme, params)?.0)
}

fn model_terms(x: &Tensor, scheme: Scheme, params: &SnrParams) -> Result<(f64, usize)> {
    let var = variance(x.data());
    let max = x.max_abs() as f64;
    if max == 0.0 || var == 0.0 {
        return Err(Error::UndefinedModel("signal has zero variance".into()));
    }
    let delta = params.format.delta_max() as f64;
    let (denominator, n) = match scheme {
        Scheme::Tensor => ((max / delta).powi(2), 1),
        Scheme::Group => {
            if params.group_size < 1 {
                return Err(Error::InvalidArgument("group_size must be at least 1".into()));
            }
            let maxima: Vec<f64> = x
                .rows()
                .flat_map(|r| r.chunks(params.group_size).map(|g| max_abs(g) as f64))
                .collect();
            let n = maxima.len();
            (maxima.iter().map(|m| (m / delta).powi(2)).sum::<f64>() / n as f64, n)
        }
        Scheme::Mx2 => {
            let q = quant::quant_two_level(x, params.format, params.rounding)?;
            let n = q.micro_scales.len();
            let sum: f64 = (0..n)
                .map(|b| {
                    let idx = b * quant::MICRO_BLOCK;
                    let span_max = span_max(x, q.k1, idx);
                    let ss = q.micro_scale_at(idx).value() as f64;
                    (span_max / delta * ss).powi(2)
                })
                .sum();
            (sum / n as f64, n)
        }
    };
    Ok((10.0 * (12.0 * var / denominator).log10(), n))
}

/// `max|X|` over the level-1 span holding flat element `idx`.
fn span_max(x: &Tensor, k1: usize, idx: usize) -> f64 {
    let last = x.last_dim();
    let row = &x.data()[idx / last * last..][..last];
    let start = (idx % last) / k1 * k1;
    max_abs(&row[start..(start + k1).min(last)]) as f64
}

pub fn snr_report(x: &Tensor, scheme: Scheme, params: &SnrParams) -> Result<SnrReport> {
    let q = params.quantize(x, scheme)?;
    let dq = q.dequantize();
    let empirical_snr_db = snr_empirical(x, &dq)?;
    let (model_snr_db, n_groups) = match model_terms(x, scheme, params) {
        Ok(v) => v,
        Err(Error::UndefinedModel(_)) => (f64::NAN, 0),
        Err(e) => return Err(e),
    };
    let noise_power = x
        .data()
        .iter()
        .zip(dq.data())
        .map(|(&a, &d)| (d as f64 - a as f64).powi(2))
        .sum::<f64>()
        / x.len() as f64;
    Ok(SnrReport {
        scheme,
        empirical_snr_db,
        model_snr_db,
        signal_power: variance(x.data()),
        noise_power,
        n_groups,
    })
}

/// One trial of the three-scheme comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Reports in [`Scheme::ALL`] order: tensor, group, mx2.
    pub reports: Vec<SnrReport>,
}

impl TrialResult {
    fn empirical(&self, s: Scheme) -> f64 {
        self.reports.iter().find(|r| r.scheme == s).unwrap().empirical_snr_db
    }

    /// Any scheme reconstructed the tensor exactly.
    pub fn is_degenerate(&self) -> bool {
        self.reports.iter().any(|r| r.empirical_snr_db.is_infinite())
    }

    /// Strict `tensor < group < mx2`.
    pub fn ordered(&self) -> bool {
        let (t, g, m) = (self.empirical(Scheme::Tensor), self.empirical(Scheme::Group), self.empirical(Scheme::Mx2));
        t < g && g < m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingStats {
    pub trials: Vec<TrialResult>,
    pub degenerate_trials: usize,
    /// Mean empirical SNR over non-degenerate trials: tensor, group, mx2.
    pub mean_snr_db: [f64; 3],
    /// `mean(group) - mean(tensor)`.
    pub gap_group_over_tensor_db: f64,
    /// `mean(mx2) - mean(group)`.
    pub gap_mx2_over_group_db: f64,
    /// Fraction of non-degenerate trials with strict per-trial ordering.
    pub ordered_fraction: f64,
}

impl OrderingStats {
    pub fn is_degenerate(&self) -> bool {
        self.degenerate_trials == self.trials.len()
    }
}

/// Quantizes `n_trials` fresh tensors with all three schemes and reports the
/// SNR ordering. Trial `i` uses seed `seed + i`.
pub fn theorem1_harness(
    n_trials: usize,
    size: usize,
    dist: Dist,
    params: &SnrParams,
    seed: u64,
) -> Result<OrderingStats> {
    if n_trials < 1 {
        return Err(Error::InvalidArgument("n_trials must be at least 1".into()));
    }
    let trials = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let seed = seed.wrapping_add(trial as u64);
            let x = tensor_randn(&[size], seed, dist)?;
            let reports = Scheme::ALL
                .iter()
                .map(|&s| snr_report(&x, s, params))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrialResult { trial, seed, reports })
        })
        .collect::<Result<Vec<_>>>()?;

    let live: Vec<&TrialResult> = trials.iter().filter(|t| !t.is_degenerate()).collect();
    let n = live.len() as f64;
    let mut mean = [f64::NAN; 3];
    let mut ordered_fraction = f64::NAN;
    if !live.is_empty() {
        for (k, s) in Scheme::ALL.iter().enumerate() {
            mean[k] = live.iter().map(|t| t.empirical(*s)).sum::<f64>() / n;
        }
        ordered_fraction = live.iter().filter(|t| t.ordered()).count() as f64 / n;
    }
    Ok(OrderingStats {
        degenerate_trials: trials.len() - live.len(),
        trials,
        mean_snr_db: mean,
        gap_group_over_tensor_db: mean[1] - mean[0],
        gap_mx2_over_group_db: mean[2] - mean[1],
        ordered_fraction,
    })
}
