//! Per-tensor, per-group and two-level microscaled FP8 quantization.
//!
//! All schemes group along the last (innermost) axis. Scales are computed
//! as `max|X| / delta_max` in `f64` and rounded up to the next `f32`, so
//! the largest element of a group never lands above `delta_max`. All-zero
//! tensors and groups fall back to a scale of `1.0` with zero codes.
//!
//! The two-level scheme keeps one full-precision scale `s` per level-1 span
//! (by default a whole last-axis row) and one E8M0 micro-scale `ss_i` per
//! 32-element block:
//!
//! ```text
//! s_i  = max|X_i| / delta_max
//! s    = max_i s_i
//! ss_i = E8M0(s_i / s)            // in (0, 1]
//! DQ_j = decode(code_j) * s * ss_i
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp8::{E8m0Code, E8m0Rounding, Fp8Format};
use crate::tensor::{max_abs, Tensor};

/// Level-2 block size.
pub const MICRO_BLOCK: usize = 32;
pub const DEFAULT_GROUP_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Tensor,
    Group,
    Mx2,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Tensor, Scheme::Group, Scheme::Mx2];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Tensor => "tensor",
            Scheme::Group => "group",
            Scheme::Mx2 => "mx2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerTensorQuant {
    pub format: Fp8Format,
    pub shape: Vec<usize>,
    pub codes: Vec<u8>,
    pub scale: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerGroupQuant {
    pub format: Fp8Format,
    pub shape: Vec<usize>,
    pub codes: Vec<u8>,
    pub group_size: usize,
    /// Row-major: `groups_per_row` scales for each last-axis row.
    pub scales: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelQuant {
    pub format: Fp8Format,
    pub shape: Vec<usize>,
    pub codes: Vec<u8>,
    pub rounding: E8m0Rounding,
    /// Level-1 span length along the last axis.
    pub k1: usize,
    /// One scale per level-1 span, row-major.
    pub global_scales: Vec<f32>,
    /// One micro-scale per 32-block, contiguous per row in block order.
    pub micro_scales: Vec<E8m0Code>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantizedTensor {
    PerTensor(PerTensorQuant),
    PerGroup(PerGroupQuant),
    TwoLevel(TwoLevelQuant),
}

/// Smallest `f32` that is `>= max / delta_max`, or `1.0` for `max == 0`.
pub fn scale_for_max(max: f32, fmt: Fp8Format) -> f32 {
    if max == 0.0 {
        return 1.0;
    }
    f32_at_least(max as f64 / fmt.delta_max() as f64)
}

/// Rounds `x` to the nearest `f32` not below it.
pub fn f32_at_least(x: f64) -> f32 {
    let y = x as f32;
    if (y as f64) < x {
        y.next_up()
    } else {
        y
    }
}

fn check_finite(x: &Tensor) -> Result<()> {
    // Tensor construction already rejects non-finite data; kept as the
    // quantization boundary check for tensors built by other means.
    match x.data().iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index, value: x.data()[index] }),
        None => Ok(()),
    }
}

fn encode_block(fmt: Fp8Format, xs: &[f32], scale: f32, out: &mut Vec<u8>) -> usize {
    let mut saturated = 0;
    for &x in xs {
        let y = x / scale;
        if y.abs() > fmt.delta_max() {
            saturated += 1;
        }
        out.push(fmt.encode_finite(y));
    }
    saturated
}

pub fn quant_per_tensor(x: &Tensor, fmt: Fp8Format) -> Result<PerTensorQuant> {
    check_finite(x)?;
    let scale = scale_for_max(x.max_abs(), fmt);
    Ok(quant_per_tensor_with_scale(x, fmt, scale)?.0)
}

/// Quantizes with a caller-supplied scale (e.g. a predicted one). Returns
/// the number of elements whose scaled magnitude exceeded `delta_max` and
/// were saturated.
pub fn quant_per_tensor_with_scale(
    x: &Tensor,
    fmt: Fp8Format,
    scale: f32,
) -> Result<(PerTensorQuant, usize)> {
    check_finite(x)?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let mut codes = Vec::with_capacity(x.len());
    let saturated = encode_block(fmt, x.data(), scale, &mut codes);
    let q = PerTensorQuant { format: fmt, shape: x.shape().to_vec(), codes, scale };
    Ok((q, saturated))
}

pub fn quant_per_group(x: &Tensor, fmt: Fp8Format, group_size: usize) -> Result<PerGroupQuant> {
    if group_size < 1 {
        return Err(Error::InvalidArgument("group_size must be at least 1".into()));
    }
    check_finite(x)?;
    let mut codes = Vec::with_capacity(x.len());
    let mut scales = Vec::with_capacity(x.outer_len() * x.last_dim().div_ceil(group_size));
    for row in x.rows() {
        for g in row.chunks(group_size) {
            let s = scale_for_max(max_abs(g), fmt);
            encode_block(fmt, g, s, &mut codes);
            scales.push(s);
        }
    }
    Ok(PerGroupQuant { format: fmt, shape: x.shape().to_vec(), codes, group_size, scales })
}

/// Two-level quantization with one level-1 span per row.
pub fn quant_two_level(x: &Tensor, fmt: Fp8Format, rounding: E8m0Rounding) -> Result<TwoLevelQuant> {
    quant_two_level_k1(x, fmt, rounding, x.last_dim())
}

/// Two-level quantization with a level-1 span of `k1` elements (a multiple
/// of 32; the last span of a row may be shorter).
pub fn quant_two_level_k1(
    x: &Tensor,
    fmt: Fp8Format,
    rounding: E8m0Rounding,
    k1: usize,
) -> Result<TwoLevelQuant> {
    let last = x.last_dim();
    if !last.is_multiple_of(MICRO_BLOCK) {
        return Err(Error::InvalidArgument(format!(
            "last dimension {last} is not divisible by {MICRO_BLOCK}"
        )));
    }
    if k1 == 0 || !k1.is_multiple_of(MICRO_BLOCK) {
        return Err(Error::InvalidArgument(format!("k1 = {k1} must be a positive multiple of 32")));
    }
    check_finite(x)?;
    let mut codes = Vec::with_capacity(x.len());
    let mut global_scales = Vec::with_capacity(x.outer_len() * last.div_ceil(k1));
    let mut micro_scales = Vec::with_capacity(x.len() / MICRO_BLOCK);
    for row in x.rows() {
        for span in row.chunks(k1) {
            let block_scales: Vec<f32> = span
                .chunks(MICRO_BLOCK)
                .map(|b| max_abs(b) as f64 / fmt.delta_max() as f64)
                .map(f32_at_least)
                .collect();
            let s_max = block_scales.iter().copied().fold(0.0f32, f32::max);
            let s = if s_max == 0.0 { 1.0 } else { s_max };
            global_scales.push(s);
            for (block, &si) in span.chunks(MICRO_BLOCK).zip(&block_scales) {
                let ss = if si == 0.0 {
                    E8m0Code::ONE
                } else {
                    micro_scale(si as f64 / s as f64, rounding)?
                };
                encode_block(fmt, block, s * ss.value(), &mut codes);
                micro_scales.push(ss);
            }
        }
    }
    Ok(TwoLevelQuant {
        format: fmt,
        shape: x.shape().to_vec(),
        codes,
        rounding,
        k1,
        global_scales,
        micro_scales,
    })
}

/// E8M0 code for a ratio in `(0, 1]`, decided in `f64` so a ratio just
/// above a power of two never rounds down onto it.
fn micro_scale(ratio: f64, rounding: E8m0Rounding) -> Result<E8m0Code> {
    let r32 = ratio as f32;
    let code = E8m0Code::encode(r32.max(f32::from_bits(1)), rounding)?;
    if rounding == E8m0Rounding::CeilPow2 && (code.value() as f64) < ratio {
        return E8m0Code::from_exponent(code.exponent() + 1);
    }
    Ok(code)
}

impl PerTensorQuant {
    pub fn dequantize(&self) -> Tensor {
        let data = self.codes.iter().map(|&c| self.format.decode(c) * self.scale).collect();
        Tensor::new(self.shape.clone(), data).expect("decoded codes are finite")
    }
}

impl PerGroupQuant {
    pub fn groups_per_row(&self) -> usize {
        self.last_dim().div_ceil(self.group_size)
    }

    fn last_dim(&self) -> usize {
        *self.shape.last().unwrap()
    }

    /// Scale applying to element `idx` (flat index).
    pub fn scale_at(&self, idx: usize) -> f32 {
        let last = self.last_dim();
        let (row, col) = (idx / last, idx % last);
        self.scales[row * self.groups_per_row() + col / self.group_size]
    }

    pub fn dequantize(&self) -> Tensor {
        let data = self
            .codes
            .iter()
            .enumerate()
            .map(|(i, &c)| self.format.decode(c) * self.scale_at(i))
            .collect();
        Tensor::new(self.shape.clone(), data).expect("decoded codes are finite")
    }
}

impl TwoLevelQuant {
    fn last_dim(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn spans_per_row(&self) -> usize {
        self.last_dim().div_ceil(self.k1)
    }

    pub fn blocks_per_row(&self) -> usize {
        self.last_dim() / MICRO_BLOCK
    }

    /// Level-1 scale for the span containing flat element `idx`.
    pub fn global_scale_at(&self, idx: usize) -> f32 {
        let last = self.last_dim();
        let (row, col) = (idx / last, idx % last);
        self.global_scales[row * self.spans_per_row() + col / self.k1]
    }

    pub fn micro_scale_at(&self, idx: usize) -> E8m0Code {
        self.micro_scales[idx / MICRO_BLOCK]
    }

    /// `s * ss_i` for the block containing flat element `idx`.
    pub fn effective_scale_at(&self, idx: usize) -> f32 {
        self.global_scale_at(idx) * self.micro_scale_at(idx).value()
    }

    pub fn dequantize(&self) -> Tensor {
        let data = self
            .codes
            .iter()
            .enumerate()
            .map(|(i, &c)| self.format.decode(c) * self.effective_scale_at(i))
            .collect();
        Tensor::new(self.shape.clone(), data).expect("decoded codes are finite")
    }
}

impl QuantizedTensor {
    pub fn scheme(&self) -> Scheme {
        match self {
            QuantizedTensor::PerTensor(_) => Scheme::Tensor,
            QuantizedTensor::PerGroup(_) => Scheme::Group,
            QuantizedTensor::TwoLevel(_) => Scheme::Mx2,
        }
    }

    pub fn format(&self) -> Fp8Format {
        match self {
            QuantizedTensor::PerTensor(q) => q.format,
            QuantizedTensor::PerGroup(q) => q.format,
            QuantizedTensor::TwoLevel(q) => q.format,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            QuantizedTensor::PerTensor(q) => &q.shape,
            QuantizedTensor::PerGroup(q) => &q.shape,
            QuantizedTensor::TwoLevel(q) => &q.shape,
        }
    }

    pub fn codes(&self) -> &[u8] {
        match self {
            QuantizedTensor::PerTensor(q) => &q.codes,
            QuantizedTensor::PerGroup(q) => &q.codes,
            QuantizedTensor::TwoLevel(q) => &q.codes,
        }
    }

    pub fn dequantize(&self) -> Tensor {
        match self {
            QuantizedTensor::PerTensor(q) => q.dequantize(),
            QuantizedTensor::PerGroup(q) => q.dequantize(),
            QuantizedTensor::TwoLevel(q) => q.dequantize(),
        }
    }
}

impl From<PerTensorQuant> for QuantizedTensor {
    fn from(q: PerTensorQuant) -> Self {
        QuantizedTensor::PerTensor(q)
    }
}

impl From<PerGroupQuant> for QuantizedTensor {
    fn from(q: PerGroupQuant) -> Self {
        QuantizedTensor::PerGroup(q)
    }
}

impl From<TwoLevelQuant> for QuantizedTensor {
    fn from(q: TwoLevelQuant) -> Self {
        QuantizedTensor::TwoLevel(q)
    }
}

/// Quantizes with the given scheme using default parameters (group 128,
/// ceil-pow2 micro-scales, row-wide level-1 spans).
pub fn quantize(x: &Tensor, scheme: Scheme, fmt: Fp8Format) -> Result<QuantizedTensor> {
    Ok(match scheme {
        Scheme::Tensor => quant_per_tensor(x, fmt)?.into(),
        Scheme::Group => quant_per_group(x, fmt, DEFAULT_GROUP_SIZE)?.into(),
        Scheme::Mx2 => quant_two_level(x, fmt, E8m0Rounding::CeilPow2)?.into(),
    })
}

pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    q.dequantize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{tensor_randn, Dist};
    use proptest::prelude::*;

    const E4M3: Fp8Format = Fp8Format::E4M3;

    fn t(v: Vec<f32>) -> Tensor {
        Tensor::from_vec(v).unwrap()
    }

    #[test]
    fn per_tensor_exact_examples() {
        let x = t(vec![-448.0, 224.0, 0.0]);
        let q = quant_per_tensor(&x, E4M3).unwrap();
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.dequantize(), x);

        let x = t(vec![896.0, -448.0]);
        let q = quant_per_tensor(&x, E4M3).unwrap();
        assert_eq!(q.scale, 2.0);
        assert_eq!(q.dequantize(), x);
    }

    #[test]
    fn zero_tensor_fallback() {
        let x = t(vec![0.0; 8]);
        let q = quant_per_tensor(&x, E4M3).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(q.codes.iter().all(|&c| c == 0));
        assert_eq!(q.dequantize(), x);
    }

    #[test]
    fn per_group_examples() {
        let mut v = vec![0.0f32; 256];
        v[0] = 448.0;
        v[128] = 1.75;
        let x = t(v);
        let q = quant_per_group(&x, E4M3, 128).unwrap();
        assert_eq!(q.scales, vec![1.0, 0.00390625]);
        assert_eq!(q.dequantize(), x);

        let mut v = vec![0.0f32; 256];
        v[5] = 3.0;
        let q = quant_per_group(&t(v), E4M3, 128).unwrap();
        assert_eq!(q.scales[1], 1.0);
        assert!(q.codes[128..].iter().all(|&c| c == 0));

        assert!(matches!(quant_per_group(&x, E4M3, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn per_group_ragged_tail_uses_actual_elements() {
        let x = Tensor::new(vec![2, 5], vec![1., 2., 3., 4., 8., -1., 0.5, 0.25, 0.125, 0.0625]).unwrap();
        let q = quant_per_group(&x, E4M3, 4).unwrap();
        assert_eq!(q.groups_per_row(), 2);
        assert_eq!(q.scales.len(), 4);
        assert_eq!(q.scales[1], scale_for_max(8.0, E4M3));
        assert_eq!(q.scales[3], scale_for_max(0.0625, E4M3));
        assert_eq!(q.dequantize().data()[4], 8.0);
    }

    #[test]
    fn group_covering_tensor_equals_per_tensor() {
        let x = tensor_randn(&[300], 11, Dist::Gaussian).unwrap();
        let g = quant_per_group(&x, E4M3, 300).unwrap();
        let p = quant_per_tensor(&x, E4M3).unwrap();
        assert_eq!(g.codes, p.codes);
        assert_eq!(g.scales, vec![p.scale]);
        let g = quant_per_group(&x, E4M3, 4096).unwrap();
        assert_eq!(g.codes, p.codes);
    }

    #[test]
    fn two_level_hand_example() {
        let mut v = vec![0.0f32; 64];
        v[3] = 448.0;
        v[40] = -0.875;
        let x = t(v);
        let q = quant_two_level(&x, E4M3, E8m0Rounding::CeilPow2).unwrap();
        assert_eq!(q.global_scales, vec![1.0]);
        assert_eq!(q.micro_scales[0].bits(), 127);
        assert_eq!(q.micro_scales[1].bits(), 118);
        assert_eq!(q.micro_scales[1].value(), 2f32.powi(-9));
        assert_eq!(q.dequantize(), x);
    }

    #[test]
    fn two_level_uniform_blocks_degenerate_to_per_tensor() {
        let base = tensor_randn(&[32], 2, Dist::Gaussian).unwrap();
        let m = base.max_abs();
        let v: Vec<f32> = (0..4).flat_map(|k| base.data().iter().map(move |x| if k % 2 == 0 { *x } else { -*x })).collect();
        assert!(v.chunks(32).all(|b| max_abs(b) == m));
        let x = t(v);
        let q = quant_two_level(&x, E4M3, E8m0Rounding::CeilPow2).unwrap();
        assert!(q.micro_scales.iter().all(|&c| c == E8m0Code::ONE));
        let p = quant_per_tensor(&x, E4M3).unwrap();
        assert_eq!(q.codes, p.codes);
        assert_eq!(q.global_scales, vec![p.scale]);
    }

    #[test]
    fn two_level_nearest_mode_picks_closest_exponent() {
        // block B max chosen so s_B / s = 0.7
        let mut v = vec![0.0f32; 64];
        v[0] = 448.0;
        v[32] = 448.0 * 0.7;
        let x = t(v);
        let q = quant_two_level(&x, E4M3, E8m0Rounding::NearestLog2).unwrap();
        let ratio = (448.0f32 * 0.7 / 448.0) as f64;
        let l = ratio.log2();
        let candidates = [l.floor(), l.ceil()];
        let best = candidates
            .iter()
            .copied()
            .min_by(|a, b| (l - a).abs().partial_cmp(&(l - b).abs()).unwrap())
            .unwrap();
        assert_eq!(q.micro_scales[1].exponent() as f64, best);
        assert_eq!(q.micro_scales[1].value(), 0.5);
        // ceil mode keeps the block in range
        let c = quant_two_level(&x, E4M3, E8m0Rounding::CeilPow2).unwrap();
        assert_eq!(c.micro_scales[1].value(), 1.0);
    }

    #[test]
    fn two_level_rejects_bad_shapes() {
        let x = tensor_randn(&[2, 48], 1, Dist::Gaussian).unwrap();
        assert!(quant_two_level(&x, E4M3, E8m0Rounding::CeilPow2).is_err());
        let x = tensor_randn(&[2, 64], 1, Dist::Gaussian).unwrap();
        assert!(quant_two_level_k1(&x, E4M3, E8m0Rounding::CeilPow2, 40).is_err());
    }

    #[test]
    fn two_level_spans_per_row() {
        let x = tensor_randn(&[3, 128], 4, Dist::Laplace).unwrap();
        let q = quant_two_level(&x, E4M3, E8m0Rounding::CeilPow2).unwrap();
        assert_eq!(q.global_scales.len(), 3);
        assert_eq!(q.micro_scales.len(), 12);
        let q = quant_two_level_k1(&x, E4M3, E8m0Rounding::CeilPow2, 96).unwrap();
        assert_eq!(q.spans_per_row(), 2);
        assert_eq!(q.global_scales.len(), 6);
        for (r, row) in x.rows().enumerate() {
            assert_eq!(q.global_scales[2 * r], scale_for_max(max_abs(&row[..96]), E4M3));
            assert_eq!(q.global_scales[2 * r + 1], scale_for_max(max_abs(&row[96..]), E4M3));
        }
    }

    #[test]
    fn all_zero_codes_dequantize_to_zero() {
        let q = TwoLevelQuant {
            format: E4M3,
            shape: vec![64],
            codes: vec![0; 64],
            rounding: E8m0Rounding::CeilPow2,
            k1: 64,
            global_scales: vec![123.0],
            micro_scales: vec![E8m0Code::from_bits(140).unwrap(), E8m0Code::ONE],
        };
        assert!(q.dequantize().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_level_block_error_bound_random() {
        // 10^4 random 32-blocks (313 tensors of 1024 elements)
        let m = E4M3.mantissa_bits() as i32;
        let mut blocks = 0;
        for seed in 0..313 {
            let x = tensor_randn(&[1024], seed, Dist::Gaussian).unwrap();
            let q = quant_two_level(&x, E4M3, E8m0Rounding::CeilPow2).unwrap();
            let dq = q.dequantize();
            for (b, (xb, db)) in x.data().chunks(32).zip(dq.data().chunks(32)).enumerate() {
                let eff = q.effective_scale_at(b * 32);
                let err = xb.iter().zip(db).map(|(a, d)| (a - d).abs()).fold(0.0f32, f32::max);
                assert!(err / max_abs(xb) <= 2f32.powi(-m), "seed {seed} block {b}");
                for (a, d) in xb.iter().zip(db) {
                    if (a / eff).abs() >= 2f32.powi(-6) {
                        assert!((a - d).abs() <= a.abs() * 2f32.powi(-m - 1) * 1.000001);
                    }
                }
                blocks += 1;
            }
        }
        assert!(blocks >= 10_000);
    }

    #[test]
    fn nonfinite_rejected_at_boundary() {
        // bypass Tensor::new validation is impossible, so check via with_scale
        let x = t(vec![1.0, 2.0]);
        assert!(quant_per_tensor_with_scale(&x, E4M3, 0.0).is_err());
        assert!(quant_per_tensor_with_scale(&x, E4M3, f32::NAN).is_err());
    }

    #[test]
    fn with_scale_counts_saturation() {
        let x = t(vec![1.0, 10.0, -20.0]);
        let (q, sat) = quant_per_tensor_with_scale(&x, E4M3, 1.0 / 32.0).unwrap();
        assert_eq!(sat, 1);
        assert_eq!(q.dequantize().data(), &[1.0, 10.0, -14.0]);
    }

    fn finite_tensor() -> impl Strategy<Value = Tensor> {
        (1usize..4, 1usize..5, any::<u64>(), prop_oneof![Just(Dist::Gaussian), Just(Dist::Laplace),
            Just(Dist::OutlierInjected { rate: 0.05, magnitude: 1e4 })])
            .prop_map(|(rows, blocks, seed, d)| tensor_randn(&[rows, blocks * 32], seed, d).unwrap())
    }

    proptest! {
        #[test]
        fn per_tensor_half_spacing_bound(x in finite_tensor()) {
            let q = quant_per_tensor(&x, E4M3).unwrap();
            prop_assert!(q.scale > 0.0);
            let dq = q.dequantize();
            for (&a, &d) in x.data().iter().zip(dq.data()) {
                let y = (a / q.scale).abs().max(2f32.powi(-6));
                let spacing = 2f32.powi(y.log2().floor() as i32 - 3);
                prop_assert!((a - d).abs() <= 0.5 * spacing * q.scale * 1.0001 + f32::MIN_POSITIVE);
            }
            prop_assert!(q.codes.iter().all(|&c| E4M3.decode(c).abs() <= E4M3.delta_max()));
        }

        #[test]
        fn two_level_invariants(x in finite_tensor(), nearest in any::<bool>()) {
            let rounding = if nearest { E8m0Rounding::NearestLog2 } else { E8m0Rounding::CeilPow2 };
            let q = quant_two_level(&x, E4M3, rounding).unwrap();
            prop_assert!(q.global_scales.iter().all(|&s| s > 0.0));
            for ((r, row), &s) in x.rows().enumerate().zip(&q.global_scales) {
                let s_i: Vec<f32> = row.chunks(32).map(|b| scale_for_max(max_abs(b), E4M3)).collect();
                let want = s_i.iter().copied().fold(0.0, f32::max);
                prop_assert_eq!(s, if want == 0.0 { 1.0 } else { want });
                for b in 0..q.blocks_per_row() {
                    let ss = q.micro_scales[r * q.blocks_per_row() + b].value();
                    if rounding == E8m0Rounding::CeilPow2 {
                        prop_assert!(ss > 0.0 && ss <= 1.0);
                    }
                }
            }
            if rounding == E8m0Rounding::CeilPow2 {
                // no clipping: every scaled value stays within delta_max
                for (i, &a) in x.data().iter().enumerate() {
                    prop_assert!((a / q.effective_scale_at(i)).abs() <= E4M3.delta_max());
                }
            }
        }
    }
}
