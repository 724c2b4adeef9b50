//! Reference quantized GEMM kernels with dequantization-multiply counters.
//!
//! Both kernels compute `Y = X · Wᵀ` with `X` of shape `M×K` and `W` of shape
//! `N×K` (linear-layer layout) and accumulate in `f64`.
//!
//! - [`gemm_mx_epilogue`]: `X` is two-level quantized with one level-1 scale
//!   per row, `W` is per-tensor quantized. Micro-scales are powers of two and
//!   are applied per 32-block inside the accumulator, which tensor-core
//!   hardware does for free; the only general dequantization multiply is
//!   one `s_W · s_X[i]` per output element in the epilogue.
//! - [`gemm_pergroup_mainloop`]: both operands are quantized per group along
//!   `K`, so each group's partial sum must be multiplied by `s_X[i,g] · s_W[j,g]`
//!   inside the main loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp8::Fp8Format;
use crate::quant::{PerGroupQuant, PerTensorQuant, TwoLevelQuant, MICRO_BLOCK};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat64 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat64 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape(vec![rows, cols]));
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch { len: data.len(), expected: rows * cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new(n, n, data)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat64 {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.at(i, j);
            }
        }
        Mat64 { rows: self.cols, cols: self.rows, data }
    }
}

/// `||y - reference||_F / ||reference||_F`.
pub fn relative_error(y: &Mat64, reference: &Mat64) -> f64 {
    let (num, den) = y.data.iter().zip(&reference.data).fold((0.0, 0.0), |(n, d), (a, b)| {
        (n + (a - b) * (a - b), d + b * b)
    });
    (num / den).sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmCounters {
    /// General scale multiplies inside the `K` loop.
    pub mainloop_dequant_multiplies: u64,
    /// General scale multiplies after the `K` loop.
    pub epilogue_dequant_multiplies: u64,
    /// Power-of-two block-scale applications absorbed by the tensor path.
    pub tensor_path_scale_applications: u64,
    pub mac_count: u64,
}

impl GemmCounters {
    pub fn mx_epilogue(m: usize, n: usize, k: usize) -> Self {
        let (m, n, k) = (m as u64, n as u64, k as u64);
        Self {
            mainloop_dequant_multiplies: 0,
            epilogue_dequant_multiplies: m * n,
            tensor_path_scale_applications: m * n * (k / MICRO_BLOCK as u64),
            mac_count: m * n * k,
        }
    }

    pub fn pergroup_mainloop(m: usize, n: usize, k: usize, group: usize) -> Self {
        let (m, n, k, g) = (m as u64, n as u64, k as u64, group as u64);
        Self {
            mainloop_dequant_multiplies: m * n * (k / g),
            epilogue_dequant_multiplies: 0,
            tensor_path_scale_applications: 0,
            mac_count: m * n * k,
        }
    }

    pub fn total_dequant_multiplies(&self) -> u64 {
        self.mainloop_dequant_multiplies + self.epilogue_dequant_multiplies
    }

    fn add(mut self, o: Self) -> Self {
        self.mainloop_dequant_multiplies += o.mainloop_dequant_multiplies;
        self.epilogue_dequant_multiplies += o.epilogue_dequant_multiplies;
        self.tensor_path_scale_applications += o.tensor_path_scale_applications;
        self.mac_count += o.mac_count;
        self
    }
}

fn decode_table(fmt: Fp8Format) -> [f64; 256] {
    std::array::from_fn(|c| fmt.decode(c as u8) as f64)
}

fn matrix_dims(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::ShapeMismatch(format!("{what} must be 2-D, got {shape:?}"))),
    }
}

fn decode_codes(codes: &[u8], fmt: Fp8Format) -> Vec<f64> {
    let lut = decode_table(fmt);
    codes.iter().map(|&c| lut[c as usize]).collect()
}

/// `Y = X · Wᵀ` with the two-level activation scales split between the
/// accumulator (micro-scales) and the epilogue (level-1 and weight scales).
pub fn gemm_mx_epilogue(x: &TwoLevelQuant, w: &PerTensorQuant) -> Result<(Mat64, GemmCounters)> {
    let (m, k) = matrix_dims(&x.shape, "activation")?;
    let (n, kw) = matrix_dims(&w.shape, "weight")?;
    if k != kw {
        return Err(Error::ShapeMismatch(format!("inner dimensions {k} and {kw} differ")));
    }
    if x.spans_per_row() != 1 {
        return Err(Error::InvalidArgument(format!(
            "epilogue dequantization needs one level-1 scale per row, got k1 = {} for K = {k}",
            x.k1
        )));
    }
    let xd = decode_codes(&x.codes, x.format);
    let wd = decode_codes(&w.codes, w.format);
    let ss: Vec<f64> = x.micro_scales.iter().map(|c| c.value() as f64).collect();
    let blocks = k / MICRO_BLOCK;
    let s_w = w.scale as f64;
    let mut out = vec![0.0; m * n];
    let counters = out
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, out_row)| {
            let mut c = GemmCounters::default();
            let xrow = &xd[i * k..(i + 1) * k];
            let ss_row = &ss[i * blocks..(i + 1) * blocks];
            let s_x = x.global_scales[i] as f64;
            for (j, y) in out_row.iter_mut().enumerate() {
                let wrow = &wd[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (b, &ss_b) in ss_row.iter().enumerate() {
                    let r = b * MICRO_BLOCK..(b + 1) * MICRO_BLOCK;
                    let part: f64 = xrow[r.clone()].iter().zip(&wrow[r]).map(|(a, b)| a * b).sum();
                    acc += ss_b * part;
                    c.tensor_path_scale_applications += 1;
                    c.mac_count += MICRO_BLOCK as u64;
                }
                *y = acc * (s_w * s_x);
                c.epilogue_dequant_multiplies += 1;
            }
            c
        })
        .reduce(GemmCounters::default, GemmCounters::add);
    Ok((Mat64 { rows: m, cols: n, data: out }, counters))
}

/// `Y = X · Wᵀ` with both operands quantized per group along `K`; every
/// group partial sum is dequantized in the main loop.
pub fn gemm_pergroup_mainloop(x: &PerGroupQuant, w: &PerGroupQuant) -> Result<(Mat64, GemmCounters)> {
    let (m, k) = matrix_dims(&x.shape, "activation")?;
    let (n, kw) = matrix_dims(&w.shape, "weight")?;
    if k != kw {
        return Err(Error::ShapeMismatch(format!("inner dimensions {k} and {kw} differ")));
    }
    let g = x.group_size;
    if w.group_size != g {
        return Err(Error::InvalidArgument(format!("group sizes {g} and {} differ", w.group_size)));
    }
    if k % g != 0 {
        return Err(Error::InvalidArgument(format!("K = {k} is not divisible by group size {g}")));
    }
    let groups = k / g;
    let xd = decode_codes(&x.codes, x.format);
    let wd = decode_codes(&w.codes, w.format);
    let mut out = vec![0.0; m * n];
    let counters = out
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, out_row)| {
            let mut c = GemmCounters::default();
            let xrow = &xd[i * k..(i + 1) * k];
            for (j, y) in out_row.iter_mut().enumerate() {
                let wrow = &wd[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for gi in 0..groups {
                    let r = gi * g..(gi + 1) * g;
                    let part: f64 = xrow[r.clone()].iter().zip(&wrow[r]).map(|(a, b)| a * b).sum();
                    let scale = x.scales[i * groups + gi] as f64 * w.scales[j * groups + gi] as f64;
                    acc += scale * part;
                    c.mainloop_dequant_multiplies += 1;
                    c.mac_count += g as u64;
                }
                *y = acc;
            }
            c
        })
        .reduce(GemmCounters::default, GemmCounters::add);
    Ok((Mat64 { rows: m, cols: n, data: out }, counters))
}

/// Plain `f64` GEMM: `a` is `M×K`, `b` is `K×N`, summed in increasing `k`.
pub fn gemm_oracle(a: &Mat64, b: &Mat64) -> Result<Mat64> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch(format!(
            "inner dimensions {} and {} differ",
            a.cols, b.rows
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, y) in row.iter_mut().enumerate() {
            *y = (0..k).map(|p| a.data[i * k + p] * b.data[p * n + j]).sum();
        }
    });
    Mat64::new(m, n, out)
}

fn dequant_f64(shape: &[usize], codes: &[u8], fmt: Fp8Format, scale: impl Fn(usize) -> f64) -> Result<Mat64> {
    let (r, c) = matrix_dims(shape, "operand")?;
    let lut = decode_table(fmt);
    let data = codes.iter().enumerate().map(|(i, &q)| lut[q as usize] * scale(i)).collect();
    Mat64::new(r, c, data)
}

/// Dequantizes in `f64` (code value times scale), without the `f32`
/// rounding of [`PerTensorQuant::dequantize`].
pub fn dequant_per_tensor_f64(q: &PerTensorQuant) -> Result<Mat64> {
    dequant_f64(&q.shape, &q.codes, q.format, |_| q.scale as f64)
}

pub fn dequant_per_group_f64(q: &PerGroupQuant) -> Result<Mat64> {
    dequant_f64(&q.shape, &q.codes, q.format, |i| q.scale_at(i) as f64)
}

pub fn dequant_two_level_f64(q: &TwoLevelQuant) -> Result<Mat64> {
    dequant_f64(&q.shape, &q.codes, q.format, |i| {
        q.global_scale_at(i) as f64 * q.micro_scale_at(i).value() as f64
    })
}
