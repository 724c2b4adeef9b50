//! A two-layer MLP regression trained with AdamW, with an optional FP8
//! forward path: activations are two-level quantized, weights are
//! per-tensor quantized with predicted scales, and both GEMMs run through
//! [`gemm_mx_epilogue`]. The backward pass is full precision.
//!
//! Paired runs (quantized and full precision) with the same seed share the
//! initialization and the data stream.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autoscale::{jit_scale_f64, ScaleSchedule, WeightTrajectory};
use crate::error::{Error, Result};
use crate::fp8::{E8m0Rounding, Fp8Format};
use crate::gemm::gemm_mx_epilogue;
use crate::optim::{max_abs_f64, AdamHyper, LrSchedule, OptimizerState};
use crate::quant::{quant_per_tensor_with_scale, quant_two_level};
use crate::tensor::{seeded_rng, SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
    pub batch: usize,
    pub lr: LrSchedule,
    pub hyper: AdamHyper,
    pub quantized: bool,
    pub format: Fp8Format,
    pub rescale_interval: u64,
    /// Standard deviation of the additive target noise.
    pub noise: f64,
    /// Smoothing window for [`TrainLog::final_loss`].
    pub final_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 2000,
            d_in: 32,
            hidden: 64,
            d_out: 8,
            batch: 32,
            lr: LrSchedule::Cosine { peak: 1e-3, warmup: 100, total: 2000, floor_frac: 0.1 },
            hyper: AdamHyper::default(),
            quantized: true,
            format: Fp8Format::E4M3,
            rescale_interval: 500,
            noise: 0.01,
            final_window: 50,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.d_in == 0 || self.hidden == 0 || self.d_out == 0 {
            return Err(Error::InvalidArgument("steps and all dimensions must be positive".into()));
        }
        if self.quantized && (!self.d_in.is_multiple_of(32) || !self.hidden.is_multiple_of(32)) {
            return Err(Error::InvalidArgument(format!(
                "quantized forward needs d_in and hidden divisible by 32, got {} and {}",
                self.d_in, self.hidden
            )));
        }
        if self.final_window == 0 {
            return Err(Error::InvalidArgument("final_window must be positive".into()));
        }
        self.hyper.validate()
    }
}

/// Scale bookkeeping for one weight tensor at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightScaleLog {
    /// Prediction before any re-scale at this step.
    pub s_pred: f64,
    /// Scale used to quantize the weights.
    pub s_auto: f64,
    pub s_jit: f64,
    pub max_abs: f64,
    pub violation: bool,
    pub saturated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: usize,
    pub eta: f64,
    pub loss: f64,
    /// One entry per weight matrix, input layer first.
    pub weights: [WeightScaleLog; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub rows: Vec<TrainRow>,
    pub rescale_counts: [u64; 2],
}

impl TrainLog {
    /// Mean loss over the last `final_window` steps.
    pub fn final_loss(&self) -> f64 {
        let w = self.config.final_window.min(self.rows.len());
        self.rows[self.rows.len() - w..].iter().map(|r| r.loss).sum::<f64>() / w as f64
    }

    /// Means of consecutive non-overlapping windows of `window` losses.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        self.rows.chunks_exact(window.max(1)).map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64).collect()
    }

    /// Weight-magnitude trajectory of weight matrix `which` (0 or 1) over
    /// the logged steps.
    pub fn trajectory(&self, which: usize) -> WeightTrajectory {
        let max_abs = self.rows.iter().map(|r| r.weights[which].max_abs).collect();
        let etas = self.rows.iter().take(self.rows.len().saturating_sub(1)).map(|r| r.eta).collect();
        WeightTrajectory { max_abs, etas }
    }

    pub fn violations(&self) -> usize {
        self.rows.iter().flat_map(|r| r.weights.iter()).filter(|w| w.violation).count()
    }

    pub fn saturated(&self) -> usize {
        self.rows.iter().flat_map(|r| r.weights.iter()).map(|w| w.saturated).sum()
    }
}

struct Layer {
    w: Vec<f64>,
    b: Vec<f64>,
    out: usize,
    inp: usize,
    opt_w: OptimizerState,
    opt_b: OptimizerState,
    sched: ScaleSchedule,
}

impl Layer {
    fn new(out: usize, inp: usize, rng: &mut SeededRng, cfg: &TrainConfig) -> Result<Self> {
        let std = (2.0 / inp as f64).sqrt();
        let w: Vec<f64> = (0..out * inp).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        let sched = ScaleSchedule::new(max_abs_f64(&w), cfg.format, cfg.rescale_interval)?;
        Ok(Self {
            opt_w: OptimizerState::new(w.len(), cfg.hyper)?,
            opt_b: OptimizerState::new(out, AdamHyper { weight_decay: 0.0, ..cfg.hyper })?,
            w,
            b: vec![0.0; out],
            out,
            inp,
            sched,
        })
    }

    /// Applies any due re-scale and returns this step's scale record.
    fn scale_step(&mut self) -> Result<WeightScaleLog> {
        let m = max_abs_f64(&self.w);
        let s_jit = jit_scale_f64(m, self.sched.format);
        let s_pred = self.sched.s;
        if self.sched.is_due() {
            self.sched.rescale(m)?;
        }
        Ok(WeightScaleLog {
            s_pred,
            s_auto: self.sched.s,
            s_jit,
            max_abs: m,
            violation: s_pred < m / self.sched.format.delta_max() as f64,
            saturated: 0,
        })
    }

    /// `x · Wᵀ + b` for a batch of rows.
    fn forward(&self, x: &[f64], batch: usize, quant: Option<(&mut WeightScaleLog, Fp8Format)>) -> Result<Vec<f64>> {
        let mut y = match quant {
            None => {
                let mut y = vec![0.0; batch * self.out];
                for i in 0..batch {
                    let xi = &x[i * self.inp..(i + 1) * self.inp];
                    for j in 0..self.out {
                        let wj = &self.w[j * self.inp..(j + 1) * self.inp];
                        y[i * self.out + j] = xi.iter().zip(wj).map(|(a, b)| a * b).sum();
                    }
                }
                y
            }
            Some((log, fmt)) => {
                let xt = to_tensor(vec![batch, self.inp], x)?;
                let wt = to_tensor(vec![self.out, self.inp], &self.w)?;
                let qx = quant_two_level(&xt, fmt, E8m0Rounding::CeilPow2)?;
                let (qw, sat) = quant_per_tensor_with_scale(&wt, fmt, self.sched.scale_f32())?;
                log.saturated = sat;
                gemm_mx_epilogue(&qx, &qw)?.0.data
            }
        };
        for row in y.chunks_exact_mut(self.out) {
            for (v, b) in row.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Gradients of `W` and `b` from the output gradient, plus the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut dw = vec![0.0; self.w.len()];
        let mut db = vec![0.0; self.out];
        let mut dx = vec![0.0; batch * self.inp];
        for i in 0..batch {
            let xi = &x[i * self.inp..(i + 1) * self.inp];
            for j in 0..self.out {
                let d = dy[i * self.out + j];
                db[j] += d;
                for k in 0..self.inp {
                    dw[j * self.inp + k] += d * xi[k];
                    dx[i * self.inp + k] += d * self.w[j * self.inp + k];
                }
            }
        }
        (dw, db, dx)
    }

    fn update(&mut self, dw: &[f64], db: &[f64], eta: f64) -> Result<()> {
        self.opt_w.step(&mut self.w, dw, eta)?;
        self.opt_b.step(&mut self.b, db, eta)?;
        self.sched.advance(eta);
        Ok(())
    }
}

fn relu(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&v| v.max(0.0)).collect()
}

fn to_tensor(shape: Vec<usize>, xs: &[f64]) -> Result<Tensor> {
    Tensor::new(shape, xs.iter().map(|&v| v as f32).collect())
}

const DIVERGENCE_LOSS: f64 = 1e6;

/// Trains the MLP on `y = A x + noise` and logs every step. The logged
/// loss is always a full-precision evaluation of the current weights; with
/// quantization on, the output gradient comes from the quantized forward
/// pass and is back-propagated through full-precision activations.
pub fn train(cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let mut init_rng = seeded_rng(cfg.seed);
    let mut data_rng = seeded_rng(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let a_std = 1.0 / (cfg.d_in as f64).sqrt();
    let a: Vec<f64> = (0..cfg.d_out * cfg.d_in).map(|_| a_std * init_rng.sample::<f64, _>(StandardNormal)).collect();
    let mut l1 = Layer::new(cfg.hidden, cfg.d_in, &mut init_rng, cfg)?;
    let mut l2 = Layer::new(cfg.d_out, cfg.hidden, &mut init_rng, cfg)?;
    let (b, d_in, d_out) = (cfg.batch, cfg.d_in, cfg.d_out);
    let mut rows = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let eta = cfg.lr.at(step as u64);
        let x: Vec<f64> = (0..b * d_in).map(|_| data_rng.sample(StandardNormal)).collect();
        let mut y = vec![0.0; b * d_out];
        for i in 0..b {
            for j in 0..d_out {
                let ax: f64 = (0..d_in).map(|k| a[j * d_in + k] * x[i * d_in + k]).sum();
                y[i * d_out + j] = ax + cfg.noise * data_rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut logs = [l1.scale_step()?, l2.scale_step()?];
        let [log1, log2] = &mut logs;
        let pre = l1.forward(&x, b, None)?;
        let h = relu(&pre);
        let out = l2.forward(&h, b, None)?;
        let n = (b * d_out) as f64;
        let loss = out.iter().zip(&y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / n;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged { step, loss });
        }
        let out = if cfg.quantized {
            let h_q = relu(&l1.forward(&x, b, Some((log1, cfg.format)))?);
            l2.forward(&h_q, b, Some((log2, cfg.format)))?
        } else {
            out
        };
        let dout: Vec<f64> = out.iter().zip(&y).map(|(o, t)| 2.0 * (o - t) / n).collect();
        let (dw2, db2, dh) = l2.backward(&h, &dout, b);
        let dpre: Vec<f64> = dh.iter().zip(&pre).map(|(d, &p)| if p > 0.0 { *d } else { 0.0 }).collect();
        let (dw1, db1, _) = l1.backward(&x, &dpre, b);
        l1.update(&dw1, &db1, eta)?;
        l2.update(&dw2, &db2, eta)?;
        rows.push(TrainRow { step, eta, loss, weights: logs });
    }
    Ok(TrainLog { config: *cfg, rows, rescale_counts: [l1.sched.rescale_count, l2.sched.rescale_count] })
}

/// Relative gap `|L_q - L_fp| / L_fp` between the final losses of a
/// quantized run and its full-precision twin.
pub fn paired_loss_gap(cfg: &TrainConfig) -> Result<(TrainLog, TrainLog, f64)> {
    let q = train(&TrainConfig { quantized: true, ..*cfg })?;
    let fp = train(&TrainConfig { quantized: false, ..*cfg })?;
    let gap = (q.final_loss() - fp.final_loss()).abs() / fp.final_loss();
    Ok((q, fp, gap))
}
