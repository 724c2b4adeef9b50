use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use mossq_core::autoscale::{replay, simulate_trajectory, TrajectorySpec};
use mossq_core::gemm::{
    dequant_per_group_f64, dequant_per_tensor_f64, dequant_two_level_f64, gemm_mx_epilogue, gemm_oracle,
    gemm_pergroup_mainloop, GemmCounters, Mat64,
};
use mossq_core::optim::{theorem2_check, AdamHyper, GradientFamily, LrSchedule};
use mossq_core::quant::{self, MICRO_BLOCK};
use mossq_core::snr::{theorem1_harness, SnrParams};
use mossq_core::toytrain::{train, TrainConfig};
use mossq_core::{
    tensor_randn, tensor_read, tensor_write, DType, Dist, E8m0Code, E8m0Rounding, Fp8Format, PerGroupQuant,
    PerTensorQuant, QuantizedTensor, Scheme, TensorFile, TwoLevelQuant,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::manifest::{write_csv, write_json, RunManifest};

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let fmt: Fp8Format = cli.format.into();
    let out = cli.out.as_deref();
    let seed = || match cli.seed {
        Some(s) => s,
        None => {
            eprintln!("seed: {DEFAULT_SEED} (default)");
            DEFAULT_SEED
        }
    };
    let mut outputs: Vec<PathBuf> = out.iter().map(|p| p.to_path_buf()).collect();
    let mut used_seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.command {
        Command::CodecTable => codec_table(fmt, out)?,
        Command::Randn(a) => {
            used_seed = seed();
            let path = out.ok_or_else(|| anyhow!("randn requires --out"))?;
            tensor_write(&tensor_randn(&a.shape, used_seed, a.dist.dist())?, path)?;
        }
        Command::Quantize(a) => outputs = quantize(a, fmt, out)?,
        Command::Dequantize(a) => dequantize(a, fmt, out)?,
        Command::Snr(a) => {
            used_seed = seed();
            snr(a, fmt, used_seed, out)?
        }
        Command::BoundCheck(a) => {
            used_seed = seed();
            bound_check(a, used_seed, out)?
        }
        Command::Autoscale(a) => {
            used_seed = seed();
            autoscale(a, fmt, used_seed, out)?
        }
        Command::Gemm(a) => {
            if a.verify {
                used_seed = seed();
            }
            gemm(a, fmt, used_seed, out)?
        }
        Command::Train(a) => {
            used_seed = seed();
            train_cmd(a, fmt, used_seed, out)?
        }
    }
    if let Some(primary) = outputs.first() {
        let manifest = RunManifest {
            subcommand: cli.command.name(),
            config: cli,
            seed: used_seed,
            version: env!("CARGO_PKG_VERSION"),
            outputs: outputs.clone(),
        };
        manifest.write(primary)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CodeRow {
    code: u8,
    hex: String,
    sign: u8,
    exponent: u8,
    mantissa: u8,
    value: f64,
    class: &'static str,
}

fn codec_table(fmt: Fp8Format, out: Option<&Path>) -> anyhow::Result<()> {
    let m = fmt.mantissa_bits();
    let rows = (0..=255u8).map(|c| {
        let v = fmt.decode(c);
        let exponent = (c & 0x7F) >> m;
        let class = if fmt.is_nan(c) {
            "nan"
        } else if v.is_infinite() {
            "inf"
        } else if v == 0.0 {
            "zero"
        } else if exponent == 0 {
            "subnormal"
        } else {
            "normal"
        };
        CodeRow {
            code: c,
            hex: format!("0x{c:02x}"),
            sign: c >> 7,
            exponent,
            mantissa: c & ((1 << m) - 1),
            value: v as f64,
            class,
        }
    });
    write_csv(out, rows)
}

/// Sidecar describing how to turn a code file back into values.
#[derive(Debug, Serialize, Deserialize)]
struct QuantMeta {
    scheme: Scheme,
    format: Fp8Format,
    shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    group_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scales: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rounding: Option<E8m0Rounding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    global_scales: Option<Vec<f32>>,
    /// E8M0 micro-scale file, relative to the sidecar's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    micro_scales_path: Option<PathBuf>,
}

fn code_dtype(fmt: Fp8Format) -> DType {
    match fmt {
        Fp8Format::E4M3 => DType::E4m3,
        Fp8Format::E5M2 => DType::E5m2,
    }
}

fn quantize(a: &QuantizeArgs, fmt: Fp8Format, out: Option<&Path>) -> anyhow::Result<Vec<PathBuf>> {
    let out = out.ok_or_else(|| anyhow!("quantize requires --out"))?;
    let x = tensor_read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let meta_path = a.meta.clone().unwrap_or_else(|| out.with_extension("json"));
    let mut outputs = vec![out.to_path_buf(), meta_path.clone()];
    let q: QuantizedTensor = match a.scheme {
        SchemeArg::Tensor => quant::quant_per_tensor(&x, fmt)?.into(),
        SchemeArg::Group => quant::quant_per_group(&x, fmt, a.group_size)?.into(),
        SchemeArg::Mx2 => quant::quant_two_level_k1(&x, fmt, a.rounding.into(), a.k1.unwrap_or(x.last_dim()))?.into(),
    };
    TensorFile::codes(code_dtype(fmt), q.shape().to_vec(), q.codes().to_vec())?.write(out)?;
    let mut meta = QuantMeta {
        scheme: q.scheme(),
        format: fmt,
        shape: q.shape().to_vec(),
        scale: None,
        group_size: None,
        scales: None,
        rounding: None,
        k1: None,
        global_scales: None,
        micro_scales_path: None,
    };
    match &q {
        QuantizedTensor::PerTensor(p) => meta.scale = Some(p.scale),
        QuantizedTensor::PerGroup(p) => {
            meta.group_size = Some(p.group_size);
            meta.scales = Some(p.scales.clone());
        }
        QuantizedTensor::TwoLevel(p) => {
            let scales_path = out.with_extension("scales.mosst");
            let mut shape = p.shape.clone();
            *shape.last_mut().unwrap() /= MICRO_BLOCK;
            let bits = p.micro_scales.iter().map(|c| c.bits()).collect();
            TensorFile::codes(DType::E8m0, shape, bits)?.write(&scales_path)?;
            meta.rounding = Some(p.rounding);
            meta.k1 = Some(p.k1);
            meta.global_scales = Some(p.global_scales.clone());
            meta.micro_scales_path = scales_path.file_name().map(PathBuf::from);
            outputs.push(scales_path);
        }
    }
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(&meta_path, text).with_context(|| format!("writing {}", meta_path.display()))?;
    Ok(outputs)
}

fn dequantize(a: &DequantizeArgs, fmt: Fp8Format, out: Option<&Path>) -> anyhow::Result<()> {
    let out = out.ok_or_else(|| anyhow!("dequantize requires --out"))?;
    let meta_text = std::fs::read_to_string(&a.meta).with_context(|| format!("reading {}", a.meta.display()))?;
    let meta: QuantMeta = serde_json::from_str(&meta_text)?;
    if meta.format != fmt {
        bail!("metadata format {} differs from --format {}", meta.format.name(), fmt.name());
    }
    let file = TensorFile::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if file.dtype() != code_dtype(fmt) || file.shape() != meta.shape.as_slice() {
        bail!("code file {:?} {:?} does not match metadata", file.dtype(), file.shape());
    }
    let TensorFile::Codes { codes, shape, .. } = file else {
        bail!("expected a code file, got f32 data");
    };
    let missing = |field: &str| anyhow!("metadata for {} lacks {field}", meta.scheme.name());
    let q: QuantizedTensor = match meta.scheme {
        Scheme::Tensor => PerTensorQuant { format: fmt, shape, codes, scale: meta.scale.ok_or_else(|| missing("scale"))? }.into(),
        Scheme::Group => PerGroupQuant {
            format: fmt,
            shape,
            codes,
            group_size: meta.group_size.ok_or_else(|| missing("group_size"))?,
            scales: meta.scales.clone().ok_or_else(|| missing("scales"))?,
        }
        .into(),
        Scheme::Mx2 => {
            let rel = meta.micro_scales_path.as_ref().ok_or_else(|| missing("micro_scales_path"))?;
            let path = a.meta.parent().unwrap_or(Path::new(".")).join(rel);
            let scales = TensorFile::read(&path).with_context(|| format!("reading {}", path.display()))?;
            if scales.dtype() != DType::E8m0 {
                bail!("{} is not an E8M0 file", path.display());
            }
            let TensorFile::Codes { codes: bits, .. } = scales else { unreachable!() };
            TwoLevelQuant {
                format: fmt,
                shape,
                codes,
                rounding: meta.rounding.ok_or_else(|| missing("rounding"))?,
                k1: meta.k1.ok_or_else(|| missing("k1"))?,
                global_scales: meta.global_scales.clone().ok_or_else(|| missing("global_scales"))?,
                micro_scales: bits.into_iter().map(E8m0Code::from_bits).collect::<Result<_, _>>()?,
            }
            .into()
        }
    };
    tensor_write(&q.dequantize(), out)?;
    Ok(())
}

#[derive(Serialize)]
struct SnrRow {
    trial: usize,
    seed: u64,
    scheme: &'static str,
    empirical_db: f64,
    model_db: f64,
}

fn snr(a: &SnrArgs, fmt: Fp8Format, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let params = SnrParams { format: fmt, group_size: a.group_size, rounding: a.rounding.into() };
    let stats = theorem1_harness(a.trials, a.size, a.dist.dist(), &params, seed)?;
    eprintln!(
        "mean SNR dB: tensor {:.4}, group {:.4}, mx2 {:.4}; ordered fraction {:.4}",
        stats.mean_snr_db[0], stats.mean_snr_db[1], stats.mean_snr_db[2], stats.ordered_fraction
    );
    let rows = stats.trials.iter().flat_map(|t| {
        t.reports.iter().map(move |r| SnrRow {
            trial: t.trial,
            seed: t.seed,
            scheme: r.scheme.name(),
            empirical_db: r.empirical_snr_db,
            model_db: r.model_snr_db,
        })
    });
    write_csv(out, rows)
}

#[derive(Serialize)]
struct BoundRow {
    trial: usize,
    family: &'static str,
    max_ratio: f64,
    max_bound_ratio: f64,
    worst_step: u64,
    violations: u64,
}

fn bound_check(a: &BoundCheckArgs, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    if a.steps == 0 || a.trials == 0 || a.elements == 0 {
        bail!("steps, trials and elements must be positive");
    }
    let hyper = AdamHyper { beta1: a.beta1, beta2: a.beta2, eps: a.eps, weight_decay: 0.0, decoupled_decay: true };
    let rows = (0..a.trials)
        .into_par_iter()
        .map(|i| {
            let (family, name) = if a.adversarial {
                (GradientFamily::SparseSpike { spike_at: (i % a.steps) as u64 + 1 }, "sparse_spike")
            } else {
                (GradientFamily::Gaussian, "gaussian")
            };
            let grads = family.generate(a.steps, a.elements, seed.wrapping_add(i as u64));
            let r = theorem2_check(&grads, hyper, a.eta)?;
            Ok(BoundRow {
                trial: i,
                family: name,
                max_ratio: r.max_ratio,
                max_bound_ratio: r.max_bound_ratio,
                worst_step: r.worst_step,
                violations: r.violations,
            })
        })
        .collect::<mossq_core::Result<Vec<_>>>()?;
    let violations: u64 = rows.iter().map(|r| r.violations).sum();
    let worst = rows.iter().map(|r| r.max_bound_ratio).fold(0.0, f64::max);
    eprintln!("violations: {violations}; worst |update| / bound: {worst:.9}");
    write_csv(out, rows)
}

#[derive(Serialize)]
struct ScaleCsvRow {
    t: u64,
    s_auto: f64,
    s_jit: f64,
}

fn autoscale(a: &AutoscaleArgs, fmt: Fp8Format, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let lr = match a.eta_schedule {
        EtaScheduleArg::Const => LrSchedule::Constant { eta: a.eta },
        EtaScheduleArg::Cosine => LrSchedule::Cosine { peak: a.eta, warmup: a.warmup, total: a.steps as u64, floor_frac: 0.1 },
    };
    let spec = TrajectorySpec {
        elements: a.elements,
        steps: a.steps,
        seed,
        hyper: AdamHyper { weight_decay: a.weight_decay, ..AdamHyper::default() },
        lr,
        ..TrajectorySpec::default()
    };
    let run = replay(&simulate_trajectory(&spec)?, fmt, a.interval)?;
    eprintln!(
        "re-scales: {}; dominance violations: {}; max overshoot {:.6}; mean overshoot {:.6}",
        run.rescale_count, run.violations, run.max_overshoot, run.mean_overshoot
    );
    write_csv(out, run.rows.iter().map(|r| ScaleCsvRow { t: r.t, s_auto: r.s_auto, s_jit: r.s_jit }))
}

#[derive(Serialize)]
struct GemmReport {
    scheme: GemmSchemeArg,
    format: Fp8Format,
    m: usize,
    n: usize,
    k: usize,
    group_size: Option<usize>,
    verified: bool,
    max_rel_error: Option<f64>,
    mean_rel_error: Option<f64>,
    frobenius_rel_error: Option<f64>,
    counters: GemmCounters,
}

fn row_errors(y: &Mat64, reference: &Mat64) -> (f64, f64, f64) {
    let (mut max, mut sum, mut num, mut den) = (0.0f64, 0.0, 0.0, 0.0);
    for i in 0..y.rows {
        let (n, d) = y.row(i).iter().zip(reference.row(i)).fold((0.0, 0.0), |(n, d), (a, b)| (n + (a - b) * (a - b), d + b * b));
        let e = if d > 0.0 { (n / d).sqrt() } else { n.sqrt() };
        max = max.max(e);
        sum += e;
        num += n;
        den += d;
    }
    (max, sum / y.rows as f64, (num / den).sqrt())
}

fn gemm(a: &GemmArgs, fmt: Fp8Format, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let (m, n, k) = (a.m, a.n, a.k);
    if m == 0 || n == 0 || k == 0 {
        bail!("m, n and k must be positive");
    }
    let group = match a.scheme {
        GemmSchemeArg::Mx2 if k % MICRO_BLOCK != 0 => {
            return Err(mossq_core::Error::InvalidArgument(format!("mx2 needs K divisible by {MICRO_BLOCK}, got {k}")).into())
        }
        GemmSchemeArg::Pergroup if a.group_size == 0 || k % a.group_size != 0 => {
            return Err(mossq_core::Error::InvalidArgument(format!("K = {k} is not divisible by group size {}", a.group_size)).into())
        }
        GemmSchemeArg::Mx2 => None,
        GemmSchemeArg::Pergroup => Some(a.group_size),
    };
    let mut report = GemmReport {
        scheme: a.scheme,
        format: fmt,
        m,
        n,
        k,
        group_size: group,
        verified: a.verify,
        max_rel_error: None,
        mean_rel_error: None,
        frobenius_rel_error: None,
        counters: match group {
            None => GemmCounters::mx_epilogue(m, n, k),
            Some(g) => GemmCounters::pergroup_mainloop(m, n, k, g),
        },
    };
    if a.verify {
        let x = tensor_randn(&[m, k], seed, Dist::Gaussian)?;
        let w = tensor_randn(&[n, k], seed.wrapping_add(1), Dist::Gaussian)?;
        let (y, reference, counters) = match group {
            None => {
                let qx = quant::quant_two_level(&x, fmt, E8m0Rounding::CeilPow2)?;
                let qw = quant::quant_per_tensor(&w, fmt)?;
                let (y, c) = gemm_mx_epilogue(&qx, &qw)?;
                (y, gemm_oracle(&dequant_two_level_f64(&qx)?, &dequant_per_tensor_f64(&qw)?.transpose())?, c)
            }
            Some(g) => {
                let qx = quant::quant_per_group(&x, fmt, g)?;
                let qw = quant::quant_per_group(&w, fmt, g)?;
                let (y, c) = gemm_pergroup_mainloop(&qx, &qw)?;
                (y, gemm_oracle(&dequant_per_group_f64(&qx)?, &dequant_per_group_f64(&qw)?.transpose())?, c)
            }
        };
        let (max, mean, frob) = row_errors(&y, &reference);
        report.max_rel_error = Some(max);
        report.mean_rel_error = Some(mean);
        report.frobenius_rel_error = Some(frob);
        report.counters = counters;
    }
    if a.counters {
        let c = &report.counters;
        eprintln!(
            "main-loop dequant multiplies {}; epilogue dequant multiplies {}; tensor-path scale applications {}; MACs {}",
            c.mainloop_dequant_multiplies, c.epilogue_dequant_multiplies, c.tensor_path_scale_applications, c.mac_count
        );
    }
    write_json(out, &report)
}

#[derive(Serialize)]
struct TrainCsvRow {
    step: usize,
    eta: f64,
    loss: f64,
    s_auto_w1: f64,
    s_jit_w1: f64,
    violation_w1: bool,
    saturated_w1: usize,
    s_auto_w2: f64,
    s_jit_w2: f64,
    violation_w2: bool,
    saturated_w2: usize,
}

fn train_cmd(a: &TrainArgs, fmt: Fp8Format, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = TrainConfig {
        seed,
        steps: a.steps,
        hidden: a.hidden,
        d_out: a.d_out,
        batch: a.batch,
        lr: LrSchedule::Cosine { peak: a.peak_lr, warmup: a.warmup, total: a.steps as u64, floor_frac: 0.1 },
        hyper: AdamHyper { weight_decay: a.weight_decay, ..AdamHyper::default() },
        quantized: a.quant == OnOff::On,
        format: fmt,
        rescale_interval: a.interval,
        ..TrainConfig::default()
    };
    let log = train(&cfg)?;
    eprintln!(
        "final smoothed loss {:.6}; bound violations {}; saturated weight codes {}",
        log.final_loss(),
        log.violations(),
        log.saturated()
    );
    let rows = log.rows.iter().map(|r| {
        let [w1, w2] = &r.weights;
        TrainCsvRow {
            step: r.step,
            eta: r.eta,
            loss: r.loss,
            s_auto_w1: w1.s_auto,
            s_jit_w1: w1.s_jit,
            violation_w1: w1.violation,
            saturated_w1: w1.saturated,
            s_auto_w2: w2.s_auto,
            s_jit_w2: w2.s_jit,
            violation_w2: w2.violation,
            saturated_w2: w2.saturated,
        }
    });
    write_csv(out, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_errors_per_row_and_overall() {
        let reference = Mat64::new(2, 2, vec![3.0, 4.0, 1.0, 0.0]).unwrap();
        let y = Mat64::new(2, 2, vec![3.0, 4.0, 1.5, 0.0]).unwrap();
        let (max, mean, frob) = row_errors(&y, &reference);
        assert_eq!(max, 0.5);
        assert_eq!(mean, 0.25);
        assert!((frob - 0.5 / 26f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn meta_omits_unused_fields() {
        let meta = QuantMeta {
            scheme: Scheme::Tensor,
            format: Fp8Format::E4M3,
            shape: vec![2],
            scale: Some(0.5),
            group_size: None,
            scales: None,
            rounding: None,
            k1: None,
            global_scales: None,
            micro_scales_path: None,
        };
        let text = serde_json::to_string(&meta).unwrap();
        assert_eq!(text, r#"{"scheme":"tensor","format":"e4m3","shape":[2],"scale":0.5}"#);
        let back: QuantMeta = serde_json::from_str(&text).unwrap();
        assert_eq!(back.scale, Some(0.5));
    }
}
