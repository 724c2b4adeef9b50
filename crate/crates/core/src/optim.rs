//! Adam / AdamW from scratch, learning-rate schedules, and empirical checks
//! of the per-step update bound and the weight-magnitude bound.
//!
//! Parameters and moments are kept in `f64` so bound checks are limited by
//! the optimizer's math rather than by storage rounding.
//!
//! ```text
//! m_t = β1 m_{t-1} + (1-β1) g_t          m̂_t = m_t / (1-β1^t)
//! v_t = β2 v_{t-1} + (1-β2) g_t²         v̂_t = v_t / (1-β2^t)
//! Δ_t = η m̂_t / (√v̂_t + ε)
//! W_{t+1} = W_t - Δ_t - η λ W_t          (AdamW, decoupled decay)
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{seeded_rng, Tensor};

/// Relative slack for floating-point evaluation of the bound. The bound is
/// met with equality at `t = 1` (`|Δ_1| = η`), where rounding alone can put
/// the computed ratio one ulp above it.
pub const BOUND_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// AdamW when true; classic Adam with L2 folded into the gradient
    /// otherwise.
    pub decoupled_decay: bool,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.1, decoupled_decay: true }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps >= 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub hyper: AdamHyper,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of completed steps.
    pub t: u64,
}

impl OptimizerState {
    pub fn new(len: usize, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self { hyper, m: vec![0.0; len], v: vec![0.0; len], t: 0 })
    }

    /// One optimizer step with learning rate `eta`. Updates `w` in place and
    /// returns the effective update `Δ_t` (decay term excluded).
    pub fn step(&mut self, w: &mut [f64], g: &[f64], eta: f64) -> Result<Vec<f64>> {
        if w.len() != self.m.len() || g.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "weights {}, gradient {}, state {}",
                w.len(),
                g.len(),
                self.m.len()
            )));
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite gradient {} at {i}", g[i])));
        }
        let AdamHyper { beta1, beta2, eps, weight_decay, decoupled_decay } = self.hyper;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let mut delta = Vec::with_capacity(w.len());
        for i in 0..w.len() {
            let gi = if decoupled_decay { g[i] } else { g[i] + weight_decay * w[i] };
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * gi;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let d = eta * m_hat / (v_hat.sqrt() + eps);
            let decay = if decoupled_decay { eta * weight_decay * w[i] } else { 0.0 };
            w[i] -= d + decay;
            delta.push(d);
        }
        Ok(delta)
    }
}

/// Tensor-level convenience wrapper around [`OptimizerState::step`].
pub fn adamw_step(w: &Tensor, g: &Tensor, state: &mut OptimizerState, eta: f64) -> Result<(Tensor, Tensor)> {
    if w.shape() != g.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", w.shape(), g.shape())));
    }
    let mut wd: Vec<f64> = w.data().iter().map(|&x| x as f64).collect();
    let gd: Vec<f64> = g.data().iter().map(|&x| x as f64).collect();
    let delta = state.step(&mut wd, &gd, eta)?;
    let to_t = |v: Vec<f64>| Tensor::new(w.shape().to_vec(), v.into_iter().map(|x| x as f32).collect());
    Ok((to_t(wd)?, to_t(delta)?))
}

/// `max(1, (1-β1^t) / √(1-β2^t))`.
pub fn update_bound_coefficient(t: u64, beta1: f64, beta2: f64) -> f64 {
    let t = t as i32;
    ((1.0 - beta1.powi(t)) / (1.0 - beta2.powi(t)).sqrt()).max(1.0)
}

/// Exact supremum of `|Δ_t| / η` over all gradient histories (ε = 0).
///
/// `m_t` and `v_t` are weighted sums `Σ a_i g_i` and `Σ b_i g_i²`, so by
/// Cauchy-Schwarz `|m_t| / √v_t ≤ √(Σ a_i² / b_i)`, with equality for
/// `g_i ∝ a_i / b_i`. See [`sup_attaining_gradients`].
pub fn update_sup_coefficient(t: u64, beta1: f64, beta2: f64) -> f64 {
    let r = beta1 * beta1 / beta2;
    let sum: f64 = (0..t).map(|j| r.powi(j as i32)).sum();
    let t = t as i32;
    (1.0 - beta1) / (1.0 - beta2).sqrt() * sum.sqrt() * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t))
}

/// The scalar gradient history of length `t` whose final update reaches
/// [`update_sup_coefficient`]: `g_i = (β1/β2)^(t-i)`.
pub fn sup_attaining_gradients(t: u64, beta1: f64, beta2: f64) -> Vec<Vec<f64>> {
    (1..=t).map(|i| vec![(beta1 / beta2).powi((t - i) as i32)]).collect()
}

/// Learning rate as a function of the (0-based) step index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { eta: f64 },
    /// Linear warmup to `peak`, then cosine decay to `floor_frac * peak` at
    /// `total` steps.
    Cosine { peak: f64, warmup: u64, total: u64, floor_frac: f64 },
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { eta } => eta,
            LrSchedule::Cosine { peak, warmup, total, floor_frac } => {
                if step < warmup {
                    return peak * (step + 1) as f64 / warmup as f64;
                }
                let span = total.saturating_sub(warmup).max(1) as f64;
                let p = ((step - warmup) as f64 / span).min(1.0);
                let floor = floor_frac * peak;
                floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            LrSchedule::Constant { eta } => eta,
            LrSchedule::Cosine { peak, .. } => peak,
        }
    }
}

/// Families of gradient sequences used to probe the update bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradientFamily {
    /// i.i.d. standard normal per element and step.
    Gaussian,
    /// Zero until `spike_at` (1-based), then a single nonzero gradient, then zero.
    SparseSpike { spike_at: u64 },
    /// A fixed random nonzero gradient repeated every step.
    Constant,
}

impl GradientFamily {
    pub fn generate(&self, steps: usize, elements: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        let draw = |rng: &mut crate::tensor::SeededRng| -> Vec<f64> {
            (0..elements)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    if z == 0.0 {
                        1.0
                    } else {
                        z
                    }
                })
                .collect()
        };
        match *self {
            GradientFamily::Gaussian => (0..steps).map(|_| draw(&mut rng)).collect(),
            GradientFamily::SparseSpike { spike_at } => {
                let spike = draw(&mut rng);
                (1..=steps as u64)
                    .map(|t| if t == spike_at { spike.clone() } else { vec![0.0; elements] })
                    .collect()
            }
            GradientFamily::Constant => {
                let g = draw(&mut rng);
                vec![g; steps]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub steps: u64,
    pub checks: u64,
    pub violations: u64,
    /// Largest `|Δ_t| / η` seen.
    pub max_ratio: f64,
    /// Largest `|Δ_t| / (η · coefficient(t))`; above 1 means violated.
    pub max_bound_ratio: f64,
    /// Step at which `max_bound_ratio` occurred.
    pub worst_step: u64,
}

impl BoundReport {
    fn empty() -> Self {
        Self { steps: 0, checks: 0, violations: 0, max_ratio: 0.0, max_bound_ratio: 0.0, worst_step: 0 }
    }

    pub fn merge(mut self, o: &BoundReport) -> Self {
        self.steps += o.steps;
        self.checks += o.checks;
        self.violations += o.violations;
        self.max_ratio = self.max_ratio.max(o.max_ratio);
        if o.max_bound_ratio > self.max_bound_ratio {
            self.max_bound_ratio = o.max_bound_ratio;
            self.worst_step = o.worst_step;
        }
        self
    }
}

/// Runs Adam over a gradient sequence with constant `eta` and checks
/// `|Δ_t| ≤ η · max(1, (1-β1^t)/√(1-β2^t))` for every element and step.
/// The ε = 0 bound is used; ε only shrinks `|Δ_t|`.
pub fn theorem2_check(grads: &[Vec<f64>], hyper: AdamHyper, eta: f64) -> Result<BoundReport> {
    let first = grads
        .first()
        .ok_or_else(|| Error::InvalidArgument("gradient sequence is empty".into()))?;
    let n = first.len();
    let mut state = OptimizerState::new(n, AdamHyper { weight_decay: 0.0, ..hyper })?;
    let mut w = vec![0.0; n];
    let mut r = BoundReport::empty();
    for g in grads {
        let delta = state.step(&mut w, g, eta)?;
        let coef = update_bound_coefficient(state.t, hyper.beta1, hyper.beta2);
        r.steps += 1;
        for d in delta {
            let ratio = d.abs() / eta;
            let bound_ratio = ratio / coef;
            r.checks += 1;
            r.max_ratio = r.max_ratio.max(ratio);
            if bound_ratio > r.max_bound_ratio {
                r.max_bound_ratio = bound_ratio;
                r.worst_step = state.t;
            }
            if bound_ratio > 1.0 + BOUND_RTOL {
                r.violations += 1;
            }
        }
    }
    Ok(r)
}

/// Per-sequence results of a Monte-Carlo bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSweep {
    pub per_sequence: Vec<BoundReport>,
    pub total: BoundReport,
}

/// Checks the bound over `n_seqs` sequences; sequence `i` uses seed `seed + i`.
pub fn bound_monte_carlo(
    family: GradientFamily,
    n_seqs: usize,
    steps: usize,
    elements: usize,
    hyper: AdamHyper,
    eta: f64,
    seed: u64,
) -> Result<BoundSweep> {
    let per_sequence = (0..n_seqs)
        .into_par_iter()
        .map(|i| theorem2_check(&family.generate(steps, elements, seed.wrapping_add(i as u64)), hyper, eta))
        .collect::<Result<Vec<_>>>()?;
    let total = per_sequence.iter().fold(BoundReport::empty(), |acc, r| acc.merge(r));
    Ok(BoundSweep { per_sequence, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayBoundReport {
    pub steps: u64,
    pub violations: u64,
    /// Largest `(max|W_t| - max|W_0|) / (η t)` over the trajectory.
    pub max_growth_ratio: f64,
    pub final_max_abs: f64,
}

/// Simulates AdamW from `w0` over `grads` and checks
/// `max|W_t| ≤ max|W_0| + η t` at every step. Requires `λ η < 1`.
pub fn decay_bound_check(w0: &[f64], grads: &[Vec<f64>], hyper: AdamHyper, eta: f64) -> Result<DecayBoundReport> {
    if hyper.weight_decay * eta >= 1.0 {
        return Err(Error::InvalidArgument("weight decay must satisfy λ η < 1".into()));
    }
    let mut state = OptimizerState::new(w0.len(), hyper)?;
    let mut w = w0.to_vec();
    let max0 = max_abs_f64(w0);
    let mut rep = DecayBoundReport { steps: 0, violations: 0, max_growth_ratio: f64::NEG_INFINITY, final_max_abs: max0 };
    for g in grads {
        state.step(&mut w, g, eta)?;
        let t = state.t as f64;
        let m = max_abs_f64(&w);
        let bound = max0 + eta * t;
        rep.steps += 1;
        rep.max_growth_ratio = rep.max_growth_ratio.max((m - max0) / (eta * t));
        if m > bound * (1.0 + BOUND_RTOL) {
            rep.violations += 1;
        }
        rep.final_max_abs = m;
    }
    Ok(rep)
}

pub fn max_abs_f64(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact(eps: f64, wd: f64) -> AdamHyper {
        AdamHyper { eps, weight_decay: wd, ..AdamHyper::default() }
    }

    #[test]
    fn zero_gradient_only_decays() {
        let h = exact(1e-8, 0.1);
        let eta = 1e-2;
        let mut s = OptimizerState::new(3, h).unwrap();
        let mut w = vec![1.0, -2.0, 0.5];
        for _ in 0..50 {
            let d = s.step(&mut w, &[0.0; 3], eta).unwrap();
            assert!(d.iter().all(|&x| x == 0.0));
        }
        let f = (1.0 - eta * 0.1f64).powi(50);
        for (a, b) in w.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b * f).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_gradient_moves_by_eta() {
        let h = exact(1e-30, 0.0);
        let mut s = OptimizerState::new(2, h).unwrap();
        let mut w = vec![0.0; 2];
        for _ in 0..300 {
            let d = s.step(&mut w, &[0.3, -7.0], 1e-3).unwrap();
            for x in d {
                assert!((x.abs() / 1e-3 - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_scale_invariance() {
        let h = exact(1e-30, 0.0);
        let grads = GradientFamily::Gaussian.generate(200, 8, 3);
        let run = |scale: f64| {
            let mut s = OptimizerState::new(8, h).unwrap();
            let mut w = vec![0.0; 8];
            grads
                .iter()
                .map(|g| {
                    let g: Vec<f64> = g.iter().map(|x| x * scale).collect();
                    s.step(&mut w, &g, 1e-3).unwrap()
                })
                .collect::<Vec<_>>()
        };
        let base = run(1.0);
        for scale in [1e-3, 1e3] {
            for (a, b) in base.iter().flatten().zip(run(scale).iter().flatten()) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn moments_start_at_zero_and_v_nonnegative() {
        let mut s = OptimizerState::new(4, AdamHyper::default()).unwrap();
        assert!(s.m.iter().chain(&s.v).all(|&x| x == 0.0));
        let mut w = vec![0.0; 4];
        for g in GradientFamily::Gaussian.generate(100, 4, 1) {
            s.step(&mut w, &g, 1e-3).unwrap();
            assert!(s.v.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut s = OptimizerState::new(2, AdamHyper::default()).unwrap();
        assert!(matches!(s.step(&mut [0.0; 3], &[0.0; 3], 1e-3), Err(Error::ShapeMismatch(_))));
        assert!(matches!(s.step(&mut [0.0; 2], &[f64::NAN, 0.0], 1e-3), Err(Error::InvalidValue(_))));
        assert!(OptimizerState::new(1, AdamHyper { beta1: 1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn classic_adam_folds_decay_into_gradient() {
        let h = AdamHyper { decoupled_decay: false, eps: 1e-30, weight_decay: 0.5, ..Default::default() };
        let mut s = OptimizerState::new(1, h).unwrap();
        let mut w = vec![2.0];
        // g + λw = 0 → no move at all
        let d = s.step(&mut w, &[-1.0], 0.1).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(w[0], 2.0);
    }

    #[test]
    fn tensor_wrapper() {
        let w = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let g = Tensor::from_vec(vec![0.5, -0.5]).unwrap();
        let mut s = OptimizerState::new(2, exact(1e-30, 0.0)).unwrap();
        let (w1, d) = adamw_step(&w, &g, &mut s, 0.01).unwrap();
        assert_eq!(d.data(), &[0.01, -0.01]);
        assert!((w1.data()[0] - 0.99).abs() < 1e-6 && (w1.data()[1] - 2.01).abs() < 1e-6);
    }

    #[test]
    fn single_step_is_exactly_eta() {
        // With bias correction, m̂_1 = g and v̂_1 = g², so |Δ_1| = η; the
        // uncorrected coefficient (1-β1)/√(1-β2) ≈ 0.447 is below the
        // η bound that applies at t = 1.
        let coef = (1.0 - 0.9) / (1.0f64 - 0.95).sqrt();
        assert!((coef - 0.4472135955).abs() < 1e-9);
        assert_eq!(update_bound_coefficient(1, 0.9, 0.95), 1.0);
        let r = theorem2_check(&[vec![3.0, -0.2]], exact(1e-30, 0.0), 1e-3).unwrap();
        assert!((r.max_ratio - 1.0).abs() < 1e-12);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn sparse_spike_within_first_case_bound() {
        let h = exact(1e-30, 0.0);
        for spike_at in [1u64, 2, 5, 10, 50, 150] {
            let grads = GradientFamily::SparseSpike { spike_at }.generate(200, 16, spike_at);
            let r = theorem2_check(&grads, h, 1e-3).unwrap();
            assert_eq!(r.violations, 0, "spike at {spike_at}");
            // the spike step's update is (1-β1)/(1-β1^t) · √((1-β2^t)/(1-β2)) · η
            let t = spike_at as i32;
            let want = 0.1 / (1.0 - 0.9f64.powi(t)) * ((1.0 - 0.95f64.powi(t)) / 0.05).sqrt();
            assert!((r.max_ratio - want).abs() < 1e-9, "{} vs {want}", r.max_ratio);
        }
    }

    #[test]
    fn bound_coefficient_exceeds_one_mid_training() {
        assert!(update_bound_coefficient(20, 0.9, 0.95) > 1.09);
        assert!((update_bound_coefficient(5000, 0.9, 0.95) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn supremum_is_attained_and_exceeds_stated_bound_early() {
        let h = exact(1e-30, 0.0);
        for t in [1u64, 2, 3, 5, 10, 30, 100] {
            let sup = update_sup_coefficient(t, 0.9, 0.95);
            let r = theorem2_check(&sup_attaining_gradients(t, 0.9, 0.95), h, 1e-3).unwrap();
            assert!((r.max_ratio - sup).abs() < 1e-12, "t = {t}: {} vs {sup}", r.max_ratio);
        }
        assert!((update_sup_coefficient(1, 0.9, 0.95) - 1.0).abs() < 1e-15);
        // sup ≈ 1.0010 η at t = 3 while the stated coefficient is 1
        let sup3 = update_sup_coefficient(3, 0.9, 0.95);
        assert!((sup3 - 1.00099).abs() < 1e-4, "{sup3}");
        assert_eq!(update_bound_coefficient(3, 0.9, 0.95), 1.0);
        let r = theorem2_check(&sup_attaining_gradients(3, 0.9, 0.95), h, 1e-3).unwrap();
        assert!(r.violations >= 1);
        assert!(r.max_bound_ratio > 1.0009);
    }

    #[test]
    fn decay_bound_examples() {
        let eta = 1e-3;
        let w0 = vec![1.0, -0.5, 0.25];
        for wd in [0.1, 0.0] {
            let grads = GradientFamily::Gaussian.generate(2000, 3, 17);
            let r = decay_bound_check(&w0, &grads, exact(1e-8, wd), eta).unwrap();
            assert_eq!(r.violations, 0, "λ = {wd}");
        }
        // constant gradient pushing the largest element outward attains the bound
        let grads = vec![vec![-1.0, -1.0, -1.0]; 500];
        let r = decay_bound_check(&w0, &grads, exact(1e-30, 0.0), eta).unwrap();
        assert_eq!(r.violations, 0);
        assert!((r.final_max_abs - (1.0 + eta * 500.0)).abs() < 1e-10);
        assert!(r.max_growth_ratio > 1.0 - 1e-9);
        assert!(decay_bound_check(&w0, &grads, exact(1e-8, 2000.0), eta).is_err());
    }

    #[test]
    fn cosine_schedule_shape() {
        let s = LrSchedule::Cosine { peak: 1e-3, warmup: 10, total: 110, floor_frac: 0.1 };
        assert!((s.at(0) - 1e-4).abs() < 1e-15);
        assert!((s.at(9) - 1e-3).abs() < 1e-15);
        assert!((s.at(10) - 1e-3).abs() < 1e-15);
        assert!((s.at(60) - 0.55e-3).abs() < 1e-12);
        assert!((s.at(110) - 1e-4).abs() < 1e-15);
        assert!((s.at(10_000) - 1e-4).abs() < 1e-15);
    }
}
