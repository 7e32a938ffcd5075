//! AdamW optimizer and the warmup/cosine learning-rate schedule.
//!
//! The optimizer operates on a [`ParamSet`]: after a backward pass has left
//! gradients on the leaves, [`AdamW::step`] clips the *global* gradient norm,
//! applies a bias-corrected Adam update with decoupled weight decay, and
//! zeroes every gradient so the next accumulation starts clean. Weight decay
//! is decoupled in the AdamW sense — it is added to the update as
//! `wd * w` rather than folded into the gradient — and it only touches
//! parameters registered as [`ParamKind::Weight`]; biases and normalization
//! affines are never decayed.
//!
//! Moment buffers are keyed by parameter name, so one optimizer can be
//! reused across checkpoint save/load cycles as long as names are stable.
//! All norm and bias-correction arithmetic runs in `f64` regardless of the
//! parameter dtype; only the final per-element update is computed in `T`.
//!
//! [`LrSchedule`] is a pure function of the global iteration index: linear
//! warmup from zero to the base rate, then cosine decay to zero, with hard
//! restarts (instant reset to the base rate followed by a fresh cosine
//! segment) at caller-chosen iterations.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::{ParamKind, ParamSet, Real};

/// Hyper-parameters for [`AdamW`].
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    /// Exponential decay rate for the first moment.
    pub beta1: f64,
    /// Exponential decay rate for the second moment.
    pub beta2: f64,
    /// Denominator fuzz added to `sqrt(v_hat)`.
    pub eps: f64,
    /// Decoupled weight-decay coefficient, applied to `Weight`-kind
    /// parameters only.
    pub weight_decay: f64,
    /// Global gradient-norm ceiling. Gradients whose joint L2 norm exceeds
    /// this are rescaled so the norm equals it exactly.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            clip_norm: 1.0,
        }
    }
}

/// AdamW with global-norm clipping over a [`ParamSet`].
pub struct AdamW<T: Real> {
    cfg: AdamConfig,
    /// Number of completed steps; bias correction uses `step + 1` on entry.
    step_count: u64,
    /// First/second moment estimates, keyed by parameter name.
    moments: HashMap<String, (Array2<T>, Array2<T>)>,
}

impl<T: Real> AdamW<T> {
    /// New optimizer with zeroed state; moment buffers are allocated lazily
    /// on the first step that sees each parameter.
    pub fn new(cfg: AdamConfig) -> Self {
        AdamW {
            cfg,
            step_count: 0,
            moments: HashMap::new(),
        }
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step_count
    }

    /// Apply one update at learning rate `lr` and zero all gradients.
    ///
    /// Parameters whose gradient is absent are treated as having a zero
    /// gradient: their moments still decay and weight decay still applies,
    /// matching what an explicit zero gradient would do.
    ///
    /// Returns the pre-clip global gradient norm (useful for logging).
    /// Fails with [`Error::NonFiniteGrad`] naming the offending parameter if
    /// any gradient contains NaN or Inf; no state is modified in that case.
    pub fn step(&mut self, params: &ParamSet<T>, lr: f64) -> Result<f64> {
        // Validate and measure before touching any state.
        let mut norm_sq = 0.0f64;
        for p in params.iter() {
            if let Some(g) = p.tensor.grad() {
                for &x in g.iter() {
                    let x = x.to_f64();
                    if !x.is_finite() {
                        return Err(Error::NonFiniteGrad {
                            name: p.name.clone(),
                        });
                    }
                    norm_sq += x * x;
                }
            }
        }
        let norm = norm_sq.sqrt();
        let clip_scale = if norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };

        self.step_count += 1;
        let beta1 = self.cfg.beta1;
        let beta2 = self.cfg.beta2;
        // Bias corrections in f64; 1 - beta^t underflows no earlier than
        // beta^t itself, so this stays exact for any realistic step count.
        let bc1 = 1.0 - beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - beta2.powi(self.step_count as i32);

        let b1 = T::from_f64(beta1);
        let b1c = T::from_f64(1.0 - beta1);
        let b2 = T::from_f64(beta2);
        let b2c = T::from_f64(1.0 - beta2);
        let scale = T::from_f64(clip_scale);
        let eps = T::from_f64(self.cfg.eps);
        let inv_bc1 = T::from_f64(1.0 / bc1);
        let inv_bc2_sqrt = T::from_f64(1.0 / bc2.sqrt());
        let lr_t = T::from_f64(lr);
        let decay = T::from_f64(lr * self.cfg.weight_decay);

        for p in params.iter() {
            let (rows, cols) = p.tensor.shape();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (Array2::zeros((rows, cols)), Array2::zeros((rows, cols))));
            match p.tensor.grad() {
                Some(g) => {
                    m.zip_mut_with(&g, |m, &g| *m = *m * b1 + g * scale * b1c);
                    v.zip_mut_with(&g, |v, &g| {
                        let gs = g * scale;
                        *v = *v * b2 + gs * gs * b2c;
                    });
                }
                None => {
                    m.mapv_inplace(|m| m * b1);
                    v.mapv_inplace(|v| v * b2);
                }
            }
            let decayed = p.kind == ParamKind::Weight;
            p.tensor.update_value(|w| {
                ndarray::azip!((w in w, &m in &*m, &v in &*v) {
                    let m_hat = m * inv_bc1;
                    let v_hat_sqrt = (v * inv_bc2_sqrt * inv_bc2_sqrt).sqrt();
                    let mut step = lr_t * (m_hat / (v_hat_sqrt + eps));
                    if decayed {
                        step += decay * *w;
                    }
                    *w -= step;
                });
            });
        }
        params.zero_grads();
        Ok(norm)
    }
}

/// Piecewise warmup + cosine learning-rate schedule with hard restarts.
///
/// The rate at global iteration `i` (zero-based) is:
///
/// * `base * i / warmup_iters` while `i < warmup_iters` (so iteration 0
///   trains at rate 0 and iteration `warmup_iters` is the first at `base`);
/// * within each cosine segment `[start, end)`,
///   `base * 0.5 * (1 + cos(pi * (i - start) / (end - start)))`, decaying
///   from `base` at the segment start toward 0 at its end.
///
/// Segments are delimited by the restart iterations: each restart begins a
/// fresh segment, so the rate snaps back to exactly `base` there. The first
/// segment starts where warmup ends and the last ends at `total_iters`.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    base: f64,
    warmup_iters: u64,
    /// Segment boundaries: `warmup_iters`, each restart, then `total_iters`.
    boundaries: Vec<u64>,
}

impl LrSchedule {
    /// Build a schedule over `total_iters` iterations with restarts at the
    /// given global iterations. Restarts outside `(warmup_iters,
    /// total_iters)` are ignored; duplicates collapse.
    pub fn new(base: f64, warmup_iters: u64, restarts: &[u64], total_iters: u64) -> Self {
        assert!(
            total_iters > warmup_iters,
            "schedule must extend past warmup ({warmup_iters} >= {total_iters})"
        );
        let mut boundaries = vec![warmup_iters];
        let mut rs: Vec<u64> = restarts
            .iter()
            .copied()
            .filter(|&r| r > warmup_iters && r < total_iters)
            .collect();
        rs.sort_unstable();
        rs.dedup();
        boundaries.extend(rs);
        boundaries.push(total_iters);
        LrSchedule {
            base,
            warmup_iters,
            boundaries,
        }
    }

    /// Learning rate at global iteration `iter`.
    ///
    /// Iterations at or past the configured total hold the final segment's
    /// terminal value of 0.
    pub fn lr(&self, iter: u64) -> f64 {
        if self.warmup_iters > 0 && iter < self.warmup_iters {
            return self.base * iter as f64 / self.warmup_iters as f64;
        }
        let total = *self.boundaries.last().expect("boundaries never empty");
        if iter >= total {
            return 0.0;
        }
        // Find the segment [start, end) containing `iter`.
        let idx = self
            .boundaries
            .iter()
            .rposition(|&b| b <= iter)
            .expect("iter >= warmup_iters, first boundary");
        let start = self.boundaries[idx];
        let end = self.boundaries[idx + 1];
        let progress = (iter - start) as f64 / (end - start) as f64;
        self.base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// Base (peak) learning rate.
    pub fn base(&self) -> f64 {
        self.base
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    /// Plant an exact gradient on a leaf by running backward on
    /// `sum(w * c)`, whose gradient with respect to `w` is `c`.
    fn set_grad<T: Real>(params: &ParamSet<T>, name: &str, g: Array2<T>) {
        let p = params.get(name).expect("param exists");
        let c = crate::tensor::Tensor::constant(g);
        let loss = p.tensor.mul(&c).expect("shapes match").sum_all();
        loss.backward().expect("backward");
    }

    #[test]
    fn decay_shrinks_weights_only() {
        let mut ps: ParamSet<f64> = ParamSet::new();
        let w = ps.register("w", ParamKind::Weight, array![[2.0, -1.0]]);
        let b = ps.register("b", ParamKind::Bias, array![[3.0]]);
        let s = ps.register("s", ParamKind::NormScale, array![[1.5]]);
        let mut opt = AdamW::new(AdamConfig::default());
        // No gradients at all: moments stay zero, so the Adam term is
        // exactly zero and the only movement is the decoupled decay.
        let lr = 0.1;
        let norm = opt.step(&ps, lr).expect("step");
        assert_eq!(norm, 0.0);
        let shrink = 1.0 - lr * 0.05;
        assert_relative_eq!(w.value()[[0, 0]], 2.0 * shrink, max_relative = 1e-15);
        assert_relative_eq!(w.value()[[0, 1]], -1.0 * shrink, max_relative = 1e-15);
        assert_eq!(b.value()[[0, 0]], 3.0);
        assert_eq!(s.value()[[0, 0]], 1.5);
    }

    #[test]
    fn quadratic_converges_under_annealed_rate() {
        // Fixed-rate Adam hunts around the minimum at lr scale, so true
        // convergence needs the schedule: cosine-anneal 0.05 -> 0 over the
        // run and the iterate freezes onto the minimum.
        let mut ps: ParamSet<f64> = ParamSet::new();
        let w = ps.register("w", ParamKind::Weight, array![[5.0]]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = AdamW::new(cfg);
        let sched = LrSchedule::new(0.05, 0, &[], 500);
        for i in 0..500 {
            let loss = w.add_scalar(-3.0).square().mul_scalar(0.5);
            loss.backward().expect("backward");
            opt.step(&ps, sched.lr(i)).expect("step");
        }
        assert!(
            (w.item() - 3.0).abs() < 1e-4,
            "w = {} after 500 steps",
            w.item()
        );
    }

    #[test]
    fn first_step_is_signed_lr_regardless_of_magnitude() {
        // With zero moments, m_hat / (sqrt(v_hat) + eps) ~= sign(g), so the
        // very first update moves each element by almost exactly lr, whether
        // the raw gradient was 300 or 0.004.
        let mut ps: ParamSet<f64> = ParamSet::new();
        let w = ps.register("w", ParamKind::Bias, array![[1.0, 1.0]]);
        let mut opt = AdamW::new(AdamConfig {
            clip_norm: 1e9,
            ..AdamConfig::default()
        });
        set_grad(&ps, "w", array![[300.0, -0.004]]);
        opt.step(&ps, 0.01).expect("step");
        assert_relative_eq!(w.value()[[0, 0]], 1.0 - 0.01, epsilon = 1e-6);
        assert_relative_eq!(w.value()[[0, 1]], 1.0 + 0.01, epsilon = 1e-6);
    }

    /// Independent scalar AdamW (no decay) for pinning trajectories.
    fn reference_adam(grads: &[[f64; 2]], clip: f64, lr: f64) -> [f64; 2] {
        let mut w = [0.0f64; 2];
        let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
        for (t, g) in grads.iter().enumerate() {
            let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
            let c = if norm > clip { clip / norm } else { 1.0 };
            let bc1 = 1.0 - 0.9f64.powi(t as i32 + 1);
            let bc2 = 1.0 - 0.95f64.powi(t as i32 + 1);
            for k in 0..2 {
                let gc = g[k] * c;
                m[k] = 0.9 * m[k] + 0.1 * gc;
                v[k] = 0.95 * v[k] + 0.05 * gc * gc;
                w[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + 1e-8);
            }
        }
        w
    }

    #[test]
    fn clipping_matches_reference_trajectory() {
        // A single uniformly-scaled gradient history is invisible to Adam
        // (the scale cancels in m_hat / sqrt(v_hat)), so clipping only shows
        // up when gradient magnitude *varies* across steps: a huge first
        // gradient followed by a modest one. Clipped, both steps see the
        // same effective gradient; unclipped, the huge v from step one mutes
        // step two. Pin both against an independent reference.
        let grads = [[30.0, 40.0], [0.6, 0.8]];
        let run = |clip: f64| -> (f64, [f64; 2]) {
            let mut ps: ParamSet<f64> = ParamSet::new();
            let w = ps.register("w", ParamKind::Bias, array![[0.0, 0.0]]);
            let cfg = AdamConfig {
                clip_norm: clip,
                weight_decay: 0.0,
                ..AdamConfig::default()
            };
            let mut opt = AdamW::new(cfg);
            let mut first_norm = 0.0;
            for (t, g) in grads.iter().enumerate() {
                set_grad(&ps, "w", array![[g[0], g[1]]]);
                let n = opt.step(&ps, 0.01).expect("step");
                if t == 0 {
                    first_norm = n;
                }
            }
            let val = w.value();
            (first_norm, [val[[0, 0]], val[[0, 1]]])
        };
        for clip in [1.0, 1e9] {
            let (norm, got) = run(clip);
            // Reported norm is pre-clip.
            assert_relative_eq!(norm, 50.0, max_relative = 1e-12);
            let want = reference_adam(&grads, clip, 0.01);
            assert_relative_eq!(got[0], want[0], max_relative = 1e-9);
            assert_relative_eq!(got[1], want[1], max_relative = 1e-9);
        }
        // And the two regimes genuinely diverge.
        let (_, clipped) = run(1.0);
        let (_, free) = run(1e9);
        assert!((clipped[0] - free[0]).abs() > 1e-3);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps: ParamSet<f64> = ParamSet::new();
        let _w = ps.register("encoder.w", ParamKind::Weight, array![[1.0]]);
        let mut opt = AdamW::new(AdamConfig::default());
        set_grad(&ps, "encoder.w", array![[f64::NAN]]);
        let err = opt.step(&ps, 0.01).unwrap_err();
        match err {
            Error::NonFiniteGrad { name } => assert_eq!(name, "encoder.w"),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn gradients_are_zeroed_after_step() {
        let mut ps: ParamSet<f64> = ParamSet::new();
        let w = ps.register("w", ParamKind::Weight, array![[1.0]]);
        let mut opt = AdamW::new(AdamConfig::default());
        set_grad(&ps, "w", array![[2.0]]);
        opt.step(&ps, 0.01).expect("step");
        assert!(w.grad().is_none());
    }

    #[test]
    fn f32_parameters_step_cleanly() {
        let mut ps: ParamSet<f32> = ParamSet::new();
        let w = ps.register("w", ParamKind::Weight, array![[1.0f32]]);
        let mut opt = AdamW::new(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        set_grad(&ps, "w", array![[0.5f32]]);
        opt.step(&ps, 0.01).expect("step");
        assert_relative_eq!(w.value()[[0, 0]], 1.0 - 0.01, epsilon = 1e-5);
    }

    #[test]
    fn warmup_endpoints_are_exact() {
        let s = LrSchedule::new(4e-4, 300, &[], 1000);
        assert_eq!(s.lr(0), 0.0);
        assert_relative_eq!(s.lr(150), 2e-4, max_relative = 1e-12);
        assert_eq!(s.lr(300), 4e-4);
    }

    #[test]
    fn cosine_midpoint_is_half_base() {
        let s = LrSchedule::new(4e-4, 300, &[], 1300);
        // Segment [300, 1300); midpoint at 800.
        assert_relative_eq!(s.lr(800), 2e-4, max_relative = 1e-12);
        // Monotone decrease across the segment.
        let mut prev = s.lr(300);
        for i in 301..1300 {
            let cur = s.lr(i);
            assert!(cur < prev, "not decreasing at {i}");
            prev = cur;
        }
    }

    #[test]
    fn restart_snaps_back_to_base() {
        let s = LrSchedule::new(4e-4, 100, &[500], 900);
        assert!(s.lr(499) < 1e-5, "end of first segment near zero");
        assert_eq!(s.lr(500), 4e-4);
        // Second segment midpoint.
        assert_relative_eq!(s.lr(700), 2e-4, max_relative = 1e-12);
        // Terminal value approaches zero.
        assert!(s.lr(899) < 1e-5);
        assert_eq!(s.lr(900), 0.0);
        assert_eq!(s.lr(5000), 0.0);
    }

    #[test]
    fn zero_warmup_starts_at_base() {
        let s = LrSchedule::new(1e-4, 0, &[], 200);
        assert_eq!(s.lr(0), 1e-4);
        assert_relative_eq!(s.lr(100), 5e-5, max_relative = 1e-12);
    }

    #[test]
    fn out_of_range_restarts_are_ignored() {
        let s = LrSchedule::new(1.0, 10, &[5, 10, 400, 50, 50], 100);
        // Only the restart at 50 survives: 5 and 10 fall inside warmup's
        // reach, 400 is past the end, and the duplicate collapses.
        assert_eq!(s.boundaries, vec![10, 50, 100]);
        assert_eq!(s.lr(50), 1.0);
    }
}
