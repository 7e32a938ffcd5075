//! Elevation estimator: a 2-layer MLP from sequence descriptors to the one
//! orbit parameter a raw sequence does not carry — its elevation.
//!
//! Architecture: 168 -> 64 (relu) -> 1, squashed to `[0, pi/4]` by
//! `pi/4 * sigmoid`. It reads a descriptor built from 4 uniformly spaced
//! views ([`ELEVATION_VIEWS`]), trained with squared error and AdamW. The
//! output range is enforced by construction, so the estimator can never
//! emit an invalid elevation no matter how it was trained.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::camera::MAX_ELEVATION;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamW, LrSchedule};
use crate::scene::MultiViewSequence;
use crate::tensor::{ParamKind, ParamSet, Tensor};

use super::{DESCRIPTOR_DIM, ELEVATION_VIEWS, describe_views};

const HIDDEN: usize = 64;

/// Trained elevation predictor; construct via [`train_elevation`] or
/// [`ElevationEstimator::load`].
///
/// Inputs are standardized per descriptor slot (z-scores against training
/// set statistics) before the first layer; the constants are frozen at
/// training time and saved with the weights. Descriptor slots span two
/// orders of magnitude, so without this the small cross-view slots barely
/// move the first layer.
pub struct ElevationEstimator {
    params: ParamSet<f32>,
    w1: Tensor<f32>,
    b1: Tensor<f32>,
    w2: Tensor<f32>,
    b2: Tensor<f32>,
    mu: Vec<f32>,
    sigma: Vec<f32>,
}

/// Hyperparameters for [`train_elevation`].
#[derive(Debug, Clone, Copy)]
pub struct ElevationTrainConfig {
    /// Full passes over the training set.
    pub epochs: usize,
    /// Mini-batch size (clamped to the set size).
    pub batch: usize,
    /// Peak learning rate; cosine-annealed to zero over the run.
    pub lr: f64,
    /// Shuffling and initialization seed.
    pub seed: u64,
}

impl Default for ElevationTrainConfig {
    fn default() -> Self {
        ElevationTrainConfig {
            epochs: 300,
            batch: 256,
            lr: 3e-3,
            seed: 0,
        }
    }
}

impl ElevationEstimator {
    /// Fresh estimator with He-scaled random weights.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let he = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| -> Array2<f32> {
            let dist = rand_distr::Normal::new(0.0f64, (2.0 / rows as f64).sqrt())
                .expect("std is finite and positive");
            Array2::from_shape_fn((rows, cols), |_| rng.sample(dist) as f32)
        };
        let w1 = params.register("elev.w1", ParamKind::Weight, he(&mut rng, DESCRIPTOR_DIM, HIDDEN));
        let b1 = params.register("elev.b1", ParamKind::Bias, Array2::zeros((1, HIDDEN)));
        let w2 = params.register("elev.w2", ParamKind::Weight, he(&mut rng, HIDDEN, 1));
        let b2 = params.register("elev.b2", ParamKind::Bias, Array2::zeros((1, 1)));
        ElevationEstimator {
            params,
            w1,
            b1,
            w2,
            b2,
            mu: vec![0.0; DESCRIPTOR_DIM],
            sigma: vec![1.0; DESCRIPTOR_DIM],
        }
    }

    /// Standardized `[1, 168]` input row for one raw descriptor.
    fn standardize(&self, d: &[f64]) -> Array2<f32> {
        Array2::from_shape_fn((1, DESCRIPTOR_DIM), |(_, j)| {
            (d[j] as f32 - self.mu[j]) / self.sigma[j]
        })
    }

    /// Differentiable forward pass on a `[N, 168]` batch, yielding `[N, 1]`
    /// elevations in radians.
    fn forward(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let h = x
            .matmul(&self.w1)
            .expect("shape fixed by construction")
            .add_row(&self.b1)
            .expect("bias width matches")
            .relu();
        let o = h
            .matmul(&self.w2)
            .expect("shape fixed by construction")
            .add_row(&self.b2)
            .expect("bias width matches");
        o.sigmoid().mul_scalar(MAX_ELEVATION)
    }

    /// Predict elevation (radians, always in `[0, pi/4]`) from a descriptor.
    pub fn predict_descriptor(&self, d: &[f64]) -> f64 {
        assert_eq!(d.len(), DESCRIPTOR_DIM, "descriptor length mismatch");
        let x = Tensor::constant(self.standardize(d));
        self.forward(&x).item() as f64
    }

    /// Predict elevation straight from a sequence via its 4-view descriptor.
    pub fn predict(&self, seq: &MultiViewSequence) -> f64 {
        self.predict_descriptor(&describe_views(seq, &ELEVATION_VIEWS))
    }

    /// Full checkpoint set: the four layers plus the frozen standardization
    /// rows, values cloned out of the live model (or zeros for a template).
    fn checkpoint_set(&self) -> ParamSet<f32> {
        let row = |v: &[f32]| Array2::from_shape_fn((1, DESCRIPTOR_DIM), |(_, j)| v[j]);
        let mut all = ParamSet::new();
        all.register("elev.w1", ParamKind::Weight, self.w1.value());
        all.register("elev.b1", ParamKind::Bias, self.b1.value());
        all.register("elev.w2", ParamKind::Weight, self.w2.value());
        all.register("elev.b2", ParamKind::Bias, self.b2.value());
        all.register("elev.mu", ParamKind::NormShift, row(&self.mu));
        all.register("elev.sigma", ParamKind::NormScale, row(&self.sigma));
        all
    }

    /// Save weights and standardization constants as a TPF1 checkpoint.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::tensor::checkpoint::save(path, &self.checkpoint_set())
    }

    /// Load a checkpoint written by [`Self::save`].
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut est = ElevationEstimator::new(0);
        let all = est.checkpoint_set();
        crate::tensor::checkpoint::load(path, &all)?;
        let get = |name: &str| all.get(name).expect("registered above").tensor.value();
        est.w1.set_value(get("elev.w1"));
        est.b1.set_value(get("elev.b1"));
        est.w2.set_value(get("elev.w2"));
        est.b2.set_value(get("elev.b2"));
        est.mu = get("elev.mu").iter().copied().collect();
        est.sigma = get("elev.sigma").iter().copied().collect();
        Ok(est)
    }
}

/// Train an estimator on `(4-view descriptor, elevation)` pairs.
///
/// Fails with [`Error::InvalidArg`] on an empty set, a wrong descriptor
/// length, or an elevation outside `[0, pi/4]`.
pub fn train_elevation(
    labeled: &[(Vec<f64>, f64)],
    cfg: ElevationTrainConfig,
) -> Result<ElevationEstimator> {
    if labeled.is_empty() {
        return Err(Error::InvalidArg("elevation training set is empty".into()));
    }
    for (i, (d, e)) in labeled.iter().enumerate() {
        if d.len() != DESCRIPTOR_DIM {
            return Err(Error::InvalidArg(format!(
                "descriptor {i} has length {}, expected {DESCRIPTOR_DIM}",
                d.len()
            )));
        }
        if !(0.0..=MAX_ELEVATION).contains(e) {
            return Err(Error::InvalidArg(format!(
                "elevation {e} of sample {i} outside [0, pi/4]"
            )));
        }
    }

    let mut est = ElevationEstimator::new(cfg.seed);
    // Freeze per-slot standardization from the training set. Constant slots
    // get sigma 1 so they standardize to exactly zero.
    let n_f = labeled.len() as f64;
    let mut mu = vec![0.0f64; DESCRIPTOR_DIM];
    for (d, _) in labeled {
        for (m, &v) in mu.iter_mut().zip(d) {
            *m += v / n_f;
        }
    }
    let mut var = vec![0.0f64; DESCRIPTOR_DIM];
    for (d, _) in labeled {
        for (s, (&v, &m)) in var.iter_mut().zip(d.iter().zip(&mu)) {
            *s += (v - m) * (v - m) / n_f;
        }
    }
    est.mu = mu.iter().map(|&m| m as f32).collect();
    est.sigma = var
        .iter()
        .map(|&v| {
            let s = v.sqrt();
            if s < 1e-8 { 1.0 } else { s as f32 }
        })
        .collect();

    // Weight decay off: this is a tiny regression head and decay only drags
    // the output toward the sigmoid midpoint.
    let mut opt = AdamW::new(AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    });
    let n = labeled.len();
    let batch = cfg.batch.clamp(1, n);
    let steps_per_epoch = n.div_ceil(batch);
    let total = (cfg.epochs * steps_per_epoch) as u64;
    let sched = LrSchedule::new(cfg.lr, 0, &[], total.max(1));

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let x = Tensor::constant(Array2::from_shape_fn(
                (chunk.len(), DESCRIPTOR_DIM),
                |(r, c)| (labeled[chunk[r]].0[c] as f32 - est.mu[c]) / est.sigma[c],
            ));
            let t = Tensor::constant(Array2::from_shape_fn((chunk.len(), 1), |(r, _)| {
                labeled[chunk[r]].1 as f32
            }));
            let pred = est.forward(&x);
            let loss = pred.sub(&t)?.square().mean_all();
            loss.backward()?;
            opt.step(&est.params, sched.lr(step))?;
            step += 1;
        }
    }
    Ok(est)
}
