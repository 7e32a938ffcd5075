//! Soft-margin linear SVM for sequence quality filtering.
//!
//! Trained by deterministic subgradient descent on the objective
//!
//! ```text
//! J(w, b) = |w|^2 / (2C) + (1/N) sum_i max(0, 1 - y_i (w.x_i + b))
//! ```
//!
//! with the classic 1/(lambda*t) step size (lambda = 1/C) and tail-iterate
//! averaging for stability. The bias is unregularized. Inputs are the
//! L2-normalized 168-dim sequence descriptors, which keeps the geometry
//! well-conditioned without per-feature scaling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::MultiViewSequence;

use super::describe;

/// Linear decision function `sign(w.x + b)`; positive means "keep".
#[derive(Debug, Clone)]
pub struct LinearSvm {
    /// One weight per descriptor dimension.
    pub weights: Vec<f64>,
    /// Unregularized offset.
    pub bias: f64,
    /// Margin softness hyperparameter the model was trained with.
    pub c: f64,
}

impl LinearSvm {
    /// Signed margin `w.x + b`.
    pub fn decision(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.weights.len(), "descriptor length mismatch");
        self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// Keep/reject verdict: strictly positive margin keeps.
    pub fn keeps(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }

    /// Persist as a TPF1 checkpoint (weights, bias, and C as tensors).
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::tensor::checkpoint::save(path, &self.as_params())
    }

    /// Load a checkpoint written by [`Self::save`]. The stored weight row
    /// fixes the descriptor dimension.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let template = LinearSvm {
            weights: vec![0.0; super::DESCRIPTOR_DIM],
            bias: 0.0,
            c: 1.0,
        };
        let params = template.as_params();
        crate::tensor::checkpoint::load(path, &params)?;
        let get = |name: &str| params.get(name).expect("registered above").tensor.value();
        Ok(LinearSvm {
            weights: get("svm.weights").iter().copied().collect(),
            bias: get("svm.bias")[[0, 0]],
            c: get("svm.c")[[0, 0]],
        })
    }

    fn as_params(&self) -> crate::tensor::ParamSet<f64> {
        use crate::tensor::{ParamKind, ParamSet};
        let mut ps = ParamSet::new();
        ps.register(
            "svm.weights",
            ParamKind::Weight,
            ndarray::Array2::from_shape_vec((1, self.weights.len()), self.weights.clone())
                .expect("row vector"),
        );
        ps.register(
            "svm.bias",
            ParamKind::Bias,
            ndarray::arr2(&[[self.bias]]),
        );
        ps.register("svm.c", ParamKind::Bias, ndarray::arr2(&[[self.c]]));
        ps
    }
}

/// Fit a [`LinearSvm`] on labeled descriptors (`true` = good quality).
///
/// Features are standardized internally (per-feature z-scores over the
/// training set) so the regularizer treats every descriptor slot equally;
/// the affine preprocessing is folded back into the returned weights and
/// bias, so the model's decision function stays plain `w.x + b` on raw
/// descriptors. Deterministic given `seed`. Fails with
/// [`Error::InvalidArg`] unless both classes are present.
pub fn train_filter(labeled: &[(Vec<f64>, bool)], c: f64, seed: u64) -> Result<LinearSvm> {
    let n_good = labeled.iter().filter(|(_, g)| *g).count();
    if labeled.is_empty() || n_good == 0 || n_good == labeled.len() {
        return Err(Error::InvalidArg(format!(
            "SVM training needs both classes, got {n_good} good of {}",
            labeled.len()
        )));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArg(format!("C must be positive, got {c}")));
    }
    let dim = labeled[0].0.len();
    if labeled.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::InvalidArg(
            "descriptors have inconsistent lengths".into(),
        ));
    }

    // Per-feature standardization; constant features get sigma 1 so their
    // z-score is exactly zero and they carry no weight.
    let n = labeled.len() as f64;
    let mut mu = vec![0.0f64; dim];
    for (x, _) in labeled {
        for (m, &v) in mu.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut sigma = vec![0.0f64; dim];
    for (x, _) in labeled {
        for (s, (&v, &m)) in sigma.iter_mut().zip(x.iter().zip(&mu)) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut sigma {
        *s = s.sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let z: Vec<(Vec<f64>, f64)> = labeled
        .iter()
        .map(|(x, good)| {
            let zx = x
                .iter()
                .zip(mu.iter().zip(&sigma))
                .map(|(&v, (&m, &s))| (v - m) / s)
                .collect();
            (zx, if *good { 1.0 } else { -1.0 })
        })
        .collect();

    // Pegasos: stochastic subgradient descent with eta_t = 1/(lambda t) on
    // hinge + (lambda/2)|w|^2, lambda = 1/C, bias unregularized. The raw
    // iterate bounces around the optimum; the tail-half average settles.
    let lambda = 1.0 / c;
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut w_avg = vec![0.0f64; dim];
    let mut b_avg = 0.0f64;
    let mut avg_n = 0.0f64;

    let epochs = 60usize;
    let mut order: Vec<usize> = (0..z.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0u64;
    let total_t = (epochs * z.len()) as u64;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let (x, y) = &z[i];
            let margin = y * (w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b);
            for (wj, xj) in w.iter_mut().zip(x) {
                let hinge = if margin < 1.0 { -y * xj } else { 0.0 };
                *wj -= eta * (lambda * *wj + hinge);
            }
            if margin < 1.0 {
                b += eta * y;
            }
            if t * 2 >= total_t {
                for (a, &wj) in w_avg.iter_mut().zip(&w) {
                    *a += wj;
                }
                b_avg += b;
                avg_n += 1.0;
            }
        }
    }

    // Fold the standardization into raw-descriptor coordinates:
    // w_z.(x - mu)/sigma + b_z  ==  (w_z/sigma).x + (b_z - sum w_z mu/sigma).
    let mut weights = vec![0.0f64; dim];
    let mut bias = b_avg / avg_n;
    for j in 0..dim {
        let wz = w_avg[j] / avg_n;
        weights[j] = wz / sigma[j];
        bias -= wz * mu[j] / sigma[j];
    }
    Ok(LinearSvm { weights, bias, c })
}

/// Partition sequences by the filter's verdict on their descriptors.
///
/// Returns `(kept, rejected)` index lists; together they cover the input
/// exactly once, in order.
pub fn filter_dataset(seqs: &[MultiViewSequence], svm: &LinearSvm) -> (Vec<usize>, Vec<usize>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for (i, seq) in seqs.iter().enumerate() {
        if svm.keeps(&describe(seq)) {
            kept.push(i);
        } else {
            rejected.push(i);
        }
    }
    (kept, rejected)
}
