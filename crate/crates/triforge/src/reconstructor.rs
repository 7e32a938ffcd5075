//! The feed-forward image-to-triplane model.
//!
//! One RGB view plus its camera pose go in; a [`Triplane`] comes out, ready
//! for volume rendering or mesh extraction. The pipeline is a small
//! transformer:
//!
//! 1. **Patch encoder** — the image is cut into non-overlapping
//!    `patch_size`² patches, each flattened and linearly embedded to
//!    `token_dim`, plus a learned positional embedding per patch; a stack of
//!    pre-norm self-attention blocks mixes the tokens.
//! 2. **Camera conditioning** — the pose is flattened to 20 numbers (the
//!    4×4 world-to-camera matrix row-major, then the four intrinsics
//!    normalized by image size), pushed through a 2-layer MLP, and the
//!    resulting vector is added to every image token.
//! 3. **Cross-attention decoder** — a learned bank of `3·G²` query tokens
//!    (one per cell of each plane's G×G token grid) attends to the image
//!    tokens through a stack of pre-norm cross-attention blocks.
//! 4. **Upsampler** — each plane's G×G token grid is nearest-neighbor
//!    doubled to 2G×2G and mixed by a learned 3×3 convolution (realized as
//!    gather + reshape + matmul so it rides the same autodiff ops as
//!    everything else), producing the final `plane_channels`-wide planes.
//!
//! The model owns its [`ParamSet`] — including the [`NerfHead`] that decodes
//! triplane samples — so optimizers, checkpointing, and parameter audits all
//! see one flat, uniquely-named parameter list.
//!
//! Attention here is single-head: at desk scale (64-dim tokens) splitting
//! heads buys nothing, and one head keeps the arithmetic auditable. All
//! transformer weights are truncated-normal initialized (σ = 0.02, clipped
//! at 2σ), biases start at zero and norm scales at one; the head keeps the
//! He initialization native to its module.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::img::ImageF;
use crate::tensor::{ParamKind, ParamSet, Real, Tensor};
use crate::triplane::{NerfHead, Triplane, NERF_HIDDEN, TRIPLANE_CHANNELS};

/// Hidden width of the camera embedding MLP (20 → 64 → `token_dim`).
const CAMERA_HIDDEN: usize = 64;
/// Camera feature vector length: 16 matrix entries + 4 intrinsics.
const CAMERA_FEATURES: usize = 20;
/// Layer-norm epsilon used by every block.
const LN_EPS: f64 = 1e-5;

/// Shape of the reconstructor; the default is the desk-scale configuration
/// every test and training profile starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructorConfig {
    /// Input image resolution (square).
    pub input_res: usize,
    /// Side of one square patch; `input_res` must divide evenly by it.
    pub patch_size: usize,
    /// Width of every token and embedding.
    pub token_dim: usize,
    /// Self-attention blocks in the image encoder.
    pub encoder_blocks: usize,
    /// Cross-attention blocks in the triplane decoder.
    pub decoder_blocks: usize,
    /// Side G of each plane's token grid (the decoder emits 3·G² queries).
    pub plane_tokens: usize,
    /// Feature channels per triplane plane after upsampling.
    pub plane_channels: usize,
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        ReconstructorConfig {
            input_res: 64,
            patch_size: 8,
            token_dim: 64,
            encoder_blocks: 2,
            decoder_blocks: 2,
            plane_tokens: 16,
            plane_channels: TRIPLANE_CHANNELS,
        }
    }
}

impl ReconstructorConfig {
    /// Check the internal consistency rules; every constructor calls this.
    pub fn validate(&self) -> Result<()> {
        let all_positive = self.input_res > 0
            && self.patch_size > 0
            && self.token_dim > 0
            && self.encoder_blocks > 0
            && self.decoder_blocks > 0
            && self.plane_tokens > 0
            && self.plane_channels > 0;
        if !all_positive {
            return Err(Error::InvalidArg(
                "reconstructor config: every dimension must be positive".into(),
            ));
        }
        if self.input_res % self.patch_size != 0 {
            return Err(Error::InvalidArg(format!(
                "input_res {} not divisible by patch_size {}",
                self.input_res, self.patch_size
            )));
        }
        Ok(())
    }

    /// Image tokens produced by the patch encoder.
    pub fn n_tokens(&self) -> usize {
        let per_side = self.input_res / self.patch_size;
        per_side * per_side
    }

    /// Plane resolution after the 2× upsampler.
    pub fn plane_resolution(&self) -> usize {
        2 * self.plane_tokens
    }
}

/// One pre-norm transformer block: attention plus a 4× MLP, both residual.
///
/// The same struct serves the encoder (self-attention: queries, keys, and
/// values all come from the block input) and the decoder (cross-attention:
/// keys and values come from a fixed context).
struct Block<T: Real> {
    ln1_g: Tensor<T>,
    ln1_b: Tensor<T>,
    wq: Tensor<T>,
    bq: Tensor<T>,
    wk: Tensor<T>,
    bk: Tensor<T>,
    wv: Tensor<T>,
    bv: Tensor<T>,
    wo: Tensor<T>,
    bo: Tensor<T>,
    ln2_g: Tensor<T>,
    ln2_b: Tensor<T>,
    mlp_w0: Tensor<T>,
    mlp_b0: Tensor<T>,
    mlp_w1: Tensor<T>,
    mlp_b1: Tensor<T>,
    dim: usize,
}

/// Truncated-normal weight matrix: N(0, σ²) resampled until |x| ≤ 2σ.
fn trunc_normal<T: Real>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    std: f64,
) -> Array2<T> {
    let dist = rand_distr::Normal::new(0.0f64, std).expect("std is finite and positive");
    Array2::from_shape_fn((rows, cols), |_| loop {
        let x = rng.sample(dist);
        if x.abs() <= 2.0 * std {
            break T::from_f64(x);
        }
    })
}

impl<T: Real> Block<T> {
    /// Register one block's parameters under `{prefix}.…`.
    fn init(params: &mut ParamSet<T>, prefix: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = 4 * dim;
        let mut weight = |name: &str, rows: usize, cols: usize| {
            params.register(
                &format!("{prefix}.{name}"),
                ParamKind::Weight,
                trunc_normal(rng, rows, cols, 0.02),
            )
        };
        let wq = weight("wq", dim, dim);
        let wk = weight("wk", dim, dim);
        let wv = weight("wv", dim, dim);
        let wo = weight("wo", dim, dim);
        let mlp_w0 = weight("mlp.w0", dim, hidden);
        let mlp_w1 = weight("mlp.w1", hidden, dim);
        let mut bias = |name: &str, cols: usize| {
            params.register(
                &format!("{prefix}.{name}"),
                ParamKind::Bias,
                Array2::zeros((1, cols)),
            )
        };
        let bq = bias("bq", dim);
        let bk = bias("bk", dim);
        let bv = bias("bv", dim);
        let bo = bias("bo", dim);
        let mlp_b0 = bias("mlp.b0", hidden);
        let mlp_b1 = bias("mlp.b1", dim);
        let mut norm = |name: &str, kind: ParamKind, fill: f64| {
            params.register(
                &format!("{prefix}.{name}"),
                kind,
                Array2::from_elem((1, dim), T::from_f64(fill)),
            )
        };
        let ln1_g = norm("ln1.g", ParamKind::NormScale, 1.0);
        let ln1_b = norm("ln1.b", ParamKind::NormShift, 0.0);
        let ln2_g = norm("ln2.g", ParamKind::NormScale, 1.0);
        let ln2_b = norm("ln2.b", ParamKind::NormShift, 0.0);
        Block {
            ln1_g,
            ln1_b,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln2_g,
            ln2_b,
            mlp_w0,
            mlp_b0,
            mlp_w1,
            mlp_b1,
            dim,
        }
    }

    /// Apply the block. `context` of `None` means self-attention (keys and
    /// values from the normalized block input); `Some(ctx)` means
    /// cross-attention against `ctx`, which the caller normalizes once.
    fn apply(&self, x: &Tensor<T>, context: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let normed = x.layer_norm(&self.ln1_g, &self.ln1_b, LN_EPS)?;
        let kv = context.unwrap_or(&normed);
        let q = normed.matmul(&self.wq)?.add_row(&self.bq)?;
        let k = kv.matmul(&self.wk)?.add_row(&self.bk)?;
        let v = kv.matmul(&self.wv)?.add_row(&self.bv)?;
        let scores = q
            .matmul(&k.transpose())?
            .mul_scalar(1.0 / (self.dim as f64).sqrt());
        let mixed = scores.softmax_rows().matmul(&v)?;
        let attended = mixed.matmul(&self.wo)?.add_row(&self.bo)?;
        let x = x.add(&attended)?;
        let normed = x.layer_norm(&self.ln2_g, &self.ln2_b, LN_EPS)?;
        let h = normed.matmul(&self.mlp_w0)?.add_row(&self.mlp_b0)?.relu();
        let m = h.matmul(&self.mlp_w1)?.add_row(&self.mlp_b1)?;
        x.add(&m)
    }
}

/// The feed-forward reconstructor: all parameters, the decode head, and the
/// precomputed index tables for the upsampler.
pub struct ReconstructorModel<T: Real> {
    cfg: ReconstructorConfig,
    params: ParamSet<T>,
    patch_w: Tensor<T>,
    patch_b: Tensor<T>,
    pos: Tensor<T>,
    cam_w0: Tensor<T>,
    cam_b0: Tensor<T>,
    cam_w1: Tensor<T>,
    cam_b1: Tensor<T>,
    encoder: Vec<Block<T>>,
    enc_ln_g: Tensor<T>,
    enc_ln_b: Tensor<T>,
    queries: Tensor<T>,
    decoder: Vec<Block<T>>,
    dec_ln_g: Tensor<T>,
    dec_ln_b: Tensor<T>,
    up_w: Tensor<T>,
    up_b: Tensor<T>,
    head: NerfHead<T>,
    upsample_idx: Vec<usize>,
    conv_idx: Vec<usize>,
}

/// Nearest-neighbor 2× upsampling as a row-gather: output cell `(v, u)` of
/// the doubled grid reads input cell `(v/2, u/2)`.
fn upsample_indices(g: usize) -> Vec<usize> {
    let side = 2 * g;
    (0..side * side)
        .map(|o| {
            let (v, u) = (o / side, o % side);
            (v / 2) * g + u / 2
        })
        .collect()
}

/// 3×3 same-padding convolution taps as a row-gather into a grid extended
/// by one zero row at index `side²`: output cell × 9 taps, row-major over
/// the (dv, du) window.
fn conv3x3_indices(side: usize) -> Vec<usize> {
    let zero_row = side * side;
    let mut idx = Vec::with_capacity(side * side * 9);
    for v in 0..side as isize {
        for u in 0..side as isize {
            for dv in -1..=1 {
                for du in -1..=1 {
                    let (tv, tu) = (v + dv, u + du);
                    idx.push(if tv < 0 || tu < 0 || tv >= side as isize || tu >= side as isize {
                        zero_row
                    } else {
                        (tv * side as isize + tu) as usize
                    });
                }
            }
        }
    }
    idx
}

/// Flatten a pose into the 20 conditioning features: the 4×4 world-to-camera
/// matrix row-major (rotation rows with their translation entries, then the
/// constant homogeneous row), followed by the intrinsics normalized to be
/// resolution-free.
fn camera_features(pose: &CameraPose) -> [f64; CAMERA_FEATURES] {
    let mut f = [0.0; CAMERA_FEATURES];
    for r in 0..3 {
        f[4 * r..4 * r + 3].copy_from_slice(&pose.rotation[r]);
        f[4 * r + 3] = pose.translation[r];
    }
    f[15] = 1.0;
    f[16] = pose.fx / pose.width as f64;
    f[17] = pose.fy / pose.height as f64;
    f[18] = pose.cx / pose.width as f64;
    f[19] = pose.cy / pose.height as f64;
    f
}

impl<T: Real> ReconstructorModel<T> {
    /// Build a model with freshly initialized parameters.
    pub fn new(cfg: ReconstructorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = cfg.token_dim;
        let patch_dim = 3 * cfg.patch_size * cfg.patch_size;
        let n_tokens = cfg.n_tokens();
        let n_queries = 3 * cfg.plane_tokens * cfg.plane_tokens;

        let patch_w = params.register(
            "patch.w",
            ParamKind::Weight,
            trunc_normal(&mut rng, patch_dim, d, 0.02),
        );
        let patch_b = params.register("patch.b", ParamKind::Bias, Array2::zeros((1, d)));
        let pos = params.register(
            "pos",
            ParamKind::Weight,
            trunc_normal(&mut rng, n_tokens, d, 0.02),
        );
        let cam_w0 = params.register(
            "cam.w0",
            ParamKind::Weight,
            trunc_normal(&mut rng, CAMERA_FEATURES, CAMERA_HIDDEN, 0.02),
        );
        let cam_b0 = params.register("cam.b0", ParamKind::Bias, Array2::zeros((1, CAMERA_HIDDEN)));
        let cam_w1 = params.register(
            "cam.w1",
            ParamKind::Weight,
            trunc_normal(&mut rng, CAMERA_HIDDEN, d, 0.02),
        );
        let cam_b1 = params.register("cam.b1", ParamKind::Bias, Array2::zeros((1, d)));
        let encoder = (0..cfg.encoder_blocks)
            .map(|i| Block::init(&mut params, &format!("enc{i}"), d, &mut rng))
            .collect();
        let mut norm = |name: &str, kind: ParamKind, fill: f64| {
            params.register(name, kind, Array2::from_elem((1, d), T::from_f64(fill)))
        };
        let enc_ln_g = norm("enc.ln.g", ParamKind::NormScale, 1.0);
        let enc_ln_b = norm("enc.ln.b", ParamKind::NormShift, 0.0);
        let queries = params.register(
            "queries",
            ParamKind::Weight,
            trunc_normal(&mut rng, n_queries, d, 0.02),
        );
        let decoder = (0..cfg.decoder_blocks)
            .map(|i| Block::init(&mut params, &format!("dec{i}"), d, &mut rng))
            .collect();
        let mut norm = |name: &str, kind: ParamKind, fill: f64| {
            params.register(name, kind, Array2::from_elem((1, d), T::from_f64(fill)))
        };
        let dec_ln_g = norm("dec.ln.g", ParamKind::NormScale, 1.0);
        let dec_ln_b = norm("dec.ln.b", ParamKind::NormShift, 0.0);
        let up_w = params.register(
            "up.w",
            ParamKind::Weight,
            trunc_normal(&mut rng, 9 * d, cfg.plane_channels, 0.02),
        );
        let up_b = params.register(
            "up.b",
            ParamKind::Bias,
            Array2::zeros((1, cfg.plane_channels)),
        );
        let head = NerfHead::init(
            &mut params,
            "head",
            3 * cfg.plane_channels,
            NERF_HIDDEN,
            &mut rng,
        );

        Ok(ReconstructorModel {
            upsample_idx: upsample_indices(cfg.plane_tokens),
            conv_idx: conv3x3_indices(cfg.plane_resolution()),
            cfg,
            params,
            patch_w,
            patch_b,
            pos,
            cam_w0,
            cam_b0,
            cam_w1,
            cam_b1,
            encoder,
            enc_ln_g,
            enc_ln_b,
            queries,
            decoder,
            dec_ln_g,
            dec_ln_b,
            up_w,
            up_b,
            head,
        })
    }

    /// The configuration the model was built with.
    pub fn config(&self) -> &ReconstructorConfig {
        &self.cfg
    }

    /// All named parameters, including the decode head's.
    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// The triplane decode head (shared with the renderer).
    pub fn head(&self) -> &NerfHead<T> {
        &self.head
    }

    /// Total learnable elements across all parameters.
    pub fn count_parameters(&self) -> usize {
        self.params.total_elements()
    }

    /// Write every parameter to a TPF1 checkpoint.
    pub fn save_checkpoint(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::tensor::checkpoint::save(path, &self.params)
    }

    /// Load a TPF1 checkpoint written by a model of the same configuration.
    pub fn load_checkpoint(&mut self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::tensor::checkpoint::load(path, &self.params)
    }

    /// Cut the image into patches and flatten each to a constant row:
    /// channel-major, then row-major within the patch.
    fn patchify(&self, image: &ImageF) -> Result<Tensor<T>> {
        let (r, ps) = (self.cfg.input_res, self.cfg.patch_size);
        if image.width != r || image.height != r {
            return Err(Error::Shape {
                op: "patchify",
                lhs: vec![image.height, image.width],
                rhs: vec![r, r],
            });
        }
        let per_side = r / ps;
        let rows = Array2::from_shape_fn((per_side * per_side, 3 * ps * ps), |(p, j)| {
            let (pv, pu) = (p / per_side, p % per_side);
            let (c, rem) = (j / (ps * ps), j % (ps * ps));
            let (dy, dx) = (rem / ps, rem % ps);
            T::from_f64(image.get(pu * ps + dx, pv * ps + dy)[c] as f64)
        });
        Ok(Tensor::constant(rows))
    }

    /// Embed and contextualize one image: patch embedding, positional
    /// embedding, and the encoder's self-attention stack. Deterministic;
    /// gradients flow to every encoder parameter.
    pub fn encode_image(&self, image: &ImageF) -> Result<Tensor<T>> {
        let patches = self.patchify(image)?;
        let mut x = patches
            .matmul(&self.patch_w)?
            .add_row(&self.patch_b)?
            .add(&self.pos)?;
        for block in &self.encoder {
            x = block.apply(&x, None)?;
        }
        Ok(x)
    }

    /// Run the full pipeline: encode, condition on the pose, cross-attend
    /// the triplane queries, and upsample to the final planes.
    pub fn predict_triplane(&self, image: &ImageF, pose: &CameraPose) -> Result<Triplane<T>> {
        let tokens = self.encode_image(image)?;

        let feats = camera_features(pose);
        let cam_in = Tensor::constant(Array2::from_shape_fn((1, CAMERA_FEATURES), |(_, j)| {
            T::from_f64(feats[j])
        }));
        let cam = cam_in
            .matmul(&self.cam_w0)?
            .add_row(&self.cam_b0)?
            .relu()
            .matmul(&self.cam_w1)?
            .add_row(&self.cam_b1)?;
        let conditioned = tokens.add_row(&cam)?;
        let context = conditioned.layer_norm(&self.enc_ln_g, &self.enc_ln_b, LN_EPS)?;

        let mut q = self.queries.clone();
        for block in &self.decoder {
            q = block.apply(&q, Some(&context))?;
        }
        let q = q.layer_norm(&self.dec_ln_g, &self.dec_ln_b, LN_EPS)?;

        let (g, d) = (self.cfg.plane_tokens, self.cfg.token_dim);
        let side = self.cfg.plane_resolution();
        let zero = Tensor::constant(Array2::zeros((1, d)));
        let mut planes = Vec::with_capacity(3);
        for plane in 0..3 {
            let grid = q.narrow_rows(plane * g * g, g * g)?;
            let up = grid.gather_rows(&self.upsample_idx)?;
            let padded = Tensor::concat_rows(&[&up, &zero])?;
            let taps = padded
                .gather_rows(&self.conv_idx)?
                .reshape(side * side, 9 * d)?;
            planes.push(taps.matmul(&self.up_w)?.add_row(&self.up_b)?);
        }
        let features = Tensor::concat_rows(&[&planes[0], &planes[1], &planes[2]])?;
        Triplane::new(features, side)
    }
}
