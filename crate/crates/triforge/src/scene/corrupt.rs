//! The corruption engine: turns exact multi-view sequences into realistically
//! flawed ones, with one severity knob controlling every imperfection mode.
//!
//! All random draws happen up front, unscaled, from the spec's own seed; the
//! severity then scales how strongly each drawn perturbation is applied. Two
//! corruptions of the same sequence with the same seed therefore differ only
//! in magnitude, which makes severity sweeps monotone and lets quality labels
//! be derived from severity alone. Masks are kept from the clean sequence on
//! purpose: after corruption the background is only approximately white and
//! the image no longer matches its pose exactly — the flaws a quality filter
//! is supposed to catch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::img::{Affine2, affine_warp};

use super::MultiViewSequence;

/// Which imperfection modes to apply, how strongly, and with which draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    /// Severity in `[0, 1]`; 0 leaves the sequence bit-identical.
    pub severity: f64,
    /// Per-view channel gain/bias drift (hue and brightness wander).
    pub color_drift: bool,
    /// 1–3 solid-color rectangles stamped into background regions.
    pub background_patches: bool,
    /// Small per-view affine warp about the image center.
    pub geometric_warp: bool,
    /// Image-space horizontal shift emulating an azimuth error.
    pub view_jitter: bool,
    /// Seed for the upfront draws.
    pub seed: u64,
}

impl CorruptionSpec {
    /// All modes on at the given severity.
    pub fn all(severity: f64, seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            severity,
            color_drift: true,
            background_patches: true,
            geometric_warp: true,
            view_jitter: true,
            seed,
        }
    }

    /// All modes off (identity).
    pub fn none() -> CorruptionSpec {
        CorruptionSpec {
            severity: 0.0,
            color_drift: false,
            background_patches: false,
            geometric_warp: false,
            view_jitter: false,
            seed: 0,
        }
    }
}

/// Everything drawn for one view, before severity scaling.
struct ViewDraws {
    /// Per-channel gain offsets in `[−0.25, 0.25]`.
    gains: [f64; 3],
    /// Per-channel bias offsets in `[−0.1, 0.1]`.
    biases: [f64; 3],
    /// Number of rectangles actually stamped (1..=3).
    n_patches: usize,
    /// For each potential rectangle: (center pick in [0,1), width frac,
    /// height frac, RGB color).
    patches: [(f64, f64, f64, [f32; 3]); 3],
    /// Entrywise linear-part perturbation of the warp, `[−0.08, 0.08]`.
    warp: [f64; 4],
    /// Warp translation as a fraction of the resolution, `[−0.03, 0.03]`.
    shift: [f64; 2],
    /// Azimuth error in radians, `[−0.3, 0.3]`.
    azimuth_jitter: f64,
}

fn draw_view(rng: &mut ChaCha8Rng) -> ViewDraws {
    let mut gains = [0.0; 3];
    let mut biases = [0.0; 3];
    for c in 0..3 {
        gains[c] = rng.gen_range(-0.25..=0.25);
        biases[c] = rng.gen_range(-0.1..=0.1);
    }
    let n_patches = rng.gen_range(1..=3);
    let mut patches = [(0.0, 0.0, 0.0, [0.0f32; 3]); 3];
    for p in &mut patches {
        *p = (
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.08..0.3),
            rng.gen_range(0.08..0.3),
            [
                rng.gen_range(0.0..0.85) as f32,
                rng.gen_range(0.0..0.85) as f32,
                rng.gen_range(0.0..0.85) as f32,
            ],
        );
    }
    let mut warp = [0.0; 4];
    for w in &mut warp {
        *w = rng.gen_range(-0.08..=0.08);
    }
    let shift = [rng.gen_range(-0.03..=0.03), rng.gen_range(-0.03..=0.03)];
    let azimuth_jitter = rng.gen_range(-0.3..=0.3);
    ViewDraws {
        gains,
        biases,
        n_patches,
        patches,
        warp,
        shift,
        azimuth_jitter,
    }
}

/// Apply the spec's imperfection modes to a sequence. Severity 0 (or all
/// toggles off) returns a bit-identical copy; masks and poses are always
/// carried over unchanged from the input.
pub fn corrupt_sequence(seq: &MultiViewSequence, spec: &CorruptionSpec) -> MultiViewSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draws: Vec<ViewDraws> = (0..seq.views.len()).map(|_| draw_view(&mut rng)).collect();
    let s = spec.severity;
    let mut out = seq.clone();
    if s == 0.0 {
        return out;
    }

    for (view, d) in out.views.iter_mut().zip(&draws) {
        let res = view.rgb.width;

        // Geometry first (so color changes and patches stay crisp): compose
        // the azimuth-jitter shift with the affine warp into one resample.
        let mut pull = None;
        if spec.view_jitter {
            // Small-angle image-space stand-in for re-rendering at a wrong
            // azimuth: horizontal shift by Δaz·fx pixels.
            let dx = s * d.azimuth_jitter * view.pose.fx;
            pull = Some(Affine2::translation(dx, 0.0));
        }
        if spec.geometric_warp {
            let c = (res as f64 - 1.0) / 2.0;
            let m = [
                [1.0 + s * d.warp[0], s * d.warp[1]],
                [s * d.warp[2], 1.0 + s * d.warp[3]],
            ];
            let t = [s * d.shift[0] * res as f64, s * d.shift[1] * res as f64];
            // Forward map about the center; the resampler wants its inverse.
            let push = Affine2 {
                m: [
                    [m[0][0], m[0][1], c - m[0][0] * c - m[0][1] * c + t[0]],
                    [m[1][0], m[1][1], c - m[1][0] * c - m[1][1] * c + t[1]],
                ],
            };
            let warp_pull = push.inverse();
            pull = Some(match pull {
                Some(j) => j.compose(&warp_pull),
                None => warp_pull,
            });
        }
        if let Some(pull) = pull {
            view.rgb = affine_warp(&view.rgb, &pull, [1.0, 1.0, 1.0]);
        }

        if spec.color_drift {
            for (i, v) in view.rgb.data.iter_mut().enumerate() {
                let c = i % 3;
                let drifted = *v as f64 * (1.0 + s * d.gains[c]) + s * d.biases[c];
                *v = drifted.clamp(0.0, 1.0) as f32;
            }
        }

        if spec.background_patches {
            // Rectangle centers are picked among background pixels of the
            // (retained) clean mask, so every stamped patch is guaranteed to
            // violate the white-background convention.
            let bg: Vec<usize> = view
                .mask
                .data
                .iter()
                .enumerate()
                .filter(|(_, &m)| m == 0)
                .map(|(i, _)| i)
                .collect();
            assert!(!bg.is_empty(), "object covers the whole frame");
            for (pick, wf, hf, color) in d.patches.iter().take(d.n_patches) {
                let center = bg[(pick * bg.len() as f64) as usize % bg.len()];
                let (cx, cy) = (center % res, center / res);
                let half_w = ((s * wf * res as f64) / 2.0).round() as usize;
                let half_h = ((s * hf * res as f64) / 2.0).round() as usize;
                for y in cy.saturating_sub(half_h)..=(cy + half_h).min(res - 1) {
                    for x in cx.saturating_sub(half_w)..=(cx + half_w).min(res - 1) {
                        if view.mask.get(x, y) == 0 {
                            view.rgb.set(x, y, *color);
                        }
                    }
                }
            }
        }
    }
    out
}
