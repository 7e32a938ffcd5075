//! Image fidelity metrics: PSNR and single-scale SSIM.
//!
//! Both operate on RGB images in `[0, 1]`. SSIM follows the standard recipe
//! with a 8×8 uniform sliding window on the luma channel, stabilizers
//! `C1 = (0.01)²`, `C2 = (0.03)²` at dynamic range 1, and sample (N−1)
//! covariance. PSNR of identical images is capped at 99 rather than reported
//! as infinity so report tables stay numeric.

use crate::img::ImageF;

/// PSNR cap substituting for +∞ when the images are identical.
pub const PSNR_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio in dB: `10·log₁₀(1/MSE)`, capped at
/// [`PSNR_CAP`]. Panics on mismatched sizes.
pub fn psnr(pred: &ImageF, target: &ImageF) -> f64 {
    let mse = pred.mse(target);
    if mse == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// Mean local structural similarity over all 8×8 windows of the luma
/// channel; range `[−1, 1]`, 1 iff identical. Panics on mismatched sizes or
/// images smaller than the window.
pub fn ssim(pred: &ImageF, target: &ImageF) -> f64 {
    assert_eq!(
        (pred.width, pred.height),
        (target.width, target.height),
        "ssim on mismatched sizes"
    );
    const WIN: usize = 8;
    assert!(
        pred.width >= WIN && pred.height >= WIN,
        "ssim needs at least {WIN}×{WIN} images"
    );
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let x = pred.to_gray();
    let y = target.to_gray();
    let n = (WIN * WIN) as f64;
    let mut total = 0.0;
    let mut windows = 0u64;
    for wy in 0..=(pred.height - WIN) {
        for wx in 0..=(pred.width - WIN) {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..WIN {
                let row = (wy + dy) * pred.width + wx;
                for dx in 0..WIN {
                    let a = x.data[row + dx] as f64;
                    let b = y.data[row + dx] as f64;
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = (sxx - sx * mx) / (n - 1.0);
            let vy = (syy - sy * my) / (n - 1.0);
            let cov = (sxy - sx * my) / (n - 1.0);
            let score = ((2.0 * mx * my + C1) * (2.0 * cov + C2))
                / ((mx * mx + my * my + C1) * (vx + vy + C2));
            total += score;
            windows += 1;
        }
    }
    total / windows as f64
}
