//! Float RGB images, binary masks, and the raster operations the pipeline
//! leans on: exact area resampling, bilinear lookups, affine warps, Sobel
//! gradients, and 8-bit PNG import/export.
//!
//! Images are interleaved row-major RGB in `[0, 1]` (`f32`, the training
//! dtype). Continuous coordinates put the center of pixel `(x, y)` at
//! `(x as f64, y as f64)` — the convention every bilinear lookup and warp in
//! this module shares. Masks are strict `{0, 1}` byte rasters.

use std::path::Path;

use crate::error::{Error, Result};

/// An RGB image with `f32` channels in `[0, 1]`, interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    /// Width in pixels.
    pub width: usize,
    /// Height in pixels.
    pub height: usize,
    /// `width * height * 3` channel values, row-major, RGB interleaved.
    pub data: Vec<f32>,
}

impl ImageF {
    /// Image filled with one color.
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> ImageF {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        ImageF {
            width,
            height,
            data,
        }
    }

    /// All-white image (the pipeline's background color).
    pub fn white(width: usize, height: usize) -> ImageF {
        ImageF::filled(width, height, [1.0, 1.0, 1.0])
    }

    /// Build from a per-pixel closure called in row-major order.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> ImageF {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        ImageF {
            width,
            height,
            data,
        }
    }

    /// Pixel at `(x, y)`.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Overwrite the pixel at `(x, y)`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Clamp every channel into `[0, 1]` in place.
    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Exact box-filter (area-weighted) resampling to a new size.
    ///
    /// Every destination pixel averages the source pixels its footprint
    /// covers, weighted by overlap area — the right filter for downsampling
    /// renders to supervision resolution (no aliasing, flux preserved), and a
    /// serviceable one for the mild upscales recentering performs.
    pub fn area_resample(&self, new_width: usize, new_height: usize) -> ImageF {
        assert!(new_width > 0 && new_height > 0, "empty resample target");
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        let mut out = Vec::with_capacity(new_width * new_height * 3);
        for j in 0..new_height {
            let y0 = j as f64 * sy;
            let y1 = (j + 1) as f64 * sy;
            for i in 0..new_width {
                let x0 = i as f64 * sx;
                let x1 = (i + 1) as f64 * sx;
                let mut acc = [0.0f64; 3];
                let mut area = 0.0f64;
                let ya = y0.floor() as usize;
                let yb = (y1.ceil() as usize).min(self.height);
                let xa = x0.floor() as usize;
                let xb = (x1.ceil() as usize).min(self.width);
                for y in ya..yb {
                    let wy = (y1.min((y + 1) as f64) - y0.max(y as f64)).max(0.0);
                    if wy == 0.0 {
                        continue;
                    }
                    for x in xa..xb {
                        let wx = (x1.min((x + 1) as f64) - x0.max(x as f64)).max(0.0);
                        if wx == 0.0 {
                            continue;
                        }
                        let p = self.get(x, y);
                        let w = wx * wy;
                        acc[0] += p[0] as f64 * w;
                        acc[1] += p[1] as f64 * w;
                        acc[2] += p[2] as f64 * w;
                        area += w;
                    }
                }
                out.extend_from_slice(&[
                    (acc[0] / area) as f32,
                    (acc[1] / area) as f32,
                    (acc[2] / area) as f32,
                ]);
            }
        }
        ImageF {
            width: new_width,
            height: new_height,
            data: out,
        }
    }

    /// Bilinear lookup at continuous coordinates (pixel centers at integers).
    /// Positions more than half a pixel outside the frame return
    /// `background`; positions inside are clamped to the border.
    pub fn bilinear(&self, x: f64, y: f64, background: [f32; 3]) -> [f32; 3] {
        let (w, h) = (self.width as f64, self.height as f64);
        if x < -0.5 || y < -0.5 || x > w - 0.5 || y > h - 0.5 {
            return background;
        }
        let xc = x.clamp(0.0, w - 1.0);
        let yc = y.clamp(0.0, h - 1.0);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (xc - x0 as f64) as f32;
        let fy = (yc - y0 as f64) as f32;
        let (p00, p10) = (self.get(x0, y0), self.get(x1, y0));
        let (p01, p11) = (self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Luma grayscale (Rec. 601 weights 0.299/0.587/0.114).
    pub fn to_gray(&self) -> GrayF {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        GrayF {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Mean squared error against another image of the same size.
    pub fn mse(&self, other: &ImageF) -> f64 {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mse on mismatched sizes"
        );
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        sum / self.data.len() as f64
    }

    /// Mean absolute channel difference against another image.
    pub fn mean_abs_diff(&self, other: &ImageF) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| ((*a - *b) as f64).abs())
            .sum();
        sum / self.data.len() as f64
    }

    /// Quantize to interleaved 8-bit RGB (round to nearest).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Rebuild from interleaved 8-bit RGB.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> ImageF {
        assert_eq!(bytes.len(), width * height * 3, "rgb8 payload size");
        ImageF {
            width,
            height,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    /// Write as an 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("raw buffer matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::format("png", e.to_string()))
    }

    /// Read an 8-bit PNG (other bit depths are converted).
    pub fn load_png(path: &Path) -> Result<ImageF> {
        let img = image::open(path)
            .map_err(|e| Error::format("png", e.to_string()))?
            .to_rgb8();
        Ok(ImageF::from_rgb8(
            img.width() as usize,
            img.height() as usize,
            img.as_raw(),
        ))
    }
}

/// A single-channel float raster (luma, gradients, density slices).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayF {
    /// Width in pixels.
    pub width: usize,
    /// Height in pixels.
    pub height: usize,
    /// Row-major values.
    pub data: Vec<f32>,
}

impl GrayF {
    /// Value at `(x, y)` with border replication for out-of-range indices.
    #[inline]
    fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Sobel gradients `(gx, gy)` with replicated borders.
    pub fn sobel(&self) -> (GrayF, GrayF) {
        let mut gx = vec![0.0f32; self.data.len()];
        let mut gy = vec![0.0f32; self.data.len()];
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                let p = |dx: isize, dy: isize| self.get_clamped(x + dx, y + dy);
                let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1))
                    - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
                let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1))
                    - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
                let i = y as usize * self.width + x as usize;
                gx[i] = sx;
                gy[i] = sy;
            }
        }
        (
            GrayF {
                width: self.width,
                height: self.height,
                data: gx,
            },
            GrayF {
                width: self.width,
                height: self.height,
                data: gy,
            },
        )
    }

    /// Exact box-filter resampling (same scheme as [`ImageF::area_resample`]).
    pub fn area_resample(&self, new_width: usize, new_height: usize) -> GrayF {
        // Route through a temporary RGB image to keep one tested resampler.
        let rgb = ImageF {
            width: self.width,
            height: self.height,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        };
        let out = rgb.area_resample(new_width, new_height);
        GrayF {
            width: new_width,
            height: new_height,
            data: out.data.chunks_exact(3).map(|p| p[0]).collect(),
        }
    }
}

/// A binary raster: every byte is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    /// Width in pixels.
    pub width: usize,
    /// Height in pixels.
    pub height: usize,
    /// Row-major `{0, 1}` bytes.
    pub data: Vec<u8>,
}

impl Mask {
    /// Mask filled with one value (0 or 1).
    pub fn filled(width: usize, height: usize, value: u8) -> Mask {
        debug_assert!(value <= 1);
        Mask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Build from a per-pixel predicate.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Mask {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Mask {
            width,
            height,
            data,
        }
    }

    /// Value at `(x, y)`.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Overwrite the value at `(x, y)`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        debug_assert!(value <= 1);
        self.data[y * self.width + x] = value;
    }

    /// Iterate over the raw bytes.
    pub fn iter(&self) -> std::slice::Iter<'_, u8> {
        self.data.iter()
    }

    /// Fraction of pixels set to 1.
    pub fn coverage(&self) -> f64 {
        self.data.iter().map(|&v| v as u64).sum::<u64>() as f64 / self.data.len() as f64
    }

    /// Fraction of pixels where the two masks disagree.
    pub fn xor_fraction(&self, other: &Mask) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let n = self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| a != b)
            .count();
        n as f64 / self.data.len() as f64
    }

    /// Intersection over union; two empty masks count as identical (1.0).
    pub fn iou(&self, other: &Mask) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let mut inter = 0u64;
        let mut union = 0u64;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a & b) as u64;
            union += (a | b) as u64;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the set pixels, or `None`
    /// for an empty mask.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0) = (usize::MAX, usize::MAX);
        let (mut x1, mut y1) = (0usize, 0usize);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) == 1 {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then_some((x0, y0, x1, y1))
    }

    /// Area resampling with a 0.5 coverage threshold: a destination pixel is
    /// set when at least half of its source footprint is.
    pub fn area_resample(&self, new_width: usize, new_height: usize) -> Mask {
        let gray = GrayF {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f32).collect(),
        };
        let down = gray.area_resample(new_width, new_height);
        Mask {
            width: new_width,
            height: new_height,
            data: down.data.iter().map(|&v| (v >= 0.5) as u8).collect(),
        }
    }
}

/// A 2D affine transform in pixel coordinates: `p' = M·(x, y, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    /// Two rows of the 2×3 matrix.
    pub m: [[f64; 3]; 2],
}

impl Affine2 {
    /// The identity transform.
    pub fn identity() -> Affine2 {
        Affine2 {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    /// Pure translation.
    pub fn translation(dx: f64, dy: f64) -> Affine2 {
        Affine2 {
            m: [[1.0, 0.0, dx], [0.0, 1.0, dy]],
        }
    }

    /// Apply to a point.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    /// Composition `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &Affine2) -> Affine2 {
        let a = self.m;
        let b = inner.m;
        Affine2 {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                    a[0][0] * b[0][2] + a[0][1] * b[1][2] + a[0][2],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                    a[1][0] * b[0][2] + a[1][1] * b[1][2] + a[1][2],
                ],
            ],
        }
    }

    /// Inverse transform; panics on a singular linear part (never produced
    /// by the small perturbations this crate builds).
    pub fn inverse(&self) -> Affine2 {
        let [[a, b, tx], [c, d, ty]] = self.m;
        let det = a * d - b * c;
        assert!(det.abs() > 1e-12, "singular affine transform");
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Affine2 {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        }
    }
}

/// Warp an image by sampling the source at `pull(dest)` — `pull` is the
/// destination-to-source map. Samples falling outside the source return
/// `background`.
pub fn affine_warp(src: &ImageF, pull: &Affine2, background: [f32; 3]) -> ImageF {
    ImageF::from_fn(src.width, src.height, |x, y| {
        let (sx, sy) = pull.apply(x as f64, y as f64);
        src.bilinear(sx, sy, background)
    })
}
