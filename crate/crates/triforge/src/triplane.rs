//! Triplane radiance fields: three axis-aligned feature planes plus the
//! small MLP head that decodes a point's concatenated plane features into
//! color and density.
//!
//! A [`Triplane`] stores features on the XY, XZ, and YZ planes of the cube
//! `[-1, 1]^3`. Querying a 3D point bilinearly interpolates each plane at
//! the point's two relevant coordinates and concatenates the three feature
//! vectors; the [`NerfHead`] maps that `3C` vector to RGB (sigmoid) and
//! non-negative density (softplus). Both halves are differentiable, so a
//! triplane can be optimized directly against rendered views or produced by
//! the feed-forward reconstructor — the renderer cannot tell the difference.
//!
//! [`density_grid`] evaluates the density at the cell centers of a regular
//! grid spanning the cube, which is exactly the field the marching-cubes
//! mesher consumes.

use ndarray::Array2;
use rand::Rng;

use crate::data::MvbTensor;
use crate::error::{Error, Result};
use crate::tensor::{ParamKind, ParamSet, Real, Tensor};

/// Default plane resolution P (each plane is P×P cells of features).
pub const TRIPLANE_RESOLUTION: usize = 32;
/// Default feature channels C per plane.
pub const TRIPLANE_CHANNELS: usize = 16;
/// Hidden width of the decoding head.
pub const NERF_HIDDEN: usize = 64;
/// World half-width of the cube the triplane spans.
pub const TRIPLANE_EXTENT: f64 = 1.0;

/// Three P×P feature planes over `[-1, 1]^3`, stored as one `[3·P·P, C]`
/// tensor (plane-major, then row-major over the plane's (v, u) grid).
///
/// The tensor may be a leaf (direct optimization), a graph node (the
/// reconstructor's output), or a constant (inference on a loaded snapshot).
#[derive(Clone)]
pub struct Triplane<T: Real> {
    features: Tensor<T>,
    resolution: usize,
    channels: usize,
}

impl<T: Real> Triplane<T> {
    /// Wrap an existing `[3·P·P, C]` feature tensor.
    pub fn new(features: Tensor<T>, resolution: usize) -> Result<Self> {
        let (rows, channels) = features.shape();
        if resolution < 2 || rows != 3 * resolution * resolution || channels == 0 {
            return Err(Error::InvalidArg(format!(
                "triplane features [{rows}, {channels}] do not match resolution {resolution}"
            )));
        }
        Ok(Triplane {
            features,
            resolution,
            channels,
        })
    }

    /// All-zero learnable triplane (a leaf tensor with gradients enabled).
    pub fn zeros(resolution: usize, channels: usize) -> Self {
        Triplane {
            features: Tensor::leaf(Array2::zeros((3 * resolution * resolution, channels))),
            resolution,
            channels,
        }
    }

    /// The underlying `[3·P·P, C]` feature tensor.
    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    /// Plane resolution P.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Feature channels C per plane.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Bilinear features for `points` (`[N, 3]`, coordinates in `[-1, 1]`,
    /// clamped outside); returns `[N, 3C]`, differentiable w.r.t. both the
    /// planes and the points.
    pub fn sample(&self, points: &Tensor<T>) -> Result<Tensor<T>> {
        self.features.triplane_sample(points, self.resolution)
    }

    /// Snapshot as three `[C, P, P]` MVB1 records (XY, XZ, YZ order).
    pub fn to_mvb(&self) -> Vec<MvbTensor> {
        let (p, c) = (self.resolution, self.channels);
        let data = self.features.data();
        (0..3)
            .map(|q| {
                let mut plane = Vec::with_capacity(c * p * p);
                for ch in 0..c {
                    for v in 0..p {
                        for u in 0..p {
                            plane.push(data[[q * p * p + v * p + u, ch]].to_f32());
                        }
                    }
                }
                MvbTensor::f32(vec![c as u32, p as u32, p as u32], plane)
            })
            .collect()
    }

    /// Write the [`Self::to_mvb`] snapshot to a file.
    pub fn save_mvb(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::data::save_mvb(path, &self.to_mvb())
    }

    /// Rebuild a triplane (as a constant tensor) from a [`Self::to_mvb`]
    /// snapshot.
    pub fn from_mvb(tensors: &[MvbTensor]) -> Result<Self> {
        if tensors.len() != 3 {
            return Err(Error::format(
                "MVB1",
                format!("triplane snapshot needs 3 records, got {}", tensors.len()),
            ));
        }
        let extents = tensors[0].extents().to_vec();
        if extents.len() != 3 || extents[1] != extents[2] {
            return Err(Error::format(
                "MVB1",
                format!("triplane record extents {extents:?}, want [C, P, P]"),
            ));
        }
        let (c, p) = (extents[0] as usize, extents[1] as usize);
        let mut features = Array2::zeros((3 * p * p, c));
        for (q, t) in tensors.iter().enumerate() {
            let MvbTensor::F32 { extents: e, data } = t else {
                return Err(Error::format("MVB1", "triplane records must be f32".to_string()));
            };
            if e != &extents {
                return Err(Error::format(
                    "MVB1",
                    format!("plane {q} extents {e:?} differ from {extents:?}"),
                ));
            }
            for ch in 0..c {
                for v in 0..p {
                    for u in 0..p {
                        features[[q * p * p + v * p + u, ch]] =
                            T::from_f32(data[(ch * p + v) * p + u]);
                    }
                }
            }
        }
        Triplane::new(Tensor::constant(features), p)
    }
}

/// The 4-layer decoding MLP: `3C -> 64 -> 64 -> 64 -> 4`, relu between
/// layers, RGB through sigmoid and density through softplus at the output.
pub struct NerfHead<T: Real> {
    w: [Tensor<T>; 4],
    b: [Tensor<T>; 4],
    in_dim: usize,
}

impl<T: Real> NerfHead<T> {
    /// Register a fresh head's parameters into `params` under
    /// `{prefix}.w0..w3 / b0..b3` (He-initialized weights, zero biases).
    pub fn init(
        params: &mut ParamSet<T>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let dims = [(in_dim, hidden), (hidden, hidden), (hidden, hidden), (hidden, 4)];
        let mut layer = 0;
        let w = dims.map(|(rows, cols)| {
            let dist = rand_distr::Normal::new(0.0f64, (2.0 / rows as f64).sqrt())
                .expect("std is finite and positive");
            let init = Array2::from_shape_fn((rows, cols), |_| T::from_f64(rng.sample(dist)));
            let t = params.register(&format!("{prefix}.w{layer}"), ParamKind::Weight, init);
            layer += 1;
            t
        });
        layer = 0;
        let b = [hidden, hidden, hidden, 4].map(|cols| {
            let t = params.register(
                &format!("{prefix}.b{layer}"),
                ParamKind::Bias,
                Array2::zeros((1, cols)),
            );
            layer += 1;
            t
        });
        NerfHead { w, b, in_dim }
    }

    /// Feature width this head expects (`3C`).
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Decode `[N, 3C]` features into (`rgb: [N, 3]` in `[0,1]`,
    /// `density: [N, 1]` non-negative).
    pub fn decode(&self, features: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut x = features.clone();
        for i in 0..3 {
            x = x.matmul(&self.w[i])?.add_row(&self.b[i])?.relu();
        }
        let out = x.matmul(&self.w[3])?.add_row(&self.b[3])?;
        let rgb = out.narrow_cols(0, 3)?.sigmoid();
        let density = out.narrow_cols(3, 1)?.softplus();
        Ok((rgb, density))
    }

    /// Sample the triplane at `points` and decode in one call.
    pub fn radiance(
        &self,
        tp: &Triplane<T>,
        points: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        self.decode(&tp.sample(points)?)
    }
}

/// Density evaluated at the cell centers of a `res`-cubed grid over
/// `[-1, 1]^3`; index order is `(z * res + y) * res + x`.
pub struct DensityGrid<T> {
    resolution: usize,
    values: Vec<T>,
}

impl<T: Real> DensityGrid<T> {
    /// Grid resolution per axis.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// All values, `(z * res + y) * res + x` order.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Density at cell `(x, y, z)`.
    pub fn at(&self, x: usize, y: usize, z: usize) -> T {
        self.values[(z * self.resolution + y) * self.resolution + x]
    }

    /// World coordinate of cell center `i` along one axis.
    pub fn cell_center(i: usize, res: usize) -> f64 {
        (2 * i + 1) as f64 / res as f64 - 1.0
    }
}

/// Evaluate the density field at every cell center of a `res³` grid.
///
/// Accepts `res` in `[2, 256]`; evaluation is chunked per z-slice so memory
/// stays flat at any resolution.
pub fn density_grid<T: Real>(
    tp: &Triplane<T>,
    head: &NerfHead<T>,
    res: usize,
) -> Result<DensityGrid<T>> {
    if !(2..=256).contains(&res) {
        return Err(Error::InvalidArg(format!(
            "density grid resolution {res} outside [2, 256]"
        )));
    }
    let mut values = Vec::with_capacity(res * res * res);
    for z in 0..res {
        let cz = DensityGrid::<T>::cell_center(z, res);
        let points = Tensor::constant(Array2::from_shape_fn((res * res, 3), |(i, axis)| {
            let (x, y) = (i % res, i / res);
            T::from_f64(match axis {
                0 => DensityGrid::<T>::cell_center(x, res),
                1 => DensityGrid::<T>::cell_center(y, res),
                _ => cz,
            })
        }));
        let (_, density) = head.radiance(tp, &points)?;
        values.extend(density.data().iter().copied());
    }
    Ok(DensityGrid {
        resolution: res,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_triplane(p: usize, c: usize, seed: u64) -> Triplane<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = Array2::from_shape_fn((3 * p * p, c), |_| rng.gen_range(-1.0f32..1.0));
        Triplane::new(Tensor::leaf(features), p).expect("consistent shape")
    }

    fn random_head(in_dim: usize, seed: u64) -> (ParamSet<f32>, NerfHead<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let head = NerfHead::init(&mut params, "head", in_dim, NERF_HIDDEN, &mut rng);
        (params, head)
    }

    #[test]
    fn zeroed_head_emits_mid_gray_and_log_two_density() {
        let (params, head) = random_head(6, 0);
        for p in params.iter() {
            let (r, c) = p.tensor.shape();
            p.tensor.set_value(Array2::zeros((r, c)));
        }
        let feats = Tensor::constant(Array2::from_elem((5, 6), 0.37f32));
        let (rgb, density) = head.decode(&feats).expect("width matches");
        for &v in rgb.data().iter() {
            assert!((v - 0.5).abs() < 1e-7, "rgb {v} should be sigmoid(0)");
        }
        for &d in density.data().iter() {
            assert!(
                (d - std::f32::consts::LN_2).abs() < 1e-6,
                "density {d} should be softplus(0) = ln 2"
            );
        }
    }

    #[test]
    fn decode_output_ranges_hold_for_random_inputs() {
        let (_params, head) = random_head(12, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feats = Tensor::constant(Array2::from_shape_fn((10_000, 12), |_| {
            rng.gen_range(-20.0f32..20.0)
        }));
        let (rgb, density) = head.decode(&feats).expect("width matches");
        assert!(rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(density.data().iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn decode_rejects_wrong_feature_width() {
        let (_params, head) = random_head(12, 3);
        let feats = Tensor::constant(Array2::<f32>::zeros((4, 7)));
        assert!(head.decode(&feats).is_err());
    }

    #[test]
    fn decode_is_batchable() {
        let (_params, head) = random_head(9, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let all = Array2::from_shape_fn((8, 9), |_| rng.gen_range(-2.0f32..2.0));
        let (rgb, density) = head
            .decode(&Tensor::constant(all.clone()))
            .expect("decode full");
        let top = Tensor::constant(all.slice(ndarray::s![..4, ..]).to_owned());
        let bot = Tensor::constant(all.slice(ndarray::s![4.., ..]).to_owned());
        let (rgb_a, den_a) = head.decode(&top).expect("decode top");
        let (rgb_b, den_b) = head.decode(&bot).expect("decode bottom");
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(rgb.data()[[i, j]], rgb_a.data()[[i, j]]);
                assert_eq!(rgb.data()[[i + 4, j]], rgb_b.data()[[i, j]]);
            }
            assert_eq!(density.data()[[i, 0]], den_a.data()[[i, 0]]);
            assert_eq!(density.data()[[i + 4, 0]], den_b.data()[[i, 0]]);
        }
    }

    #[test]
    fn gradcheck_through_decode() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ParamSet::<f64>::new();
        let head = NerfHead::init(&mut params, "head", 6, 8, &mut rng);
        let x0 = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0));
        let err = gradcheck(
            |x| {
                let (rgb, density) = head.decode(x).expect("width matches");
                rgb.sum_all().add(&density.sum_all()).expect("scalars")
            },
            &x0,
            1e-5,
        )
        .expect("finite");
        assert!(err <= 1e-4, "decode gradcheck error {err}");
    }

    #[test]
    fn gradcheck_sampling_through_wrapper() {
        let p = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0 = Array2::from_shape_fn((3 * p * p, 2), |_| rng.gen_range(-1.0..1.0));
        let pts = Tensor::constant(Array2::from_shape_fn((5, 3), |_| {
            rng.gen_range(-0.9..0.9)
        }));
        let err = gradcheck(
            |planes| {
                let tp = Triplane::new(planes.clone(), p).expect("consistent shape");
                tp.sample(&pts).expect("points are [N,3]").sum_all()
            },
            &x0,
            1e-5,
        )
        .expect("finite");
        assert!(err <= 1e-4, "sample gradcheck error {err}");
    }

    #[test]
    fn sampling_is_lipschitz_in_the_points() {
        let p = 8;
        let tp = random_triplane(p, 3, 8);
        // Bound the per-channel rate of change by the largest adjacent
        // feature difference times the grid scale, one term per coordinate.
        let data = tp.features().data();
        let mut max_adjacent = 0.0f64;
        for q in 0..3 {
            for v in 0..p {
                for u in 0..p {
                    let here = q * p * p + v * p + u;
                    for ch in 0..3 {
                        if u + 1 < p {
                            let d = (data[[here, ch]] - data[[here + 1, ch]]).abs() as f64;
                            max_adjacent = max_adjacent.max(d);
                        }
                        if v + 1 < p {
                            let d = (data[[here, ch]] - data[[here + p, ch]]).abs() as f64;
                            max_adjacent = max_adjacent.max(d);
                        }
                    }
                }
            }
        }
        drop(data);
        let lipschitz = max_adjacent * (p - 1) as f64 / 2.0 * 2.0;

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.99..0.99));
            let delta = 1e-3;
            let b: [f64; 3] = std::array::from_fn(|i| a[i] + rng.gen_range(-delta..delta));
            let dist = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let q = |pt: [f64; 3]| {
                let t = Tensor::constant(Array2::from_shape_fn((1, 3), |(_, j)| pt[j] as f32));
                tp.sample(&t).expect("points are [N,3]").value()
            };
            let (ya, yb) = (q(a), q(b));
            for (va, vb) in ya.iter().zip(yb.iter()) {
                let diff = (va - vb).abs() as f64;
                assert!(
                    diff <= lipschitz * dist + 1e-6,
                    "feature jumped {diff} over distance {dist} (bound {lipschitz})"
                );
            }
        }
    }

    #[test]
    fn grid_res_two_evaluates_at_half_cube_corners() {
        for (i, want) in [(0usize, -0.5), (1usize, 0.5)] {
            let got = DensityGrid::<f32>::cell_center(i, 2);
            assert!((got - want).abs() < 1e-12, "center {i} = {got}");
        }
        let tp = random_triplane(4, 2, 10);
        let (_params, head) = random_head(6, 11);
        let grid = density_grid(&tp, &head, 2).expect("res in range");
        assert_eq!(grid.values().len(), 8);
    }

    #[test]
    fn grid_matches_pointwise_sample_decode() {
        let tp = random_triplane(5, 2, 12);
        let (_params, head) = random_head(6, 13);
        let res = 5;
        let grid = density_grid(&tp, &head, res).expect("res in range");
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let (x, y, z) = (
                rng.gen_range(0..res),
                rng.gen_range(0..res),
                rng.gen_range(0..res),
            );
            let pt = Tensor::constant(Array2::from_shape_fn((1, 3), |(_, j)| {
                DensityGrid::<f32>::cell_center([x, y, z][j], res) as f32
            }));
            let (_, density) = head.radiance(&tp, &pt).expect("single point");
            assert_eq!(grid.at(x, y, z), density.item());
        }
    }

    #[test]
    fn grid_refinement_shares_cell_centers_at_odd_ratios() {
        // Cell centers (2i+1)/res - 1 coincide between res and 3·res at
        // j = 3i + 1, so the coarse grid must embed into the fine one.
        let tp = random_triplane(6, 2, 15);
        let (_params, head) = random_head(6, 16);
        let coarse = density_grid(&tp, &head, 5).expect("res in range");
        let fine = density_grid(&tp, &head, 15).expect("res in range");
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    let c = coarse.at(x, y, z);
                    let f = fine.at(3 * x + 1, 3 * y + 1, 3 * z + 1);
                    assert!(
                        (c - f).abs() < 1e-5,
                        "grid refinement mismatch at ({x},{y},{z}): {c} vs {f}"
                    );
                }
            }
        }
    }

    #[test]
    fn grid_rejects_out_of_range_resolution() {
        let tp = random_triplane(4, 2, 17);
        let (_params, head) = random_head(6, 18);
        assert!(density_grid(&tp, &head, 1).is_err());
        assert!(density_grid(&tp, &head, 257).is_err());
    }

    #[test]
    fn mvb_snapshot_round_trips() {
        let tp = random_triplane(6, 4, 19);
        let records = tp.to_mvb();
        assert_eq!(records.len(), 3);
        for r in &records {
            assert_eq!(r.extents(), &[4, 6, 6]);
        }
        let back = Triplane::<f32>::from_mvb(&records).expect("well-formed snapshot");
        assert_eq!(back.resolution(), 6);
        assert_eq!(back.channels(), 4);
        assert_eq!(tp.features().value(), back.features().value());
    }

    #[test]
    fn mvb_snapshot_rejects_malformed_input() {
        let tp = random_triplane(4, 2, 20);
        let mut records = tp.to_mvb();
        assert!(Triplane::<f32>::from_mvb(&records[..2]).is_err());
        records[1] = MvbTensor::f32(vec![2, 5, 5], vec![0.0; 50]);
        assert!(Triplane::<f32>::from_mvb(&records).is_err());
    }
}
