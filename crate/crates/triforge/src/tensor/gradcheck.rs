//! Finite-difference verification of backward rules.
//!
//! [`gradcheck`] compares the analytic gradient of a scalar-valued function
//! against central finite differences, coordinate by coordinate, and returns
//! the worst relative error. It is meant to run in `f64`: with a step of
//! `1e-5`, central differences carry ~1e-10 truncation error, so an analytic
//! gradient that is correct to first order scores well below the crate-wide
//! acceptance threshold of `1e-4`.
//!
//! Non-differentiable points (relu kinks, clamp edges) are the caller's
//! responsibility: either keep test inputs away from them or pass the
//! affected coordinate indices to [`gradcheck_excluding`].

use ndarray::Array2;

use super::{set_strict, take_nonfinite, Tensor};
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `x` (no autodiff involved).
pub fn numeric_gradient(
    f: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    x: &Array2<f64>,
    eps: f64,
) -> Array2<f64> {
    let mut grad = Array2::zeros(x.dim());
    let (rows, cols) = x.dim();
    for i in 0..rows {
        for j in 0..cols {
            let mut xp = x.clone();
            xp[[i, j]] += eps;
            let mut xm = x.clone();
            xm[[i, j]] -= eps;
            let fp = f(&Tensor::constant(xp)).item();
            let fm = f(&Tensor::constant(xm)).item();
            grad[[i, j]] = (fp - fm) / (2.0 * eps);
        }
    }
    grad
}

/// Compare analytic vs numeric gradients of the scalar function `f` at `x`.
///
/// Returns the max over coordinates of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// Every op evaluated while the check runs is scanned for NaN/Inf; the first
/// offender aborts with [`Error::NonFinite`] naming the op.
pub fn gradcheck(
    f: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    x: &Array2<f64>,
    eps: f64,
) -> Result<f64> {
    gradcheck_excluding(f, x, eps, &[])
}

/// [`gradcheck`] that ignores the given flat (row-major) coordinate indices —
/// for inputs deliberately placed at subgradient points like relu kinks.
pub fn gradcheck_excluding(
    f: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    x: &Array2<f64>,
    eps: f64,
    exclude: &[usize],
) -> Result<f64> {
    set_strict(true);
    let result = (|| {
        let leaf = Tensor::leaf(x.clone());
        let out = f(&leaf);
        if let Some(op) = take_nonfinite() {
            return Err(Error::NonFinite { op });
        }
        out.backward()?;
        let analytic = leaf
            .grad()
            .unwrap_or_else(|| Array2::zeros(x.dim()));

        let numeric = numeric_gradient(&f, x, eps);
        if let Some(op) = take_nonfinite() {
            return Err(Error::NonFinite { op });
        }

        let cols = x.ncols();
        let mut worst = 0.0f64;
        for ((i, j), &a) in analytic.indexed_iter() {
            if exclude.contains(&(i * cols + j)) {
                continue;
            }
            let n = numeric[[i, j]];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        Ok(worst)
    })();
    set_strict(false);
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// The crate-wide gradient tolerance (f64, central differences, step 1e-5).
    const TOL: f64 = 1e-4;
    const EPS: f64 = 1e-5;

    fn rand_arr(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(lo..hi))
    }

    /// Scalar "probe" loss: a random fixed projection of y exposes the full
    /// Jacobian rather than just its row sums.
    fn probe(y: &Tensor<f64>, w: &Array2<f64>) -> Tensor<f64> {
        y.mul(&Tensor::constant(w.clone())).unwrap().sum_all()
    }

    /// Run 20 seeded random cases of a single-input op builder.
    fn check20(
        seed: u64,
        make_x: impl Fn(&mut ChaCha8Rng) -> Array2<f64>,
        build: impl Fn(&Tensor<f64>, &mut ChaCha8Rng) -> Tensor<f64>,
    ) {
        for case in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(case));
            let x = make_x(&mut rng);
            // Build once to learn the output shape for the probe weights.
            let shape = build(&Tensor::constant(x.clone()), &mut rng.clone()).shape();
            let w = rand_arr(&mut rng, shape.0, shape.1, -1.0, 1.0);
            let brng = rng.clone();
            let err = gradcheck(
                |t| {
                    let mut r = brng.clone();
                    probe(&build(t, &mut r), &w)
                },
                &x,
                EPS,
            )
            .unwrap();
            assert!(err <= TOL, "case {case}: relative error {err:.3e} > {TOL:e}");
        }
    }

    #[test]
    fn gradcheck_of_sum_is_exact() {
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.37 - 1.0);
        // Sum is linear, so a larger step has no truncation error and keeps
        // the floating-point cancellation in the quotient far below 1e-10.
        let err = gradcheck(|t| t.sum_all(), &x, 1e-3).unwrap();
        assert!(err <= 1e-10, "sum gradcheck error {err:.3e}");
    }

    #[test]
    fn unary_smooth_ops() {
        check20(1, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.neg());
        check20(2, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.add_scalar(0.7));
        check20(3, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.mul_scalar(-1.3));
        check20(4, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.sub_from_scalar(1.0));
        check20(5, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.exp());
        check20(6, |r| rand_arr(r, 3, 4, 0.1, 3.0), |t, _| t.ln());
        check20(7, |r| rand_arr(r, 3, 4, 0.1, 3.0), |t, _| t.sqrt());
        check20(8, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.square());
        check20(9, |r| rand_arr(r, 3, 4, -4.0, 4.0), |t, _| t.sigmoid());
        check20(10, |r| rand_arr(r, 3, 4, -4.0, 4.0), |t, _| t.softplus());
    }

    #[test]
    fn unary_kinked_ops_away_from_kinks() {
        // Keep inputs > eps away from the non-differentiable points.
        let kink_free = |r: &mut ChaCha8Rng| {
            Array2::from_shape_fn((3, 4), |_| {
                let mag = r.gen_range(0.05..2.0);
                if r.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
        };
        check20(11, kink_free, |t, _| t.relu());
        check20(12, kink_free, |t, _| t.abs());
        check20(13, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| {
            // Clamp band chosen so no sample sits within eps of an edge.
            t.clamp(-2.5, 2.5)
        });
    }

    #[test]
    fn relu_kink_exclusion_reports_clean_after_masking() {
        // Coordinate 1 sits exactly on the kink: analytic subgradient is 0,
        // numeric central difference is 0.5 — a genuine mismatch.
        let x = ndarray::array![[1.0, 0.0, -1.0]];
        let full = gradcheck(|t| t.relu().sum_all(), &x, EPS).unwrap();
        assert!(full > TOL, "kink should trip the unmasked check, got {full:.3e}");
        let masked = gradcheck_excluding(|t| t.relu().sum_all(), &x, EPS, &[1]).unwrap();
        assert!(masked <= TOL, "masked check should pass, got {masked:.3e}");
    }

    #[test]
    fn binary_and_broadcast_ops_wrt_first_operand() {
        check20(20, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, r| {
            let other = Tensor::constant(rand_arr(r, 3, 4, -2.0, 2.0));
            t.add(&other).unwrap()
        });
        check20(21, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, r| {
            let other = Tensor::constant(rand_arr(r, 3, 4, -2.0, 2.0));
            t.sub(&other).unwrap()
        });
        check20(22, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, r| {
            let other = Tensor::constant(rand_arr(r, 3, 4, -2.0, 2.0));
            t.mul(&other).unwrap()
        });
        check20(23, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, r| {
            t.add_row(&Tensor::constant(rand_arr(r, 1, 4, -1.0, 1.0))).unwrap()
        });
        check20(24, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, r| {
            t.mul_row(&Tensor::constant(rand_arr(r, 1, 4, -1.0, 1.0))).unwrap()
        });
        check20(25, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, r| {
            t.add_col(&Tensor::constant(rand_arr(r, 3, 1, -1.0, 1.0))).unwrap()
        });
        check20(26, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, r| {
            t.scale_rows(&Tensor::constant(rand_arr(r, 3, 1, -1.0, 1.0))).unwrap()
        });
    }

    #[test]
    fn binary_and_broadcast_ops_wrt_second_operand() {
        check20(30, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, r| {
            Tensor::constant(rand_arr(r, 3, 4, -2.0, 2.0)).mul(t).unwrap()
        });
        check20(31, |r| rand_arr(r, 1, 4, -1.0, 1.0), |t, r| {
            Tensor::constant(rand_arr(r, 3, 4, -2.0, 2.0)).add_row(t).unwrap()
        });
        check20(32, |r| rand_arr(r, 1, 4, -1.0, 1.0), |t, r| {
            Tensor::constant(rand_arr(r, 3, 4, -2.0, 2.0)).mul_row(t).unwrap()
        });
        check20(33, |r| rand_arr(r, 3, 1, -1.0, 1.0), |t, r| {
            Tensor::constant(rand_arr(r, 3, 4, -2.0, 2.0)).add_col(t).unwrap()
        });
        check20(34, |r| rand_arr(r, 3, 1, -1.0, 1.0), |t, r| {
            Tensor::constant(rand_arr(r, 3, 4, -2.0, 2.0)).scale_rows(t).unwrap()
        });
    }

    #[test]
    fn matmul_both_sides() {
        check20(40, |r| rand_arr(r, 3, 5, -1.0, 1.0), |t, r| {
            t.matmul(&Tensor::constant(rand_arr(r, 5, 2, -1.0, 1.0))).unwrap()
        });
        check20(41, |r| rand_arr(r, 5, 2, -1.0, 1.0), |t, r| {
            Tensor::constant(rand_arr(r, 3, 5, -1.0, 1.0)).matmul(t).unwrap()
        });
    }

    #[test]
    fn structural_ops() {
        check20(50, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.transpose());
        check20(51, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.reshape(6, 2).unwrap());
        check20(52, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, r| {
            let other = Tensor::constant(rand_arr(r, 2, 4, -1.0, 1.0));
            Tensor::concat_rows(&[t, &other]).unwrap()
        });
        check20(53, |r| rand_arr(r, 5, 3, -2.0, 2.0), |t, _| t.narrow_rows(1, 3).unwrap());
        check20(54, |r| rand_arr(r, 3, 5, -2.0, 2.0), |t, _| t.narrow_cols(2, 2).unwrap());
        check20(55, |r| rand_arr(r, 4, 3, -2.0, 2.0), |t, _| {
            t.gather_rows(&[0, 2, 2, 3, 1, 0]).unwrap()
        });
    }

    #[test]
    fn reduction_ops() {
        check20(60, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.sum_all());
        check20(61, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.mean_all());
        check20(62, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.sum_axis0());
        check20(63, |r| rand_arr(r, 3, 4, -2.0, 2.0), |t, _| t.sum_axis1());
    }

    #[test]
    fn normalizer_ops() {
        check20(70, |r| rand_arr(r, 3, 6, -2.0, 2.0), |t, _| t.softmax_rows());
        check20(71, |r| rand_arr(r, 3, 6, -2.0, 2.0), |t, r| {
            let gamma = Tensor::constant(rand_arr(r, 1, 6, 0.5, 1.5));
            let beta = Tensor::constant(rand_arr(r, 1, 6, -0.5, 0.5));
            t.layer_norm(&gamma, &beta, 1e-5).unwrap()
        });
        // Layer norm w.r.t. gamma and beta.
        check20(72, |r| rand_arr(r, 1, 6, 0.5, 1.5), |t, r| {
            let x = Tensor::constant(rand_arr(r, 3, 6, -2.0, 2.0));
            let beta = Tensor::constant(rand_arr(r, 1, 6, -0.5, 0.5));
            x.layer_norm(t, &beta, 1e-5).unwrap()
        });
        check20(73, |r| rand_arr(r, 1, 6, -0.5, 0.5), |t, r| {
            let x = Tensor::constant(rand_arr(r, 3, 6, -2.0, 2.0));
            let gamma = Tensor::constant(rand_arr(r, 1, 6, 0.5, 1.5));
            x.layer_norm(&gamma, t, 1e-5).unwrap()
        });
    }

    #[test]
    fn render_support_ops() {
        check20(80, |r| rand_arr(r, 3, 6, -1.0, 1.0), |t, _| t.cumsum_exclusive_rows());
        check20(81, |r| rand_arr(r, 6, 3, -1.0, 1.0), |t, _| t.sum_segments(3).unwrap());
        check20(82, |r| rand_arr(r, 16, 2, -1.0, 1.0), |t, _| t.avg_pool2x(4, 4).unwrap());
    }

    #[test]
    fn triplane_sample_wrt_planes_and_points() {
        let p = 5;
        // W.r.t. plane features.
        check20(90, |r| rand_arr(r, 3 * 5 * 5, 2, -1.0, 1.0), |t, r| {
            let pts = Tensor::constant(rand_arr(r, 4, 3, -0.95, 0.95));
            t.triplane_sample(&pts, p).unwrap()
        });
        // W.r.t. the query points (keep them away from cell boundaries:
        // bilinear interpolation is only piecewise smooth).
        check20(91, |r| {
            Array2::from_shape_fn((4, 3), |_| {
                // Cell interiors: offset 0.25–0.75 of a cell, cells are 0.5 wide.
                let cell = r.gen_range(0..(p - 1)) as f64;
                let frac = r.gen_range(0.25..0.75);
                (cell + frac) / (p - 1) as f64 * 2.0 - 1.0
            })
        }, |t, r| {
            let planes = Tensor::constant(rand_arr(r, 3 * 5 * 5, 2, -1.0, 1.0));
            planes.triplane_sample(t, p).unwrap()
        });
    }

    #[test]
    fn three_layer_mlp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let x = rand_arr(&mut rng, 4, 6, -1.0, 1.0);
        let w1 = rand_arr(&mut rng, 6, 8, -0.5, 0.5);
        let b1 = rand_arr(&mut rng, 1, 8, -0.2, 0.2);
        let w2 = rand_arr(&mut rng, 8, 8, -0.5, 0.5);
        let b2 = rand_arr(&mut rng, 1, 8, -0.2, 0.2);
        let w3 = rand_arr(&mut rng, 8, 2, -0.5, 0.5);
        let b3 = rand_arr(&mut rng, 1, 2, -0.2, 0.2);
        let probe_w = rand_arr(&mut rng, 4, 2, -1.0, 1.0);

        // One forward graph parameterized by which tensor is the gradcheck
        // leaf; everything else enters as constants.
        let tensors: Vec<(&str, &Array2<f64>)> = vec![
            ("x", &x),
            ("w1", &w1),
            ("b1", &b1),
            ("w2", &w2),
            ("b2", &b2),
            ("w3", &w3),
            ("b3", &b3),
        ];
        for (name, arr) in &tensors {
            let err = gradcheck(
                |leaf| {
                    let pick = |n: &str, a: &Array2<f64>| {
                        if n == *name {
                            leaf.clone()
                        } else {
                            Tensor::constant(a.clone())
                        }
                    };
                    let xs = pick("x", &x);
                    let h1 = xs
                        .matmul(&pick("w1", &w1)).unwrap()
                        .add_row(&pick("b1", &b1)).unwrap()
                        .relu();
                    let h2 = h1
                        .matmul(&pick("w2", &w2)).unwrap()
                        .add_row(&pick("b2", &b2)).unwrap()
                        .relu();
                    let out = h2
                        .matmul(&pick("w3", &w3)).unwrap()
                        .add_row(&pick("b3", &b3)).unwrap();
                    out.mul(&Tensor::constant(probe_w.clone())).unwrap().sum_all()
                },
                arr,
                EPS,
            )
            .unwrap();
            assert!(err <= TOL, "MLP gradcheck for {name}: {err:.3e} > {TOL:e}");
        }
    }

    #[test]
    fn nonfinite_intermediate_names_the_op() {
        let x = ndarray::array![[-2.0]];
        let err = gradcheck(|t| t.ln().sum_all(), &x, EPS).unwrap_err();
        match err {
            crate::error::Error::NonFinite { op } => assert_eq!(op, "ln"),
            e => panic!("expected NonFinite, got {e:?}"),
        }
    }

    #[test]
    fn composite_attention_block_gradcheck() {
        // Exercises matmul, transpose, scaling, softmax, and residual adds in
        // one graph — the exact shape of the encoder's attention math.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = rand_arr(&mut rng, 5, 4, -1.0, 1.0);
        let wq = rand_arr(&mut rng, 4, 4, -0.5, 0.5);
        let wk = rand_arr(&mut rng, 4, 4, -0.5, 0.5);
        let wv = rand_arr(&mut rng, 4, 4, -0.5, 0.5);
        let probe_w = rand_arr(&mut rng, 5, 4, -1.0, 1.0);
        let err = gradcheck(
            |t| {
                let q = t.matmul(&Tensor::constant(wq.clone())).unwrap();
                let k = t.matmul(&Tensor::constant(wk.clone())).unwrap();
                let v = t.matmul(&Tensor::constant(wv.clone())).unwrap();
                let scores = q.matmul(&k.transpose()).unwrap().mul_scalar(0.5);
                let attn = scores.softmax_rows().matmul(&v).unwrap();
                let out = attn.add(t).unwrap();
                out.mul(&Tensor::constant(probe_w.clone())).unwrap().sum_all()
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(err <= TOL, "attention gradcheck: {err:.3e}");
    }
}
