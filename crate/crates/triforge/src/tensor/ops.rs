//! The op set: forward math plus hand-derived backward rules.
//!
//! Conventions shared by every op:
//!
//! * Shapes are validated up front; shape-fallible ops return
//!   [`crate::error::Error::Shape`] naming the op and both shapes. Ops that
//!   cannot fail on valid tensors (elementwise maps, reductions) return the
//!   tensor directly.
//! * Backward closures receive the parent handles as an argument and read
//!   their data at backward time (data is immutable for a graph's lifetime).
//!   They capture only auxiliary values — a cloned forward output where the
//!   gradient formula needs it (`exp`, `sigmoid`, `softmax`), index maps,
//!   interpolation footprints. Never parent handles: the op record must stay
//!   the sole owner of its parents (see the graph teardown in `mod.rs`).
//! * Multi-parent ops compute a parent's gradient only if that parent
//!   requires one (`None` otherwise), so constants cost nothing in backward.

use ndarray::{s, Array1, Array2, Axis};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Shorthand for the shape-mismatch error.
fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Error {
    Error::Shape {
        op,
        lhs: vec![lhs.0, lhs.1],
        rhs: vec![rhs.0, rhs.1],
    }
}

impl<T: Real> Tensor<T> {
    // ---------------------------------------------------------------- unary

    fn unary(
        &self,
        name: &'static str,
        forward: impl Fn(T) -> T,
        // dx = backward(x, g) elementwise over the parent's data.
        backward: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        let y = self.data().mapv(&forward);
        Tensor::from_op(
            y,
            name,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].data();
                let mut dx = g.clone();
                dx.zip_mut_with(&x, |gv, &xv| *gv = backward(xv, *gv));
                vec![Some(dx)]
            }),
        )
    }

    /// Elementwise negation.
    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| T::zero() - x, |_, g| T::zero() - g)
    }

    /// Add a scalar to every element.
    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::from_f64(s);
        self.unary("add_scalar", move |x| x + s, |_, g| g)
    }

    /// Multiply every element by a scalar.
    pub fn mul_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::from_f64(s);
        self.unary("mul_scalar", move |x| x * s, move |_, g| g * s)
    }

    /// `s - x` elementwise (e.g. `1 - opacity`).
    pub fn sub_from_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::from_f64(s);
        self.unary("sub_from_scalar", move |x| s - x, |_, g| T::zero() - g)
    }

    /// Elementwise `e^x`. Backward reuses the forward output.
    pub fn exp(&self) -> Tensor<T> {
        let y = self.data().mapv(Real::exp);
        let yc = y.clone();
        Tensor::from_op(
            y,
            "exp",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g * &yc)]),
        )
    }

    /// Elementwise natural log.
    pub fn ln(&self) -> Tensor<T> {
        self.unary("ln", Real::ln, |x, g| g / x)
    }

    /// Elementwise square root. Backward reuses the forward output.
    pub fn sqrt(&self) -> Tensor<T> {
        let y = self.data().mapv(Real::sqrt);
        let yc = y.clone();
        let two = T::from_f64(2.0);
        Tensor::from_op(
            y,
            "sqrt",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = g.clone();
                dx.zip_mut_with(&yc, |gv, &yv| *gv = *gv / (two * yv));
                vec![Some(dx)]
            }),
        )
    }

    /// Elementwise absolute value; subgradient 0 at zero.
    pub fn abs(&self) -> Tensor<T> {
        self.unary("abs", Real::abs, |x, g| {
            if x > T::zero() {
                g
            } else if x < T::zero() {
                T::zero() - g
            } else {
                T::zero()
            }
        })
    }

    /// Elementwise `x²`.
    pub fn square(&self) -> Tensor<T> {
        let two = T::from_f64(2.0);
        self.unary("square", |x| x * x, move |x, g| two * x * g)
    }

    /// Rectified linear unit; subgradient 0 at the kink.
    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |x| x.maximum(T::zero()),
            |x, g| if x > T::zero() { g } else { T::zero() },
        )
    }

    /// Numerically stable logistic sigmoid.
    pub fn sigmoid(&self) -> Tensor<T> {
        let y = self.data().mapv(stable_sigmoid);
        let yc = y.clone();
        Tensor::from_op(
            y,
            "sigmoid",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = g.clone();
                dx.zip_mut_with(&yc, |gv, &yv| *gv = *gv * yv * (T::one() - yv));
                vec![Some(dx)]
            }),
        )
    }

    /// Numerically stable `softplus(x) = ln(1 + e^x)`; derivative is sigmoid.
    pub fn softplus(&self) -> Tensor<T> {
        self.unary(
            "softplus",
            |x| x.maximum(T::zero()) + (T::one() + (T::zero() - x.abs()).exp()).ln(),
            |x, g| g * stable_sigmoid(x),
        )
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the band.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(
            "clamp",
            move |x| x.maximum(lo).minimum(hi),
            move |x, g| {
                if x > lo && x < hi {
                    g
                } else {
                    T::zero()
                }
            },
        )
    }

    // --------------------------------------------------------------- binary

    fn check_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "add")?;
        let y = &*self.data() + &*other.data();
        let (na, nb) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            y,
            "add",
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| vec![na.then(|| g.clone()), nb.then(|| g.clone())]),
        ))
    }

    /// Elementwise difference of two same-shape tensors.
    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "sub")?;
        let y = &*self.data() - &*other.data();
        let (na, nb) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            y,
            "sub",
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                vec![na.then(|| g.clone()), nb.then(|| g.mapv(|v| T::zero() - v))]
            }),
        ))
    }

    /// Elementwise (Hadamard) product of two same-shape tensors.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "mul")?;
        let y = &*self.data() * &*other.data();
        let (na, nb) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            y,
            "mul",
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents| {
                vec![
                    na.then(|| g * &*parents[1].data()),
                    nb.then(|| g * &*parents[0].data()),
                ]
            }),
        ))
    }

    // ----------------------------------------------------- row/col broadcast

    fn check_row_vec(&self, row: &Tensor<T>, op: &'static str) -> Result<()> {
        let (_, m) = self.shape();
        if row.shape() != (1, m) {
            return Err(shape_err(op, self.shape(), row.shape()));
        }
        Ok(())
    }

    /// Add a `[1, M]` row vector to every row (bias add).
    pub fn add_row(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_row_vec(row, "add_row")?;
        let y = &*self.data() + &*row.data();
        let (nx, nr) = (self.requires_grad(), row.requires_grad());
        Ok(Tensor::from_op(
            y,
            "add_row",
            vec![self.clone(), row.clone()],
            Box::new(move |g, _| {
                vec![
                    nx.then(|| g.clone()),
                    nr.then(|| g.sum_axis(Axis(0)).insert_axis(Axis(0))),
                ]
            }),
        ))
    }

    /// Multiply every row elementwise by a `[1, M]` row vector
    /// (per-channel scaling, e.g. feature normalization).
    pub fn mul_row(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_row_vec(row, "mul_row")?;
        let y = &*self.data() * &*row.data();
        let (nx, nr) = (self.requires_grad(), row.requires_grad());
        Ok(Tensor::from_op(
            y,
            "mul_row",
            vec![self.clone(), row.clone()],
            Box::new(move |g, parents| {
                vec![
                    nx.then(|| g * &*parents[1].data()),
                    nr.then(|| {
                        (g * &*parents[0].data())
                            .sum_axis(Axis(0))
                            .insert_axis(Axis(0))
                    }),
                ]
            }),
        ))
    }

    fn check_col_vec(&self, col: &Tensor<T>, op: &'static str) -> Result<()> {
        let (n, _) = self.shape();
        if col.shape() != (n, 1) {
            return Err(shape_err(op, self.shape(), col.shape()));
        }
        Ok(())
    }

    /// Add an `[N, 1]` column vector to every column (per-row offset,
    /// e.g. blending a white background by `1 − opacity`).
    pub fn add_col(&self, col: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_col_vec(col, "add_col")?;
        let (n, m) = self.shape();
        let y = &*self.data() + &col.data().broadcast((n, m)).unwrap();
        let (nx, nc) = (self.requires_grad(), col.requires_grad());
        Ok(Tensor::from_op(
            y,
            "add_col",
            vec![self.clone(), col.clone()],
            Box::new(move |g, _| {
                vec![
                    nx.then(|| g.clone()),
                    nc.then(|| g.sum_axis(Axis(1)).insert_axis(Axis(1))),
                ]
            }),
        ))
    }

    /// Scale row `i` by `s[i]` where `s` is `[N, 1]` (e.g. compositing
    /// weights applied to per-sample colors).
    pub fn scale_rows(&self, scale: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_col_vec(scale, "scale_rows")?;
        let (n, m) = self.shape();
        let y = &*self.data() * &scale.data().broadcast((n, m)).unwrap();
        let (nx, ns) = (self.requires_grad(), scale.requires_grad());
        Ok(Tensor::from_op(
            y,
            "scale_rows",
            vec![self.clone(), scale.clone()],
            Box::new(move |g, parents| {
                let (n, m) = g.dim();
                vec![
                    nx.then(|| g * &parents[1].data().broadcast((n, m)).unwrap()),
                    ns.then(|| {
                        (g * &*parents[0].data())
                            .sum_axis(Axis(1))
                            .insert_axis(Axis(1))
                    }),
                ]
            }),
        ))
    }

    // ------------------------------------------------------------ structure

    /// Matrix product `[M,K]·[K,N] → [M,N]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let ((_, ka), (kb, _)) = (self.shape(), other.shape());
        if ka != kb {
            return Err(shape_err("matmul", self.shape(), other.shape()));
        }
        let y = self.data().dot(&*other.data());
        let (na, nb) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            y,
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents| {
                vec![
                    na.then(|| g.dot(&parents[1].data().t())),
                    nb.then(|| parents[0].data().t().dot(g)),
                ]
            }),
        ))
    }

    /// Transpose (materialized, standard layout).
    pub fn transpose(&self) -> Tensor<T> {
        let y = self.data().t().to_owned();
        Tensor::from_op(
            y,
            "transpose",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.t().to_owned())]),
        )
    }

    /// Row-major reinterpretation to a new `(rows, cols)`.
    ///
    /// Element count must be preserved; memory order is unchanged, so
    /// `[N·S, C] → [N, S·C]` concatenates S consecutive rows into one.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Tensor<T>> {
        let (r0, c0) = self.shape();
        if r0 * c0 != rows * cols {
            return Err(shape_err("reshape", (r0, c0), (rows, cols)));
        }
        let v: Vec<T> = self.data().iter().copied().collect();
        let y = Array2::from_shape_vec((rows, cols), v).expect("element count checked");
        Ok(Tensor::from_op(
            y,
            "reshape",
            vec![self.clone()],
            Box::new(move |g, _| {
                let v: Vec<T> = g.iter().copied().collect();
                vec![Some(
                    Array2::from_shape_vec((r0, c0), v).expect("same element count"),
                )]
            }),
        ))
    }

    /// Concatenate tensors along rows (all must share the column count).
    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        assert!(!parts.is_empty(), "concat_rows needs at least one input");
        let cols = parts[0].shape().1;
        let mut total = 0;
        for p in parts {
            if p.shape().1 != cols {
                return Err(shape_err("concat_rows", parts[0].shape(), p.shape()));
            }
            total += p.shape().0;
        }
        let mut y = Array2::zeros((total, cols));
        let mut offsets = Vec::with_capacity(parts.len());
        let mut at = 0;
        for p in parts {
            let r = p.shape().0;
            y.slice_mut(s![at..at + r, ..]).assign(&*p.data());
            offsets.push((at, r));
            at += r;
        }
        let parents: Vec<Tensor<T>> = parts.iter().map(|p| (*p).clone()).collect();
        let needs: Vec<bool> = parents.iter().map(|p| p.requires_grad()).collect();
        Ok(Tensor::from_op(
            y,
            "concat_rows",
            parents,
            Box::new(move |g, _| {
                offsets
                    .iter()
                    .zip(&needs)
                    .map(|(&(at, r), &need)| need.then(|| g.slice(s![at..at + r, ..]).to_owned()))
                    .collect()
            }),
        ))
    }

    /// Contiguous row range `[start, start+len)`.
    pub fn narrow_rows(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let (r, c) = self.shape();
        if start + len > r {
            return Err(shape_err("narrow_rows", (r, c), (start, len)));
        }
        let y = self.data().slice(s![start..start + len, ..]).to_owned();
        Ok(Tensor::from_op(
            y,
            "narrow_rows",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = Array2::zeros((r, c));
                dx.slice_mut(s![start..start + len, ..]).assign(g);
                vec![Some(dx)]
            }),
        ))
    }

    /// Contiguous column range `[start, start+len)`.
    pub fn narrow_cols(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let (r, c) = self.shape();
        if start + len > c {
            return Err(shape_err("narrow_cols", (r, c), (start, len)));
        }
        let y = self.data().slice(s![.., start..start + len]).to_owned();
        Ok(Tensor::from_op(
            y,
            "narrow_cols",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = Array2::zeros((r, c));
                dx.slice_mut(s![.., start..start + len]).assign(g);
                vec![Some(dx)]
            }),
        ))
    }

    /// Select rows by index, repeats allowed (`y[k,:] = x[idx[k],:]`).
    ///
    /// Backward scatter-adds, so repeated indices accumulate — this is what
    /// makes gather the substrate for nearest-neighbor upsampling and im2col
    /// convolution.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let (r, c) = self.shape();
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(shape_err("gather_rows", (r, c), (bad, 0)));
        }
        let x = self.data();
        let mut y = Array2::zeros((indices.len(), c));
        for (k, &i) in indices.iter().enumerate() {
            y.row_mut(k).assign(&x.row(i));
        }
        drop(x);
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            y,
            "gather_rows",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = Array2::zeros((r, c));
                for (k, &i) in idx.iter().enumerate() {
                    let mut row = dx.row_mut(i);
                    row += &g.row(k);
                }
                vec![Some(dx)]
            }),
        ))
    }

    // ------------------------------------------------------------ reductions

    /// Sum of all elements as `[1, 1]`.
    pub fn sum_all(&self) -> Tensor<T> {
        let total = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let (r, c) = self.shape();
        Tensor::from_op(
            Array2::from_elem((1, 1), total),
            "sum_all",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(Array2::from_elem((r, c), g[[0, 0]]))]),
        )
    }

    /// Mean of all elements as `[1, 1]`.
    pub fn mean_all(&self) -> Tensor<T> {
        let (r, c) = self.shape();
        let inv = T::from_f64(1.0 / (r * c) as f64);
        let total = self.data().iter().fold(T::zero(), |acc, &v| acc + v) * inv;
        Tensor::from_op(
            Array2::from_elem((1, 1), total),
            "mean_all",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(Array2::from_elem((r, c), g[[0, 0]] * inv))]),
        )
    }

    /// Column sums as `[1, M]`.
    pub fn sum_axis0(&self) -> Tensor<T> {
        let (r, _) = self.shape();
        let y = self.data().sum_axis(Axis(0)).insert_axis(Axis(0));
        Tensor::from_op(
            y,
            "sum_axis0",
            vec![self.clone()],
            Box::new(move |g, _| {
                let m = g.ncols();
                vec![Some(g.broadcast((r, m)).unwrap().to_owned())]
            }),
        )
    }

    /// Row sums as `[N, 1]`.
    pub fn sum_axis1(&self) -> Tensor<T> {
        let (_, c) = self.shape();
        let y = self.data().sum_axis(Axis(1)).insert_axis(Axis(1));
        Tensor::from_op(
            y,
            "sum_axis1",
            vec![self.clone()],
            Box::new(move |g, _| {
                let n = g.nrows();
                vec![Some(g.broadcast((n, c)).unwrap().to_owned())]
            }),
        )
    }

    // ------------------------------------------------------------ normalizers

    /// Row-wise softmax (stable: shifts by the row max).
    pub fn softmax_rows(&self) -> Tensor<T> {
        let x = self.data();
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            let max = row
                .iter()
                .fold(T::from_f64(f64::NEG_INFINITY), |a, &v| a.maximum(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.iter().fold(T::zero(), |a, &v| a + v);
            row.mapv_inplace(|v| v / sum);
        }
        drop(x);
        let yc = y.clone();
        Tensor::from_op(
            y,
            "softmax_rows",
            vec![self.clone()],
            Box::new(move |g, _| {
                // dx = y ⊙ (g − ⟨g, y⟩_row)
                let dot = (g * &yc).sum_axis(Axis(1)).insert_axis(Axis(1));
                let (n, m) = g.dim();
                let dx = (&yc) * &(g - &dot.broadcast((n, m)).unwrap());
                vec![Some(dx)]
            }),
        )
    }

    /// Row-wise layer normalization with affine parameters.
    ///
    /// Each row is shifted/scaled to mean 0, variance 1 (biased variance,
    /// `eps` inside the square root), then `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        self.check_row_vec(gamma, "layer_norm")?;
        self.check_row_vec(beta, "layer_norm")?;
        let (n, m) = self.shape();
        let inv_m = T::from_f64(1.0 / m as f64);
        let epst = T::from_f64(eps);

        let x = self.data();
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(n);
        for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_m;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                * inv_m;
            let istd = T::one() / (var + epst).sqrt();
            inv_std[i] = istd;
            row.mapv_inplace(|v| (v - mean) * istd);
        }
        drop(x);

        let y = &xhat * &*gamma.data() + &*beta.data();
        let (nx, ng, nb) = (
            self.requires_grad(),
            gamma.requires_grad(),
            beta.requires_grad(),
        );
        Ok(Tensor::from_op(
            y,
            "layer_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, parents| {
                let dgamma = ng.then(|| (g * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                let dbeta = nb.then(|| g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                let dx = nx.then(|| {
                    // dx̂ = g ⊙ γ; dx = istd·(dx̂ − mean(dx̂) − x̂·mean(dx̂ ⊙ x̂))
                    let dxhat = g * &*parents[1].data();
                    let mean_dxhat = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1)) * inv_m;
                    let mean_dxhat_xhat =
                        (&dxhat * &xhat).sum_axis(Axis(1)).insert_axis(Axis(1)) * inv_m;
                    let (n, m) = dxhat.dim();
                    let mut dx = &dxhat
                        - &mean_dxhat.broadcast((n, m)).unwrap()
                        - &(&xhat * &mean_dxhat_xhat.broadcast((n, m)).unwrap());
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let istd = inv_std[i];
                        row.mapv_inplace(|v| v * istd);
                    }
                    dx
                });
                vec![dx, dgamma, dbeta]
            }),
        ))
    }

    // --------------------------------------------------------- render support

    /// Exclusive cumulative sum along each row:
    /// `y[i,j] = Σ_{k<j} x[i,k]`, so `y[i,0] = 0`.
    ///
    /// This is the accumulated optical depth before sample `j` when rows are
    /// rays and columns are ray samples.
    pub fn cumsum_exclusive_rows(&self) -> Tensor<T> {
        let x = self.data();
        let (n, m) = x.dim();
        let mut y = Array2::zeros((n, m));
        for i in 0..n {
            let mut acc = T::zero();
            for j in 0..m {
                y[[i, j]] = acc;
                acc = acc + x[[i, j]];
            }
        }
        drop(x);
        Tensor::from_op(
            y,
            "cumsum_exclusive_rows",
            vec![self.clone()],
            Box::new(move |g, _| {
                // dL/dx[i,k] = Σ_{j>k} g[i,j]: reverse exclusive suffix sum.
                let (n, m) = g.dim();
                let mut dx = Array2::zeros((n, m));
                for i in 0..n {
                    let mut acc = T::zero();
                    for j in (0..m).rev() {
                        dx[[i, j]] = acc;
                        acc = acc + g[[i, j]];
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Sum consecutive groups of `segment` rows: `[N·S, C] → [N, C]`.
    pub fn sum_segments(&self, segment: usize) -> Result<Tensor<T>> {
        let (r, c) = self.shape();
        if segment == 0 || r % segment != 0 {
            return Err(shape_err("sum_segments", (r, c), (segment, 0)));
        }
        let n = r / segment;
        let x = self.data();
        let mut y = Array2::zeros((n, c));
        for i in 0..n {
            let block = x.slice(s![i * segment..(i + 1) * segment, ..]);
            y.row_mut(i).assign(&block.sum_axis(Axis(0)));
        }
        drop(x);
        Ok(Tensor::from_op(
            y,
            "sum_segments",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = Array2::zeros((r, c));
                for i in 0..n {
                    for k in 0..segment {
                        dx.row_mut(i * segment + k).assign(&g.row(i));
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// 2× average pooling over an image stored as `[h·w, C]` rows
    /// (row-major pixels). Output is `[(h/2)·(w/2), C]`.
    pub fn avg_pool2x(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        let (r, c) = self.shape();
        if r != h * w || h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("avg_pool2x", (r, c), (h, w)));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let mut y = Array2::zeros((oh * ow, c));
        let quarter = T::from_f64(0.25);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut row = y.row_mut(oy * ow + ox);
                for (dy, dx_) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = (2 * oy + dy) * w + (2 * ox + dx_);
                    row += &x.row(src);
                }
                row.mapv_inplace(|v| v * quarter);
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            y,
            "avg_pool2x",
            vec![self.clone()],
            Box::new(move |g, _| {
                let quarter = T::from_f64(0.25);
                let mut dx = Array2::zeros((h * w, g.ncols()));
                for oy in 0..oh {
                    for ox in 0..ow {
                        let grow = g.row(oy * ow + ox);
                        for (dy, dx_) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let dst = (2 * oy + dy) * w + (2 * ox + dx_);
                            let mut drow = dx.row_mut(dst);
                            drow.scaled_add(quarter, &grow);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Bilinear triplane lookup.
    ///
    /// `self` is a triplane as `[3·P·P, C]`: three P×P feature grids stacked
    /// along rows, each grid row-major over (v, u). `points` is `[N, 3]` with
    /// coordinates in `[−1, 1]³` (values outside are clamped to the boundary,
    /// with zero positional gradient there). Plane q reads the point's two
    /// relevant coordinates — plane 0: (x,y), plane 1: (x,z), plane 2: (y,z)
    /// — maps them to grid units by `u = (a+1)/2·(P−1)`, and interpolates the
    /// four surrounding cells. Output is `[N, 3C]`, plane features
    /// concatenated in plane order.
    ///
    /// Differentiable w.r.t. both the plane features and the points.
    pub fn triplane_sample(&self, points: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
        let (rows, c) = self.shape();
        if p < 2 || rows != 3 * p * p {
            return Err(shape_err("triplane_sample", (rows, c), (3 * p * p, c)));
        }
        let (n, pc) = points.shape();
        if pc != 3 {
            return Err(shape_err("triplane_sample", (n, pc), (n, 3)));
        }

        let corners = sample_corners(&points.data(), p);
        let planes = self.data();
        let mut y = Array2::zeros((n, 3 * c));
        for (i, pt) in corners.iter().enumerate() {
            for (q, cell) in pt.iter().enumerate() {
                for ch in 0..c {
                    let v = cell.w00 * planes[[cell.r00, ch]].to_f64()
                        + cell.w10 * planes[[cell.r10, ch]].to_f64()
                        + cell.w01 * planes[[cell.r01, ch]].to_f64()
                        + cell.w11 * planes[[cell.r11, ch]].to_f64();
                    y[[i, q * c + ch]] = T::from_f64(v);
                }
            }
        }
        drop(planes);

        let (np, nq) = (self.requires_grad(), points.requires_grad());
        Ok(Tensor::from_op(
            y,
            "triplane_sample",
            vec![self.clone(), points.clone()],
            Box::new(move |g, parents| {
                let planes = parents[0].data();
                let (rows, c) = planes.dim();
                let n = corners.len();
                let mut dplanes = np.then(|| Array2::<T>::zeros((rows, c)));
                let mut dpoints = nq.then(|| Array2::<T>::zeros((n, 3)));
                for (i, pt) in corners.iter().enumerate() {
                    for (q, cell) in pt.iter().enumerate() {
                        // Plane q touches point coordinates (axis_u, axis_v).
                        let (au, av) = [(0, 1), (0, 2), (1, 2)][q];
                        let (mut da, mut db) = (0.0f64, 0.0f64);
                        for ch in 0..c {
                            let gv = g[[i, q * c + ch]].to_f64();
                            if let Some(dp) = dplanes.as_mut() {
                                dp[[cell.r00, ch]] += T::from_f64(gv * cell.w00);
                                dp[[cell.r10, ch]] += T::from_f64(gv * cell.w10);
                                dp[[cell.r01, ch]] += T::from_f64(gv * cell.w01);
                                dp[[cell.r11, ch]] += T::from_f64(gv * cell.w11);
                            }
                            if dpoints.is_some() {
                                let f00 = planes[[cell.r00, ch]].to_f64();
                                let f10 = planes[[cell.r10, ch]].to_f64();
                                let f01 = planes[[cell.r01, ch]].to_f64();
                                let f11 = planes[[cell.r11, ch]].to_f64();
                                // ∂value/∂u and ∂value/∂v of the bilinear form.
                                let dvdu = (1.0 - cell.fv) * (f10 - f00) + cell.fv * (f11 - f01);
                                let dvdv = (1.0 - cell.fu) * (f01 - f00) + cell.fu * (f11 - f10);
                                da += gv * dvdu * cell.dua;
                                db += gv * dvdv * cell.dvb;
                            }
                        }
                        if let Some(dq) = dpoints.as_mut() {
                            dq[[i, au]] += T::from_f64(da);
                            dq[[i, av]] += T::from_f64(db);
                        }
                    }
                }
                vec![dplanes, dpoints]
            }),
        ))
    }
}

#[inline]
fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (T::zero() - x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// One plane's interpolation footprint for one point.
struct Corner {
    r00: usize,
    r10: usize,
    r01: usize,
    r11: usize,
    w00: f64,
    w10: f64,
    w01: f64,
    w11: f64,
    fu: f64,
    fv: f64,
    /// d(grid u)/d(point coordinate a): (P−1)/2 inside the cube, 0 clamped.
    dua: f64,
    dvb: f64,
}

/// Precompute corner rows and bilinear weights for all points × 3 planes.
///
/// Coordinate math runs in f64 regardless of `T` so the footprint is
/// identical between training (f32) and gradient-check (f64) runs.
fn sample_corners<T: Real>(points: &Array2<T>, p: usize) -> Vec<[Corner; 3]> {
    let scale = (p - 1) as f64 / 2.0;
    let mut out = Vec::with_capacity(points.nrows());
    for row in points.rows() {
        let xyz = [row[0].to_f64(), row[1].to_f64(), row[2].to_f64()];
        let per_plane = std::array::from_fn(|q| {
            let (ai, bi) = [(0, 1), (0, 2), (1, 2)][q];
            let (a, b) = (xyz[ai], xyz[bi]);
            let (ac, bc) = (a.clamp(-1.0, 1.0), b.clamp(-1.0, 1.0));
            let u = (ac + 1.0) * scale;
            let v = (bc + 1.0) * scale;
            let i0 = (u.floor() as usize).min(p - 2);
            let j0 = (v.floor() as usize).min(p - 2);
            let fu = u - i0 as f64;
            let fv = v - j0 as f64;
            let base = q * p * p + j0 * p + i0;
            Corner {
                r00: base,
                r10: base + 1,
                r01: base + p,
                r11: base + p + 1,
                w00: (1.0 - fu) * (1.0 - fv),
                w10: fu * (1.0 - fv),
                w01: (1.0 - fu) * fv,
                w11: fu * fv,
                fu,
                fv,
                dua: if a.abs() < 1.0 { scale } else { 0.0 },
                dvb: if b.abs() < 1.0 { scale } else { 0.0 },
            }
        });
        out.push(per_plane);
    }
    out
}
