//! Dense row-major tensors and the handful of kernels the model needs.
//!
//! Everything here is eager and allocation-per-op. The reverse-mode tape in
//! [`tape`] builds on these kernels; [`check`] holds the finite-difference
//! gradient checker used throughout the test suite.

pub mod check;
pub mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use check::{grad_check, GradCheckReport};
pub use tape::{AttentionProbs, Gradients, SeqLayout, Tape, Var};

/// Stabiliser inside the RMSNorm square root.
pub const RMS_EPS: f64 = 1e-6;

/// Floating point element type. Implemented for `f64` (default) and `f32`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;

    /// `c = alpha * a @ b + beta * c` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        (rsa, csa): (isize, isize),
        b: &[f64],
        (rsb, csb): (isize, isize),
        beta: f64,
        c: &mut [f64],
    ) {
        assert!(c.len() >= m * n);
        // SAFETY: callers pass slices whose extents cover the strided views
        // described by (m, k, n) and the strides; checked in `gemm_checked`.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        (rsa, csa): (isize, isize),
        b: &[f32],
        (rsb, csb): (isize, isize),
        beta: f32,
        c: &mut [f32],
    ) {
        assert!(c.len() >= m * n);
        // SAFETY: see the f64 impl.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    }
}

fn gemm_checked<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    a_strides: (isize, isize),
    b: &[S],
    b_strides: (isize, isize),
    accumulate: bool,
    c: &mut [S],
) {
    let extent = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(a.len() >= extent(m, k, a_strides));
    assert!(b.len() >= extent(k, n, b_strides));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = S::zero());
        }
        return;
    }
    let beta = if accumulate { S::one() } else { S::zero() };
    S::gemm(m, k, n, S::one(), a, a_strides, b, b_strides, beta, c);
}

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Build a 2-D tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor {
            shape: vec![r, c],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Number of length-`last_dim` rows.
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.last_dim()).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[S] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let d = self.last_dim();
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn get2(&self, i: usize, j: usize) -> S {
        self.data[i * self.last_dim() + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: S) -> Self {
        self.map(|x| x * c)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn axpy(&mut self, alpha: S, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn frobenius(&self) -> S {
        self.data.iter().map(|&x| x * x).sum::<S>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| T::from_f64(x.f64()).expect("cast"))
                .collect(),
        }
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension(format!("{what}: expected 2-D, got {s:?}"))),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    /// `self[m×k] @ other[k×n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul lhs")?;
        let (k2, n) = other.dims2("matmul rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_checked(
            m,
            k,
            n,
            &self.data,
            (k as isize, 1),
            &other.data,
            (n as isize, 1),
            false,
            &mut out,
        );
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self[m×k] @ other[n×k]ᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul_nt lhs")?;
        let (n, k2) = other.dims2("matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul_nt inner dims {k} vs {k2}"
            )));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_checked(
            m,
            k,
            n,
            &self.data,
            (k as isize, 1),
            &other.data,
            (1, k as isize),
            false,
            &mut out,
        );
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self[k×m]ᵀ @ other[k×n]`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        let (k, m) = self.dims2("matmul_tn lhs")?;
        let (k2, n) = other.dims2("matmul_tn rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul_tn inner dims {k} vs {k2}"
            )));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_checked(
            m,
            k,
            n,
            &self.data,
            (1, m as isize),
            &other.data,
            (n as isize, 1),
            false,
            &mut out,
        );
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Row-wise softmax over the last axis, max-subtracted.
    pub fn softmax_rows(&self) -> Self {
        let mut out = self.clone();
        let d = self.last_dim();
        if d > 0 {
            for row in out.data.chunks_mut(d) {
                softmax_in_place(row);
            }
        }
        out
    }

    /// RMSNorm over the last axis with an elementwise gain.
    pub fn rmsnorm(&self, gain: &Self) -> Result<Self> {
        let d = self.last_dim();
        if gain.numel() != d {
            return Err(Error::Dimension(format!(
                "rmsnorm gain has {} values for width {d}",
                gain.numel()
            )));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(d) {
            let inv = inv_rms(row);
            for (x, &g) in row.iter_mut().zip(&gain.data) {
                *x = *x * inv * g;
            }
        }
        Ok(out)
    }

    /// Depthwise causal convolution over rows with left zero padding.
    /// `kernel[j, c]` weights `x[t - j, c]`.
    pub fn depthwise_causal_conv1d(&self, kernel: &Self) -> Result<Self> {
        let (t_len, d) = self.dims2("conv input")?;
        let (w, d2) = kernel.dims2("conv kernel")?;
        if d != d2 {
            return Err(Error::Dimension(format!(
                "conv kernel width {d2} vs channels {d}"
            )));
        }
        let starts = vec![0usize; t_len];
        let mut out = vec![S::zero(); t_len * d];
        conv_forward(&self.data, &kernel.data, w, d, &starts, &mut out);
        Ok(Tensor {
            shape: vec![t_len, d],
            data: out,
        })
    }
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    if m == S::neg_infinity() {
        // fully masked row; leave as uniform zeros
        row.iter_mut().for_each(|x| *x = S::zero());
        return;
    }
    let mut z = S::zero();
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x = *x / z;
    }
}

pub(crate) fn inv_rms<S: Scalar>(row: &[S]) -> S {
    let d = S::from_usize(row.len()).unwrap();
    let ms = row.iter().map(|&x| x * x).sum::<S>() / d;
    S::one() / (ms + S::lit(RMS_EPS)).sqrt()
}

/// `out[t, c] = Σ_j kernel[j, c] · x[t - j, c]`, only for `t - j >= starts[t]`.
pub(crate) fn conv_forward<S: Scalar>(
    x: &[S],
    kernel: &[S],
    width: usize,
    d: usize,
    starts: &[usize],
    out: &mut [S],
) {
    for (t, &start) in starts.iter().enumerate() {
        let o = &mut out[t * d..(t + 1) * d];
        for j in 0..width {
            if t < j || t - j < start {
                break;
            }
            let src = &x[(t - j) * d..(t - j + 1) * d];
            let k = &kernel[j * d..(j + 1) * d];
            for c in 0..d {
                o[c] += k[c] * src[c];
            }
        }
    }
}

/// Rotate adjacent pairs of the RoPE slice of every head block in each row.
///
/// Row `t` is rotated by `sign * positions[t] * base^(-2i / rope_dim)` for
/// pair `i`. The RoPE slice of a head occupies columns
/// `[rope_start, rope_start + rope_dim)` of its `head_dim`-wide block.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rope_rows<S: Scalar>(
    data: &mut [S],
    width: usize,
    positions: &[usize],
    head_dim: usize,
    rope_start: usize,
    rope_dim: usize,
    sign: f64,
    base: f64,
) {
    if rope_dim == 0 {
        return;
    }
    let heads = width / head_dim;
    let half = rope_dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| base.powf(-2.0 * i as f64 / rope_dim as f64))
        .collect();
    for (t, &p) in positions.iter().enumerate() {
        let row = &mut data[t * width..(t + 1) * width];
        for (i, &f) in freqs.iter().enumerate() {
            let ang = sign * p as f64 * f;
            let (s, c) = ang.sin_cos();
            let (s, c) = (S::lit(s), S::lit(c));
            for h in 0..heads {
                let a = h * head_dim + rope_start + 2 * i;
                let (x0, x1) = (row[a], row[a + 1]);
                row[a] = x0 * c - x1 * s;
                row[a + 1] = x0 * s + x1 * c;
            }
        }
    }
}

/// Apply rotary embedding to a tensor whose last axis is the rotated slice.
/// `sign = -1` applies the inverse rotation.
pub fn rope_apply<S: Scalar>(
    x: &Tensor<S>,
    positions: &[usize],
    sign: i32,
    base: f64,
) -> Result<Tensor<S>> {
    let d = x.last_dim();
    if !d.is_multiple_of(2) {
        return Err(Error::Config(format!("rope width {d} is odd")));
    }
    if positions.len() != x.rows() {
        return Err(Error::Dimension(format!(
            "{} positions for {} rows",
            positions.len(),
            x.rows()
        )));
    }
    let mut out = x.clone();
    rope_rows(&mut out.data, d, positions, d, 0, d, sign as f64, base);
    Ok(out)
}

pub fn relu_sq<S: Scalar>(x: S) -> S {
    let r = x.max(S::zero());
    r * r
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows)
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        Tensor::from_fn(&[m, n], |idx| {
            let (i, j) = (idx / n, idx % n);
            (0..k).map(|p| a.get2(i, p) * b.get2(p, j)).sum()
        })
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let a = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(Tensor::eye(2).matmul(&a).unwrap(), a);
        let b = t(&[vec![5.0], vec![6.0]]);
        assert_eq!(a.matmul(&b).unwrap(), t(&[vec![17.0], vec![39.0]]));
        let z = Tensor::<f64>::zeros(&[3, 3]);
        let any = Tensor::from_fn(&[3, 3], |i| i as f64 - 4.0);
        assert_eq!(z.matmul(&any).unwrap(), z);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&a), Err(Error::Dimension(_))));
    }

    #[test]
    fn transposed_products_match_naive() {
        let a = Tensor::from_fn(&[4, 5], |i| ((i * 7) % 11) as f64 - 5.0);
        let b = Tensor::from_fn(&[5, 3], |i| ((i * 3) % 7) as f64 * 0.5);
        let want = naive_matmul(&a, &b);
        assert_eq!(a.matmul(&b).unwrap(), want);
        assert_eq!(a.matmul_nt(&b.transpose().unwrap()).unwrap(), want);
        assert_eq!(a.transpose().unwrap().matmul_tn(&b).unwrap(), want);
    }

    #[test]
    fn softmax_examples() {
        let x = t(&[
            vec![0.0, 0.0, 0.0],
            vec![1000.0, 0.0, 0.0],
            vec![1f64.ln(), 2f64.ln(), 3f64.ln()],
        ]);
        let s = x.softmax_rows();
        for j in 0..3 {
            assert!((s.get2(0, j) - 1.0 / 3.0).abs() < 1e-15);
            assert!((s.get2(2, j) - (j + 1) as f64 / 6.0).abs() < 1e-15);
        }
        assert!((s.get2(1, 0) - 1.0).abs() < 1e-12);
        assert!(s.get2(1, 1) < 1e-12);
    }

    #[test]
    fn rmsnorm_examples() {
        let x = t(&[vec![3.0, 4.0]]);
        let y = x.rmsnorm(&Tensor::ones(&[2])).unwrap();
        let r = (12.5f64 + RMS_EPS).sqrt();
        assert!((y.get2(0, 0) - 3.0 / r).abs() < 1e-15);
        assert!((y.get2(0, 0) - 0.8485).abs() < 1e-4);
        assert!((y.get2(0, 1) - 1.1314).abs() < 1e-4);
        let ones = Tensor::<f64>::ones(&[2, 8]);
        let y = ones.rmsnorm(&Tensor::ones(&[8])).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let y = x.rmsnorm(&Tensor::zeros(&[2])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rmsnorm_scale_covariant_in_gain() {
        let x = Tensor::from_fn(&[3, 5], |i| (i as f64 * 0.37).sin());
        let g = Tensor::from_fn(&[5], |i| 0.5 + i as f64 * 0.1);
        let a = x.rmsnorm(&g.scale(2.0)).unwrap();
        let b = x.rmsnorm(&g).unwrap().scale(2.0);
        assert_eq!(a, b);
    }

    #[test]
    fn conv_examples() {
        let x = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::ones(&[4, 1]);
        assert_eq!(
            x.depthwise_causal_conv1d(&k).unwrap().data(),
            &[1.0, 3.0, 6.0, 10.0]
        );
        let zero = Tensor::zeros(&[4, 1]);
        assert!(x
            .depthwise_causal_conv1d(&zero)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let mut tap = Tensor::zeros(&[4, 1]);
        tap.data_mut()[0] = 1.0;
        assert_eq!(x.depthwise_causal_conv1d(&tap).unwrap(), x);
    }

    #[test]
    fn conv_is_causal() {
        let x = Tensor::from_fn(&[8, 3], |i| (i as f64).cos());
        let k = Tensor::from_fn(&[4, 3], |i| 0.1 * i as f64 - 0.3);
        let base = x.depthwise_causal_conv1d(&k).unwrap();
        for t in 0..7 {
            let mut x2 = x.clone();
            for c in 0..3 {
                x2.data_mut()[(t + 1) * 3 + c] += 10.0;
            }
            let y = x2.depthwise_causal_conv1d(&k).unwrap();
            assert_eq!(&y.data()[..(t + 1) * 3], &base.data()[..(t + 1) * 3]);
        }
    }

    #[test]
    fn rope_zero_position_and_inverse() {
        let x = Tensor::from_fn(&[3, 8], |i| (i as f64 * 0.7).sin());
        let y = rope_apply(&x, &[0, 0, 0], 1, 10000.0).unwrap();
        assert_eq!(y, x);
        let pos = [0, 5, 123];
        let y = rope_apply(&x, &pos, 1, 10000.0).unwrap();
        let back = rope_apply(&y, &pos, -1, 10000.0).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
        let odd = Tensor::<f64>::zeros(&[1, 3]);
        assert!(matches!(
            rope_apply(&odd, &[1], 1, 10000.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn f32_path_works() {
        let a = Tensor::<f32>::from_fn(&[2, 2], |i| i as f32);
        let b = a.matmul(&Tensor::eye(2)).unwrap();
        assert_eq!(a, b);
    }
}
