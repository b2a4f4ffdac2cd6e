//! Reference executors: direct loop-nest definitions of every operator.
//!
//! Integer tensors give bit-exact results; `f64` is used by the scaffolding
//! math only. Every executor has a `*_counted` form returning the number of
//! multiply-accumulates it performed, padding taps included.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{out_dim, FuseVariant};

/// Scalar type accepted by the executors.
pub trait Element:
    Copy + Default + PartialEq + Debug + Add<Output = Self> + Mul<Output = Self> + AddAssign + Send + Sync + 'static
{
}

impl Element for i64 {}
impl Element for f64 {}

/// Dense `(channels, height, width)` tensor in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr<T>", into = "TensorRepr<T>")]
#[serde(bound(serialize = "T: Element + Serialize", deserialize = "T: Element + Deserialize<'de>"))]
pub struct Tensor3<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct TensorRepr<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Element> TryFrom<TensorRepr<T>> for Tensor3<T> {
    type Error = Error;
    fn try_from(r: TensorRepr<T>) -> Result<Self> {
        Tensor3::new(r.dims[0], r.dims[1], r.dims[2], r.data)
    }
}

impl<T: Element> From<Tensor3<T>> for TensorRepr<T> {
    fn from(t: Tensor3<T>) -> Self {
        TensorRepr {
            dims: [t.channels, t.height, t.width],
            data: t.data,
        }
    }
}

impl<T: Element> Tensor3<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "tensor {channels}x{height}x{width} needs {} elements, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![T::default(); channels * height * width],
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    data.push(f(c, h, w));
                }
            }
        }
        Tensor3 {
            channels,
            height,
            width,
            data,
        }
    }

    /// (channels, height, width)
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> T {
        self.data[(c * self.height + h) * self.width + w]
    }

    pub fn set(&mut self, c: usize, h: usize, w: usize, v: T) {
        let (height, width) = (self.height, self.width);
        self.data[(c * height + h) * width + w] = v;
    }

    /// Element at signed coordinates; zero outside the tensor.
    pub fn get_padded(&self, c: usize, h: i64, w: i64) -> T {
        if h < 0 || w < 0 || h >= self.height as i64 || w >= self.width as i64 {
            T::default()
        } else {
            self.get(c, h as usize, w as usize)
        }
    }

    pub fn channel(&self, c: usize) -> Tensor3<T> {
        let n = self.height * self.width;
        Tensor3 {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.data[c * n..(c + 1) * n].to_vec(),
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Element> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Matrix { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix::from_fn(self.rows, other.cols, |r, c| {
            let mut acc = T::default();
            for t in 0..self.cols {
                acc += self.get(r, t) * other.get(t, c);
            }
            acc
        }))
    }
}

fn conv_out(input: (usize, usize), k: usize, stride: usize, padding: usize) -> Result<(usize, usize)> {
    if stride == 0 || k == 0 {
        return Err(Error::ShapeMismatch("kernel and stride must be positive".into()));
    }
    let m = out_dim(input.0 as u64, k as u64, stride as u64, padding as u64) as usize;
    let n = out_dim(input.1 as u64, k as u64, stride as u64, padding as u64) as usize;
    if m == 0 || n == 0 {
        return Err(Error::ShapeMismatch("kernel larger than padded input".into()));
    }
    Ok((m, n))
}

/// Standard convolution; each filter is `(C, K, K)` and yields one output channel.
pub fn conv2d<T: Element>(input: &Tensor3<T>, filters: &[Tensor3<T>], stride: usize, padding: usize) -> Result<Tensor3<T>> {
    conv2d_counted(input, filters, stride, padding).map(|(t, _)| t)
}

pub fn conv2d_counted<T: Element>(
    input: &Tensor3<T>,
    filters: &[Tensor3<T>],
    stride: usize,
    padding: usize,
) -> Result<(Tensor3<T>, u64)> {
    let (c, h, w) = input.dims();
    let first = filters
        .first()
        .ok_or_else(|| Error::ShapeMismatch("conv2d needs at least one filter".into()))?;
    let (_, k, kw) = first.dims();
    if k != kw {
        return Err(Error::ShapeMismatch("filters must be square".into()));
    }
    if filters.iter().any(|f| f.dims() != (c, k, k)) {
        return Err(Error::ShapeMismatch(format!(
            "every filter must be {c}x{k}x{k} to match the input channels"
        )));
    }
    let (m, n) = conv_out((h, w), k, stride, padding)?;
    let mut macs = 0u64;
    let mut out = Tensor3::zeros(filters.len(), m, n);
    for (f, filter) in filters.iter().enumerate() {
        for om in 0..m {
            for on in 0..n {
                let mut acc = T::default();
                for ci in 0..c {
                    for i in 0..k {
                        for j in 0..k {
                            let hy = (om * stride + i) as i64 - padding as i64;
                            let wx = (on * stride + j) as i64 - padding as i64;
                            acc += input.get_padded(ci, hy, wx) * filter.get(ci, i, j);
                            macs += 1;
                        }
                    }
                }
                out.set(f, om, on, acc);
            }
        }
    }
    Ok((out, macs))
}

/// Per-channel convolution with a `(C, K, K)` kernel.
pub fn depthwise<T: Element>(input: &Tensor3<T>, kernel: &Tensor3<T>, stride: usize, padding: usize) -> Result<Tensor3<T>> {
    depthwise_counted(input, kernel, stride, padding).map(|(t, _)| t)
}

pub fn depthwise_counted<T: Element>(
    input: &Tensor3<T>,
    kernel: &Tensor3<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor3<T>, u64)> {
    let (c, h, w) = input.dims();
    let (kc, k, kw) = kernel.dims();
    if kc != c || k != kw {
        return Err(Error::ShapeMismatch(format!(
            "depthwise kernel {kc}x{k}x{kw} does not match {c} input channels"
        )));
    }
    let (m, n) = conv_out((h, w), k, stride, padding)?;
    let mut macs = 0u64;
    let mut out = Tensor3::zeros(c, m, n);
    for ci in 0..c {
        for om in 0..m {
            for on in 0..n {
                let mut acc = T::default();
                for i in 0..k {
                    for j in 0..k {
                        let hy = (om * stride + i) as i64 - padding as i64;
                        let wx = (on * stride + j) as i64 - padding as i64;
                        acc += input.get_padded(ci, hy, wx) * kernel.get(ci, i, j);
                        macs += 1;
                    }
                }
                out.set(ci, om, on, acc);
            }
        }
    }
    Ok((out, macs))
}

/// 1×1 convolution with a `C' × C` weight matrix.
pub fn pointwise<T: Element>(input: &Tensor3<T>, weights: &Matrix<T>) -> Result<Tensor3<T>> {
    pointwise_counted(input, weights).map(|(t, _)| t)
}

pub fn pointwise_counted<T: Element>(input: &Tensor3<T>, weights: &Matrix<T>) -> Result<(Tensor3<T>, u64)> {
    let (c, h, w) = input.dims();
    if weights.cols != c {
        return Err(Error::ShapeMismatch(format!(
            "pointwise weights have {} columns for {c} input channels",
            weights.cols
        )));
    }
    let mut macs = 0u64;
    let out = Tensor3::from_fn(weights.rows, h, w, |o, y, x| {
        let mut acc = T::default();
        for ci in 0..c {
            acc += weights.get(o, ci) * input.get(ci, y, x);
            macs += 1;
        }
        acc
    });
    Ok((out, macs))
}

/// Input row read by a row filter for output row `m` (and column read by a
/// column filter for output column `n`): the centre tap of the window a
/// square `K × K` kernel would cover. Keeps FuSe output dims equal to the
/// depthwise output dims for any padding.
pub fn fuse_center(index: usize, k: usize, stride: usize, padding: usize) -> i64 {
    (index * stride) as i64 - padding as i64 + ((k - 1) / 2) as i64
}

/// FuSe convolution. `row_filters` is `C_r × K`, `col_filters` is `C_c × K`.
///
/// Half: channels `0..C_r` go through row filters and `C_r..C` through
/// column filters. Full: both sets see all channels. Output channels are the
/// row group followed by the column group.
pub fn fuseconv<T: Element>(
    input: &Tensor3<T>,
    row_filters: &Matrix<T>,
    col_filters: &Matrix<T>,
    variant: FuseVariant,
    stride: usize,
    padding: usize,
) -> Result<Tensor3<T>> {
    fuseconv_counted(input, row_filters, col_filters, variant, stride, padding).map(|(t, _)| t)
}

pub fn fuseconv_counted<T: Element>(
    input: &Tensor3<T>,
    row_filters: &Matrix<T>,
    col_filters: &Matrix<T>,
    variant: FuseVariant,
    stride: usize,
    padding: usize,
) -> Result<(Tensor3<T>, u64)> {
    let (c, h, w) = input.dims();
    let (cr, cc) = (row_filters.rows, col_filters.rows);
    let ok = match variant {
        FuseVariant::Half => cr + cc == c,
        FuseVariant::Full => cr == c && cc == c,
    };
    if !ok {
        return Err(Error::ShapeMismatch(format!(
            "{cr} row and {cc} column filters are inconsistent with {variant:?} on {c} channels"
        )));
    }
    let k = row_filters.cols;
    if col_filters.cols != k || (cc > 0 && k == 0) {
        return Err(Error::ShapeMismatch("row and column filters must share K".into()));
    }
    let (m, n) = conv_out((h, w), k, stride, padding)?;
    let col_input_offset = match variant {
        FuseVariant::Half => cr,
        FuseVariant::Full => 0,
    };
    let mut macs = 0u64;
    let mut out = Tensor3::zeros(cr + cc, m, n);
    for f in 0..cr {
        for om in 0..m {
            let hy = fuse_center(om, k, stride, padding);
            for on in 0..n {
                let mut acc = T::default();
                for t in 0..k {
                    let wx = (on * stride + t) as i64 - padding as i64;
                    acc += input.get_padded(f, hy, wx) * row_filters.get(f, t);
                    macs += 1;
                }
                out.set(f, om, on, acc);
            }
        }
    }
    for f in 0..cc {
        let ci = col_input_offset + f;
        for on in 0..n {
            let wx = fuse_center(on, k, stride, padding);
            for om in 0..m {
                let mut acc = T::default();
                for t in 0..k {
                    let hy = (om * stride + t) as i64 - padding as i64;
                    acc += input.get_padded(ci, hy, wx) * col_filters.get(f, t);
                    macs += 1;
                }
                out.set(cr + f, om, on, acc);
            }
        }
    }
    Ok((out, macs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(c: usize, h: usize, w: usize, data: &[i64]) -> Tensor3<i64> {
        Tensor3::new(c, h, w, data.to_vec()).unwrap()
    }

    #[test]
    fn scalar_conv() {
        let out = conv2d(&t(1, 1, 1, &[5]), &[t(1, 1, 1, &[3])], 1, 0).unwrap();
        assert_eq!(out, t(1, 1, 1, &[15]));
    }

    #[test]
    fn ones_conv_sums_windows() {
        let out = conv2d(&t(1, 4, 4, &[1; 16]), &[t(1, 3, 3, &[1; 9])], 1, 0).unwrap();
        assert_eq!(out, t(1, 2, 2, &[9; 4]));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        assert!(conv2d(&t(2, 3, 3, &[0; 18]), &[t(1, 3, 3, &[0; 9])], 1, 0).is_err());
    }

    #[test]
    fn depthwise_single_channel_is_conv2d() {
        let x = Tensor3::from_fn(1, 5, 5, |_, h, w| (h * 5 + w) as i64 - 7);
        let k = Tensor3::from_fn(1, 3, 3, |_, i, j| (i as i64 - j as i64) * 2 + 1);
        assert_eq!(depthwise(&x, &k, 2, 1).unwrap(), conv2d(&x, std::slice::from_ref(&k), 2, 1).unwrap());
    }

    #[test]
    fn depthwise_delta_kernel_is_identity() {
        let x = Tensor3::from_fn(3, 6, 5, |c, h, w| (c * 100 + h * 10 + w) as i64);
        for k in [1usize, 3, 5] {
            let delta = Tensor3::from_fn(3, k, k, |_, i, j| i64::from(i == k / 2 && j == k / 2));
            assert_eq!(depthwise(&x, &delta, 1, k / 2).unwrap(), x);
        }
    }

    #[test]
    fn pointwise_identity_and_channel_sum() {
        let x = Tensor3::from_fn(3, 2, 2, |c, h, w| (c * 7 + h * 3 + w) as i64);
        let id = Matrix::from_fn(3, 3, |r, c| i64::from(r == c));
        assert_eq!(pointwise(&x, &id).unwrap(), x);
        let ones = Matrix::new(1, 3, vec![1; 3]).unwrap();
        let sum = pointwise(&x, &ones).unwrap();
        for h in 0..2 {
            for w in 0..2 {
                assert_eq!(sum.get(0, h, w), (0..3).map(|c| x.get(c, h, w)).sum::<i64>());
            }
        }
    }

    #[test]
    fn fuse_unit_filters_are_identity() {
        let x = Tensor3::from_fn(4, 3, 5, |c, h, w| (c * 31 + h * 5 + w) as i64);
        let rows = Matrix::new(2, 1, vec![1; 2]).unwrap();
        let cols = Matrix::new(2, 1, vec![1; 2]).unwrap();
        assert_eq!(fuseconv(&x, &rows, &cols, FuseVariant::Half, 1, 0).unwrap(), x);
    }

    #[test]
    fn fuse_full_unrolled_by_hand() {
        // 2 channels of 3x3, K=2, stride 1, pad 0: output 2x2, centre offset 0.
        let x = t(2, 3, 3, &[1, 2, 3, 4, 5, 6, 7, 8, 9, -1, 0, 2, 3, 1, -2, 0, 4, 5]);
        let rows = Matrix::new(2, 2, vec![1, 10, 2, -1]).unwrap();
        let cols = Matrix::new(2, 2, vec![3, 1, 1, 1]).unwrap();
        let out = fuseconv(&x, &rows, &cols, FuseVariant::Full, 1, 0).unwrap();
        let expected = t(
            4,
            2,
            2,
            &[
                21, 32, 54, 65, // ch0 rows: x[m][n] + 10 x[m][n+1]
                -2, -2, 5, 4, // ch1 rows: 2 x[m][n] - x[m][n+1]
                7, 11, 19, 23, // ch0 cols: 3 x[m][n] + x[m+1][n]
                2, 1, 3, 5, // ch1 cols: x[m][n] + x[m+1][n]
            ],
        );
        assert_eq!(out, expected);
        let half_rows = fuseconv(&x, &rows, &Matrix::new(0, 2, vec![]).unwrap(), FuseVariant::Half, 1, 0).unwrap();
        assert_eq!(&out.data()[..8], half_rows.data());
    }

    #[test]
    fn fuse_rejects_bad_groups() {
        let x = Tensor3::<i64>::zeros(3, 4, 4);
        let f = Matrix::new(1, 3, vec![0; 3]).unwrap();
        assert!(fuseconv(&x, &f, &f, FuseVariant::Half, 1, 1).is_err());
        assert!(fuseconv(&x, &f, &f, FuseVariant::Full, 1, 1).is_err());
    }

    #[test]
    fn tensor_json_round_trip() {
        let x = t(1, 2, 2, &[1, -2, 3, 4]);
        let json = serde_json::to_string(&x).unwrap();
        assert_eq!(json, r#"{"dims":[1,2,2],"data":[1,-2,3,4]}"#);
        assert_eq!(serde_json::from_str::<Tensor3<i64>>(&json).unwrap(), x);
        assert!(serde_json::from_str::<Tensor3<i64>>(r#"{"dims":[1,2,2],"data":[1]}"#).is_err());
    }
}
