//! Lowering of layers into array-mappable workloads.

mod stos;

pub use stos::{lower_stos, Fold, FoldEntry, FusePair, FuseGeometry, MappingStrategy, Orientation, Slice, SliceMap};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{Element, Matrix, Tensor3};
use crate::topology::{LayerDescriptor, LayerKind};

/// im2col lowering of a convolution into `A' × B`.
///
/// Depthwise layers lower into `groups = C` independent GEMMs with one
/// filter column each; all dims below are per group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Im2colWorkload {
    pub groups: u64,
    /// N·M
    pub a_prime_rows: u64,
    /// K²·C per group
    pub a_prime_cols: u64,
    /// Filters per group.
    pub b_cols: u64,
    /// Elements of A' over distinct input elements referenced by A'.
    pub replication_factor: Ratio<u64>,
}

/// Lowers Standard, Depthwise, Pointwise and Gemm layers.
pub fn lower_im2col(layer: &LayerDescriptor) -> Result<Im2colWorkload> {
    let unsupported = || Error::UnsupportedKind {
        kind: layer.kind.to_string(),
        operation: "im2col lowering",
    };
    let (groups, channels_per_group, b_cols) = match layer.kind {
        LayerKind::Standard | LayerKind::Pointwise | LayerKind::Gemm => (1, layer.in_channels, layer.out_channels),
        LayerKind::Depthwise => (layer.in_channels, 1, 1),
        LayerKind::FuSeRow | LayerKind::FuSeCol => return Err(unsupported()),
    };
    let (m, n, k) = (layer.out_h(), layer.out_w(), layer.kernel);
    if m == 0 || n == 0 {
        return Err(Error::layer(&layer.name, "empty output feature map"));
    }
    let a_prime_rows = m * n;
    let a_prime_cols = k * k * channels_per_group;
    let covered_h = covered(layer.ifmap_h, k, layer.stride, layer.padding, m);
    let covered_w = covered(layer.ifmap_w, k, layer.stride, layer.padding, n);
    let referenced = covered_h * covered_w * channels_per_group;
    Ok(Im2colWorkload {
        groups,
        a_prime_rows,
        a_prime_cols,
        b_cols,
        replication_factor: Ratio::new(a_prime_rows * a_prime_cols, referenced),
    })
}

/// Number of input coordinates along one axis touched by at least one window.
fn covered(len: u64, k: u64, stride: u64, padding: u64, outputs: u64) -> u64 {
    let mut hit = vec![false; len as usize];
    for o in 0..outputs {
        for t in 0..k {
            let x = (o * stride + t) as i64 - padding as i64;
            if (0..len as i64).contains(&x) {
                hit[x as usize] = true;
            }
        }
    }
    hit.iter().filter(|&&b| b).count() as u64
}

/// Materializes A' for one input: row `m·N + n`, column `(c·K + i)·K + j`.
pub fn im2col_matrix<T: Element>(input: &Tensor3<T>, k: usize, stride: usize, padding: usize) -> Result<Matrix<T>> {
    let (c, h, w) = input.dims();
    let m = crate::topology::out_dim(h as u64, k as u64, stride as u64, padding as u64) as usize;
    let n = crate::topology::out_dim(w as u64, k as u64, stride as u64, padding as u64) as usize;
    if m == 0 || n == 0 || stride == 0 {
        return Err(Error::ShapeMismatch("kernel larger than padded input".into()));
    }
    Ok(Matrix::from_fn(m * n, k * k * c, |row, col| {
        let (om, on) = (row / n, row % n);
        let (ci, i, j) = (col / (k * k), (col / k) % k, col % k);
        let hy = (om * stride + i) as i64 - padding as i64;
        let wx = (on * stride + j) as i64 - padding as i64;
        input.get_padded(ci, hy, wx)
    }))
}

/// B for [`im2col_matrix`]: column `f` is filter `f` flattened as `(c, i, j)`.
pub fn filter_matrix<T: Element>(filters: &[Tensor3<T>]) -> Result<Matrix<T>> {
    let first = filters
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no filters".into()))?
        .dims();
    if filters.iter().any(|f| f.dims() != first) {
        return Err(Error::ShapeMismatch("filters differ in shape".into()));
    }
    let len = first.0 * first.1 * first.2;
    Ok(Matrix::from_fn(len, filters.len(), |r, f| filters[f].data()[r]))
}

/// Reshapes an `(M·N) × C'` GEMM result into `(C', M, N)`.
pub fn col2im<T: Element>(product: &Matrix<T>, m: usize, n: usize) -> Result<Tensor3<T>> {
    if product.rows != m * n {
        return Err(Error::ShapeMismatch(format!("{} rows cannot form {m}x{n}", product.rows)));
    }
    Ok(Tensor3::from_fn(product.cols, m, n, |f, y, x| product.get(y * n + x, f)))
}

/// Channel-wise lowering: every output is a length-C dot product summed by an adder tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelwiseWorkload {
    /// C
    pub vector_len: u64,
    /// N·M·K² per filter
    pub dot_products: u64,
    /// C'
    pub filters: u64,
    pub needs_adder_tree: bool,
}

pub fn lower_channelwise(layer: &LayerDescriptor) -> Result<ChannelwiseWorkload> {
    match layer.kind {
        LayerKind::Standard => {}
        LayerKind::Depthwise => return Err(Error::ChannelwiseInapplicable),
        other => {
            return Err(Error::UnsupportedKind {
                kind: other.to_string(),
                operation: "channel-wise lowering",
            })
        }
    }
    Ok(ChannelwiseWorkload {
        vector_len: layer.in_channels,
        dot_products: layer.out_h() * layer.out_w() * layer.kernel * layer.kernel,
        filters: layer.out_channels,
        needs_adder_tree: true,
    })
}

/// GEMM shape executed on the array under OS or WS: `groups` independent
/// products of a `rows × inner` operand with an `inner × cols` operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmWorkload {
    pub groups: u64,
    pub rows: u64,
    pub inner: u64,
    pub cols: u64,
}

impl GemmWorkload {
    pub fn macs(&self) -> u64 {
        self.groups * self.rows * self.inner * self.cols
    }
}

impl From<&Im2colWorkload> for GemmWorkload {
    fn from(w: &Im2colWorkload) -> Self {
        GemmWorkload {
            groups: w.groups,
            rows: w.a_prime_rows,
            inner: w.a_prime_cols,
            cols: w.b_cols,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{conv2d, depthwise};

    fn layer(kind: LayerKind, hw: u64, k: u64, c: u64, co: u64, s: u64, p: u64) -> LayerDescriptor {
        LayerDescriptor::new("l", kind, hw, hw, k, c, co, s, p)
    }

    #[test]
    fn standard_5x5_dims() {
        let w = lower_im2col(&layer(LayerKind::Standard, 5, 3, 2, 4, 1, 0)).unwrap();
        assert_eq!((w.groups, w.a_prime_rows, w.a_prime_cols, w.b_cols), (1, 9, 18, 4));
        // Brute-force: each of the 9 windows copies 18 elements out of 50.
        assert_eq!(w.replication_factor, Ratio::new(162, 50));
    }

    #[test]
    fn pointwise_replicates_nothing() {
        let w = lower_im2col(&layer(LayerKind::Pointwise, 7, 1, 8, 16, 1, 0)).unwrap();
        assert_eq!((w.a_prime_rows, w.a_prime_cols), (49, 8));
        assert_eq!(w.replication_factor, Ratio::from_integer(1));
        let x = Tensor3::from_fn(8, 7, 7, |c, h, w| (c * 49 + h * 7 + w) as i64);
        let a = im2col_matrix(&x, 1, 1, 0).unwrap();
        for r in 0..49 {
            for c in 0..8 {
                assert_eq!(a.get(r, c), x.get(c, r / 7, r % 7));
            }
        }
    }

    #[test]
    fn strided_pointwise_counts_only_referenced_inputs() {
        let w = lower_im2col(&layer(LayerKind::Standard, 8, 1, 4, 4, 2, 0)).unwrap();
        assert_eq!(w.replication_factor, Ratio::from_integer(1));
    }

    #[test]
    fn depthwise_uses_one_column() {
        let w = lower_im2col(&layer(LayerKind::Depthwise, 5, 3, 2, 2, 1, 0)).unwrap();
        assert_eq!((w.groups, w.a_prime_rows, w.a_prime_cols, w.b_cols), (2, 9, 9, 1));
    }

    #[test]
    fn fuse_kinds_are_rejected() {
        assert!(matches!(
            lower_im2col(&layer(LayerKind::FuSeRow, 5, 3, 2, 2, 1, 1)),
            Err(Error::UnsupportedKind { .. })
        ));
    }

    #[test]
    fn channelwise_dims() {
        let w = lower_channelwise(&layer(LayerKind::Standard, 5, 3, 8, 4, 1, 0)).unwrap();
        assert_eq!((w.vector_len, w.dot_products, w.filters, w.needs_adder_tree), (8, 81, 4, true));
        assert_eq!(lower_channelwise(&layer(LayerKind::Standard, 5, 3, 1, 4, 1, 0)).unwrap().vector_len, 1);
        assert_eq!(
            lower_channelwise(&layer(LayerKind::Depthwise, 5, 3, 8, 8, 1, 0)),
            Err(Error::ChannelwiseInapplicable)
        );
    }

    #[test]
    fn gemm_path_matches_conv_oracles() {
        let x = Tensor3::from_fn(3, 6, 7, |c, h, w| ((c * 13 + h * 5 + w * 3) % 11) as i64 - 5);
        let filters: Vec<_> = (0..4)
            .map(|f| Tensor3::from_fn(3, 3, 3, |c, i, j| ((f + c * 3 + i * 2 + j) % 7) as i64 - 3))
            .collect();
        let direct = conv2d(&x, &filters, 2, 1).unwrap();
        let (_, m, n) = direct.dims();
        let product = im2col_matrix(&x, 3, 2, 1).unwrap().matmul(&filter_matrix(&filters).unwrap()).unwrap();
        assert_eq!(col2im(&product, m, n).unwrap(), direct);

        let kernel = Tensor3::from_fn(3, 3, 3, |c, i, j| (c + i * j) as i64 - 2);
        let dw = depthwise(&x, &kernel, 1, 1).unwrap();
        for c in 0..3 {
            let a = im2col_matrix(&x.channel(c), 3, 1, 1).unwrap();
            let b = filter_matrix(&[kernel.channel(c)]).unwrap();
            let out = col2im(&a.matmul(&b).unwrap(), 6, 7).unwrap();
            assert_eq!(out, dw.channel(c));
        }
    }
}
