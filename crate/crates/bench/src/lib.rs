//! Shared fixtures for the benchmarks.

use fusesim::lowering::FusePair;
use fusesim::topology::fuse_replace;
use fusesim::{golden, ArrayConfig, Dataflow, FuseVariant, GemmWorkload, LayerDescriptor, LayerKind, NetworkTopology};

pub fn network(name: &str) -> NetworkTopology {
    golden::builtin(name).expect("shipped network parses")
}

/// Every depthwise layer replaced.
pub fn fused(net: &NetworkTopology, variant: FuseVariant) -> NetworkTopology {
    fuse_replace(net, variant, &vec![true; net.depthwise_indices().len()]).expect("shipped network replaces")
}

pub fn array(dataflow: Dataflow) -> ArrayConfig {
    ArrayConfig::default().with_dataflow(dataflow)
}

/// The 56x56x144 FuSe-Half pair of an early MobileNet-V2 block.
pub fn early_pair() -> FusePair {
    let row = LayerDescriptor::new("b_row", LayerKind::FuSeRow, 56, 56, 3, 72, 72, 1, 1);
    let col = LayerDescriptor::new("b_col", LayerKind::FuSeCol, 56, 56, 3, 72, 72, 1, 1);
    FusePair::new(&row, &col, Some(144)).expect("valid pair")
}

/// The im2col GEMM of a 28x28 pointwise layer, 144 to 32 channels.
pub fn pointwise_gemm() -> GemmWorkload {
    GemmWorkload {
        groups: 1,
        rows: 28 * 28,
        inner: 144,
        cols: 32,
    }
}
