//! Shipped network topologies at 224×224 input.
//!
//! Squeeze-and-excite blocks are modelled as two GEMM layers on the pooled
//! channel vector; activations, pooling and residual additions carry no MACs.

use crate::error::{Error, Result};
use crate::topology::{parse_topology, NetworkTopology};

pub const MOBILENET_V1: &str = include_str!("../topologies/mobilenet_v1.csv");
pub const MOBILENET_V2: &str = include_str!("../topologies/mobilenet_v2.csv");
pub const MOBILENET_V3_LARGE: &str = include_str!("../topologies/mobilenet_v3_large.csv");
pub const MOBILENET_V3_SMALL: &str = include_str!("../topologies/mobilenet_v3_small.csv");
pub const MNASNET_B1: &str = include_str!("../topologies/mnasnet_b1.csv");

/// Names accepted by [`builtin`], in presentation order.
pub const NAMES: [&str; 5] = [
    "mobilenet_v1",
    "mobilenet_v2",
    "mobilenet_v3_large",
    "mobilenet_v3_small",
    "mnasnet_b1",
];

/// CSV text of a builtin network.
pub fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "mobilenet_v1" => MOBILENET_V1,
        "mobilenet_v2" => MOBILENET_V2,
        "mobilenet_v3_large" => MOBILENET_V3_LARGE,
        "mobilenet_v3_small" => MOBILENET_V3_SMALL,
        "mnasnet_b1" => MNASNET_B1,
        _ => return None,
    })
}

pub fn builtin(name: &str) -> Result<NetworkTopology> {
    let text = source(name).ok_or_else(|| {
        Error::InvalidTopology(format!("unknown builtin network `{name}`; known: {}", NAMES.join(", ")))
    })?;
    parse_topology(text, name)
}

pub fn all() -> Result<Vec<NetworkTopology>> {
    NAMES.iter().map(|n| builtin(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_counts() {
        let counts: Vec<usize> = all().unwrap().iter().map(|n| n.layers.len()).collect();
        assert_eq!(counts, [28, 53, 64, 54, 53]);
    }

    #[test]
    fn names_match_directives() {
        for n in NAMES {
            assert_eq!(builtin(n).unwrap().name, n);
        }
        assert!(builtin("resnet50").is_err());
    }
}
