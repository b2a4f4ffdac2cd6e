//! Closed-form MAC and parameter counts. One MAC is one multiply-accumulate.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::topology::{LayerDescriptor, LayerKind, NetworkTopology};

/// Multiply-accumulates of one layer, padding taps included.
pub fn macs(layer: &LayerDescriptor) -> u64 {
    let nm = layer.out_h() * layer.out_w();
    let (k, c, co) = (layer.kernel, layer.in_channels, layer.out_channels);
    match layer.kind {
        LayerKind::Standard => nm * co * k * k * c,
        LayerKind::Depthwise => nm * c * k * k,
        LayerKind::Pointwise | LayerKind::Gemm => nm * c * co,
        LayerKind::FuSeRow | LayerKind::FuSeCol => nm * c * k,
    }
}

/// Trainable weights of one layer, biases excluded.
pub fn params(layer: &LayerDescriptor) -> u64 {
    let (k, c, co) = (layer.kernel, layer.in_channels, layer.out_channels);
    match layer.kind {
        LayerKind::Standard => k * k * c * co,
        LayerKind::Depthwise => k * k * c,
        LayerKind::Pointwise | LayerKind::Gemm => c * co,
        LayerKind::FuSeRow | LayerKind::FuSeCol => k * c,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub layer: String,
    pub kind: LayerKind,
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountReport {
    pub network: String,
    pub layers: Vec<LayerCount>,
    pub total: Totals,
    pub by_kind: BTreeMap<LayerKind, Totals>,
}

impl CountReport {
    /// `layer,kind,macs,params` rows followed by a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,macs,params\n");
        for l in &self.layers {
            out.push_str(&format!("{},{},{},{}\n", l.layer, l.kind, l.macs, l.params));
        }
        out.push_str(&format!("total,All,{},{}\n", self.total.macs, self.total.params));
        out
    }
}

pub fn network_counts(net: &NetworkTopology) -> CountReport {
    counts_of(&net.name, &net.layers)
}

pub(crate) fn counts_of(name: &str, layers: &[LayerDescriptor]) -> CountReport {
    let layers: Vec<LayerCount> = layers
        .iter()
        .map(|l| LayerCount {
            layer: l.name.clone(),
            kind: l.kind,
            macs: macs(l),
            params: params(l),
        })
        .collect();
    let mut total = Totals::default();
    let mut by_kind: BTreeMap<LayerKind, Totals> = BTreeMap::new();
    for l in &layers {
        total.macs += l.macs;
        total.params += l.params;
        let t = by_kind.entry(l.kind).or_default();
        t.macs += l.macs;
        t.params += l.params;
    }
    CountReport {
        network: name.to_string(),
        layers,
        total,
        by_kind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{fuse_replace, FuseVariant};

    fn l(kind: LayerKind, hw: u64, k: u64, c: u64, co: u64, p: u64) -> LayerDescriptor {
        LayerDescriptor::new("l", kind, hw, hw, k, c, co, 1, p)
    }

    #[test]
    fn standard_5x5_brute_force() {
        let layer = l(LayerKind::Standard, 5, 3, 2, 4, 0);
        let mut count = 0;
        for _f in 0..4 {
            for _m in 0..3 {
                for _n in 0..3 {
                    for _c in 0..2 {
                        for _i in 0..3 {
                            for _j in 0..3 {
                                count += 1;
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(macs(&layer), count);
        assert_eq!(count, 648);
    }

    #[test]
    fn separable_pair() {
        let dw = l(LayerKind::Depthwise, 5, 3, 2, 2, 0);
        let pw = LayerDescriptor::new("pw", LayerKind::Pointwise, 3, 3, 1, 2, 4, 1, 0);
        assert_eq!(macs(&dw) + macs(&pw), 234);
    }

    #[test]
    fn fuse_half_pair_plus_pointwise() {
        let net = NetworkTopology::new(
            "n",
            vec![
                LayerDescriptor::new("dw", LayerKind::Depthwise, 9, 9, 3, 6, 6, 1, 1),
                LayerDescriptor::new("pw", LayerKind::Pointwise, 9, 9, 1, 6, 10, 1, 0),
            ],
        )
        .unwrap();
        let half = fuse_replace(&net, FuseVariant::Half, &[true]).unwrap();
        let (nm, c, k, co) = (81, 6, 3, 10);
        assert_eq!(network_counts(&net).total.macs, nm * c * (k * k + co));
        assert_eq!(network_counts(&half).total.macs, nm * c * (k + co));
        assert_eq!(network_counts(&half).total.params, c * (k + co));
    }

    #[test]
    fn pointwise_unit_params() {
        assert_eq!(params(&l(LayerKind::Pointwise, 4, 1, 1, 1, 0)), 1);
    }

    #[test]
    fn totals_are_sums() {
        let net = NetworkTopology::new(
            "n",
            vec![
                l(LayerKind::Standard, 8, 3, 3, 8, 1),
                l(LayerKind::Depthwise, 8, 3, 8, 8, 1),
                l(LayerKind::Pointwise, 8, 1, 8, 4, 0),
            ],
        )
        .unwrap();
        let r = network_counts(&net);
        assert_eq!(r.total.macs, r.layers.iter().map(|x| x.macs).sum::<u64>());
        assert_eq!(r.total.params, r.by_kind.values().map(|x| x.params).sum::<u64>());
        assert!(r.to_csv().starts_with("layer,kind,macs,params\nl,Standard,"));
    }

    #[test]
    fn empty_layer_list_counts_zero() {
        let r = counts_of("empty", &[]);
        assert_eq!(r.total, Totals::default());
    }
}
