use super::*;
use crate::lowering::MappingStrategy;
use crate::oracle::fuseconv;

fn gemm(groups: u64, rows: u64, inner: u64, cols: u64) -> Workload {
    Workload::Gemm(GemmWorkload {
        groups,
        rows,
        inner,
        cols,
    })
}

fn cfg(r: u64, s: u64) -> ArrayConfig {
    ArrayConfig::default().with_dims(r, s)
}

fn pair(c: u64, h: u64, w: u64, k: u64, stride: u64, pad: u64, variant: FuseVariant) -> FusePair {
    let (cr, cc) = variant.split(c);
    let row = LayerDescriptor::new("f_row", LayerKind::FuSeRow, h, w, k, cr, cr, stride, pad);
    let col = LayerDescriptor::new("f_col", LayerKind::FuSeCol, h, w, k, cc, cc, stride, pad);
    FusePair::new(&row, &col, Some(c)).unwrap()
}

fn both(w: &Workload, d: Dataflow, c: &ArrayConfig) -> (LayerReport, LayerReport, Vec<TraceEvent>, Vec<TraceEvent>) {
    let (a, ta) = simulate_workload_traced("l", LayerKind::Standard, w, d, c).unwrap();
    let (b, tb) = replay_workload("l", LayerKind::Standard, w, d, c).unwrap();
    (a, b, ta, tb)
}

#[test]
fn os_single_fold_timing() {
    let (a, b, ..) = both(&gemm(1, 16, 9, 16), Dataflow::OutputStationary, &cfg(16, 16));
    assert_eq!(a.cycles, 15 + 15 + 9 + 1);
    assert_eq!(a, b);
    assert_eq!(a.utilization, 9.0 * 256.0 / (256.0 * a.cycles as f64));
}

#[test]
fn stos_single_slice_timing() {
    let p = pair(2, 3, 18, 3, 1, 0, FuseVariant::Half);
    let c = cfg(16, 16).with_dataflow(Dataflow::Stos);
    let map = lower_stos(&p, &c, MappingStrategy::Hybrid).unwrap().part(Orientation::Row);
    assert_eq!((map.folds.len(), map.folds[0].entries.len()), (1, 1));
    let w = Workload::Slices(map);
    let (a, b, ta, tb) = both(&w, Dataflow::Stos, &c);
    assert_eq!(a.cycles, 3 + 16 - 1);
    assert_eq!((a, ta), (b, tb));
}

#[test]
fn depthwise_on_os_uses_one_column() {
    let dw = LayerDescriptor::new("dw", LayerKind::Depthwise, 56, 56, 3, 144, 144, 1, 1);
    let r = simulate_layer(&dw, &cfg(16, 16)).unwrap();
    assert!(r.utilization <= 1.0 / 16.0, "{}", r.utilization);
    assert_eq!(r.macs_scheduled, crate::metrics::macs(&dw));
}

#[test]
fn analytic_matches_replay_across_dataflows() {
    let c = cfg(4, 3);
    for w in [gemm(2, 7, 5, 4), gemm(1, 3, 11, 8), gemm(3, 1, 1, 1)] {
        for d in [Dataflow::OutputStationary, Dataflow::WeightStationary] {
            let (a, b, ta, tb) = both(&w, d, &c);
            assert_eq!(a, b, "{w:?} {d}");
            assert_eq!(ta, tb, "{w:?} {d}");
        }
    }
    for strategy in MappingStrategy::ALL {
        let c = cfg(4, 4).with_dataflow(Dataflow::Stos);
        let map = lower_stos(&pair(5, 7, 9, 3, 2, 1, FuseVariant::Half), &c, strategy).unwrap();
        let (a, b, ta, tb) = both(&Workload::Slices(map), Dataflow::Stos, &c);
        assert_eq!((a, ta), (b, tb));
    }
}

#[test]
fn dram_cap_stalls_and_still_matches_replay() {
    let w = gemm(1, 40, 30, 20);
    let free = simulate_workload("l", LayerKind::Standard, &w, Dataflow::OutputStationary, &cfg(8, 8)).unwrap();
    let mut capped = cfg(8, 8);
    capped.dram_bytes_per_cycle = 2;
    let (a, b, ta, tb) = both(&w, Dataflow::OutputStationary, &capped);
    assert!(a.cycles > free.cycles);
    assert_eq!((&a, &ta), (&b, &tb));
    assert_eq!(a.dram_reads, free.dram_reads);
    assert!(ta
        .iter()
        .filter(|e| e.interface == Interface::Dram && e.direction == Direction::Read)
        .all(|e| e.bytes <= 2));
    assert_eq!(workload_cycles(&w, Dataflow::OutputStationary, &capped).unwrap(), a.cycles);
}

#[test]
fn fast_cycles_match_full_model() {
    for w in [gemm(3, 37, 19, 21), gemm(1, 16, 16, 16), gemm(5, 1, 9, 1)] {
        for d in [Dataflow::OutputStationary, Dataflow::WeightStationary] {
            let c = cfg(8, 4);
            let full = simulate_workload("l", LayerKind::Standard, &w, d, &c).unwrap();
            assert_eq!(workload_cycles(&w, d, &c).unwrap(), full.cycles, "{w:?} {d}");
        }
    }
}

#[test]
fn os_reuses_resident_operands() {
    // 20 rows × 10 inner fit in half of a 512-byte ifmap SRAM: every A tile
    // is fetched once even though there are 3 column blocks.
    let mut c = cfg(4, 4);
    c.ifmap_sram_bytes = 512;
    let r = simulate_workload("l", LayerKind::Standard, &gemm(1, 20, 10, 12), Dataflow::OutputStationary, &c).unwrap();
    assert_eq!(r.dram_reads, 20 * 10 + 10 * 12);
    assert_eq!(r.dram_writes, 20 * 12);
    c.ifmap_sram_bytes = 256;
    let r = simulate_workload("l", LayerKind::Standard, &gemm(1, 20, 10, 12), Dataflow::OutputStationary, &c).unwrap();
    assert_eq!(r.dram_reads, 3 * 20 * 10 + 10 * 12);
}

#[test]
fn oversized_tiles_stream_every_fold() {
    // A (16x40) and B (40x8) tiles exceed half of 64-byte SRAMs: both
    // operands are refetched by every fold, in the model and in the replay.
    let mut c = cfg(4, 4);
    c.ifmap_sram_bytes = 64;
    c.weight_sram_bytes = 64;
    for d in [Dataflow::OutputStationary, Dataflow::WeightStationary] {
        let (a, b, ta, tb) = both(&gemm(1, 16, 40, 8), d, &c);
        assert_eq!((a, ta), (b, tb));
    }
    let r = simulate_workload("l", LayerKind::Standard, &gemm(1, 16, 40, 8), Dataflow::OutputStationary, &c).unwrap();
    assert_eq!(r.dram_reads, 8 * (4 * 40 + 40 * 4));
}

#[test]
fn stripe_exceeding_sram_is_rejected() {
    let mut c = cfg(16, 16);
    c.ifmap_sram_bytes = 16;
    let err = simulate_workload("l", LayerKind::Standard, &gemm(1, 16, 9, 4), Dataflow::OutputStationary, &c).unwrap_err();
    assert_eq!(
        err,
        Error::TileExceedsSram {
            buffer: "ifmap",
            needed: 16,
            available: 8
        }
    );
}

#[test]
fn wrong_dataflow_is_rejected() {
    let c = cfg(4, 4).with_dataflow(Dataflow::Stos);
    let map = lower_stos(&pair(2, 4, 4, 3, 1, 1, FuseVariant::Half), &c, MappingStrategy::Hybrid).unwrap();
    let w = Workload::Slices(map);
    assert!(matches!(
        simulate_workload("l", LayerKind::FuSeRow, &w, Dataflow::OutputStationary, &c),
        Err(Error::DataflowMismatch(_))
    ));
    assert!(matches!(
        simulate_workload("l", LayerKind::Standard, &gemm(1, 2, 2, 2), Dataflow::Stos, &c),
        Err(Error::DataflowMismatch(_))
    ));
}

fn tiny_net() -> NetworkTopology {
    NetworkTopology::new(
        "tiny",
        vec![
            LayerDescriptor::new("conv", LayerKind::Standard, 16, 16, 3, 3, 8, 2, 1),
            LayerDescriptor::new("dw", LayerKind::Depthwise, 8, 8, 3, 8, 8, 1, 1),
            LayerDescriptor::new("pw", LayerKind::Pointwise, 8, 8, 1, 8, 16, 1, 0),
        ],
    )
    .unwrap()
}

#[test]
fn singleton_network_equals_layer() {
    let net = NetworkTopology::new("one", vec![tiny_net().layers[0].clone()]).unwrap();
    let c = cfg(8, 8);
    let n = simulate_network(&net, &c).unwrap();
    let l = simulate_layer(&net.layers[0], &c).unwrap();
    assert_eq!(n.total_cycles, l.cycles);
    assert_eq!(n.total_macs, l.macs_scheduled);
    assert_eq!(n.total_latency_s, l.latency_s);
    assert_eq!(n.share(Bucket::Other), 1.0);
}

#[test]
fn fuse_layers_need_stos() {
    let half = fuse_replace(&tiny_net(), FuseVariant::Half, &[true]).unwrap();
    let err = simulate_network(&half, &cfg(8, 8)).unwrap_err();
    match err {
        Error::InLayer { layer, source } => {
            assert_eq!(layer, "dw_row");
            assert!(matches!(*source, Error::DataflowMismatch(_)));
        }
        e => panic!("{e:?}"),
    }
    let r = simulate_network(&half, &cfg(8, 8).with_dataflow(Dataflow::Stos)).unwrap();
    assert_eq!(r.layers.len(), 4);
    assert_eq!(r.layers[1].dataflow, Dataflow::Stos);
    assert_eq!(r.layers[3].dataflow, Dataflow::OutputStationary);
    assert_eq!(network_cycles(&half, &cfg(8, 8).with_dataflow(Dataflow::Stos)).unwrap(), r.total_cycles);
}

#[test]
fn traced_network_is_one_timeline() {
    let c = cfg(8, 8);
    let (r, trace) = simulate_network_traced(&tiny_net(), &c).unwrap();
    assert!(trace.iter().all(|e| e.cycle <= r.total_cycles && e.bytes > 0));
    let dram: u64 = trace
        .iter()
        .filter(|e| e.interface == Interface::Dram && e.direction == Direction::Read)
        .map(|e| e.bytes)
        .sum();
    assert_eq!(dram, r.layers.iter().map(|l| l.dram_reads).sum::<u64>());
}

#[test]
fn compare_without_depthwise_is_neutral() {
    let net = NetworkTopology::new("plain", vec![tiny_net().layers[0].clone()]).unwrap();
    let cmp = compare(&net, &cfg(8, 8)).unwrap();
    assert_eq!(cmp.rows.len(), 4);
    assert_eq!(cmp.rows[2].speedup, 1.0);
    assert!(cmp.layerwise.is_empty());
    let cmp = compare(&tiny_net(), &cfg(8, 8)).unwrap();
    assert_eq!(cmp.layerwise.len(), 1);
    assert_eq!(cmp.layerwise[0].group, "dw");
}

#[test]
fn sweep_rejects_empty_sizes() {
    assert!(scaling_sweep(&tiny_net(), &[], &cfg(16, 16)).is_err());
    let pts = scaling_sweep(&tiny_net(), &[(4, 4), (8, 8)], &cfg(16, 16)).unwrap();
    assert_eq!(pts.len(), 2);
}

#[test]
fn zero_traffic_bandwidth_is_zero() {
    let (avg, max) = bandwidth_of_trace(&[], 10, 16);
    assert_eq!((avg, max), (InterfaceBw::default(), InterfaceBw::default()));
}

#[test]
fn report_bandwidth_matches_trace() {
    let c = cfg(4, 4);
    let (r, t) = simulate_workload_traced("l", LayerKind::Standard, &gemm(2, 9, 6, 5), Dataflow::WeightStationary, &c).unwrap();
    assert_eq!(bandwidth_of_trace(&t, r.cycles, c.bw_window), (r.avg_bw, r.max_bw));
}

#[test]
fn functional_unit_filters_regroup_input() {
    let p = pair(4, 5, 6, 1, 1, 0, FuseVariant::Half);
    let c = cfg(3, 4).with_dataflow(Dataflow::Stos);
    let map = lower_stos(&p, &c, MappingStrategy::Hybrid).unwrap();
    let x = Tensor3::from_fn(4, 5, 6, |c, h, w| (c * 100 + h * 10 + w) as i64);
    let ones = Matrix::from_fn(2, 1, |_, _| 1);
    assert_eq!(replay_functional(&map, &ones, &ones, &x).unwrap(), x);
}

#[test]
fn functional_two_tap_filter_on_4x3() {
    // One channel per orientation; each channel is a 4×3 map, 2-tap filters.
    let p = pair(2, 4, 3, 2, 1, 0, FuseVariant::Half);
    let c = cfg(2, 2).with_dataflow(Dataflow::Stos);
    let x = Tensor3::from_fn(2, 4, 3, |c, h, w| (c as i64 * 7 + h as i64 * 3 + w as i64) % 5 - 2);
    let rf = Matrix::new(1, 2, vec![3, -1]).unwrap();
    let cf = Matrix::new(1, 2, vec![2, 5]).unwrap();
    // Sliding dot products written out directly.
    let mut want = Tensor3::zeros(2, 3, 2);
    for m in 0..3 {
        for n in 0..2 {
            want.set(0, m, n, 3 * x.get(0, m, n) - x.get(0, m, n + 1));
            want.set(1, m, n, 2 * x.get(1, m, n) + 5 * x.get(1, m + 1, n));
        }
    }
    for strategy in MappingStrategy::ALL {
        let map = lower_stos(&p, &c, strategy).unwrap();
        assert_eq!(replay_functional(&map, &rf, &cf, &x).unwrap(), want);
    }
    assert_eq!(fuseconv(&x, &rf, &cf, FuseVariant::Half, 1, 0).unwrap(), want);
}

#[test]
fn functional_rejects_bad_shapes() {
    let p = pair(2, 4, 4, 3, 1, 1, FuseVariant::Half);
    let c = cfg(2, 2).with_dataflow(Dataflow::Stos);
    let map = lower_stos(&p, &c, MappingStrategy::Hybrid).unwrap();
    let f = Matrix::from_fn(1, 3, |_, _| 1);
    assert!(replay_functional(&map, &f, &f, &Tensor3::zeros(3, 4, 4)).is_err());
}

#[test]
fn gemm_replay_multiplies() {
    let a = Matrix::from_fn(7, 5, |r, c| (r * 3 + c) as i64 % 4 - 1);
    let b = Matrix::from_fn(5, 6, |r, c| (r + 2 * c) as i64 % 3 - 1);
    let want = a.matmul(&b).unwrap();
    for d in [Dataflow::OutputStationary, Dataflow::WeightStationary] {
        assert_eq!(replay_gemm_functional(&a, &b, d, &cfg(3, 4)).unwrap(), want, "{d}");
    }
}

#[test]
fn small_tiles_stay_resident_beside_oversized_ones() {
    // Row tiles of 152 and 38 bytes against a 128-byte half: only the second is retained.
    let mut c = cfg(8, 4);
    c.ifmap_sram_bytes = 256;
    for d in [Dataflow::OutputStationary, Dataflow::WeightStationary] {
        let w = match d {
            Dataflow::OutputStationary => gemm(2, 10, 19, 13),
            _ => gemm(2, 19, 10, 13),
        };
        let (a, b, ..) = both(&w, d, &c);
        assert_eq!(a, b, "{d}");
    }
    let (a, ..) = both(&gemm(1, 10, 19, 13), Dataflow::OutputStationary, &c);
    assert_eq!(a.dram_reads - 13 * 19, 4 * 152 + 38);
}
