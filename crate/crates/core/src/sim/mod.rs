//! Cycle-level simulation of output stationary, weight stationary and
//! spatial-tiled output stationary (ST-OS) dataflows.
//!
//! Every workload is first turned into a fold plan. The closed-form model
//! ([`simulate_workload`]) and the event-driven replay ([`replay_workload`])
//! then derive durations and traffic from that plan independently; the two
//! agree exactly, which the test suites enforce.
//!
//! Memory model: each SRAM is double buffered, so a tile must fit in half of
//! it. DRAM fills are charged at fold starts and may be prefetched while the
//! previous fold runs; with `dram_bytes_per_cycle = 0` they are free. Results
//! drain to DRAM when a fold ends. Layers run back to back with no overlap.

mod analytic;
mod plan;
mod record;
mod replay;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowering::{lower_im2col, lower_stos, FusePair, GemmWorkload, Orientation, SliceMap};
use crate::oracle::{fuse_center, Matrix, Tensor3};
use crate::topology::{fuse_replace, ArrayConfig, Dataflow, FuseVariant, LayerDescriptor, LayerKind, NetworkTopology};
use plan::Plan;
use record::Recorder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Interface {
    IfmapSram = 0,
    WeightSram = 1,
    OfmapSram = 2,
    Dram = 3,
}

impl Interface {
    pub fn as_str(self) -> &'static str {
        match self {
            Interface::IfmapSram => "IfmapSram",
            Interface::WeightSram => "WeightSram",
            Interface::OfmapSram => "OfmapSram",
            Interface::Dram => "Dram",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Read,
    Write,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Read => "Read",
            Direction::Write => "Write",
        }
    }
}

/// Bytes moved over one interface in one cycle. Events with equal
/// (cycle, interface, direction) are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub interface: Interface,
    pub direction: Direction,
    pub bytes: u64,
}

/// Bytes per SRAM bank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankBytes {
    pub ifmap: u64,
    pub weight: u64,
    pub ofmap: u64,
}

impl BankBytes {
    fn from_array(a: [u64; 4]) -> Self {
        BankBytes {
            ifmap: a[0],
            weight: a[1],
            ofmap: a[2],
        }
    }

    pub fn total(&self) -> u64 {
        self.ifmap + self.weight + self.ofmap
    }
}

/// Bytes/cycle per interface, reads and writes combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InterfaceBw {
    pub ifmap_sram: f64,
    pub weight_sram: f64,
    pub ofmap_sram: f64,
    pub dram: f64,
}

impl InterfaceBw {
    fn from_array(a: [f64; 4]) -> Self {
        InterfaceBw {
            ifmap_sram: a[0],
            weight_sram: a[1],
            ofmap_sram: a[2],
            dram: a[3],
        }
    }
}

/// Simulation result for one layer (one orientation of a FuSe pair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub kind: LayerKind,
    pub dataflow: Dataflow,
    pub cycles: u64,
    pub macs_scheduled: u64,
    /// `macs_scheduled / (R·S·cycles)`.
    pub utilization: f64,
    /// Fraction of PE-cycles spent inside an occupied PE's fold, whether or
    /// not that PE performs a MAC in a given cycle.
    pub mapping_utilization: f64,
    pub folds: u64,
    pub sram_reads: BankBytes,
    pub sram_writes: BankBytes,
    pub dram_reads: u64,
    pub dram_writes: u64,
    pub avg_bw: InterfaceBw,
    pub max_bw: InterfaceBw,
    pub latency_s: f64,
}

/// Latency bucket of the per-operator breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bucket {
    Depthwise,
    FuSe,
    Pointwise,
    Other,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::Depthwise, Bucket::FuSe, Bucket::Pointwise, Bucket::Other];

    pub fn of(kind: LayerKind) -> Bucket {
        match kind {
            LayerKind::Depthwise => Bucket::Depthwise,
            LayerKind::FuSeRow | LayerKind::FuSeCol => Bucket::FuSe,
            LayerKind::Pointwise => Bucket::Pointwise,
            LayerKind::Standard | LayerKind::Gemm => Bucket::Other,
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketTotals {
    pub cycles: u64,
    pub latency_s: f64,
    /// Fraction of network cycles.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub network: String,
    pub dataflow: Dataflow,
    pub layers: Vec<LayerReport>,
    pub total_cycles: u64,
    pub total_latency_s: f64,
    pub total_macs: u64,
    pub utilization: f64,
    pub breakdown: BTreeMap<Bucket, BucketTotals>,
}

impl NetworkReport {
    fn from_layers(network: &str, cfg: &ArrayConfig, layers: Vec<LayerReport>) -> Self {
        let total_cycles: u64 = layers.iter().map(|l| l.cycles).sum();
        let total_macs: u64 = layers.iter().map(|l| l.macs_scheduled).sum();
        let mut breakdown: BTreeMap<Bucket, BucketTotals> = Bucket::ALL.iter().map(|&b| (b, BucketTotals::default())).collect();
        for l in &layers {
            breakdown.get_mut(&Bucket::of(l.kind)).unwrap().cycles += l.cycles;
        }
        for t in breakdown.values_mut() {
            t.latency_s = t.cycles as f64 / cfg.freq_hz as f64;
            t.share = ratio(t.cycles, total_cycles);
        }
        NetworkReport {
            network: network.to_string(),
            dataflow: cfg.dataflow,
            total_latency_s: total_cycles as f64 / cfg.freq_hz as f64,
            utilization: ratio(total_macs, cfg.rows * cfg.cols * total_cycles),
            layers,
            total_cycles,
            total_macs,
            breakdown,
        }
    }

    pub fn share(&self, bucket: Bucket) -> f64 {
        self.breakdown.get(&bucket).map_or(0.0, |t| t.share)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Array-mappable work of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Workload {
    /// For the output or weight stationary dataflow.
    Gemm(GemmWorkload),
    /// For ST-OS.
    Slices(SliceMap),
}

impl Workload {
    pub fn macs(&self) -> u64 {
        match self {
            Workload::Gemm(g) => g.macs(),
            Workload::Slices(m) => m.macs(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Model {
    Analytic,
    Replay,
}

fn build_plan(w: &Workload, dataflow: Dataflow, cfg: &ArrayConfig) -> Result<Plan> {
    cfg.validate()?;
    match (w, dataflow) {
        (Workload::Gemm(g), Dataflow::OutputStationary) => plan::os_plan(g, cfg),
        (Workload::Gemm(g), Dataflow::WeightStationary) => plan::ws_plan(g, cfg),
        (Workload::Slices(m), Dataflow::Stos) => {
            if (m.array_rows, m.array_cols) != (cfg.rows, cfg.cols) {
                return Err(Error::DataflowMismatch(format!(
                    "slice map built for a {}x{} array, configured {}x{}",
                    m.array_rows, m.array_cols, cfg.rows, cfg.cols
                )));
            }
            plan::stos_plan(m, cfg)
        }
        (Workload::Gemm(g), Dataflow::Stos) => plan::check_gemm_fit(g, dataflow, cfg).map(|_| unreachable!()),
        (Workload::Slices(_), d) => Err(Error::DataflowMismatch(format!(
            "slice maps require the stos dataflow, requested {d}"
        ))),
    }
}

fn run(
    name: &str,
    kind: LayerKind,
    w: &Workload,
    dataflow: Dataflow,
    cfg: &ArrayConfig,
    model: Model,
    trace: bool,
) -> Result<(LayerReport, Vec<TraceEvent>)> {
    let plan = build_plan(w, dataflow, cfg)?;
    let mut rec = Recorder::new(trace);
    let (cycles, occupied) = match model {
        Model::Analytic => analytic::run(&plan, cfg.dram_bytes_per_cycle, &mut rec),
        Model::Replay => replay::run(
            &plan,
            cfg.ifmap_sram_bytes,
            cfg.weight_sram_bytes,
            cfg.dram_bytes_per_cycle,
            &mut rec,
        ),
    };
    let macs: u64 = plan.folds.iter().map(|f| f.shape.macs()).sum();
    let (avg_bw, max_bw) = rec.bandwidth(cycles, cfg.bw_window);
    let pe_cycles = cfg.rows * cfg.cols * cycles;
    let report = LayerReport {
        layer: name.to_string(),
        kind,
        dataflow,
        cycles,
        macs_scheduled: macs,
        utilization: ratio(macs, pe_cycles),
        mapping_utilization: ratio(occupied, pe_cycles),
        folds: plan.folds.len() as u64,
        sram_reads: BankBytes::from_array(rec.reads),
        sram_writes: BankBytes::from_array(rec.writes),
        dram_reads: rec.reads[Interface::Dram as usize],
        dram_writes: rec.writes[Interface::Dram as usize],
        avg_bw,
        max_bw,
        latency_s: cycles as f64 / cfg.freq_hz as f64,
    };
    Ok((report, rec.take_trace()))
}

/// Closed-form simulation of one workload under `dataflow`.
pub fn simulate_workload(name: &str, kind: LayerKind, w: &Workload, dataflow: Dataflow, cfg: &ArrayConfig) -> Result<LayerReport> {
    run(name, kind, w, dataflow, cfg, Model::Analytic, false).map(|(r, _)| r)
}

/// As [`simulate_workload`], also returning the traffic trace.
pub fn simulate_workload_traced(
    name: &str,
    kind: LayerKind,
    w: &Workload,
    dataflow: Dataflow,
    cfg: &ArrayConfig,
) -> Result<(LayerReport, Vec<TraceEvent>)> {
    run(name, kind, w, dataflow, cfg, Model::Analytic, true)
}

/// Event-driven replay of one workload, with its trace.
pub fn replay_workload(
    name: &str,
    kind: LayerKind,
    w: &Workload,
    dataflow: Dataflow,
    cfg: &ArrayConfig,
) -> Result<(LayerReport, Vec<TraceEvent>)> {
    run(name, kind, w, dataflow, cfg, Model::Replay, true)
}

/// Cycles only. Unthrottled GEMMs use per-group sums of the fold formula;
/// everything else walks the plan.
pub fn workload_cycles(w: &Workload, dataflow: Dataflow, cfg: &ArrayConfig) -> Result<u64> {
    if let (Workload::Gemm(g), 0) = (w, cfg.dram_bytes_per_cycle) {
        plan::check_gemm_fit(g, dataflow, cfg)?;
        let (p, t, f) = (g.rows, g.inner, g.cols);
        let cf = f.div_ceil(cfg.cols);
        let per_group = match dataflow {
            Dataflow::OutputStationary => {
                let rf = p.div_ceil(cfg.rows);
                cf * p + rf * f + rf * cf * (t - 1)
            }
            Dataflow::WeightStationary => {
                let tf = t.div_ceil(cfg.rows);
                2 * cf * t + tf * f + tf * cf * (p - 1)
            }
            Dataflow::Stos => unreachable!("rejected by the fit check"),
        };
        return Ok(g.groups * per_group);
    }
    let plan = build_plan(w, dataflow, cfg)?;
    Ok(analytic::run(&plan, cfg.dram_bytes_per_cycle, &mut Recorder::null()).0)
}

/// Dataflow a non-FuSe layer runs under: ST-OS arrays fall back to output stationary.
fn gemm_dataflow(cfg: &ArrayConfig) -> Dataflow {
    match cfg.dataflow {
        Dataflow::Stos => Dataflow::OutputStationary,
        d => d,
    }
}

/// Lowers and simulates one non-FuSe layer.
pub fn simulate_layer(layer: &LayerDescriptor, cfg: &ArrayConfig) -> Result<LayerReport> {
    if layer.kind.is_fuse() {
        return Err(Error::UnsupportedKind {
            kind: layer.kind.to_string(),
            operation: "single-layer simulation (simulate the FuSe pair)",
        });
    }
    let w = Workload::Gemm(GemmWorkload::from(&lower_im2col(layer)?));
    simulate_workload(&layer.name, layer.kind, &w, gemm_dataflow(cfg), cfg)
}

/// Simulates a FuSe pair under ST-OS: all row-orientation folds, then all
/// column-orientation folds, reported separately.
pub fn simulate_fuse_pair(pair: &FusePair, cfg: &ArrayConfig) -> Result<[LayerReport; 2]> {
    let map = lower_stos(pair, cfg, cfg.stos_strategy)?;
    let row = simulate_workload(
        &pair.row.name,
        LayerKind::FuSeRow,
        &Workload::Slices(map.part(Orientation::Row)),
        Dataflow::Stos,
        cfg,
    )?;
    let col = simulate_workload(
        &pair.col.name,
        LayerKind::FuSeCol,
        &Workload::Slices(map.part(Orientation::Col)),
        Dataflow::Stos,
        cfg,
    )?;
    Ok([row, col])
}

/// One schedulable unit of a network: a single layer or a FuSe pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) enum Unit {
    Single(LayerDescriptor),
    Pair(FusePair),
}

impl Unit {
    fn name(&self) -> &str {
        match self {
            Unit::Single(l) => &l.name,
            Unit::Pair(p) => &p.row.name,
        }
    }

    /// Workloads with their dataflow, name and kind, in execution order.
    fn workloads(&self, cfg: &ArrayConfig) -> Result<Vec<(String, LayerKind, Workload, Dataflow)>> {
        match self {
            Unit::Single(l) => {
                let w = Workload::Gemm(GemmWorkload::from(&lower_im2col(l)?));
                Ok(vec![(l.name.clone(), l.kind, w, gemm_dataflow(cfg))])
            }
            Unit::Pair(p) => {
                if cfg.dataflow != Dataflow::Stos {
                    return Err(Error::DataflowMismatch(format!(
                        "FuSe layers need the stos dataflow, configured {}",
                        cfg.dataflow
                    )));
                }
                let map = lower_stos(p, cfg, cfg.stos_strategy)?;
                Ok(vec![
                    (p.row.name.clone(), LayerKind::FuSeRow, Workload::Slices(map.part(Orientation::Row)), Dataflow::Stos),
                    (p.col.name.clone(), LayerKind::FuSeCol, Workload::Slices(map.part(Orientation::Col)), Dataflow::Stos),
                ])
            }
        }
    }

    pub(crate) fn cycles(&self, cfg: &ArrayConfig) -> Result<u64> {
        let mut total = 0;
        for (_, _, w, d) in self.workloads(cfg).map_err(|e| Error::in_layer(self.name(), e))? {
            total += workload_cycles(&w, d, cfg).map_err(|e| Error::in_layer(self.name(), e))?;
        }
        Ok(total)
    }
}

pub(crate) fn units(net: &NetworkTopology) -> Result<Vec<Unit>> {
    let mut out = Vec::new();
    let mut incoming: Option<u64> = None;
    let mut i = 0;
    while i < net.layers.len() {
        let l = &net.layers[i];
        if l.kind == LayerKind::FuSeRow {
            let pair = FusePair::new(l, &net.layers[i + 1], incoming)?;
            incoming = Some(pair.row.out_channels + pair.col.out_channels);
            out.push(Unit::Pair(pair));
            i += 2;
        } else {
            incoming = Some(l.out_channels);
            out.push(Unit::Single(l.clone()));
            i += 1;
        }
    }
    Ok(out)
}

type Traced = (LayerReport, Vec<TraceEvent>);

fn simulate_units(net: &NetworkTopology, cfg: &ArrayConfig, trace: bool) -> Result<Vec<Traced>> {
    cfg.validate()?;
    let units = units(net)?;
    let per_unit: Vec<Result<Vec<Traced>>> = units
        .par_iter()
        .map(|u| {
            let wrap = |e| Error::in_layer(u.name(), e);
            u.workloads(cfg)
                .map_err(wrap)?
                .into_iter()
                .map(|(name, kind, w, d)| run(&name, kind, &w, d, cfg, Model::Analytic, trace).map_err(wrap))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_unit {
        out.extend(r?);
    }
    Ok(out)
}

/// Simulates every layer and sums latencies.
///
/// With an OS or WS array every layer uses that dataflow and FuSe layers are
/// rejected. With an ST-OS array FuSe pairs run ST-OS and all other layers
/// run output stationary.
pub fn simulate_network(net: &NetworkTopology, cfg: &ArrayConfig) -> Result<NetworkReport> {
    let layers = simulate_units(net, cfg, false)?.into_iter().map(|(r, _)| r).collect();
    Ok(NetworkReport::from_layers(&net.name, cfg, layers))
}

/// As [`simulate_network`], plus one trace on a network-wide cycle axis.
pub fn simulate_network_traced(net: &NetworkTopology, cfg: &ArrayConfig) -> Result<(NetworkReport, Vec<TraceEvent>)> {
    let mut layers = Vec::new();
    let mut trace = Vec::new();
    let mut offset = 0;
    for (report, events) in simulate_units(net, cfg, true)? {
        trace.extend(events.into_iter().map(|e| TraceEvent {
            cycle: e.cycle + offset,
            ..e
        }));
        offset += report.cycles;
        layers.push(report);
    }
    trace.sort_by_key(|e| (e.cycle, e.interface, e.direction));
    let mut merged: Vec<TraceEvent> = Vec::with_capacity(trace.len());
    for e in trace {
        match merged.last_mut() {
            Some(m) if (m.cycle, m.interface, m.direction) == (e.cycle, e.interface, e.direction) => m.bytes += e.bytes,
            _ => merged.push(e),
        }
    }
    Ok((NetworkReport::from_layers(&net.name, cfg, layers), merged))
}

/// Total cycles of a network without traffic accounting.
pub fn network_cycles(net: &NetworkTopology, cfg: &ArrayConfig) -> Result<u64> {
    cfg.validate()?;
    units(net)?.par_iter().map(|u| u.cycles(cfg)).sum()
}

/// One configuration of a comparison run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub config: String,
    pub cycles: u64,
    pub latency_s: f64,
    /// Baseline output stationary cycles over this configuration's cycles.
    pub speedup: f64,
}

/// Speedup of one bottleneck group under FuSe-Half ST-OS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerwiseSpeedup {
    /// Name of the group's depthwise layer.
    pub group: String,
    pub baseline_cycles: u64,
    pub fuse_cycles: u64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub network: String,
    pub rows: Vec<CompareRow>,
    pub layerwise: Vec<LayerwiseSpeedup>,
    /// Reports in the order of `rows`.
    pub reports: Vec<NetworkReport>,
}

pub const COMPARE_CONFIGS: [&str; 4] = ["baseline-os", "baseline-ws", "fuse-half-stos", "fuse-full-stos"];

/// Baseline OS and WS runs against FuSe-Half and FuSe-Full under ST-OS,
/// every depthwise layer replaced.
pub fn compare(net: &NetworkTopology, cfg: &ArrayConfig) -> Result<Comparison> {
    let all = vec![true; net.depthwise_indices().len()];
    let half = fuse_replace(net, FuseVariant::Half, &all)?;
    let full = fuse_replace(net, FuseVariant::Full, &all)?;
    let runs = [
        (net, Dataflow::OutputStationary),
        (net, Dataflow::WeightStationary),
        (&half, Dataflow::Stos),
        (&full, Dataflow::Stos),
    ];
    let reports = runs
        .iter()
        .map(|(n, d)| simulate_network(n, &cfg.clone().with_dataflow(*d)))
        .collect::<Result<Vec<_>>>()?;
    let base = reports[0].total_cycles;
    let rows = COMPARE_CONFIGS
        .iter()
        .zip(&reports)
        .map(|(name, r)| CompareRow {
            config: name.to_string(),
            cycles: r.total_cycles,
            latency_s: r.total_latency_s,
            speedup: ratio(base, r.total_cycles),
        })
        .collect();
    let cycles_in = |report: &NetworkReport, from: usize, to: usize| -> u64 {
        report.layers[from..to].iter().map(|l| l.cycles).sum()
    };
    // Row/col reports follow the pair's layers, so layer indices carry over.
    let layerwise = net
        .bottleneck_groups
        .iter()
        .zip(&half.bottleneck_groups)
        .map(|(b, h)| {
            let baseline_cycles = cycles_in(&reports[0], b.start, b.end);
            let fuse_cycles = cycles_in(&reports[2], h.start, h.end);
            LayerwiseSpeedup {
                group: net.layers[b.middle].name.clone(),
                baseline_cycles,
                fuse_cycles,
                speedup: ratio(baseline_cycles, fuse_cycles),
            }
        })
        .collect();
    Ok(Comparison {
        network: net.name.clone(),
        rows,
        layerwise,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rows: u64,
    pub cols: u64,
    pub baseline_cycles: u64,
    pub fuse_cycles: u64,
    pub speedup: f64,
}

/// Baseline OS over FuSe-Half ST-OS for each array size.
///
/// SRAMs grow with the PE count relative to `cfg` (never shrink) so that
/// tiles of a larger array still fit.
pub fn scaling_sweep(net: &NetworkTopology, sizes: &[(u64, u64)], cfg: &ArrayConfig) -> Result<Vec<SweepPoint>> {
    if sizes.is_empty() {
        return Err(Error::Invalid("scaling sweep needs at least one array size".into()));
    }
    let all = vec![true; net.depthwise_indices().len()];
    let half = fuse_replace(net, FuseVariant::Half, &all)?;
    sizes
        .iter()
        .map(|&(rows, cols)| {
            let scale = ((rows * cols) / (cfg.rows * cfg.cols)).max(1);
            let mut c = cfg.clone().with_dims(rows, cols);
            c.ifmap_sram_bytes *= scale;
            c.weight_sram_bytes *= scale;
            c.ofmap_sram_bytes *= scale;
            let baseline_cycles = network_cycles(net, &c.clone().with_dataflow(Dataflow::OutputStationary))?;
            let fuse_cycles = network_cycles(&half, &c.with_dataflow(Dataflow::Stos))?;
            Ok(SweepPoint {
                rows,
                cols,
                baseline_cycles,
                fuse_cycles,
                speedup: ratio(baseline_cycles, fuse_cycles),
            })
        })
        .collect()
}

/// Mean and windowed-peak bandwidth of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub layer: String,
    pub kind: LayerKind,
    pub avg: InterfaceBw,
    pub max: InterfaceBw,
}

pub fn bandwidth_profile(reports: &[LayerReport]) -> Vec<BandwidthRow> {
    reports
        .iter()
        .map(|r| BandwidthRow {
            layer: r.layer.clone(),
            kind: r.kind,
            avg: r.avg_bw,
            max: r.max_bw,
        })
        .collect()
}

/// Mean and peak bandwidth recomputed from a trace spanning `[0, cycles]`.
pub fn bandwidth_of_trace(trace: &[TraceEvent], cycles: u64, window: u64) -> (InterfaceBw, InterfaceBw) {
    let mut rec = Recorder::new(false);
    for e in trace {
        rec.add(e.cycle, e.interface, e.direction, e.bytes);
    }
    rec.bandwidth(cycles, window)
}

/// Executes a FuSe slice map fold by fold on the ST-OS micro-schedule and
/// assembles the output tensor.
pub fn replay_functional(
    map: &SliceMap,
    row_filters: &Matrix<i64>,
    col_filters: &Matrix<i64>,
    input: &Tensor3<i64>,
) -> Result<Tensor3<i64>> {
    let g = &map.geometry;
    let k = g.kernel as usize;
    if input.dims() != (g.in_channels as usize, g.height as usize, g.width as usize) {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} does not match the slice map's {}x{}x{}",
            input.dims(),
            g.in_channels,
            g.height,
            g.width
        )));
    }
    if (row_filters.rows as u64, col_filters.rows as u64) != (g.row_channels, g.col_channels)
        || (g.row_channels > 0 && row_filters.cols != k)
        || (g.col_channels > 0 && col_filters.cols != k)
    {
        return Err(Error::ShapeMismatch("filters do not match the slice map".into()));
    }
    let out_channels = match g.variant {
        FuseVariant::Half => g.in_channels,
        FuseVariant::Full => 2 * g.in_channels,
    } as usize;
    let mut out = Tensor3::zeros(out_channels, g.out_h as usize, g.out_w as usize);
    let (s, p) = (g.stride, g.padding);
    let mut rec = Recorder::null();
    for fold in &map.folds {
        let slices: Vec<_> = fold.entries.iter().map(|e| (&map.slices[e.slice], e.start)).collect();
        let cols = fold.cols_used();
        let x = |i: u64, e: u64| {
            let (slice, start) = slices[i as usize];
            let along = (start * s + e) as i64 - p as i64;
            let across = fuse_center(slice.spatial as usize, k, s as usize, p as usize);
            match slice.orientation {
                Orientation::Row => input.get_padded(slice.channel as usize, across, along),
                Orientation::Col => input.get_padded(slice.channel as usize, along, across),
            }
        };
        let w = |i: u64, t: u64| {
            let slice = slices[i as usize].0;
            match slice.orientation {
                Orientation::Row => row_filters.get(slice.filter as usize, t as usize),
                Orientation::Col => col_filters.get(slice.filter as usize, t as usize),
            }
        };
        let filters = fold.distinct_filters(&map.slices);
        let (_, acc) = replay::stos_fold(slices.len() as u64, cols, g.kernel, s, filters, x, w, 1, 0, &mut rec);
        for (i, &(slice, start)) in slices.iter().enumerate() {
            for j in 0..cols {
                let v = acc[i * cols as usize + j as usize];
                let pos = (start + j) as usize;
                match slice.orientation {
                    Orientation::Row => out.set(slice.output_channel as usize, slice.spatial as usize, pos, v),
                    Orientation::Col => out.set(slice.output_channel as usize, pos, slice.spatial as usize, v),
                }
            }
        }
    }
    Ok(out)
}

/// Computes `a × b` fold by fold on the output or weight stationary
/// micro-schedule, in the plan's fold order.
pub fn replay_gemm_functional(a: &Matrix<i64>, b: &Matrix<i64>, dataflow: Dataflow, cfg: &ArrayConfig) -> Result<Matrix<i64>> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let g = GemmWorkload {
        groups: 1,
        rows: a.rows as u64,
        inner: a.cols as u64,
        cols: b.cols as u64,
    };
    let plan = build_plan(&Workload::Gemm(g), dataflow, cfg)?;
    let (r, s) = (cfg.rows, cfg.cols);
    let mut out = Matrix::from_fn(a.rows, b.cols, |_, _| 0i64);
    let mut rec = Recorder::null();
    // Fold coordinates follow the plan's loop order.
    let (mut i, mut j) = (0u64, 0u64);
    for fold in &plan.folds {
        match fold.shape {
            plan::FoldShape::Os { rows, cols, inner } => {
                let (row0, col0) = (i * r, j * s);
                let (_, acc) = replay::os_fold(
                    rows,
                    cols,
                    inner,
                    |x, t| a.get((row0 + x) as usize, t as usize),
                    |t, y| b.get(t as usize, (col0 + y) as usize),
                    1,
                    0,
                    &mut rec,
                );
                for x in 0..rows {
                    for y in 0..cols {
                        out.data[(row0 + x) as usize * b.cols + (col0 + y) as usize] = acc[(x * cols + y) as usize];
                    }
                }
                i += 1;
                if i * r >= g.rows {
                    (i, j) = (0, j + 1);
                }
            }
            plan::FoldShape::Ws {
                rows,
                cols,
                pixels,
                accumulate,
                ..
            } => {
                let (t0, col0) = (i * r, j * s);
                let prev = out.clone();
                let (_, acc) = replay::ws_fold(
                    rows,
                    cols,
                    pixels,
                    accumulate,
                    |x, y| b.get((t0 + x) as usize, (col0 + y) as usize),
                    |px, x| a.get(px as usize, (t0 + x) as usize),
                    |px, y| prev.get(px as usize, (col0 + y) as usize),
                    1,
                    0,
                    &mut rec,
                );
                for px in 0..pixels {
                    for y in 0..cols {
                        out.data[px as usize * b.cols + (col0 + y) as usize] = acc[(px * cols + y) as usize];
                    }
                }
                i += 1;
                if i * r >= g.inner {
                    (i, j) = (0, j + 1);
                }
            }
            plan::FoldShape::Stos { .. } => unreachable!("GEMM plans hold no slice folds"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
