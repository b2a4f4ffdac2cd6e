//! Fold schedules shared by the analytical model and the replay.
//!
//! A plan fixes which folds run, in which order, and which SRAM tiles each
//! fold needs. How long a fold takes and how tiles move between DRAM and SRAM
//! are derived separately by the closed-form model and by the replay.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::lowering::{GemmWorkload, Orientation, SliceMap};
use crate::topology::{ArrayConfig, Dataflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FoldShape {
    /// `rows × cols` outputs, each accumulating `inner` products.
    Os { rows: u64, cols: u64, inner: u64 },
    /// `rows × cols` stationary weights, `pixels` input vectors streamed.
    /// `accumulate`: partial sums are read back; `writeback`: outputs are final.
    Ws {
        rows: u64,
        cols: u64,
        pixels: u64,
        accumulate: bool,
        writeback: bool,
    },
    /// `rows` slices, `cols` outputs each, `taps`-long filters.
    Stos {
        rows: u64,
        cols: u64,
        taps: u64,
        stride: u64,
        filters: u64,
    },
}

impl FoldShape {
    pub(crate) fn macs(&self) -> u64 {
        match *self {
            FoldShape::Os { rows, cols, inner } => rows * cols * inner,
            FoldShape::Ws { rows, cols, pixels, .. } => rows * cols * pixels,
            FoldShape::Stos { rows, cols, taps, .. } => rows * cols * taps,
        }
    }

    /// PEs holding live state during the fold.
    pub(crate) fn pes_used(&self) -> u64 {
        match *self {
            FoldShape::Os { rows, cols, .. } | FoldShape::Ws { rows, cols, .. } | FoldShape::Stos { rows, cols, .. } => {
                rows * cols
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Buffer {
    Ifmap,
    Weight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Tile {
    pub buffer: Buffer,
    /// Unique per buffer within one layer.
    pub id: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct FoldPlan {
    pub shape: FoldShape,
    pub tiles: [Option<Tile>; 2],
    /// Extra tiles for slice folds (one per slice and per filter).
    pub extra_tiles: Vec<Tile>,
    /// Closed-form DRAM fill bytes at fold start: (ifmap, weight).
    pub dram_fill: (u64, u64),
}

impl FoldPlan {
    pub(crate) fn tiles(&self) -> impl Iterator<Item = &Tile> {
        self.tiles.iter().flatten().chain(self.extra_tiles.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Plan {
    pub folds: Vec<FoldPlan>,
    pub element_bytes: u64,
}

fn fits(buffer: &'static str, needed: u64, capacity: u64) -> Result<()> {
    let available = capacity / 2;
    if needed > available {
        Err(Error::TileExceedsSram {
            buffer,
            needed,
            available,
        })
    } else {
        Ok(())
    }
}

/// A GEMM runs when one inner-dimension stripe of each operand fits in half
/// of its SRAM. Larger tiles are streamed from DRAM on every fold.
pub(crate) fn check_gemm_fit(w: &GemmWorkload, dataflow: Dataflow, cfg: &ArrayConfig) -> Result<()> {
    let eb = cfg.element_bytes;
    let (r, s) = (cfg.rows, cfg.cols);
    let (p, t, f) = (w.rows, w.inner, w.cols);
    match dataflow {
        Dataflow::OutputStationary => {
            fits("ifmap", r.min(p) * eb, cfg.ifmap_sram_bytes)?;
            fits("weight", s.min(f) * eb, cfg.weight_sram_bytes)?;
            fits("ofmap", r.min(p) * s.min(f) * eb, cfg.ofmap_sram_bytes)
        }
        Dataflow::WeightStationary => {
            fits("ifmap", r.min(t) * eb, cfg.ifmap_sram_bytes)?;
            fits("weight", r.min(t) * s.min(f) * eb, cfg.weight_sram_bytes)?;
            fits("ofmap", s.min(f) * eb, cfg.ofmap_sram_bytes)
        }
        Dataflow::Stos => Err(Error::DataflowMismatch(
            "GEMM workloads run output or weight stationary, not stos".into(),
        )),
    }
}

/// Whether ifmap tile `a_bytes` must be refetched when a later column block
/// revisits it. The LRU never retains tiles over half the SRAM, and cyclic
/// access keeps the rest only if they fit together.
fn ifmap_refill(a_bytes: u64, tile_bytes: impl Iterator<Item = u64>, cfg: &ArrayConfig) -> bool {
    let half = cfg.ifmap_sram_bytes / 2;
    let cacheable: u64 = tile_bytes.filter(|&b| b <= half).sum();
    a_bytes > half || cacheable > half
}

/// Output-stationary GEMM. Loop order: group, column block, row block.
pub(crate) fn os_plan(w: &GemmWorkload, cfg: &ArrayConfig) -> Result<Plan> {
    check_gemm_fit(w, Dataflow::OutputStationary, cfg)?;
    let eb = cfg.element_bytes;
    let (r, s) = (cfg.rows, cfg.cols);
    let (p, t, f) = (w.rows, w.inner, w.cols);
    let (rf_count, cf_count) = (p.div_ceil(r), f.div_ceil(s));
    let a_tiles = || (0..rf_count).map(|rf| r.min(p - rf * r) * t * eb);
    let weight_half = cfg.weight_sram_bytes / 2;
    let mut folds = Vec::with_capacity((w.groups * rf_count * cf_count) as usize);
    for g in 0..w.groups {
        for cf in 0..cf_count {
            let cols = s.min(f - cf * s);
            for rf in 0..rf_count {
                let rows = r.min(p - rf * r);
                let a_bytes = rows * t * eb;
                let b_bytes = t * cols * eb;
                folds.push(FoldPlan {
                    shape: FoldShape::Os { rows, cols, inner: t },
                    tiles: [
                        Some(Tile {
                            buffer: Buffer::Ifmap,
                            id: g * rf_count + rf,
                            bytes: a_bytes,
                        }),
                        Some(Tile {
                            buffer: Buffer::Weight,
                            id: g * cf_count + cf,
                            bytes: b_bytes,
                        }),
                    ],
                    extra_tiles: Vec::new(),
                    dram_fill: (
                        if cf == 0 || ifmap_refill(a_bytes, a_tiles(), cfg) { a_bytes } else { 0 },
                        if rf == 0 || b_bytes > weight_half { b_bytes } else { 0 },
                    ),
                });
            }
        }
    }
    Ok(Plan { folds, element_bytes: eb })
}

/// Weight-stationary GEMM: the inner dimension maps to array rows.
/// Loop order: group, column block, inner block.
pub(crate) fn ws_plan(w: &GemmWorkload, cfg: &ArrayConfig) -> Result<Plan> {
    let eb = cfg.element_bytes;
    let (r, s) = (cfg.rows, cfg.cols);
    let (p, t, f) = (w.rows, w.inner, w.cols);
    check_gemm_fit(w, Dataflow::WeightStationary, cfg)?;
    let (tf_count, cf_count) = (t.div_ceil(r), f.div_ceil(s));
    let a_tiles = || (0..tf_count).map(|tf| p * r.min(t - tf * r) * eb);
    let mut folds = Vec::with_capacity((w.groups * tf_count * cf_count) as usize);
    for g in 0..w.groups {
        for cf in 0..cf_count {
            let cols = s.min(f - cf * s);
            for tf in 0..tf_count {
                let rows = r.min(t - tf * r);
                let a_bytes = p * rows * eb;
                let b_bytes = rows * cols * eb;
                folds.push(FoldPlan {
                    shape: FoldShape::Ws {
                        rows,
                        cols,
                        pixels: p,
                        accumulate: tf > 0,
                        writeback: tf + 1 == tf_count,
                    },
                    tiles: [
                        Some(Tile {
                            buffer: Buffer::Ifmap,
                            id: g * tf_count + tf,
                            bytes: a_bytes,
                        }),
                        Some(Tile {
                            buffer: Buffer::Weight,
                            id: (g * cf_count + cf) * tf_count + tf,
                            bytes: b_bytes,
                        }),
                    ],
                    extra_tiles: Vec::new(),
                    dram_fill: (
                        if cf == 0 || ifmap_refill(a_bytes, a_tiles(), cfg) { a_bytes } else { 0 },
                        b_bytes,
                    ),
                });
            }
        }
    }
    Ok(Plan { folds, element_bytes: eb })
}

/// Spatial-tiled output stationary, one fold per slice-map fold.
pub(crate) fn stos_plan(map: &SliceMap, cfg: &ArrayConfig) -> Result<Plan> {
    let eb = cfg.element_bytes;
    let g = &map.geometry;
    let filter_id = |o: Orientation, f: u64| match o {
        Orientation::Row => f,
        Orientation::Col => g.row_channels + f,
    };
    let all_filters: BTreeSet<u64> = map
        .folds
        .iter()
        .flat_map(|fold| fold.entries.iter().map(|e| &map.slices[e.slice]))
        .map(|s| filter_id(s.orientation, s.filter))
        .collect();
    fits("weight", all_filters.len() as u64 * g.kernel * eb, cfg.weight_sram_bytes)?;

    let mut seen_slices = BTreeSet::new();
    let mut seen_filters = BTreeSet::new();
    let mut folds = Vec::with_capacity(map.folds.len());
    for fold in &map.folds {
        let input_bytes: u64 = fold.entries.iter().map(|e| map.slices[e.slice].input_len * eb).sum();
        fits("ifmap", input_bytes, cfg.ifmap_sram_bytes)?;
        let rows = fold.entries.len() as u64;
        let cols = fold.cols_used();
        fits("ofmap", rows * cols * eb, cfg.ofmap_sram_bytes)?;
        let mut extra = Vec::new();
        let mut fill = (0, 0);
        for e in &fold.entries {
            let slice = &map.slices[e.slice];
            let bytes = slice.input_len * eb;
            extra.push(Tile {
                buffer: Buffer::Ifmap,
                id: e.slice as u64,
                bytes,
            });
            if seen_slices.insert(e.slice) {
                fill.0 += bytes;
            }
        }
        let filters: BTreeSet<u64> = fold
            .entries
            .iter()
            .map(|e| &map.slices[e.slice])
            .map(|s| filter_id(s.orientation, s.filter))
            .collect();
        for &id in &filters {
            extra.push(Tile {
                buffer: Buffer::Weight,
                id,
                bytes: g.kernel * eb,
            });
            if seen_filters.insert(id) {
                fill.1 += g.kernel * eb;
            }
        }
        folds.push(FoldPlan {
            shape: FoldShape::Stos {
                rows,
                cols,
                taps: g.kernel,
                stride: g.stride,
                filters: filters.len() as u64,
            },
            tiles: [None, None],
            extra_tiles: extra,
            dram_fill: fill,
        });
    }
    Ok(Plan { folds, element_bytes: eb })
}
