//! Slice maps for the spatial-tiled output stationary dataflow.
//!
//! A FuSe layer decomposes into independent 1D convolutions ("slices"): one
//! per (row-filter channel, output row) and one per (column-filter channel,
//! output column). Each slice occupies one array row; its outputs are tiled
//! across the array columns in chunks of at most S. A fold is one group of at
//! most R slices processing one output chunk.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{ArrayConfig, Dataflow, FuseVariant, LayerDescriptor, LayerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MappingStrategy {
    /// Slices of the same channel on consecutive rows.
    SpatialFirst,
    /// Distinct channels per fold; rows stay idle when C < R.
    ChannelsFirst,
    /// Channels first, remaining rows filled with further spatial slices.
    Hybrid,
}

impl MappingStrategy {
    pub const ALL: [MappingStrategy; 3] = [
        MappingStrategy::SpatialFirst,
        MappingStrategy::ChannelsFirst,
        MappingStrategy::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MappingStrategy::SpatialFirst => "spatial-first",
            MappingStrategy::ChannelsFirst => "channels-first",
            MappingStrategy::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for MappingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MappingStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "spatial-first" | "spatialfirst" => Ok(MappingStrategy::SpatialFirst),
            "channels-first" | "channelsfirst" => Ok(MappingStrategy::ChannelsFirst),
            "hybrid" => Ok(MappingStrategy::Hybrid),
            _ => Err(format!(
                "unknown mapping strategy `{s}` (expected spatial-first, channels-first or hybrid)"
            )),
        }
    }
}

impl TryFrom<String> for MappingStrategy {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<MappingStrategy> for String {
    fn from(m: MappingStrategy) -> String {
        m.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Orientation {
    Row,
    Col,
}

/// A FuSeRow/FuSeCol pair together with the variant that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FusePair {
    pub row: LayerDescriptor,
    pub col: LayerDescriptor,
    pub variant: FuseVariant,
}

impl FusePair {
    /// Builds a pair, inferring the variant from the channels entering it.
    /// Without that context, equal halves are read as `Half`.
    pub fn new(row: &LayerDescriptor, col: &LayerDescriptor, incoming_channels: Option<u64>) -> Result<Self> {
        if row.kind != LayerKind::FuSeRow || col.kind != LayerKind::FuSeCol {
            return Err(Error::layer(&row.name, "expected a FuSeRow followed by a FuSeCol"));
        }
        if (row.ifmap_h, row.ifmap_w, row.kernel, row.stride, row.padding)
            != (col.ifmap_h, col.ifmap_w, col.kernel, col.stride, col.padding)
        {
            return Err(Error::layer(&col.name, "FuSe pair halves disagree on geometry"));
        }
        let (cr, cc) = (row.in_channels, col.in_channels);
        let variant = match incoming_channels {
            Some(c) if cr + cc == c => FuseVariant::Half,
            Some(c) if cr == c && cc == c => FuseVariant::Full,
            Some(c) => {
                return Err(Error::layer(
                    &row.name,
                    format!("FuSe pair channels {cr}+{cc} do not match {c} incoming channels"),
                ))
            }
            None => FuseVariant::Half,
        };
        Ok(FusePair {
            row: row.clone(),
            col: col.clone(),
            variant,
        })
    }

    pub fn geometry(&self) -> FuseGeometry {
        let l = &self.row;
        let (cr, cc) = (self.row.in_channels, self.col.in_channels);
        FuseGeometry {
            variant: self.variant,
            in_channels: match self.variant {
                FuseVariant::Half => cr + cc,
                FuseVariant::Full => cr,
            },
            height: l.ifmap_h,
            width: l.ifmap_w,
            kernel: l.kernel,
            stride: l.stride,
            padding: l.padding,
            out_h: l.out_h(),
            out_w: l.out_w(),
            row_channels: cr,
            col_channels: cc,
        }
    }
}

/// Source-layer geometry a slice map was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FuseGeometry {
    pub variant: FuseVariant,
    pub in_channels: u64,
    pub height: u64,
    pub width: u64,
    pub kernel: u64,
    pub stride: u64,
    pub padding: u64,
    /// M
    pub out_h: u64,
    /// N
    pub out_w: u64,
    pub row_channels: u64,
    pub col_channels: u64,
}

/// One 1D convolution strip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slice {
    pub orientation: Orientation,
    /// Input channel read.
    pub channel: u64,
    /// Index into the row or column filter set.
    pub filter: u64,
    pub output_channel: u64,
    /// Output row (Row orientation) or output column (Col orientation).
    pub spatial: u64,
    /// Padded strip length, halos included.
    pub input_len: u64,
    pub kernel_len: u64,
    pub outputs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FoldEntry {
    pub array_row: u64,
    pub slice: usize,
    pub start: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fold {
    pub orientation: Orientation,
    pub entries: Vec<FoldEntry>,
}

impl Fold {
    /// Widest output segment, i.e. array columns in use.
    pub fn cols_used(&self) -> u64 {
        self.entries.iter().map(|e| e.len).max().unwrap_or(0)
    }

    /// Number of distinct filters the fold broadcasts.
    pub fn distinct_filters(&self, slices: &[Slice]) -> u64 {
        self.entries
            .iter()
            .map(|e| slices[e.slice].filter)
            .collect::<BTreeSet<_>>()
            .len() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceMap {
    pub geometry: FuseGeometry,
    pub array_rows: u64,
    pub array_cols: u64,
    pub strategy: MappingStrategy,
    pub slices: Vec<Slice>,
    /// Row-orientation folds first, then column-orientation folds.
    pub folds: Vec<Fold>,
}

impl SliceMap {
    /// Total number of FuSe outputs, `M·N·(C_r + C_c)`.
    pub fn total_outputs(&self) -> u64 {
        self.slices.iter().map(|s| s.outputs).sum()
    }

    pub fn macs(&self) -> u64 {
        self.folds
            .iter()
            .flat_map(|f| &f.entries)
            .map(|e| e.len * self.slices[e.slice].kernel_len)
            .sum()
    }

    /// Filter broadcasts summed over folds; one per distinct filter per fold.
    pub fn weight_fetches(&self) -> u64 {
        self.folds.iter().map(|f| f.distinct_filters(&self.slices)).sum()
    }

    /// The same map restricted to folds of one orientation.
    pub fn part(&self, orientation: Orientation) -> SliceMap {
        SliceMap {
            folds: self
                .folds
                .iter()
                .filter(|f| f.orientation == orientation)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Checks coverage, row distinctness and segment bounds.
    pub fn validate(&self) -> Result<()> {
        let mut covered: Vec<Vec<bool>> = self.slices.iter().map(|s| vec![false; s.outputs as usize]).collect();
        for (fi, fold) in self.folds.iter().enumerate() {
            let mut rows = BTreeSet::new();
            for e in &fold.entries {
                let slice = self
                    .slices
                    .get(e.slice)
                    .ok_or_else(|| Error::Invalid(format!("fold {fi} references missing slice {}", e.slice)))?;
                if e.array_row >= self.array_rows || !rows.insert(e.array_row) {
                    return Err(Error::Invalid(format!("fold {fi} reuses or overflows array row {}", e.array_row)));
                }
                if e.len == 0 || e.len > self.array_cols || e.start + e.len > slice.outputs {
                    return Err(Error::Invalid(format!("fold {fi} has an out-of-range segment")));
                }
                for o in e.start..e.start + e.len {
                    let cell = &mut covered[e.slice][o as usize];
                    if *cell {
                        return Err(Error::Invalid(format!("output {o} of slice {} mapped twice", e.slice)));
                    }
                    *cell = true;
                }
            }
        }
        if covered.iter().flatten().any(|c| !c) {
            return Err(Error::Invalid("some slice outputs are never mapped".into()));
        }
        Ok(())
    }
}

/// Decomposes a FuSe pair into slices and packs them into folds.
///
/// Packing is greedy: slices are visited in strategy order and a fold group
/// closes when it has R slices (or, for ChannelsFirst, when the next slice's
/// filter is already present). Each group then emits one fold per output chunk.
pub fn lower_stos(pair: &FusePair, cfg: &ArrayConfig, strategy: MappingStrategy) -> Result<SliceMap> {
    if cfg.dataflow != Dataflow::Stos {
        return Err(Error::DataflowMismatch(format!(
            "slice maps require the stos dataflow, configured {}",
            cfg.dataflow
        )));
    }
    cfg.validate()?;
    let g = pair.geometry();
    if g.out_h == 0 || g.out_w == 0 {
        return Err(Error::layer(&pair.row.name, "zero-size feature map"));
    }
    let (col_in_offset, col_out_offset) = match g.variant {
        FuseVariant::Half => (g.row_channels, g.row_channels),
        FuseVariant::Full => (0, g.in_channels),
    };

    let mut slices = Vec::new();
    for f in 0..g.row_channels {
        for m in 0..g.out_h {
            slices.push(Slice {
                orientation: Orientation::Row,
                channel: f,
                filter: f,
                output_channel: f,
                spatial: m,
                input_len: g.width + 2 * g.padding,
                kernel_len: g.kernel,
                outputs: g.out_w,
            });
        }
    }
    for f in 0..g.col_channels {
        for n in 0..g.out_w {
            slices.push(Slice {
                orientation: Orientation::Col,
                channel: col_in_offset + f,
                filter: f,
                output_channel: col_out_offset + f,
                spatial: n,
                input_len: g.height + 2 * g.padding,
                kernel_len: g.kernel,
                outputs: g.out_h,
            });
        }
    }

    let mut folds = Vec::new();
    for orientation in [Orientation::Row, Orientation::Col] {
        let mut order: Vec<usize> = (0..slices.len())
            .filter(|&i| slices[i].orientation == orientation)
            .collect();
        match strategy {
            MappingStrategy::SpatialFirst => order.sort_by_key(|&i| (slices[i].filter, slices[i].spatial)),
            MappingStrategy::ChannelsFirst | MappingStrategy::Hybrid => {
                order.sort_by_key(|&i| (slices[i].spatial, slices[i].filter))
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for i in order {
            let clash = strategy == MappingStrategy::ChannelsFirst
                && current.iter().any(|&j| slices[j].filter == slices[i].filter);
            if current.len() as u64 == cfg.rows || clash {
                groups.push(std::mem::take(&mut current));
            }
            current.push(i);
        }
        if !current.is_empty() {
            groups.push(current);
        }
        for group in groups {
            let outputs = slices[group[0]].outputs;
            let mut start = 0;
            while start < outputs {
                let len = cfg.cols.min(outputs - start);
                folds.push(Fold {
                    orientation,
                    entries: group
                        .iter()
                        .enumerate()
                        .map(|(r, &slice)| FoldEntry {
                            array_row: r as u64,
                            slice,
                            start,
                            len,
                        })
                        .collect(),
                });
                start += len;
            }
        }
    }

    Ok(SliceMap {
        geometry: g,
        array_rows: cfg.rows,
        array_cols: cfg.cols,
        strategy,
        slices,
        folds,
    })
}
