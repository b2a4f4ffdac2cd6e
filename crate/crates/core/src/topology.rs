//! Layer tables, network topologies and hardware configuration.
//!
//! Shape symbols follow one convention throughout the crate: an input of
//! `H × W × C` (height, width, channels) convolved with `K × K` kernels into
//! `C'` output channels gives an output of `M × N` (height, width).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowering::MappingStrategy;

/// Operator kind of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Standard,
    Depthwise,
    Pointwise,
    FuSeRow,
    FuSeCol,
    Gemm,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Standard,
        LayerKind::Depthwise,
        LayerKind::Pointwise,
        LayerKind::FuSeRow,
        LayerKind::FuSeCol,
        LayerKind::Gemm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Standard => "Standard",
            LayerKind::Depthwise => "Depthwise",
            LayerKind::Pointwise => "Pointwise",
            LayerKind::FuSeRow => "FuSeRow",
            LayerKind::FuSeCol => "FuSeCol",
            LayerKind::Gemm => "Gemm",
        }
    }

    pub fn is_fuse(self) -> bool {
        matches!(self, LayerKind::FuSeRow | LayerKind::FuSeCol)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown layer kind `{s}`"))
    }
}

/// One network layer: operator kind, input shape, stride and padding.
///
/// For `FuSeRow`/`FuSeCol` the channel counts are those of the layer's own
/// channel group; `in_channels == out_channels`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub name: String,
    pub kind: LayerKind,
    /// H
    pub ifmap_h: u64,
    /// W
    pub ifmap_w: u64,
    /// K (square for Standard/Depthwise; 1D length for FuSe; 1 for Pointwise/Gemm)
    pub kernel: u64,
    /// C
    pub in_channels: u64,
    /// C'
    pub out_channels: u64,
    pub stride: u64,
    pub padding: u64,
}

impl LayerDescriptor {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        kind: LayerKind,
        ifmap_h: u64,
        ifmap_w: u64,
        kernel: u64,
        in_channels: u64,
        out_channels: u64,
        stride: u64,
        padding: u64,
    ) -> Self {
        LayerDescriptor {
            name: name.into(),
            kind,
            ifmap_h,
            ifmap_w,
            kernel,
            in_channels,
            out_channels,
            stride,
            padding,
        }
    }

    /// Output height M. Zero when the padded input is smaller than the kernel.
    pub fn out_h(&self) -> u64 {
        out_dim(self.ifmap_h, self.kernel, self.stride, self.padding)
    }

    /// Output width N.
    pub fn out_w(&self) -> u64 {
        out_dim(self.ifmap_w, self.kernel, self.stride, self.padding)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::layer(&self.name, msg));
        if self.name.is_empty() {
            return Err(Error::layer("<unnamed>", "layer name is empty"));
        }
        if self.ifmap_h == 0 || self.ifmap_w == 0 {
            return bad("ifmap dims must be positive");
        }
        if self.kernel == 0 || self.stride == 0 {
            return bad("kernel and stride must be positive");
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive");
        }
        match self.kind {
            LayerKind::Depthwise | LayerKind::FuSeRow | LayerKind::FuSeCol => {
                if self.out_channels != self.in_channels {
                    return bad("out_channels must equal in_channels");
                }
            }
            LayerKind::Pointwise | LayerKind::Gemm => {
                if self.kernel != 1 || self.stride != 1 || self.padding != 0 {
                    return bad("kernel and stride must be 1 and padding 0");
                }
            }
            LayerKind::Standard => {}
        }
        if self.ifmap_h + 2 * self.padding < self.kernel
            || self.ifmap_w + 2 * self.padding < self.kernel
        {
            return bad("kernel larger than the padded input; output would be empty");
        }
        Ok(())
    }
}

/// Standard convolution output size `floor((x + 2p − k)/s) + 1`, or 0 if empty.
pub fn out_dim(x: u64, k: u64, s: u64, p: u64) -> u64 {
    if x + 2 * p < k || s == 0 {
        0
    } else {
        (x + 2 * p - k) / s + 1
    }
}

/// Mobile-bottleneck triple: optional expand pointwise, a depthwise layer or
/// FuSe pair, optional project pointwise. Indices are into `layers`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottleneckGroup {
    pub start: usize,
    /// First layer of the depthwise layer or FuSe pair.
    pub middle: usize,
    /// Exclusive.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub name: String,
    pub layers: Vec<LayerDescriptor>,
    pub bottleneck_groups: Vec<BottleneckGroup>,
}

impl NetworkTopology {
    /// Validates layers and channel chaining, then infers bottleneck groups.
    pub fn new(name: impl Into<String>, layers: Vec<LayerDescriptor>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidTopology("no layers".into()));
        }
        for layer in &layers {
            layer.validate()?;
        }
        validate_chain(&layers)?;
        let bottleneck_groups = infer_groups(&layers);
        Ok(NetworkTopology {
            name: name.into(),
            layers,
            bottleneck_groups,
        })
    }

    /// Indices of the Depthwise layers, in order.
    pub fn depthwise_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LayerKind::Depthwise)
            .map(|(i, _)| i)
            .collect()
    }
}

fn validate_chain(layers: &[LayerDescriptor]) -> Result<()> {
    let mut channels: Option<u64> = None;
    let mut spatial: Option<(u64, u64)> = None;
    let mut i = 0;
    while i < layers.len() {
        let l = &layers[i];
        match l.kind {
            LayerKind::FuSeCol => {
                return Err(Error::layer(&l.name, "FuSeCol must directly follow a FuSeRow"));
            }
            LayerKind::FuSeRow => {
                let col = layers
                    .get(i + 1)
                    .filter(|c| c.kind == LayerKind::FuSeCol)
                    .ok_or_else(|| Error::layer(&l.name, "FuSeRow must be followed by a FuSeCol"))?;
                if (col.ifmap_h, col.ifmap_w, col.kernel, col.stride, col.padding)
                    != (l.ifmap_h, l.ifmap_w, l.kernel, l.stride, l.padding)
                {
                    return Err(Error::layer(
                        &col.name,
                        "FuSe pair halves must share input dims, kernel, stride and padding",
                    ));
                }
                if let Some(c) = channels {
                    let half = l.in_channels + col.in_channels == c;
                    let full = l.in_channels == c && col.in_channels == c;
                    if !half && !full {
                        return Err(Error::layer(
                            &l.name,
                            format!(
                                "FuSe pair channels {}+{} do not match the {} incoming channels",
                                l.in_channels, col.in_channels, c
                            ),
                        ));
                    }
                }
                check_spatial(l, spatial)?;
                channels = Some(l.out_channels + col.out_channels);
                spatial = Some((l.out_h(), l.out_w()));
                i += 2;
                continue;
            }
            _ => {
                if let Some(c) = channels {
                    if l.in_channels != c {
                        return Err(Error::layer(
                            &l.name,
                            format!("in_channels {} does not match the {} incoming channels", l.in_channels, c),
                        ));
                    }
                }
                if l.kind != LayerKind::Gemm {
                    check_spatial(l, spatial)?;
                    spatial = Some((l.out_h(), l.out_w()));
                }
                channels = Some(l.out_channels);
            }
        }
        i += 1;
    }
    Ok(())
}

fn check_spatial(l: &LayerDescriptor, spatial: Option<(u64, u64)>) -> Result<()> {
    match spatial {
        Some((h, w)) if (h, w) != (l.ifmap_h, l.ifmap_w) => Err(Error::layer(
            &l.name,
            format!("ifmap {}x{} does not match the preceding output {}x{}", l.ifmap_h, l.ifmap_w, h, w),
        )),
        _ => Ok(()),
    }
}

fn infer_groups(layers: &[LayerDescriptor]) -> Vec<BottleneckGroup> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < layers.len() {
        let middle_len = match layers[i].kind {
            LayerKind::Depthwise => 1,
            LayerKind::FuSeRow => 2,
            _ => {
                i += 1;
                continue;
            }
        };
        let start = if i > 0 && layers[i - 1].kind == LayerKind::Pointwise {
            i - 1
        } else {
            i
        };
        let mut j = i + middle_len;
        while j < layers.len() && layers[j].kind == LayerKind::Gemm {
            j += 1;
        }
        let end = if j < layers.len() && layers[j].kind == LayerKind::Pointwise {
            j + 1
        } else {
            i + middle_len
        };
        groups.push(BottleneckGroup { start, middle: i, end });
        i += middle_len;
    }
    groups
}

const CSV_HEADER: [&str; 9] = [
    "name",
    "ifmap_h",
    "ifmap_w",
    "kernel",
    "in_channels",
    "out_channels",
    "stride",
    "padding",
    "kind",
];

const NAME_DIRECTIVE: &str = "# network:";

/// Reads a topology CSV. The network name comes from a `# network: <name>`
/// comment when present, otherwise from the file stem.
pub fn load_topology(path: impl AsRef<Path>) -> Result<NetworkTopology> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "network".into());
    parse_topology(&text, &stem)
}

/// Parses topology CSV text; `default_name` is used when no name directive exists.
pub fn parse_topology(text: &str, default_name: &str) -> Result<NetworkTopology> {
    let name = text
        .lines()
        .find_map(|l| l.strip_prefix(NAME_DIRECTIVE))
        .map(|n| n.trim().to_string())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| default_name.to_string());

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(text.as_bytes());

    // csv's line counter skips comment and blank lines, so record k maps to
    // the k-th remaining source line.
    let source_lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, _)| i + 1)
        .collect();
    let header_line = |pos: Option<&csv::Position>| {
        pos.and_then(|p| source_lines.get(p.record() as usize).copied())
            .unwrap_or(0)
    };
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(header_line(e.position()), 0, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(Error::InvalidTopology("no layers".into()));
    }
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::parse(
            source_lines.first().copied().unwrap_or(1),
            1,
            format!("expected header `{}`", CSV_HEADER.join(",")),
        ));
    }

    let mut layers = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(header_line(e.position()), 0, e.to_string()))?;
        let line = header_line(record.position());
        if record.len() != CSV_HEADER.len() {
            return Err(Error::parse(line, 1, format!("expected 9 fields, found {}", record.len())));
        }
        let int = |idx: usize| -> Result<u64> {
            record[idx].parse::<u64>().map_err(|_| {
                Error::parse(
                    line,
                    idx + 1,
                    format!("field `{}` must be a non-negative integer, found `{}`", CSV_HEADER[idx], &record[idx]),
                )
            })
        };
        let kind = record[8]
            .parse::<LayerKind>()
            .map_err(|m| Error::parse(line, 9, m))?;
        layers.push(LayerDescriptor {
            name: record[0].to_string(),
            ifmap_h: int(1)?,
            ifmap_w: int(2)?,
            kernel: int(3)?,
            in_channels: int(4)?,
            out_channels: int(5)?,
            stride: int(6)?,
            padding: int(7)?,
            kind,
        });
    }
    NetworkTopology::new(name, layers)
}

/// Serializes a topology in the CSV format read by [`parse_topology`].
pub fn write_topology(net: &NetworkTopology) -> String {
    let mut out = format!("{NAME_DIRECTIVE} {}\n{}\n", net.name, CSV_HEADER.join(","));
    for l in &net.layers {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            l.name, l.ifmap_h, l.ifmap_w, l.kernel, l.in_channels, l.out_channels, l.stride, l.padding, l.kind
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FuseVariant {
    /// Row and column filters each over all C channels; 2C outputs.
    Full,
    /// ceil(C/2) row filters and floor(C/2) column filters; C outputs.
    Half,
}

impl FuseVariant {
    /// Channel counts (row group, column group) for a depthwise layer of `c` channels.
    pub fn split(self, c: u64) -> (u64, u64) {
        match self {
            FuseVariant::Full => (c, c),
            FuseVariant::Half => (c.div_ceil(2), c / 2),
        }
    }
}

impl FromStr for FuseVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(FuseVariant::Full),
            "half" => Ok(FuseVariant::Half),
            _ => Err(format!("unknown FuSe variant `{s}` (expected full or half)")),
        }
    }
}

/// Replaces each depthwise layer whose mask bit is set by a FuSeRow+FuSeCol pair.
///
/// `layer_mask[i]` refers to the i-th Depthwise layer. Under `Full` the pair
/// emits 2C channels; every layer up to and including the next non-Gemm layer
/// has its C-channel sides doubled (squeeze-excite Gemms, then the pointwise).
pub fn fuse_replace(
    net: &NetworkTopology,
    variant: FuseVariant,
    layer_mask: &[bool],
) -> Result<NetworkTopology> {
    let dw = net.depthwise_indices();
    if layer_mask.len() != dw.len() {
        return Err(Error::Invalid(format!(
            "layer mask has {} bits but the network has {} depthwise layers",
            layer_mask.len(),
            dw.len()
        )));
    }
    let mut layers = Vec::with_capacity(net.layers.len() + dw.len());
    let mut bit = 0;
    // Channel count whose consumers must be doubled after a Full replacement.
    let mut doubled: Option<u64> = None;
    for layer in &net.layers {
        if layer.kind == LayerKind::Depthwise {
            let replace = layer_mask[bit];
            bit += 1;
            if replace {
                let c = layer.in_channels;
                let (cr, cc) = variant.split(c);
                if cc == 0 {
                    return Err(Error::layer(&layer.name, "FuSe-Half needs at least 2 channels"));
                }
                let half = |suffix: &str, kind, ch| LayerDescriptor {
                    name: format!("{}_{suffix}", layer.name),
                    kind,
                    in_channels: ch,
                    out_channels: ch,
                    ..layer.clone()
                };
                layers.push(half("row", LayerKind::FuSeRow, cr));
                layers.push(half("col", LayerKind::FuSeCol, cc));
                doubled = (variant == FuseVariant::Full).then_some(c);
                continue;
            }
        }
        let mut l = layer.clone();
        if let Some(c) = doubled {
            if l.in_channels == c {
                l.in_channels = 2 * c;
            }
            if l.kind == LayerKind::Gemm {
                if l.out_channels == c {
                    l.out_channels = 2 * c;
                }
            } else {
                doubled = None;
            }
        }
        layers.push(l);
    }
    NetworkTopology::new(net.name.clone(), layers)
}

/// Dataflow executed by the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Dataflow {
    OutputStationary,
    WeightStationary,
    /// Spatial-tiled output stationary: FuSe slices on rows with per-row
    /// weight broadcast. Non-FuSe layers run output stationary.
    Stos,
}

impl Dataflow {
    pub fn short(self) -> &'static str {
        match self {
            Dataflow::OutputStationary => "os",
            Dataflow::WeightStationary => "ws",
            Dataflow::Stos => "stos",
        }
    }
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for Dataflow {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "os" | "outputstationary" => Ok(Dataflow::OutputStationary),
            "ws" | "weightstationary" => Ok(Dataflow::WeightStationary),
            "stos" => Ok(Dataflow::Stos),
            _ => Err(format!("unknown dataflow `{s}` (expected os, ws or stos)")),
        }
    }
}

impl TryFrom<String> for Dataflow {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Dataflow> for String {
    fn from(d: Dataflow) -> String {
        d.short().to_string()
    }
}

/// Systolic array and memory system parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    /// R
    pub rows: u64,
    /// S
    pub cols: u64,
    pub dataflow: Dataflow,
    pub ifmap_sram_bytes: u64,
    pub weight_sram_bytes: u64,
    pub ofmap_sram_bytes: u64,
    pub freq_hz: u64,
    pub element_bytes: u64,
    /// DRAM bandwidth cap in bytes/cycle; 0 means unconstrained.
    pub dram_bytes_per_cycle: u64,
    /// Sliding window, in cycles, for peak bandwidth.
    pub bw_window: u64,
    /// Slice packing used for FuSe layers under ST-OS.
    pub stos_strategy: MappingStrategy,
}

impl Default for ArrayConfig {
    /// 16×16 array at 1 GHz with 64 KiB ifmap, weight and ofmap SRAMs.
    fn default() -> Self {
        ArrayConfig {
            rows: 16,
            cols: 16,
            dataflow: Dataflow::OutputStationary,
            ifmap_sram_bytes: 64 * 1024,
            weight_sram_bytes: 64 * 1024,
            ofmap_sram_bytes: 64 * 1024,
            freq_hz: 1_000_000_000,
            element_bytes: 1,
            dram_bytes_per_cycle: 0,
            bw_window: 16,
            stos_strategy: MappingStrategy::Hybrid,
        }
    }
}

impl ArrayConfig {
    pub fn with_dataflow(mut self, dataflow: Dataflow) -> Self {
        self.dataflow = dataflow;
        self
    }

    pub fn with_dims(mut self, rows: u64, cols: u64) -> Self {
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.rows, "rows"),
            (self.cols, "cols"),
            (self.ifmap_sram_bytes, "ifmap_sram_bytes"),
            (self.weight_sram_bytes, "weight_sram_bytes"),
            (self.ofmap_sram_bytes, "ofmap_sram_bytes"),
            (self.freq_hz, "freq_hz"),
            (self.element_bytes, "element_bytes"),
            (self.bw_window, "bw_window"),
        ];
        for (v, name) in checks {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; omitted keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ArrayConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_col(text, s.start))
                .unwrap_or((0, 0));
            Error::parse(line, column, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("ArrayConfig always serializes")
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, column)
}
