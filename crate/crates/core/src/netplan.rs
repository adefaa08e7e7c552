//! Whole-network planning: load a network description, plan every entry,
//! chain base addresses and compare against tensor-level baselines.
//!
//! # Config format
//!
//! JSON with a global pool size and an ordered list of entries:
//!
//! ```json
//! {
//!   "name": "tiny",
//!   "memcap_bytes": 131072,
//!   "dtype_bytes": 1,
//!   "entries": [
//!     { "name": "S1", "kind": "ib", "hw": 20, "c_in": 16, "c_mid": 48,
//!       "c_out": 16, "rs": 3, "strides": [1, 1, 1] },
//!     { "name": "head", "kind": "fc", "m": 1, "k": 400, "n": 2, "gap_before": true }
//!   ]
//! }
//! ```
//!
//! Kinds: `ib`, `conv` (`hw, c_in, c_out, rs, stride, padding`), `depthwise`
//! (`hw, c, rs, stride, padding`) and `fc` (`m, k, n`). Padding is `"valid"`
//! or `"same"`; conv defaults to valid, depthwise to same. Each entry's input
//! must equal the previous entry's output unless it sets `gap_before`.
//! `segment_elems` overrides the default segment size.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{
    baseline_footprint, min_offset_graph_with, plan_layer_with, plan_module_unfused, ConvSpec,
    LayerSpec, MemPlan, ModuleSpec, Padding, PlanError, SegmentRule,
};

pub const VWW_CONFIG: &str = include_str!("../configs/mcunet-vww.json");
pub const IMAGENET_320KB_CONFIG: &str = include_str!("../configs/mcunet-320kb.json");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("shape chain broken between {prev} and {next}: {prev} produces {produced:?}, {next} expects {expected:?}")]
    Chain {
        prev: String,
        next: String,
        produced: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("entry {entry}: {source}")]
    Plan { entry: String, source: PlanError },
    #[error("network has no entries")]
    Empty,
    #[error("no entry named {0}")]
    UnknownEntry(String),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PaddingConfig {
    Valid,
    Same,
}

impl From<PaddingConfig> for Padding {
    fn from(p: PaddingConfig) -> Self {
        match p {
            PaddingConfig::Valid => Padding::Valid,
            PaddingConfig::Same => Padding::Same,
        }
    }
}

fn one() -> usize {
    1
}

fn valid() -> PaddingConfig {
    PaddingConfig::Valid
}

fn same() -> PaddingConfig {
    PaddingConfig::Same
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum OpConfig {
    Ib {
        hw: usize,
        c_in: usize,
        c_mid: usize,
        c_out: usize,
        rs: usize,
        strides: [usize; 3],
    },
    Conv {
        hw: usize,
        c_in: usize,
        c_out: usize,
        rs: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "valid")]
        padding: PaddingConfig,
    },
    Depthwise {
        hw: usize,
        c: usize,
        rs: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "same")]
        padding: PaddingConfig,
    },
    Fc {
        m: usize,
        k: usize,
        n: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntryConfig {
    name: String,
    #[serde(default)]
    gap_before: bool,
    #[serde(default)]
    segment_elems: Option<usize>,
    #[serde(flatten)]
    op: OpConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkConfig {
    name: String,
    memcap_bytes: usize,
    #[serde(default = "one")]
    dtype_bytes: usize,
    entries: Vec<EntryConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetOp {
    Module(ModuleSpec),
    Layer(LayerSpec),
}

impl NetOp {
    pub fn kind(&self) -> &'static str {
        match self {
            NetOp::Module(_) => "ib",
            NetOp::Layer(LayerSpec::FullyConnected { .. }) => "fc",
            NetOp::Layer(LayerSpec::Conv2D(_)) => "conv",
            NetOp::Layer(LayerSpec::Depthwise(_)) => "depthwise",
            NetOp::Layer(LayerSpec::Add { .. }) => "add",
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match *self {
            NetOp::Module(m) => vec![m.hw, m.hw, m.c_in],
            NetOp::Layer(LayerSpec::FullyConnected { m, k, .. }) => vec![m, k],
            NetOp::Layer(LayerSpec::Conv2D(c) | LayerSpec::Depthwise(c)) => vec![c.h, c.w, c.c],
            NetOp::Layer(LayerSpec::Add { h, w, c, .. }) => vec![h, w, c],
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match *self {
            NetOp::Module(m) => vec![m.out_hw(), m.out_hw(), m.c_out],
            NetOp::Layer(LayerSpec::FullyConnected { m, n, .. }) => vec![m, n],
            NetOp::Layer(LayerSpec::Conv2D(c) | LayerSpec::Depthwise(c)) => {
                vec![c.out_h(), c.out_w(), c.k]
            }
            NetOp::Layer(LayerSpec::Add { h, w, c, .. }) => vec![h, w, c],
        }
    }

    fn default_segment(&self) -> usize {
        match self {
            NetOp::Module(m) => m.segment_elems(),
            NetOp::Layer(l) => l.segment_elems(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetEntry {
    pub name: String,
    pub gap_before: bool,
    pub segment_elems: Option<usize>,
    pub op: NetOp,
}

impl NetEntry {
    pub fn segment_elems(&self) -> usize {
        self.segment_elems
            .unwrap_or_else(|| self.op.default_segment())
    }

    /// Whether the entry runs as one fused kernel.
    pub fn is_fused(&self) -> bool {
        matches!(self.op, NetOp::Module(m) if m.is_fusable())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub memcap_bytes: usize,
    pub dtype_bytes: usize,
    pub entries: Vec<NetEntry>,
}

impl NetworkSpec {
    pub fn entry(&self, name: &str) -> Result<&NetEntry, NetError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| NetError::UnknownEntry(name.to_string()))
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.entries[0].op.input_shape()
    }
}

fn convert(e: EntryConfig) -> Result<NetEntry, NetError> {
    let plan_err = |source| NetError::Plan {
        entry: e.name.clone(),
        source,
    };
    let op = match e.op {
        OpConfig::Ib {
            hw,
            c_in,
            c_mid,
            c_out,
            rs,
            strides,
        } => {
            let m = ModuleSpec::new(hw, c_in, c_mid, c_out, rs, strides);
            m.validate().map_err(plan_err)?;
            NetOp::Module(m)
        }
        OpConfig::Conv {
            hw,
            c_in,
            c_out,
            rs,
            stride,
            padding,
        } => NetOp::Layer(LayerSpec::Conv2D(ConvSpec {
            batch: 1,
            h: hw,
            w: hw,
            c: c_in,
            k: c_out,
            r: rs,
            s: rs,
            stride,
            padding: padding.into(),
        })),
        OpConfig::Depthwise {
            hw,
            c,
            rs,
            stride,
            padding,
        } => NetOp::Layer(LayerSpec::Depthwise(ConvSpec {
            batch: 1,
            h: hw,
            w: hw,
            c,
            k: c,
            r: rs,
            s: rs,
            stride,
            padding: padding.into(),
        })),
        OpConfig::Fc { m, k, n } => NetOp::Layer(LayerSpec::FullyConnected { m, k, n }),
    };
    if let NetOp::Layer(l) = &op {
        l.validate().map_err(plan_err)?;
    }
    if e.segment_elems == Some(0) {
        return Err(NetError::Invalid(format!(
            "{}: segment_elems must be positive",
            e.name
        )));
    }
    Ok(NetEntry {
        name: e.name,
        gap_before: e.gap_before,
        segment_elems: e.segment_elems,
        op,
    })
}

/// Parse and validate a network description.
pub fn load_network(text: &str) -> Result<NetworkSpec, NetError> {
    let cfg: NetworkConfig = serde_json::from_str(text).map_err(|e| NetError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if cfg.entries.is_empty() {
        return Err(NetError::Empty);
    }
    if cfg.dtype_bytes == 0 || cfg.memcap_bytes == 0 {
        return Err(NetError::Invalid(
            "memcap_bytes and dtype_bytes must be positive".into(),
        ));
    }
    let entries = cfg
        .entries
        .into_iter()
        .map(convert)
        .collect::<Result<Vec<_>, _>>()?;
    for pair in entries.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let (produced, expected) = (prev.op.output_shape(), next.op.input_shape());
        if !next.gap_before && produced != expected {
            return Err(NetError::Chain {
                prev: prev.name.clone(),
                next: next.name.clone(),
                produced,
                expected,
            });
        }
    }
    let mut names: Vec<&str> = entries.iter().map(|e| e.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(NetError::Invalid(format!("duplicate entry name {}", w[0])));
    }
    Ok(NetworkSpec {
        name: cfg.name,
        memcap_bytes: cfg.memcap_bytes,
        dtype_bytes: cfg.dtype_bytes,
        entries,
    })
}

/// Bundled network descriptions, looked up by file name or stem.
pub fn bundled_config(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".json").unwrap_or(name);
    match stem {
        "mcunet-vww" => Some(VWW_CONFIG),
        "mcunet-320kb" => Some(IMAGENET_320KB_CONFIG),
        _ => None,
    }
}

/// Read a config from disk, falling back to a bundled one of the same name.
pub fn load_network_file(path: &Path) -> Result<NetworkSpec, NetError> {
    match std::fs::read_to_string(path) {
        Ok(text) => load_network(&text),
        Err(err) => {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            match bundled_config(name) {
                Some(text) if !path.exists() => load_network(text),
                _ => Err(NetError::Io {
                    path: path.display().to_string(),
                    message: err.to_string(),
                }),
            }
        }
    }
}

/// Plan of one entry plus its baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryReport {
    pub name: String,
    pub kind: &'static str,
    pub fused: bool,
    pub plan: MemPlan,
    pub footprint_bytes: usize,
    /// Separate buffers per tensor, depthwise in place.
    pub baseline_bytes: usize,
    /// Every live tensor in its own buffer.
    pub no_overlap_bytes: usize,
    pub reduction: f64,
    pub fits: bool,
    pub in_base_bytes: usize,
    pub out_base_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bottleneck {
    pub name: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkReport {
    pub network: String,
    pub memcap_bytes: usize,
    pub entries: Vec<EntryReport>,
    pub bottleneck: Bottleneck,
    pub baseline_bottleneck: Bottleneck,
    pub no_overlap_bottleneck: Bottleneck,
}

impl NetworkReport {
    /// `1 - bottleneck / baseline bottleneck`.
    pub fn bottleneck_reduction(&self) -> f64 {
        1.0 - self.bottleneck.bytes as f64 / self.baseline_bottleneck.bytes as f64
    }

    pub fn entry(&self, name: &str) -> Option<&EntryReport> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,footprint_bytes,baseline_bytes,reduction\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{:.4}",
                e.name, e.footprint_bytes, e.baseline_bytes, e.reduction
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "network {} (pool {} B)",
            self.network, self.memcap_bytes
        );
        let _ = writeln!(
            out,
            "{:<6} {:<9} {:>5} {:>7} {:>4} {:>10} {:>10} {:>10} {:>9} {:>4}",
            "name",
            "kind",
            "seg",
            "offset",
            "ws",
            "footprint",
            "baseline",
            "no-overlap",
            "reduction",
            "fits"
        );
        for e in &self.entries {
            let kind = if e.kind == "ib" && !e.fused {
                "ib/split"
            } else {
                e.kind
            };
            let _ = writeln!(
                out,
                "{:<6} {:<9} {:>5} {:>7} {:>4} {:>10} {:>10} {:>10} {:>8.1}% {:>4}",
                e.name,
                kind,
                e.plan.segment_size_bytes,
                e.plan.offset_segments,
                e.plan.workspace_segments,
                e.footprint_bytes,
                e.baseline_bytes,
                e.no_overlap_bytes,
                e.reduction * 100.0,
                if e.fits { "yes" } else { "NO" }
            );
        }
        let _ = writeln!(
            out,
            "bottleneck: segment plan {} {} B | in-place depthwise {} {} B | no overlap {} {} B | reduction {:.1}%",
            self.bottleneck.name,
            self.bottleneck.bytes,
            self.baseline_bottleneck.name,
            self.baseline_bottleneck.bytes,
            self.no_overlap_bottleneck.name,
            self.no_overlap_bottleneck.bytes,
            self.bottleneck_reduction() * 100.0
        );
        out
    }
}

/// Plan one entry with an explicit dtype.
pub fn plan_entry(entry: &NetEntry, dtype_bytes: usize) -> Result<MemPlan, NetError> {
    let seg = entry.segment_elems();
    let plan = match entry.op {
        NetOp::Module(m) if m.is_fusable() => min_offset_graph_with(&m, dtype_bytes, seg),
        NetOp::Module(m) => plan_module_unfused(&m, dtype_bytes),
        NetOp::Layer(l) => plan_layer_with(&l, dtype_bytes, seg),
    };
    plan.map_err(|source| NetError::Plan {
        entry: entry.name.clone(),
        source,
    })
}

fn no_overlap_bytes(op: &NetOp, dtype_bytes: usize) -> usize {
    match op {
        NetOp::Module(m) => m.no_overlap_bytes(dtype_bytes),
        NetOp::Layer(l) => (l.in_elems() + l.out_elems()) * dtype_bytes,
    }
}

fn baseline_bytes(op: &NetOp, dtype_bytes: usize) -> usize {
    match op {
        NetOp::Module(m) => m.baseline_bytes(dtype_bytes),
        NetOp::Layer(l) => baseline_footprint(l, dtype_bytes),
    }
}

fn max_by_bytes<'a>(items: impl Iterator<Item = (&'a str, usize)>) -> Bottleneck {
    let mut best = Bottleneck {
        name: String::new(),
        bytes: 0,
    };
    for (name, bytes) in items {
        if best.name.is_empty() || bytes > best.bytes {
            best = Bottleneck {
                name: name.to_string(),
                bytes,
            };
        }
    }
    best
}

/// Plan every entry, chaining each output base into the next input base.
pub fn plan_network(net: &NetworkSpec) -> Result<NetworkReport, NetError> {
    let cap = net.memcap_bytes as i64;
    let mut in_base = 0i64;
    let mut entries = Vec::with_capacity(net.entries.len());
    for e in &net.entries {
        let plan = plan_entry(e, net.dtype_bytes)?;
        let out_base =
            (in_base - plan.offset_segments * plan.segment_size_bytes as i64).rem_euclid(cap);
        let footprint_bytes = plan.footprint_bytes;
        let baseline = baseline_bytes(&e.op, net.dtype_bytes);
        entries.push(EntryReport {
            name: e.name.clone(),
            kind: e.op.kind(),
            fused: e.is_fused(),
            plan,
            footprint_bytes,
            baseline_bytes: baseline,
            no_overlap_bytes: no_overlap_bytes(&e.op, net.dtype_bytes),
            reduction: 1.0 - footprint_bytes as f64 / baseline as f64,
            fits: footprint_bytes <= net.memcap_bytes,
            in_base_bytes: in_base as usize,
            out_base_bytes: out_base as usize,
        });
        in_base = out_base;
    }
    Ok(NetworkReport {
        network: net.name.clone(),
        memcap_bytes: net.memcap_bytes,
        bottleneck: max_by_bytes(entries.iter().map(|e| (e.name.as_str(), e.footprint_bytes))),
        baseline_bottleneck: max_by_bytes(
            entries.iter().map(|e| (e.name.as_str(), e.baseline_bytes)),
        ),
        no_overlap_bottleneck: max_by_bytes(
            entries
                .iter()
                .map(|e| (e.name.as_str(), e.no_overlap_bytes)),
        ),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Image,
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// Each entry's own unscaled baseline.
    Baseline,
    Bytes(usize),
}

const IMAGE_CAP: usize = 4;
const CHANNEL_CAP: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub name: String,
    pub budget_bytes: usize,
    pub base_value: usize,
    /// Largest feasible H/W or C_in; 0 when nothing fits.
    pub best_value: usize,
    pub factor: f64,
    pub scaled_footprint_bytes: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: Axis,
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,axis,base,best,factor,budget_bytes,footprint_bytes\n");
        let axis = match self.axis {
            Axis::Image => "image",
            Axis::Channel => "channel",
        };
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{axis},{},{},{:.4},{},{}",
                e.name,
                e.base_value,
                e.best_value,
                e.factor,
                e.budget_bytes,
                e.scaled_footprint_bytes
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>6} {:>8} {:>10} {:>10}",
            "name", "base", "best", "factor", "budget", "footprint"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<6} {:>6} {:>6} {:>7.2}x {:>10} {:>10}",
                e.name,
                e.base_value,
                e.best_value,
                e.factor,
                e.budget_bytes,
                e.scaled_footprint_bytes
            );
            if let Some(w) = &e.warning {
                let _ = writeln!(out, "warning: {}: {w}", e.name);
            }
        }
        out
    }
}

fn round_scaled(x: usize, s: f64) -> usize {
    ((x as f64 * s).round() as usize).max(1)
}

/// Entry op with one axis set to `value`; `None` when the axis does not
/// apply to the op.
pub fn scale_op(op: &NetOp, axis: Axis, value: usize) -> Option<NetOp> {
    match (op, axis) {
        (NetOp::Module(m), Axis::Image) => Some(NetOp::Module(ModuleSpec { hw: value, ..*m })),
        (NetOp::Module(m), Axis::Channel) => {
            let s = value as f64 / m.c_in as f64;
            Some(NetOp::Module(ModuleSpec {
                c_in: value,
                c_mid: round_scaled(m.c_mid, s).max(value),
                c_out: round_scaled(m.c_out, s),
                ..*m
            }))
        }
        (NetOp::Layer(LayerSpec::Conv2D(c)), Axis::Image) => {
            let scaled = ConvSpec {
                h: value,
                w: value,
                ..*c
            };
            (scaled.padding == Padding::Same || value >= c.r)
                .then_some(NetOp::Layer(LayerSpec::Conv2D(scaled)))
        }
        (NetOp::Layer(LayerSpec::Depthwise(c)), Axis::Image) => {
            let scaled = ConvSpec {
                h: value,
                w: value,
                ..*c
            };
            (scaled.padding == Padding::Same || value >= c.r)
                .then_some(NetOp::Layer(LayerSpec::Depthwise(scaled)))
        }
        (NetOp::Layer(LayerSpec::Conv2D(c)), Axis::Channel) => {
            let s = value as f64 / c.c as f64;
            Some(NetOp::Layer(LayerSpec::Conv2D(ConvSpec {
                c: value,
                k: round_scaled(c.k, s),
                ..*c
            })))
        }
        (NetOp::Layer(LayerSpec::Depthwise(c)), Axis::Channel) => {
            Some(NetOp::Layer(LayerSpec::Depthwise(ConvSpec {
                c: value,
                k: value,
                ..*c
            })))
        }
        _ => None,
    }
}

fn axis_value(op: &NetOp, axis: Axis) -> Option<usize> {
    match (op, axis) {
        (NetOp::Module(m), Axis::Image) => Some(m.hw),
        (NetOp::Module(m), Axis::Channel) => Some(m.c_in),
        (NetOp::Layer(LayerSpec::Conv2D(c) | LayerSpec::Depthwise(c)), Axis::Image) => Some(c.h),
        (NetOp::Layer(LayerSpec::Conv2D(c) | LayerSpec::Depthwise(c)), Axis::Channel) => Some(c.c),
        _ => None,
    }
}

/// Footprint of `op` planned with its default segment size.
pub fn scaled_footprint(op: &NetOp, dtype_bytes: usize) -> Result<usize, PlanError> {
    let entry = NetEntry {
        name: String::new(),
        gap_before: false,
        segment_elems: None,
        op: *op,
    };
    plan_entry(&entry, dtype_bytes)
        .map(|p| p.footprint_bytes)
        .map_err(|e| match e {
            NetError::Plan { source, .. } => source,
            other => PlanError::InvalidSpec(other.to_string()),
        })
}

/// Largest integer H/W (or C_in) per entry whose segment-plan footprint fits
/// the budget. Scanning stops at the first size that does not fit.
pub fn sweep_headroom(
    net: &NetworkSpec,
    budget: Budget,
    axis: Axis,
) -> Result<SweepReport, NetError> {
    let mut entries = Vec::new();
    for e in &net.entries {
        let Some(base) = axis_value(&e.op, axis) else {
            entries.push(SweepEntry {
                name: e.name.clone(),
                budget_bytes: 0,
                base_value: 0,
                best_value: 0,
                factor: 0.0,
                scaled_footprint_bytes: 0,
                warning: Some(format!(
                    "{} entries cannot be scaled on this axis",
                    e.op.kind()
                )),
            });
            continue;
        };
        let budget_bytes = match budget {
            Budget::Baseline => baseline_bytes(&e.op, net.dtype_bytes),
            Budget::Bytes(b) => b,
        };
        let cap = base
            * match axis {
                Axis::Image => IMAGE_CAP,
                Axis::Channel => CHANNEL_CAP,
            };
        let mut best = 0;
        let mut best_fp = 0;
        for v in 1..=cap {
            let Some(op) = scale_op(&e.op, axis, v) else {
                continue;
            };
            let fp = scaled_footprint(&op, net.dtype_bytes).map_err(|source| NetError::Plan {
                entry: e.name.clone(),
                source,
            })?;
            if fp > budget_bytes {
                break;
            }
            best = v;
            best_fp = fp;
        }
        let factor = best as f64 / base as f64;
        let warning = if best == 0 {
            Some("budget is below the smallest scaled footprint".to_string())
        } else if best < base {
            Some(format!(
                "budget is below the unscaled footprint; factor {factor:.2} < 1"
            ))
        } else if best == cap {
            Some(format!("scan stopped at the {cap} cap"))
        } else {
            None
        };
        entries.push(SweepEntry {
            name: e.name.clone(),
            budget_bytes,
            base_value: base,
            best_value: best,
            factor,
            scaled_footprint_bytes: best_fp,
            warning,
        });
    }
    Ok(SweepReport { axis, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_networks_load() {
        let vww = load_network(VWW_CONFIG).unwrap();
        assert_eq!(vww.entries.len(), 8);
        assert_eq!(vww.entries[0].name, "S1");
        let inet = load_network(IMAGENET_320KB_CONFIG).unwrap();
        assert_eq!(inet.entries.len(), 17);
        assert_eq!(inet.input_shape(), vec![176, 176, 3]);
        assert!(bundled_config("mcunet-vww").is_some());
        assert!(bundled_config("nope.json").is_none());
    }

    #[test]
    fn chain_mismatch_names_both_entries() {
        let text = r#"{"name":"x","memcap_bytes":1024,"entries":[
            {"name":"a","kind":"ib","hw":8,"c_in":4,"c_mid":8,"c_out":4,"rs":3,"strides":[1,1,1]},
            {"name":"b","kind":"ib","hw":6,"c_in":4,"c_mid":8,"c_out":4,"rs":3,"strides":[1,1,1]}]}"#;
        match load_network(text) {
            Err(NetError::Chain { prev, next, .. }) => {
                assert_eq!((prev.as_str(), next.as_str()), ("a", "b"))
            }
            other => panic!("{other:?}"),
        }
        let gapped = text.replace(r#""name":"b","#, r#""name":"b","gap_before":true,"#);
        assert!(load_network(&gapped).is_ok());
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = load_network("{\n  \"name\": \"x\",\n  oops\n}").unwrap_err();
        assert!(matches!(err, NetError::Parse { line: 3, .. }), "{err}");
        assert!(matches!(
            load_network(r#"{"name":"x","memcap_bytes":1,"entries":[]}"#),
            Err(NetError::Empty)
        ));
    }

    #[test]
    fn single_fc_network() {
        let text = r#"{"name":"fc","memcap_bytes":1024,"entries":[
            {"name":"fc1","kind":"fc","m":2,"k":3,"n":2,"segment_elems":1}]}"#;
        let report = plan_network(&load_network(text).unwrap()).unwrap();
        let e = &report.entries[0];
        assert_eq!((e.footprint_bytes, e.baseline_bytes), (7, 10));
        assert!(report
            .to_csv()
            .starts_with("name,footprint_bytes,baseline_bytes,reduction\nfc1,7,10,0.3000\n"));
    }

    #[test]
    fn vww_fits_with_first_module_as_bottleneck() {
        let report = plan_network(&load_network(VWW_CONFIG).unwrap()).unwrap();
        assert_eq!(report.entries.len(), 8);
        assert!(report.entries.iter().all(|e| e.fits));
        assert_eq!(report.bottleneck.name, "S1");
        for e in &report.entries {
            assert!(
                e.footprint_bytes <= e.baseline_bytes && e.baseline_bytes <= e.no_overlap_bytes,
                "{}",
                e.name
            );
            assert!((0.0..1.0).contains(&e.reduction));
        }
    }

    #[test]
    fn bases_chain_modulo_pool() {
        let report = plan_network(&load_network(IMAGENET_320KB_CONFIG).unwrap()).unwrap();
        for pair in report.entries.windows(2) {
            assert_eq!(pair[0].out_base_bytes, pair[1].in_base_bytes);
            assert!(pair[1].in_base_bytes < report.memcap_bytes);
        }
        assert!(!report.entry("B16").unwrap().fused);
    }

    #[test]
    fn sweep_reports_small_budget_with_warning() {
        let net = load_network(
            r#"{"name":"x","memcap_bytes":1000000,"entries":[
            {"name":"a","kind":"ib","hw":8,"c_in":4,"c_mid":8,"c_out":4,"rs":3,"strides":[1,1,1]}]}"#,
        )
        .unwrap();
        let fp = plan_network(&net).unwrap().entries[0].footprint_bytes;
        let r = sweep_headroom(&net, Budget::Bytes(fp - 1), Axis::Image).unwrap();
        assert!(r.entries[0].factor < 1.0);
        assert!(r.entries[0].warning.is_some());
        let r = sweep_headroom(&net, Budget::Baseline, Axis::Image).unwrap();
        assert!(r.entries[0].factor >= 1.0);
    }
}
