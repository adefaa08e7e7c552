//! Fused inverted bottleneck: pointwise expand (A -> B), depthwise (B -> C),
//! pointwise project (C -> D) and the optional residual add (A + D -> E).
//!
//! The fused kernel walks the output pixels of E. For each pixel it expands,
//! filters and projects one mid-channel slice at a time through a workspace
//! of `R·S` B segments, one C segment and one D segment, so only A and E ever
//! live in the pool as whole tensors.

use serde::{Deserialize, Serialize};

use crate::affine::{AccessFunction, IterationDomain, Linearization};

use super::{
    baseline_footprint, invalid, min_offset, plan_layer, window_constraints, AccessModel, ConvSpec,
    LayerSpec, MemPlan, Padding, PlanError, SegmentRule, Statement, TensorAccess,
};

/// One row of a module table: `H/W, C_in, C_mid, C_out, R/S, strides`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub hw: usize,
    pub c_in: usize,
    pub c_mid: usize,
    pub c_out: usize,
    pub rs: usize,
    /// Strides of expand, depthwise and project.
    pub strides: [usize; 3],
}

impl ModuleSpec {
    pub fn new(
        hw: usize,
        c_in: usize,
        c_mid: usize,
        c_out: usize,
        rs: usize,
        strides: [usize; 3],
    ) -> Self {
        Self {
            hw,
            c_in,
            c_mid,
            c_out,
            rs,
            strides,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if [self.hw, self.c_in, self.c_mid, self.c_out, self.rs].contains(&0) {
            return Err(invalid("all dimensions must be at least 1"));
        }
        if self.c_mid < self.c_in {
            return Err(invalid(format!(
                "C_mid {} is smaller than C_in {}",
                self.c_mid, self.c_in
            )));
        }
        if self.strides.iter().any(|s| !matches!(s, 1 | 2)) {
            return Err(invalid(format!(
                "strides {:?} not in {{1, 2}}",
                self.strides
            )));
        }
        if self.rs.is_multiple_of(2) {
            return Err(invalid(format!("depthwise kernel {} must be odd", self.rs)));
        }
        Ok(())
    }

    pub fn has_residual(&self) -> bool {
        self.strides == [1, 1, 1] && self.c_in == self.c_out
    }

    /// Whether the depthwise window fits the image it slides over.
    pub fn is_fusable(&self) -> bool {
        self.rs <= self.hw.div_ceil(self.strides[0])
    }

    pub fn out_hw(&self) -> usize {
        self.strides.iter().fold(self.hw, |h, &s| h.div_ceil(s))
    }

    /// The three convolutions, plus the residual add when present.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let [s1, s2, s3] = self.strides;
        let h1 = self.hw.div_ceil(s1);
        let h2 = h1.div_ceil(s2);
        let mut expand = ConvSpec::pointwise(self.hw, self.hw, self.c_in, self.c_mid);
        expand.stride = s1;
        let depthwise = ConvSpec {
            batch: 1,
            h: h1,
            w: h1,
            c: self.c_mid,
            k: self.c_mid,
            r: self.rs,
            s: self.rs,
            stride: s2,
            padding: Padding::Same,
        };
        let mut project = ConvSpec::pointwise(h2, h2, self.c_mid, self.c_out);
        project.stride = s3;
        let mut layers = vec![
            LayerSpec::Conv2D(expand),
            LayerSpec::Depthwise(depthwise),
            LayerSpec::Conv2D(project),
        ];
        if self.has_residual() {
            layers.push(LayerSpec::Add {
                batch: 1,
                h: self.hw,
                w: self.hw,
                c: self.c_out,
            });
        }
        layers
    }

    /// Element counts of A, B, C, D.
    pub fn tensor_elems(&self) -> [usize; 4] {
        let g = IbGeometry::new(self, 1);
        [
            g.h * g.h * self.c_in,
            g.h1 * g.h1 * self.c_mid,
            g.h2 * g.h2 * self.c_mid,
            g.h3 * g.h3 * self.c_out,
        ]
    }

    /// Tensor-level baseline with an in-place depthwise layer, in bytes.
    pub fn baseline_bytes(&self, dtype_bytes: usize) -> usize {
        let [a, b, c, d] = self.tensor_elems();
        let depthwise = if self.strides[1] == 1 {
            b.max(c)
        } else {
            b + c
        };
        let add = if self.has_residual() { a + d } else { 0 };
        (a + b).max(depthwise).max(c + d).max(add) * dtype_bytes
    }

    /// Every tensor in its own buffer for as long as it is live.
    pub fn no_overlap_bytes(&self, dtype_bytes: usize) -> usize {
        let [a, b, c, d] = self.tensor_elems();
        let add = if self.has_residual() { a + 2 * d } else { 0 };
        (a + b).max(b + c).max(c + d).max(add) * dtype_bytes
    }
}

impl std::fmt::Display for ModuleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [s1, s2, s3] = self.strides;
        write!(
            f,
            "H/W{} C{}->{}->{} R{} s({s1},{s2},{s3})",
            self.hw, self.c_in, self.c_mid, self.c_out, self.rs
        )
    }
}

/// Spatial extents and segment counts of a fused module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IbGeometry {
    pub seg: usize,
    /// A extent
    pub h: usize,
    /// B extent (after expand stride)
    pub h1: usize,
    /// C extent (after depthwise stride)
    pub h2: usize,
    /// D and E extent
    pub h3: usize,
    pub pad: usize,
    pub in_segs: usize,
    pub mid_segs: usize,
    pub out_segs: usize,
    pub residual: bool,
}

impl IbGeometry {
    pub fn new(module: &ModuleSpec, seg: usize) -> Self {
        let [s1, s2, s3] = module.strides;
        let h1 = module.hw.div_ceil(s1);
        let h2 = h1.div_ceil(s2);
        Self {
            seg,
            h: module.hw,
            h1,
            h2,
            h3: h2.div_ceil(s3),
            pad: (module.rs - 1) / 2,
            in_segs: module.c_in.div_ceil(seg),
            mid_segs: module.c_mid.div_ceil(seg),
            out_segs: module.c_out.div_ceil(seg),
            residual: module.has_residual(),
        }
    }

    pub fn a_segments(&self) -> usize {
        self.h * self.h * self.in_segs
    }

    pub fn e_segments(&self) -> usize {
        self.h3 * self.h3 * self.out_segs
    }
}

/// Access model of the fused kernel over dims `(p, q, t, m, r, s, c)`.
///
/// `t = 0` is the window phase of pixel `(p, q)`: for each mid slice `m` and
/// in-bounds tap `(r, s)`, all `c` input segments are read. It claims the
/// pixel's first output segment. `t = 1` writes the output segments `o`
/// (stored in dim 3), reading the residual segment first.
pub fn module_model(module: &ModuleSpec, seg: usize) -> Result<AccessModel, PlanError> {
    module.validate()?;
    let g = IbGeometry::new(module, seg);
    let [s1, s2, s3] = module.strides.map(|s| s as i64);
    let (h, h1, h3) = (g.h as i64, g.h1 as i64, g.h3 as i64);
    let (pad, rs) = (g.pad as i64, module.rs as i64);
    let (cs, ms, os) = (g.in_segs as i64, g.mid_segs as i64, g.out_segs as i64);

    let a_lin = Linearization::row_major(&[h, h, cs], 0)?;
    let e_lin = Linearization::row_major(&[h3, h3, os], 0)?;

    let mut window = IterationDomain::rectangular(&[
        (0, h3),
        (0, h3),
        (0, 1),
        (0, ms),
        (0, rs),
        (0, rs),
        (0, cs),
    ])?;
    for k in window_constraints(7, 0, 4, s3 * s2, pad, h1)
        .into_iter()
        .chain(window_constraints(7, 1, 5, s3 * s2, pad, h1))
    {
        window = window.with_constraint(k)?;
    }
    let step = s1 * s2 * s3;
    let tap_read = AccessFunction::new(
        vec![
            vec![step, 0, 0, 0, s1, 0, 0],
            vec![0, step, 0, 0, 0, s1, 0],
            vec![0, 0, 0, 0, 0, 0, 1],
        ],
        vec![-pad * s1, -pad * s1, 0],
    )?;
    let first_out = AccessFunction::new(
        vec![
            vec![1, 0, 0, 0, 0, 0, 0],
            vec![0, 1, 0, 0, 0, 0, 0],
            vec![0; 7],
        ],
        vec![0, 0, 0],
    )?;

    let store =
        IterationDomain::rectangular(&[(0, h3), (0, h3), (1, 2), (0, os), (0, 1), (0, 1), (0, 1)])?;
    let pixel_seg = AccessFunction::select(7, &[0, 1, 3]);
    let residual_reads = if g.residual {
        vec![TensorAccess::new(pixel_seg.clone(), a_lin.clone())]
    } else {
        Vec::new()
    };

    Ok(AccessModel {
        statements: vec![
            Statement {
                domain: window,
                reads: vec![TensorAccess::new(tap_read, a_lin)],
                writes: vec![TensorAccess::new(first_out, e_lin.clone())],
            },
            Statement {
                domain: store,
                reads: residual_reads,
                writes: vec![TensorAccess::new(pixel_seg, e_lin)],
            },
        ],
    })
}

/// Plan of the fused module for int8 data and the default segment size.
pub fn min_offset_graph(module: &ModuleSpec) -> Result<MemPlan, PlanError> {
    min_offset_graph_with(module, 1, module.segment_elems())
}

pub fn min_offset_graph_with(
    module: &ModuleSpec,
    dtype_bytes: usize,
    segment_elems: usize,
) -> Result<MemPlan, PlanError> {
    module.validate()?;
    if segment_elems == 0 {
        return Err(invalid("segment size must be at least one element"));
    }
    if !module.is_fusable() {
        return Err(PlanError::Unsupported(format!(
            "{}x{} depthwise window exceeds the {}x{} image; module cannot be fused",
            module.rs,
            module.rs,
            module.hw.div_ceil(module.strides[0]),
            module.hw.div_ceil(module.strides[0])
        )));
    }
    let g = IbGeometry::new(module, segment_elems);
    let offset = min_offset(&module_model(module, segment_elems)?)?;
    Ok(MemPlan::from_parts(
        segment_elems,
        dtype_bytes,
        offset,
        g.a_segments(),
        g.e_segments(),
        module.rs * module.rs + 2,
        module.baseline_bytes(dtype_bytes),
    ))
}

/// Layer-by-layer plan for modules that cannot be fused. With a residual the
/// input stays resident next to every layer until the add.
pub fn plan_module_unfused(module: &ModuleSpec, dtype_bytes: usize) -> Result<MemPlan, PlanError> {
    module.validate()?;
    let layers = module.layers();
    let a_bytes = module.tensor_elems()[0] * dtype_bytes;
    let mut peak = 0usize;
    for (i, layer) in layers.iter().enumerate() {
        let bytes = match layer {
            LayerSpec::Add { .. } => plan_layer(layer, dtype_bytes)?.footprint_bytes,
            _ if module.has_residual() && i == 0 => baseline_footprint(layer, dtype_bytes),
            _ if module.has_residual() => plan_layer(layer, dtype_bytes)?.footprint_bytes + a_bytes,
            _ => plan_layer(layer, dtype_bytes)?.footprint_bytes,
        };
        peak = peak.max(bytes);
    }
    let seg = module.segment_elems();
    let g = IbGeometry::new(module, seg);
    let seg_bytes = seg * dtype_bytes;
    let footprint_segments = peak.div_ceil(seg_bytes);
    let span = g.a_segments().max(g.e_segments());
    Ok(MemPlan {
        segment_size_bytes: seg_bytes,
        segment_elems: seg,
        offset_segments: 0,
        workspace_segments: footprint_segments.saturating_sub(span),
        in_segments: g.a_segments(),
        out_segments: g.e_segments(),
        footprint_segments,
        footprint_bytes: footprint_segments * seg_bytes,
        baseline_bytes: module.baseline_bytes(dtype_bytes),
    })
}
