//! Minimal input/output offset planning for single layers and fused inverted
//! bottleneck modules.
//!
//! All planning happens in segment units. A tensor occupies a row-major grid
//! of segments; the channel (or row) axis is split into `ceil(C / seg)`
//! segments and the tail segment is zero padded.

mod ib;
mod model;

use thiserror::Error;

use crate::affine::{
    AccessFunction, AffineConstraint, AffineError, IterationDomain, Linearization,
};

pub use ib::{
    min_offset_graph, min_offset_graph_with, module_model, plan_module_unfused, IbGeometry,
    ModuleSpec,
};
pub use model::{
    min_offset, min_offset_by_liveness, min_offset_pairwise, AccessModel, Statement, TensorAccess,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error(transparent)]
    Affine(#[from] AffineError),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> PlanError {
    PlanError::InvalidSpec(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    Valid,
    /// Pad `(R - 1) / 2` on each side; output extent is `ceil(H / stride)`.
    Same,
}

/// NHWC convolution shape. `k` is the number of output channels; for
/// depthwise layers it must equal `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub r: usize,
    pub s: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn pointwise(h: usize, w: usize, c: usize, k: usize) -> Self {
        Self {
            batch: 1,
            h,
            w,
            c,
            k,
            r: 1,
            s: 1,
            stride: 1,
            padding: Padding::Valid,
        }
    }

    pub fn pad_h(&self) -> usize {
        match self.padding {
            Padding::Valid => 0,
            Padding::Same => (self.r - 1) / 2,
        }
    }

    pub fn pad_w(&self) -> usize {
        match self.padding {
            Padding::Valid => 0,
            Padding::Same => (self.s - 1) / 2,
        }
    }

    pub fn out_h(&self) -> usize {
        match self.padding {
            Padding::Valid => (self.h - self.r) / self.stride + 1,
            Padding::Same => self.h.div_ceil(self.stride),
        }
    }

    pub fn out_w(&self) -> usize {
        match self.padding {
            Padding::Valid => (self.w - self.s) / self.stride + 1,
            Padding::Same => self.w.div_ceil(self.stride),
        }
    }

    fn validate(&self, depthwise: bool) -> Result<(), PlanError> {
        let dims = [self.batch, self.h, self.w, self.c, self.k, self.r, self.s];
        if dims.contains(&0) {
            return Err(invalid("all dimensions must be at least 1"));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(invalid(format!("stride {} not in {{1, 2}}", self.stride)));
        }
        if depthwise && self.c != self.k {
            return Err(invalid(
                "depthwise layers need equal input and output channels",
            ));
        }
        match self.padding {
            Padding::Valid if self.r > self.h || self.s > self.w => {
                Err(invalid("valid padding needs the window to fit the image"))
            }
            Padding::Same if self.r.is_multiple_of(2) || self.s.is_multiple_of(2) => {
                Err(invalid("same padding needs an odd window"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    FullyConnected {
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2D(ConvSpec),
    Depthwise(ConvSpec),
    /// Elementwise add of two `[batch, h, w, c]` tensors, in place over the
    /// first operand.
    Add {
        batch: usize,
        h: usize,
        w: usize,
        c: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), PlanError> {
        match self {
            LayerSpec::FullyConnected { m, k, n } => {
                if [*m, *k, *n].contains(&0) {
                    Err(invalid("all dimensions must be at least 1"))
                } else {
                    Ok(())
                }
            }
            LayerSpec::Conv2D(c) => c.validate(false),
            LayerSpec::Depthwise(c) => c.validate(true),
            LayerSpec::Add { batch, h, w, c } => {
                if [*batch, *h, *w, *c].contains(&0) {
                    Err(invalid("all dimensions must be at least 1"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn in_elems(&self) -> usize {
        match *self {
            LayerSpec::FullyConnected { m, k, .. } => m * k,
            LayerSpec::Conv2D(c) | LayerSpec::Depthwise(c) => c.batch * c.h * c.w * c.c,
            LayerSpec::Add { batch, h, w, c } => batch * h * w * c,
        }
    }

    pub fn out_elems(&self) -> usize {
        match *self {
            LayerSpec::FullyConnected { m, n, .. } => m * n,
            LayerSpec::Conv2D(c) | LayerSpec::Depthwise(c) => c.batch * c.out_h() * c.out_w() * c.k,
            LayerSpec::Add { .. } => self.in_elems(),
        }
    }
}

/// Rule for picking the segment size of a layer or module.
pub trait SegmentRule {
    /// Segment size in elements.
    fn segment_elems(&self) -> usize;
}

impl SegmentRule for LayerSpec {
    fn segment_elems(&self) -> usize {
        match *self {
            LayerSpec::FullyConnected { k, n, .. } => k.min(n),
            LayerSpec::Conv2D(c) | LayerSpec::Depthwise(c) => c.c.min(c.k),
            LayerSpec::Add { c, .. } => c,
        }
    }
}

impl SegmentRule for ModuleSpec {
    fn segment_elems(&self) -> usize {
        self.c_in.min(self.c_out)
    }
}

pub fn select_segment_size<S: SegmentRule + ?Sized>(spec: &S, dtype_bytes: usize) -> usize {
    spec.segment_elems() * dtype_bytes
}

/// Outcome of planning one layer or module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemPlan {
    pub segment_size_bytes: usize,
    pub segment_elems: usize,
    pub offset_segments: i64,
    pub workspace_segments: usize,
    pub in_segments: usize,
    pub out_segments: usize,
    pub footprint_segments: usize,
    pub footprint_bytes: usize,
    pub baseline_bytes: usize,
}

impl MemPlan {
    /// Assemble a plan whose footprint is the span from the output base to
    /// the end of the input (or output) plus workspace.
    pub fn from_parts(
        segment_elems: usize,
        dtype_bytes: usize,
        offset_segments: i64,
        in_segments: usize,
        out_segments: usize,
        workspace_segments: usize,
        baseline_bytes: usize,
    ) -> Self {
        let span = (in_segments as i64 + offset_segments).max(out_segments as i64) as usize;
        let footprint_segments = span + workspace_segments;
        let segment_size_bytes = segment_elems * dtype_bytes;
        Self {
            segment_size_bytes,
            segment_elems,
            offset_segments,
            workspace_segments,
            in_segments,
            out_segments,
            footprint_segments,
            footprint_bytes: footprint_segments * segment_size_bytes,
            baseline_bytes,
        }
    }

    /// `1 - footprint / baseline`.
    pub fn reduction(&self) -> f64 {
        if self.baseline_bytes == 0 {
            0.0
        } else {
            1.0 - self.footprint_bytes as f64 / self.baseline_bytes as f64
        }
    }

    /// Segment index where the workspace starts, relative to the output base.
    pub fn workspace_offset(&self) -> i64 {
        self.footprint_segments as i64 - self.workspace_segments as i64
    }
}

/// `max(MN, MK) + min(N, K) - 1`, in segments.
pub fn gemm_min_footprint(m: u64, n: u64, k: u64) -> u64 {
    (m * n).max(m * k) + n.min(k) - 1
}

/// Single-statement offset for one read and one write access.
pub fn min_offset_single(
    input: (&AccessFunction, &Linearization),
    output: (&AccessFunction, &Linearization),
    domain: &IterationDomain,
) -> Result<i64, PlanError> {
    let model = AccessModel::single(
        domain.clone(),
        TensorAccess::new(input.0.clone(), input.1.clone()),
        TensorAccess::new(output.0.clone(), output.1.clone()),
    );
    min_offset(&model)
}

/// Segment grids of a layer: input shape, output shape (in segments).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerGrids {
    pub input: Vec<i64>,
    pub output: Vec<i64>,
}

impl LayerGrids {
    pub fn in_segments(&self) -> usize {
        self.input.iter().product::<i64>() as usize
    }

    pub fn out_segments(&self) -> usize {
        self.output.iter().product::<i64>() as usize
    }
}

pub fn layer_grids(spec: &LayerSpec, seg: usize) -> LayerGrids {
    let segs = |c: usize| c.div_ceil(seg) as i64;
    match *spec {
        LayerSpec::FullyConnected { m, k, n } => LayerGrids {
            input: vec![m as i64, segs(k)],
            output: vec![m as i64, segs(n)],
        },
        LayerSpec::Conv2D(c) | LayerSpec::Depthwise(c) => LayerGrids {
            input: vec![c.batch as i64, c.h as i64, c.w as i64, segs(c.c)],
            output: vec![
                c.batch as i64,
                c.out_h() as i64,
                c.out_w() as i64,
                segs(c.k),
            ],
        },
        LayerSpec::Add { batch, h, w, c } => {
            let g = vec![batch as i64, h as i64, w as i64, segs(c)];
            LayerGrids {
                input: g.clone(),
                output: g,
            }
        }
    }
}

/// Window bounds `0 <= coef·p + tap - pad <= extent - 1` as two constraints.
fn window_constraints(
    rank: usize,
    out_dim: usize,
    tap_dim: usize,
    stride: i64,
    pad: i64,
    extent: i64,
) -> [AffineConstraint; 2] {
    let mut lo = vec![0; rank];
    lo[out_dim] = stride;
    lo[tap_dim] = 1;
    let hi: Vec<i64> = lo.iter().map(|x| -x).collect();
    [
        AffineConstraint::new(lo, -pad),
        AffineConstraint::new(hi, extent - 1 + pad),
    ]
}

/// Access model of a single layer, in the loop order of its segment kernel.
///
/// Each instance claims the output segment it accumulates into, so the solver
/// sees the output write as soon as the reduction for it starts.
pub fn layer_model(spec: &LayerSpec, seg: usize) -> Result<AccessModel, PlanError> {
    spec.validate()?;
    let grids = layer_grids(spec, seg);
    let in_lin = Linearization::row_major(&grids.input, 0)?;
    let out_lin = Linearization::row_major(&grids.output, 0)?;
    let model = match *spec {
        LayerSpec::FullyConnected { .. } => {
            // (m, n, k)
            let domain =
                IterationDomain::from_extents(&[grids.input[0], grids.output[1], grids.input[1]])?;
            AccessModel::single(
                domain,
                TensorAccess::new(AccessFunction::select(3, &[0, 2]), in_lin),
                TensorAccess::new(AccessFunction::select(3, &[0, 1]), out_lin),
            )
        }
        LayerSpec::Conv2D(c) => {
            // (b, p, q, o, r, s, c)
            let (st, ph, pw) = (c.stride as i64, c.pad_h() as i64, c.pad_w() as i64);
            let mut domain = IterationDomain::from_extents(&[
                grids.output[0],
                grids.output[1],
                grids.output[2],
                grids.output[3],
                c.r as i64,
                c.s as i64,
                grids.input[3],
            ])?;
            if c.padding == Padding::Same {
                for k in window_constraints(7, 1, 4, st, ph, c.h as i64)
                    .into_iter()
                    .chain(window_constraints(7, 2, 5, st, pw, c.w as i64))
                {
                    domain = domain.with_constraint(k)?;
                }
            }
            let read = AccessFunction::new(
                vec![
                    vec![1, 0, 0, 0, 0, 0, 0],
                    vec![0, st, 0, 0, 1, 0, 0],
                    vec![0, 0, st, 0, 0, 1, 0],
                    vec![0, 0, 0, 0, 0, 0, 1],
                ],
                vec![0, -ph, -pw, 0],
            )?;
            AccessModel::single(
                domain,
                TensorAccess::new(read, in_lin),
                TensorAccess::new(AccessFunction::select(7, &[0, 1, 2, 3]), out_lin),
            )
        }
        LayerSpec::Depthwise(c) => {
            // (b, p, q, c, r, s)
            let (st, ph, pw) = (c.stride as i64, c.pad_h() as i64, c.pad_w() as i64);
            let mut domain = IterationDomain::from_extents(&[
                grids.output[0],
                grids.output[1],
                grids.output[2],
                grids.output[3],
                c.r as i64,
                c.s as i64,
            ])?;
            if c.padding == Padding::Same {
                for k in window_constraints(6, 1, 4, st, ph, c.h as i64)
                    .into_iter()
                    .chain(window_constraints(6, 2, 5, st, pw, c.w as i64))
                {
                    domain = domain.with_constraint(k)?;
                }
            }
            let read = AccessFunction::new(
                vec![
                    vec![1, 0, 0, 0, 0, 0],
                    vec![0, st, 0, 0, 1, 0],
                    vec![0, 0, st, 0, 0, 1],
                    vec![0, 0, 0, 1, 0, 0],
                ],
                vec![0, -ph, -pw, 0],
            )?;
            AccessModel::single(
                domain,
                TensorAccess::new(read, in_lin),
                TensorAccess::new(AccessFunction::select(6, &[0, 1, 2, 3]), out_lin),
            )
        }
        LayerSpec::Add { .. } => {
            let domain = IterationDomain::from_extents(&grids.input)?;
            let all = AccessFunction::select(4, &[0, 1, 2, 3]);
            AccessModel::single(
                domain,
                TensorAccess::new(all.clone(), in_lin),
                TensorAccess::new(all, out_lin),
            )
        }
    };
    Ok(model)
}

/// Tensor-level baseline in bytes. Input and output get separate buffers,
/// except depthwise and elementwise layers, which run in place.
pub fn baseline_footprint(spec: &LayerSpec, dtype_bytes: usize) -> usize {
    let (i, o) = (spec.in_elems(), spec.out_elems());
    let elems = match spec {
        LayerSpec::FullyConnected { .. } | LayerSpec::Conv2D(_) => i + o,
        LayerSpec::Depthwise(_) => i.max(o),
        // both operands are resident; the sum overwrites the first
        LayerSpec::Add { .. } => 2 * i,
    };
    elems * dtype_bytes
}

/// Plan a single layer with the default segment size.
pub fn plan_layer(spec: &LayerSpec, dtype_bytes: usize) -> Result<MemPlan, PlanError> {
    plan_layer_with(spec, dtype_bytes, spec.segment_elems())
}

/// Plan a single layer with an explicit segment size in elements.
pub fn plan_layer_with(
    spec: &LayerSpec,
    dtype_bytes: usize,
    segment_elems: usize,
) -> Result<MemPlan, PlanError> {
    if segment_elems == 0 {
        return Err(invalid("segment size must be at least one element"));
    }
    let model = layer_model(spec, segment_elems)?;
    let grids = layer_grids(spec, segment_elems);
    let mut offset = min_offset(&model)?;
    let mut workspace = 0;
    if let LayerSpec::Add { .. } = spec {
        // second operand sits right after the first
        offset = 0;
        workspace = grids.in_segments();
    }
    Ok(MemPlan::from_parts(
        segment_elems,
        dtype_bytes,
        offset,
        grids.in_segments(),
        grids.out_segments(),
        workspace,
        baseline_footprint(spec, dtype_bytes),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fc(m: usize, k: usize, n: usize) -> LayerSpec {
        LayerSpec::FullyConnected { m, k, n }
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(gemm_min_footprint(2, 2, 3), 7);
        assert_eq!(gemm_min_footprint(1, 1, 1), 1);
    }

    #[test]
    fn motivating_fc_in_segment_units() {
        let plan = plan_layer_with(&fc(2, 3, 2), 1, 1).unwrap();
        assert_eq!(plan.offset_segments, 1);
        assert_eq!(plan.footprint_segments, 7);
        assert_eq!(plan.baseline_bytes, 10);
    }

    #[test]
    fn motivating_fc_segment_size() {
        assert_eq!(select_segment_size(&fc(2, 3, 2), 1), 2);
        let conv = LayerSpec::Conv2D(ConvSpec::pointwise(4, 4, 16, 16));
        assert_eq!(select_segment_size(&conv, 1), 16);
    }

    #[test]
    fn pointwise_baseline() {
        let conv = LayerSpec::Conv2D(ConvSpec::pointwise(80, 80, 16, 16));
        assert_eq!(baseline_footprint(&conv, 1), 204800);
        let plan = plan_layer(&conv, 1).unwrap();
        assert_eq!(plan.offset_segments, 0);
        assert_eq!(plan.footprint_bytes, 102400);
    }

    #[test]
    fn depthwise_baseline_is_in_place() {
        let dw = LayerSpec::Depthwise(ConvSpec {
            batch: 1,
            h: 10,
            w: 10,
            c: 8,
            k: 8,
            r: 3,
            s: 3,
            stride: 1,
            padding: Padding::Same,
        });
        assert_eq!(baseline_footprint(&dw, 1), 800);
    }

    #[test]
    fn stride_two_depthwise_overlaps_fully() {
        let dw = LayerSpec::Depthwise(ConvSpec {
            batch: 1,
            h: 8,
            w: 8,
            c: 4,
            k: 4,
            r: 3,
            s: 3,
            stride: 2,
            padding: Padding::Same,
        });
        let plan = plan_layer(&dw, 1).unwrap();
        assert_eq!(plan.offset_segments, 0);
        assert_eq!(plan.footprint_segments, plan.in_segments);
    }

    #[test]
    fn stride_one_depthwise_needs_a_row_of_slack() {
        let spec = ConvSpec {
            batch: 1,
            h: 5,
            w: 5,
            c: 4,
            k: 4,
            r: 3,
            s: 3,
            stride: 1,
            padding: Padding::Same,
        };
        let plan = plan_layer(&LayerSpec::Depthwise(spec), 1).unwrap();
        assert_eq!(plan.offset_segments, 6);
        let model = layer_model(&LayerSpec::Depthwise(spec), 4).unwrap();
        assert_eq!(min_offset_pairwise(&model).unwrap(), 6);
    }

    #[test]
    fn full_window_conv_is_one_output_pixel() {
        let spec = LayerSpec::Conv2D(ConvSpec {
            batch: 1,
            h: 3,
            w: 3,
            c: 2,
            k: 2,
            r: 3,
            s: 3,
            stride: 1,
            padding: Padding::Valid,
        });
        let plan = plan_layer(&spec, 1).unwrap();
        assert_eq!(plan.out_segments, 1);
        assert_eq!(plan.offset_segments, 0);
        assert_eq!(plan.footprint_segments, 9);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(plan_layer(&fc(0, 1, 1), 1).is_err());
        let mut c = ConvSpec::pointwise(4, 4, 2, 2);
        c.stride = 3;
        assert!(plan_layer(&LayerSpec::Conv2D(c), 1).is_err());
        let mut c = ConvSpec::pointwise(2, 2, 2, 2);
        c.r = 3;
        assert!(plan_layer(&LayerSpec::Conv2D(c), 1).is_err());
        c.padding = Padding::Same;
        c.r = 2;
        assert!(plan_layer(&LayerSpec::Conv2D(c), 1).is_err());
    }

    #[test]
    fn conv_solvers_agree() {
        for (h, c, k, r, stride, padding) in [
            (4, 3, 3, 1, 1, Padding::Valid),
            (5, 2, 4, 3, 1, Padding::Valid),
            (5, 4, 2, 3, 1, Padding::Same),
            (6, 2, 2, 3, 2, Padding::Same),
            (6, 3, 5, 3, 2, Padding::Valid),
        ] {
            let spec = LayerSpec::Conv2D(ConvSpec {
                batch: 1,
                h,
                w: h,
                c,
                k,
                r,
                s: r,
                stride,
                padding,
            });
            let model = layer_model(&spec, c.min(k)).unwrap();
            assert_eq!(
                min_offset(&model).unwrap(),
                min_offset_pairwise(&model).unwrap(),
                "{spec:?}"
            );
        }
    }

    #[test]
    fn enlarging_dimensions_never_shrinks_footprint() {
        let base = plan_layer_with(&fc(3, 4, 5), 1, 1)
            .unwrap()
            .footprint_segments;
        for bigger in [fc(4, 4, 5), fc(3, 5, 5), fc(3, 4, 6)] {
            assert!(plan_layer_with(&bigger, 1, 1).unwrap().footprint_segments >= base);
        }
    }
}
