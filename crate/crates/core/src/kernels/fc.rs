use crate::planner::{layer_model, LayerSpec, MemPlan};
use crate::pool::{Owner, Pool};

use super::intrinsics::{ram_consume, ram_store};
use super::tensor::FlashWeights;
use super::{accumulate, requantize_segment, schedule_input, KernelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FcSpec {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl From<FcSpec> for LayerSpec {
    fn from(s: FcSpec) -> Self {
        LayerSpec::FullyConnected {
            m: s.m,
            k: s.k,
            n: s.n,
        }
    }
}

pub(super) fn check_segment(pool: &Pool, plan: &MemPlan) -> Result<usize, KernelError> {
    let seg = plan.segment_elems;
    if pool.segment_bytes() != seg {
        return Err(KernelError::Shape(format!(
            "pool segments are {} B but the plan uses {seg} int8 elements",
            pool.segment_bytes()
        )));
    }
    Ok(seg)
}

/// Fully connected layer over an `M x ceil(K/seg)` input grid. Returns the
/// output base `in_base - offset`.
pub fn fc_forward(
    pool: &mut Pool,
    in_base: i64,
    w: &FlashWeights,
    spec: FcSpec,
    plan: &MemPlan,
) -> Result<i64, KernelError> {
    let seg = check_segment(pool, plan)?;
    let FcSpec { m, k, n } = spec;
    if w.shape != [k, n] {
        return Err(KernelError::Shape(format!(
            "FC weights {:?} for K={k}, N={n}",
            w.shape
        )));
    }
    let (kt, nt) = (k.div_ceil(seg), n.div_ceil(seg));
    let counts = layer_model(&spec.into(), seg)?.read_counts(m * kt)?;
    schedule_input(pool, in_base, &counts)?;
    let out_base = in_base - plan.offset_segments;

    let mut a = vec![0i8; seg];
    let mut out = vec![0i8; seg];
    let mut acc = Vec::with_capacity(seg);
    for row in 0..m {
        for j in 0..nt {
            let n0 = j * seg;
            acc.clear();
            acc.extend_from_slice(&w.bias[n0..(n0 + seg).min(n)]);
            for i in 0..kt {
                let k0 = i * seg;
                ram_consume(pool, in_base + (row * kt + i) as i64, &mut a)?;
                accumulate(&mut acc, &a, seg.min(k - k0), |kk, nn| {
                    w.data[(k0 + kk) * n + n0 + nn]
                });
            }
            requantize_segment(&acc, w.q, &mut out);
            let idx = row * nt + j;
            ram_store(pool, out_base + idx as i64, &out, Owner::output(idx), 0)?;
        }
    }
    Ok(out_base)
}
