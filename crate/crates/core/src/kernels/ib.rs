use crate::planner::{module_model, IbGeometry, MemPlan, ModuleSpec};
use crate::pool::{Owner, Pool};

use super::fc::check_segment;
use super::intrinsics::{ram_consume, ram_store};
use super::quant::saturating_add;
use super::{accumulate, requantize_segment, schedule_input, IbWeights, KernelError};

const B_SLOT: u8 = 0;
const C_SLOT: u8 = 1;
const D_SLOT: u8 = 2;

/// Fused expand -> depthwise -> project (+ residual) over output pixels.
///
/// Per pixel and mid-channel slice, every in-bounds tap is expanded into its
/// own B workspace segment, the depthwise step reduces them into the C
/// segment, and the project step accumulates into a local int32 row. After
/// the last slice each output segment passes through the D segment, picks up
/// the residual and is stored into E.
pub fn inverted_bottleneck_forward(
    pool: &mut Pool,
    in_base: i64,
    w: &IbWeights,
    module: &ModuleSpec,
    plan: &MemPlan,
) -> Result<i64, KernelError> {
    module.validate()?;
    if !module.is_fusable() {
        return Err(KernelError::Unsupported(format!(
            "{module}: depthwise window larger than its input"
        )));
    }
    let seg = check_segment(pool, plan)?;
    let g = IbGeometry::new(module, seg);
    let (ci, cm, co, rs) = (module.c_in, module.c_mid, module.c_out, module.rs);
    if w.expand.shape != [1, 1, ci, cm]
        || w.depthwise.shape != [rs, rs, cm]
        || w.project.shape != [1, 1, cm, co]
    {
        return Err(KernelError::Shape(format!("weights do not match {module}")));
    }
    let taps = rs * rs;
    if plan.workspace_segments < taps + 2 {
        return Err(KernelError::Shape(format!(
            "plan reserves {} workspace segments, kernel needs {}",
            plan.workspace_segments,
            taps + 2
        )));
    }
    let [s1, s2, s3] = module.strides;
    let counts = module_model(module, seg)?.read_counts(g.a_segments())?;
    schedule_input(pool, in_base, &counts)?;
    let out_base = in_base - plan.offset_segments;
    let ws = out_base + plan.workspace_offset();
    let b_addr = |t: usize| ws + t as i64;
    let c_addr = ws + taps as i64;
    let d_addr = ws + taps as i64 + 1;
    let a_addr = |y: usize, x: usize, c: usize| in_base + ((y * g.h + x) * g.in_segs + c) as i64;

    let mut a = vec![0i8; seg];
    let mut buf = vec![0i8; seg];
    let mut acc = Vec::with_capacity(seg);
    let mut dacc = vec![0i32; co];
    let mut valid = vec![false; taps];
    let mut scratch_id = 0usize;

    for p in 0..g.h3 {
        for q in 0..g.h3 {
            dacc.copy_from_slice(&w.project.bias);
            let (cy, cx) = (p * s3 * s2, q * s3 * s2);
            for m in 0..g.mid_segs {
                let m0 = m * seg;
                let lanes = seg.min(cm - m0);
                // expand each in-bounds tap into its B segment
                for r in 0..rs {
                    for s in 0..rs {
                        let t = r * rs + s;
                        let (by, bx) = (
                            (cy + r) as i64 - g.pad as i64,
                            (cx + s) as i64 - g.pad as i64,
                        );
                        valid[t] = (0..g.h1 as i64).contains(&by) && (0..g.h1 as i64).contains(&bx);
                        if !valid[t] {
                            continue;
                        }
                        let (ay, ax) = (by as usize * s1, bx as usize * s1);
                        acc.clear();
                        acc.extend_from_slice(&w.expand.bias[m0..m0 + lanes]);
                        for c in 0..g.in_segs {
                            ram_consume(pool, a_addr(ay, ax, c), &mut a)?;
                            let k0 = c * seg;
                            accumulate(&mut acc, &a, seg.min(ci - k0), |kk, nn| {
                                w.expand.data[(k0 + kk) * cm + m0 + nn]
                            });
                        }
                        requantize_segment(&acc, w.expand.q, &mut buf);
                        ram_store(pool, b_addr(t), &buf, Owner::scratch(B_SLOT, scratch_id), 1)?;
                        scratch_id += 1;
                    }
                }
                // depthwise over the workspace window
                acc.clear();
                acc.extend_from_slice(&w.depthwise.bias[m0..m0 + lanes]);
                for t in (0..taps).filter(|&t| valid[t]) {
                    ram_consume(pool, b_addr(t), &mut buf)?;
                    let wrow = &w.depthwise.data[t * cm + m0..][..lanes];
                    for ((acc, &x), &wt) in acc.iter_mut().zip(&buf).zip(wrow) {
                        *acc += x as i32 * wt as i32;
                    }
                }
                requantize_segment(&acc, w.depthwise.q, &mut buf);
                ram_store(pool, c_addr, &buf, Owner::scratch(C_SLOT, scratch_id), 1)?;
                scratch_id += 1;
                // project into the pixel's accumulator row
                ram_consume(pool, c_addr, &mut buf)?;
                accumulate(&mut dacc, &buf, lanes, |kk, nn| {
                    w.project.data[(m0 + kk) * co + nn]
                });
            }
            for o in 0..g.out_segs {
                let o0 = o * seg;
                requantize_segment(&dacc[o0..(o0 + seg).min(co)], w.project.q, &mut buf);
                ram_store(pool, d_addr, &buf, Owner::scratch(D_SLOT, scratch_id), 1)?;
                scratch_id += 1;
                ram_consume(pool, d_addr, &mut buf)?;
                if g.residual {
                    ram_consume(pool, a_addr(p, q, o), &mut a)?;
                    for (d, &x) in buf.iter_mut().zip(&a) {
                        *d = saturating_add(*d, x);
                    }
                }
                let idx = (p * g.h3 + q) * g.out_segs + o;
                ram_store(pool, out_base + idx as i64, &buf, Owner::output(idx), 0)?;
            }
        }
    }
    Ok(out_base)
}
