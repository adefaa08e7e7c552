use crate::planner::{layer_model, ConvSpec, LayerSpec, MemPlan};
use crate::pool::{Owner, Pool};

use super::fc::check_segment;
use super::intrinsics::{ram_consume, ram_store};
use super::tensor::FlashWeights;
use super::{accumulate, requantize_segment, schedule_input, KernelError};

fn in_bounds(out: usize, tap: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (out * stride + tap) as i64 - pad as i64;
    (0..extent as i64).contains(&pos).then_some(pos as usize)
}

/// NHWC convolution; loop order `(b, p, q, o, r, s, c)` over segment grids.
pub fn conv2d_forward(
    pool: &mut Pool,
    in_base: i64,
    w: &FlashWeights,
    spec: &ConvSpec,
    plan: &MemPlan,
) -> Result<i64, KernelError> {
    let seg = check_segment(pool, plan)?;
    let layer = LayerSpec::Conv2D(*spec);
    let (c, k) = (spec.c, spec.k);
    if w.shape != [spec.r, spec.s, c, k] {
        return Err(KernelError::Shape(format!(
            "conv weights {:?} for {spec:?}",
            w.shape
        )));
    }
    let (cs, ks) = (c.div_ceil(seg), k.div_ceil(seg));
    let (p, q) = (spec.out_h(), spec.out_w());
    let counts = layer_model(&layer, seg)?.read_counts(spec.batch * spec.h * spec.w * cs)?;
    schedule_input(pool, in_base, &counts)?;
    let out_base = in_base - plan.offset_segments;

    let mut a = vec![0i8; seg];
    let mut out = vec![0i8; seg];
    let mut acc = Vec::with_capacity(seg);
    for b in 0..spec.batch {
        for y in 0..p {
            for x in 0..q {
                for o in 0..ks {
                    let n0 = o * seg;
                    acc.clear();
                    acc.extend_from_slice(&w.bias[n0..(n0 + seg).min(k)]);
                    for r in 0..spec.r {
                        let Some(iy) = in_bounds(y, r, spec.stride, spec.pad_h(), spec.h) else {
                            continue;
                        };
                        for s in 0..spec.s {
                            let Some(ix) = in_bounds(x, s, spec.stride, spec.pad_w(), spec.w)
                            else {
                                continue;
                            };
                            for ci in 0..cs {
                                let idx = ((b * spec.h + iy) * spec.w + ix) * cs + ci;
                                ram_consume(pool, in_base + idx as i64, &mut a)?;
                                let k0 = ci * seg;
                                let wbase = (r * spec.s + s) * c;
                                accumulate(&mut acc, &a, seg.min(c - k0), |kk, nn| {
                                    w.data[(wbase + k0 + kk) * k + n0 + nn]
                                });
                            }
                        }
                    }
                    requantize_segment(&acc, w.q, &mut out);
                    let idx = ((b * p + y) * q + x) * ks + o;
                    ram_store(pool, out_base + idx as i64, &out, Owner::output(idx), 0)?;
                }
            }
        }
    }
    Ok(out_base)
}

/// Depthwise convolution; loop order `(b, p, q, c, r, s)`.
pub fn depthwise_forward(
    pool: &mut Pool,
    in_base: i64,
    w: &FlashWeights,
    spec: &ConvSpec,
    plan: &MemPlan,
) -> Result<i64, KernelError> {
    let seg = check_segment(pool, plan)?;
    let layer = LayerSpec::Depthwise(*spec);
    layer.validate()?;
    let c = spec.c;
    if w.shape != [spec.r, spec.s, c] {
        return Err(KernelError::Shape(format!(
            "depthwise weights {:?} for {spec:?}",
            w.shape
        )));
    }
    let cs = c.div_ceil(seg);
    let (p, q) = (spec.out_h(), spec.out_w());
    let counts = layer_model(&layer, seg)?.read_counts(spec.batch * spec.h * spec.w * cs)?;
    schedule_input(pool, in_base, &counts)?;
    let out_base = in_base - plan.offset_segments;

    let mut a = vec![0i8; seg];
    let mut out = vec![0i8; seg];
    let mut acc = Vec::with_capacity(seg);
    for b in 0..spec.batch {
        for y in 0..p {
            for x in 0..q {
                for ci in 0..cs {
                    let c0 = ci * seg;
                    let lanes = seg.min(c - c0);
                    acc.clear();
                    acc.extend_from_slice(&w.bias[c0..c0 + lanes]);
                    for r in 0..spec.r {
                        let Some(iy) = in_bounds(y, r, spec.stride, spec.pad_h(), spec.h) else {
                            continue;
                        };
                        for s in 0..spec.s {
                            let Some(ix) = in_bounds(x, s, spec.stride, spec.pad_w(), spec.w)
                            else {
                                continue;
                            };
                            let idx = ((b * spec.h + iy) * spec.w + ix) * cs + ci;
                            ram_consume(pool, in_base + idx as i64, &mut a)?;
                            let wrow = &w.data[(r * spec.s + s) * c + c0..][..lanes];
                            for ((acc, &x), &wt) in acc.iter_mut().zip(&a).zip(wrow) {
                                *acc += x as i32 * wt as i32;
                            }
                        }
                    }
                    requantize_segment(&acc, w.q, &mut out);
                    let idx = ((b * p + y) * q + x) * cs + ci;
                    ram_store(pool, out_base + idx as i64, &out, Owner::output(idx), 0)?;
                }
            }
        }
    }
    Ok(out_base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::reference::{conv_reference, depthwise_reference};
    use crate::kernels::tensor::{place_tensor, read_tensor, QTensor};
    use crate::kernels::QParams;
    use crate::planner::{plan_layer, Padding};
    use crate::pool::{PoolConfig, PoolError};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv(h: usize, c: usize, k: usize, r: usize, stride: usize, padding: Padding) -> ConvSpec {
        ConvSpec {
            batch: 1,
            h,
            w: h,
            c,
            k,
            r,
            s: r,
            stride,
            padding,
        }
    }

    fn run_conv(
        spec: ConvSpec,
        delta: i64,
        seed: u64,
    ) -> Result<(Pool, MemPlan, bool), KernelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = QTensor::random(vec![1, spec.h, spec.w, spec.c], &mut rng);
        let w = FlashWeights::random(
            vec![spec.r, spec.s, spec.c, spec.k],
            spec.r * spec.s * spec.c,
            &mut rng,
        );
        let plan = plan_layer(&LayerSpec::Conv2D(spec), 1)?;
        let seg = plan.segment_elems;
        let mut pool = Pool::new(PoolConfig::with_segments(plan.footprint_segments, seg)?);
        place_tensor(&mut pool, 3, &x, seg)?;
        let mut p = plan;
        p.offset_segments += delta;
        let out = conv2d_forward(&mut pool, 3, &w, &spec, &p)?;
        let got = read_tensor(&pool, out, vec![1, spec.out_h(), spec.out_w(), spec.k], seg)?;
        Ok((pool, plan, got == conv_reference(&x, &w, &spec)))
    }

    #[test]
    fn pointwise_matches_oracle_below_baseline() {
        let spec = conv(4, 3, 3, 1, 1, Padding::Valid);
        let (_, plan, ok) = run_conv(spec, 0, 1).unwrap();
        assert!(ok);
        assert!(plan.footprint_bytes < plan.baseline_bytes);
    }

    #[test]
    fn full_window_single_pixel() {
        let spec = conv(3, 4, 4, 3, 1, Padding::Valid);
        let (pool, plan, ok) = run_conv(spec, 0, 2).unwrap();
        assert!(ok);
        assert_eq!(plan.footprint_segments, 9);
        assert!(pool.metrics().peak_span_segments <= plan.footprint_segments);
    }

    #[test]
    fn assorted_convs_match_oracle() {
        for (i, spec) in [
            conv(6, 5, 7, 3, 1, Padding::Same),
            conv(7, 8, 4, 3, 2, Padding::Same),
            conv(6, 3, 16, 3, 2, Padding::Valid),
            conv(5, 20, 20, 1, 2, Padding::Valid),
        ]
        .into_iter()
        .enumerate()
        {
            let (pool, plan, ok) = run_conv(spec, 0, 10 + i as u64).unwrap();
            assert!(ok, "{spec:?}");
            assert!(pool.metrics().peak_span_segments <= plan.footprint_segments);
        }
    }

    #[test]
    fn conv_offset_minus_one_clobbers() {
        let spec = conv(5, 4, 8, 3, 1, Padding::Same);
        let err = run_conv(spec, -1, 3).unwrap_err();
        assert!(
            matches!(err, KernelError::Pool(PoolError::Clobber { .. })),
            "{err}"
        );
    }

    fn run_dw(
        spec: ConvSpec,
        w: Option<FlashWeights>,
        seed: u64,
    ) -> (QTensor, QTensor, MemPlan, Pool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = QTensor::random(vec![1, spec.h, spec.w, spec.c], &mut rng);
        let w = w.unwrap_or_else(|| {
            FlashWeights::random(vec![spec.r, spec.s, spec.c], spec.r * spec.s, &mut rng)
        });
        let plan = plan_layer(&LayerSpec::Depthwise(spec), 1).unwrap();
        let seg = plan.segment_elems;
        let mut pool = Pool::new(PoolConfig::with_segments(plan.footprint_segments, seg).unwrap());
        place_tensor(&mut pool, 0, &x, seg).unwrap();
        let out = depthwise_forward(&mut pool, 0, &w, &spec, &plan).unwrap();
        let got =
            read_tensor(&pool, out, vec![1, spec.out_h(), spec.out_w(), spec.c], seg).unwrap();
        (got, depthwise_reference(&x, &w, &spec), plan, pool)
    }

    #[test]
    fn identity_center_depthwise_reproduces_input() {
        let spec = conv(5, 4, 4, 3, 1, Padding::Same);
        let mut data = vec![0; 36];
        data[16..20].fill(1);
        let w = FlashWeights::new(vec![3, 3, 4], data, vec![0; 4], QParams::UNIT).unwrap();
        let (got, want, _, _) = run_dw(spec, Some(w), 4);
        assert_eq!(got, want);
    }

    #[test]
    fn random_depthwise_matches_oracle() {
        let (got, want, _, _) = run_dw(conv(6, 12, 12, 3, 1, Padding::Same), None, 5);
        assert_eq!(got, want);
    }

    #[test]
    fn stride_two_depthwise_fits_in_input() {
        let spec = conv(8, 4, 4, 3, 2, Padding::Same);
        let (got, want, plan, pool) = run_dw(spec, None, 6);
        assert_eq!(got, want);
        assert_eq!(plan.footprint_segments, plan.in_segments);
        assert!(pool.metrics().peak_span_segments <= plan.in_segments);
    }
}
