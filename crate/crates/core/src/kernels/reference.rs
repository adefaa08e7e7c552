//! Dense reference implementations on flat buffers. No pool, no segments.

use crate::planner::{ConvSpec, LayerSpec, ModuleSpec};

use super::quant::{saturating_add, QParams};
use super::tensor::{FlashWeights, QTensor};
use super::IbWeights;

/// `[M, K] x [K, N] -> [M, N]`.
pub fn fc_reference(input: &QTensor, w: &FlashWeights) -> QTensor {
    let (m, k) = (input.shape[0], input.shape[1]);
    let n = w.shape[1];
    let mut out = QTensor::zeros(vec![m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = w.bias[j];
            for kk in 0..k {
                acc += input.data[i * k + kk] as i32 * w.data[kk * n + j] as i32;
            }
            out.data[i * n + j] = w.q.apply(acc);
        }
    }
    out
}

fn tap(spec: &ConvSpec, out: usize, tap: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (out * spec.stride + tap) as i64 - pad as i64;
    (0..extent as i64).contains(&pos).then_some(pos as usize)
}

/// NHWC convolution with `[R, S, C, K]` weights; padded taps read zero.
pub fn conv_reference(input: &QTensor, w: &FlashWeights, spec: &ConvSpec) -> QTensor {
    let (p, q) = (spec.out_h(), spec.out_w());
    let (h, wd, c, k) = (spec.h, spec.w, spec.c, spec.k);
    let mut out = QTensor::zeros(vec![spec.batch, p, q, k]);
    for b in 0..spec.batch {
        for y in 0..p {
            for x in 0..q {
                for o in 0..k {
                    let mut acc = w.bias[o];
                    for r in 0..spec.r {
                        let Some(iy) = tap(spec, y, r, spec.pad_h(), h) else {
                            continue;
                        };
                        for s in 0..spec.s {
                            let Some(ix) = tap(spec, x, s, spec.pad_w(), wd) else {
                                continue;
                            };
                            for ch in 0..c {
                                let a = input.data[((b * h + iy) * wd + ix) * c + ch] as i32;
                                let wt = w.data[((r * spec.s + s) * c + ch) * k + o] as i32;
                                acc += a * wt;
                            }
                        }
                    }
                    out.data[((b * p + y) * q + x) * k + o] = w.q.apply(acc);
                }
            }
        }
    }
    out
}

/// Depthwise NHWC convolution with `[R, S, C]` weights.
pub fn depthwise_reference(input: &QTensor, w: &FlashWeights, spec: &ConvSpec) -> QTensor {
    let (p, q) = (spec.out_h(), spec.out_w());
    let (h, wd, c) = (spec.h, spec.w, spec.c);
    let mut out = QTensor::zeros(vec![spec.batch, p, q, c]);
    for b in 0..spec.batch {
        for y in 0..p {
            for x in 0..q {
                for ch in 0..c {
                    let mut acc = w.bias[ch];
                    for r in 0..spec.r {
                        let Some(iy) = tap(spec, y, r, spec.pad_h(), h) else {
                            continue;
                        };
                        for s in 0..spec.s {
                            let Some(ix) = tap(spec, x, s, spec.pad_w(), wd) else {
                                continue;
                            };
                            acc += input.data[((b * h + iy) * wd + ix) * c + ch] as i32
                                * w.data[(r * spec.s + s) * c + ch] as i32;
                        }
                    }
                    out.data[((b * p + y) * q + x) * c + ch] = w.q.apply(acc);
                }
            }
        }
    }
    out
}

/// Elementwise saturating add.
pub fn add_reference(a: &QTensor, b: &QTensor) -> QTensor {
    QTensor {
        shape: a.shape.clone(),
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| saturating_add(x, y))
            .collect(),
    }
}

/// The module as three separate layers plus the residual add.
pub fn ib_reference(input: &QTensor, w: &IbWeights, module: &ModuleSpec) -> QTensor {
    let layers = module.layers();
    let spec = |i: usize| match layers[i] {
        LayerSpec::Conv2D(c) | LayerSpec::Depthwise(c) => c,
        _ => unreachable!("module layers start with three convolutions"),
    };
    let b = conv_reference(input, &w.expand, &spec(0));
    let c = depthwise_reference(&b, &w.depthwise, &spec(1));
    let d = conv_reference(&c, &w.project, &spec(2));
    if module.has_residual() {
        add_reference(&d, input)
    } else {
        d
    }
}

/// Scalar multiply-add with the same requantization, for sanity checks.
pub fn scalar_reference(x: i8, w: i8, bias: i32, q: QParams) -> i8 {
    q.apply(bias + x as i32 * w as i32)
}
