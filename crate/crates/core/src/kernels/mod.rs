//! Segment-aware int8 kernels and their dense reference oracles.
//!
//! Every kernel reads its input from the pool one segment at a time, keeps
//! int32 partial sums in local accumulators, and stores each finished output
//! segment at `out_base = in_base - offset`. Pending-read counts for the input
//! come from the planner's access model, so a segment is freed exactly when
//! its last read happens.

mod conv;
mod fc;
mod ib;
pub mod intrinsics;
pub mod quant;
pub mod reference;
mod tensor;

use rand::Rng;
use thiserror::Error;

use crate::planner::PlanError;
use crate::pool::{Pool, PoolError};

pub use conv::{conv2d_forward, depthwise_forward};
pub use fc::{fc_forward, FcSpec};
pub use ib::inverted_bottleneck_forward;
pub use quant::{requantize, QParams};
pub use tensor::{place_tensor, random_qparams, read_tensor, FlashWeights, QTensor};

use intrinsics::{dot_2x2x16, flash_load, reg_alloc, KI, NI};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl KernelError {
    /// Clobber, use-after-free, out-of-memory and friends.
    pub fn is_pool_fault(&self) -> bool {
        matches!(self, KernelError::Pool(e) if e.is_fault())
    }
}

/// Inner tiling factors matched to the dot intrinsic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelTilingConfig {
    pub ki: usize,
    pub ni: usize,
}

impl Default for KernelTilingConfig {
    fn default() -> Self {
        Self { ki: KI, ni: NI }
    }
}

/// Weights of the three convolutions of an inverted bottleneck.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IbWeights {
    /// `[1, 1, C_in, C_mid]`
    pub expand: FlashWeights,
    /// `[R, S, C_mid]`
    pub depthwise: FlashWeights,
    /// `[1, 1, C_mid, C_out]`
    pub project: FlashWeights,
}

impl IbWeights {
    pub fn random(module: &crate::planner::ModuleSpec, rng: &mut impl Rng) -> Self {
        let (ci, cm, co, r) = (module.c_in, module.c_mid, module.c_out, module.rs);
        Self {
            expand: FlashWeights::random(vec![1, 1, ci, cm], ci, rng),
            depthwise: FlashWeights::random(vec![r, r, cm], r * r, rng),
            project: FlashWeights::random(vec![1, 1, cm, co], cm, rng),
        }
    }
}

/// Set pending reads on a placed input tensor and free segments nobody reads.
fn schedule_input(pool: &mut Pool, in_base: i64, counts: &[u32]) -> Result<(), PoolError> {
    for (i, &n) in counts.iter().enumerate() {
        let addr = in_base + i as i64;
        if n == 0 {
            if pool.state(addr).status == crate::pool::SegmentStatus::Live {
                pool.free(addr)?;
            }
        } else {
            pool.schedule_reads(addr, n)?;
        }
    }
    Ok(())
}

/// `acc[j] += Σ_i a[i] · w(k0 + i, n0 + j)` over `kvalid` inputs and
/// `acc.len()` outputs, using the dot intrinsic on whole 16×2 blocks and a
/// scalar epilogue on the rest. Row 1 of the dot operand stays zero because a
/// single input row is in flight.
fn accumulate(acc: &mut [i32], a: &[i8], kvalid: usize, w: impl Fn(usize, usize) -> i8) {
    let nvalid = acc.len();
    let kfull = kvalid / KI * KI;
    let nfull = nvalid / NI * NI;
    for n0 in (0..nfull).step_by(NI) {
        let mut block = reg_alloc();
        for k0 in (0..kfull).step_by(KI) {
            let mut lhs = [[0i8; KI]; 2];
            lhs[0].copy_from_slice(&a[k0..k0 + KI]);
            let rhs = flash_load(|k, n| w(k0 + k, n0 + n));
            dot_2x2x16(&lhs, &rhs, &mut block);
        }
        acc[n0] += block[0][0];
        acc[n0 + 1] += block[0][1];
        for (k, &x) in a.iter().enumerate().take(kvalid).skip(kfull) {
            acc[n0] += x as i32 * w(k, n0) as i32;
            acc[n0 + 1] += x as i32 * w(k, n0 + 1) as i32;
        }
    }
    for (n, slot) in acc.iter_mut().enumerate().skip(nfull) {
        for (k, &x) in a.iter().enumerate().take(kvalid) {
            *slot += x as i32 * w(k, n) as i32;
        }
    }
}

/// Requantize `acc` into a zero-padded segment.
fn requantize_segment(acc: &[i32], q: QParams, out: &mut [i8]) {
    out.fill(0);
    for (o, &x) in out.iter_mut().zip(acc) {
        *o = q.apply(x);
    }
}
