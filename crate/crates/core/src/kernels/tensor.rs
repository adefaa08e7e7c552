//! Dense int8 tensors, read-only weights, and moving tensors in and out of a
//! pool as channel segments.

use rand::Rng;

use crate::pool::{Owner, Pool, PoolError};

use super::intrinsics::{bytes, signed};
use super::quant::QParams;
use super::KernelError;

/// Row-major int8 tensor (NHWC for images).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i8>,
}

impl QTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i8>) -> Result<Self, KernelError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(KernelError::Shape(format!(
                "shape {shape:?} holds {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0; n],
        }
    }

    pub fn random(shape: Vec<usize>, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen()).collect();
        Self { shape, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the innermost (channel) axis.
    pub fn channels(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of channel segments of `seg` elements.
    pub fn segment_count(&self, seg: usize) -> usize {
        let c = self.channels();
        if c == 0 {
            return 0;
        }
        self.len() / c * c.div_ceil(seg)
    }

    /// Segment `i`, zero padded to `seg` elements.
    pub fn segment(&self, i: usize, seg: usize) -> Vec<i8> {
        let c = self.channels();
        let per_row = c.div_ceil(seg);
        let (row, chunk) = (i / per_row, i % per_row);
        let start = chunk * seg;
        let end = (start + seg).min(c);
        let mut out = vec![0; seg];
        out[..end - start].copy_from_slice(&self.data[row * c + start..row * c + end]);
        out
    }
}

/// Read-only weights, never placed in the pool.
///
/// Layouts: FC `[K, N]`; conv `[R, S, C, K]`; depthwise `[R, S, C]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlashWeights {
    pub shape: Vec<usize>,
    pub data: Vec<i8>,
    pub bias: Vec<i32>,
    pub q: QParams,
}

impl FlashWeights {
    pub fn new(
        shape: Vec<usize>,
        data: Vec<i8>,
        bias: Vec<i32>,
        q: QParams,
    ) -> Result<Self, KernelError> {
        let n: usize = shape.iter().product();
        let outs = *shape.last().unwrap_or(&0);
        if n != data.len() || bias.len() != outs {
            return Err(KernelError::Shape(format!(
                "weights {shape:?} with {} values and {} biases",
                data.len(),
                bias.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            bias,
            q,
        })
    }

    /// Random weights and biases with a multiplier and shift that keep
    /// typical accumulators inside the int8 range for `fan_in` products.
    pub fn random(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let outs = *shape.last().unwrap_or(&0);
        let data = (0..n).map(|_| rng.gen()).collect();
        let bias = (0..outs).map(|_| rng.gen_range(-4096..=4096)).collect();
        let q = random_qparams(fan_in, rng);
        Self {
            shape,
            data,
            bias,
            q,
        }
    }
}

pub fn random_qparams(fan_in: usize, rng: &mut impl Rng) -> QParams {
    // typical |acc| is about 128 * 74 * sqrt(fan_in); aim for ~64 after scaling
    let spread = (fan_in.max(1) as f64).sqrt() * 9472.0 / 64.0;
    let shift = 15 + spread.log2().ceil() as u32;
    QParams::new(
        rng.gen_range(1 << 14..1 << 15),
        shift,
        rng.gen_range(-8..=8),
    )
}

/// Write `t` into the pool as consecutive live segments starting at `base`.
/// The consuming kernel schedules their reads.
pub fn place_tensor(pool: &mut Pool, base: i64, t: &QTensor, seg: usize) -> Result<(), PoolError> {
    for i in 0..t.segment_count(seg) {
        pool.store(
            base + i as i64,
            bytes(&t.segment(i, seg)),
            Owner::input(i),
            0,
        )?;
    }
    Ok(())
}

/// Reassemble a tensor of `shape` from live segments starting at `base`.
pub fn read_tensor(
    pool: &Pool,
    base: i64,
    shape: Vec<usize>,
    seg: usize,
) -> Result<QTensor, KernelError> {
    let mut t = QTensor::zeros(shape);
    let c = t.channels();
    let per_row = c.div_ceil(seg);
    for i in 0..t.segment_count(seg) {
        let addr = base + i as i64;
        let data = pool.peek(addr).ok_or(PoolError::UseAfterFree {
            addr,
            phys: pool.resolve(addr),
        })?;
        let (row, chunk) = (i / per_row, i % per_row);
        let start = chunk * seg;
        let end = (start + seg).min(c);
        t.data[row * c + start..row * c + end].copy_from_slice(&signed(data)[..end - start]);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::PoolConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn segments_are_zero_padded() {
        let t = QTensor::new(vec![2, 3], vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(t.segment_count(2), 4);
        assert_eq!(t.segment(1, 2), vec![3, 0]);
        assert_eq!(t.segment(2, 2), vec![4, 5]);
    }

    #[test]
    fn round_trip_through_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = QTensor::random(vec![3, 4, 5], &mut rng);
        let mut pool = Pool::new(PoolConfig::with_segments(64, 2).unwrap());
        place_tensor(&mut pool, -7, &t, 2).unwrap();
        assert_eq!(read_tensor(&pool, -7, t.shape.clone(), 2).unwrap(), t);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(QTensor::new(vec![2, 2], vec![0; 3]).is_err());
        assert!(FlashWeights::new(vec![2, 2], vec![0; 4], vec![0], QParams::UNIT).is_err());
    }
}
