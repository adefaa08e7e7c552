//! Portable stand-ins for the kernel intrinsics.

use crate::pool::{Owner, Pool, PoolError};

pub const KI: usize = 16;
pub const NI: usize = 2;

pub type Acc2x2 = [[i32; NI]; 2];

/// Fresh zeroed accumulator block.
#[inline]
pub fn reg_alloc() -> Acc2x2 {
    [[0; NI]; 2]
}

/// `acc[i][j] += Σ_k a[i][k] · b[k][j]` for a 2×16 by 16×2 product.
#[inline]
pub fn dot_2x2x16(a: &[[i8; KI]; 2], b: &[[i8; NI]; KI], acc: &mut Acc2x2) {
    for (row, out) in a.iter().zip(acc.iter_mut()) {
        for (k, &x) in row.iter().enumerate() {
            let x = x as i32;
            out[0] += x * b[k][0] as i32;
            out[1] += x * b[k][1] as i32;
        }
    }
}

#[inline]
pub fn broadcast<T: Copy, const N: usize>(x: T) -> [T; N] {
    [x; N]
}

/// Copy a 16×2 weight block out of a read-only buffer. `at(k, n)` returns
/// the weight for local row `k` and column `n`.
#[inline]
pub fn flash_load(at: impl Fn(usize, usize) -> i8) -> [[i8; NI]; KI] {
    let mut b = [[0i8; NI]; KI];
    for (k, row) in b.iter_mut().enumerate() {
        for (n, v) in row.iter_mut().enumerate() {
            *v = at(k, n);
        }
    }
    b
}

/// Load a segment and report whether its last pending read was consumed.
#[inline]
pub fn ram_load(pool: &mut Pool, addr: i64, out: &mut [i8]) -> Result<bool, PoolError> {
    pool.load_into(addr, bytes_mut(out))?;
    Ok(pool.state(addr).pending_reads == 0)
}

#[inline]
pub fn ram_store(
    pool: &mut Pool,
    addr: i64,
    seg: &[i8],
    owner: Owner,
    reads: u32,
) -> Result<(), PoolError> {
    pool.store(addr, bytes(seg), owner, reads)
}

#[inline]
pub fn ram_free(pool: &mut Pool, addr: i64) -> Result<(), PoolError> {
    pool.free(addr)
}

/// Load, then free the segment if nothing else will read it.
#[inline]
pub fn ram_consume(pool: &mut Pool, addr: i64, out: &mut [i8]) -> Result<(), PoolError> {
    if ram_load(pool, addr, out)? {
        ram_free(pool, addr)?;
    }
    Ok(())
}

pub fn bytes(x: &[i8]) -> &[u8] {
    // SAFETY: i8 and u8 have identical size and alignment
    unsafe { std::slice::from_raw_parts(x.as_ptr() as *const u8, x.len()) }
}

pub fn bytes_mut(x: &mut [i8]) -> &mut [u8] {
    // SAFETY: i8 and u8 have identical size and alignment
    unsafe { std::slice::from_raw_parts_mut(x.as_mut_ptr() as *mut u8, x.len()) }
}

pub fn signed(x: &[u8]) -> &[i8] {
    // SAFETY: i8 and u8 have identical size and alignment
    unsafe { std::slice::from_raw_parts(x.as_ptr() as *const i8, x.len()) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ones_give_sixteen() {
        let mut acc = reg_alloc();
        dot_2x2x16(&[[1; KI]; 2], &[[1; NI]; KI], &mut acc);
        assert_eq!(acc, [[16, 16], [16, 16]]);
    }

    #[test]
    fn identity_rows_select_weights() {
        let mut a = [[0i8; KI]; 2];
        a[0][3] = 1;
        a[1][11] = 1;
        let b = flash_load(|k, n| (k * 2 + n) as i8);
        let mut acc = reg_alloc();
        dot_2x2x16(&a, &b, &mut acc);
        assert_eq!(acc, [[6, 7], [22, 23]]);
    }

    #[test]
    fn broadcast_fills_lane() {
        assert_eq!(broadcast::<i32, 2>(-5), [-5, -5]);
    }

    proptest! {
        #[test]
        fn dot_matches_scalar_triple_loop(
            a in proptest::collection::vec(any::<i8>(), 2 * KI),
            b in proptest::collection::vec(any::<i8>(), KI * NI),
            init in proptest::collection::vec(-1000i32..1000, 4),
        ) {
            let mut ab = [[0i8; KI]; 2];
            for i in 0..2 { ab[i].copy_from_slice(&a[i * KI..(i + 1) * KI]); }
            let bb = flash_load(|k, n| b[k * NI + n]);
            let mut acc = [[init[0], init[1]], [init[2], init[3]]];
            let mut expect = acc;
            for i in 0..2 {
                for j in 0..NI {
                    for k in 0..KI {
                        expect[i][j] += a[i * KI + k] as i32 * b[k * NI + j] as i32;
                    }
                }
            }
            dot_2x2x16(&ab, &bb, &mut acc);
            prop_assert_eq!(acc, expect);
        }
    }
}
