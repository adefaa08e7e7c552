//! Fixed-point requantization shared by the segment kernels and the oracles.

/// Per-tensor requantization: `round(acc * multiplier / 2^shift) + zero_point`,
/// saturated to int8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QParams {
    pub multiplier: i32,
    pub shift: u32,
    pub zero_point: i32,
}

impl QParams {
    pub const UNIT: QParams = QParams {
        multiplier: 1,
        shift: 0,
        zero_point: 0,
    };

    pub fn new(multiplier: i32, shift: u32, zero_point: i32) -> Self {
        assert!(multiplier >= 0, "multiplier must be non-negative");
        assert!(shift < 63, "shift out of range");
        Self {
            multiplier,
            shift,
            zero_point,
        }
    }

    #[inline]
    pub fn apply(&self, acc: i32) -> i8 {
        requantize(acc, self.multiplier, self.shift, self.zero_point)
    }
}

/// Rounding right shift, ties away from zero.
#[inline]
fn rounding_shift(x: i64, shift: u32) -> i64 {
    if shift == 0 {
        return x;
    }
    let half = 1i64 << (shift - 1);
    if x >= 0 {
        (x + half) >> shift
    } else {
        -((-x + half) >> shift)
    }
}

#[inline]
pub fn requantize(acc: i32, multiplier: i32, shift: u32, zero_point: i32) -> i8 {
    let scaled = rounding_shift(acc as i64 * multiplier as i64, shift) + zero_point as i64;
    scaled.clamp(i8::MIN as i64, i8::MAX as i64) as i8
}

#[inline]
pub fn saturating_add(a: i8, b: i8) -> i8 {
    a.saturating_add(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_is_identity_inside_range() {
        for x in -128..=127 {
            assert_eq!(QParams::UNIT.apply(x), x as i8);
        }
        assert_eq!(QParams::UNIT.apply(1000), 127);
        assert_eq!(QParams::UNIT.apply(-1000), -128);
    }

    #[test]
    fn ties_round_away_from_zero() {
        assert_eq!(requantize(3, 1, 1, 0), 2);
        assert_eq!(requantize(-3, 1, 1, 0), -2);
        assert_eq!(requantize(1, 1, 1, 0), 1);
        assert_eq!(requantize(-1, 1, 1, 0), -1);
        assert_eq!(requantize(5, 1, 2, 0), 1);
    }

    #[test]
    fn zero_point_applied_after_scaling() {
        assert_eq!(requantize(8, 1, 2, -3), -1);
        assert_eq!(requantize(0, 7, 4, 100), 100);
    }

    #[test]
    fn extreme_accumulators_do_not_overflow() {
        assert_eq!(requantize(i32::MAX, i32::MAX, 0, 0), 127);
        assert_eq!(requantize(i32::MIN, i32::MAX, 62, 0), -1);
    }

    proptest! {
        #[test]
        fn monotone_in_accumulator(
            a in any::<i32>(),
            b in any::<i32>(),
            m in 0i32..=i32::MAX,
            s in 0u32..40,
            z in -200i32..200,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(requantize(lo, m, s, z) <= requantize(hi, m, s, z));
        }
    }
}
