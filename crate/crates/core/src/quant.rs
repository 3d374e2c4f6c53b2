//! INT8 symmetric quantization with power-of-two scales.
//!
//! Accumulation is INT32 with wrapping adds, so any summation order gives the
//! same bits. Requantization is an arithmetic right shift that rounds half
//! away from zero and then saturates to `[-128, 127]`.

/// Divides by `2^shift`, rounding half away from zero.
pub fn shift_round(acc: i32, shift: u32) -> i64 {
    let a = acc as i64;
    if shift == 0 {
        return a;
    }
    let half = 1i64 << (shift - 1);
    if a >= 0 {
        (a + half) >> shift
    } else {
        -((-a + half) >> shift)
    }
}

pub fn saturate_i8(v: i64) -> i8 {
    v.clamp(i8::MIN as i64, i8::MAX as i64) as i8
}

pub fn requantize(acc: i32, shift: u32) -> i8 {
    saturate_i8(shift_round(acc, shift))
}

/// Bias add, optional ReLU and requantization of one accumulator.
pub fn epilogue(acc: i32, bias: i32, relu: bool, shift: u32) -> i8 {
    let mut v = acc.wrapping_add(bias);
    if relu && v < 0 {
        v = 0;
    }
    requantize(v, shift)
}

/// Integer division rounding half away from zero; used for mean reduction.
pub fn div_round(num: i32, den: i32) -> i32 {
    assert!(den > 0, "mean over an empty set");
    let n = num as i64;
    let d = den as i64;
    let q = if n >= 0 { (n + d / 2) / d } else { -((-n + d / 2) / d) };
    q as i32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(shift_round(5, 1), 3);
        assert_eq!(shift_round(-5, 1), -3);
        assert_eq!(shift_round(4, 1), 2);
        assert_eq!(shift_round(7, 2), 2);
        assert_eq!(shift_round(6, 2), 2);
        assert_eq!(shift_round(-6, 2), -2);
        assert_eq!(shift_round(i32::MIN, 31), -1);
        assert_eq!(shift_round(i32::MAX, 0), i32::MAX as i64);
    }

    #[test]
    fn saturation() {
        assert_eq!(requantize(1000, 0), 127);
        assert_eq!(requantize(-1000, 0), -128);
        assert_eq!(requantize(-1000, 3), -125);
        assert_eq!(epilogue(-50, 10, true, 0), 0);
        assert_eq!(epilogue(-50, 10, false, 0), -40);
        assert_eq!(epilogue(i32::MAX, 1, false, 0), -128);
    }

    #[test]
    fn mean_rounding() {
        assert_eq!(div_round(7, 2), 4);
        assert_eq!(div_round(-7, 2), -4);
        assert_eq!(div_round(10, 4), 3);
        assert_eq!(div_round(9, 4), 2);
        assert_eq!(div_round(0, 5), 0);
    }
}
