//! Software emulation of low-precision float formats.
//!
//! Values stay in `f32` but are snapped to the grid of the target format:
//! round to nearest, ties to even, and overflow saturates to the largest
//! finite value. NaN stays NaN.

use half::{bf16, f16};

use super::DType;

/// Largest finite E4M3FN value (`0.1111.110`).
pub const F8E4M3_MAX: f32 = 448.0;
const F8E4M3_MIN_NORMAL: f32 = 0.015_625; // 2^-6
const F8E4M3_SUBNORMAL_STEP: f32 = 0.001_953_125; // 2^-9

pub fn quantize_value(x: f32, dtype: DType) -> f32 {
    match dtype {
        DType::F32 => x,
        DType::F16 => saturate(x, f16::from_f32(x).to_f32(), f16::MAX.to_f32()),
        DType::BF16 => saturate(x, bf16::from_f32(x).to_f32(), bf16::MAX.to_f32()),
        DType::F8E4M3 => quantize_f8e4m3(x),
        // integer tensors are never quantized through this path
        DType::I32 | DType::I64 => x,
    }
}

fn saturate(original: f32, rounded: f32, max: f32) -> f32 {
    if rounded.is_infinite() && !original.is_infinite() {
        max.copysign(original)
    } else {
        rounded
    }
}

fn quantize_f8e4m3(x: f32) -> f32 {
    if x.is_nan() {
        return f32::NAN;
    }
    let a = x.abs();
    let q = if a >= F8E4M3_MAX {
        F8E4M3_MAX
    } else if a < F8E4M3_MIN_NORMAL {
        (a / F8E4M3_SUBNORMAL_STEP).round_ties_even() * F8E4M3_SUBNORMAL_STEP
    } else {
        let exp = ((a.to_bits() >> 23) & 0xff) as i32 - 127;
        let step = 2f32.powi(exp - 3);
        (a / step).round_ties_even() * step
    };
    q.copysign(x)
}

/// Decode an E4M3FN byte.
pub fn f8e4m3_from_bits(bits: u8) -> f32 {
    let sign = if bits & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 3) & 0x0f) as i32;
    let mant = (bits & 0x07) as f32;
    if exp == 0x0f && bits & 0x07 == 0x07 {
        return f32::NAN;
    }
    let mag = if exp == 0 {
        mant * F8E4M3_SUBNORMAL_STEP
    } else {
        (1.0 + mant / 8.0) * 2f32.powi(exp - 7)
    };
    sign * mag
}

/// Encode an already-quantized value as an E4M3FN byte.
pub fn f8e4m3_to_bits(x: f32) -> u8 {
    if x.is_nan() {
        return 0x7f;
    }
    let q = quantize_f8e4m3(x);
    let sign = if q.is_sign_negative() { 0x80u8 } else { 0 };
    let a = q.abs();
    if a == 0.0 {
        return sign;
    }
    if a < F8E4M3_MIN_NORMAL {
        return sign | (a / F8E4M3_SUBNORMAL_STEP) as u8;
    }
    let exp = ((a.to_bits() >> 23) & 0xff) as i32 - 127;
    let mant = ((a / 2f32.powi(exp) - 1.0) * 8.0) as u8;
    sign | (((exp + 7) as u8) << 3) | mant
}
