//! Portable transcendentals for the Gaussian generator. System math
//! libraries differ by ulps across platforms; these series evaluations use
//! only IEEE arithmetic, so the produced streams are bit-identical
//! everywhere. Accuracy is a few ulps, which is ample for sampling.

use std::f64::consts::{LN_2, SQRT_2};

/// Natural logarithm of a positive normal double.
pub(crate) fn portable_ln(x: f64) -> f64 {
    debug_assert!(x.is_finite() && x >= f64::MIN_POSITIVE);
    let bits = x.to_bits();
    let mut exponent = ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mut mantissa = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | 0x3ff0_0000_0000_0000);
    // Balance the mantissa around 1 so the atanh series argument stays small.
    if mantissa > SQRT_2 {
        mantissa *= 0.5;
        exponent += 1;
    }
    // ln m = 2 atanh((m - 1) / (m + 1)), |argument| <= (sqrt2-1)/(sqrt2+1).
    let s = (mantissa - 1.0) / (mantissa + 1.0);
    let s2 = s * s;
    let mut power = s;
    let mut sum = s;
    for k in 1..24 {
        power *= s2;
        let term = power / (2 * k + 1) as f64;
        sum += term;
        if term.abs() < 1e-20 {
            break;
        }
    }
    2.0 * sum + exponent as f64 * LN_2
}

fn sin_series(a: f64) -> f64 {
    // a in [0, pi/2); terms a^(2k+1)/(2k+1)!.
    let a2 = a * a;
    let mut term = a;
    let mut sum = a;
    for k in 1..16 {
        term *= -a2 / ((2 * k) * (2 * k + 1)) as f64;
        sum += term;
        if term.abs() < 1e-20 {
            break;
        }
    }
    sum
}

fn cos_series(a: f64) -> f64 {
    let a2 = a * a;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..16 {
        term *= -a2 / ((2 * k - 1) * (2 * k)) as f64;
        sum += term;
        if term.abs() < 1e-20 {
            break;
        }
    }
    sum
}

/// (sin, cos) of the angle `2*pi*t` for a turn fraction t in [0, 1).
///
/// The quadrant folding is exact: 4t and q/4 are dyadic, so no rounding
/// enters before the series argument is formed.
pub(crate) fn portable_sin_cos_turn(t: f64) -> (f64, f64) {
    debug_assert!((0.0..1.0).contains(&t));
    let quadrant = (4.0 * t).floor();
    let r = t - quadrant * 0.25;
    let a = std::f64::consts::TAU * r;
    let (s, c) = (sin_series(a), cos_series(a));
    match quadrant as u8 {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}
