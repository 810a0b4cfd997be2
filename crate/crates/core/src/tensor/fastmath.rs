//! Branch-light f64 transcendentals that auto-vectorize.
//!
//! The selective scan evaluates `exp` hundreds of millions of times per
//! full-length forward pass; libm's scalar `exp` does not vectorize and
//! dominates runtime. These routines are plain polynomial range-reduction
//! implementations written so LLVM can turn the surrounding loops into
//! FMA vector code. They are deterministic pure arithmetic (no libm), which
//! also removes a cross-platform reproducibility hazard.
//!
//! Accuracy: relative error a few ulp (< 1e-15) across the useful range;
//! the accompanying tests pin this against the std implementations.

const LOG2_E: f64 = std::f64::consts::LOG2_E;
// ln(2) split for exact range reduction, from fdlibm.
const LN2_HI: f64 = 6.931_471_803_691_238_16e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_70e-10;

/// `e^x` with relative error of a few ulp. Inputs outside roughly
/// [-708, 709] are clamped, so extreme negatives return ~5e-308 instead of
/// exactly 0 — harmless for decay factors, and it keeps the hot loop free of
/// subnormal handling.
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    let x = x.clamp(-708.0, 709.0);
    // Ties-to-even rounding maps straight onto the hardware instruction;
    // the tie direction is irrelevant for range reduction.
    let kf = (x * LOG2_E).round_ties_even();
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    // Taylor series of e^r on |r| <= ln(2)/2; degree 13 keeps the
    // truncation error below 1e-17 relative.
    let mut p = 1.0 / 6_227_020_800.0; // 1/13!
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // Scale by 2^k through the exponent bits; k is in [-1022, 1024] after
    // the clamp and p is in [0.7, 1.42], so the result stays normal.
    let k = kf as i64;
    f64::from_bits((p.to_bits() as i64).wrapping_add(k << 52) as u64)
}

/// Natural log for strictly positive normal inputs, a few ulp of error.
#[inline(always)]
pub fn ln(x: f64) -> f64 {
    let bits = x.to_bits();
    let mut e = ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mut m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | (1023u64 << 52));
    // Put the mantissa in [sqrt(1/2), sqrt(2)) so the atanh series converges fast.
    if m > std::f64::consts::SQRT_2 {
        m *= 0.5;
        e += 1;
    }
    let s = (m - 1.0) / (m + 1.0);
    let t = s * s;
    // ln(m) = 2 atanh(s) = 2s(1 + t/3 + t^2/5 + ...); |s| <= 0.1716.
    let mut q = 1.0 / 19.0;
    q = q * t + 1.0 / 17.0;
    q = q * t + 1.0 / 15.0;
    q = q * t + 1.0 / 13.0;
    q = q * t + 1.0 / 11.0;
    q = q * t + 1.0 / 9.0;
    q = q * t + 1.0 / 7.0;
    q = q * t + 1.0 / 5.0;
    q = q * t + 1.0 / 3.0;
    q = q * t + 1.0;
    let ef = e as f64;
    ef * LN2_HI + (2.0 * s * q + ef * LN2_LO)
}

/// `ln(1 + t)` for `t >= 0`, full relative accuracy even for tiny `t`
/// (where forming `1 + t` first would round the information away).
#[inline(always)]
pub fn ln1p_pos(t: f64) -> f64 {
    if t > 0.0625 {
        ln(1.0 + t)
    } else {
        // ln(1+t) = 2 atanh(t / (2+t)); |s| <= 0.0303 so a short series does.
        let s = t / (2.0 + t);
        let q = s * s;
        let mut p = 1.0 / 9.0;
        p = p * q + 1.0 / 7.0;
        p = p * q + 1.0 / 5.0;
        p = p * q + 1.0 / 3.0;
        p = p * q + 1.0;
        2.0 * s * p
    }
}

/// Logistic function, stable for any finite input.
#[inline(always)]
pub fn sigmoid(x: f64) -> f64 {
    let t = exp(-x.abs());
    let p = 1.0 / (1.0 + t);
    if x >= 0.0 {
        p
    } else {
        1.0 - p
    }
}

/// `ln(1 + e^x)` in the overflow-free max-plus-log1p form.
#[inline(always)]
pub fn softplus(x: f64) -> f64 {
    let t = exp(-x.abs());
    x.max(0.0) + ln1p_pos(t)
}

/// `x * sigmoid(x)`.
#[inline(always)]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(got: f64, want: f64) -> f64 {
        if want == 0.0 {
            got.abs()
        } else {
            ((got - want) / want).abs()
        }
    }

    #[test]
    fn exp_matches_std_over_wide_range() {
        let mut x = -700.0;
        while x < 700.0 {
            assert!(
                rel_err(exp(x), x.exp()) < 1e-14,
                "exp({x}): {} vs {}",
                exp(x),
                x.exp()
            );
            x += 0.37;
        }
        assert_eq!(exp(0.0), 1.0);
    }

    #[test]
    fn ln_matches_std() {
        let mut x = 1e-300f64;
        while x < 1e300 {
            assert!(rel_err(ln(x), x.ln()) < 1e-14, "ln({x})");
            x *= 9.7;
        }
        // The softplus-relevant band gets a denser sweep.
        let mut x = 1.0 + 1e-9;
        while x < 2.0 {
            assert!(rel_err(ln(x), x.ln()) < 1e-13, "ln({x})");
            x += 0.0137;
        }
        assert_eq!(ln(1.0), 0.0);
    }

    #[test]
    fn sigmoid_softplus_fixed_points() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(silu(0.0) == 0.0);
        // Stability at large magnitudes.
        assert!((softplus(40.0) - 40.0).abs() < 1e-12);
        assert!(softplus(-40.0) > 0.0 && softplus(-40.0) < 1e-15);
        assert!((sigmoid(40.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-745.0) >= 0.0);
        // Monotone and bounded on a wide sweep.
        let mut prev = -1.0;
        let mut x = -700.0;
        while x < 700.0 {
            let s = sigmoid(x);
            assert!((0.0..=1.0).contains(&s) && s >= prev);
            prev = s;
            x += 3.1;
        }
    }

    #[test]
    fn ln1p_accurate_for_tiny_arguments() {
        for &t in &[1e-300, 1e-18, 1e-12, 1e-6, 0.01, 0.0624, 0.0626, 0.5, 1.0] {
            let want = f64::ln_1p(t);
            assert!(rel_err(ln1p_pos(t), want) < 1e-14, "ln1p({t})");
        }
    }

    #[test]
    fn softplus_matches_reference_form() {
        let mut x = -30.0f64;
        while x < 30.0 {
            let want = x.exp().ln_1p();
            assert!(rel_err(softplus(x), want) < 1e-13, "softplus({x})");
            x += 0.219;
        }
    }
}
