//! Standard normal distribution functions.
//!
//! `erfc` and the scaled `erfcx` follow W. J. Cody's rational Chebyshev
//! approximations (relative error below 1e-15 over the real line). Tail
//! quantities (`log_cdf`, `inverse_mills`) go through `erfcx` so they stay
//! finite far below the underflow point of the plain CDF.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::AnalysisError;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const LN_2: f64 = std::f64::consts::LN_2;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

const A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_376e0,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_099e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_6e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_467_3e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];

/// erf(x) for |x| <= 0.46875.
fn erf_small(x: f64) -> f64 {
    let ysq = x * x;
    let mut num = A[4] * ysq;
    let mut den = ysq;
    for i in 0..3 {
        num = (num + A[i]) * ysq;
        den = (den + B[i]) * ysq;
    }
    x * (num + A[3]) / (den + B[3])
}

/// exp(y^2) * erfc(y) for y > 0.46875.
fn erfcx_large(y: f64) -> f64 {
    if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        (num + C[7]) / (den + D[7])
    } else {
        let ysq = 1.0 / (y * y);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        let r = ysq * (num + P[4]) / (den + Q[4]);
        (FRAC_1_SQRT_PI - r) / y
    }
}

/// exp(-y^2) split to keep the rounding error of y^2 out of the exponent.
fn exp_neg_sq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.468_75 {
        return 1.0 - erf_small(x);
    }
    let tail = if y > 26.7 { 0.0 } else { exp_neg_sq(y) * erfcx_large(y) };
    if x < 0.0 {
        2.0 - tail
    } else {
        tail
    }
}

/// Scaled complementary error function exp(x^2) erfc(x), for x >= 0.
fn erfcx_nonneg(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x <= 0.468_75 {
        (x * x).exp() * (1.0 - erf_small(x))
    } else {
        erfcx_large(x)
    }
}

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 - Φ(x) without cancellation.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// log Φ(x), finite for any finite x.
pub fn log_cdf(x: f64) -> f64 {
    if x > -5.0 {
        return cdf(x).ln();
    }
    let y = -x * FRAC_1_SQRT_2;
    -LN_2 + erfcx_nonneg(y).ln() - y * y
}

/// φ(x) / Φ(x), the inverse Mills ratio, stable for very negative x.
pub fn inverse_mills(x: f64) -> f64 {
    if x > -5.0 {
        return pdf(x) / cdf(x);
    }
    SQRT_2_OVER_PI / erfcx_nonneg(-x * FRAC_1_SQRT_2)
}

/// Φ⁻¹(p): Acklam's rational approximation polished with two Halley steps.
pub fn quantile(p: f64) -> Result<f64, AnalysisError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(AnalysisError::Domain(format!(
            "normal quantile needs p in (0, 1), got {p}"
        )));
    }
    const AA: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239e0,
    ];
    const BB: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const CC: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838e0,
        -2.549_732_539_343_734e0,
        4.374_664_141_464_968e0,
        2.938_163_982_698_783e0,
    ];
    const DD: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996e0,
        3.754_408_661_907_416e0,
    ];
    const P_LOW: f64 = 0.024_25;

    let tail = |q: f64| {
        let r = (-2.0 * q.ln()).sqrt();
        (((((CC[0] * r + CC[1]) * r + CC[2]) * r + CC[3]) * r + CC[4]) * r + CC[5])
            / ((((DD[0] * r + DD[1]) * r + DD[2]) * r + DD[3]) * r + 1.0)
    };
    let mut x = if p < P_LOW {
        tail(p)
    } else if p > 1.0 - P_LOW {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((AA[0] * r + AA[1]) * r + AA[2]) * r + AA[3]) * r + AA[4]) * r + AA[5]) * q
            / (((((BB[0] * r + BB[1]) * r + BB[2]) * r + BB[3]) * r + BB[4]) * r + 1.0)
    };
    for _ in 0..2 {
        // work in whichever tail keeps the residual free of cancellation
        let e = if x < 0.0 { cdf(x) - p } else { (1.0 - p) - sf(x) };
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_sf(chi2: f64) -> f64 {
    if chi2 <= 0.0 {
        return 1.0;
    }
    erfc((0.5 * chi2).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_points() {
        assert_eq!(cdf(0.0), 0.5);
        assert_eq!(quantile(0.5).unwrap(), 0.0);
        assert!(quantile(0.0).is_err());
        assert!(quantile(1.0).is_err());
        assert!(quantile(f64::NAN).is_err());
    }

    #[test]
    fn erfc_reference_values() {
        // values from Abramowitz & Stegun table 7.1 and high-precision references
        let cases = [
            (0.0, 1.0),
            (0.5, 0.479_500_122_186_953_5),
            (1.0, 0.157_299_207_050_285_13),
            (2.0, 0.004_677_734_981_047_266),
            (3.0, 2.209_049_699_858_544e-5),
            (5.0, 1.537_459_794_428_034_8e-12),
            (-1.0, 1.842_700_792_949_715),
        ];
        for (x, want) in cases {
            let got = erfc(x);
            assert!(((got - want) / want).abs() < 1e-13, "erfc({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn log_cdf_is_continuous_at_switch_and_finite_deep_in_tail() {
        let below = log_cdf(-5.0 - 1e-12);
        let above = log_cdf(-5.0 + 1e-12);
        assert!((below - above).abs() < 1e-9);
        let deep = log_cdf(-40.0);
        // log Φ(x) ≈ -x²/2 - ln(-x) - ln √(2π) for large negative x
        let asym = -800.0 - 40f64.ln() - (2.0 * PI).sqrt().ln();
        assert!(deep.is_finite());
        assert!((deep - asym).abs() < 1e-3, "{deep} vs {asym}");
    }

    #[test]
    fn inverse_mills_tail_behaviour() {
        // φ(x)/Φ(x) ~ -x for x → -∞
        let r = inverse_mills(-50.0);
        assert!((r / 50.0 - 1.0).abs() < 1e-3);
        assert!((inverse_mills(-4.999) - inverse_mills(-5.001)).abs() < 1e-2);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.024, 0.3, 0.5, 0.77, 0.975, 0.999_999] {
            let x = quantile(p).unwrap();
            let back = cdf(x);
            assert!(((back - p) / p).abs() < 1e-12, "p={p} x={x} back={back}");
        }
        assert!((quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn chi2_tail() {
        assert_eq!(chi2_1_sf(0.0), 1.0);
        let p = chi2_1_sf(1.96 * 1.96);
        assert!((p - 2.0 * sf(1.96)).abs() < 1e-15);
        assert!((p - 0.05).abs() < 1e-3);
    }
}
