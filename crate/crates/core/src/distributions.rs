//! Gaussian kernels: standard normal CDF and quantile, and the per-component
//! Gaussian marginal produced by a probabilistic regressor.
//!
//! The CDF is computed through a complementary error function ported from
//! FreeBSD's `s_erf.c` (via Go's `math/erf.go`), which is accurate to about
//! one ulp. The quantile uses Wichura's algorithm AS 241 (`PPND16`), with a
//! relative accuracy of about 1e-16.

// Coefficients are kept exactly as published.
#![allow(clippy::excessive_precision)]

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Per-component predictive Gaussian: mean in radians, variance in radians².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMarginal", into = "RawMarginal")]
pub struct GaussianMarginal {
    mean: f64,
    variance: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMarginal {
    mean: f64,
    variance: f64,
}

impl TryFrom<RawMarginal> for GaussianMarginal {
    type Error = Error;
    fn try_from(raw: RawMarginal) -> Result<Self> {
        GaussianMarginal::new(raw.mean, raw.variance)
    }
}

impl From<GaussianMarginal> for RawMarginal {
    fn from(g: GaussianMarginal) -> Self {
        RawMarginal {
            mean: g.mean,
            variance: g.variance,
        }
    }
}

impl GaussianMarginal {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(invalid(format!("mean must be finite, got {mean}")));
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(invalid(format!(
                "variance must be finite and positive, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        gaussian_cdf(self, x)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        gaussian_quantile(self, p)
    }
}

/// Standard normal CDF Φ(z).
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(invalid(format!("z must be finite, got {z}")));
    }
    Ok(0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2))
}

/// Standard normal quantile Φ⁻¹(p) for p in the open interval (0, 1).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfDomain {
            name: "p",
            value: p,
        });
    }
    Ok(ppnd16(p))
}

pub fn gaussian_cdf(g: &GaussianMarginal, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(invalid(format!("x must be finite, got {x}")));
    }
    std_normal_cdf((x - g.mean) / g.std_dev())
}

pub fn gaussian_quantile(g: &GaussianMarginal, p: f64) -> Result<f64> {
    Ok(g.mean + g.std_dev() * std_normal_quantile(p)?)
}

// AS 241, Wichura (1988), Applied Statistics 37(3).
fn ppnd16(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_672_7e3 * r + 3.343_057_558_358_812_810_5e4) * r
            + 6.726_577_092_700_870_085_3e4)
            * r
            + 4.592_195_393_154_987_145_7e4)
            * r
            + 1.373_169_376_550_946_112_5e4)
            * r
            + 1.971_590_950_306_551_442_7e3)
            * r
            + 1.331_416_678_917_843_774_5e2)
            * r
            + 3.387_132_872_796_366_608_0;
        let den = ((((((5.226_495_278_852_854_561_0e3 * r + 2.872_908_573_572_194_267_4e4) * r
            + 3.930_789_580_009_271_061_0e4)
            * r
            + 2.121_379_430_158_659_586_7e4)
            * r
            + 5.394_196_021_424_751_107_7e3)
            * r
            + 6.871_870_074_920_579_083_0e2)
            * r
            + 4.231_333_070_160_091_125_2e1)
            * r
            + 1.0;
        return q * num / den;
    }

    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414_076_4e-4 * r + 2.272_384_498_926_918_458_33e-2)
            * r
            + 2.417_807_251_774_506_117_7e-1)
            * r
            + 1.270_458_252_452_368_382_58)
            * r
            + 3.647_848_324_763_204_605_04)
            * r
            + 5.769_497_221_460_691_405_5)
            * r
            + 4.630_337_846_156_545_295_9)
            * r
            + 1.423_437_110_749_683_577_34;
        let den = ((((((1.050_750_071_644_416_843_24e-9 * r + 5.475_938_084_995_344_946e-4)
            * r
            + 1.519_866_656_361_645_719_66e-2)
            * r
            + 1.481_039_764_274_800_745_9e-1)
            * r
            + 6.897_673_349_851_000_045_5e-1)
            * r
            + 1.676_384_830_183_803_849_4)
            * r
            + 2.053_191_626_637_758_821_87)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_132_65e-7 * r + 2.711_555_568_743_487_578_15e-5)
            * r
            + 1.242_660_947_388_078_438_6e-3)
            * r
            + 2.653_218_952_657_612_309_3e-2)
            * r
            + 2.965_605_718_285_048_912_3e-1)
            * r
            + 1.784_826_539_917_291_335_8)
            * r
            + 5.463_784_911_164_114_369_9)
            * r
            + 6.657_904_643_501_103_777_2;
        let den = ((((((2.044_263_103_389_939_785_64e-15 * r + 1.421_511_758_316_445_888_7e-7)
            * r
            + 1.846_318_317_510_054_681_8e-5)
            * r
            + 7.868_691_311_456_132_591e-4)
            * r
            + 1.487_536_129_085_061_485_25e-2)
            * r
            + 1.369_298_809_227_358_053_1e-1)
            * r
            + 5.998_322_065_558_879_376_9e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

// ====================================================
// Copyright (C) 1993 by Sun Microsystems, Inc. All rights reserved.
//
// Developed at SunPro, a Sun Microsystems, Inc. business.
// Permission to use, copy, modify, and distribute this
// software is freely granted, provided that this notice
// is preserved.
// ====================================================

const ERX: f64 = 8.450_629_115_104_675_292_97e-1;
const PP: [f64; 5] = [
    1.283_791_670_955_125_585_61e-1,
    -3.250_421_072_470_014_993_70e-1,
    -2.848_174_957_559_851_047_66e-2,
    -5.770_270_296_489_441_591_57e-3,
    -2.376_301_665_665_016_260_84e-5,
];
const QQ: [f64; 5] = [
    3.979_172_239_591_553_528_19e-1,
    6.502_224_998_876_729_444_85e-2,
    5.081_306_281_875_765_627_76e-3,
    1.324_947_380_043_216_445_26e-4,
    -3.960_228_278_775_368_123_20e-6,
];
const PA: [f64; 7] = [
    -2.362_118_560_752_659_440_77e-3,
    4.148_561_186_837_483_316_66e-1,
    -3.722_078_760_357_013_238_47e-1,
    3.183_466_199_011_617_536_74e-1,
    -1.108_946_942_823_966_774_76e-1,
    3.547_830_432_561_823_593_71e-2,
    -2.166_375_594_868_790_843_00e-3,
];
const QA: [f64; 6] = [
    1.064_208_804_008_442_282_86e-1,
    5.403_979_177_021_710_489_37e-1,
    7.182_865_441_419_626_628_68e-2,
    1.261_712_198_087_616_421_12e-1,
    1.363_708_391_202_905_073_62e-2,
    1.198_449_984_679_910_741_70e-2,
];
const RA: [f64; 8] = [
    -9.864_944_034_847_148_227_05e-3,
    -6.938_585_727_071_817_643_72e-1,
    -1.055_862_622_532_329_098_14e1,
    -6.237_533_245_032_600_603_96e1,
    -1.623_966_694_625_734_703_55e2,
    -1.846_050_929_067_110_359_94e2,
    -8.128_743_550_630_659_342_46e1,
    -9.814_329_344_169_145_485_92,
];
const SA: [f64; 8] = [
    1.965_127_166_743_925_712_92e1,
    1.376_577_541_435_190_426_00e2,
    4.345_658_774_752_292_288_21e2,
    6.453_872_717_332_678_803_36e2,
    4.290_081_400_275_678_333_86e2,
    1.086_350_055_417_794_351_34e2,
    6.570_249_770_319_281_701_35,
    -6.042_441_521_485_809_874_38e-2,
];
const RB: [f64; 7] = [
    -9.864_942_924_700_099_285_97e-3,
    -7.992_832_376_805_230_065_74e-1,
    -1.775_795_491_775_475_198_89e1,
    -1.606_363_848_558_219_160_62e2,
    -6.375_664_433_683_896_277_22e2,
    -1.025_095_131_611_077_249_54e3,
    -4.835_191_916_086_513_970_19e2,
];
const SB: [f64; 7] = [
    3.033_806_074_348_245_829_24e1,
    3.257_925_129_965_739_188_26e2,
    1.536_729_586_084_436_959_94e3,
    3.199_858_219_508_595_539_08e3,
    2.553_050_406_433_164_425_83e3,
    4.745_285_412_069_553_672_15e2,
    -2.244_095_244_658_581_833_62e1,
];

/// Horner evaluation with coefficients in ascending order.
fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Horner evaluation of `1 + c0 x + c1 x² + ...`.
fn poly1(coeffs: &[f64], x: f64) -> f64 {
    1.0 + x * poly(coeffs, x)
}

/// Complementary error function. Finite inputs only.
pub(crate) fn erfc(x: f64) -> f64 {
    const TINY: f64 = 1.387_778_780_781_445_675_5e-17; // 2^-56
    let negative = x < 0.0;
    let ax = x.abs();

    if ax < 0.843_75 {
        let temp = if ax < TINY {
            ax
        } else {
            let z = ax * ax;
            let y = poly(&PP, z) / poly1(&QQ, z);
            if ax < 0.25 {
                ax + ax * y
            } else {
                0.5 + (ax * y + (ax - 0.5))
            }
        };
        return if negative { 1.0 + temp } else { 1.0 - temp };
    }
    if ax < 1.25 {
        let s = ax - 1.0;
        let ratio = poly(&PA, s) / poly1(&QA, s);
        return if negative {
            1.0 + ERX + ratio
        } else {
            1.0 - ERX - ratio
        };
    }
    if ax >= 28.0 {
        return if negative { 2.0 } else { 0.0 };
    }
    let s = 1.0 / (ax * ax);
    let (r, q) = if ax < 1.0 / 0.35 {
        (poly(&RA, s), poly1(&SA, s))
    } else {
        if negative && ax > 6.0 {
            return 2.0;
        }
        (poly(&RB, s), poly1(&SB, s))
    };
    // z keeps the top 32 bits of ax so that z*z is exact
    let z = f64::from_bits(ax.to_bits() & 0xffff_ffff_0000_0000);
    let e = (-z * z - 0.5625).exp() * ((z - ax) * (z + ax) + r / q).exp();
    if negative {
        2.0 - e / ax
    } else {
        e / ax
    }
}
