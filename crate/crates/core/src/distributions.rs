//! Normal, binomial and Fisher noncentral hypergeometric distributions.
//!
//! Everything is evaluated on the log scale. Binomial coefficients go
//! through `ln_gamma`, and the FNCH normalising constant is a max-shifted
//! log-sum-exp over the explicitly enumerated support, so arm sizes in the
//! tens of thousands are handled without overflow.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// 1/sqrt(2*pi)
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this point `ln Φ` switches to the asymptotic tail expansion.
const LOG_CDF_TAIL: f64 = -35.0;

pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn std_normal_log_pdf(x: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * x * x
}

/// Complementary error function (Cody's rational Chebyshev approximations).
pub fn erfc(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.161_123_743_870_565_6,
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
        8.883_149_794_388_376,
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
        5.371_811_018_620_098_6e2,
        1.621_389_574_566_690_2e3,
        3.290_799_235_733_459_6e3,
        4.362_619_090_143_247e3,
        3.439_367_674_143_721_6e3,
        1.230_339_354_803_749_4e3,
    ];
    const P: [f64; 6] = [
        3.053_266_349_612_323_4e-1,
        3.603_448_999_498_044_4e-1,
        1.257_817_261_112_292_5e-1,
        1.608_378_514_874_227_7e-2,
        6.587_491_615_298_378e-4,
        1.631_538_713_730_209_8e-2,
    ];
    const Q: [f64; 5] = [
        2.568_520_192_289_822,
        1.872_952_849_923_467_3,
        5.279_051_029_514_284e-1,
        6.051_834_131_244_132e-2,
        2.335_204_976_268_691_8e-3,
    ];
    const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= 0.468_75 {
        let ysq = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + A[i]) * ysq;
            den = (den + B[i]) * ysq;
        }
        return 1.0 - x * (num + A[3]) / (den + B[3]);
    }
    let tail = if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        (num + C[7]) / (den + D[7])
    } else if y >= 26.543 {
        0.0
    } else {
        let ysq = 1.0 / (y * y);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        (FRAC_1_SQRT_PI - ysq * (num + P[4]) / (den + Q[4])) / y
    };
    // split exp(-y²) to avoid cancellation in y²
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    let r = (-ysq * ysq).exp() * (-del).exp() * tail;
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

/// Φ(x), accurate to a few ulps in both tails.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x / SQRT_2)
}

/// ln Φ(x) without underflow for very negative x.
pub fn std_normal_log_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 0.0 {
        return (-std_normal_cdf(-x)).ln_1p();
    }
    if x > LOG_CDF_TAIL {
        return std_normal_cdf(x).ln();
    }
    // Mills-ratio series: Φ(x) ~ φ(x)/|x| * (1 - 1/x² + 3/x⁴ - 15/x⁶ + 105/x⁸)
    let z = 1.0 / (x * x);
    let series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z)));
    std_normal_log_pdf(x) - (-x).ln() + series.ln()
}

/// Inverse Mills ratio φ(x)/Φ(x).
pub fn inverse_mills(x: f64) -> f64 {
    if x > LOG_CDF_TAIL {
        std_normal_pdf(x) / std_normal_cdf(x)
    } else {
        (std_normal_log_pdf(x) - std_normal_log_cdf(x)).exp()
    }
}

/// Φ⁻¹(p) for p in (0, 1).
///
/// Acklam's rational approximation followed by two Halley steps against
/// [`std_normal_cdf`].
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "normal quantile needs 0 < p < 1, got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    for _ in 0..2 {
        // work in the smaller tail so the residual keeps its relative precision
        let e = if x < 0.0 {
            std_normal_cdf(x) - p
        } else {
            (1.0 - p) - std_normal_cdf(-x)
        };
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// ln(1 + eˣ) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// ln C(n, k). Caller guarantees k ≤ n.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

pub fn binomial_log_pmf(k: u64, n: u64, p: f64) -> Result<f64> {
    if k > n {
        return Err(Error::domain(format!(
            "binomial count {k} exceeds trials {n}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!(
            "binomial probability {p} outside [0, 1]"
        )));
    }
    if p == 0.0 {
        return Ok(if k == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if p == 1.0 {
        return Ok(if k == n { 0.0 } else { f64::NEG_INFINITY });
    }
    let kf = k as f64;
    let nf = n as f64;
    Ok(ln_choose(n, k) + kf * p.ln() + (nf - kf) * (-p).ln_1p())
}

/// Binomial log-pmf with the success probability given on the logit scale.
pub fn binomial_log_pmf_logit(k: u64, n: u64, eta: f64) -> f64 {
    let kf = k as f64;
    let nf = n as f64;
    let mut ll = ln_choose(n, k);
    if k > 0 {
        ll -= kf * softplus(-eta);
    }
    if k < n {
        ll -= (nf - kf) * softplus(eta);
    }
    ll
}

/// Max-shifted log-sum-exp; returns -inf for an empty or all -inf input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Feasible treatment-arm event counts given both arm sizes and the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FnchSupport {
    pub k_min: u64,
    pub k_max: u64,
}

impl FnchSupport {
    pub fn new(n1: u64, n0: u64, y_total: u64) -> Result<Self> {
        if y_total > n1 + n0 {
            return Err(Error::domain(format!(
                "total events {y_total} exceed combined arm size {}",
                n1 + n0
            )));
        }
        Ok(Self {
            k_min: y_total.saturating_sub(n0),
            k_max: n1.min(y_total),
        })
    }

    pub fn len(&self) -> usize {
        (self.k_max - self.k_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: u64) -> bool {
        (self.k_min..=self.k_max).contains(&k)
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> {
        self.k_min..=self.k_max
    }
}

/// Precomputed ln C(n1,k) + ln C(n0,y-k) over the support. Only the
/// exp(θk) tilt changes between evaluations.
#[derive(Debug, Clone)]
pub struct FnchTable {
    support: FnchSupport,
    log_weights: Vec<f64>,
}

/// Log normaliser plus first two moments of the FNCH distribution at a
/// given log odds ratio.
#[derive(Debug, Clone, Copy)]
pub struct FnchMoments {
    pub log_norm: f64,
    pub mean: f64,
    pub var: f64,
}

impl FnchTable {
    pub fn new(n1: u64, n0: u64, y_total: u64) -> Result<Self> {
        let support = FnchSupport::new(n1, n0, y_total)?;
        let log_weights = support
            .iter()
            .map(|k| ln_choose(n1, k) + ln_choose(n0, y_total - k))
            .collect();
        Ok(Self {
            support,
            log_weights,
        })
    }

    pub fn support(&self) -> FnchSupport {
        self.support
    }

    pub fn log_normalizer(&self, log_or: f64) -> f64 {
        let k0 = self.support.k_min as f64;
        let m = self
            .log_weights
            .iter()
            .enumerate()
            .map(|(j, lw)| lw + log_or * (k0 + j as f64))
            .fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = self
            .log_weights
            .iter()
            .enumerate()
            .map(|(j, lw)| (lw + log_or * (k0 + j as f64) - m).exp())
            .sum();
        m + s.ln()
    }

    pub fn moments(&self, log_or: f64) -> FnchMoments {
        let k0 = self.support.k_min as f64;
        let m = self
            .log_weights
            .iter()
            .enumerate()
            .map(|(j, lw)| lw + log_or * (k0 + j as f64))
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (j, lw) in self.log_weights.iter().enumerate() {
            let jf = j as f64;
            let w = (lw + log_or * (k0 + jf) - m).exp();
            s0 += w;
            s1 += w * jf;
            s2 += w * jf * jf;
        }
        let mean = s1 / s0;
        FnchMoments {
            log_norm: m + s0.ln(),
            mean: k0 + mean,
            var: (s2 / s0 - mean * mean).max(0.0),
        }
    }

    pub fn log_pmf(&self, k: u64, log_or: f64) -> Result<f64> {
        if !self.support.contains(k) {
            return Err(Error::domain(format!(
                "count {k} outside FNCH support [{}, {}]",
                self.support.k_min, self.support.k_max
            )));
        }
        Ok(self.log_weight(k) + log_or * k as f64 - self.log_normalizer(log_or))
    }

    /// ln C(n1,k) + ln C(n0,y-k); k must lie in the support.
    pub fn log_weight(&self, k: u64) -> f64 {
        self.log_weights[(k - self.support.k_min) as usize]
    }

    /// Inverse-cdf draw from a uniform variate u in [0, 1).
    pub fn quantile(&self, u: f64, log_or: f64) -> u64 {
        let ln = self.log_normalizer(log_or);
        let mut acc = 0.0;
        for k in self.support.iter() {
            acc += (self.log_weight(k) + log_or * k as f64 - ln).exp();
            if u < acc {
                return k;
            }
        }
        self.support.k_max
    }
}

pub fn fnch_log_pmf(k: u64, n1: u64, n0: u64, y_total: u64, log_or: f64) -> Result<f64> {
    if !log_or.is_finite() {
        return Err(Error::domain("FNCH log odds ratio must be finite"));
    }
    FnchTable::new(n1, n0, y_total)?.log_pmf(k, log_or)
}
