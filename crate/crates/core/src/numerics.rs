//! Special functions and seeded random streams.
//!
//! The normal CDF is evaluated through the regularized incomplete gamma
//! function (`erfc(x) = Q(1/2, x^2)`), the Student t CDF through the
//! regularized incomplete beta function, and the normal quantile by a
//! rational starting point polished with Halley steps against [`normal_cdf`].

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITER: usize = 20_000;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// Inputs to [`normal_quantile`] are clamped into `[QUANTILE_CLAMP, 1 - QUANTILE_CLAMP]`.
pub const QUANTILE_CLAMP: f64 = 1e-15;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower and upper incomplete gamma `(P(a, x), Q(a, x))`.
fn incomplete_gamma(a: f64, x: f64, ln_gamma_a: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    let prefactor = (a * x.ln() - x - ln_gamma_a).exp();
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        let p = sum * prefactor;
        (p, 1.0 - p)
    } else {
        // modified Lentz on the continued fraction for Q
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        let q = prefactor * h;
        (1.0 - q, q)
    }
}

/// Complementary error function for `x >= 0`.
fn erfc_nonneg(x: f64) -> f64 {
    let ln_gamma_half = 0.5 * PI.ln();
    incomplete_gamma(0.5, x * x, ln_gamma_half).1
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain {
            what: "normal_cdf requires a finite argument",
            value: z,
        });
    }
    let x = z.abs() / std::f64::consts::SQRT_2;
    let lower_tail = 0.5 * erfc_nonneg(x);
    Ok(if z < 0.0 {
        lower_tail
    } else {
        1.0 - lower_tail
    })
}

/// Lower-tail probability for `z <= 0` without the `1 - x` cancellation.
fn normal_lower_tail(z: f64) -> f64 {
    0.5 * erfc_nonneg(-z / std::f64::consts::SQRT_2)
}

const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

/// Quantile for `p` in `(0, 0.5]`; result is `<= 0`.
fn lower_quantile(p: f64) -> f64 {
    let mut x = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((ACKLAM_C[0] * q + ACKLAM_C[1]) * q + ACKLAM_C[2]) * q + ACKLAM_C[3]) * q
            + ACKLAM_C[4])
            * q
            + ACKLAM_C[5])
            / ((((ACKLAM_D[0] * q + ACKLAM_D[1]) * q + ACKLAM_D[2]) * q + ACKLAM_D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((ACKLAM_A[0] * r + ACKLAM_A[1]) * r + ACKLAM_A[2]) * r + ACKLAM_A[3]) * r
            + ACKLAM_A[4])
            * r
            + ACKLAM_A[5])
            * q
            / (((((ACKLAM_B[0] * r + ACKLAM_B[1]) * r + ACKLAM_B[2]) * r + ACKLAM_B[3]) * r
                + ACKLAM_B[4])
                * r
                + 1.0)
    };
    // Halley polish; the starting point is good to ~1e-9 relative.
    for _ in 0..2 {
        let e = normal_lower_tail(x.min(0.0)) - p;
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    x.min(0.0)
}

/// Inverse of [`normal_cdf`]. Inputs are clamped to `[1e-15, 1 - 1e-15]`
/// so that the result is always finite.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if p.is_nan() || p <= 0.0 || p >= 1.0 {
        return Err(Error::Domain {
            what: "normal_quantile requires 0 < p < 1",
            value: p,
        });
    }
    let p = p.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP);
    if p == 0.5 {
        Ok(0.0)
    } else if p < 0.5 {
        Ok(lower_quantile(p))
    } else {
        Ok(-lower_quantile(1.0 - p))
    }
}

/// Normal quantile of an upper-tail probability, i.e. `normal_quantile(1 - q)`
/// without forming `1 - q`.
pub(crate) fn normal_upper_quantile(q: f64) -> Result<f64> {
    if q.is_nan() || q <= 0.0 || q >= 1.0 {
        return Err(Error::Domain {
            what: "upper-tail probability must lie in (0, 1)",
            value: q,
        });
    }
    let q = q.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP);
    if q == 0.5 {
        Ok(0.0)
    } else if q < 0.5 {
        Ok(-lower_quantile(q))
    } else {
        Ok(lower_quantile(1.0 - q))
    }
}

/// Continued fraction for the incomplete beta (Numerical Recipes `betacf`).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`, with `y = 1 - x` supplied
/// separately so callers can avoid cancellation.
fn incomplete_beta(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let front = (a * x.ln() + b * y.ln() - ln_beta).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, y) / b
    }
}

/// `P(T > |t|)` for a t distribution with `df` degrees of freedom.
fn t_upper_tail_abs(t: f64, df: f64) -> f64 {
    let t2 = t * t;
    let x = df / (df + t2);
    let y = t2 / (df + t2);
    0.5 * incomplete_beta(0.5 * df, 0.5, x, y)
}

fn check_df(df: u64) -> Result<f64> {
    if df < 1 {
        return Err(Error::Domain {
            what: "t distribution requires df >= 1",
            value: df as f64,
        });
    }
    Ok(df as f64)
}

/// Student t cumulative distribution function with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: u64) -> Result<f64> {
    let dff = check_df(df)?;
    if t.is_nan() {
        return Err(Error::Domain {
            what: "t_cdf requires a non-NaN argument",
            value: t,
        });
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 1.0 } else { 0.0 });
    }
    let tail = t_upper_tail_abs(t, dff);
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

/// Maps a t statistic to the standard-normal scale, `Phi^-1(F_df(t))`.
///
/// Works from the tail probability on the side of `t` so the transform is
/// exactly odd in `t` and keeps precision for large `|t|`.
pub fn t_to_normal(t: f64, df: u64) -> Result<f64> {
    let dff = check_df(df)?;
    if !t.is_finite() {
        return Err(Error::Domain {
            what: "t statistic must be finite",
            value: t,
        });
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let tail = t_upper_tail_abs(t, dff).max(QUANTILE_CLAMP);
    let z = normal_upper_quantile(tail)?;
    Ok(if t > 0.0 { z } else { -z })
}

/// Upper-tail probability of a chi-square variate with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || x.is_nan() {
        return Err(Error::Domain {
            what: "chi_square_sf requires df > 0 and non-NaN x",
            value: df,
        });
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    let a = 0.5 * df;
    Ok(incomplete_gamma(a, 0.5 * x, ln_gamma(a)).1.clamp(0.0, 1.0))
}

/// Order statistic at index `ceil(q * len) - 1` (clamped) of the sorted values.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain {
            what: "percentile of an empty sequence",
            value: 0.0,
        });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain {
            what: "percentile fraction must lie in [0, 1]",
            value: q,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    let idx = rank.saturating_sub(1).min(sorted.len() - 1);
    Ok(sorted[idx])
}

/// Population mean and standard deviation (divisor = count).
pub fn mean_and_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Reals at 12 significant digits, trailing zeros trimmed; NaN as `NA`.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator type behind every [`RandomStream`].
pub type StreamRng = ChaCha8Rng;

/// A reproducible random stream addressed by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose 64-bit stream selector makes the streams of one
/// seed independent; the draws of stream `b` never depend on how many other
/// streams were consumed first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RandomStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RandomStream { seed, stream_id }
    }

    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// A new family of streams keyed by `domain`, independent of this one.
    /// Use it to give a sub-task its own stream space: `stream.fork(tag).at(i)`.
    pub fn fork(&self, domain: u64) -> RandomStream {
        let seed = splitmix64(splitmix64(self.seed ^ 0xA076_1D64_78BD_642F) ^ self.stream_id);
        RandomStream::new(splitmix64(seed ^ domain), 0)
    }

    /// Sibling stream with the same seed.
    pub fn at(&self, stream_id: u64) -> RandomStream {
        RandomStream::new(self.seed, stream_id)
    }
}
