//! Per-gene scoring functions and gene-set summary statistics.
//!
//! The maxmean statistic averages the positive parts and the negative parts
//! of a set's z-values separately, both over all `m` members, and keeps the
//! larger of the two. A few extreme genes therefore cannot dominate it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gene_scores::ScoreMoments;

/// Per-gene score `s(z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFunction {
    Identity,
    Absolute,
    PositivePart,
    NegativePart,
}

impl ScoreFunction {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            ScoreFunction::Identity => z,
            ScoreFunction::Absolute => z.abs(),
            ScoreFunction::PositivePart => z.max(0.0),
            ScoreFunction::NegativePart => -(z.min(0.0)),
        }
    }

    pub fn apply_all(self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.apply(v)).collect()
    }
}

/// Gene-set summary statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetStatisticKind {
    /// Average z.
    Mean,
    /// Average |z|.
    MeanAbs,
    /// Larger of the averaged positive and negative parts.
    #[serde(rename = "maxmean")]
    MaxMean,
    /// Signed two-sample Kolmogorov-Smirnov distance between the set and its complement.
    #[serde(rename = "ks")]
    KsSigned,
}

impl SetStatisticKind {
    pub const ALL: [SetStatisticKind; 4] = [
        SetStatisticKind::Mean,
        SetStatisticKind::MeanAbs,
        SetStatisticKind::MaxMean,
        SetStatisticKind::KsSigned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SetStatisticKind::Mean => "mean",
            SetStatisticKind::MeanAbs => "mean_abs",
            SetStatisticKind::MaxMean => "maxmean",
            SetStatisticKind::KsSigned => "ks",
        }
    }

    /// Score functions whose catalog moments standardize this statistic.
    pub fn score_functions(self) -> &'static [ScoreFunction] {
        match self {
            SetStatisticKind::Mean => &[ScoreFunction::Identity],
            SetStatisticKind::MeanAbs => &[ScoreFunction::Absolute],
            SetStatisticKind::MaxMean => {
                &[ScoreFunction::PositivePart, ScoreFunction::NegativePart]
            }
            SetStatisticKind::KsSigned => &[],
        }
    }

    /// Statistics whose sign carries the direction of enrichment.
    pub fn is_signed(self) -> bool {
        matches!(self, SetStatisticKind::Mean | SetStatisticKind::KsSigned)
    }
}

impl fmt::Display for SetStatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SetStatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(SetStatisticKind::Mean),
            "mean_abs" | "mean.abs" | "meanabs" | "absmean" => Ok(SetStatisticKind::MeanAbs),
            "maxmean" => Ok(SetStatisticKind::MaxMean),
            "ks" | "ks_signed" => Ok(SetStatisticKind::KsSigned),
            other => Err(Error::Invalid(format!("unknown statistic {other:?}"))),
        }
    }
}

/// Direction of enrichment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Positive,
    Negative,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Positive => "positive",
            Side::Negative => "negative",
        }
    }

    pub fn of(value: f64) -> Side {
        if value < 0.0 {
            Side::Negative
        } else {
            Side::Positive
        }
    }
}

fn nonempty(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        Err(Error::Invalid("gene-set has no members".into()))
    } else {
        Ok(())
    }
}

/// `sum f(z_i) / m` over the set.
pub fn set_mean(z_set: &[f64], f: ScoreFunction) -> Result<f64> {
    nonempty(z_set)?;
    Ok(z_set.iter().map(|&z| f.apply(z)).sum::<f64>() / z_set.len() as f64)
}

/// Result of [`set_maxmean`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxMean {
    pub value: f64,
    pub side: Side,
    /// Average positive part.
    pub s_plus: f64,
    /// Average negative part (a nonnegative number).
    pub s_minus: f64,
}

impl MaxMean {
    /// Picks the larger part; ties go to the positive side.
    pub fn from_parts(s_plus: f64, s_minus: f64) -> MaxMean {
        let (value, side) = if s_minus > s_plus {
            (s_minus, Side::Negative)
        } else {
            (s_plus, Side::Positive)
        };
        MaxMean {
            value,
            side,
            s_plus,
            s_minus,
        }
    }
}

pub fn set_maxmean(z_set: &[f64]) -> Result<MaxMean> {
    nonempty(z_set)?;
    let (plus, minus) = z_set.iter().fold((0.0, 0.0), |(p, n), &z| {
        (
            p + ScoreFunction::PositivePart.apply(z),
            n + ScoreFunction::NegativePart.apply(z),
        )
    });
    let m = z_set.len() as f64;
    Ok(MaxMean::from_parts(plus / m, minus / m))
}

/// Signed two-sample KS statistic.
///
/// With `D(x) = F_complement(x) - F_set(x)` over right-continuous empirical
/// CDFs, returns `D(x*)` at the breakpoint maximizing `|D|`, the smallest
/// such `x*` on ties. Positive values mean the set sits at larger values.
pub fn set_ks_signed(z_set: &[f64], z_complement: &[f64]) -> Result<f64> {
    nonempty(z_set)?;
    if z_complement.is_empty() {
        return Err(Error::Invalid("complement of the gene-set is empty".into()));
    }
    let mut a = z_set.to_vec();
    let mut b = z_complement.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(ks_signed_sorted(&a, &b))
}

/// KS walk over two sorted samples.
pub(crate) fn ks_signed_sorted(set: &[f64], complement: &[f64]) -> f64 {
    let (na, nb) = (set.len() as f64, complement.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < set.len() || j < complement.len() {
        let x = match (set.get(i), complement.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < set.len() && set[i] <= x {
            i += 1;
        }
        while j < complement.len() && complement[j] <= x {
            j += 1;
        }
        let d = j as f64 / nb - i as f64 / na;
        if d.abs() > best.abs() {
            best = d;
        }
    }
    best
}

/// Signed KS of a set against its complement, given the full z vector
/// sorted once along with each value's gene index.
pub(crate) struct SortedScores {
    /// `(z, gene index)` ascending in z.
    order: Vec<(f64, usize)>,
}

impl SortedScores {
    pub(crate) fn new(z: &[f64]) -> Self {
        let mut order: Vec<(f64, usize)> = z.iter().copied().zip(0..).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        SortedScores { order }
    }

    /// KS of the members flagged in `in_set` (indexed by gene) against the rest.
    /// `scratch` must be all-false on entry and is left all-false.
    pub(crate) fn ks_signed(&self, members: &[usize], in_set: &mut [bool]) -> f64 {
        for &i in members {
            in_set[i] = true;
        }
        let na = members.len() as f64;
        let nb = (self.order.len() - members.len()) as f64;
        let (mut ca, mut cb) = (0usize, 0usize);
        let mut best = 0.0f64;
        let mut k = 0;
        while k < self.order.len() {
            let x = self.order[k].0;
            while k < self.order.len() && self.order[k].0 == x {
                if in_set[self.order[k].1] {
                    ca += 1;
                } else {
                    cb += 1;
                }
                k += 1;
            }
            let d = cb as f64 / nb - ca as f64 / na;
            if d.abs() > best.abs() {
                best = d;
            }
        }
        for &i in members {
            in_set[i] = false;
        }
        best
    }
}

/// Per-set value of a statistic computed from the full z vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetValue {
    /// The raw statistic (maxmean value, mean, mean |z| or signed KS).
    pub raw: f64,
    pub side: Side,
    /// Maxmean parts; zero for other statistics.
    pub s_plus: f64,
    pub s_minus: f64,
}

/// Evaluates `kind` on the set with gene indices `members`.
pub fn set_statistic(kind: SetStatisticKind, z: &[f64], members: &[usize]) -> Result<SetValue> {
    if members.is_empty() {
        return Err(Error::Invalid("gene-set has no members".into()));
    }
    let z_set: Vec<f64> = members.iter().map(|&i| z[i]).collect();
    match kind {
        SetStatisticKind::Mean => {
            let raw = set_mean(&z_set, ScoreFunction::Identity)?;
            Ok(SetValue {
                raw,
                side: Side::of(raw),
                s_plus: 0.0,
                s_minus: 0.0,
            })
        }
        SetStatisticKind::MeanAbs => {
            let raw = set_mean(&z_set, ScoreFunction::Absolute)?;
            Ok(SetValue {
                raw,
                side: Side::Positive,
                s_plus: 0.0,
                s_minus: 0.0,
            })
        }
        SetStatisticKind::MaxMean => {
            let mm = set_maxmean(&z_set)?;
            Ok(SetValue {
                raw: mm.value,
                side: mm.side,
                s_plus: mm.s_plus,
                s_minus: mm.s_minus,
            })
        }
        SetStatisticKind::KsSigned => {
            let mut flag = vec![false; z.len()];
            for &i in members {
                flag[i] = true;
            }
            let complement: Vec<f64> = z
                .iter()
                .zip(&flag)
                .filter(|(_, &f)| !f)
                .map(|(&v, _)| v)
                .collect();
            let raw = set_ks_signed(&z_set, &complement)?;
            Ok(SetValue {
                raw,
                side: Side::of(raw),
                s_plus: 0.0,
                s_minus: 0.0,
            })
        }
    }
}

/// Mean and standard deviation of a set statistic under row randomization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationMoments {
    pub mu: f64,
    pub sigma: f64,
}

impl RandomizationMoments {
    pub fn is_degenerate(&self) -> bool {
        !(self.sigma > 0.0)
    }

    /// `(value - mu) / sigma`; errors when sigma is zero.
    pub fn standardize(&self, value: f64) -> Result<f64> {
        if self.is_degenerate() {
            return Err(Error::Degenerate(format!(
                "randomization standard deviation is {}",
                self.sigma
            )));
        }
        Ok((value - self.mu) / self.sigma)
    }
}

/// Analytic row-randomization moments of the average of `f(z)` over a
/// random m-subset: `(mean_s, stdev_s / sqrt(m))`, without finite-population
/// correction. `moments` are the catalog moments of `f(z)`.
pub fn randomization_moments(moments: &ScoreMoments, m: usize) -> Result<RandomizationMoments> {
    if m == 0 {
        return Err(Error::Invalid("set size must be at least 1".into()));
    }
    if moments.count < 2 {
        return Err(Error::BasisTooSmall {
            size: moments.count,
        });
    }
    Ok(RandomizationMoments {
        mu: moments.mean,
        sigma: moments.stdev / (m as f64).sqrt(),
    })
}

/// Analytic moments for a whole statistic. Mean-type statistics map to
/// their score function; maxmean is standardized part by part and KS has
/// no closed form, so both return an error here.
pub fn statistic_randomization_moments(
    kind: SetStatisticKind,
    z: &[f64],
    basis: &[usize],
    m: usize,
) -> Result<RandomizationMoments> {
    let f = match kind {
        SetStatisticKind::Mean => ScoreFunction::Identity,
        SetStatisticKind::MeanAbs => ScoreFunction::Absolute,
        SetStatisticKind::MaxMean => {
            return Err(Error::EmpiricalMomentsRequired(
                "maxmean (standardize s_plus and s_minus separately)",
            ))
        }
        SetStatisticKind::KsSigned => return Err(Error::EmpiricalMomentsRequired("ks")),
    };
    let values: Vec<f64> = basis.iter().map(|&i| f.apply(z[i])).collect();
    let moments = crate::gene_scores::moments_of(&values)?;
    randomization_moments(&moments, m)
}
