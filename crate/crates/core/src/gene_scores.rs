//! Per-gene two-sample t statistics and their z-value transform.

use serde::{Deserialize, Serialize};

use crate::data_model::{Class, ExpressionMatrix, ResolvedCatalog};
use crate::error::{Error, Result};
use crate::numerics::{mean_and_stdev, t_to_normal};

/// Per-gene scores: t statistics, z-values and the t degrees of freedom.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneScores {
    pub t: Vec<f64>,
    pub z: Vec<f64>,
    pub df: u64,
}

/// Options for the per-gene t statistic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TOptions {
    /// Replace the pooled sd by `max(sp, 1e-8 * median nonzero sp)`.
    pub variance_floor: bool,
}

const FLOOR_FRACTION: f64 = 1e-8;

/// Pooled-variance t for every gene, class 2 minus class 1, using the
/// matrix's own labels.
pub fn two_sample_t(matrix: &ExpressionMatrix, options: TOptions) -> Result<Vec<f64>> {
    two_sample_t_with_labels(matrix, matrix.labels(), options)
}

/// As [`two_sample_t`] but with an arbitrary labelling of the columns.
pub fn two_sample_t_with_labels(
    matrix: &ExpressionMatrix,
    labels: &[Class],
    options: TOptions,
) -> Result<Vec<f64>> {
    let n = matrix.n_samples();
    if labels.len() != n {
        return Err(Error::Labels(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    let n2 = labels.iter().filter(|&&c| c == Class::Second).count();
    let n1 = n - n2;
    if n1 < 2 || n2 < 2 {
        return Err(Error::Labels(format!(
            "both classes need at least 2 samples (have {n1} and {n2})"
        )));
    }
    let scale = (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt();
    let df = (n - 2) as f64;

    let mut diffs = Vec::with_capacity(matrix.n_genes());
    let mut sds = Vec::with_capacity(matrix.n_genes());
    for row in matrix.rows() {
        let (mut s1, mut s2) = (0.0, 0.0);
        for (&x, &c) in row.iter().zip(labels) {
            match c {
                Class::First => s1 += x,
                Class::Second => s2 += x,
            }
        }
        let (m1, m2) = (s1 / n1 as f64, s2 / n2 as f64);
        let mut ss = 0.0;
        for (&x, &c) in row.iter().zip(labels) {
            let d = match c {
                Class::First => x - m1,
                Class::Second => x - m2,
            };
            ss += d * d;
        }
        diffs.push(m2 - m1);
        sds.push((ss / df).sqrt());
    }

    if options.variance_floor {
        let mut nonzero: Vec<f64> = sds.iter().copied().filter(|&s| s > 0.0).collect();
        if nonzero.is_empty() {
            return Err(Error::ZeroVariance {
                gene_ids: matrix.gene_ids().to_vec(),
            });
        }
        nonzero.sort_by(f64::total_cmp);
        let k = nonzero.len();
        let median = if k % 2 == 1 {
            nonzero[k / 2]
        } else {
            0.5 * (nonzero[k / 2 - 1] + nonzero[k / 2])
        };
        let floor = FLOOR_FRACTION * median;
        for sd in &mut sds {
            *sd = sd.max(floor);
        }
    } else {
        let zero: Vec<String> = sds
            .iter()
            .zip(matrix.gene_ids())
            .filter(|(&sd, _)| sd == 0.0)
            .map(|(_, id)| id.clone())
            .collect();
        if !zero.is_empty() {
            return Err(Error::ZeroVariance { gene_ids: zero });
        }
    }
    Ok(diffs
        .iter()
        .zip(&sds)
        .map(|(d, sd)| d / (sd * scale))
        .collect())
}

/// `z_i = Phi^-1(F_df(t_i))`, elementwise.
pub fn t_to_z(t: &[f64], df: u64) -> Result<Vec<f64>> {
    t.iter().map(|&ti| t_to_normal(ti, df)).collect()
}

/// t statistics and z-values for the matrix under its own labels.
pub fn gene_scores(matrix: &ExpressionMatrix, options: TOptions) -> Result<GeneScores> {
    gene_scores_with_labels(matrix, matrix.labels(), options)
}

pub fn gene_scores_with_labels(
    matrix: &ExpressionMatrix,
    labels: &[Class],
    options: TOptions,
) -> Result<GeneScores> {
    let t = two_sample_t_with_labels(matrix, labels, options)?;
    let df = (matrix.n_samples() - 2) as u64;
    let z = t_to_z(&t, df)?;
    Ok(GeneScores { t, z, df })
}

/// Which genes enter the catalog-wide score moments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentsMode {
    /// Members of every set, a gene counted once per set containing it.
    #[default]
    Multiplicity,
    /// Every gene of the matrix once.
    AllGenes,
}

/// Catalog-wide mean and population standard deviation of per-gene scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMoments {
    pub mean: f64,
    pub stdev: f64,
    /// Number of scores in the basis.
    pub count: usize,
}

/// Mean and stdev of `s` over the basis chosen by `mode`.
pub fn catalog_score_moments(
    s: &[f64],
    resolved: &ResolvedCatalog,
    mode: MomentsMode,
) -> Result<ScoreMoments> {
    let basis: Vec<f64> = match mode {
        MomentsMode::AllGenes => s.to_vec(),
        MomentsMode::Multiplicity => resolved
            .sets
            .iter()
            .flat_map(|set| set.row_indices.iter().map(|&i| s[i]))
            .collect(),
    };
    moments_of(&basis)
}

pub(crate) fn moments_of(basis: &[f64]) -> Result<ScoreMoments> {
    if basis.len() < 2 {
        return Err(Error::BasisTooSmall { size: basis.len() });
    }
    let (mean, stdev) = mean_and_stdev(basis);
    Ok(ScoreMoments {
        mean,
        stdev,
        count: basis.len(),
    })
}
