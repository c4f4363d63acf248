//! Permutation inference with restandardization.
//!
//! Every dataset (the observed one and each column permutation) is scored the
//! same way: per-gene t statistics, z-values, catalog-wide moments of the
//! per-gene scores, then each set statistic standardized by its row
//! randomization mean and standard deviation. A set's p-value compares its
//! observed standardized score against the standardized scores of the same
//! set on the permuted datasets; permutation values are never pooled across
//! sets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Class, ExpressionMatrix, ResolvedCatalog};
use crate::error::{Error, Result};
use crate::gene_scores::{
    catalog_score_moments, gene_scores_with_labels, moments_of, GeneScores, MomentsMode,
    ScoreMoments, TOptions,
};
use crate::numerics::{mean_and_stdev, RandomStream};
use crate::set_statistics::{
    randomization_moments, set_statistic, MaxMean, RandomizationMoments, ScoreFunction,
    SetStatisticKind, SetValue, Side, SortedScores,
};

/// Stream id reserved for the row-randomization draws behind KS moments.
const KS_DRAW_STREAM: u64 = u64::MAX;

/// Default number of permutations.
pub const DEFAULT_PERMUTATIONS: usize = 1000;

/// Default number of random gene-sets drawn per set size for KS moments.
pub const DEFAULT_KS_DRAWS: usize = 200;

/// Counting convention for permutation p-values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueConvention {
    /// `#{S'* >= S'} / B`.
    #[default]
    Weak,
    /// `(#{S'* >= S'} + 1) / (B + 1)`.
    AddOne,
}

impl FromStr for PValueConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(PValueConvention::Weak),
            "add_one" | "add-one" | "addone" => Ok(PValueConvention::AddOne),
            other => Err(Error::Invalid(format!(
                "unknown p-value convention {other:?}"
            ))),
        }
    }
}

/// Which moments standardize the permuted datasets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentsScope {
    /// Each permuted dataset uses its own catalog moments.
    #[default]
    PerPermutation,
    /// One set of moments pooled over all permuted datasets.
    Pooled,
}

impl FromStr for MomentsScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_permutation" | "per-permutation" => Ok(MomentsScope::PerPermutation),
            "pooled" => Ok(MomentsScope::Pooled),
            other => Err(Error::Invalid(format!("unknown moments scope {other:?}"))),
        }
    }
}

impl FromStr for MomentsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplicity" => Ok(MomentsMode::Multiplicity),
            "all_genes" | "all-genes" => Ok(MomentsMode::AllGenes),
            other => Err(Error::Invalid(format!("unknown moments mode {other:?}"))),
        }
    }
}

impl fmt::Display for MomentsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MomentsMode::Multiplicity => "multiplicity",
            MomentsMode::AllGenes => "all_genes",
        })
    }
}

/// Tunables of the permutation analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub permutations: usize,
    pub seed: u64,
    pub moments_mode: MomentsMode,
    pub moments_scope: MomentsScope,
    /// Standardize by row-randomization moments; `false` compares raw S with raw S*.
    pub restandardize: bool,
    pub pvalue_convention: PValueConvention,
    /// Random gene-sets per set size used for KS moments.
    pub ks_draws: usize,
    pub t_options: TOptions,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            permutations: DEFAULT_PERMUTATIONS,
            seed: 1,
            moments_mode: MomentsMode::Multiplicity,
            moments_scope: MomentsScope::PerPermutation,
            restandardize: true,
            pvalue_convention: PValueConvention::Weak,
            ks_draws: DEFAULT_KS_DRAWS,
            t_options: TOptions::default(),
        }
    }
}

/// B relabelings of the samples, each keeping the class sizes.
///
/// Permutation `b` is drawn from stream `(seed, b)` alone, so the plan is
/// fully determined by `(seed, B, n1, n2)` and can be rebuilt in any order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationPlan {
    seed: u64,
    n1: usize,
    n2: usize,
    permutations: Vec<Vec<Class>>,
}

impl PermutationPlan {
    pub fn new(n1: usize, n2: usize, permutations: usize, seed: u64) -> Self {
        let base: Vec<Class> = std::iter::repeat_n(Class::First, n1)
            .chain(std::iter::repeat_n(Class::Second, n2))
            .collect();
        let permutations = (0..permutations as u64)
            .map(|b| {
                let mut labels = base.clone();
                labels.shuffle(&mut RandomStream::new(seed, b).rng());
                labels
            })
            .collect();
        PermutationPlan {
            seed,
            n1,
            n2,
            permutations,
        }
    }

    pub fn for_matrix(matrix: &ExpressionMatrix, permutations: usize, seed: u64) -> Self {
        let (n1, n2) = matrix.class_sizes();
        PermutationPlan::new(n1, n2, permutations, seed)
    }

    /// A plan from explicit labelings; each must keep the class sizes `(n1, n2)`.
    pub fn from_labelings(n1: usize, n2: usize, permutations: Vec<Vec<Class>>) -> Result<Self> {
        for (b, p) in permutations.iter().enumerate() {
            let k2 = p.iter().filter(|&&c| c == Class::Second).count();
            if p.len() != n1 + n2 || k2 != n2 {
                return Err(Error::Invalid(format!(
                    "permutation {b} does not preserve class sizes ({n1}, {n2})"
                )));
            }
        }
        Ok(PermutationPlan {
            seed: 0,
            n1,
            n2,
            permutations,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn class_sizes(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn len(&self) -> usize {
        self.permutations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutations.is_empty()
    }

    pub fn labelings(&self) -> &[Vec<Class>] {
        &self.permutations
    }
}

/// Draws `draws` uniform m-subsets of `0..n` from `stream`.
fn random_subsets(
    n: usize,
    m: usize,
    draws: usize,
    stream: RandomStream,
) -> Result<Vec<Vec<usize>>> {
    if m > n {
        return Err(Error::SubsetTooLarge { m, n });
    }
    if m == 0 {
        return Err(Error::Invalid("subset size must be at least 1".into()));
    }
    let mut rng = stream.rng();
    Ok((0..draws)
        .map(|_| index::sample(&mut rng, n, m).into_vec())
        .collect())
}

/// Statistic values `S-dagger` of `draws` uniformly random m-subsets of the genes.
pub fn row_randomization_scores(
    z: &[f64],
    m: usize,
    kind: SetStatisticKind,
    draws: usize,
    stream: RandomStream,
) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::Invalid(
            "row randomization needs at least one draw".into(),
        ));
    }
    let subsets = random_subsets(z.len(), m, draws, stream)?;
    evaluate_subsets(z, kind, &subsets)
}

fn evaluate_subsets(z: &[f64], kind: SetStatisticKind, subsets: &[Vec<usize>]) -> Result<Vec<f64>> {
    if kind == SetStatisticKind::KsSigned {
        let sorted = SortedScores::new(z);
        let mut scratch = vec![false; z.len()];
        if subsets.first().is_some_and(|s| s.len() == z.len()) {
            return Err(Error::Invalid("KS needs a nonempty complement".into()));
        }
        return Ok(subsets
            .iter()
            .map(|s| sorted.ks_signed(s, &mut scratch))
            .collect());
    }
    subsets
        .iter()
        .map(|s| set_statistic(kind, z, s).map(|v| v.raw))
        .collect()
}

/// Moments that standardize one dataset's set statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CatalogMoments {
    /// Catalog moments of each per-gene score function.
    pub scores: Vec<(ScoreFunction, ScoreMoments)>,
    /// Empirical row-randomization moments of the KS statistic by set size.
    pub ks: BTreeMap<usize, RandomizationMoments>,
}

impl CatalogMoments {
    pub fn score(&self, f: ScoreFunction) -> Option<&ScoreMoments> {
        self.scores.iter().find(|(g, _)| *g == f).map(|(_, m)| m)
    }

    fn randomization(&self, f: ScoreFunction, m: usize) -> Result<RandomizationMoments> {
        let moments = self
            .score(f)
            .ok_or_else(|| Error::Invalid(format!("no catalog moments for {f:?}")))?;
        randomization_moments(moments, m)
    }

    /// Averages moments over several datasets: pooled mean and variance of
    /// the per-gene scores, mean and root-mean-square sigma for KS.
    pub fn pooled<'a>(
        parts: impl IntoIterator<Item = &'a CatalogMoments>,
    ) -> Result<CatalogMoments> {
        let mut sums: Vec<(ScoreFunction, f64, f64, usize)> = Vec::new();
        let mut ks: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
        for part in parts {
            for (f, m) in &part.scores {
                let n = m.count as f64;
                let entry = match sums.iter_mut().find(|e| e.0 == *f) {
                    Some(e) => e,
                    None => {
                        sums.push((*f, 0.0, 0.0, 0));
                        sums.last_mut().unwrap()
                    }
                };
                entry.1 += m.mean * n;
                entry.2 += (m.stdev * m.stdev + m.mean * m.mean) * n;
                entry.3 += m.count;
            }
            for (&size, rm) in &part.ks {
                let e = ks.entry(size).or_insert((0.0, 0.0, 0));
                e.0 += rm.mu;
                e.1 += rm.sigma * rm.sigma;
                e.2 += 1;
            }
        }
        if sums.is_empty() && ks.is_empty() {
            return Err(Error::NoValidPermutations);
        }
        Ok(CatalogMoments {
            scores: sums
                .into_iter()
                .map(|(f, s, ss, n)| {
                    let mean = s / n as f64;
                    let var = (ss / n as f64 - mean * mean).max(0.0);
                    (
                        f,
                        ScoreMoments {
                            mean,
                            stdev: var.sqrt(),
                            count: n,
                        },
                    )
                })
                .collect(),
            ks: ks
                .into_iter()
                .map(|(size, (mu, s2, n))| {
                    (
                        size,
                        RandomizationMoments {
                            mu: mu / n as f64,
                            sigma: (s2 / n as f64).sqrt(),
                        },
                    )
                })
                .collect(),
        })
    }
}

/// Random gene-sets shared by every dataset of one analysis, keyed by set size.
#[derive(Clone, Debug, Default)]
struct KsDraws {
    subsets: BTreeMap<usize, Vec<Vec<usize>>>,
}

impl KsDraws {
    fn new(n_genes: usize, resolved: &ResolvedCatalog, draws: usize, seed: u64) -> Result<Self> {
        if draws < 2 {
            return Err(Error::Invalid(
                "KS moments need at least 2 row-randomization draws".into(),
            ));
        }
        let mut subsets = BTreeMap::new();
        for set in &resolved.sets {
            let m = set.size();
            if m >= n_genes {
                return Err(Error::Invalid(format!(
                    "gene-set {} covers every gene; KS needs a nonempty complement",
                    set.name
                )));
            }
            if let std::collections::btree_map::Entry::Vacant(e) = subsets.entry(m) {
                let stream = RandomStream::new(seed, KS_DRAW_STREAM).fork(m as u64);
                e.insert(random_subsets(n_genes, m, draws, stream)?);
            }
        }
        Ok(KsDraws { subsets })
    }
}

/// Computes the moments of one dataset's z-values.
fn dataset_moments(
    z: &[f64],
    resolved: &ResolvedCatalog,
    kinds: &[SetStatisticKind],
    mode: MomentsMode,
    ks_draws: Option<&KsDraws>,
) -> Result<CatalogMoments> {
    let mut out = CatalogMoments::default();
    for kind in kinds {
        for &f in kind.score_functions() {
            if out.score(f).is_none() {
                let s = f.apply_all(z);
                out.scores
                    .push((f, catalog_score_moments(&s, resolved, mode)?));
            }
        }
        if *kind == SetStatisticKind::KsSigned {
            let draws = ks_draws.expect("KS draws prepared for KS statistic");
            for (&m, subsets) in &draws.subsets {
                let values = evaluate_subsets(z, SetStatisticKind::KsSigned, subsets)?;
                let (mu, sigma) = mean_and_stdev(&values);
                out.ks.insert(m, RandomizationMoments { mu, sigma });
            }
        }
    }
    Ok(out)
}

/// One set's score on one dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetScore {
    /// Raw statistic.
    pub value: SetValue,
    /// Standardized statistic `S'` (the raw statistic when not restandardizing).
    pub standardized: f64,
    pub side: Side,
    /// Value whose upper tail defines `p`.
    pub test: f64,
    /// Direction-carrying score used for `p_lo` / `p_hi`.
    pub signed: f64,
}

fn finish_score(
    kind: SetStatisticKind,
    value: SetValue,
    standardized: f64,
    side: Side,
) -> SetScore {
    let signed = match kind {
        SetStatisticKind::MaxMean => match side {
            Side::Positive => standardized,
            Side::Negative => -standardized,
        },
        _ => standardized,
    };
    let test = match kind {
        SetStatisticKind::KsSigned => standardized.abs(),
        _ => standardized,
    };
    SetScore {
        value,
        standardized,
        side,
        test,
        signed,
    }
}

/// Standardizes one set statistic by its row-randomization moments.
///
/// Mean and mean |z| use `(S - mean_s) / (stdev_s / sqrt(m))` with the
/// catalog moments of the matching score; maxmean standardizes the positive
/// and negative parts separately and keeps the larger; KS uses empirical
/// row-randomization moments for sets of size m.
pub fn standardize_score(
    kind: SetStatisticKind,
    z: &[f64],
    members: &[usize],
    moments: &CatalogMoments,
) -> Result<SetScore> {
    let value = set_statistic(kind, z, members)?;
    let m = members.len();
    match kind {
        SetStatisticKind::Mean | SetStatisticKind::MeanAbs => {
            let f = kind.score_functions()[0];
            let s = moments.randomization(f, m)?.standardize(value.raw)?;
            let side = if kind == SetStatisticKind::Mean {
                Side::of(s)
            } else {
                Side::Positive
            };
            Ok(finish_score(kind, value, s, side))
        }
        SetStatisticKind::MaxMean => {
            let plus = moments
                .randomization(ScoreFunction::PositivePart, m)?
                .standardize(value.s_plus)?;
            let minus = moments
                .randomization(ScoreFunction::NegativePart, m)?
                .standardize(value.s_minus)?;
            let parts = MaxMean::from_parts(plus, minus);
            Ok(finish_score(kind, value, parts.value, parts.side))
        }
        SetStatisticKind::KsSigned => {
            let rm = moments
                .ks
                .get(&m)
                .ok_or(Error::EmpiricalMomentsRequired("ks"))?;
            let s = rm.standardize(value.raw)?;
            Ok(finish_score(kind, value, s, Side::of(s)))
        }
    }
}

/// Score without standardization: S' = S.
pub fn raw_score(kind: SetStatisticKind, z: &[f64], members: &[usize]) -> Result<SetScore> {
    let value = set_statistic(kind, z, members)?;
    Ok(finish_score(kind, value, value.raw, value.side))
}

/// Restandardized permutation value
/// `S** = mean_s + (stdev_s / stdev*) (S* - mean*)`.
pub fn restandardized_value(s_star: f64, observed: &ScoreMoments, permuted: &ScoreMoments) -> f64 {
    observed.mean + observed.stdev / permuted.stdev * (s_star - permuted.mean)
}

/// Everything computed on one dataset.
struct DatasetResult {
    z: Vec<f64>,
    moments: Option<CatalogMoments>,
}

fn dataset_z(
    matrix: &ExpressionMatrix,
    labels: &[Class],
    t_options: TOptions,
) -> Result<GeneScores> {
    gene_scores_with_labels(matrix, labels, t_options)
}

/// Scores of every set for one statistic; `None` marks a degenerate cell.
fn score_sets(
    kind: SetStatisticKind,
    z: &[f64],
    resolved: &ResolvedCatalog,
    moments: Option<&CatalogMoments>,
) -> Result<Vec<Option<SetScore>>> {
    resolved
        .sets
        .iter()
        .map(|set| {
            let scored = match moments {
                Some(mo) => standardize_score(kind, z, &set.row_indices, mo),
                None => raw_score(kind, z, &set.row_indices),
            };
            match scored {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.is_degenerate() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Permuted standardized scores: `values[k][b]` is set k under permutation b.
#[derive(Clone, Debug)]
pub struct PermutationScores {
    pub kind: SetStatisticKind,
    pub values: Vec<Vec<Option<SetScore>>>,
    /// Cells whose statistic was degenerate (excluded from p-values).
    pub degenerate_cells: usize,
}

impl PermutationScores {
    /// `S'*` values of set `k`, degenerate cells as NaN.
    pub fn standardized_row(&self, k: usize) -> Vec<f64> {
        self.values[k]
            .iter()
            .map(|c| c.map_or(f64::NAN, |s| s.standardized))
            .collect()
    }
}

/// Shared machinery for the observed dataset and its permutations.
struct Engine<'a> {
    matrix: &'a ExpressionMatrix,
    resolved: &'a ResolvedCatalog,
    kinds: &'a [SetStatisticKind],
    config: &'a InferenceConfig,
    ks: Option<KsDraws>,
}

impl<'a> Engine<'a> {
    fn new(
        matrix: &'a ExpressionMatrix,
        resolved: &'a ResolvedCatalog,
        kinds: &'a [SetStatisticKind],
        config: &'a InferenceConfig,
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Invalid("no statistics requested".into()));
        }
        let ks = if config.restandardize && kinds.contains(&SetStatisticKind::KsSigned) {
            Some(KsDraws::new(
                matrix.n_genes(),
                resolved,
                config.ks_draws,
                config.seed,
            )?)
        } else {
            None
        };
        Ok(Engine {
            matrix,
            resolved,
            kinds,
            config,
            ks,
        })
    }

    fn dataset(&self, labels: &[Class]) -> Result<(GeneScores, Option<CatalogMoments>)> {
        let scores = dataset_z(self.matrix, labels, self.config.t_options)?;
        let moments = if self.config.restandardize {
            Some(dataset_moments(
                &scores.z,
                self.resolved,
                self.kinds,
                self.config.moments_mode,
                self.ks.as_ref(),
            )?)
        } else {
            None
        };
        Ok((scores, moments))
    }

    /// Permuted dataset; any degeneracy (e.g. zero variance under this
    /// labeling) makes the whole dataset unusable rather than fatal.
    fn permuted(&self, labels: &[Class]) -> Result<Option<DatasetResult>> {
        match self.dataset(labels) {
            Ok((scores, moments)) => Ok(Some(DatasetResult {
                z: scores.z,
                moments,
            })),
            Err(Error::ZeroVariance { .. }) | Err(Error::BasisTooSmall { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Scores every permutation: one entry per statistic.
    fn permutation_scores(&self, plan: &PermutationPlan) -> Result<Vec<PermutationScores>> {
        let k = self.resolved.len();
        let per_perm: Vec<Option<Vec<Vec<Option<SetScore>>>>> = match self.config.moments_scope {
            MomentsScope::PerPermutation => plan
                .labelings()
                .par_iter()
                .map(|labels| {
                    let Some(d) = self.permuted(labels)? else {
                        return Ok(None);
                    };
                    self.kinds
                        .iter()
                        .map(|&kind| score_sets(kind, &d.z, self.resolved, d.moments.as_ref()))
                        .collect::<Result<Vec<_>>>()
                        .map(Some)
                })
                .collect::<Result<_>>()?,
            MomentsScope::Pooled => {
                let datasets: Vec<Option<DatasetResult>> = plan
                    .labelings()
                    .par_iter()
                    .map(|labels| self.permuted(labels))
                    .collect::<Result<_>>()?;
                let pooled = if self.config.restandardize {
                    Some(CatalogMoments::pooled(
                        datasets.iter().flatten().filter_map(|d| d.moments.as_ref()),
                    )?)
                } else {
                    None
                };
                datasets
                    .par_iter()
                    .map(|d| {
                        let Some(d) = d else { return Ok(None) };
                        self.kinds
                            .iter()
                            .map(|&kind| score_sets(kind, &d.z, self.resolved, pooled.as_ref()))
                            .collect::<Result<Vec<_>>>()
                            .map(Some)
                    })
                    .collect::<Result<_>>()?
            }
        };

        Ok(self
            .kinds
            .iter()
            .enumerate()
            .map(|(s, &kind)| {
                let mut values = vec![Vec::with_capacity(plan.len()); k];
                let mut degenerate = 0;
                for perm in &per_perm {
                    for (set, row) in values.iter_mut().enumerate() {
                        let cell = perm.as_ref().and_then(|p| p[s][set]);
                        degenerate += usize::from(cell.is_none());
                        row.push(cell);
                    }
                }
                PermutationScores {
                    kind,
                    values,
                    degenerate_cells: degenerate,
                }
            })
            .collect())
    }
}

/// Standardized scores of every set on every permuted dataset.
pub fn permutation_scores(
    matrix: &ExpressionMatrix,
    resolved: &ResolvedCatalog,
    kind: SetStatisticKind,
    plan: &PermutationPlan,
    config: &InferenceConfig,
) -> Result<PermutationScores> {
    let kinds = [kind];
    let engine = Engine::new(matrix, resolved, &kinds, config)?;
    Ok(engine.permutation_scores(plan)?.remove(0))
}

/// Permutation p-values of one set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PValues {
    /// Upper tail of the test value.
    pub p: f64,
    /// Lower tail of the signed score.
    pub p_lo: f64,
    /// Upper tail of the signed score.
    pub p_hi: f64,
    /// Number of non-degenerate permutation values used.
    pub valid: usize,
}

fn tail(count: usize, total: usize, convention: PValueConvention) -> f64 {
    match convention {
        PValueConvention::Weak => count as f64 / total as f64,
        PValueConvention::AddOne => (count + 1) as f64 / (total + 1) as f64,
    }
}

/// `#{x* >= x} / B` over the given permutation values.
pub fn upper_tail_pvalue(
    observed: f64,
    permuted: &[f64],
    convention: PValueConvention,
) -> Result<f64> {
    if permuted.is_empty() {
        return Err(Error::NoValidPermutations);
    }
    let count = permuted.iter().filter(|&&v| v >= observed).count();
    Ok(tail(count, permuted.len(), convention))
}

/// p, p_lo and p_hi of an observed score against its permutation values;
/// degenerate (`None`) permutation cells are left out of the denominators.
pub fn pvalues(
    observed: &SetScore,
    permuted: &[Option<SetScore>],
    convention: PValueConvention,
) -> Result<PValues> {
    let valid: Vec<&SetScore> = permuted.iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::NoValidPermutations);
    }
    let n = valid.len();
    let count = |pred: &dyn Fn(&SetScore) -> bool| valid.iter().filter(|s| pred(s)).count();
    Ok(PValues {
        p: tail(count(&|s| s.test >= observed.test), n, convention),
        p_lo: tail(count(&|s| s.signed <= observed.signed), n, convention),
        p_hi: tail(count(&|s| s.signed >= observed.signed), n, convention),
        valid: n,
    })
}

/// Benjamini-Hochberg adjustment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    /// q-values in the input order.
    pub q: Vec<f64>,
    /// Indices with `q <= q_cut`, ascending.
    pub significant: Vec<usize>,
}

/// Step-up q-values `q_(k) = min_{j >= k} K p_(j) / j`, capped at 1.
pub fn bh_fdr(p: &[f64], q_cut: f64) -> BhResult {
    let k = p.len();
    let mut order: Vec<usize> = (0..k).collect();
    let key = |i: usize| if p[i].is_nan() { 1.0 } else { p[i] };
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    let mut q = vec![0.0; k];
    let mut running = f64::INFINITY;
    for (rank, &i) in order.iter().enumerate().rev() {
        let candidate = key(i) * k as f64 / (rank + 1) as f64;
        running = running.min(candidate);
        q[i] = running.min(1.0);
    }
    let significant = (0..k).filter(|&i| q[i] <= q_cut).collect();
    BhResult { q, significant }
}

/// Result row for one gene-set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetResult {
    pub name: String,
    pub m: usize,
    /// Raw statistic S.
    pub raw: f64,
    /// Standardized statistic S'.
    pub standardized: f64,
    pub side: Side,
    pub s_plus: f64,
    pub s_minus: f64,
    pub p: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    /// BH q-value of `p`.
    pub q: f64,
    /// Per-tail BH q-values of `p_lo` and `p_hi`.
    pub q_lo: f64,
    pub q_hi: f64,
    pub valid_permutations: usize,
}

/// Per-set results for one statistic, in catalog order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetScoreTable {
    pub statistic: SetStatisticKind,
    pub permutations: usize,
    pub rows: Vec<SetResult>,
    pub degenerate_cells: usize,
    /// Moments that standardized the observed data (absent without restandardization).
    pub observed_moments: Option<CatalogMoments>,
}

impl SetScoreTable {
    /// Rows ordered by p-value, then name.
    pub fn sorted_rows(&self) -> Vec<&SetResult> {
        let mut rows: Vec<&SetResult> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.p.total_cmp(&b.p).then_with(|| a.name.cmp(&b.name)));
        rows
    }

    pub fn row(&self, name: &str) -> Option<&SetResult> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Indices of sets with `q <= q_cut`.
    pub fn significant(&self, q_cut: f64) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.rows[i].q <= q_cut)
            .collect()
    }
}

/// Output of a full analysis: gene-level scores plus one table per statistic.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub genes: GeneScores,
    pub tables: Vec<SetScoreTable>,
}

/// Observed scores of every set for each statistic.
pub fn observed_scores(
    matrix: &ExpressionMatrix,
    resolved: &ResolvedCatalog,
    kinds: &[SetStatisticKind],
    config: &InferenceConfig,
) -> Result<(GeneScores, Vec<Vec<SetScore>>, Option<CatalogMoments>)> {
    let engine = Engine::new(matrix, resolved, kinds, config)?;
    let (genes, moments) = engine.dataset(matrix.labels())?;
    let mut per_kind = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let cells = score_sets(kind, &genes.z, resolved, moments.as_ref())?;
        let mut scores = Vec::with_capacity(cells.len());
        for (set, cell) in resolved.sets.iter().zip(cells) {
            scores.push(cell.ok_or_else(|| {
                Error::Degenerate(format!(
                    "{kind} for gene-set {} has zero randomization variance",
                    set.name
                ))
            })?);
        }
        per_kind.push(scores);
    }
    Ok((genes, per_kind, moments))
}

/// Runs the whole procedure for several statistics sharing one permutation plan.
pub fn analyze_many(
    matrix: &ExpressionMatrix,
    resolved: &ResolvedCatalog,
    kinds: &[SetStatisticKind],
    plan: &PermutationPlan,
    config: &InferenceConfig,
) -> Result<Analysis> {
    let (n1, n2) = matrix.class_sizes();
    if plan.class_sizes() != (n1, n2) {
        return Err(Error::Invalid(format!(
            "permutation plan class sizes {:?} differ from the data ({n1}, {n2})",
            plan.class_sizes()
        )));
    }
    let (genes, observed, moments) = observed_scores(matrix, resolved, kinds, config)?;
    let engine = Engine::new(matrix, resolved, kinds, config)?;
    let permuted = engine.permutation_scores(plan)?;

    let mut tables = Vec::with_capacity(kinds.len());
    for ((&kind, obs), perm) in kinds.iter().zip(&observed).zip(&permuted) {
        let mut rows = Vec::with_capacity(resolved.len());
        for (k, set) in resolved.sets.iter().enumerate() {
            let pv = pvalues(&obs[k], &perm.values[k], config.pvalue_convention).map_err(|_| {
                Error::Degenerate(format!(
                    "gene-set {} has no valid permutation values",
                    set.name
                ))
            })?;
            rows.push(SetResult {
                name: set.name.clone(),
                m: set.size(),
                raw: obs[k].value.raw,
                standardized: obs[k].standardized,
                side: obs[k].side,
                s_plus: obs[k].value.s_plus,
                s_minus: obs[k].value.s_minus,
                p: pv.p,
                p_lo: pv.p_lo,
                p_hi: pv.p_hi,
                q: f64::NAN,
                q_lo: f64::NAN,
                q_hi: f64::NAN,
                valid_permutations: pv.valid,
            });
        }
        let q = bh_fdr(&rows.iter().map(|r| r.p).collect::<Vec<_>>(), 1.0).q;
        let q_lo = bh_fdr(&rows.iter().map(|r| r.p_lo).collect::<Vec<_>>(), 1.0).q;
        let q_hi = bh_fdr(&rows.iter().map(|r| r.p_hi).collect::<Vec<_>>(), 1.0).q;
        for (i, row) in rows.iter_mut().enumerate() {
            row.q = q[i];
            row.q_lo = q_lo[i];
            row.q_hi = q_hi[i];
        }
        tables.push(SetScoreTable {
            statistic: kind,
            permutations: plan.len(),
            rows,
            degenerate_cells: perm.degenerate_cells,
            observed_moments: moments.clone(),
        });
    }
    Ok(Analysis { genes, tables })
}

/// Runs the whole procedure for one statistic with a plan built from `config`.
pub fn analyze(
    matrix: &ExpressionMatrix,
    resolved: &ResolvedCatalog,
    kind: SetStatisticKind,
    config: &InferenceConfig,
) -> Result<SetScoreTable> {
    let plan = PermutationPlan::for_matrix(matrix, config.permutations, config.seed);
    Ok(analyze_many(matrix, resolved, &[kind], &plan, config)?
        .tables
        .remove(0))
}

/// Catalog moments of `f(z)` for an already computed z vector.
pub fn score_moments(
    z: &[f64],
    f: ScoreFunction,
    resolved: &ResolvedCatalog,
    mode: MomentsMode,
) -> Result<ScoreMoments> {
    catalog_score_moments(&f.apply_all(z), resolved, mode)
}

/// Empirical mean and standard deviation of a sample of statistic values.
pub fn empirical_moments(values: &[f64]) -> Result<RandomizationMoments> {
    let m = moments_of(values)?;
    Ok(RandomizationMoments {
        mu: m.mean,
        sigma: m.stdev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{ExpressionMatrix, ResolvedSet};
    use crate::numerics::chi_square_sf;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn null_matrix(genes: usize, n_per_class: usize, seed: u64) -> ExpressionMatrix {
        let n = 2 * n_per_class;
        let mut rng = RandomStream::new(seed, 0).rng();
        ExpressionMatrix::new(
            (0..genes * n)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect(),
            (0..genes).map(|i| format!("g{i}")).collect(),
            (0..n).map(|j| format!("s{j}")).collect(),
            (0..n)
                .map(|j| {
                    if j < n_per_class {
                        Class::First
                    } else {
                        Class::Second
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    fn blocks(genes: usize, size: usize) -> ResolvedCatalog {
        ResolvedCatalog {
            sets: (0..genes / size)
                .map(|k| ResolvedSet {
                    name: format!("set{:02}", k + 1),
                    row_indices: (k * size..(k + 1) * size).collect(),
                    dropped: 0,
                })
                .collect(),
            excluded: vec![],
        }
    }

    #[test]
    fn standardize_identity_case() {
        let moments = CatalogMoments {
            scores: vec![(
                ScoreFunction::Identity,
                ScoreMoments {
                    mean: 0.0,
                    stdev: 1.0,
                    count: 10,
                },
            )],
            ks: BTreeMap::new(),
        };
        let s = standardize_score(SetStatisticKind::Mean, &[2.0, 5.0], &[0], &moments).unwrap();
        assert_eq!(s.standardized, 2.0);
        assert_eq!(s.side, Side::Positive);
    }

    #[test]
    fn restandardized_value_arithmetic() {
        let observed = ScoreMoments {
            mean: 1.17,
            stdev: 0.82,
            count: 2,
        };
        let permuted = ScoreMoments {
            mean: 0.82,
            stdev: 0.60,
            count: 2,
        };
        let v = restandardized_value(1.0, &observed, &permuted);
        // 1.17 + (0.82 / 0.60) * 0.18 = 1.416
        assert!((v - 1.416).abs() < 1e-12, "{v}");
    }

    #[test]
    fn all_zero_z_is_degenerate() {
        let z = vec![0.0; 10];
        let resolved = blocks(10, 5);
        let moments = dataset_moments(
            &z,
            &resolved,
            &[SetStatisticKind::MaxMean, SetStatisticKind::Mean],
            MomentsMode::Multiplicity,
            None,
        )
        .unwrap();
        for kind in [SetStatisticKind::MaxMean, SetStatisticKind::Mean] {
            let err = standardize_score(kind, &z, &[0, 1], &moments).unwrap_err();
            assert!(err.is_degenerate());
        }
    }

    #[test]
    fn plan_is_deterministic_and_balanced() {
        let a = PermutationPlan::new(3, 5, 20, 9);
        let b = PermutationPlan::new(3, 5, 20, 9);
        assert_eq!(a, b);
        for p in a.labelings() {
            assert_eq!(p.iter().filter(|&&c| c == Class::First).count(), 3);
        }
        // permutation b does not depend on B
        let longer = PermutationPlan::new(3, 5, 40, 9);
        assert_eq!(&longer.labelings()[..20], a.labelings());
        assert!(PermutationPlan::from_labelings(1, 1, vec![vec![Class::First; 2]]).is_err());
    }

    #[test]
    fn pvalue_counting() {
        let p = upper_tail_pvalue(2.5, &[1.0, 2.0, 3.0, 4.0], PValueConvention::Weak).unwrap();
        assert_eq!(p, 0.5);
        assert_eq!(
            upper_tail_pvalue(9.0, &[1.0, 2.0], PValueConvention::Weak).unwrap(),
            0.0
        );
        assert_eq!(
            upper_tail_pvalue(9.0, &[1.0, 2.0], PValueConvention::AddOne).unwrap(),
            1.0 / 3.0
        );
        assert!(upper_tail_pvalue(1.0, &[], PValueConvention::Weak).is_err());
    }

    #[test]
    fn bh_examples() {
        let r = bh_fdr(&[0.01, 0.02, 0.5], 0.1);
        assert!((r.q[0] - 0.03).abs() < 1e-15 && (r.q[1] - 0.03).abs() < 1e-15);
        assert_eq!(r.q[2], 0.5);
        assert_eq!(r.significant, vec![0, 1]);
        let ones = bh_fdr(&[1.0; 4], 0.1);
        assert_eq!(ones.q, vec![1.0; 4]);
        assert!(ones.significant.is_empty());
        assert_eq!(bh_fdr(&[0.3], 0.1).q, vec![0.3]);
    }

    fn bh_brute(p: &[f64]) -> Vec<f64> {
        let k = p.len();
        let mut sorted: Vec<f64> = p.to_vec();
        sorted.sort_by(f64::total_cmp);
        p.iter()
            .map(|&pi| {
                // rank of pi: the smallest j with sorted[j] == pi (any tie works)
                let r = sorted.iter().position(|&v| v == pi).unwrap();
                (r..k)
                    .map(|j| sorted[j] * k as f64 / (j + 1) as f64)
                    .fold(f64::INFINITY, f64::min)
                    .min(1.0)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn bh_matches_definition(grid in prop::collection::vec(0u32..=20, 1..=6)) {
            let p: Vec<f64> = grid.iter().map(|&g| g as f64 * 0.05).collect();
            let got = bh_fdr(&p, 0.1).q;
            let want = bh_brute(&p);
            for (a, b) in got.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn pvalue_monotone_in_observed(
            perms in prop::collection::vec(-3.0f64..3.0, 1..30),
            lo in -4.0f64..4.0,
            bump in 0.0f64..2.0,
        ) {
            let a = upper_tail_pvalue(lo, &perms, PValueConvention::Weak).unwrap();
            let b = upper_tail_pvalue(lo + bump, &perms, PValueConvention::Weak).unwrap();
            prop_assert!(b <= a);
        }
    }

    #[test]
    fn row_randomization_edge_cases() {
        let z: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.0).collect();
        let full =
            set_statistic(SetStatisticKind::MaxMean, &z, &(0..12).collect::<Vec<_>>()).unwrap();
        let draws = row_randomization_scores(
            &z,
            12,
            SetStatisticKind::MaxMean,
            5,
            RandomStream::new(1, 1),
        )
        .unwrap();
        assert!(draws.iter().all(|&d| (d - full.raw).abs() < 1e-12));
        assert!(matches!(
            row_randomization_scores(&z, 13, SetStatisticKind::Mean, 5, RandomStream::new(1, 1)),
            Err(Error::SubsetTooLarge { .. })
        ));
    }

    #[test]
    fn row_randomization_size_one_is_the_score_distribution() {
        // six distinct scores: each draw is uniform over them
        let z = [-1.5, -0.5, 0.0, 0.5, 1.0, 2.0];
        let draws = 30_000;
        let values = row_randomization_scores(
            &z,
            1,
            SetStatisticKind::Mean,
            draws,
            RandomStream::new(3, 0),
        )
        .unwrap();
        let mut counts = [0usize; 6];
        for v in values {
            let idx = z.iter().position(|&x| x == v).unwrap();
            counts[idx] += 1;
        }
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi_square_sf(chi2, 5.0).unwrap() > 0.01, "{counts:?}");
    }

    #[test]
    fn row_randomization_matches_analytic_moments() {
        let mut rng = RandomStream::new(8, 8).rng();
        let z: Vec<f64> = (0..1000).map(|_| 0.3 + 1.2 * rng.random::<f64>()).collect();
        let m = 20;
        let draws = 5000;
        let values = row_randomization_scores(
            &z,
            m,
            SetStatisticKind::Mean,
            draws,
            RandomStream::new(8, 9),
        )
        .unwrap();
        let all: Vec<usize> = (0..z.len()).collect();
        let analytic = statistic_moments(&z, &all, m);
        let empirical = empirical_moments(&values).unwrap();
        let se_mean = analytic.sigma / (draws as f64).sqrt();
        assert!((empirical.mu - analytic.mu).abs() < 3.0 * se_mean);
        let se_sd = analytic.sigma / (2.0 * draws as f64).sqrt();
        assert!((empirical.sigma - analytic.sigma).abs() < 3.0 * se_sd);
    }

    fn statistic_moments(z: &[f64], basis: &[usize], m: usize) -> RandomizationMoments {
        crate::set_statistics::statistic_randomization_moments(SetStatisticKind::Mean, z, basis, m)
            .unwrap()
    }

    #[test]
    fn identity_permutation_reproduces_observed() {
        let matrix = null_matrix(200, 5, 77);
        let resolved = blocks(200, 10);
        let config = InferenceConfig {
            ks_draws: 50,
            ..InferenceConfig::default()
        };
        let (n1, n2) = matrix.class_sizes();
        let mut labelings = vec![matrix.labels().to_vec()];
        labelings.extend(
            PermutationPlan::new(n1, n2, 3, 4)
                .labelings()
                .iter()
                .cloned(),
        );
        let plan = PermutationPlan::from_labelings(n1, n2, labelings).unwrap();
        for kind in SetStatisticKind::ALL {
            let (_, observed, _) = observed_scores(&matrix, &resolved, &[kind], &config).unwrap();
            let perm = permutation_scores(&matrix, &resolved, kind, &plan, &config).unwrap();
            for (k, obs) in observed[0].iter().enumerate() {
                let first = perm.values[k][0].unwrap();
                assert!(
                    (first.standardized - obs.standardized).abs() < 1e-12,
                    "{kind}"
                );
            }
        }
    }

    #[test]
    fn empty_plan_has_no_pvalues() {
        let matrix = null_matrix(40, 3, 1);
        let resolved = blocks(40, 10);
        let plan = PermutationPlan::for_matrix(&matrix, 0, 1);
        let perm = permutation_scores(
            &matrix,
            &resolved,
            SetStatisticKind::MaxMean,
            &plan,
            &InferenceConfig::default(),
        )
        .unwrap();
        assert!(perm.values.iter().all(|row| row.is_empty()));
        assert!(analyze_many(
            &matrix,
            &resolved,
            &[SetStatisticKind::MaxMean],
            &plan,
            &InferenceConfig::default()
        )
        .is_err());
    }

    #[test]
    fn null_data_stays_inside_envelope() {
        let matrix = null_matrix(500, 10, 5);
        let resolved = blocks(500, 10);
        let config = InferenceConfig {
            permutations: 200,
            seed: 21,
            ..InferenceConfig::default()
        };
        let plan = PermutationPlan::for_matrix(&matrix, 200, 21);
        let (_, observed, _) =
            observed_scores(&matrix, &resolved, &[SetStatisticKind::MaxMean], &config).unwrap();
        let perm = permutation_scores(
            &matrix,
            &resolved,
            SetStatisticKind::MaxMean,
            &plan,
            &config,
        )
        .unwrap();
        let mut inside = 0;
        for (k, obs) in observed[0].iter().enumerate() {
            let row = perm.standardized_row(k);
            let lo = crate::numerics::percentile(&row, 0.005).unwrap();
            let hi = crate::numerics::percentile(&row, 0.995).unwrap();
            inside += usize::from(obs.standardized >= lo && obs.standardized <= hi);
        }
        assert!(inside >= 48, "{inside} of 50 inside");
    }

    #[test]
    fn null_pvalues_are_uniform() {
        // observed and permutation values from one continuous law
        let b = 19;
        let reps = 2000;
        let mut rng = RandomStream::new(31, 0).rng();
        let mut counts = vec![0usize; b + 1];
        for _ in 0..reps {
            let obs: f64 = StandardNormal.sample(&mut rng);
            let perm: Vec<f64> = (0..b).map(|_| StandardNormal.sample(&mut rng)).collect();
            let p = upper_tail_pvalue(obs, &perm, PValueConvention::AddOne).unwrap();
            counts[((p * (b + 1) as f64).round() as usize) - 1] += 1;
        }
        // Kolmogorov distance to the discrete uniform on {1/(B+1), ..., 1}
        let mut cum = 0usize;
        let mut d: f64 = 0.0;
        for (i, &c) in counts.iter().enumerate() {
            cum += c;
            let want = (i + 1) as f64 / (b + 1) as f64;
            d = d.max((cum as f64 / reps as f64 - want).abs());
        }
        assert!(d < 1.63 / (reps as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let matrix = null_matrix(120, 4, 3);
        let resolved = blocks(120, 12);
        let config = InferenceConfig {
            permutations: 40,
            seed: 4,
            ks_draws: 30,
            ..InferenceConfig::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let plan = PermutationPlan::for_matrix(&matrix, 40, 4);
                    analyze_many(&matrix, &resolved, &SetStatisticKind::ALL, &plan, &config)
                        .unwrap()
                })
        };
        let (a, b) = (run(1), run(3));
        for (ta, tb) in a.tables.iter().zip(&b.tables) {
            assert_eq!(format!("{:?}", ta.rows), format!("{:?}", tb.rows));
        }
    }

    #[test]
    fn pooled_scope_runs() {
        let matrix = null_matrix(100, 4, 13);
        let resolved = blocks(100, 10);
        let config = InferenceConfig {
            permutations: 30,
            moments_scope: MomentsScope::Pooled,
            ks_draws: 20,
            ..InferenceConfig::default()
        };
        let plan = PermutationPlan::for_matrix(&matrix, 30, 2);
        let analysis =
            analyze_many(&matrix, &resolved, &SetStatisticKind::ALL, &plan, &config).unwrap();
        for table in &analysis.tables {
            assert!(table
                .rows
                .iter()
                .all(|r| (0.0..=1.0).contains(&r.p) && r.q >= r.p - 1e-12));
        }
    }
}
