//! Synthetic data, scenario studies and power grids.
//!
//! Scenario data are `n_genes` i.i.d. standard normal rows over two classes,
//! with gene-sets formed by consecutive nonoverlapping blocks of genes and
//! mean shifts added to the class-2 columns of chosen genes.

use std::fmt::Write as _;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{resolve_catalog, Class, ExpressionMatrix, GeneSet, GeneSetCatalog};
use crate::error::{Error, Result};
use crate::inference::{analyze_many, InferenceConfig, PermutationPlan};
use crate::numerics::{format_real, normal_cdf, percentile, RandomStream};
use crate::set_statistics::{set_maxmean, SetStatisticKind};

/// A mean shift on genes `start..end` (0-based, within the set) of set `set` (0-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectBlock {
    pub set: usize,
    pub start: usize,
    pub end: usize,
    /// Signed amount added to class-2 values.
    pub shift: f64,
}

/// Layout of a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_genes: usize,
    pub n_per_class: usize,
    pub set_size: usize,
    pub n_sets: usize,
    pub effects: Vec<EffectBlock>,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n_genes: 1000,
            n_per_class: 50,
            set_size: 20,
            n_sets: 50,
            effects: Vec::new(),
            seed: 1,
        }
    }
}

/// Names accepted by [`ScenarioSpec::preset`].
pub const PRESETS: [&str; 7] = [
    "example1",
    "example2",
    "scenario1",
    "scenario2",
    "scenario3",
    "scenario4",
    "scenario5",
];

impl ScenarioSpec {
    /// Built-in layouts. `example1`: the first 10 genes of set 1 are 2.5
    /// higher in class 2. `example2`: the same in every set. `scenario1` to
    /// `scenario5`: set 1 shifted by 0.2 on all 20 genes, 0.3 on the first
    /// 15, 0.4 on the first 10, 0.6 on the first 5, and +0.4 / -0.4 on the
    /// first / second 10. Scenarios also answer to `1` .. `5`.
    pub fn preset(id: &str, seed: u64) -> Result<Self> {
        let block = |set, start, end, shift| EffectBlock {
            set,
            start,
            end,
            shift,
        };
        let base = ScenarioSpec {
            seed,
            ..ScenarioSpec::default()
        };
        let effects = match id {
            "example1" => vec![block(0, 0, 10, 2.5)],
            "example2" => (0..base.n_sets).map(|k| block(k, 0, 10, 2.5)).collect(),
            "scenario1" | "1" => vec![block(0, 0, 20, 0.2)],
            "scenario2" | "2" => vec![block(0, 0, 15, 0.3)],
            "scenario3" | "3" => vec![block(0, 0, 10, 0.4)],
            "scenario4" | "4" => vec![block(0, 0, 5, 0.6)],
            "scenario5" | "5" => vec![block(0, 0, 10, 0.4), block(0, 10, 20, -0.4)],
            "null" => vec![],
            other => return Err(Error::Invalid(format!("unknown scenario {other:?}"))),
        };
        Ok(ScenarioSpec { effects, ..base })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class < 2 {
            return Err(Error::Invalid("n_per_class must be at least 2".into()));
        }
        if self.set_size == 0 || self.n_sets == 0 {
            return Err(Error::Invalid(
                "set_size and n_sets must be positive".into(),
            ));
        }
        if self.n_sets * self.set_size > self.n_genes {
            return Err(Error::Invalid(format!(
                "{} sets of {} genes do not fit in {} genes",
                self.n_sets, self.set_size, self.n_genes
            )));
        }
        for (i, e) in self.effects.iter().enumerate() {
            if e.set >= self.n_sets
                || e.start >= e.end
                || e.end > self.set_size
                || !e.shift.is_finite()
            {
                return Err(Error::Invalid(format!("malformed effect block {i}: {e:?}")));
            }
        }
        Ok(())
    }
}

pub fn gene_id(i: usize) -> String {
    format!("g{:04}", i + 1)
}

pub fn set_name(k: usize) -> String {
    format!("set{:02}", k + 1)
}

/// Draws the matrix and its block catalog. Class 1 occupies the first
/// `n_per_class` columns.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(ExpressionMatrix, GeneSetCatalog)> {
    spec.validate()?;
    let n = 2 * spec.n_per_class;
    let mut rng = RandomStream::new(spec.seed, 0).rng();
    let mut values: Vec<f64> = (0..spec.n_genes * n)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    for e in &spec.effects {
        for g in e.start..e.end {
            let row = e.set * spec.set_size + g;
            for v in &mut values[row * n + spec.n_per_class..(row + 1) * n] {
                *v += e.shift;
            }
        }
    }
    let labels = (0..n)
        .map(|j| {
            if j < spec.n_per_class {
                Class::First
            } else {
                Class::Second
            }
        })
        .collect();
    let matrix = ExpressionMatrix::new(
        values,
        (0..spec.n_genes).map(gene_id).collect(),
        (0..n).map(|j| format!("s{:03}", j + 1)).collect(),
        labels,
    )?;
    let catalog = GeneSetCatalog::new((0..spec.n_sets).map(|k| {
        GeneSet {
            name: set_name(k),
            description: format!(
                "genes {}-{}",
                k * spec.set_size + 1,
                (k + 1) * spec.set_size
            ),
            members: (k * spec.set_size..(k + 1) * spec.set_size)
                .map(gene_id)
                .collect(),
        }
    }))?;
    Ok((matrix, catalog))
}

/// Replicated analysis of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub scenario: ScenarioSpec,
    pub statistics: Vec<SetStatisticKind>,
    pub reps: usize,
    pub seed: u64,
    /// Permutation settings; `permutations` defaults to 200 here.
    pub inference: InferenceConfig,
    /// Set whose p-values are summarized (0-based).
    pub target_set: usize,
}

impl StudySpec {
    pub fn new(scenario: ScenarioSpec, statistics: Vec<SetStatisticKind>) -> Self {
        StudySpec {
            scenario,
            statistics,
            reps: 20,
            seed: 1,
            inference: InferenceConfig {
                permutations: 200,
                ..InferenceConfig::default()
            },
            target_set: 0,
        }
    }
}

/// Mean and standard error of the target set's p-value for one statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub statistic: SetStatisticKind,
    pub mean_p: f64,
    /// `sd / sqrt(reps)`; absent for a single replicate.
    pub se_p: Option<f64>,
    pub p_values: Vec<f64>,
}

/// Seeds of replicate `rep`: (data, permutations).
fn rep_seeds(seed: u64, rep: usize) -> (u64, u64) {
    let mut rng = RandomStream::new(seed, rep as u64).rng();
    (rng.next_u64(), rng.next_u64())
}

/// Generates `reps` datasets, runs the full pipeline on each and summarizes
/// the target set's p-value per statistic.
pub fn run_scenario_study(spec: &StudySpec) -> Result<Vec<StudySummary>> {
    if spec.reps == 0 {
        return Err(Error::Invalid("reps must be at least 1".into()));
    }
    if spec.target_set >= spec.scenario.n_sets {
        return Err(Error::Invalid(format!(
            "target set {} out of range",
            spec.target_set
        )));
    }
    spec.scenario.validate()?;
    let per_rep: Vec<Vec<f64>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| {
            let (data_seed, perm_seed) = rep_seeds(spec.seed, rep);
            let scenario = ScenarioSpec {
                seed: data_seed,
                ..spec.scenario.clone()
            };
            let config = InferenceConfig {
                seed: perm_seed,
                ..spec.inference.clone()
            };
            let run = || -> Result<Vec<f64>> {
                let (matrix, catalog) = generate_scenario(&scenario)?;
                let resolved = resolve_catalog(&catalog, &matrix, 1, None)?;
                let plan = PermutationPlan::for_matrix(&matrix, config.permutations, config.seed);
                let analysis = analyze_many(&matrix, &resolved, &spec.statistics, &plan, &config)?;
                Ok(analysis
                    .tables
                    .iter()
                    .map(|t| t.rows[spec.target_set].p)
                    .collect())
            };
            run().map_err(|e| Error::Invalid(format!("replicate {rep}: {e}")))
        })
        .collect::<Result<_>>()?;

    Ok(spec
        .statistics
        .iter()
        .enumerate()
        .map(|(s, &statistic)| {
            let p_values: Vec<f64> = per_rep.iter().map(|r| r[s]).collect();
            let n = p_values.len() as f64;
            let mean_p = p_values.iter().sum::<f64>() / n;
            let se_p = (p_values.len() > 1).then(|| {
                let var = p_values.iter().map(|p| (p - mean_p).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            });
            StudySummary {
                statistic,
                mean_p,
                se_p,
                p_values,
            }
        })
        .collect())
}

/// One row per scenario, `<statistic>_p` / `<statistic>_se` column pairs.
pub fn format_study_tsv(rows: &[(String, Vec<StudySummary>)]) -> String {
    let mut out = String::from("scenario");
    if let Some((_, first)) = rows.first() {
        for s in first {
            let _ = write!(out, "\t{0}_p\t{0}_se", s.statistic);
        }
    }
    out.push('\n');
    for (name, summaries) in rows {
        out.push_str(name);
        for s in summaries {
            let se = s.se_p.map_or_else(|| "NA".to_string(), format_real);
            let _ = write!(out, "\t{}\t{}", format_real(s.mean_p), se);
        }
        out.push('\n');
    }
    out
}

/// Statistic compared in power grids, computed directly on m z-values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerStatistic {
    /// `|mean z|`.
    AbsMean,
    /// `mean |z|`.
    MeanAbs,
    MaxMean,
    /// One-sample KS distance to the standard normal CDF.
    Ks,
}

impl PowerStatistic {
    pub const ALL: [PowerStatistic; 4] = [
        PowerStatistic::AbsMean,
        PowerStatistic::MeanAbs,
        PowerStatistic::MaxMean,
        PowerStatistic::Ks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PowerStatistic::AbsMean => "abs_mean",
            PowerStatistic::MeanAbs => "mean_abs",
            PowerStatistic::MaxMean => "maxmean",
            PowerStatistic::Ks => "ks",
        }
    }

    /// Evaluates the statistic; `z` is reordered (sorted) for KS.
    pub fn evaluate(self, z: &mut [f64]) -> f64 {
        let m = z.len() as f64;
        match self {
            PowerStatistic::AbsMean => (z.iter().sum::<f64>() / m).abs(),
            PowerStatistic::MeanAbs => z.iter().map(|v| v.abs()).sum::<f64>() / m,
            PowerStatistic::MaxMean => set_maxmean(z).map(|r| r.value).unwrap_or(f64::NAN),
            PowerStatistic::Ks => ks_to_normal(z),
        }
    }
}

impl std::str::FromStr for PowerStatistic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "abs_mean" | "absmean" => Ok(PowerStatistic::AbsMean),
            "mean_abs" | "meanabs" => Ok(PowerStatistic::MeanAbs),
            "maxmean" => Ok(PowerStatistic::MaxMean),
            "ks" => Ok(PowerStatistic::Ks),
            other => Err(Error::Invalid(format!("unknown power statistic {other:?}"))),
        }
    }
}

/// `sup_x |F_m(x) - Phi(x)|`.
pub fn ks_to_normal(z: &mut [f64]) -> f64 {
    z.sort_by(f64::total_cmp);
    let m = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x).unwrap_or(if x > 0.0 { 1.0 } else { 0.0 });
            ((i + 1) as f64 / m - f).max(f - i as f64 / m)
        })
        .fold(0.0, f64::max)
}

/// How the alternative shifts the m genes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Every gene `N(b, g^2)`.
    #[default]
    All,
    /// The first `m / 2` genes `N(b, g^2)`, the rest `N(-b, g^2)`.
    Half,
}

impl std::str::FromStr for ShiftMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ShiftMode::All),
            "half" => Ok(ShiftMode::Half),
            other => Err(Error::Invalid(format!("unknown shift mode {other:?}"))),
        }
    }
}

/// Grid of location/scale alternatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerGridSpec {
    pub m: usize,
    pub b_grid: Vec<f64>,
    pub g_grid: Vec<f64>,
    pub shift_mode: ShiftMode,
    pub level: f64,
    pub null_draws: usize,
    pub alt_draws: usize,
    pub statistics: Vec<PowerStatistic>,
    pub seed: u64,
}

impl Default for PowerGridSpec {
    fn default() -> Self {
        PowerGridSpec {
            m: 25,
            b_grid: (0..=10).map(|i| i as f64 * 0.1).collect(),
            g_grid: (0..=10).map(|i| 1.0 + i as f64 * 0.1).collect(),
            shift_mode: ShiftMode::All,
            level: 0.95,
            null_draws: 40_000,
            alt_draws: 10_000,
            statistics: PowerStatistic::ALL.to_vec(),
            seed: 1,
        }
    }
}

/// Power of one statistic at one alternative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub statistic: PowerStatistic,
    pub b: f64,
    pub g: f64,
    pub power: f64,
    /// `sqrt(power (1 - power) / alt_draws)`.
    pub mc_se: f64,
    pub critical_value: f64,
}

const NULL_DOMAIN: u64 = 1;
const ALT_DOMAIN: u64 = 2;

fn standard_normals(stream: RandomStream, m: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..m).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Monte Carlo power of each statistic over the grid.
///
/// Critical values are the `level` percentiles of each statistic over
/// `null_draws` samples of m standard normals. Alternative draw j reuses the
/// same standard normal vector at every grid point (`z = b * sign + g * e`),
/// so power differences between grid points carry no extra sampling noise.
pub fn power_grid(spec: &PowerGridSpec) -> Result<Vec<PowerCell>> {
    if spec.m == 0 || spec.b_grid.is_empty() || spec.g_grid.is_empty() || spec.statistics.is_empty()
    {
        return Err(Error::Invalid(
            "power grid needs m >= 1 and nonempty grids and statistics".into(),
        ));
    }
    if !(spec.level > 0.0 && spec.level < 1.0) {
        return Err(Error::Domain {
            what: "level must lie in (0, 1)",
            value: spec.level,
        });
    }
    if spec.null_draws < 1000 || spec.alt_draws < 1000 {
        return Err(Error::Invalid(
            "power grid needs at least 1000 null and 1000 alternative draws".into(),
        ));
    }
    if spec
        .g_grid
        .iter()
        .chain(&spec.b_grid)
        .any(|v| !v.is_finite())
        || spec.g_grid.iter().any(|&g| g <= 0.0)
    {
        return Err(Error::Invalid(
            "grid values must be finite and g positive".into(),
        ));
    }
    let root = RandomStream::new(spec.seed, 0);
    let null_stream = root.fork(NULL_DOMAIN);
    let null: Vec<Vec<f64>> = (0..spec.null_draws)
        .into_par_iter()
        .map(|j| {
            let z = standard_normals(null_stream.at(j as u64), spec.m);
            spec.statistics
                .iter()
                .map(|s| s.evaluate(&mut z.clone()))
                .collect()
        })
        .collect();
    let critical: Vec<f64> = (0..spec.statistics.len())
        .map(|s| percentile(&null.iter().map(|r| r[s]).collect::<Vec<_>>(), spec.level))
        .collect::<Result<_>>()?;

    let alt_stream = root.fork(ALT_DOMAIN);
    let base: Vec<Vec<f64>> = (0..spec.alt_draws)
        .into_par_iter()
        .map(|j| standard_normals(alt_stream.at(j as u64), spec.m))
        .collect();
    let half = spec.m / 2;
    let points: Vec<(f64, f64)> = spec
        .g_grid
        .iter()
        .flat_map(|&g| spec.b_grid.iter().map(move |&b| (b, g)))
        .collect();
    let counts: Vec<Vec<usize>> = points
        .par_iter()
        .map(|&(b, g)| {
            let mut hits = vec![0usize; spec.statistics.len()];
            let mut z = vec![0.0; spec.m];
            for e in &base {
                for (s, stat) in spec.statistics.iter().enumerate() {
                    for (i, (zi, ei)) in z.iter_mut().zip(e).enumerate() {
                        let shift = match spec.shift_mode {
                            ShiftMode::Half if i >= half => -b,
                            _ => b,
                        };
                        *zi = shift + g * ei;
                    }
                    hits[s] += usize::from(stat.evaluate(&mut z) > critical[s]);
                }
            }
            hits
        })
        .collect();

    let mut cells = Vec::with_capacity(points.len() * spec.statistics.len());
    for (s, &statistic) in spec.statistics.iter().enumerate() {
        for (&(b, g), hits) in points.iter().zip(&counts) {
            let power = hits[s] as f64 / spec.alt_draws as f64;
            cells.push(PowerCell {
                statistic,
                b,
                g,
                power,
                mc_se: (power * (1.0 - power) / spec.alt_draws as f64).sqrt(),
                critical_value: critical[s],
            });
        }
    }
    Ok(cells)
}

/// Long format: statistic, b, g, power, mc_se.
pub fn format_power_tsv(cells: &[PowerCell]) -> String {
    let mut out = String::from("statistic\tb\tg\tpower\tmc_se\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            c.statistic.name(),
            format_real(c.b),
            format_real(c.g),
            format_real(c.power),
            format_real(c.mc_se)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gene_scores::{gene_scores, TOptions};
    use crate::numerics::mean_and_stdev;

    #[test]
    fn scenario1_layout() {
        let spec = ScenarioSpec::preset("scenario1", 3).unwrap();
        let (matrix, catalog) = generate_scenario(&spec).unwrap();
        assert_eq!((matrix.n_genes(), matrix.n_samples()), (1000, 100));
        assert_eq!(catalog.len(), 50);
        assert_eq!(catalog.sets()[1].members[0], "g0021");
        let null = generate_scenario(&ScenarioSpec {
            effects: vec![],
            ..spec.clone()
        })
        .unwrap()
        .0;
        let mut shifted = 0;
        for g in 0..1000 {
            for j in 0..100 {
                let d = matrix.row(g)[j] - null.row(g)[j];
                if d != 0.0 {
                    assert!((d - 0.2).abs() < 1e-12 && g < 20 && j >= 50);
                    shifted += 1;
                }
            }
        }
        assert_eq!(shifted, 20 * 50);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec::preset("example2", 11).unwrap();
        let (a, _) = generate_scenario(&spec).unwrap();
        let (b, _) = generate_scenario(&spec).unwrap();
        assert_eq!(a.values(), b.values());
        let (c, _) = generate_scenario(&ScenarioSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn null_scenario_has_centered_z() {
        let (matrix, _) = generate_scenario(&ScenarioSpec::preset("null", 5).unwrap()).unwrap();
        let z = gene_scores(&matrix, TOptions::default()).unwrap().z;
        let (mean, _) = mean_and_stdev(&z);
        assert!(mean.abs() < 0.1);
    }

    #[test]
    fn malformed_specs() {
        assert!(ScenarioSpec::preset("scenario9", 1).is_err());
        let mut spec = ScenarioSpec::default();
        spec.effects.push(EffectBlock {
            set: 0,
            start: 5,
            end: 25,
            shift: 1.0,
        });
        assert!(generate_scenario(&spec).is_err());
        let spec = ScenarioSpec {
            n_sets: 60,
            ..ScenarioSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn single_rep_has_no_se() {
        let spec = StudySpec {
            reps: 1,
            inference: InferenceConfig {
                permutations: 20,
                ..InferenceConfig::default()
            },
            ..StudySpec::new(
                ScenarioSpec {
                    n_genes: 200,
                    n_sets: 10,
                    n_per_class: 5,
                    ..ScenarioSpec::preset("scenario3", 1).unwrap()
                },
                vec![SetStatisticKind::MaxMean],
            )
        };
        let out = run_scenario_study(&spec).unwrap();
        assert!(out[0].se_p.is_none());
        assert!(format_study_tsv(&[("scenario3".into(), out)]).contains("\tNA\n"));
    }

    #[test]
    fn ks_distance_by_hand() {
        // single point at 0: F jumps 0 -> 1 where Phi = 0.5
        assert!((ks_to_normal(&mut [0.0]) - 0.5).abs() < 1e-15);
        let mut far = [10.0, 11.0];
        assert!((ks_to_normal(&mut far) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_grid_validation() {
        let bad = PowerGridSpec {
            level: 1.0,
            ..PowerGridSpec::default()
        };
        assert!(power_grid(&bad).is_err());
        let bad = PowerGridSpec {
            b_grid: vec![],
            ..PowerGridSpec::default()
        };
        assert!(power_grid(&bad).is_err());
        let bad = PowerGridSpec {
            null_draws: 10,
            ..PowerGridSpec::default()
        };
        assert!(power_grid(&bad).is_err());
    }

    #[test]
    fn small_power_grid_is_sane() {
        let spec = PowerGridSpec {
            b_grid: vec![0.0, 0.5],
            g_grid: vec![1.0],
            null_draws: 4000,
            alt_draws: 2000,
            ..PowerGridSpec::default()
        };
        let cells = power_grid(&spec).unwrap();
        assert_eq!(cells.len(), 8);
        for c in &cells {
            if c.b == 0.0 {
                assert!((c.power - 0.05).abs() < 0.025, "{c:?}");
            } else {
                assert!(c.power > c.mc_se * 10.0 + 0.05, "{c:?}");
            }
        }
        assert!(
            format_power_tsv(&cells).starts_with("statistic\tb\tg\tpower\tmc_se\nabs_mean\t0\t1\t")
        );
    }
}
