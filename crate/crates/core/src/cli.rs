//! Command-line verbs: `run`, `simulate`, `power` and `generate`.
//!
//! Every output is UTF-8, tab-delimited with LF line endings, reals at 12
//! significant digits. Outputs depend only on the configuration and seed,
//! never on the thread count.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data_model::{
    format_expression_tsv, format_gmt, format_labels_tsv, load_expression_tsv, load_gmt,
    resolve_catalog, ExpressionMatrix, GeneSetCatalog, LabelSource,
};
use crate::error::{Error, Result};
use crate::gene_scores::{GeneScores, MomentsMode, TOptions};
use crate::inference::{
    analyze_many, InferenceConfig, MomentsScope, PValueConvention, PermutationPlan, SetScoreTable,
    DEFAULT_KS_DRAWS, DEFAULT_PERMUTATIONS,
};
use crate::numerics::format_real;
use crate::set_statistics::SetStatisticKind;
use crate::simulation::{
    format_power_tsv, format_study_tsv, generate_scenario, power_grid, run_scenario_study,
    PowerGridSpec, PowerStatistic, ScenarioSpec, ShiftMode, StudySpec,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "gsa",
    version,
    about = "Gene-set analysis with the maxmean statistic and restandardized permutations"
)]
pub struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true, env = "GSA_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score gene-sets of one or more catalogs against an expression matrix.
    Run(RunArgs),
    /// Replicated scenario study: mean and se of gene-set 1's p-value.
    Simulate(SimulateArgs),
    /// Monte Carlo power of set statistics over a (b, g) grid.
    Power(PowerArgs),
    /// Write a simulated dataset (expression, labels, GMT) to a directory.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Expression TSV (genes x samples, `gene_id` header).
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    pub expression: Option<PathBuf>,
    /// Labels TSV (`sample_id<TAB>class`); without it the class row is read from the expression file.
    #[arg(long, requires = "expression")]
    pub labels: Option<PathBuf>,
    /// GMT catalog; repeat for several catalogs.
    #[arg(long = "gmt", requires = "expression")]
    pub gmt: Vec<PathBuf>,
    /// Simulated dataset instead of files (example1, example2, scenario1..scenario5).
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Seed of the simulated dataset.
    #[arg(long, default_value_t = 1, requires = "preset")]
    pub preset_seed: u64,
    /// Samples per class of the simulated dataset.
    #[arg(long, requires = "preset")]
    pub preset_n_per_class: Option<usize>,
    /// Re-run a configuration from a previous run's `run.json`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "maxmean", value_parser = parse_statistic)]
    pub statistic: SetStatisticKind,
    #[arg(long, short = 'B', default_value_t = DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    #[arg(long, env = "GSA_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub min_size: usize,
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(long, default_value = "multiplicity", value_parser = parse_from_str::<MomentsMode>)]
    pub moments_mode: MomentsMode,
    #[arg(long, default_value = "per_permutation", value_parser = parse_from_str::<MomentsScope>)]
    pub moments_scope: MomentsScope,
    #[arg(long = "pvalue", default_value = "weak", value_parser = parse_from_str::<PValueConvention>)]
    pub pvalue_convention: PValueConvention,
    #[arg(long, default_value_t = 0.1)]
    pub q_cut: f64,
    /// Random gene-sets per set size for KS moments.
    #[arg(long, default_value_t = DEFAULT_KS_DRAWS)]
    pub ks_draws: usize,
    /// Floor tiny pooled standard deviations instead of rejecting constant genes.
    #[arg(long)]
    pub variance_floor: bool,
    /// Compare raw statistics with raw permutation values (no restandardization).
    #[arg(long)]
    pub raw: bool,
    /// Also write JSON mirrors of the result tables.
    #[arg(long)]
    pub json: bool,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenarios: `1..5`, or a comma list of ids or preset names.
    #[arg(long, default_value = "1..5", value_parser = parse_scenarios)]
    pub scenarios: Scenarios,
    #[arg(long, default_value = "mean,mean_abs,maxmean,ks", value_parser = parse_statistics)]
    pub statistics: Statistics,
    #[arg(long, short = 'B', default_value_t = 200)]
    pub permutations: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, env = "GSA_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = DEFAULT_KS_DRAWS)]
    pub ks_draws: usize,
    /// Output TSV (default: stdout).
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long, default_value_t = 25)]
    pub m: usize,
    /// Shift grid: comma list or `start:stop:step`.
    #[arg(long, default_value = "0:1:0.1", value_parser = parse_grid)]
    pub b_grid: Grid,
    /// Scale grid: comma list or `start:stop:step`.
    #[arg(long, default_value = "1:2:0.1", value_parser = parse_grid)]
    pub g_grid: Grid,
    #[arg(long, default_value = "all", value_parser = parse_from_str::<ShiftMode>)]
    pub shift_mode: ShiftMode,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 40_000)]
    pub null_draws: usize,
    #[arg(long, default_value_t = 10_000)]
    pub alt_draws: usize,
    #[arg(long, default_value = "abs_mean,mean_abs,maxmean,ks", value_parser = parse_power_statistics)]
    pub statistics: PowerStatistics,
    #[arg(long, env = "GSA_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "example1")]
    pub preset: String,
    #[arg(long, env = "GSA_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

/// A parsed grid of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct PowerStatistics(pub Vec<PowerStatistic>);

#[derive(Clone, Debug, PartialEq)]
pub struct Statistics(pub Vec<SetStatisticKind>);

/// Scenario preset names.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenarios(pub Vec<String>);

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_statistic(s: &str) -> std::result::Result<SetStatisticKind, String> {
    parse_from_str(s)
}

fn parse_statistics(s: &str) -> std::result::Result<Statistics, String> {
    s.split(',')
        .map(parse_statistic)
        .collect::<std::result::Result<_, _>>()
        .map(Statistics)
}

fn parse_power_statistics(s: &str) -> std::result::Result<PowerStatistics, String> {
    s.split(',')
        .map(parse_from_str)
        .collect::<std::result::Result<_, _>>()
        .map(PowerStatistics)
}

/// `a,b,c` or `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| format!("bad number {t:?} in grid {s:?}"))
    };
    let values: Vec<f64> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(format!("grid {s:?} must be start:stop:step"));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if !(step > 0.0) || stop < start {
            return Err(format!("grid {s:?} needs step > 0 and stop >= start"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count)
            .map(|i| start + i as f64 * step)
            .map(|v| (v * 1e12).round() / 1e12)
            .collect()
    } else {
        s.split(',')
            .map(num)
            .collect::<std::result::Result<_, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(format!("grid {s:?} is empty or not finite"));
    }
    Ok(Grid(values))
}

/// `a..b` over scenario numbers, or a comma list of ids.
pub fn parse_scenarios(s: &str) -> std::result::Result<Scenarios, String> {
    let ids: Vec<String> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a
            .trim()
            .parse()
            .map_err(|_| format!("bad scenario range {s:?}"))?;
        let b: usize = b
            .trim()
            .parse()
            .map_err(|_| format!("bad scenario range {s:?}"))?;
        (a..=b).map(|i| format!("scenario{i}")).collect()
    } else {
        s.split(',')
            .map(|t| {
                let t = t.trim();
                if t.chars().all(|c| c.is_ascii_digit()) {
                    format!("scenario{t}")
                } else {
                    t.to_string()
                }
            })
            .collect()
    };
    for id in &ids {
        ScenarioSpec::preset(id, 0).map_err(|e| e.to_string())?;
    }
    if ids.is_empty() {
        return Err("no scenarios given".into());
    }
    Ok(Scenarios(ids))
}

/// Where the data of a run come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Files {
        expression: PathBuf,
        labels: Option<PathBuf>,
        gmt: Vec<PathBuf>,
    },
    Preset {
        name: String,
        seed: u64,
        n_per_class: Option<usize>,
    },
}

/// Every setting that affects the numbers of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: InputSource,
    pub statistic: SetStatisticKind,
    pub permutations: usize,
    pub seed: u64,
    pub min_size: usize,
    pub max_size: Option<usize>,
    pub moments_mode: MomentsMode,
    pub moments_scope: MomentsScope,
    pub pvalue_convention: PValueConvention,
    pub q_cut: f64,
    pub ks_draws: usize,
    pub variance_floor: bool,
    pub restandardize: bool,
    pub json: bool,
    /// Not written to `run.json`.
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            permutations: self.permutations,
            seed: self.seed,
            moments_mode: self.moments_mode,
            moments_scope: self.moments_scope,
            restandardize: self.restandardize,
            pvalue_convention: self.pvalue_convention,
            ks_draws: self.ks_draws,
            t_options: TOptions {
                variance_floor: self.variance_floor,
            },
        }
    }

    fn from_args(args: RunArgs) -> Result<Self> {
        if let Some(path) = &args.config {
            let meta = RunMetadata::load(path)?;
            return Ok(RunConfig {
                out_dir: args.out,
                ..meta.config
            });
        }
        let input = match (args.expression, args.preset) {
            (Some(expression), None) => {
                if args.gmt.is_empty() {
                    return Err(Error::Invalid("--gmt is required with --expression".into()));
                }
                InputSource::Files {
                    expression,
                    labels: args.labels,
                    gmt: args.gmt,
                }
            }
            (None, Some(name)) => InputSource::Preset {
                name,
                seed: args.preset_seed,
                n_per_class: args.preset_n_per_class,
            },
            _ => {
                return Err(Error::Invalid(
                    "give --expression with --gmt, --preset, or --config".into(),
                ))
            }
        };
        Ok(RunConfig {
            input,
            statistic: args.statistic,
            permutations: args.permutations,
            seed: args.seed,
            min_size: args.min_size,
            max_size: args.max_size,
            moments_mode: args.moments_mode,
            moments_scope: args.moments_scope,
            pvalue_convention: args.pvalue_convention,
            q_cut: args.q_cut,
            ks_draws: args.ks_draws,
            variance_floor: args.variance_floor,
            restandardize: !args.raw,
            json: args.json,
            out_dir: args.out,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.min_size < 1 {
            return Err(Error::Invalid("--min-size must be at least 1".into()));
        }
        if self.max_size.is_some_and(|m| m < self.min_size) {
            return Err(Error::Invalid(
                "--max-size must be at least --min-size".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.q_cut) {
            return Err(Error::Invalid("--q-cut must lie in [0, 1]".into()));
        }
        if self.permutations == 0 {
            return Err(Error::Invalid(
                "at least one permutation is required".into(),
            ));
        }
        Ok(())
    }
}

/// Per-catalog bookkeeping written to the metadata file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogSummary {
    pub name: String,
    pub results_file: String,
    pub sets_in_file: usize,
    pub collapsed_duplicate_members: usize,
    pub dropped_members: usize,
    pub excluded_sets: usize,
    pub analyzed_sets: usize,
    pub significant_sets: usize,
    pub degenerate_cells: usize,
}

/// Contents of `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub config: RunConfig,
    pub genes: usize,
    pub samples: usize,
    pub class_sizes: (usize, usize),
    pub catalogs: Vec<CatalogSummary>,
}

impl RunMetadata {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Results table, sorted by p then name.
pub fn format_results_tsv(table: &SetScoreTable) -> String {
    let mut out = String::from("name\tm\traw\tstandardized\tside\tp\tp_lo\tp_hi\tq\tq_lo\tq_hi\n");
    for r in table.sorted_rows() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.name,
            r.m,
            format_real(r.raw),
            format_real(r.standardized),
            r.side.name(),
            format_real(r.p),
            format_real(r.p_lo),
            format_real(r.p_hi),
            format_real(r.q),
            format_real(r.q_lo),
            format_real(r.q_hi)
        );
    }
    out
}

pub fn format_genes_tsv(matrix: &ExpressionMatrix, scores: &GeneScores) -> String {
    let mut out = String::from("gene_id\tt\tz\n");
    for ((id, t), z) in matrix.gene_ids().iter().zip(&scores.t).zip(&scores.z) {
        let _ = writeln!(out, "{id}\t{}\t{}", format_real(*t), format_real(*z));
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json_text<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Loads the data named by the configuration: a matrix and named catalogs.
pub fn load_inputs(
    config: &RunConfig,
) -> Result<(ExpressionMatrix, Vec<(String, GeneSetCatalog)>)> {
    match &config.input {
        InputSource::Files {
            expression,
            labels,
            gmt,
        } => {
            let source = labels
                .clone()
                .map_or(LabelSource::InlineRow, LabelSource::File);
            let matrix = load_expression_tsv(expression, &source)?;
            let mut catalogs = Vec::with_capacity(gmt.len());
            for path in gmt {
                let stem = path
                    .file_stem()
                    .map_or("catalog".into(), |s| s.to_string_lossy().into_owned());
                catalogs.push((stem, load_gmt(path)?));
            }
            Ok((matrix, catalogs))
        }
        InputSource::Preset {
            name,
            seed,
            n_per_class,
        } => {
            let (matrix, catalog) = generate_scenario(&preset_spec(name, *seed, *n_per_class)?)?;
            Ok((matrix, vec![(name.clone(), catalog)]))
        }
    }
}

fn preset_spec(name: &str, seed: u64, n_per_class: Option<usize>) -> Result<ScenarioSpec> {
    let spec = ScenarioSpec::preset(name, seed)?;
    Ok(ScenarioSpec {
        n_per_class: n_per_class.unwrap_or(spec.n_per_class),
        ..spec
    })
}

/// Unique results file names: `<stem>.results.tsv`, numbered on collisions.
fn results_names(catalogs: &[(String, GeneSetCatalog)]) -> Vec<String> {
    let mut used = std::collections::HashSet::new();
    catalogs
        .iter()
        .enumerate()
        .map(|(i, (stem, _))| {
            let mut name = stem.clone();
            if !used.insert(name.clone()) {
                name = format!("{stem}_{}", i + 1);
                used.insert(name.clone());
            }
            name
        })
        .collect()
}

/// Runs the pipeline and writes results, gene scores and metadata.
pub fn cmd_run(config: &RunConfig) -> Result<RunMetadata> {
    config.validate()?;
    let (matrix, catalogs) = load_inputs(config)?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let inference = config.inference();
    let plan = PermutationPlan::for_matrix(&matrix, inference.permutations, inference.seed);
    let names = results_names(&catalogs);

    let mut summaries = Vec::with_capacity(catalogs.len());
    let mut genes: Option<GeneScores> = None;
    for ((_, catalog), name) in catalogs.iter().zip(&names) {
        let resolved = resolve_catalog(catalog, &matrix, config.min_size, config.max_size)?;
        let mut analysis =
            analyze_many(&matrix, &resolved, &[config.statistic], &plan, &inference)?;
        let table = analysis.tables.remove(0);
        let results_file = format!("{name}.results.tsv");
        write(
            &config.out_dir.join(&results_file),
            &format_results_tsv(&table),
        )?;
        if config.json {
            write(
                &config.out_dir.join(format!("{name}.results.json")),
                &json_text(&table),
            )?;
        }
        summaries.push(CatalogSummary {
            name: name.clone(),
            results_file,
            sets_in_file: catalog.len(),
            collapsed_duplicate_members: catalog.collapsed_duplicates(),
            dropped_members: resolved.total_dropped(),
            excluded_sets: resolved.excluded.len(),
            analyzed_sets: resolved.len(),
            significant_sets: table.significant(config.q_cut).len(),
            degenerate_cells: table.degenerate_cells,
        });
        genes.get_or_insert(analysis.genes);
    }
    if let Some(genes) = &genes {
        write(
            &config.out_dir.join("genes.tsv"),
            &format_genes_tsv(&matrix, genes),
        )?;
    }
    let meta = RunMetadata {
        version: VERSION.to_string(),
        config: config.clone(),
        genes: matrix.n_genes(),
        samples: matrix.n_samples(),
        class_sizes: matrix.class_sizes(),
        catalogs: summaries,
    };
    write(&config.out_dir.join("run.json"), &json_text(&meta))?;
    Ok(meta)
}

/// Scenario study over several scenarios, one TSV row each.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let mut rows = Vec::with_capacity(args.scenarios.0.len());
    for id in &args.scenarios.0 {
        let scenario = ScenarioSpec {
            n_per_class: args.n_per_class,
            ..ScenarioSpec::preset(id, 0)?
        };
        let mut study = StudySpec::new(scenario, args.statistics.0.clone());
        study.reps = args.reps;
        study.seed = args.seed;
        study.inference.permutations = args.permutations;
        study.inference.ks_draws = args.ks_draws;
        rows.push((id.clone(), run_scenario_study(&study)?));
    }
    Ok(format_study_tsv(&rows))
}

pub fn cmd_power(args: &PowerArgs) -> Result<String> {
    let spec = PowerGridSpec {
        m: args.m,
        b_grid: args.b_grid.0.clone(),
        g_grid: args.g_grid.0.clone(),
        shift_mode: args.shift_mode,
        level: args.level,
        null_draws: args.null_draws,
        alt_draws: args.alt_draws,
        statistics: args.statistics.0.clone(),
        seed: args.seed,
    };
    Ok(format_power_tsv(&power_grid(&spec)?))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let (matrix, catalog) =
        generate_scenario(&preset_spec(&args.preset, args.seed, args.n_per_class)?)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write(
        &args.out.join("expression.tsv"),
        &format_expression_tsv(&matrix),
    )?;
    write(&args.out.join("labels.tsv"), &format_labels_tsv(&matrix))?;
    write(&args.out.join("sets.gmt"), &format_gmt(&catalog))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => cmd_run(&RunConfig::from_args(args)?).map(drop),
        Command::Simulate(args) => emit(&args.out, &cmd_simulate(&args)?),
        Command::Power(args) => emit(&args.out, &cmd_power(&args)?),
        Command::Generate(args) => cmd_generate(&args),
    }
}

/// Parses arguments, runs the verb and returns the process exit code:
/// 0 on success, 1 on usage or input errors, 2 when a statistic is degenerate.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("gsa: cannot start {threads} threads: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gsa: {e}");
            if e.is_degenerate() {
                2
            } else {
                1
            }
        }
    }
}
