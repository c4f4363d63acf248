use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {what} (got {value})")]
    Domain { what: &'static str, value: f64 },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}, line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("non-numeric value {value:?} at gene row {gene_row} ({gene_id}), sample column {sample_col}")]
    NonNumeric {
        gene_row: usize,
        sample_col: usize,
        gene_id: String,
        value: String,
    },

    #[error("labels: {0}")]
    Labels(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("zero pooled variance for {} gene(s): {}", gene_ids.len(), gene_ids.join(", "))]
    ZeroVariance { gene_ids: Vec<String> },

    #[error("no gene-sets left after resolution (size filter [{min_size}, {max}], {excluded} excluded)",
        max = max_size.map_or_else(|| "inf".to_string(), |m| m.to_string()))]
    EmptyCatalog {
        min_size: usize,
        max_size: Option<usize>,
        excluded: usize,
    },

    #[error("moment basis has {size} value(s); at least 2 are required")]
    BasisTooSmall { size: usize },

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("{0} has no analytic randomization moments; use row randomization")]
    EmpiricalMomentsRequired(&'static str),

    #[error("subset size {m} exceeds population size {n}")]
    SubsetTooLarge { m: usize, n: usize },

    #[error("tilted-mean equation has no root: {0}")]
    NoRoot(String),

    #[error("tilt weights overflow; rescale the scores or shrink beta")]
    WeightOverflow,

    #[error("no valid permutation values")]
    NoValidPermutations,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by a statistic with zero null variance.
    pub fn is_degenerate(&self) -> bool {
        matches!(self, Error::Degenerate(_))
    }
}
