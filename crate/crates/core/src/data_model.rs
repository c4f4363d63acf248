//! Expression matrices, gene-set catalogs, and catalog resolution.
//!
//! Expression files are tab-delimited: the header row holds `gene_id`
//! followed by the sample ids, and each further row a gene id followed by
//! one value per sample. Class labels come either from a separate
//! `sample_id<TAB>class` table or from a second header row.
//!
//! Catalogs use the GMT layout: `name<TAB>description<TAB>member...`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Sample class. `First` is the reference ("control") group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    First,
    Second,
}

impl Class {
    pub fn code(self) -> u8 {
        match self {
            Class::First => 1,
            Class::Second => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Class> {
        match code {
            1 => Some(Class::First),
            2 => Some(Class::Second),
            _ => None,
        }
    }
}

/// An N x n matrix of expression values with gene ids, sample ids and
/// two-class labels. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionMatrix {
    values: Vec<f64>,
    n_genes: usize,
    n_samples: usize,
    gene_ids: Vec<String>,
    sample_ids: Vec<String>,
    labels: Vec<Class>,
}

impl ExpressionMatrix {
    /// Builds a matrix from row-major `values` (gene-major).
    pub fn new(
        values: Vec<f64>,
        gene_ids: Vec<String>,
        sample_ids: Vec<String>,
        labels: Vec<Class>,
    ) -> Result<Self> {
        let n_genes = gene_ids.len();
        let n_samples = sample_ids.len();
        if n_genes == 0 {
            return Err(Error::Invalid("expression matrix has no genes".into()));
        }
        if n_samples < 4 {
            return Err(Error::Invalid(format!(
                "expression matrix needs at least 4 samples, found {n_samples}"
            )));
        }
        if values.len() != n_genes * n_samples {
            return Err(Error::Invalid(format!(
                "expected {} values for {n_genes} genes x {n_samples} samples, found {}",
                n_genes * n_samples,
                values.len()
            )));
        }
        if labels.len() != n_samples {
            return Err(Error::Labels(format!(
                "{} labels for {n_samples} samples",
                labels.len()
            )));
        }
        for class in [Class::First, Class::Second] {
            let count = labels.iter().filter(|&&c| c == class).count();
            if count < 2 {
                return Err(Error::Labels(format!(
                    "class {} has {count} sample(s); at least 2 are required",
                    class.code()
                )));
            }
        }
        let mut seen = HashSet::with_capacity(n_genes);
        for id in &gene_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Invalid(format!("duplicate gene id {id:?}")));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos / n_samples, pos % n_samples);
            return Err(Error::NonNumeric {
                gene_row: row + 1,
                sample_col: col + 1,
                gene_id: gene_ids[row].clone(),
                value: values[pos].to_string(),
            });
        }
        Ok(ExpressionMatrix {
            values,
            n_genes,
            n_samples,
            gene_ids,
            sample_ids,
            labels,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    /// Sizes of the two classes `(n1, n2)`.
    pub fn class_sizes(&self) -> (usize, usize) {
        let n2 = self.labels.iter().filter(|&&c| c == Class::Second).count();
        (self.n_samples - n2, n2)
    }

    pub fn row(&self, gene: usize) -> &[f64] {
        &self.values[gene * self.n_samples..(gene + 1) * self.n_samples]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_samples)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same data with different labels.
    pub fn with_labels(&self, labels: Vec<Class>) -> Result<Self> {
        ExpressionMatrix::new(
            self.values.clone(),
            self.gene_ids.clone(),
            self.sample_ids.clone(),
            labels,
        )
    }

    pub fn gene_index(&self) -> HashMap<&str, usize> {
        self.gene_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

/// Where sample labels come from when loading an expression table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelSource {
    /// Two-column `sample_id<TAB>class` file.
    File(PathBuf),
    /// Second row of the expression file: a leading cell, then one class per sample.
    InlineRow,
}

/// Reads an expression TSV from disk.
pub fn load_expression_tsv(
    path: impl AsRef<Path>,
    labels: &LabelSource,
) -> Result<ExpressionMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label_text = match labels {
        LabelSource::File(p) => Some(fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        LabelSource::InlineRow => None,
    };
    parse_expression_tsv(&text, &path.display().to_string(), label_text.as_deref())
}

fn split_line(line: &str) -> Vec<&str> {
    line.strip_suffix('\r')
        .unwrap_or(line)
        .split('\t')
        .collect()
}

/// Parses an expression table. `labels` is the text of a labels table;
/// `None` means the class row is inline, directly below the header.
pub fn parse_expression_tsv(
    text: &str,
    source_name: &str,
    labels: Option<&str>,
) -> Result<ExpressionMatrix> {
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty expression file".into()))?;
    let header = split_line(header);
    if header.len() < 2 {
        return Err(parse_err(1, "header has no sample columns".into()));
    }
    let sample_ids: Vec<String> = header[1..].iter().map(|s| s.to_string()).collect();
    let n_samples = sample_ids.len();

    let class_tokens: Vec<(String, String)> = match labels {
        None => {
            let (lineno, row) = lines
                .next()
                .ok_or_else(|| parse_err(2, "missing inline class row".into()))?;
            let row = split_line(row);
            if row.len() != n_samples + 1 {
                return Err(parse_err(
                    lineno,
                    format!(
                        "class row has {} fields, expected {}",
                        row.len(),
                        n_samples + 1
                    ),
                ));
            }
            sample_ids
                .iter()
                .cloned()
                .zip(row[1..].iter().map(|s| s.trim().to_string()))
                .collect()
        }
        Some(table) => parse_label_table(table)?,
    };
    let labels = assign_classes(&sample_ids, &class_tokens)?;

    let mut gene_ids = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines {
        let fields = split_line(line);
        if fields.len() != n_samples + 1 {
            return Err(parse_err(
                lineno,
                format!(
                    "row has {} fields, expected {}",
                    fields.len(),
                    n_samples + 1
                ),
            ));
        }
        let gene_row = gene_ids.len() + 1;
        for (col, cell) in fields[1..].iter().enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::NonNumeric {
                        gene_row,
                        sample_col: col + 1,
                        gene_id: fields[0].to_string(),
                        value: cell.to_string(),
                    })
                }
            }
        }
        gene_ids.push(fields[0].to_string());
    }
    ExpressionMatrix::new(values, gene_ids, sample_ids, labels)
}

fn parse_label_table(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_line(line);
        if fields.len() != 2 {
            return Err(Error::Labels(format!(
                "line {}: expected sample_id<TAB>class, found {} field(s)",
                i + 1,
                fields.len()
            )));
        }
        if out.is_empty() && fields[0] == "sample_id" {
            continue;
        }
        out.push((fields[0].trim().to_string(), fields[1].trim().to_string()));
    }
    Ok(out)
}

/// Maps class tokens to `Class`. Tokens "1"/"2" keep their meaning; any
/// other pair of tokens is numbered by first appearance.
fn assign_classes(sample_ids: &[String], tokens: &[(String, String)]) -> Result<Vec<Class>> {
    let mut by_sample: HashMap<&str, &str> = HashMap::with_capacity(tokens.len());
    let known: HashSet<&str> = sample_ids.iter().map(String::as_str).collect();
    let mut order: Vec<&str> = Vec::new();
    for (sample, class) in tokens {
        if !known.contains(sample.as_str()) {
            return Err(Error::Labels(format!("unknown sample {sample:?}")));
        }
        if by_sample.insert(sample, class).is_some() {
            return Err(Error::Labels(format!("sample {sample:?} labelled twice")));
        }
        if !order.contains(&class.as_str()) {
            order.push(class);
        }
    }
    if let Some(missing) = sample_ids
        .iter()
        .find(|s| !by_sample.contains_key(s.as_str()))
    {
        return Err(Error::Labels(format!(
            "no class given for sample {missing:?}"
        )));
    }
    if order.len() > 2 {
        return Err(Error::Labels(format!(
            "expected two classes, found {}: {}",
            order.len(),
            order.join(", ")
        )));
    }
    let numeric = order.iter().all(|t| *t == "1" || *t == "2");
    let class_of = |token: &str| -> Class {
        if numeric {
            if token == "1" {
                Class::First
            } else {
                Class::Second
            }
        } else if token == order[0] {
            Class::First
        } else {
            Class::Second
        }
    };
    Ok(sample_ids
        .iter()
        .map(|s| class_of(by_sample[s.as_str()]))
        .collect())
}

/// One gene-set as listed in a catalog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneSet {
    pub name: String,
    pub description: String,
    pub members: Vec<String>,
}

/// A named collection of gene-sets. Names are unique, sets nonempty and
/// duplicate members are collapsed (first occurrence kept).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GeneSetCatalog {
    sets: Vec<GeneSet>,
    collapsed_duplicates: usize,
}

impl GeneSetCatalog {
    pub fn new(sets: impl IntoIterator<Item = GeneSet>) -> Result<Self> {
        let mut catalog = GeneSetCatalog::default();
        for set in sets {
            catalog.push(set).map_err(Error::Invalid)?;
        }
        Ok(catalog)
    }

    fn push(&mut self, set: GeneSet) -> std::result::Result<(), String> {
        if self.sets.iter().any(|s| s.name == set.name) {
            return Err(format!("duplicate gene-set name {:?}", set.name));
        }
        let mut seen = HashSet::with_capacity(set.members.len());
        let listed = set.members.len();
        let members: Vec<String> = set
            .members
            .into_iter()
            .filter(|m| seen.insert(m.clone()))
            .collect();
        if members.is_empty() {
            return Err(format!("gene-set {:?} has no members", set.name));
        }
        self.collapsed_duplicates += listed - members.len();
        self.sets.push(GeneSet {
            name: set.name,
            description: set.description,
            members,
        });
        Ok(())
    }

    pub fn sets(&self) -> &[GeneSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Number of duplicate member ids dropped while building the catalog.
    pub fn collapsed_duplicates(&self) -> usize {
        self.collapsed_duplicates
    }
}

pub fn load_gmt(path: impl AsRef<Path>) -> Result<GeneSetCatalog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_gmt(&text, &path.display().to_string())
}

pub fn parse_gmt(text: &str, source_name: &str) -> Result<GeneSetCatalog> {
    let mut catalog = GeneSetCatalog::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(err(format!(
                "expected name, description and at least one member; found {} field(s)",
                fields.len()
            )));
        }
        if fields[0].is_empty() {
            return Err(err("empty gene-set name".into()));
        }
        let members = fields[2..]
            .iter()
            .filter(|m| !m.is_empty())
            .map(|m| m.to_string())
            .collect();
        catalog
            .push(GeneSet {
                name: fields[0].to_string(),
                description: fields[1].to_string(),
                members,
            })
            .map_err(err)?;
    }
    Ok(catalog)
}

pub fn format_gmt(catalog: &GeneSetCatalog) -> String {
    let mut out = String::new();
    for set in catalog.sets() {
        out.push_str(&set.name);
        out.push('\t');
        out.push_str(&set.description);
        for m in &set.members {
            out.push('\t');
            out.push_str(m);
        }
        out.push('\n');
    }
    out
}

/// Expression table with a `gene_id` header; values use shortest round-trip formatting.
pub fn format_expression_tsv(matrix: &ExpressionMatrix) -> String {
    let mut out = String::from("gene_id");
    for s in matrix.sample_ids() {
        out.push('\t');
        out.push_str(s);
    }
    out.push('\n');
    for (id, row) in matrix.gene_ids().iter().zip(matrix.rows()) {
        out.push_str(id);
        for v in row {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn format_labels_tsv(matrix: &ExpressionMatrix) -> String {
    let mut out = String::from("sample_id\tclass\n");
    for (s, c) in matrix.sample_ids().iter().zip(matrix.labels()) {
        let _ = writeln!(out, "{s}\t{}", c.code());
    }
    out
}

/// A gene-set resolved against matrix rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedSet {
    pub name: String,
    pub row_indices: Vec<usize>,
    /// Members listed in the catalog but absent from the matrix.
    pub dropped: usize,
}

impl ResolvedSet {
    pub fn size(&self) -> usize {
        self.row_indices.len()
    }
}

/// A set removed by the size filter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExcludedSet {
    pub name: String,
    pub resolved_size: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedCatalog {
    pub sets: Vec<ResolvedSet>,
    pub excluded: Vec<ExcludedSet>,
}

impl ResolvedCatalog {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Unknown members over every catalog set, excluded ones included.
    pub fn total_dropped(&self) -> usize {
        self.sets.iter().map(|s| s.dropped).sum::<usize>()
            + self.excluded.iter().map(|s| s.dropped).sum::<usize>()
    }

    /// The surviving sets written back as gene ids.
    pub fn to_catalog(&self, matrix: &ExpressionMatrix) -> GeneSetCatalog {
        let sets = self.sets.iter().map(|s| GeneSet {
            name: s.name.clone(),
            description: String::new(),
            members: s
                .row_indices
                .iter()
                .map(|&i| matrix.gene_ids()[i].clone())
                .collect(),
        });
        GeneSetCatalog::new(sets).expect("resolved sets are valid catalog entries")
    }
}

/// Maps catalog members to matrix rows and applies the size filter
/// `min_size <= m <= max_size` (`None` = unbounded).
pub fn resolve_catalog(
    catalog: &GeneSetCatalog,
    matrix: &ExpressionMatrix,
    min_size: usize,
    max_size: Option<usize>,
) -> Result<ResolvedCatalog> {
    if min_size < 1 {
        return Err(Error::Invalid("min_size must be at least 1".into()));
    }
    if let Some(max) = max_size {
        if max < min_size {
            return Err(Error::Invalid(format!(
                "max_size {max} is below min_size {min_size}"
            )));
        }
    }
    let index = matrix.gene_index();
    let mut resolved = ResolvedCatalog {
        sets: Vec::new(),
        excluded: Vec::new(),
    };
    for set in catalog.sets() {
        let row_indices: Vec<usize> = set
            .members
            .iter()
            .filter_map(|m| index.get(m.as_str()).copied())
            .collect();
        let m = row_indices.len();
        if m < min_size || max_size.is_some_and(|max| m > max) {
            resolved.excluded.push(ExcludedSet {
                name: set.name.clone(),
                resolved_size: m,
                dropped: set.members.len() - m,
            });
            continue;
        }
        resolved.sets.push(ResolvedSet {
            name: set.name.clone(),
            dropped: set.members.len() - m,
            row_indices,
        });
    }
    if resolved.sets.is_empty() {
        return Err(Error::EmptyCatalog {
            min_size,
            max_size,
            excluded: resolved.excluded.len(),
        });
    }
    Ok(resolved)
}
