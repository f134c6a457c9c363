//! Sparse cases and the loaders that produce them.
//!
//! Two on-disk formats are supported:
//!
//! * sparse text, one case per line: `label idx:val idx:val ...` with
//!   zero-based, strictly ascending indices; `#` starts a comment line;
//! * CSV with a header row plus a sidecar schema (`column=kind` lines, kind
//!   one of `numeric`, `categorical`, `label`, `ignore`). Categorical columns
//!   are one-hot encoded; a category unseen at fit time encodes to an
//!   all-zero group.
//!
//! Labels are remapped to dense ids `0..L` at load time. Numeric features are
//! min-max scaled by [`normalize`] using ranges fitted on the training split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub type CaseId = u64;
pub type Label = u32;

/// Sparse feature vector with strictly ascending indices and no stored zeros.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn empty(dim: usize) -> Self {
        SparseVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from `(index, value)` pairs. Zero values are dropped;
    /// indices must be strictly ascending and below `dim`.
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<usize> = None;
        for (idx, val) in entries {
            if idx >= dim {
                return Err(Error::invalid(format!("index {idx} out of range for dim {dim}")));
            }
            if let Some(prev) = last {
                if idx <= prev {
                    return Err(Error::invalid(format!(
                        "indices must be strictly ascending ({prev} then {idx})"
                    )));
                }
            }
            last = Some(idx);
            if !val.is_finite() {
                return Err(Error::invalid(format!("non-finite value at index {idx}")));
            }
            if val != 0.0 {
                indices.push(idx);
                values.push(val);
            }
        }
        Ok(SparseVector {
            dim,
            indices,
            values,
        })
    }

    /// Dense input; zeros are skipped.
    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values.iter().copied().enumerate();
        SparseVector::new(values.len(), entries).expect("dense input is always ordered")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored nonzero entries.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, idx: usize) -> f64 {
        match self.indices.binary_search(&idx) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        SparseVector::new(self.dim, self.iter().map(|(i, v)| (i, v * c))).expect("same layout")
    }

    /// Same entries, larger ambient dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        SparseVector::new(dim, self.iter())
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    /// Exact squared Euclidean distance by merging the two index lists.
    pub fn squared_distance(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        let (ia, va) = (&self.indices, &self.values);
        let (ib, vb) = (&other.indices, &other.values);
        while a < ia.len() && b < ib.len() {
            match ia[a].cmp(&ib[b]) {
                std::cmp::Ordering::Less => {
                    acc += va[a] * va[a];
                    a += 1;
                }
                std::cmp::Ordering::Greater => {
                    acc += vb[b] * vb[b];
                    b += 1;
                }
                std::cmp::Ordering::Equal => {
                    let d = va[a] - vb[b];
                    acc += d * d;
                    a += 1;
                    b += 1;
                }
            }
        }
        acc += va[a..].iter().map(|v| v * v).sum::<f64>();
        acc += vb[b..].iter().map(|v| v * v).sum::<f64>();
        acc
    }

    pub fn distance(&self, other: &SparseVector) -> f64 {
        self.squared_distance(other).sqrt()
    }
}

/// A stored problem together with its solution label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseCase {
    pub id: CaseId,
    pub features: SparseVector,
    pub label: Label,
}

impl SparseCase {
    pub fn new(id: CaseId, features: SparseVector, label: Label) -> Self {
        SparseCase {
            id,
            features,
            label,
        }
    }
}

/// Pairwise supervision: 1 iff the two cases share a solution label.
pub fn similarity_label(a: &SparseCase, b: &SparseCase) -> u8 {
    u8::from(a.label == b.label)
}

/// Loaded cases plus the dense-label dictionary.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cases: Vec<SparseCase>,
    pub dim: usize,
    /// `label_names[id]` is the original label token.
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn label_id(&self, name: &str) -> Option<Label> {
        self.label_names
            .iter()
            .position(|n| n == name)
            .map(|p| p as Label)
    }
}

/// Assigns dense ids to label tokens: numeric order when every token parses
/// as a number, lexicographic otherwise.
fn dense_labels<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let distinct: BTreeSet<&str> = tokens.into_iter().collect();
    let mut names: Vec<String> = distinct.into_iter().map(str::to_owned).collect();
    let numeric: Option<Vec<f64>> = names.iter().map(|n| n.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(f64, String)> = nums.into_iter().zip(names).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        names = paired.into_iter().map(|(_, n)| n).collect();
    }
    names
}

/// Reads the sparse text format. The dimension is one past the largest index
/// seen anywhere in the file; case ids are assigned in line order.
pub fn load_sparse_text(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);

    let mut rows: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    let mut max_index: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let label = tokens
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "missing label"))?;
        if label.contains(':') {
            return Err(Error::parse(path, lineno, "line starts with a feature, not a label"));
        }
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(path, lineno, format!("expected idx:val, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad index {idx:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad value {val:?}")))?;
            if !val.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite value at index {idx}")));
            }
            if let Some(&(prev, _)) = entries.last() {
                if idx <= prev {
                    let what = if idx == prev { "duplicate" } else { "non-ascending" };
                    return Err(Error::parse(path, lineno, format!("{what} index {idx} after {prev}")));
                }
            }
            entries.push((idx, val));
            max_index = Some(max_index.map_or(idx, |m| m.max(idx)));
        }
        rows.push((label.to_owned(), entries));
    }

    let dim = max_index.map_or(0, |m| m + 1);
    let label_names = dense_labels(rows.iter().map(|(l, _)| l.as_str()));
    let lookup: HashMap<&str, Label> = label_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i as Label))
        .collect();
    let cases = rows
        .iter()
        .enumerate()
        .map(|(i, (label, entries))| {
            let features = SparseVector::new(dim, entries.iter().copied())?;
            Ok(SparseCase::new(i as CaseId, features, lookup[label.as_str()]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        cases,
        dim,
        label_names,
    })
}

/// Writes cases in the sparse text format. `label_names` maps dense ids back
/// to the original tokens; when `None`, the dense id itself is written.
pub fn write_sparse_text(
    path: impl AsRef<Path>,
    cases: &[SparseCase],
    label_names: Option<&[String]>,
) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let mut line = String::new();
    for case in cases {
        line.clear();
        match label_names {
            Some(names) => line.push_str(&names[case.label as usize]),
            None => write!(line, "{}", case.label).unwrap(),
        }
        for (i, v) in case.features.iter() {
            write!(line, " {i}:{v}").unwrap();
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
    Ignore,
}

/// Column-to-kind mapping read from the schema sidecar.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SchemaSpec {
    kinds: BTreeMap<String, ColumnKind>,
}

impl SchemaSpec {
    pub fn new(kinds: impl IntoIterator<Item = (String, ColumnKind)>) -> Self {
        SchemaSpec {
            kinds: kinds.into_iter().collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kinds = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (col, kind) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("line {}: expected column=kind", lineno + 1)))?;
            let kind = match kind.trim() {
                "numeric" => ColumnKind::Numeric,
                "categorical" => ColumnKind::Categorical,
                "label" => ColumnKind::Label,
                "ignore" => ColumnKind::Ignore,
                other => {
                    return Err(Error::Schema(format!(
                        "line {}: unknown column kind {other:?}",
                        lineno + 1
                    )))
                }
            };
            kinds.insert(col.trim().to_owned(), kind);
        }
        Ok(SchemaSpec { kinds })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        SchemaSpec::parse(&fs::read_to_string(path)?)
    }

    pub fn kind(&self, column: &str) -> Option<ColumnKind> {
        self.kinds.get(column).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnEncoding {
    Numeric { index: usize },
    Categorical { offset: usize, vocab: Vec<String> },
    Label,
    Ignore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub encoding: ColumnEncoding,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    /// Min-max scaling with clamping; a constant range maps everything to 0.
    pub fn scale(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0.0;
        }
        ((v - self.min) / span).clamp(0.0, 1.0)
    }
}

/// Feature layout of a dataset: which feature indices are numeric (and their
/// training-split ranges), and how categorical columns expand to one-hot
/// groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub columns: Vec<ColumnSchema>,
    pub dim: usize,
    pub label_names: Vec<String>,
    /// `ranges[j]` is `Some` exactly for numeric feature indices.
    ranges: Vec<Option<FeatureRange>>,
}

impl DatasetSchema {
    /// Schema for data that arrives already vectorized (sparse text): every
    /// feature index is treated as numeric.
    pub fn all_numeric(dim: usize, label_names: Vec<String>) -> Self {
        DatasetSchema {
            columns: Vec::new(),
            dim,
            label_names,
            ranges: vec![Some(FeatureRange { min: 0.0, max: 0.0 }); dim],
        }
    }

    pub fn range(&self, feature: usize) -> Option<FeatureRange> {
        self.ranges.get(feature).copied().flatten()
    }

    /// Refits numeric ranges on `train`. Absent entries count as zeros.
    pub fn fit_ranges(&mut self, train: &[SparseCase]) {
        let numeric: Vec<usize> = (0..self.dim).filter(|&j| self.ranges[j].is_some()).collect();
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        let mut seen = vec![0usize; self.dim];
        for case in train {
            for (j, v) in case.features.iter() {
                if j < self.dim {
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                    seen[j] += 1;
                }
            }
        }
        for j in numeric {
            if train.is_empty() {
                self.ranges[j] = Some(FeatureRange { min: 0.0, max: 0.0 });
                continue;
            }
            let (mut min, mut max) = (lo[j], hi[j]);
            if seen[j] < train.len() {
                min = min.min(0.0);
                max = max.max(0.0);
            }
            self.ranges[j] = Some(FeatureRange { min, max });
        }
    }

    /// Encodes one raw record (already split into fields, header order).
    /// Unseen categories produce an all-zero group.
    pub fn encode_record(&self, fields: &[&str]) -> Result<(SparseVector, Option<Label>)> {
        if fields.len() != self.columns.len() {
            return Err(Error::Schema(format!(
                "record has {} fields, schema has {} columns",
                fields.len(),
                self.columns.len()
            )));
        }
        let mut entries: Vec<(usize, f64)> = Vec::new();
        let mut label = None;
        for (col, raw) in self.columns.iter().zip(fields) {
            let raw = raw.trim();
            match &col.encoding {
                ColumnEncoding::Numeric { index } => {
                    let v: f64 = raw.parse().map_err(|_| {
                        Error::Schema(format!("column {}: non-numeric value {raw:?}", col.name))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Schema(format!("column {}: non-finite value", col.name)));
                    }
                    entries.push((*index, v));
                }
                ColumnEncoding::Categorical { offset, vocab } => {
                    if let Ok(pos) = vocab.binary_search_by(|c| c.as_str().cmp(raw)) {
                        entries.push((offset + pos, 1.0));
                    }
                }
                ColumnEncoding::Label => {
                    let id = self
                        .label_names
                        .iter()
                        .position(|n| n == raw)
                        .ok_or_else(|| Error::Schema(format!("unknown label {raw:?}")))?;
                    label = Some(id as Label);
                }
                ColumnEncoding::Ignore => {}
            }
        }
        entries.sort_by_key(|&(i, _)| i);
        Ok((SparseVector::new(self.dim, entries)?, label))
    }
}

fn read_csv_records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        records.push(rec.map_err(|e| Error::parse(path, i + 2, e.to_string()))?);
    }
    Ok((header, records))
}

/// Loads a CSV file, fitting category vocabularies, the label set and the
/// numeric ranges on the whole file. Refit ranges on the training split with
/// [`DatasetSchema::fit_ranges`] before normalizing.
pub fn load_csv(path: impl AsRef<Path>, spec: &SchemaSpec) -> Result<(Dataset, DatasetSchema)> {
    let path = path.as_ref();
    let (header, records) = read_csv_records(path)?;

    let mut kinds = Vec::with_capacity(header.len());
    for name in &header {
        let kind = spec
            .kind(name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} missing from schema")))?;
        kinds.push(kind);
    }
    let label_col = match kinds.iter().filter(|k| **k == ColumnKind::Label).count() {
        1 => kinds.iter().position(|k| *k == ColumnKind::Label).unwrap(),
        0 => return Err(Error::Schema("no label column".into())),
        _ => return Err(Error::Schema("more than one label column".into())),
    };

    let mut vocabs: Vec<BTreeSet<String>> = vec![BTreeSet::new(); header.len()];
    for rec in &records {
        for (c, kind) in kinds.iter().enumerate() {
            if *kind == ColumnKind::Categorical {
                vocabs[c].insert(rec.get(c).unwrap_or("").to_owned());
            }
        }
    }
    let label_names = dense_labels(records.iter().map(|r| r.get(label_col).unwrap_or("")));

    let mut columns = Vec::with_capacity(header.len());
    let mut ranges = Vec::new();
    let mut offset = 0;
    for (c, name) in header.iter().enumerate() {
        let encoding = match kinds[c] {
            ColumnKind::Numeric => {
                ranges.push(Some(FeatureRange { min: 0.0, max: 0.0 }));
                offset += 1;
                ColumnEncoding::Numeric { index: offset - 1 }
            }
            ColumnKind::Categorical => {
                let vocab: Vec<String> = std::mem::take(&mut vocabs[c]).into_iter().collect();
                ranges.extend(std::iter::repeat_n(None, vocab.len()));
                let enc = ColumnEncoding::Categorical { offset, vocab };
                if let ColumnEncoding::Categorical { vocab, .. } = &enc {
                    offset += vocab.len();
                }
                enc
            }
            ColumnKind::Label => ColumnEncoding::Label,
            ColumnKind::Ignore => ColumnEncoding::Ignore,
        };
        columns.push(ColumnSchema {
            name: name.clone(),
            encoding,
        });
    }
    let mut schema = DatasetSchema {
        columns,
        dim: offset,
        label_names: label_names.clone(),
        ranges,
    };

    let cases = encode_records(path, &schema, &records)?;
    schema.fit_ranges(&cases);
    Ok((
        Dataset {
            cases,
            dim: schema.dim,
            label_names,
        },
        schema,
    ))
}

/// Transform-time CSV load against an already fitted schema.
pub fn load_csv_with_schema(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let (_, records) = read_csv_records(path)?;
    let cases = encode_records(path, schema, &records)?;
    Ok(Dataset {
        cases,
        dim: schema.dim,
        label_names: schema.label_names.clone(),
    })
}

fn encode_records(path: &Path, schema: &DatasetSchema, records: &[csv::StringRecord]) -> Result<Vec<SparseCase>> {
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let fields: Vec<&str> = rec.iter().collect();
            let (features, label) = schema
                .encode_record(&fields)
                .map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
            let label = label.ok_or_else(|| Error::parse(path, i + 2, "missing label"))?;
            Ok(SparseCase::new(i as CaseId, features, label))
        })
        .collect()
}

/// Min-max scales every numeric feature (including implicit zeros) into
/// `[0, 1]` using the schema's fitted ranges. One-hot features pass through.
pub fn normalize(cases: &[SparseCase], schema: &DatasetSchema) -> Vec<SparseCase> {
    // Numeric features whose implicit zero maps to a nonzero value.
    let shifted: Vec<(usize, f64)> = (0..schema.dim)
        .filter_map(|j| schema.range(j).map(|r| (j, r.scale(0.0))))
        .filter(|&(_, z)| z != 0.0)
        .collect();

    cases
        .iter()
        .map(|case| {
            let mut entries: Vec<(usize, f64)> = case
                .features
                .iter()
                .map(|(j, v)| match schema.range(j) {
                    Some(r) => (j, r.scale(v)),
                    None => (j, v),
                })
                .collect();
            for &(j, z) in &shifted {
                if case.features.get(j) == 0.0 {
                    entries.push((j, z));
                }
            }
            if !shifted.is_empty() {
                entries.sort_by_key(|&(j, _)| j);
            }
            let features = SparseVector::new(case.features.dim(), entries).expect("same layout");
            SparseCase::new(case.id, features, case.label)
        })
        .collect()
}

/// Seeded shuffle-and-cut into a disjoint, exhaustive train/test partition.
pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut seed::rng(seed));
    let n_train = (items.len() as f64 * train_fraction).round() as usize;
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

/// Seeded k-fold partition of `0..n`; returns `(train, test)` index lists.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("cannot make {k} folds from {n} items")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let folds = (0..k)
        .map(|f| {
            let lo = f * n / k;
            let hi = (f + 1) * n / k;
            let test = order[lo..hi].to_vec();
            let train = order[..lo].iter().chain(&order[hi..]).copied().collect();
            (train, test)
        })
        .collect();
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_sparse_line() {
        let f = write_tmp("# header comment\n0 2:3\n1 0:1 4:0.5\n");
        let ds = load_sparse_text(f.path()).unwrap();
        assert_eq!(ds.dim, 5);
        let case = &ds.cases[1];
        assert_eq!(case.features.nnz(), 2);
        assert_eq!(case.label, 1);
        assert_eq!(case.features.get(4), 0.5);
    }

    #[test]
    fn empty_feature_list_is_valid() {
        let f = write_tmp("0 \n1 3:1\n");
        let ds = load_sparse_text(f.path()).unwrap();
        assert!(ds.cases[0].features.is_empty());
        assert_eq!(ds.cases[0].features.dim(), 4);
    }

    #[test]
    fn dim_is_one_past_max_index() {
        let f = write_tmp("1 0:1 117:1\n0 5:2\n");
        assert_eq!(load_sparse_text(f.path()).unwrap().dim, 118);
    }

    #[test]
    fn rejects_bad_indices_with_line_number() {
        let f = write_tmp("0 1:1\n1 3:1 2:1\n");
        match load_sparse_text(f.path()) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("non-ascending"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("0 1:1 1:2\n");
        assert!(matches!(load_sparse_text(f.path()), Err(Error::Parse { line: 1, .. })));
        let f = write_tmp("0 1:1\n\n1 x:1\n");
        assert!(matches!(load_sparse_text(f.path()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn labels_are_dense() {
        let f = write_tmp("-1 0:1\n+1 1:1\n-1 2:1\n");
        let ds = load_sparse_text(f.path()).unwrap();
        assert_eq!(ds.label_names, vec!["-1", "+1"]);
        assert_eq!(ds.cases.iter().map(|c| c.label).collect::<Vec<_>>(), vec![0, 1, 0]);
    }

    const CSV: &str = "color,size,weight,y\na,s,1.5,yes\nb,m,2,no\nc,s,0,yes\n";

    fn toy_spec() -> SchemaSpec {
        SchemaSpec::parse("color=categorical\nsize=categorical\nweight=numeric\ny=label\n").unwrap()
    }

    #[test]
    fn csv_one_hot_layout() {
        let f = write_tmp(CSV);
        let (ds, schema) = load_csv(f.path(), &toy_spec()).unwrap();
        // 3 colors + 2 sizes + 1 numeric
        assert_eq!(ds.dim, 6);
        assert_eq!(schema.dim, 6);
        let b = ds.cases[1].features.to_dense();
        assert_eq!(&b[0..3], &[0.0, 1.0, 0.0]);
        assert_eq!(ds.label_names, vec!["no", "yes"]);
        assert_eq!(ds.cases[1].label, 0);
    }

    #[test]
    fn csv_unseen_category_is_zero_group() {
        let f = write_tmp(CSV);
        let (_, schema) = load_csv(f.path(), &toy_spec()).unwrap();
        let (v, label) = schema.encode_record(&["z", "m", "1", "yes"]).unwrap();
        let dense = v.to_dense();
        assert_eq!(&dense[0..3], &[0.0, 0.0, 0.0]);
        // sizes are {m, s}: "m" is the first slot of the group at offset 3
        assert_eq!(&dense[3..5], &[1.0, 0.0]);
        assert_eq!(label, Some(1));
    }

    #[test]
    fn csv_errors() {
        let f = write_tmp("color,y\na,1\n");
        let spec = SchemaSpec::parse("color=categorical\ny=numeric\n").unwrap();
        assert!(matches!(load_csv(f.path(), &spec), Err(Error::Schema(_))));

        let f = write_tmp("w,y\nheavy,1\n");
        let spec = SchemaSpec::parse("w=numeric\ny=label\n").unwrap();
        assert!(matches!(load_csv(f.path(), &spec), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn min_max_rules() {
        let r = FeatureRange { min: 0.0, max: 4.0 };
        assert_eq!(r.scale(2.0), 0.5);
        assert_eq!(r.scale(-1.0), 0.0);
        assert_eq!(r.scale(9.0), 1.0);
        let constant = FeatureRange { min: 3.0, max: 3.0 };
        assert_eq!(constant.scale(3.0), 0.0);
        assert_eq!(constant.scale(-7.0), 0.0);
    }

    #[test]
    fn normalize_handles_implicit_zeros() {
        let cases = vec![
            SparseCase::new(0, SparseVector::from_dense(&[-2.0, 1.0]), 0),
            SparseCase::new(1, SparseVector::from_dense(&[2.0, 0.0]), 1),
            SparseCase::new(2, SparseVector::from_dense(&[0.0, 1.0]), 1),
        ];
        let mut schema = DatasetSchema::all_numeric(2, vec!["a".into(), "b".into()]);
        schema.fit_ranges(&cases);
        let out = normalize(&cases, &schema);
        assert_eq!(out[0].features.to_dense(), vec![0.0, 1.0]);
        assert_eq!(out[1].features.to_dense(), vec![1.0, 0.0]);
        assert_eq!(out[2].features.to_dense(), vec![0.5, 1.0]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<u32> = (0..10).collect();
        let (tr, te) = split(&items, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split(&items, 0.8, 3).unwrap(), (tr.clone(), te.clone()));
        let mut all: Vec<u32> = tr.into_iter().chain(te).collect();
        all.sort();
        assert_eq!(all, items);
        for f in 1..10 {
            assert!(split(&items, f as f64 / 10.0, 1).is_ok());
        }
        assert!(split(&items, 0.0, 1).is_err());
        assert!(split(&items, 1.0, 1).is_err());
    }

    #[test]
    fn kfold_partitions() {
        let folds = kfold(23, 5, 9).unwrap();
        let mut seen: Vec<usize> = folds.iter().flat_map(|(_, t)| t.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        for (tr, te) in &folds {
            assert_eq!(tr.len() + te.len(), 23);
        }
    }

    #[test]
    fn similarity_is_label_equality() {
        let f = |l| SparseCase::new(0, SparseVector::empty(1), l);
        assert_eq!(similarity_label(&f(3), &f(3)), 1);
        assert_eq!(similarity_label(&f(1), &f(2)), 0);
    }

    fn arb_case(dim: usize) -> impl Strategy<Value = SparseCase> {
        (
            proptest::collection::btree_map(0..dim, -100.0f64..100.0, 0..8),
            0u32..4,
        )
            .prop_map(move |(m, label)| SparseCase::new(0, SparseVector::new(dim, m).unwrap(), label))
    }

    proptest! {
        #[test]
        fn sparse_text_round_trip(cases in proptest::collection::vec(arb_case(12), 1..20)) {
            let cases: Vec<SparseCase> = cases
                .into_iter()
                .enumerate()
                .map(|(i, mut c)| { c.id = i as CaseId; c })
                .collect();
            // labels written as dense ids, so every id must occur for the
            // remap to be the identity
            let mut cases = cases;
            for l in 0..4u32 {
                cases.push(SparseCase::new(cases.len() as CaseId, SparseVector::new(12, [(11, 1.0)]).unwrap(), l));
            }
            let f = tempfile::NamedTempFile::new().unwrap();
            write_sparse_text(f.path(), &cases, None).unwrap();
            let back = load_sparse_text(f.path()).unwrap();
            prop_assert_eq!(back.cases, cases);
        }

        #[test]
        fn normalize_is_idempotent(cases in proptest::collection::vec(arb_case(6), 1..30)) {
            let mut schema = DatasetSchema::all_numeric(6, vec![]);
            schema.fit_ranges(&cases);
            let once = normalize(&cases, &schema);
            let mut refit = schema.clone();
            refit.fit_ranges(&once);
            let twice = normalize(&once, &refit);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn similarity_symmetric_reflexive(a in 0u32..6, b in 0u32..6) {
            let f = |l| SparseCase::new(0, SparseVector::empty(1), l);
            prop_assert_eq!(similarity_label(&f(a), &f(b)), similarity_label(&f(b), &f(a)));
            prop_assert_eq!(similarity_label(&f(a), &f(a)), 1);
        }
    }
}
