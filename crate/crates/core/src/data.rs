//! Delimited-log ingestion, vocabularies, dense transforms, splits and
//! mini-batches.
//!
//! The flow is `load_table` → [`split_indices`] → [`Preprocessor::fit`] on
//! the train rows → [`Preprocessor::encode`] for every split. Vocabularies
//! and dense statistics never see validation or test rows.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{fnv1a, rng_for};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file has no data rows")]
    Empty { path: PathBuf },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column `{column}`: {reason}")]
    Parse {
        line: usize,
        column: String,
        reason: String,
    },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("row {row}: label {value} is not 0 or 1")]
    NonBinaryLabel { row: usize, value: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    UserId,
    ItemId,
    Categorical,
    Dense,
    RatingTarget,
    LabelTarget,
    Ignore,
}

impl Role {
    pub fn is_categorical(self) -> bool {
        matches!(self, Self::UserId | Self::ItemId | Self::Categorical)
    }

    pub fn is_target(self) -> bool {
        matches!(self, Self::RatingTarget | Self::LabelTarget)
    }
}

/// Prediction task, fixed by the target column's role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Rating,
    Ctr,
}

impl Task {
    /// Name of the validation metric.
    pub fn metric(self) -> &'static str {
        match self {
            Self::Rating => "mse",
            Self::Ctr => "logloss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
}

impl Column {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Self {
            name: name.into(),
            role,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
    pub delimiter: String,
    #[serde(default)]
    pub header: bool,
}

const AVAZU_COLUMNS: [&str; 24] = [
    "id",
    "click",
    "hour",
    "C1",
    "banner_pos",
    "site_id",
    "site_domain",
    "site_category",
    "app_id",
    "app_domain",
    "app_category",
    "device_id",
    "device_ip",
    "device_model",
    "device_type",
    "device_conn_type",
    "C14",
    "C15",
    "C16",
    "C17",
    "C18",
    "C19",
    "C20",
    "C21",
];

impl Schema {
    /// MovieLens-1M `ratings.dat`: `user::item::rating::timestamp`.
    pub fn movielens() -> Self {
        Self {
            columns: vec![
                Column::new("user", Role::UserId),
                Column::new("item", Role::ItemId),
                Column::new("rating", Role::RatingTarget),
                Column::new("timestamp", Role::Ignore),
            ],
            delimiter: "::".into(),
            header: false,
        }
    }

    /// Criteo display-ads TSV: label, 13 integer and 26 categorical columns.
    pub fn criteo() -> Self {
        let mut columns = vec![Column::new("label", Role::LabelTarget)];
        columns.extend((1..=13).map(|i| Column::new(format!("I{i}"), Role::Dense)));
        columns.extend((1..=26).map(|i| Column::new(format!("C{i}"), Role::Categorical)));
        Self {
            columns,
            delimiter: "\t".into(),
            header: false,
        }
    }

    /// Avazu `train.csv` with its header; `click` is the label and `id` is
    /// dropped.
    pub fn avazu() -> Self {
        let columns = AVAZU_COLUMNS
            .iter()
            .map(|&name| {
                let role = match name {
                    "id" => Role::Ignore,
                    "click" => Role::LabelTarget,
                    _ => Role::Categorical,
                };
                Column::new(name, role)
            })
            .collect();
        Self {
            columns,
            delimiter: ",".into(),
            header: true,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "movielens" => Some(Self::movielens()),
            "criteo" => Some(Self::criteo()),
            "avazu" => Some(Self::avazu()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.delimiter.is_empty() {
            return Err(DataError::Schema("empty delimiter".into()));
        }
        let targets = self.columns.iter().filter(|c| c.role.is_target()).count();
        if targets != 1 {
            return Err(DataError::Schema(format!(
                "expected exactly one target column, found {targets}"
            )));
        }
        if !self
            .columns
            .iter()
            .any(|c| c.role.is_categorical() || c.role == Role::Dense)
        {
            return Err(DataError::Schema("no feature columns".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        Ok(())
    }

    pub fn task(&self) -> Result<Task, DataError> {
        self.validate()?;
        Ok(
            match self
                .columns
                .iter()
                .find(|c| c.role.is_target())
                .map(|c| c.role)
            {
                Some(Role::LabelTarget) => Task::Ctr,
                _ => Task::Rating,
            },
        )
    }

    fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role.is_target())
            .unwrap_or(0)
    }
}

/// Unparsed rows, column-major over every schema column.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    columns: Vec<Vec<String>>,
    lines: Vec<usize>,
}

impl RawTable {
    /// Builds a table from rows of fields; line numbers count from 1.
    pub fn from_rows<S: AsRef<str>>(schema: &Schema, rows: &[Vec<S>]) -> Result<Self, DataError> {
        let mut table = Self {
            columns: vec![Vec::with_capacity(rows.len()); schema.columns.len()],
            lines: Vec::with_capacity(rows.len()),
        };
        for (i, row) in rows.iter().enumerate() {
            table.push(i + 1, row.iter().map(|s| s.as_ref()))?;
        }
        Ok(table)
    }

    fn push<'a>(
        &mut self,
        line: usize,
        fields: impl Iterator<Item = &'a str>,
    ) -> Result<(), DataError> {
        let expected = self.columns.len();
        let mut found = 0;
        for (i, f) in fields.enumerate() {
            if i < expected {
                self.columns[i].push(f.to_string());
            }
            found += 1;
        }
        if found != expected {
            return Err(DataError::Ragged {
                line,
                expected,
                found,
            });
        }
        self.lines.push(line);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn column(&self, i: usize) -> &[String] {
        &self.columns[i]
    }

    /// Source line of row `r`.
    pub fn line(&self, r: usize) -> usize {
        self.lines[r]
    }
}

/// Reads a delimited file. `limit` keeps only the first rows.
pub fn load_table(
    path: &Path,
    schema: &Schema,
    limit: Option<usize>,
) -> Result<RawTable, DataError> {
    schema.validate()?;
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut table = RawTable {
        columns: vec![Vec::new(); schema.columns.len()],
        lines: Vec::new(),
    };
    let mut header_pending = schema.header;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            let expected: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
            let found: Vec<&str> = line.split(schema.delimiter.as_str()).collect();
            if found != expected {
                return Err(DataError::Header {
                    expected: expected.join(&schema.delimiter),
                    found: line.to_string(),
                });
            }
            continue;
        }
        if limit.is_some_and(|n| table.len() >= n) {
            break;
        }
        table.push(i + 1, line.split(schema.delimiter.as_str()))?;
    }
    if table.is_empty() {
        return Err(DataError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(table)
}

/// Row indices of the three splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 8:1:1 split: ⌊0.8N⌋ train, ⌊0.1N⌋ validation, the rest test.
pub fn split_indices(n: usize, seed: u64) -> Result<SplitIndices, DataError> {
    if n < 10 {
        return Err(DataError::Config(format!(
            "need at least 10 rows to split, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_for(seed, "split"));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = perm.split_off(n_train + n_val);
    let val = perm.split_off(n_train);
    Ok(SplitIndices {
        train: perm,
        val,
        test,
    })
}

/// Token → index map for one categorical column. Index 0 is out of
/// vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub enum Vocabulary {
    Map(HashMap<String, usize>),
    Hashed { buckets: usize },
}

impl Vocabulary {
    /// Number of in-vocabulary indices; tables need one more row.
    pub fn size(&self) -> usize {
        match self {
            Self::Map(m) => m.len(),
            Self::Hashed { buckets } => *buckets,
        }
    }

    pub fn encode(&self, token: &str) -> usize {
        match self {
            Self::Map(m) => m.get(token).copied().unwrap_or(0),
            Self::Hashed { buckets } => 1 + (fnv1a(token.as_bytes()) % *buckets as u64) as usize,
        }
    }
}

/// Tokens seen at least `min_count` times get indices `1..=V` in order of
/// first appearance. With `hash_buckets` the map is replaced by hashing.
pub fn fit_vocabulary<'a>(
    tokens: impl IntoIterator<Item = &'a str>,
    min_count: usize,
    hash_buckets: Option<usize>,
) -> Vocabulary {
    if let Some(buckets) = hash_buckets.filter(|&b| b > 0) {
        return Vocabulary::Hashed { buckets };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order = Vec::new();
    for t in tokens {
        let c = counts.entry(t).or_insert(0);
        if *c == 0 {
            order.push(t);
        }
        *c += 1;
    }
    let mut map = HashMap::new();
    for t in order {
        if counts[t] >= min_count {
            let next = map.len() + 1;
            map.insert(t.to_string(), next);
        }
    }
    Vocabulary::Map(map)
}

/// `ln(1 + max(x, 0))`; the clamp also swallows missing values parsed as 0.
pub fn dense_transform(x: f64) -> f64 {
    x.max(0.0).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabOptions {
    pub min_count: usize,
    pub hash_buckets: Option<usize>,
}

impl Default for VocabOptions {
    fn default() -> Self {
        Self {
            min_count: 1,
            hash_buckets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub role: Role,
    /// In-vocabulary size `V`; lookup tables have `V + 1` rows.
    pub vocab_size: usize,
}

/// What a model needs to know about the encoded columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub task: Task,
    pub categorical: Vec<CategoricalFeature>,
    pub dense: Vec<String>,
}

impl FeatureInfo {
    pub fn categorical_index(&self, name: &str) -> Option<usize> {
        self.categorical.iter().position(|c| c.name == name)
    }

    pub fn dense_index(&self, name: &str) -> Option<usize> {
        self.dense.iter().position(|c| c == name)
    }
}

/// Fitted preprocessing state.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    schema: Schema,
    task: Task,
    cat_columns: Vec<usize>,
    dense_columns: Vec<usize>,
    vocabs: Vec<Vocabulary>,
    /// Train mean and standard deviation per dense column, after the log
    /// transform.
    dense_stats: Vec<(f64, f64)>,
}

fn parse_dense(table: &RawTable, col: usize, name: &str, r: usize) -> Result<f64, DataError> {
    let raw = table.columns[col][r].trim();
    if raw.is_empty() {
        return Ok(0.0);
    }
    let x: f64 = raw.parse().map_err(|_| DataError::Parse {
        line: table.lines[r],
        column: name.to_string(),
        reason: format!("`{raw}` is not a number"),
    })?;
    Ok(if x.is_finite() { x } else { 0.0 })
}

impl Preprocessor {
    /// Fits vocabularies and dense statistics on the `train` rows of `table`.
    pub fn fit(
        schema: &Schema,
        table: &RawTable,
        train: &[usize],
        opts: VocabOptions,
    ) -> Result<Self, DataError> {
        let task = schema.task()?;
        let pick = |f: fn(Role) -> bool| -> Vec<usize> {
            schema
                .columns
                .iter()
                .enumerate()
                .filter(|(_, c)| f(c.role))
                .map(|(i, _)| i)
                .collect()
        };
        let cat_columns = pick(Role::is_categorical);
        let dense_columns = pick(|r| r == Role::Dense);
        let vocabs = cat_columns
            .iter()
            .map(|&c| {
                let col = table.column(c);
                fit_vocabulary(
                    train.iter().map(|&r| col[r].as_str()),
                    opts.min_count,
                    opts.hash_buckets,
                )
            })
            .collect();
        let mut dense_stats = Vec::with_capacity(dense_columns.len());
        for &c in &dense_columns {
            let name = &schema.columns[c].name;
            let mut sum = 0.0;
            let mut sq = 0.0;
            for &r in train {
                let x = dense_transform(parse_dense(table, c, name, r)?);
                sum += x;
                sq += x * x;
            }
            let n = train.len().max(1) as f64;
            let mean = sum / n;
            let var = (sq / n - mean * mean).max(0.0);
            dense_stats.push((mean, var.sqrt()));
        }
        Ok(Self {
            schema: schema.clone(),
            task,
            cat_columns,
            dense_columns,
            vocabs,
            dense_stats,
        })
    }

    pub fn vocabularies(&self) -> &[Vocabulary] {
        &self.vocabs
    }

    pub fn dense_stats(&self) -> &[(f64, f64)] {
        &self.dense_stats
    }

    pub fn feature_info(&self) -> FeatureInfo {
        FeatureInfo {
            task: self.task,
            categorical: self
                .cat_columns
                .iter()
                .zip(&self.vocabs)
                .map(|(&c, v)| CategoricalFeature {
                    name: self.schema.columns[c].name.clone(),
                    role: self.schema.columns[c].role,
                    vocab_size: v.size(),
                })
                .collect(),
            dense: self
                .dense_columns
                .iter()
                .map(|&c| self.schema.columns[c].name.clone())
                .collect(),
        }
    }

    /// Encodes the given rows of `table`.
    pub fn encode(&self, table: &RawTable, rows: &[usize]) -> Result<EncodedDataset, DataError> {
        let cat = self
            .cat_columns
            .iter()
            .zip(&self.vocabs)
            .map(|(&c, v)| {
                let col = table.column(c);
                rows.iter().map(|&r| v.encode(&col[r]) as u32).collect()
            })
            .collect();
        let mut dense = Vec::with_capacity(self.dense_columns.len());
        for (&c, &(mean, std)) in self.dense_columns.iter().zip(&self.dense_stats) {
            let name = &self.schema.columns[c].name;
            let mut out = Vec::with_capacity(rows.len());
            for &r in rows {
                let x = dense_transform(parse_dense(table, c, name, r)?);
                out.push(if std > 0.0 { (x - mean) / std } else { 0.0 });
            }
            dense.push(out);
        }
        let t = self.schema.target_index();
        let tname = &self.schema.columns[t].name;
        let mut target = Vec::with_capacity(rows.len());
        for &r in rows {
            let raw = table.columns[t][r].trim();
            let y = match self.task {
                Task::Ctr => match raw {
                    "0" | "0.0" => 0.0,
                    "1" | "1.0" => 1.0,
                    _ => {
                        return Err(DataError::NonBinaryLabel {
                            row: table.lines[r],
                            value: raw.to_string(),
                        })
                    }
                },
                Task::Rating => raw
                    .parse::<f64>()
                    .ok()
                    .filter(|y| y.is_finite())
                    .ok_or_else(|| DataError::Parse {
                        line: table.lines[r],
                        column: tname.clone(),
                        reason: format!("`{raw}` is not a finite rating"),
                    })?,
            };
            target.push(y);
        }
        Ok(EncodedDataset { cat, dense, target })
    }
}

/// Encoded rows, column-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncodedDataset {
    /// One vector per categorical column; values are `< vocab_size + 1`.
    pub cat: Vec<Vec<u32>>,
    /// One vector per dense column.
    pub dense: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Gathers the given rows into a batch.
    pub fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            cat: self
                .cat
                .iter()
                .map(|c| rows.iter().map(|&r| c[r] as usize).collect())
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            target: rows.iter().map(|&r| self.target[r]).collect(),
        }
    }
}

/// One mini-batch, column-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub cat: Vec<Vec<usize>>,
    pub dense: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

/// Row-index chunks for one pass over `n` rows. With `shuffle =
/// Some((seed, epoch))` the order is a permutation keyed by both; the last
/// partial chunk is kept.
pub fn batch_indices(
    n: usize,
    batch_size: usize,
    shuffle: Option<(u64, usize)>,
) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    if let Some((seed, epoch)) = shuffle {
        order.shuffle(&mut rng_for(seed, &format!("epoch/{epoch}")));
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Batches over `data`; see [`batch_indices`].
pub fn iterate_batches(
    data: &EncodedDataset,
    batch_size: usize,
    shuffle: Option<(u64, usize)>,
) -> impl Iterator<Item = Batch> + '_ {
    batch_indices(data.len(), batch_size, shuffle)
        .into_iter()
        .map(move |rows| data.batch(&rows))
}

/// Encoded splits plus the fitted state that produced them.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub info: FeatureInfo,
    pub preprocessor: Preprocessor,
    pub train: EncodedDataset,
    pub val: EncodedDataset,
    pub test: EncodedDataset,
}

/// Split, fit on train, encode all three splits.
pub fn prepare(
    schema: &Schema,
    table: &RawTable,
    seed: u64,
    opts: VocabOptions,
) -> Result<PreparedData, DataError> {
    let split = split_indices(table.len(), seed)?;
    let pre = Preprocessor::fit(schema, table, &split.train, opts)?;
    Ok(PreparedData {
        info: pre.feature_info(),
        train: pre.encode(table, &split.train)?,
        val: pre.encode(table, &split.val)?,
        test: pre.encode(table, &split.test)?,
        preprocessor: pre,
    })
}
