//! Labelled text corpora: loading, splitting, tokenisation and TF-IDF features.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: u64,
    pub text: String,
    pub label: usize,
}

/// An ordered collection of documents with dense labels `0..C`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    documents: Vec<Document>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(documents: Vec<Document>, class_names: Vec<String>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if class_names.len() < 2 {
            return Err(Error::TooFewClasses(class_names.len()));
        }
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if doc.label >= class_names.len() {
                return Err(Error::invalid(format!(
                    "document {} has label {} but only {} classes exist",
                    doc.id,
                    doc.label,
                    class_names.len()
                )));
            }
            if !seen.insert(doc.id) {
                return Err(Error::invalid(format!("duplicate document id {}", doc.id)));
            }
        }
        Ok(Self {
            documents,
            class_names,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Builds a subset sharing this dataset's class list. Only used for splits,
    /// where every part is non-empty by construction.
    fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            documents: positions.iter().map(|&i| self.documents[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Ok(DatasetFormat::Jsonl),
            "csv" => Ok(DatasetFormat::Csv),
            other => Err(Error::invalid(format!("unknown dataset format `{other}`"))),
        }
    }
}

/// Serialises a dataset as JSONL with string labels, the format [`load_dataset`] reads.
pub fn to_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    for doc in dataset.documents() {
        let row = serde_json::json!({
            "id": doc.id,
            "text": doc.text,
            "label": dataset.class_names()[doc.label],
        });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    out
}

struct RawRow {
    line: usize,
    id: Option<u64>,
    text: String,
    label: String,
}

/// Loads a labelled dataset. Raw label strings are mapped to dense indices in
/// lexicographic order; documents keep their file order.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = match format {
        DatasetFormat::Jsonl => parse_jsonl(&content)?,
        DatasetFormat::Csv => parse_csv(&content)?,
    };
    dataset_from_rows(rows)
}

fn parse_jsonl(content: &str) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRow {
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("expected a JSON object".into()))?;
        let text = match obj.get("text") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(_) => return Err(malformed("`text` must be a string".into())),
            None => return Err(malformed("missing field `text`".into())),
        };
        let label = match obj.get("label") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(_) => return Err(malformed("`label` must be a string".into())),
            None => return Err(malformed("missing field `label`".into())),
        };
        let id = match obj.get("id") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .ok_or_else(|| malformed("`id` must be a non-negative integer".into()))?,
            ),
        };
        rows.push(RawRow {
            line: line_no,
            id,
            text,
            label,
        });
    }
    Ok(rows)
}

fn parse_csv(content: &str) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = column("text").ok_or_else(|| Error::MissingColumn("text".into()))?;
    let label_col = column("label").ok_or_else(|| Error::MissingColumn("label".into()))?;
    let id_col = column("id");

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |col: usize| {
            record.get(col).ok_or_else(|| Error::MalformedRow {
                line,
                message: format!("missing column {}", col + 1),
            })
        };
        let id = match id_col {
            Some(col) if !field(col)?.trim().is_empty() => {
                Some(field(col)?.trim().parse::<u64>().map_err(|e| Error::MalformedRow {
                    line,
                    message: format!("bad id: {e}"),
                })?)
            }
            _ => None,
        };
        rows.push(RawRow {
            line,
            id,
            text: field(text_col)?.to_string(),
            label: field(label_col)?.to_string(),
        });
    }
    Ok(rows)
}

fn dataset_from_rows(rows: Vec<RawRow>) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let class_names: Vec<String> = rows
        .iter()
        .map(|r| r.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if class_names.len() < 2 {
        return Err(Error::TooFewClasses(class_names.len()));
    }
    let label_index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i))
        .collect();

    let mut seen = HashSet::with_capacity(rows.len());
    let mut documents = Vec::with_capacity(rows.len());
    for (position, row) in rows.iter().enumerate() {
        let id = row.id.unwrap_or(position as u64);
        if !seen.insert(id) {
            return Err(Error::MalformedRow {
                line: row.line,
                message: format!("duplicate id {id}"),
            });
        }
        documents.push(Document {
            id,
            text: row.text.clone(),
            label: label_index[row.label.as_str()],
        });
    }
    Dataset::new(documents, class_names)
}

/// Train/test/evaluation fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub eval: f64,
}

impl SplitRatios {
    pub fn new(train: f64, test: f64, eval: f64) -> Self {
        Self { train, test, eval }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.test, self.eval];
        if parts.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::InvalidSplit("ratios must be positive".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Split sizes for `n` items by largest-remainder rounding. Equal remainders
    /// favour the earlier part (train, then test, then eval).
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        self.validate()?;
        let quotas = [self.train, self.test, self.eval].map(|r| r * n as f64);
        let mut sizes = quotas.map(|q| q.floor() as usize);
        let assigned: usize = sizes.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &part in order.iter().take(n.saturating_sub(assigned)) {
            sizes[part] += 1;
        }
        if let Some(part) = sizes.iter().position(|&s| s == 0) {
            let name = ["train", "test", "eval"][part];
            return Err(Error::InvalidSplit(format!(
                "{name} split would be empty for {n} documents"
            )));
        }
        Ok(sizes)
    }
}

/// Seeds for [`split_dataset`]. The evaluation part depends only on
/// `eval_seed`, so it stays fixed while `seed` varies across trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSeeds {
    pub seed: u64,
    pub eval_seed: u64,
}

/// Partitions `dataset` into (train, test, eval). Each part keeps the relative
/// order of the input.
pub fn split_dataset(
    dataset: &Dataset,
    ratios: SplitRatios,
    seeds: SplitSeeds,
) -> Result<(Dataset, Dataset, Dataset)> {
    let [n_train, _n_test, n_eval] = ratios.sizes(dataset.len())?;

    let mut all: Vec<usize> = (0..dataset.len()).collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds.eval_seed));
    let mut eval = all[..n_eval].to_vec();
    let mut rest = all[n_eval..].to_vec();
    rest.sort_unstable();

    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds.seed));
    let mut train = rest[..n_train].to_vec();
    let mut test = rest[n_train..].to_vec();

    for part in [&mut train, &mut test, &mut eval] {
        part.sort_unstable();
    }
    Ok((
        dataset.subset(&train),
        dataset.subset(&test),
        dataset.subset(&eval),
    ))
}

/// Lowercases, splits on every non-alphanumeric character and drops tokens
/// shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    document_frequency: Vec<usize>,
    corpus_size: usize,
}

/// Token index with document frequencies. Index order is the ranking order
/// (frequency descending, token ascending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    document_frequency: Vec<usize>,
    corpus_size: usize,
    index: HashMap<String, usize>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        if repr.tokens.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if repr.tokens.len() != repr.document_frequency.len() {
            return Err(Error::ModelFormat(
                "vocabulary tokens and frequencies differ in length".into(),
            ));
        }
        if repr.document_frequency.contains(&0) {
            return Err(Error::ModelFormat("zero document frequency".into()));
        }
        let index: HashMap<String, usize> = repr
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != repr.tokens.len() {
            return Err(Error::ModelFormat("duplicate vocabulary token".into()));
        }
        Ok(Self {
            tokens: repr.tokens,
            document_frequency: repr.document_frequency,
            corpus_size: repr.corpus_size,
            index,
        })
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            document_frequency: v.document_frequency,
            corpus_size: v.corpus_size,
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn document_frequency(&self, index: usize) -> usize {
        self.document_frequency[index]
    }

    /// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        let n = self.corpus_size as f64;
        let df = self.document_frequency[index] as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }
}

pub fn build_vocabulary(train: &Dataset, max_size: usize, min_df: usize) -> Result<Vocabulary> {
    if max_size == 0 || min_df == 0 {
        return Err(Error::invalid("max_size and min_df must be at least 1"));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in train.documents() {
        let unique: HashSet<String> = tokenize(&doc.text).into_iter().collect();
        for token in unique {
            *df.entry(token).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().filter(|(_, f)| *f >= min_df).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    let (tokens, document_frequency) = ranked.into_iter().unzip();
    VocabularyRepr {
        tokens,
        document_frequency,
        corpus_size: train.len(),
    }
    .try_into()
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    indices: Vec<usize>,
    values: Vec<f64>,
    dim: usize,
}

impl FeatureVector {
    /// Builds a vector from `(index, value)` pairs; entries are sorted and
    /// indices must be unique and below `dim`.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate feature index"));
        }
        if pairs.last().is_some_and(|p| p.0 >= dim) {
            return Err(Error::invalid("feature index out of range"));
        }
        if pairs.iter().any(|p| !p.1.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        let (indices, values) = pairs.into_iter().unzip();
        Ok(Self {
            indices,
            values,
            dim,
        })
    }

    /// Dense convenience constructor, zeros are dropped.
    pub fn from_dense(values: &[f64]) -> Result<Self> {
        let pairs = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        Self::from_pairs(values.len(), pairs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// TF-IDF weights (raw term counts times smoothed idf), L2-normalised.
/// Out-of-vocabulary tokens are ignored.
pub fn vectorize(text: &str, vocab: &Vocabulary) -> FeatureVector {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for token in tokenize(text) {
        if let Some(i) = vocab.index_of(&token) {
            *counts.entry(i).or_default() += 1;
        }
    }
    let mut indices = Vec::with_capacity(counts.len());
    let mut values = Vec::with_capacity(counts.len());
    for (i, tf) in counts {
        indices.push(i);
        values.push(tf as f64 * vocab.idf(i));
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    FeatureVector {
        indices,
        values,
        dim: vocab.len(),
    }
}

/// A dataset in feature space, ready for training or inference.
#[derive(Debug, Clone)]
pub struct VectorizedDataset {
    pub ids: Vec<u64>,
    pub features: Vec<FeatureVector>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub dim: usize,
}

impl VectorizedDataset {
    pub fn from_dataset(dataset: &Dataset, vocab: &Vocabulary) -> Self {
        let docs = dataset.documents();
        Self {
            ids: docs.iter().map(|d| d.id).collect(),
            features: docs.iter().map(|d| vectorize(&d.text, vocab)).collect(),
            labels: docs.iter().map(|d| d.label).collect(),
            num_classes: dataset.num_classes(),
            dim: vocab.len(),
        }
    }

    /// Builds a vectorised set from precomputed features; ids are positions.
    pub fn new(features: Vec<FeatureVector>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::invalid("features and labels differ in length"));
        }
        let dim = features.first().map(FeatureVector::dim).unwrap_or(0);
        if features.iter().any(|f| f.dim() != dim) {
            return Err(Error::invalid("inconsistent feature dimensions"));
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::invalid("label out of range"));
        }
        Ok(Self {
            ids: (0..features.len() as u64).collect(),
            features,
            labels,
            num_classes,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}
