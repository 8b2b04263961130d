//! Text embeddings: a hashed character n-gram featurizer, usage-driven tool
//! embeddings (Tool2Vec), description embeddings, and a linear projection
//! fine-tuned with a triplet margin loss.

use crate::artifact::{read_vector_file, write_vector_file, ArtifactError};
use crate::corpus::{Corpus, Split};
use crate::train::{self, LossReport, Objective, TrainConfig, TrainError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Norm tolerance for rows tagged as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch for `{id}`: expected {expected}, got {got}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("no precomputed vector for `{0}`")]
    MissingPrecomputedVector(String),
    #[error("query `{0}` has no embedding row")]
    MissingEmbedding(String),
    #[error("non-finite value while embedding `{0}`")]
    NumericalError(String),
    #[error("duplicate row id `{0}`")]
    DuplicateId(String),
    #[error("query `{0}` is labeled with every tool; no negative can be sampled")]
    NoNegativeAvailable(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub lowercase: bool,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            dim: 4096,
            ngram_min: 3,
            ngram_max: 5,
            lowercase: true,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim < 2 {
            return Err(EmbedError::InvalidConfig(format!(
                "dim must be at least 2, got {}",
                self.dim
            )));
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(EmbedError::InvalidConfig(format!(
                "need 1 <= ngram_min <= ngram_max, got {}..={}",
                self.ngram_min, self.ngram_max
            )));
        }
        Ok(())
    }
}

/// Hashed character n-gram term-frequency featurizer.
///
/// Every character n-gram (by Unicode scalar value) of the optionally
/// lowercased text is hashed with FNV-1a over its UTF-8 bytes into one of
/// `dim` buckets; the count vector is L2-normalized. Texts with no n-grams map
/// to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    cfg: FeaturizerConfig,
}

impl Featurizer {
    pub fn new(cfg: FeaturizerConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &FeaturizerConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    /// Bucket index of every n-gram, in text order, with repeats.
    pub fn bucket_indices(&self, text: &str) -> Vec<usize> {
        let text = if self.cfg.lowercase {
            text.to_lowercase()
        } else {
            text.to_owned()
        };
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut buf = String::new();
        for n in self.cfg.ngram_min..=self.cfg.ngram_max {
            for window in chars.windows(n) {
                buf.clear();
                buf.extend(window);
                out.push((fnv1a64(buf.as_bytes()) % self.cfg.dim as u64) as usize);
            }
        }
        out
    }

    /// Unit-normalized `(bucket, weight)` pairs sorted by bucket.
    pub fn featurize_sparse(&self, text: &str) -> Vec<(usize, f64)> {
        let mut buckets = self.bucket_indices(text);
        buckets.sort_unstable();
        let mut sparse: Vec<(usize, f64)> = Vec::new();
        for b in buckets {
            match sparse.last_mut() {
                Some((last, count)) if *last == b => *count += 1.0,
                _ => sparse.push((b, 1.0)),
            }
        }
        let norm = sparse.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            sparse.iter_mut().for_each(|(_, c)| *c /= norm);
        }
        sparse
    }

    pub fn featurize(&self, text: &str) -> Vec<f64> {
        let mut dense = vec![0.0; self.cfg.dim];
        for (i, w) in self.featurize_sparse(text) {
            dense[i] = w;
        }
        dense
    }
}

/// Anything that can turn a `(row id, text)` pair into a vector.
pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, id: &str, text: &str) -> Result<Vec<f64>, EmbedError>;
}

impl EmbeddingProvider for Featurizer {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed(&self, _id: &str, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.featurize(text))
    }
}

/// Vectors computed elsewhere (e.g. by a transformer encoder), looked up by
/// row id. Rows are normalized on lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedVectors {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl PrecomputedVectors {
    pub fn from_rows(
        rows: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, EmbedError> {
        let mut dim = None;
        let mut map = HashMap::new();
        for (id, vec) in rows {
            let expected = *dim.get_or_insert(vec.len());
            if vec.len() != expected || expected == 0 {
                return Err(EmbedError::DimensionMismatch {
                    id,
                    expected,
                    got: vec.len(),
                });
            }
            if vec.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NumericalError(id));
            }
            if map.insert(id.clone(), vec).is_some() {
                return Err(EmbedError::DuplicateId(id));
            }
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            rows: map,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let file = read_vector_file(path)?;
        Self::from_rows(file.rows.into_iter().map(|r| (r.id, r.vec)))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl EmbeddingProvider for PrecomputedVectors {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, id: &str, _text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut v = self
            .rows
            .get(id)
            .cloned()
            .ok_or_else(|| EmbedError::MissingPrecomputedVector(id.to_owned()))?;
        normalize(&mut v);
        Ok(v)
    }
}

/// Scales `v` to unit L2 norm; returns `false` (leaving it untouched) for the
/// zero vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
        true
    } else {
        false
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Query,
    Tool2vec,
    Description,
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixKind::Query => "query",
            MatrixKind::Tool2vec => "tool2vec",
            MatrixKind::Description => "description",
        })
    }
}

impl FromStr for MatrixKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "query" => Ok(Self::Query),
            "tool2vec" => Ok(Self::Tool2vec),
            "description" => Ok(Self::Description),
            other => Err(format!("unknown matrix kind `{other}`")),
        }
    }
}

/// Dense, id-keyed rows of equal width, stored row-major in insertion order.
///
/// When `normalized` is set every row has unit norm, except all-zero rows,
/// which stand for texts with no features and are reported as raw.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    kind: MatrixKind,
    normalized: bool,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, kind: MatrixKind, normalized: bool) -> Self {
        Self {
            dim,
            kind,
            normalized,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, row: &[f64]) -> Result<(), EmbedError> {
        let id = id.into();
        if row.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                id,
                expected: self.dim,
                got: row.len(),
            });
        }
        if self.index.contains_key(&id) {
            return Err(EmbedError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|i| self.row_at(i))
    }

    pub fn row_at(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks(self.dim.max(1)))
    }

    /// Rows that are entirely zero.
    pub fn zero_rows(&self) -> Vec<String> {
        self.iter()
            .filter(|(_, r)| r.iter().all(|&x| x == 0.0))
            .map(|(id, _)| id.to_owned())
            .collect()
    }

    /// Multiplies every row by `scale` (the `normalized` tag is dropped
    /// unless `scale == 1`).
    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= scale);
        out.normalized = self.normalized && scale == 1.0;
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let header = json!({"dim": self.dim, "kind": self.kind, "normalized": self.normalized});
        write_vector_file(path, Some(&header), self.iter())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let file = read_vector_file(path)?;
        let dim: usize = file.header_field(path, "dim")?;
        let kind: MatrixKind = file.header_field(path, "kind")?;
        let normalized: bool = file.header_field(path, "normalized")?;
        let mut m = Self::new(dim, kind, normalized);
        for row in file.rows {
            m.push(row.id, &row.vec)?;
        }
        Ok(m)
    }
}

/// Rows that could not be built, or were built from an empty feature set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rows: usize,
    /// Ids with no row (tools never used by a query in the chosen splits).
    pub uncovered: Vec<String>,
    /// Ids whose row is the zero vector.
    pub zero_rows: Vec<String>,
}

fn embed_all(
    items: &[(&str, String)],
    provider: &dyn EmbeddingProvider,
    kind: MatrixKind,
) -> Result<EmbeddingMatrix, EmbedError> {
    let dim = provider.dim();
    let rows: Vec<Vec<f64>> = items
        .par_iter()
        .map(|(id, text)| {
            let v = provider.embed(id, text)?;
            if v.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    id: (*id).to_owned(),
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NumericalError((*id).to_owned()));
            }
            Ok(v)
        })
        .collect::<Result<_, _>>()?;
    let mut m = EmbeddingMatrix::new(dim, kind, true);
    for ((id, _), row) in items.iter().zip(rows) {
        m.push(*id, &row)?;
    }
    Ok(m)
}

/// One unit row per query, keyed by `query_id`, in corpus order.
pub fn embed_queries(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddingMatrix, EmbedError> {
    let items: Vec<(&str, String)> = corpus
        .queries()
        .iter()
        .map(|q| (q.query_id.as_str(), q.text.clone()))
        .collect();
    embed_all(&items, provider, MatrixKind::Query)
}

/// The text embedded for a tool's description row.
pub fn description_text(name: &str, description: &str) -> String {
    if name.is_empty() && description.is_empty() {
        String::new()
    } else {
        format!("{name}: {description}")
    }
}

pub fn build_description_embeddings(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
) -> Result<(EmbeddingMatrix, CoverageReport), EmbedError> {
    let items: Vec<(&str, String)> = corpus
        .tools()
        .iter()
        .map(|t| {
            (
                t.tool_id.as_str(),
                description_text(&t.name, &t.description),
            )
        })
        .collect();
    let m = embed_all(&items, provider, MatrixKind::Description)?;
    let report = CoverageReport {
        rows: m.len(),
        uncovered: Vec::new(),
        zero_rows: m.zero_rows(),
    };
    Ok((m, report))
}

/// Tool2Vec: each tool's row is the mean of the embeddings of the queries (in
/// `splits`) that use it, re-normalized to unit length.
///
/// Contributions are summed in `query_id` order so the result does not depend
/// on corpus order. Tools with no usage get no row and are listed in the
/// coverage report.
pub fn build_tool2vec(
    corpus: &Corpus,
    query_embeddings: &EmbeddingMatrix,
    splits: &[Split],
) -> Result<(EmbeddingMatrix, CoverageReport), EmbedError> {
    let dim = query_embeddings.dim();
    let mut contributors: Vec<Vec<(&str, usize)>> = vec![Vec::new(); corpus.n_tools()];
    for q in corpus.queries_in(splits) {
        let row = query_embeddings
            .position(&q.query_id)
            .ok_or_else(|| EmbedError::MissingEmbedding(q.query_id.clone()))?;
        for t in &q.tools {
            let pos = corpus.tool_position(t).expect("corpus validated tool refs");
            contributors[pos].push((q.query_id.as_str(), row));
        }
    }

    let mut m = EmbeddingMatrix::new(dim, MatrixKind::Tool2vec, true);
    let mut report = CoverageReport::default();
    let mut mean = vec![0.0; dim];
    for (tool, contrib) in corpus.tools().iter().zip(contributors.iter_mut()) {
        if contrib.is_empty() {
            report.uncovered.push(tool.tool_id.clone());
            continue;
        }
        contrib.sort_unstable_by(|a, b| a.0.cmp(b.0));
        mean.iter_mut().for_each(|x| *x = 0.0);
        for &(_, row) in contrib.iter() {
            for (acc, x) in mean.iter_mut().zip(query_embeddings.row_at(row)) {
                *acc += x;
            }
        }
        let n = contrib.len() as f64;
        mean.iter_mut().for_each(|x| *x /= n);
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NumericalError(tool.tool_id.clone()));
        }
        let nonzero = if contrib.len() == 1 && query_embeddings.is_normalized() {
            // copy, so a single-use tool keeps its query's vector bit for bit
            mean.copy_from_slice(query_embeddings.row_at(contrib[0].1));
            mean.iter().any(|x| *x != 0.0)
        } else {
            normalize(&mut mean)
        };
        if !nonzero {
            report.zero_rows.push(tool.tool_id.clone());
        }
        m.push(tool.tool_id.clone(), &mean)?;
    }
    report.rows = m.len();
    if !report.uncovered.is_empty() {
        log::warn!(
            "{} tools have no usage and no Tool2Vec row",
            report.uncovered.len()
        );
    }
    Ok((m, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub margin: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            epochs: 1,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(EmbedError::InvalidConfig(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            l2: 0.0,
            seed: self.seed,
        }
    }
}

/// A square linear map applied to queries and tool embeddings before cosine
/// search.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub dim: usize,
    /// Row-major `dim x dim`.
    pub weights: Vec<f64>,
}

impl Projection {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self { dim, weights }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.dim)
            .map(|row| dot(row, v))
            .collect()
    }

    /// `W v`, re-normalized.
    pub fn apply_normalized(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.apply(v);
        normalize(&mut out);
        out
    }

    pub fn project_matrix(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix, EmbedError> {
        if m.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                id: format!("{} matrix", m.kind()),
                expected: self.dim,
                got: m.dim(),
            });
        }
        let mut out = EmbeddingMatrix::new(self.dim, m.kind(), true);
        for (id, row) in m.iter() {
            out.push(id, &self.apply_normalized(row))?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, cfg: &TripletConfig) -> Result<(), EmbedError> {
        let header =
            json!({"model": "projection", "dim": self.dim, "config": cfg, "seed": cfg.seed});
        let rows: Vec<(String, &[f64])> = self
            .weights
            .chunks(self.dim)
            .enumerate()
            .map(|(i, r)| (format!("w{i}"), r))
            .collect();
        write_vector_file(
            path,
            Some(&header),
            rows.iter().map(|(id, r)| (id.as_str(), *r)),
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let file = read_vector_file(path)?;
        let dim: usize = file.header_field(path, "dim")?;
        if file.rows.len() != dim {
            return Err(EmbedError::DimensionMismatch {
                id: "projection rows".into(),
                expected: dim,
                got: file.rows.len(),
            });
        }
        let mut weights = Vec::with_capacity(dim * dim);
        for row in file.rows {
            if row.vec.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    id: row.id,
                    expected: dim,
                    got: row.vec.len(),
                });
            }
            weights.extend(row.vec);
        }
        Ok(Self { dim, weights })
    }
}

/// Mean triplet margin loss of a square projection `W` over
/// `(anchor, positive, negative)` triplets:
/// `max(0, |W(a-p)|^2 - |W(a-n)|^2 + margin)`.
///
/// Parameters are `W` in row-major order. When built from a corpus, one
/// negative per (query, positive) pair is redrawn uniformly from the tools
/// the query does not use at the start of each epoch.
pub struct TripletObjective {
    dim: usize,
    margin: f64,
    anchors: Vec<Vec<f64>>,
    tools: Vec<Vec<f64>>,
    /// `(anchor, positive tool)`.
    pairs: Vec<(usize, usize)>,
    /// Sorted tool indices each anchor must not draw as a negative.
    excluded: Vec<Vec<usize>>,
    negatives: Vec<usize>,
    resample: bool,
}

impl TripletObjective {
    /// Fixed triplets, never resampled.
    pub fn from_triplets(
        dim: usize,
        margin: f64,
        triplets: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
    ) -> Self {
        let mut anchors = Vec::new();
        let mut tools = Vec::new();
        let mut pairs = Vec::new();
        let mut negatives = Vec::new();
        for (i, (a, p, n)) in triplets.iter().enumerate() {
            anchors.push(a.clone());
            tools.push(p.clone());
            tools.push(n.clone());
            pairs.push((i, 2 * i));
            negatives.push(2 * i + 1);
        }
        Self {
            dim,
            margin,
            excluded: vec![Vec::new(); anchors.len()],
            anchors,
            tools,
            pairs,
            negatives,
            resample: false,
        }
    }

    pub fn n_triplets(&self) -> usize {
        self.pairs.len()
    }

    fn draw_negative(&self, anchor: usize, rng: &mut ChaCha8Rng) -> usize {
        let excluded = &self.excluded[anchor];
        let mut r = rng.gen_range(0..self.tools.len() - excluded.len());
        for &e in excluded {
            if e <= r {
                r += 1;
            }
        }
        r
    }
}

impl Objective for TripletObjective {
    fn n_params(&self) -> usize {
        self.dim * self.dim
    }

    fn n_examples(&self) -> usize {
        self.pairs.len()
    }

    fn loss_and_grad(&self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        let d = self.dim;
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut dp = vec![0.0; d];
        let mut dn = vec![0.0; d];
        let mut total = 0.0;
        for &ex in batch {
            let (a, p) = self.pairs[ex];
            let anchor = &self.anchors[a];
            let pos = &self.tools[p];
            let neg = &self.tools[self.negatives[ex]];
            for j in 0..d {
                dp[j] = anchor[j] - pos[j];
                dn[j] = anchor[j] - neg[j];
            }
            let u: Vec<f64> = params.chunks(d).map(|row| dot(row, &dp)).collect();
            let v: Vec<f64> = params.chunks(d).map(|row| dot(row, &dn)).collect();
            let raw = dot(&u, &u) - dot(&v, &v) + self.margin;
            if raw > 0.0 {
                total += raw;
                for i in 0..d {
                    let gu = 2.0 * u[i] * scale;
                    let gv = 2.0 * v[i] * scale;
                    let grow = &mut grad[i * d..(i + 1) * d];
                    for j in 0..d {
                        grow[j] += gu * dp[j] - gv * dn[j];
                    }
                }
            }
        }
        total * scale
    }

    fn start_epoch(&mut self, _epoch: usize, rng: &mut ChaCha8Rng) {
        if !self.resample {
            return;
        }
        for ex in 0..self.pairs.len() {
            self.negatives[ex] = self.draw_negative(self.pairs[ex].0, rng);
        }
    }
}

/// Builds the triplet objective from train-split queries that have an
/// embedding row, positives from their labeled tools' Tool2Vec rows.
pub fn triplet_objective(
    corpus: &Corpus,
    query_embeddings: &EmbeddingMatrix,
    tool2vec: &EmbeddingMatrix,
    margin: f64,
) -> Result<TripletObjective, EmbedError> {
    if query_embeddings.dim() != tool2vec.dim() {
        return Err(EmbedError::DimensionMismatch {
            id: "tool2vec".into(),
            expected: query_embeddings.dim(),
            got: tool2vec.dim(),
        });
    }
    let tools: Vec<Vec<f64>> = (0..tool2vec.len())
        .map(|i| tool2vec.row_at(i).to_vec())
        .collect();
    let mut anchors = Vec::new();
    let mut excluded = Vec::new();
    let mut pairs = Vec::new();
    for q in corpus.queries_in(&[Split::Train]) {
        let Some(row) = query_embeddings.row(&q.query_id) else {
            continue;
        };
        let mut labeled: Vec<usize> = q
            .tools
            .iter()
            .filter_map(|t| tool2vec.position(t))
            .collect();
        if labeled.is_empty() {
            continue;
        }
        labeled.sort_unstable();
        if labeled.len() >= tools.len() {
            return Err(EmbedError::NoNegativeAvailable(q.query_id.clone()));
        }
        let anchor = anchors.len();
        let mut seen = HashSet::new();
        for t in &q.tools {
            if let Some(p) = tool2vec.position(t) {
                if seen.insert(p) {
                    pairs.push((anchor, p));
                }
            }
        }
        anchors.push(row.to_vec());
        excluded.push(labeled);
    }
    let negatives = vec![0; pairs.len()];
    Ok(TripletObjective {
        dim: tool2vec.dim(),
        margin,
        anchors,
        tools,
        pairs,
        excluded,
        negatives,
        resample: true,
    })
}

/// Trains a projection initialized at the identity with seeded minibatch
/// SGD on the triplet objective.
pub fn finetune_projection(
    corpus: &Corpus,
    query_embeddings: &EmbeddingMatrix,
    tool2vec: &EmbeddingMatrix,
    cfg: &TripletConfig,
) -> Result<(Projection, LossReport), EmbedError> {
    cfg.validate()?;
    let mut objective = triplet_objective(corpus, query_embeddings, tool2vec, cfg.margin)?;
    let init = Projection::identity(tool2vec.dim());
    let (weights, report) =
        train::sgd_run(&mut objective, init.weights, &cfg.train_config(), None)?;
    Ok((
        Projection {
            dim: tool2vec.dim(),
            weights,
        },
        report,
    ))
}
