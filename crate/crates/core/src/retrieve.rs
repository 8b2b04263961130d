//! First-stage retrieval: exact cosine top-N over a tool embedding matrix and
//! a linear multi-label classifier over all tools.

use crate::artifact::{read_vector_file, write_vector_file, ArtifactError};
use crate::corpus::{Corpus, QueryRecord, Split};
use crate::embed::{dot, EmbeddingMatrix, Featurizer, FeaturizerConfig};
use crate::train::{self, bce, sigmoid, LossReport, Objective, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum RetrieveError {
    #[error("tool matrix is empty")]
    EmptyToolMatrix,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("candidate count must be at least 1")]
    ZeroN,
    #[error("no training queries")]
    EmptyTrainSet,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tool2vec,
    Description,
    Mlc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tool2vec => "tool2vec",
            Method::Description => "description",
            Method::Mlc => "mlc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tool2vec" => Ok(Method::Tool2vec),
            "description" => Ok(Method::Description),
            "mlc" => Ok(Method::Mlc),
            other => Err(format!(
                "unknown method `{other}` (expected tool2vec, description or mlc)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tool_id: String,
    pub score: f64,
}

/// Ranked candidates for one query: scores non-increasing, ties broken by
/// ascending tool id, ids distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub candidates: Vec<Candidate>,
    pub stage: Stage,
    pub method: Method,
}

impl RetrievalResult {
    pub fn tool_ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.tool_id.as_str()).collect()
    }

    pub fn truncated(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.candidates.truncate(k);
        out
    }
}

/// Descending score, then ascending tool id.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tool_id.as_bytes().cmp(b.tool_id.as_bytes()))
}

/// Keeps the best `n` candidates in [`rank_order`].
pub fn top_n(mut candidates: Vec<Candidate>, n: usize) -> Vec<Candidate> {
    if n < candidates.len() {
        candidates.select_nth_unstable_by(n, rank_order);
        candidates.truncate(n);
    }
    candidates.sort_unstable_by(rank_order);
    candidates
}

/// Exact top-`n` by dot product (cosine for unit rows).
pub fn cosine_topn(
    query_id: &str,
    query_vec: &[f64],
    tools: &EmbeddingMatrix,
    n: usize,
    method: Method,
) -> Result<RetrievalResult, RetrieveError> {
    if n == 0 {
        return Err(RetrieveError::ZeroN);
    }
    if tools.is_empty() {
        return Err(RetrieveError::EmptyToolMatrix);
    }
    if query_vec.len() != tools.dim() {
        return Err(RetrieveError::DimensionMismatch {
            expected: tools.dim(),
            got: query_vec.len(),
        });
    }
    let scored = tools
        .iter()
        .map(|(id, row)| Candidate {
            tool_id: id.to_owned(),
            score: dot(query_vec, row),
        })
        .collect();
    Ok(RetrievalResult {
        query_id: query_id.to_owned(),
        candidates: top_n(scored, n),
        stage: Stage::Stage1,
        method,
    })
}

/// Linear multi-label classifier: per-tool probability `sigmoid(W^T x + b)`
/// over an `H x T` head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlcModel {
    h: usize,
    tool_ids: Vec<String>,
    tool_index: HashMap<String, usize>,
    /// Row-major `H x T`: row `i` holds feature `i`'s weight for every tool.
    weights: Vec<f64>,
    bias: Vec<f64>,
    featurizer: FeaturizerConfig,
}

impl MlcModel {
    pub fn zeros(
        featurizer: FeaturizerConfig,
        tool_ids: Vec<String>,
    ) -> Result<Self, RetrieveError> {
        let h = featurizer.dim;
        let t = tool_ids.len();
        Self::from_parts(featurizer, tool_ids, vec![0.0; h * t], vec![0.0; t])
    }

    pub fn from_parts(
        featurizer: FeaturizerConfig,
        tool_ids: Vec<String>,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, RetrieveError> {
        let h = featurizer.dim;
        let t = tool_ids.len();
        if weights.len() != h * t || bias.len() != t {
            return Err(RetrieveError::InvalidModel(format!(
                "expected {h}x{t} weights and {t} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        let mut tool_index = HashMap::with_capacity(t);
        for (i, id) in tool_ids.iter().enumerate() {
            if tool_index.insert(id.clone(), i).is_some() {
                return Err(RetrieveError::InvalidModel(format!(
                    "duplicate tool id `{id}`"
                )));
            }
        }
        Ok(Self {
            h,
            tool_ids,
            tool_index,
            weights,
            bias,
            featurizer,
        })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn n_tools(&self) -> usize {
        self.tool_ids.len()
    }

    pub fn tool_ids(&self) -> &[String] {
        &self.tool_ids
    }

    pub fn column(&self, tool_id: &str) -> Option<usize> {
        self.tool_index.get(tool_id).copied()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn featurizer_config(&self) -> &FeaturizerConfig {
        &self.featurizer
    }

    /// Flat parameter vector: weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    fn with_params(&self, params: &[f64]) -> Self {
        let split = self.weights.len();
        let mut out = self.clone();
        out.weights.copy_from_slice(&params[..split]);
        out.bias.copy_from_slice(&params[split..]);
        out
    }

    pub fn save(&self, path: &Path, train_cfg: &TrainConfig) -> Result<(), RetrieveError> {
        let header = json!({
            "model": "mlc",
            "H": self.h,
            "T": self.n_tools(),
            "tool_ids": self.tool_ids,
            "config": {"featurizer": self.featurizer, "train": train_cfg},
            "seed": train_cfg.seed,
        });
        let t = self.n_tools().max(1);
        let names: Vec<String> = (0..self.h).map(|i| format!("w{i}")).collect();
        let rows = names
            .iter()
            .map(String::as_str)
            .zip(self.weights.chunks(t))
            .chain(std::iter::once(("bias", self.bias.as_slice())));
        write_vector_file(path, Some(&header), rows)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrieveError> {
        let file = read_vector_file(path)?;
        let h: usize = file.header_field(path, "H")?;
        let t: usize = file.header_field(path, "T")?;
        let tool_ids: Vec<String> = file.header_field(path, "tool_ids")?;
        let config: serde_json::Value = file.header_field(path, "config")?;
        let featurizer: FeaturizerConfig = serde_json::from_value(config["featurizer"].clone())
            .map_err(|e| RetrieveError::InvalidModel(format!("featurizer config: {e}")))?;
        if featurizer.dim != h || tool_ids.len() != t {
            return Err(RetrieveError::InvalidModel(
                "header shape disagrees with config".into(),
            ));
        }
        let mut weights = Vec::with_capacity(h * t);
        let mut bias = None;
        for row in file.rows {
            if row.vec.len() != t {
                return Err(RetrieveError::InvalidModel(format!(
                    "row `{}` has {} entries",
                    row.id,
                    row.vec.len()
                )));
            }
            if row.id == "bias" {
                bias = Some(row.vec);
            } else {
                weights.extend(row.vec);
            }
        }
        let bias = bias.ok_or_else(|| RetrieveError::InvalidModel("missing bias row".into()))?;
        Self::from_parts(featurizer, tool_ids, weights, bias)
    }

    fn logits_sparse(&self, features: &[(usize, f64)]) -> Vec<f64> {
        let t = self.n_tools();
        let mut z = self.bias.clone();
        for &(i, x) in features {
            let row = &self.weights[i * t..(i + 1) * t];
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += x * w;
            }
        }
        z
    }
}

/// Per-tool probabilities for a dense feature vector of length `H`.
pub fn mlc_forward(features: &[f64], model: &MlcModel) -> Result<Vec<f64>, RetrieveError> {
    if features.len() != model.h {
        return Err(RetrieveError::DimensionMismatch {
            expected: model.h,
            got: features.len(),
        });
    }
    let sparse: Vec<(usize, f64)> = features
        .iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(i, &x)| (i, x))
        .collect();
    Ok(model
        .logits_sparse(&sparse)
        .into_iter()
        .map(sigmoid)
        .collect())
}

pub fn mlc_topn(
    query_id: &str,
    text: &str,
    model: &MlcModel,
    featurizer: &Featurizer,
    n: usize,
) -> Result<RetrievalResult, RetrieveError> {
    if n == 0 {
        return Err(RetrieveError::ZeroN);
    }
    if model.n_tools() == 0 {
        return Err(RetrieveError::EmptyToolMatrix);
    }
    if featurizer.dim() != model.h {
        return Err(RetrieveError::DimensionMismatch {
            expected: model.h,
            got: featurizer.dim(),
        });
    }
    let probs = model
        .logits_sparse(&featurizer.featurize_sparse(text))
        .into_iter()
        .map(sigmoid);
    let scored = model
        .tool_ids
        .iter()
        .zip(probs)
        .map(|(id, p)| Candidate {
            tool_id: id.clone(),
            score: p,
        })
        .collect();
    Ok(RetrievalResult {
        query_id: query_id.to_owned(),
        candidates: top_n(scored, n),
        stage: Stage::Stage1,
        method: Method::Mlc,
    })
}

/// Mean BCE over every (query, tool) cell of a batch for the linear MLC.
pub struct MlcObjective {
    h: usize,
    t: usize,
    features: Vec<Vec<(usize, f64)>>,
    /// Sorted label columns per example.
    labels: Vec<Vec<usize>>,
}

/// Sparse features and label columns of one example.
pub type SparseExample = (Vec<(usize, f64)>, Vec<usize>);

impl MlcObjective {
    pub fn new(h: usize, t: usize, examples: Vec<SparseExample>) -> Self {
        let (features, mut labels): (Vec<_>, Vec<_>) = examples.into_iter().unzip();
        labels
            .iter_mut()
            .for_each(|l: &mut Vec<usize>| l.sort_unstable());
        Self {
            h,
            t,
            features,
            labels,
        }
    }

    fn from_queries<'a>(
        model: &MlcModel,
        featurizer: &Featurizer,
        queries: impl Iterator<Item = &'a QueryRecord>,
    ) -> Self {
        let examples = queries
            .map(|q| {
                let cols = q.tools.iter().filter_map(|t| model.column(t)).collect();
                (featurizer.featurize_sparse(&q.text), cols)
            })
            .collect();
        Self::new(model.h, model.n_tools(), examples)
    }
}

impl Objective for MlcObjective {
    fn n_params(&self) -> usize {
        self.h * self.t + self.t
    }

    fn n_examples(&self) -> usize {
        self.features.len()
    }

    fn loss_and_grad(&self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        let t = self.t;
        let (weights, bias) = params.split_at(self.h * t);
        let (gw, gb) = grad.split_at_mut(self.h * t);
        let cells = (batch.len() * t).max(1) as f64;
        let mut total = 0.0;
        let mut dz = vec![0.0; t];
        for &ex in batch {
            let feats = &self.features[ex];
            let mut z = bias.to_vec();
            for &(i, x) in feats {
                for (zj, w) in z.iter_mut().zip(&weights[i * t..(i + 1) * t]) {
                    *zj += x * w;
                }
            }
            let labels = &self.labels[ex];
            for j in 0..t {
                let p = sigmoid(z[j]);
                let y = labels.binary_search(&j).is_ok();
                total += bce(p, y);
                dz[j] = (p - f64::from(u8::from(y))) / cells;
            }
            for (g, d) in gb.iter_mut().zip(&dz) {
                *g += d;
            }
            for &(i, x) in feats {
                for (g, d) in gw[i * t..(i + 1) * t].iter_mut().zip(&dz) {
                    *g += x * d;
                }
            }
        }
        total / cells
    }
}

/// Trains a zero-initialized MLC on the train split with seeded minibatch
/// SGD; the val split, when non-empty, supplies the per-epoch validation
/// loss.
pub fn train_mlc(
    corpus: &Corpus,
    featurizer: &Featurizer,
    cfg: &TrainConfig,
) -> Result<(MlcModel, LossReport), RetrieveError> {
    let tool_ids: Vec<String> = corpus.tools().iter().map(|t| t.tool_id.clone()).collect();
    let init = MlcModel::zeros(*featurizer.config(), tool_ids)?;
    if corpus.queries_in(&[Split::Train]).next().is_none() {
        return Err(RetrieveError::EmptyTrainSet);
    }
    let mut objective =
        MlcObjective::from_queries(&init, featurizer, corpus.queries_in(&[Split::Train]));
    let val = MlcObjective::from_queries(&init, featurizer, corpus.queries_in(&[Split::Val]));
    let val_batch: Vec<usize> = (0..val.n_examples()).collect();
    let val_fn = |p: &[f64]| val.loss(p, &val_batch);
    let val_loss: train::ValLoss = if val_batch.is_empty() {
        None
    } else {
        Some(&val_fn)
    };
    let (params, report) = train::sgd_run(&mut objective, init.params(), cfg, val_loss)?;
    Ok((init.with_params(&params), report))
}
