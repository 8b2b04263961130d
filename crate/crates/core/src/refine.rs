//! Second stage: a per-candidate refiner that re-scores stage-1 candidates
//! against the query, and the two-stage pipeline that ties both together.

use crate::artifact::{read_vector_file, write_vector_file, ArtifactError};
use crate::corpus::{Corpus, QueryRecord, Split};
use crate::embed::{dot, EmbedError, EmbeddingMatrix, Featurizer, Projection};
use crate::retrieve::{
    cosine_topn, mlc_topn, top_n, Candidate, Method, MlcModel, RetrievalResult, RetrieveError,
    Stage,
};
use crate::train::{
    self, bce, sigmoid, uniform_init, LossReport, Objective, TrainConfig, TrainError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::HashSet;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("tool `{0}` has no Tool2Vec row")]
    UnknownTool(String),
    #[error("pipeline needs the {0} artifact")]
    MissingArtifact(&'static str),
    #[error("query `{0}` has no embedding row")]
    MissingEmbedding(String),
    #[error("no training queries")]
    EmptyTrainSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefinerInit {
    /// Seeded uniform in `[-scale, scale)`.
    Uniform,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerConfig {
    pub hidden: Vec<usize>,
    pub init: RefinerInit,
    pub init_scale: f64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            init: RefinerInit::Uniform,
            init_scale: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Interaction features of a (query, tool) pair: `[q; t; q*t; cos(q, t)]`.
/// For unit vectors the blocks are scaled by `sqrt(dim)`, `sqrt(dim)` and
/// `dim`, which keeps typical entries near 1 whatever the dimension.
pub fn pair_features(q: &[f64], t: &[f64], out: &mut Vec<f64>) {
    let dim = q.len() as f64;
    let root = dim.sqrt();
    out.clear();
    out.extend(q.iter().map(|a| a * root));
    out.extend(t.iter().map(|b| b * root));
    out.extend(q.iter().zip(t).map(|(a, b)| a * b * dim));
    out.push(cosine(q, t));
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// An MLP over [`pair_features`] with tanh hidden layers and a single output
/// logit. Each candidate is scored independently of the others.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinerModel {
    dim: usize,
    layers: Vec<Layer>,
    seed: u64,
}

impl RefinerModel {
    pub fn new(dim: usize, cfg: &RefinerConfig, seed: u64) -> Result<Self, RefineError> {
        if dim == 0 || cfg.hidden.contains(&0) {
            return Err(RefineError::InvalidConfig(
                "dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![3 * dim + 1];
        widths.extend(&cfg.hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let (weights, bias) = match cfg.init {
                    RefinerInit::Zeros => (vec![0.0; in_dim * out_dim], vec![0.0; out_dim]),
                    RefinerInit::Uniform => (
                        uniform_init(in_dim * out_dim, cfg.init_scale, &mut rng),
                        uniform_init(out_dim, cfg.init_scale, &mut rng),
                    ),
                };
                Layer {
                    in_dim,
                    out_dim,
                    weights,
                    bias,
                }
            })
            .collect();
        Ok(Self { dim, layers, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_width(&self) -> usize {
        3 * self.dim + 1
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim)
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Flat parameters: each layer's weights then bias, input layer first.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
    }

    pub fn logit(&self, q: &[f64], t: &[f64]) -> f64 {
        let mut x = Vec::with_capacity(self.input_width());
        pair_features(q, t, &mut x);
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let mut y: Vec<f64> = l
                .weights
                .chunks(l.in_dim)
                .zip(&l.bias)
                .map(|(row, b)| dot(row, &x) + b)
                .collect();
            if li < last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            x = y;
        }
        x[0]
    }

    pub fn save(&self, path: &Path, train_cfg: &TrainConfig, n: usize) -> Result<(), RefineError> {
        let shapes: Vec<[usize; 2]> = self.layers.iter().map(|l| [l.out_dim, l.in_dim]).collect();
        let header = json!({
            "model": "refiner",
            "dim": self.dim,
            "input_width": self.input_width(),
            "layers": shapes,
            "activation": "tanh",
            "config": {"train": train_cfg, "n": n},
            "seed": self.seed,
        });
        let mut rows: Vec<(String, &[f64])> = Vec::new();
        for (li, l) in self.layers.iter().enumerate() {
            for (r, row) in l.weights.chunks(l.in_dim).enumerate() {
                rows.push((format!("l{li}.w{r}"), row));
            }
            rows.push((format!("l{li}.b"), &l.bias));
        }
        write_vector_file(
            path,
            Some(&header),
            rows.iter().map(|(id, r)| (id.as_str(), *r)),
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RefineError> {
        let file = read_vector_file(path)?;
        let dim: usize = file.header_field(path, "dim")?;
        let seed: u64 = file.header_field(path, "seed")?;
        let shapes: Vec<[usize; 2]> = file.header_field(path, "layers")?;
        let bad = |msg: String| RefineError::InvalidConfig(format!("{}: {msg}", path.display()));
        if shapes.is_empty()
            || shapes[0][1] != 3 * dim + 1
            || shapes.last().map(|s| s[0]) != Some(1)
        {
            return Err(bad("layer shapes do not match the input width".into()));
        }
        let mut rows = file.rows.into_iter();
        let mut layers = Vec::with_capacity(shapes.len());
        for (li, [out_dim, in_dim]) in shapes.into_iter().enumerate() {
            let mut weights = Vec::with_capacity(out_dim * in_dim);
            for r in 0..out_dim {
                let row = rows
                    .next()
                    .ok_or_else(|| bad(format!("missing l{li}.w{r}")))?;
                if row.vec.len() != in_dim {
                    return Err(bad(format!("row `{}` has width {}", row.id, row.vec.len())));
                }
                weights.extend(row.vec);
            }
            let bias = rows
                .next()
                .ok_or_else(|| bad(format!("missing l{li}.b")))?
                .vec;
            if bias.len() != out_dim {
                return Err(bad(format!("layer {li} bias has length {}", bias.len())));
            }
            layers.push(Layer {
                in_dim,
                out_dim,
                weights,
                bias,
            });
        }
        Ok(Self { dim, layers, seed })
    }
}

/// Independent sigmoid score for each candidate vector.
pub fn refiner_score(
    query_vec: &[f64],
    candidate_vecs: &[&[f64]],
    model: &RefinerModel,
) -> Result<Vec<f64>, RefineError> {
    if candidate_vecs.is_empty() {
        return Err(RefineError::EmptyCandidates);
    }
    for v in std::iter::once(&query_vec).chain(candidate_vecs) {
        if v.len() != model.dim {
            return Err(RefineError::DimensionMismatch {
                expected: model.dim,
                got: v.len(),
            });
        }
    }
    Ok(candidate_vecs
        .iter()
        .map(|t| sigmoid(model.logit(query_vec, t)))
        .collect())
}

/// Mean per-position BCE over (query, candidate tool, label) examples.
pub struct RefinerObjective {
    template: RefinerModel,
    queries: Vec<Vec<f64>>,
    tools: Vec<Vec<f64>>,
    /// `(query, tool, label)`.
    examples: Vec<(usize, usize, bool)>,
}

impl RefinerObjective {
    pub fn new(
        template: RefinerModel,
        queries: Vec<Vec<f64>>,
        tools: Vec<Vec<f64>>,
        examples: Vec<(usize, usize, bool)>,
    ) -> Self {
        Self {
            template,
            queries,
            tools,
            examples,
        }
    }

    pub fn n_positive(&self) -> usize {
        self.examples.iter().filter(|e| e.2).count()
    }
}

impl Objective for RefinerObjective {
    fn n_params(&self) -> usize {
        self.template.n_params()
    }

    fn n_examples(&self) -> usize {
        self.examples.len()
    }

    fn loss_and_grad(&self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        let layers = &self.template.layers;
        let n_layers = layers.len();
        // (weights, bias) offsets into params for each layer
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in layers {
            offsets.push((off, off + l.weights.len()));
            off += l.n_params();
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut total = 0.0;
        let mut acts: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
        for &ex in batch {
            let (qi, ti, label) = self.examples[ex];
            pair_features(&self.queries[qi], &self.tools[ti], &mut acts[0]);
            let mut logit = 0.0;
            for (li, l) in layers.iter().enumerate() {
                let (wo, bo) = offsets[li];
                let w = &params[wo..wo + l.weights.len()];
                let b = &params[bo..bo + l.out_dim];
                let y: Vec<f64> = w
                    .chunks(l.in_dim)
                    .zip(b)
                    .map(|(row, bj)| dot(row, &acts[li]) + bj)
                    .collect();
                if li + 1 < n_layers {
                    acts[li + 1] = y.into_iter().map(f64::tanh).collect();
                } else {
                    logit = y[0];
                }
            }
            let p = sigmoid(logit);
            total += bce(p, label);

            let mut delta = vec![(p - f64::from(u8::from(label))) * scale];
            for li in (0..n_layers).rev() {
                let l = &layers[li];
                let (wo, bo) = offsets[li];
                let input = &acts[li];
                for (r, d) in delta.iter().enumerate() {
                    let grow = &mut grad[wo + r * l.in_dim..wo + (r + 1) * l.in_dim];
                    for (g, x) in grow.iter_mut().zip(input) {
                        *g += d * x;
                    }
                    grad[bo + r] += d;
                }
                if li == 0 {
                    break;
                }
                let w = &params[wo..wo + l.weights.len()];
                let mut prev = vec![0.0; l.in_dim];
                for (r, d) in delta.iter().enumerate() {
                    for (pv, wv) in prev.iter_mut().zip(&w[r * l.in_dim..(r + 1) * l.in_dim]) {
                        *pv += d * wv;
                    }
                }
                for (pv, a) in prev.iter_mut().zip(input) {
                    *pv *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        total * scale
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerTrainStats {
    pub train_queries: usize,
    pub examples: usize,
    pub positives: usize,
    /// Ground-truth tools that stage 1 failed to place in the top N.
    pub stage1_misses: usize,
}

/// Query vectors, tool vectors and `(query, tool, label)` index triples.
type Examples = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<(usize, usize, bool)>);

fn build_examples<'a, F>(
    queries: impl Iterator<Item = &'a QueryRecord>,
    query_embeddings: &EmbeddingMatrix,
    tool2vec: &EmbeddingMatrix,
    stage1: &F,
    stats: &mut RefinerTrainStats,
) -> Result<Examples, RefineError>
where
    F: Fn(&QueryRecord) -> Result<RetrievalResult, RefineError>,
{
    let zero = vec![0.0; tool2vec.dim()];
    let mut qvecs = Vec::new();
    let mut tools: Vec<Vec<f64>> = (0..tool2vec.len())
        .map(|i| tool2vec.row_at(i).to_vec())
        .collect();
    let zero_idx = tools.len();
    tools.push(zero);
    let mut examples = Vec::new();
    for q in queries {
        let qv = query_embeddings
            .row(&q.query_id)
            .ok_or_else(|| RefineError::MissingEmbedding(q.query_id.clone()))?;
        let qi = qvecs.len();
        qvecs.push(qv.to_vec());
        let result = stage1(q)?;
        let mut found = 0;
        for c in &result.candidates {
            let label = q.uses(&c.tool_id);
            found += usize::from(label);
            let ti = tool2vec.position(&c.tool_id).unwrap_or(zero_idx);
            examples.push((qi, ti, label));
        }
        stats.stage1_misses += q.tools.len() - found;
        stats.train_queries += 1;
    }
    Ok((qvecs, tools, examples))
}

/// Trains the refiner on each train query's stage-1 top-`n` candidates,
/// labeled 1 when the candidate is a ground-truth tool. Ground-truth tools
/// missing from the top `n` contribute nothing and are counted as misses.
/// Candidates without a Tool2Vec row are scored with the zero vector.
pub fn train_refiner<F>(
    corpus: &Corpus,
    query_embeddings: &EmbeddingMatrix,
    tool2vec: &EmbeddingMatrix,
    stage1: F,
    cfg: &TrainConfig,
    refiner_cfg: &RefinerConfig,
) -> Result<(RefinerModel, LossReport, RefinerTrainStats), RefineError>
where
    F: Fn(&QueryRecord) -> Result<RetrievalResult, RefineError>,
{
    if query_embeddings.dim() != tool2vec.dim() {
        return Err(RefineError::DimensionMismatch {
            expected: tool2vec.dim(),
            got: query_embeddings.dim(),
        });
    }
    if corpus.queries_in(&[Split::Train]).next().is_none() {
        return Err(RefineError::EmptyTrainSet);
    }
    let init = RefinerModel::new(tool2vec.dim(), refiner_cfg, cfg.seed)?;
    let mut stats = RefinerTrainStats::default();
    let (qv, tv, ex) = build_examples(
        corpus.queries_in(&[Split::Train]),
        query_embeddings,
        tool2vec,
        &stage1,
        &mut stats,
    )?;
    let mut objective = RefinerObjective::new(init.clone(), qv, tv, ex);
    stats.examples = objective.n_examples();
    stats.positives = objective.n_positive();

    let mut val_stats = RefinerTrainStats::default();
    let (qv, tv, ex) = build_examples(
        corpus.queries_in(&[Split::Val]),
        query_embeddings,
        tool2vec,
        &stage1,
        &mut val_stats,
    )?;
    let val = RefinerObjective::new(init.clone(), qv, tv, ex);
    let val_batch: Vec<usize> = (0..val.n_examples()).collect();
    let val_fn = |p: &[f64]| val.loss(p, &val_batch);
    let val_loss: train::ValLoss = if val_batch.is_empty() {
        None
    } else {
        Some(&val_fn)
    };

    log::info!(
        "refiner: {} examples ({} positive), {} ground-truth tools missed by stage 1",
        stats.examples,
        stats.positives,
        stats.stage1_misses
    );
    let (params, report) = train::sgd_run(&mut objective, init.params(), cfg, val_loss)?;
    let mut model = init;
    model.set_params(&params);
    Ok((model, report, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stage1_method: Method,
    pub n: usize,
    pub k: usize,
}

impl PipelineConfig {
    pub const DEFAULT_N: usize = 64;

    pub fn validate(&self) -> Result<(), RefineError> {
        if self.k == 0 || self.k > self.n {
            return Err(RefineError::InvalidConfig(format!(
                "need 1 <= K <= N, got K={} N={}",
                self.k, self.n
            )));
        }
        Ok(())
    }
}

/// Everything needed to answer a query: the featurizer, tool matrices and
/// trained models.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub featurizer: Featurizer,
    pub tool2vec: EmbeddingMatrix,
    pub descriptions: Option<EmbeddingMatrix>,
    pub mlc: Option<MlcModel>,
    pub refiner: Option<RefinerModel>,
    projection: Option<Projection>,
}

impl Artifacts {
    pub fn new(featurizer: Featurizer, tool2vec: EmbeddingMatrix) -> Self {
        Self {
            featurizer,
            tool2vec,
            descriptions: None,
            mlc: None,
            refiner: None,
            projection: None,
        }
    }

    pub fn with_descriptions(mut self, m: EmbeddingMatrix) -> Self {
        self.descriptions = Some(m);
        self
    }

    pub fn with_mlc(mut self, m: MlcModel) -> Self {
        self.mlc = Some(m);
        self
    }

    pub fn with_refiner(mut self, m: RefinerModel) -> Self {
        self.refiner = Some(m);
        self
    }

    /// Projects the tool matrices once; query vectors are projected at
    /// lookup time.
    pub fn with_projection(mut self, p: Projection) -> Result<Self, RefineError> {
        self.tool2vec = p.project_matrix(&self.tool2vec)?;
        if let Some(d) = &self.descriptions {
            self.descriptions = Some(p.project_matrix(d)?);
        }
        self.projection = Some(p);
        Ok(self)
    }

    pub fn query_vector(&self, text: &str) -> Vec<f64> {
        let v = self.featurizer.featurize(text);
        match &self.projection {
            Some(p) => p.apply_normalized(&v),
            None => v,
        }
    }

    pub fn stage1(
        &self,
        query_id: &str,
        text: &str,
        method: Method,
        n: usize,
    ) -> Result<RetrievalResult, RefineError> {
        let result = match method {
            Method::Tool2vec => cosine_topn(
                query_id,
                &self.query_vector(text),
                &self.tool2vec,
                n,
                method,
            )?,
            Method::Description => {
                let m = self
                    .descriptions
                    .as_ref()
                    .ok_or(RefineError::MissingArtifact("description embeddings"))?;
                cosine_topn(query_id, &self.query_vector(text), m, n, method)?
            }
            Method::Mlc => {
                let m = self
                    .mlc
                    .as_ref()
                    .ok_or(RefineError::MissingArtifact("mlc model"))?;
                mlc_topn(query_id, text, m, &self.featurizer, n)?
            }
        };
        Ok(result)
    }

    fn refine(
        &self,
        query_id: &str,
        query_vec: &[f64],
        ids: &[&str],
        k: usize,
        method: Method,
        strict: bool,
    ) -> Result<RetrievalResult, RefineError> {
        let model = self
            .refiner
            .as_ref()
            .ok_or(RefineError::MissingArtifact("refiner model"))?;
        let zero = vec![0.0; self.tool2vec.dim()];
        let vecs = ids
            .iter()
            .map(|id| match self.tool2vec.row(id) {
                Some(r) => Ok(r),
                None if strict => Err(RefineError::UnknownTool((*id).to_owned())),
                None => Ok(zero.as_slice()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scores = refiner_score(query_vec, &vecs, model)?;
        let scored = ids
            .iter()
            .zip(scores)
            .map(|(id, score)| Candidate {
                tool_id: (*id).to_owned(),
                score,
            })
            .collect();
        Ok(RetrievalResult {
            query_id: query_id.to_owned(),
            candidates: top_n(scored, k),
            stage: Stage::Refined,
            method,
        })
    }
}

/// Stage 1 keeps `cfg.n` candidates; the refiner re-scores them and the top
/// `cfg.k` by refiner probability (ties by tool id) are returned.
pub fn retrieve_two_stage(
    query_id: &str,
    text: &str,
    artifacts: &Artifacts,
    cfg: &PipelineConfig,
) -> Result<RetrievalResult, RefineError> {
    cfg.validate()?;
    let stage1 = artifacts.stage1(query_id, text, cfg.stage1_method, cfg.n)?;
    let ids = stage1.tool_ids();
    let qv = artifacts.query_vector(text);
    artifacts.refine(query_id, &qv, &ids, cfg.k, cfg.stage1_method, false)
}

/// Re-scores an externally supplied candidate list. Every candidate must
/// have a Tool2Vec row; duplicates are scored once.
pub fn refine_external(
    query_id: &str,
    text: &str,
    candidate_ids: &[String],
    artifacts: &Artifacts,
    k: usize,
    method: Method,
) -> Result<RetrievalResult, RefineError> {
    if k == 0 {
        return Err(RefineError::InvalidConfig("K must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    let ids: Vec<&str> = candidate_ids
        .iter()
        .map(String::as_str)
        .filter(|id| seen.insert(*id))
        .collect();
    let qv = artifacts.query_vector(text);
    artifacts.refine(query_id, &qv, &ids, k, method, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{FeaturizerConfig, MatrixKind};

    fn zeros(dim: usize) -> RefinerModel {
        let cfg = RefinerConfig {
            init: RefinerInit::Zeros,
            ..Default::default()
        };
        RefinerModel::new(dim, &cfg, 0).unwrap()
    }

    #[test]
    fn zero_model_scores_half() {
        let m = zeros(3);
        let s = refiner_score(&[1.0, 0.0, 0.0], &[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]], &m).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
        assert_eq!(m.input_width(), 10);
    }

    #[test]
    fn duplicated_candidates_score_identically() {
        let m = RefinerModel::new(4, &RefinerConfig::default(), 9).unwrap();
        let q = [0.5, 0.5, 0.5, 0.5];
        let t = [0.0, 0.6, 0.8, 0.0];
        let s = refiner_score(&q, &[&t, &[1.0, 0.0, 0.0, 0.0], &t], &m).unwrap();
        assert_eq!(s[0], s[2]);
    }

    #[test]
    fn score_errors() {
        let m = zeros(2);
        assert!(matches!(
            refiner_score(&[1.0, 0.0], &[], &m),
            Err(RefineError::EmptyCandidates)
        ));
        assert!(matches!(
            refiner_score(&[1.0, 0.0], &[&[1.0]], &m),
            Err(RefineError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pipeline_config_bounds() {
        let ok = PipelineConfig {
            stage1_method: Method::Tool2vec,
            n: 8,
            k: 8,
        };
        assert!(ok.validate().is_ok());
        assert!(PipelineConfig { k: 9, ..ok }.validate().is_err());
        assert!(PipelineConfig { k: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn refiner_artifact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refiner.jsonl");
        let cfg = RefinerConfig {
            hidden: vec![5, 3],
            ..Default::default()
        };
        let m = RefinerModel::new(4, &cfg, 11).unwrap();
        m.save(&path, &TrainConfig::default(), 64).unwrap();
        assert_eq!(RefinerModel::load(&path).unwrap(), m);
    }

    fn artifacts() -> Artifacts {
        let f = Featurizer::new(FeaturizerConfig {
            dim: 4,
            ngram_min: 1,
            ngram_max: 1,
            lowercase: true,
        })
        .unwrap();
        let mut t2v = EmbeddingMatrix::new(4, MatrixKind::Tool2vec, true);
        for (i, id) in ["a", "b", "c"].iter().enumerate() {
            let mut row = vec![0.0; 4];
            row[i] = 1.0;
            t2v.push(*id, &row).unwrap();
        }
        Artifacts::new(f, t2v)
            .with_refiner(RefinerModel::new(4, &RefinerConfig::default(), 5).unwrap())
    }

    #[test]
    fn external_unknown_tool() {
        let a = artifacts();
        let err = refine_external(
            "q",
            "text",
            &["a".into(), "zz".into()],
            &a,
            1,
            Method::Tool2vec,
        )
        .unwrap_err();
        assert!(matches!(err, RefineError::UnknownTool(id) if id == "zz"));
    }

    #[test]
    fn external_single_candidate_survives() {
        let a = artifacts();
        let r = refine_external("q", "text", &["b".into()], &a, 1, Method::Tool2vec).unwrap();
        assert_eq!(r.tool_ids(), vec!["b"]);
        assert_eq!(r.stage, Stage::Refined);
    }

    #[test]
    fn missing_refiner_is_reported() {
        let mut a = artifacts();
        a.refiner = None;
        let cfg = PipelineConfig {
            stage1_method: Method::Tool2vec,
            n: 2,
            k: 1,
        };
        assert!(matches!(
            retrieve_two_stage("q", "abc", &a, &cfg),
            Err(RefineError::MissingArtifact(_))
        ));
        let cfg = PipelineConfig {
            stage1_method: Method::Mlc,
            ..cfg
        };
        assert!(matches!(
            artifacts().stage1("q", "abc", cfg.stage1_method, 2),
            Err(RefineError::MissingArtifact(_))
        ));
    }
}
