//! Retrieval metrics and the error analyses run on top of them.

use crate::corpus::Corpus;
use crate::embed::{dot, EmbeddingMatrix};
use crate::retrieve::{Method, RetrievalResult, Stage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("relevant set is empty")]
    EmptyRelevantSet,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query `{0}` has no ground truth in the corpus")]
    MissingGroundTruth(String),
    #[error("nothing to evaluate")]
    NoResults,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: query dim {query}, tool dim {tool}")]
    DimensionMismatch { query: usize, tool: usize },
}

/// `|top_k(retrieved) ∩ relevant| / |relevant|`.
pub fn recall_at_k<S: AsRef<str>>(
    retrieved: &[S],
    relevant: &HashSet<&str>,
    k: usize,
) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevantSet);
    }
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let hits: HashSet<&str> = retrieved
        .iter()
        .take(k)
        .map(AsRef::as_ref)
        .filter(|id| relevant.contains(id))
        .collect();
    Ok(hits.len() as f64 / relevant.len() as f64)
}

/// Binary-relevance nDCG with `1 / log2(rank + 1)` discounts, 1-based ranks.
/// A repeated id only counts at its first position.
pub fn ndcg_at_k<S: AsRef<str>>(
    retrieved: &[S],
    relevant: &HashSet<&str>,
    k: usize,
) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevantSet);
    }
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let mut seen: HashSet<&str> = HashSet::new();
    let mut dcg = 0.0;
    for (i, id) in retrieved.iter().take(k).enumerate() {
        let id = id.as_ref();
        if relevant.contains(id) && seen.insert(id) {
            dcg += discount(i + 1);
        }
    }
    let idcg: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    Ok(dcg / idcg)
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![3, 5, 7] }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.ks.is_empty() || self.ks[0] == 0 || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidConfig(format!(
                "ks must be positive and strictly increasing, got {:?}",
                self.ks
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsAtK {
    pub k: usize,
    /// Mean Recall@K over queries, x100.
    pub recall: f64,
    /// Mean nDCG@K over queries, x100.
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    /// One entry per K, in [0, 1].
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` when the results mix methods (or stages).
    pub method: Option<Method>,
    pub stage: Option<Stage>,
    pub n_queries: usize,
    pub metrics: Vec<MetricsAtK>,
    pub per_query: Vec<QueryEval>,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.recall)
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.ndcg)
    }

    /// Header `method,stage,R@k...,N@k...` and one summary row.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["method".to_string(), "stage".to_string()];
        header.extend(self.metrics.iter().map(|m| format!("R@{}", m.k)));
        header.extend(self.metrics.iter().map(|m| format!("N@{}", m.k)));
        let method = self
            .method
            .map(|m| m.to_string())
            .unwrap_or_else(|| "mixed".into());
        let stage = match self.stage {
            Some(Stage::Stage1) => "stage1",
            Some(Stage::Refined) => "refined",
            None => "mixed",
        };
        let mut row = vec![method, stage.to_string()];
        row.extend(self.metrics.iter().map(|m| format!("{:.4}", m.recall)));
        row.extend(self.metrics.iter().map(|m| format!("{:.4}", m.ndcg)));
        format!("{}\n{}\n", header.join(","), row.join(","))
    }

    /// `query_id,R@k...,N@k...` per query, unscaled.
    pub fn per_query_csv(&self) -> String {
        let mut out = String::from("query_id");
        for m in &self.metrics {
            let _ = write!(out, ",R@{}", m.k);
        }
        for m in &self.metrics {
            let _ = write!(out, ",N@{}", m.k);
        }
        out.push('\n');
        for q in &self.per_query {
            out.push_str(&q.query_id);
            for v in q.recall.iter().chain(&q.ndcg) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn common<T: Copy + PartialEq>(mut it: impl Iterator<Item = T>) -> Option<T> {
    let first = it.next()?;
    it.all(|x| x == first).then_some(first)
}

fn relevant_set<'c>(corpus: &'c Corpus, query_id: &str) -> Result<HashSet<&'c str>, EvalError> {
    let q = corpus
        .query(query_id)
        .ok_or_else(|| EvalError::MissingGroundTruth(query_id.to_owned()))?;
    Ok(q.tools.iter().map(String::as_str).collect())
}

/// Macro-averaged Recall@K and nDCG@K over the results, scaled by 100.
pub fn evaluate(
    results: &[RetrievalResult],
    corpus: &Corpus,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    if results.is_empty() {
        return Err(EvalError::NoResults);
    }
    let mut per_query = Vec::with_capacity(results.len());
    for r in results {
        let relevant = relevant_set(corpus, &r.query_id)?;
        let ids = r.tool_ids();
        let recall = cfg
            .ks
            .iter()
            .map(|&k| recall_at_k(&ids, &relevant, k))
            .collect::<Result<Vec<_>, _>>()?;
        let ndcg = cfg
            .ks
            .iter()
            .map(|&k| ndcg_at_k(&ids, &relevant, k))
            .collect::<Result<Vec<_>, _>>()?;
        per_query.push(QueryEval {
            query_id: r.query_id.clone(),
            recall,
            ndcg,
        });
    }
    let n = per_query.len() as f64;
    let metrics = cfg
        .ks
        .iter()
        .enumerate()
        .map(|(i, &k)| MetricsAtK {
            k,
            recall: 100.0 * per_query.iter().map(|q| q.recall[i]).sum::<f64>() / n,
            ndcg: 100.0 * per_query.iter().map(|q| q.ndcg[i]).sum::<f64>() / n,
        })
        .collect();
    Ok(EvalReport {
        method: common(results.iter().map(|r| r.method)),
        stage: common(results.iter().map(|r| r.stage)),
        n_queries: per_query.len(),
        metrics,
        per_query,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolFailure {
    pub tool_id: String,
    pub misses: usize,
    pub occurrences: usize,
    /// Percentage of occurrences that were missed.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub k: usize,
    /// Tools with at least one occurrence, sorted by tool id.
    pub tools: Vec<ToolFailure>,
    /// Mean of per-tool rates (percent).
    pub mean: f64,
    /// Population standard deviation of per-tool rates (percent).
    pub std: f64,
}

impl FailureReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tool_id,misses,occurrences,rate\n");
        for t in &self.tools {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                t.tool_id, t.misses, t.occurrences, t.rate
            );
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-tool miss rates at a fixed K: a miss is a ground-truth tool absent
/// from the query's top K.
pub fn failure_rates(
    results: &[RetrievalResult],
    corpus: &Corpus,
    k: usize,
) -> Result<FailureReport, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in results {
        let q = corpus
            .query(&r.query_id)
            .ok_or_else(|| EvalError::MissingGroundTruth(r.query_id.clone()))?;
        let top: HashSet<&str> = r
            .candidates
            .iter()
            .take(k)
            .map(|c| c.tool_id.as_str())
            .collect();
        for t in &q.tools {
            let e = tally.entry(t.as_str()).or_default();
            e.1 += 1;
            if !top.contains(t.as_str()) {
                e.0 += 1;
            }
        }
    }
    let tools: Vec<ToolFailure> = tally
        .into_iter()
        .map(|(id, (misses, occurrences))| ToolFailure {
            tool_id: id.to_owned(),
            misses,
            occurrences,
            rate: 100.0 * misses as f64 / occurrences as f64,
        })
        .collect();
    let rates: Vec<f64> = tools.iter().map(|t| t.rate).collect();
    let (mean, std) = mean_std(&rates);
    Ok(FailureReport {
        k,
        tools,
        mean,
        std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedQueryLengths {
    pub method: Method,
    pub k: usize,
    pub evaluated: usize,
    pub failed: usize,
    /// Whitespace token counts; `None` when no query failed.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub no_failures: bool,
}

/// Length statistics (whitespace tokens) of queries missing at least one
/// ground-truth tool from their top K, grouped by method.
pub fn failed_query_lengths(
    results: &[RetrievalResult],
    corpus: &Corpus,
    k: usize,
) -> Result<Vec<FailedQueryLengths>, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let mut groups: BTreeMap<Method, (usize, Vec<f64>)> = BTreeMap::new();
    for r in results {
        let q = corpus
            .query(&r.query_id)
            .ok_or_else(|| EvalError::MissingGroundTruth(r.query_id.clone()))?;
        let top: HashSet<&str> = r
            .candidates
            .iter()
            .take(k)
            .map(|c| c.tool_id.as_str())
            .collect();
        let entry = groups.entry(r.method).or_default();
        entry.0 += 1;
        if q.tools.iter().any(|t| !top.contains(t.as_str())) {
            entry.1.push(q.text.split_whitespace().count() as f64);
        }
    }
    Ok(groups
        .into_iter()
        .map(|(method, (evaluated, lengths))| {
            let no_failures = lengths.is_empty();
            let (mean, std) = mean_std(&lengths);
            FailedQueryLengths {
                method,
                k,
                evaluated,
                failed: lengths.len(),
                mean: (!no_failures).then_some(mean),
                std: (!no_failures).then_some(std),
                no_failures,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
}

/// Linear-interpolation quantile of sorted data (the `(n - 1) * q` rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_unstable_by(f64::total_cmp);
        let q1 = quantile_sorted(&s, 0.25);
        let q3 = quantile_sorted(&s, 0.75);
        Some(Self {
            count: s.len(),
            min: s[0],
            q1,
            median: quantile_sorted(&s, 0.5),
            q3,
            max: s[s.len() - 1],
            iqr: q3 - q1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapConfig {
    /// At most this many negative pairs per query.
    pub negative_cap: usize,
    pub seed: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            negative_cap: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub query_id: String,
    pub tool_id: String,
    pub cosine: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGap {
    pub positive: Option<BoxStats>,
    pub negative: Option<BoxStats>,
    pub pairs: Vec<SimilarityPair>,
}

impl SimilarityGap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("set,query_id,tool_id,cosine\n");
        for p in &self.pairs {
            let set = if p.positive { "positive" } else { "negative" };
            let _ = writeln!(out, "{set},{},{},{}", p.query_id, p.tool_id, p.cosine);
        }
        out
    }
}

/// Cosine similarity of each embedded query to the tools it uses
/// (positive) and to a seeded sample of at most `negative_cap` tools it does
/// not use (negative). Queries without a row in `query_embeddings` are
/// skipped.
pub fn similarity_gap(
    query_embeddings: &EmbeddingMatrix,
    tool_embeddings: &EmbeddingMatrix,
    corpus: &Corpus,
    cfg: &GapConfig,
) -> Result<SimilarityGap, EvalError> {
    if query_embeddings.dim() != tool_embeddings.dim() {
        return Err(EvalError::DimensionMismatch {
            query: query_embeddings.dim(),
            tool: tool_embeddings.dim(),
        });
    }
    let cos = |a: &[f64], b: &[f64]| {
        let n = (dot(a, a) * dot(b, b)).sqrt();
        if n == 0.0 {
            0.0
        } else {
            dot(a, b) / n
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::new();
    for q in corpus.queries() {
        let Some(qv) = query_embeddings.row(&q.query_id) else {
            continue;
        };
        let mut negatives = Vec::new();
        for (tool_id, tv) in tool_embeddings.iter() {
            if q.uses(tool_id) {
                pairs.push(SimilarityPair {
                    query_id: q.query_id.clone(),
                    tool_id: tool_id.to_owned(),
                    cosine: cos(qv, tv),
                    positive: true,
                });
            } else {
                negatives.push((tool_id, tv));
            }
        }
        let picked: Vec<usize> = if negatives.len() > cfg.negative_cap {
            let mut idx =
                rand::seq::index::sample(&mut rng, negatives.len(), cfg.negative_cap).into_vec();
            idx.sort_unstable();
            idx
        } else {
            (0..negatives.len()).collect()
        };
        for i in picked {
            let (tool_id, tv) = negatives[i];
            pairs.push(SimilarityPair {
                query_id: q.query_id.clone(),
                tool_id: tool_id.to_owned(),
                cosine: cos(qv, tv),
                positive: false,
            });
        }
    }
    let pos: Vec<f64> = pairs
        .iter()
        .filter(|p| p.positive)
        .map(|p| p.cosine)
        .collect();
    let neg: Vec<f64> = pairs
        .iter()
        .filter(|p| !p.positive)
        .map(|p| p.cosine)
        .collect();
    Ok(SimilarityGap {
        positive: BoxStats::from_values(&pos),
        negative: BoxStats::from_values(&neg),
        pairs,
    })
}

/// Raw vectors of several matrices as `kind,id,v0,v1,...` rows for external
/// plotting.
pub fn vectors_csv(matrices: &[&EmbeddingMatrix]) -> String {
    let dim = matrices.first().map(|m| m.dim()).unwrap_or(0);
    let mut out = String::from("kind,id");
    for i in 0..dim {
        let _ = write!(out, ",v{i}");
    }
    out.push('\n');
    for m in matrices {
        for (id, row) in m.iter() {
            let _ = write!(out, "{},{}", m.kind(), id);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}
