//! Synthetic query generation: sample a tool pool, ask an LLM to write a
//! query over a subset of it, polish the wording, and judge query sets
//! against each other.

use crate::corpus::{save_corpus, Corpus, CorpusError, QueryRecord, Split, ToolRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const GENERATION_TEMPLATE: &str = include_str!("../assets/query_generation.txt");
pub const POLISH_TEMPLATE: &str = include_str!("../assets/query_polish.txt");
pub const JUDGE_TEMPLATE: &str = include_str!("../assets/pairwise_judge.txt");
const GENERATION_EXAMPLES: &str = include_str!("../assets/generation_examples.json");
const POLISH_EXAMPLES: &str = include_str!("../assets/polish_examples.json");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("LLM transport error: {0}")]
pub struct LlmError(pub String);

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("pool of {pool} tools requested from a catalog of {n_tools}")]
    PoolLargerThanCorpus { pool: usize, n_tools: usize },
    #[error(transparent)]
    Transport(#[from] LlmError),
    #[error("unparseable response ({msg}): {raw}")]
    UnparseableResponse { raw: String, msg: String },
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("judge sets must be non-empty")]
    EmptyJudgeSet,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl DatagenError {
    /// Short machine-readable tag used in generation logs.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::PoolLargerThanCorpus { .. } => "pool_larger_than_corpus",
            Self::Transport(_) => "transport",
            Self::UnparseableResponse { .. } => "unparseable",
            Self::ConstraintViolation(_) => "constraint_violation",
            Self::InvalidConfig(_) => "invalid_config",
            Self::EmptyJudgeSet => "empty_judge_set",
            Self::Io { .. } => "io",
            Self::Corpus(_) => "corpus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub t_pool: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub n_incontext: usize,
    pub seed: u64,
    pub rounds: usize,
    /// Substituted into the generation template's trailing placeholder.
    pub library_specific_instructions: String,
    /// Maximum concurrent client requests.
    pub request_cap: usize,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            t_pool: 10,
            m_min: 2,
            m_max: 5,
            n_incontext: 5,
            seed: 0,
            rounds: 1,
            library_specific_instructions: String::new(),
            request_cap: 1,
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(1 <= self.m_min && self.m_min <= self.m_max && self.m_max <= self.t_pool) {
            return Err(DatagenError::InvalidConfig(format!(
                "need 1 <= m_min <= m_max <= t_pool, got {} / {} / {}",
                self.m_min, self.m_max, self.t_pool
            )));
        }
        if self.request_cap == 0 {
            return Err(DatagenError::InvalidConfig(
                "request_cap must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A chat-completion backend: system prompt plus user content in, one
/// completion out.
pub trait LlmClient: Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(rename = "match")]
    pub key: String,
    pub response: String,
}

/// Replays canned responses. The first entry whose key occurs in the system
/// prompt or the user content wins; a `"*"` key matches anything.
#[derive(Debug, Clone, Default)]
pub struct MockClient {
    entries: Vec<MockEntry>,
}

impl MockClient {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        Self { entries }
    }

    /// Reads a JSON Lines fixture of `{"match": ..., "response": ...}`.
    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatagenError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: MockEntry = serde_json::from_str(line).map_err(|e| {
                DatagenError::InvalidConfig(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[MockEntry] {
        &self.entries
    }
}

impl LlmClient for MockClient {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        self.entries
            .iter()
            .find(|e| e.key == "*" || system.contains(&e.key) || user.contains(&e.key))
            .map(|e| e.response.clone())
            .ok_or_else(|| LlmError("mock fixture has no matching entry".into()))
    }
}

/// Wraps a closure as a client.
pub struct FnClient<F>(pub F);

impl<F> LlmClient for FnClient<F>
where
    F: Fn(&str, &str) -> Result<String, LlmError> + Sync,
{
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        (self.0)(system, user)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpClientConfig {
    /// Full URL of a chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding a bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub temperature: f64,
}

/// Client for OpenAI-style `/chat/completions` endpoints.
pub struct HttpChatClient {
    cfg: HttpClientConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(cfg: HttpClientConfig) -> Result<Self, DatagenError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                DatagenError::InvalidConfig(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            cfg,
            api_key,
            agent,
        })
    }
}

impl LlmClient for HttpChatClient {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| LlmError(e.to_string()))?;
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| LlmError(format!("response has no message content: {value}")))
    }
}

/// One worked example shown to the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InContextExample {
    pub instruction: String,
    pub functions: Vec<String>,
    pub explanation: String,
}

pub fn default_generation_examples() -> Vec<InContextExample> {
    serde_json::from_str(GENERATION_EXAMPLES).expect("bundled generation examples are valid")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub generation: String,
    pub polish: String,
    pub judge: String,
    /// Pretty JSON substituted for the polish template's placeholder.
    pub polish_examples: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            generation: GENERATION_TEMPLATE.to_owned(),
            polish: POLISH_TEMPLATE.to_owned(),
            judge: JUDGE_TEMPLATE.to_owned(),
            polish_examples: POLISH_EXAMPLES.trim().to_owned(),
        }
    }
}

impl Prompts {
    pub fn render_generation(
        &self,
        examples: &[InContextExample],
        library_specific: &str,
    ) -> String {
        let examples_str = serde_json::to_string_pretty(examples).expect("examples serialize");
        self.generation
            .replace("{examples_str}", &examples_str)
            .replace("{library_specific_instructions}", library_specific)
    }

    pub fn render_polish(&self) -> String {
        self.polish
            .replace("{in_context_examples}", &self.polish_examples)
    }
}

/// Tool listing sent as the generator's user content.
pub fn pool_listing(pool: &[&ToolRecord]) -> String {
    let mut out = String::from("Functions:\n");
    for t in pool {
        let _ = writeln!(out, "- {}: {}", t.name, t.description);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub round: usize,
    pub pool: Vec<String>,
    /// SHA-256 hex of the rendered generation prompt and user content.
    pub prompts_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub raw_query: String,
    pub polished_query: Option<String>,
    pub selected_tools: Vec<String>,
    pub provenance: Provenance,
}

impl GeneratedRecord {
    pub fn text(&self) -> &str {
        self.polished_query.as_deref().unwrap_or(&self.raw_query)
    }
}

fn round_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng
}

fn draw_pool<'c>(
    corpus: &'c Corpus,
    t_pool: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'c ToolRecord>, DatagenError> {
    let n_tools = corpus.n_tools();
    if t_pool > n_tools {
        return Err(DatagenError::PoolLargerThanCorpus {
            pool: t_pool,
            n_tools,
        });
    }
    let tools = corpus.tools();
    Ok(rand::seq::index::sample(rng, n_tools, t_pool)
        .into_iter()
        .map(|i| &tools[i])
        .collect())
}

/// `t_pool` distinct tools drawn uniformly, determined by `(seed, round)`.
pub fn sample_pool<'c>(
    corpus: &'c Corpus,
    cfg: &DatagenConfig,
    round: usize,
) -> Result<Vec<&'c ToolRecord>, DatagenError> {
    draw_pool(corpus, cfg.t_pool, &mut round_rng(cfg.seed, round))
}

/// Pulls the outermost `{...}` out of a completion that may carry chatter or
/// code fences around it.
fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str(&raw[start..=end]) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

fn unparseable(raw: &str, msg: impl Into<String>) -> DatagenError {
    DatagenError::UnparseableResponse {
        raw: raw.to_owned(),
        msg: msg.into(),
    }
}

fn string_field<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a str> {
    keys.iter()
        .find_map(|k| obj.get(*k)?.as_str())
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

/// Parses a generation completion and resolves tool names against the
/// catalog (case-insensitive exact match on `name`).
pub fn parse_generation(
    raw: &str,
    corpus: &Corpus,
    pool: &[&ToolRecord],
    cfg: &DatagenConfig,
) -> Result<(String, Vec<String>), DatagenError> {
    let obj = extract_object(raw).ok_or_else(|| unparseable(raw, "no JSON object"))?;
    let instruction = string_field(&obj, &["instruction", "query"])
        .ok_or_else(|| unparseable(raw, "missing instruction"))?
        .to_owned();
    let names = ["functions", "tools"]
        .iter()
        .find_map(|k| obj.get(*k)?.as_array())
        .ok_or_else(|| unparseable(raw, "missing functions list"))?;

    let in_pool = |id: &str| pool.iter().any(|t| t.tool_id == id);
    let mut by_name: HashMap<String, Vec<&str>> = HashMap::new();
    for t in corpus.tools() {
        by_name
            .entry(t.name.to_lowercase())
            .or_default()
            .push(&t.tool_id);
    }
    let mut selected: Vec<String> = Vec::new();
    for name in names {
        let name = name
            .as_str()
            .ok_or_else(|| unparseable(raw, "non-string function name"))?;
        let ids = by_name
            .get(&name.trim().to_lowercase())
            .ok_or_else(|| unparseable(raw, format!("unknown function `{name}`")))?;
        let id = ids.iter().copied().find(|id| in_pool(id)).unwrap_or(ids[0]);
        if !in_pool(id) {
            return Err(DatagenError::ConstraintViolation(format!(
                "`{name}` is not in the sampled pool"
            )));
        }
        if !selected.iter().any(|s| s == id) {
            selected.push(id.to_owned());
        }
    }
    if selected.len() < cfg.m_min || selected.len() > cfg.m_max {
        return Err(DatagenError::ConstraintViolation(format!(
            "{} tools selected, allowed range is [{}, {}]",
            selected.len(),
            cfg.m_min,
            cfg.m_max
        )));
    }
    Ok((instruction, selected))
}

fn sha256_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Renders the generation prompt for `pool`, calls the client, and validates
/// the selected tools.
pub fn generate_query(
    corpus: &Corpus,
    pool: &[&ToolRecord],
    in_context: &[InContextExample],
    client: &dyn LlmClient,
    cfg: &DatagenConfig,
    prompts: &Prompts,
    round: usize,
) -> Result<GeneratedRecord, DatagenError> {
    let system = prompts.render_generation(in_context, &cfg.library_specific_instructions);
    let user = pool_listing(pool);
    let raw = client.complete(&system, &user)?;
    let (raw_query, selected_tools) = parse_generation(&raw, corpus, pool, cfg)?;
    Ok(GeneratedRecord {
        raw_query,
        polished_query: None,
        selected_tools,
        provenance: Provenance {
            round,
            pool: pool.iter().map(|t| t.tool_id.clone()).collect(),
            prompts_hash: sha256_hex(&[&system, &user]),
        },
    })
}

/// `None` means the query was judged good as is.
pub fn parse_polish(raw: &str) -> Result<Option<String>, DatagenError> {
    let Some(obj) = extract_object(raw) else {
        return if raw.trim().trim_matches('"').eq_ignore_ascii_case("good") {
            Ok(None)
        } else {
            Err(unparseable(raw, "no JSON object"))
        };
    };
    let marked_good = obj.get("good").and_then(Value::as_bool) == Some(true)
        || ["status", "label", "verdict"].iter().any(|k| {
            obj.get(*k)
                .and_then(Value::as_str)
                .is_some_and(|s| s.trim().eq_ignore_ascii_case("good"))
        });
    if marked_good {
        return Ok(None);
    }
    string_field(&obj, &["refined_instruction", "refined", "instruction"])
        .map(|s| Some(s.to_owned()))
        .ok_or_else(|| unparseable(raw, "neither marked good nor refined"))
}

/// Rewrites the query text; the tool labels are carried over untouched.
pub fn polish_query(
    record: &GeneratedRecord,
    client: &dyn LlmClient,
    prompts: &Prompts,
) -> Result<GeneratedRecord, DatagenError> {
    let raw = client.complete(&prompts.render_polish(), &record.raw_query)?;
    let polished = parse_polish(&raw)?.unwrap_or_else(|| record.raw_query.clone());
    Ok(GeneratedRecord {
        polished_query: Some(polished),
        ..record.clone()
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rejection {
    pub round: usize,
    pub stage: String,
    pub kind: String,
    pub reason: String,
    pub raw: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenerationRun {
    pub accepted: Vec<GeneratedRecord>,
    pub rejected: Vec<Rejection>,
}

impl GenerationRun {
    /// One JSON line per round, in round order.
    pub fn log_jsonl(&self) -> String {
        let mut events: Vec<(usize, Value)> = self
            .accepted
            .iter()
            .map(|r| {
                (
                    r.provenance.round,
                    json!({"round": r.provenance.round, "status": "accepted", "record": r}),
                )
            })
            .chain(self.rejected.iter().map(|r| {
                (
                    r.round,
                    json!({"round": r.round, "status": "rejected", "rejection": r}),
                )
            }))
            .collect();
        events.sort_by_key(|(round, _)| *round);
        events.iter().map(|(_, v)| format!("{v}\n")).collect()
    }
}

fn run_round(
    corpus: &Corpus,
    examples: &[InContextExample],
    client: &dyn LlmClient,
    cfg: &DatagenConfig,
    prompts: &Prompts,
    polish: bool,
    round: usize,
) -> Result<GeneratedRecord, (&'static str, DatagenError)> {
    let mut rng = round_rng(cfg.seed, round);
    let pool = draw_pool(corpus, cfg.t_pool, &mut rng).map_err(|e| ("pool", e))?;
    let in_context: Vec<InContextExample> = examples
        .choose_multiple(&mut rng, cfg.n_incontext.min(examples.len()))
        .cloned()
        .collect();
    let record = generate_query(corpus, &pool, &in_context, client, cfg, prompts, round)
        .map_err(|e| ("generate", e))?;
    if polish {
        polish_query(&record, client, prompts).map_err(|e| ("polish", e))
    } else {
        Ok(record)
    }
}

/// Runs `cfg.rounds` rounds. Each round depends only on `(seed, round)`, so
/// the outcome does not depend on `request_cap`.
pub fn run_generation(
    corpus: &Corpus,
    examples: &[InContextExample],
    client: &dyn LlmClient,
    cfg: &DatagenConfig,
    prompts: &Prompts,
    polish: bool,
) -> Result<GenerationRun, DatagenError> {
    cfg.validate()?;
    if cfg.t_pool > corpus.n_tools() {
        return Err(DatagenError::PoolLargerThanCorpus {
            pool: cfg.t_pool,
            n_tools: corpus.n_tools(),
        });
    }
    let one = |round| run_round(corpus, examples, client, cfg, prompts, polish, round);
    let outcomes: Vec<_> = if cfg.request_cap > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.request_cap)
            .build()
            .map_err(|e| DatagenError::InvalidConfig(e.to_string()))?
            .install(|| (0..cfg.rounds).into_par_iter().map(one).collect())
    } else {
        (0..cfg.rounds).map(one).collect()
    };
    let mut run = GenerationRun::default();
    for (round, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(record) => run.accepted.push(record),
            Err((stage, err)) => {
                log::warn!("round {round} rejected at {stage}: {err}");
                let raw = match &err {
                    DatagenError::UnparseableResponse { raw, .. } => Some(raw.clone()),
                    _ => None,
                };
                run.rejected.push(Rejection {
                    round,
                    stage: stage.to_owned(),
                    kind: err.kind().to_owned(),
                    reason: err.to_string(),
                    raw,
                });
            }
        }
    }
    log::info!(
        "generation: {} accepted, {} rejected",
        run.accepted.len(),
        run.rejected.len()
    );
    Ok(run)
}

/// Builds a corpus from the catalog tools and the generated records, with
/// every query in the train split, and writes it as JSON Lines.
pub fn export_dataset(
    catalog: &Corpus,
    records: &[GeneratedRecord],
    tools_path: &Path,
    queries_path: &Path,
) -> Result<Corpus, DatagenError> {
    let mut sorted: Vec<&GeneratedRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.provenance.round);
    let queries = sorted
        .iter()
        .map(|r| {
            let mut q = QueryRecord::new(
                format!("gen-{:06}", r.provenance.round),
                r.text(),
                r.selected_tools.iter().cloned(),
                Split::Train,
            );
            q.extra
                .insert("raw_query".into(), Value::String(r.raw_query.clone()));
            q.extra.insert(
                "provenance".into(),
                serde_json::to_value(&r.provenance).expect("provenance serializes"),
            );
            q
        })
        .collect();
    let corpus = Corpus::new(catalog.tools().to_vec(), queries)?;
    save_corpus(&corpus, tools_path, queries_path)?;
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeCounts {
    pub a_wins: usize,
    pub ties: usize,
    pub b_wins: usize,
    /// Pairs skipped because the client failed.
    pub transport_failures: usize,
    /// Pairs skipped because the verdict could not be read.
    pub unparseable: usize,
}

impl JudgeCounts {
    pub fn judged(&self) -> usize {
        self.a_wins + self.ties + self.b_wins
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    First,
    Second,
    Tie,
}

fn parse_verdict(raw: &str) -> Option<Verdict> {
    let token = match extract_object(raw) {
        Some(obj) => string_field(&obj, &["verdict", "winner", "answer"])?.to_owned(),
        None => raw
            .trim()
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_owned(),
    };
    match token.to_lowercase().as_str() {
        "a" => Some(Verdict::First),
        "b" => Some(Verdict::Second),
        "tie" | "draw" | "equal" => Some(Verdict::Tie),
        _ => None,
    }
}

/// One sampled comparison: indices into the two sets and whether the set-B
/// query was shown first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePair {
    pub a_index: usize,
    pub b_index: usize,
    pub b_shown_first: bool,
}

/// The seeded pair schedule used by [`judge_pairs`].
pub fn judge_schedule(n_a: usize, n_b: usize, n_samples: usize, seed: u64) -> Vec<JudgePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| JudgePair {
            a_index: rng.gen_range(0..n_a),
            b_index: rng.gen_range(0..n_b),
            b_shown_first: rng.gen_bool(0.5),
        })
        .collect()
}

/// Samples `n_samples` (A, B) pairs, shows each to the judge in random order
/// and tallies the verdicts from set A's point of view.
pub fn judge_pairs<S: AsRef<str> + Sync>(
    set_a: &[S],
    set_b: &[S],
    client: &dyn LlmClient,
    n_samples: usize,
    seed: u64,
    prompts: &Prompts,
) -> Result<JudgeCounts, DatagenError> {
    if n_samples == 0 {
        return Ok(JudgeCounts::default());
    }
    if set_a.is_empty() || set_b.is_empty() {
        return Err(DatagenError::EmptyJudgeSet);
    }
    let mut counts = JudgeCounts::default();
    for pair in judge_schedule(set_a.len(), set_b.len(), n_samples, seed) {
        let (a, b) = (set_a[pair.a_index].as_ref(), set_b[pair.b_index].as_ref());
        let (first, second) = if pair.b_shown_first { (b, a) } else { (a, b) };
        let user = format!("Query A: {first}\nQuery B: {second}\n");
        let verdict = match client.complete(&prompts.judge, &user) {
            Ok(raw) => parse_verdict(&raw),
            Err(e) => {
                log::warn!("judge request failed: {e}");
                counts.transport_failures += 1;
                continue;
            }
        };
        match (verdict, pair.b_shown_first) {
            (None, _) => counts.unparseable += 1,
            (Some(Verdict::Tie), _) => counts.ties += 1,
            (Some(Verdict::First), false) | (Some(Verdict::Second), true) => counts.a_wins += 1,
            (Some(Verdict::First), true) | (Some(Verdict::Second), false) => counts.b_wins += 1,
        }
    }
    Ok(counts)
}
