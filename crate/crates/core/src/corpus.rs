//! Tools, labeled queries, JSON Lines I/O and train/validation splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line_no}: malformed record: {msg}")]
    MalformedLine {
        path: PathBuf,
        line_no: usize,
        msg: String,
    },
    #[error("query `{query_id}` references unknown tool `{tool_id}`")]
    UnknownToolRef { query_id: String, tool_id: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid record `{id}`: {msg}")]
    InvalidRecord { id: String, msg: String },
    #[error("no training queries to split")]
    EmptyTrainSet,
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split `{other}` (expected train, val or test)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRecord {
    pub tool_id: String,
    pub name: String,
    pub description: String,
    /// Fields this crate does not know about, re-emitted on save.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ToolRecord {
    pub fn new(
        tool_id: impl Into<String>,
        name: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self {
            tool_id: tool_id.into(),
            name: name.into(),
            description: description.into(),
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub tools: Vec<String>,
    pub split: Split,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl QueryRecord {
    pub fn new<S: Into<String>>(
        query_id: impl Into<String>,
        text: impl Into<String>,
        tools: impl IntoIterator<Item = S>,
        split: Split,
    ) -> Self {
        Self {
            query_id: query_id.into(),
            text: text.into(),
            tools: tools.into_iter().map(Into::into).collect(),
            split,
            extra: Map::new(),
        }
    }

    pub fn uses(&self, tool_id: &str) -> bool {
        self.tools.iter().any(|t| t == tool_id)
    }
}

/// A validated tool catalog plus labeled queries. Record order is preserved
/// as loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    tools: Vec<ToolRecord>,
    tool_index: HashMap<String, usize>,
    queries: Vec<QueryRecord>,
    query_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(tools: Vec<ToolRecord>, queries: Vec<QueryRecord>) -> Result<Self, CorpusError> {
        let mut tool_index = HashMap::with_capacity(tools.len());
        for (i, t) in tools.iter().enumerate() {
            check_tool(t).map_err(|msg| CorpusError::InvalidRecord {
                id: t.tool_id.clone(),
                msg,
            })?;
            if tool_index.insert(t.tool_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(t.tool_id.clone()));
            }
        }
        let mut query_index = HashMap::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            check_query(q).map_err(|msg| CorpusError::InvalidRecord {
                id: q.query_id.clone(),
                msg,
            })?;
            if query_index.insert(q.query_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(q.query_id.clone()));
            }
            for t in &q.tools {
                if !tool_index.contains_key(t) {
                    return Err(CorpusError::UnknownToolRef {
                        query_id: q.query_id.clone(),
                        tool_id: t.clone(),
                    });
                }
            }
        }
        Ok(Self {
            tools,
            tool_index,
            queries,
            query_index,
        })
    }

    pub fn tools(&self) -> &[ToolRecord] {
        &self.tools
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn n_tools(&self) -> usize {
        self.tools.len()
    }

    pub fn tool(&self, tool_id: &str) -> Option<&ToolRecord> {
        self.tool_index.get(tool_id).map(|&i| &self.tools[i])
    }

    pub fn tool_position(&self, tool_id: &str) -> Option<usize> {
        self.tool_index.get(tool_id).copied()
    }

    pub fn query(&self, query_id: &str) -> Option<&QueryRecord> {
        self.query_index.get(query_id).map(|&i| &self.queries[i])
    }

    pub fn queries_in<'a>(
        &'a self,
        splits: &'a [Split],
    ) -> impl Iterator<Item = &'a QueryRecord> + 'a {
        self.queries
            .iter()
            .filter(move |q| splits.contains(&q.split))
    }

    pub fn into_parts(self) -> (Vec<ToolRecord>, Vec<QueryRecord>) {
        (self.tools, self.queries)
    }
}

fn check_tool(t: &ToolRecord) -> Result<(), String> {
    if t.tool_id.is_empty() {
        return Err("tool_id must be non-empty".into());
    }
    Ok(())
}

fn check_query(q: &QueryRecord) -> Result<(), String> {
    if q.query_id.is_empty() {
        return Err("query_id must be non-empty".into());
    }
    if q.text.is_empty() {
        return Err("text must be non-empty".into());
    }
    if q.tools.is_empty() {
        return Err("tools must list at least one tool".into());
    }
    let mut seen = HashSet::with_capacity(q.tools.len());
    for t in &q.tools {
        if !seen.insert(t.as_str()) {
            return Err(format!("tool `{t}` listed twice"));
        }
    }
    Ok(())
}

fn read_jsonl<T, F>(path: &Path, check: F) -> Result<Vec<T>, CorpusError>
where
    T: serde::de::DeserializeOwned,
    F: Fn(&T) -> Result<(), String>,
{
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let malformed = |msg: String| CorpusError::MalformedLine {
            path: path.to_path_buf(),
            line_no,
            msg,
        };
        let line = if line_no == 1 {
            line.strip_prefix('\u{feff}')
                .map(str::to_owned)
                .unwrap_or(line)
        } else {
            line
        };
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        check(&record).map_err(malformed)?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let io = |source: std::io::Error| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_corpus(tools_path: &Path, queries_path: &Path) -> Result<Corpus, CorpusError> {
    let tools = read_jsonl(tools_path, check_tool)?;
    let queries = read_jsonl(queries_path, check_query)?;
    Corpus::new(tools, queries)
}

/// Reads a tool catalog on its own, for callers that have no queries yet.
pub fn load_tools(tools_path: &Path) -> Result<Vec<ToolRecord>, CorpusError> {
    read_jsonl(tools_path, check_tool)
}

pub fn save_corpus(
    corpus: &Corpus,
    tools_path: &Path,
    queries_path: &Path,
) -> Result<(), CorpusError> {
    write_jsonl(tools_path, corpus.tools())?;
    write_jsonl(queries_path, corpus.queries())
}

/// Re-tags the current train queries into train and val.
///
/// Train query ids are sorted, shuffled with a generator seeded by `seed`,
/// and the first `round(ratio * n)` stay in train. Val and test queries
/// already present are left as they are.
pub fn split_train_val(corpus: &Corpus, ratio: f64, seed: u64) -> Result<Corpus, CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    let mut train_ids: Vec<&str> = corpus
        .queries
        .iter()
        .filter(|q| q.split == Split::Train)
        .map(|q| q.query_id.as_str())
        .collect();
    if train_ids.is_empty() {
        return Err(CorpusError::EmptyTrainSet);
    }
    train_ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    train_ids.shuffle(&mut rng);
    let n_train = (ratio * train_ids.len() as f64).round() as usize;
    if n_train == 0 {
        return Err(CorpusError::EmptyTrainSet);
    }
    let to_val: HashSet<&str> = train_ids[n_train..].iter().copied().collect();
    let queries = corpus
        .queries
        .iter()
        .map(|q| {
            let mut q = q.clone();
            if to_val.contains(q.query_id.as_str()) {
                q.split = Split::Val;
            }
            q
        })
        .collect();
    Ok(Corpus {
        tools: corpus.tools.clone(),
        tool_index: corpus.tool_index.clone(),
        queries,
        query_index: corpus.query_index.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_tools: usize,
    pub n_queries: usize,
    pub queries_per_split: BTreeMap<Split, usize>,
    /// Number of tools per query -> number of queries with that many tools.
    pub tools_per_query: BTreeMap<usize, usize>,
    /// Every tool, including those never used.
    pub tool_occurrences: BTreeMap<String, usize>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut queries_per_split: BTreeMap<Split, usize> =
        Split::ALL.iter().map(|&s| (s, 0)).collect();
    let mut tools_per_query = BTreeMap::new();
    let mut tool_occurrences: BTreeMap<String, usize> = corpus
        .tools
        .iter()
        .map(|t| (t.tool_id.clone(), 0))
        .collect();
    for q in &corpus.queries {
        *queries_per_split.entry(q.split).or_default() += 1;
        *tools_per_query.entry(q.tools.len()).or_default() += 1;
        for t in &q.tools {
            *tool_occurrences.entry(t.clone()).or_default() += 1;
        }
    }
    CorpusStats {
        n_tools: corpus.n_tools(),
        n_queries: corpus.queries.len(),
        queries_per_split,
        tools_per_query,
        tool_occurrences,
    }
}
