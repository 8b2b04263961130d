//! Seeded synthetic corpora for smoke tests and trend checks.

use crate::corpus::{Corpus, QueryRecord, Split, ToolRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// `n` distinct lowercase pseudo-words of 5 to 8 letters, none in `taken`.
fn words(rng: &mut ChaCha8Rng, n: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.gen_range(5..=8);
        let w: String = (0..len)
            .map(|_| rng.gen_range(b'a'..=b'z') as char)
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn pick<'a>(rng: &mut ChaCha8Rng, from: &'a [String], n: usize) -> Vec<&'a str> {
    from.choose_multiple(rng, n).map(String::as_str).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisjointConfig {
    pub n_tools: usize,
    pub train_per_tool: usize,
    pub test_per_tool: usize,
    pub words_per_tool: usize,
    pub words_per_query: usize,
    pub seed: u64,
}

impl Default for DisjointConfig {
    fn default() -> Self {
        Self {
            n_tools: 30,
            train_per_tool: 10,
            test_per_tool: 3,
            words_per_tool: 8,
            words_per_query: 5,
            seed: 0,
        }
    }
}

/// Each tool owns a private query vocabulary; its description is written in
/// a separate vocabulary that no query uses. Every query uses one tool.
pub fn disjoint_corpus(cfg: &DisjointConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = HashSet::new();
    let mut tools = Vec::with_capacity(cfg.n_tools);
    let mut queries = Vec::new();
    for t in 0..cfg.n_tools {
        let vocab = words(&mut rng, cfg.words_per_tool, &mut taken);
        let desc_vocab = words(&mut rng, 6, &mut taken);
        let tool_id = format!("tool{t:03}");
        tools.push(ToolRecord::new(
            &tool_id,
            desc_vocab[0].clone(),
            desc_vocab[1..].join(" "),
        ));
        for (split, count) in [
            (Split::Train, cfg.train_per_tool),
            (Split::Test, cfg.test_per_tool),
        ] {
            for i in 0..count {
                let text = pick(&mut rng, &vocab, cfg.words_per_query).join(" ");
                let qid = format!("{}-{tool_id}-{i}", split.as_str());
                queries.push(QueryRecord::new(qid, text, [tool_id.as_str()], split));
            }
        }
    }
    Corpus::new(tools, queries).expect("generated corpus is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapConfig {
    pub n_tools: usize,
    /// Tools are grouped into domains; a query draws all its tools from one.
    pub n_domains: usize,
    /// Size of the word pool shared by all tools.
    pub shared_vocab: usize,
    pub words_per_tool: usize,
    /// Words contributed to a query by each of its tools.
    pub words_per_use: usize,
    /// Filler words from the shared pool added to every query.
    pub noise_words: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Tool `i` of a domain is drawn with weight `(i + 1)^-usage_skew`; 0
    /// gives uniform usage, larger values a long tail of rare tools.
    pub usage_skew: f64,
    pub seed: u64,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self {
            n_tools: 100,
            n_domains: 10,
            shared_vocab: 240,
            words_per_tool: 6,
            words_per_use: 2,
            noise_words: 2,
            m_min: 2,
            m_max: 5,
            n_train: 2000,
            n_val: 200,
            n_test: 300,
            usage_skew: 0.0,
            seed: 0,
        }
    }
}

/// Tool vocabularies are drawn from one shared pool, so words collide across
/// tools. Queries combine 2 to 5 tools from a single domain.
pub fn overlapping_corpus(cfg: &OverlapConfig) -> Corpus {
    assert!(cfg.n_domains >= 1 && cfg.n_tools >= cfg.n_domains && cfg.m_min >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = HashSet::new();
    let pool = words(&mut rng, cfg.shared_vocab, &mut taken);
    let desc_pool = words(&mut rng, 200, &mut taken);
    let vocabs: Vec<Vec<String>> = (0..cfg.n_tools)
        .map(|_| {
            pick(&mut rng, &pool, cfg.words_per_tool)
                .into_iter()
                .map(str::to_owned)
                .collect()
        })
        .collect();
    let tools: Vec<ToolRecord> = (0..cfg.n_tools)
        .map(|t| {
            let d = pick(&mut rng, &desc_pool, 5);
            ToolRecord::new(format!("tool{t:03}"), d[0], d[1..].join(" "))
        })
        .collect();
    let domains: Vec<Vec<usize>> = (0..cfg.n_domains)
        .map(|d| {
            (0..cfg.n_tools)
                .filter(|t| t % cfg.n_domains == d)
                .collect()
        })
        .collect();
    let mut queries = Vec::new();
    for (split, count) in [
        (Split::Train, cfg.n_train),
        (Split::Val, cfg.n_val),
        (Split::Test, cfg.n_test),
    ] {
        for i in 0..count {
            let domain = &domains[rng.gen_range(0..domains.len())];
            let m = rng.gen_range(cfg.m_min..=cfg.m_max).min(domain.len());
            let chosen: Vec<usize> = if cfg.usage_skew == 0.0 {
                domain.choose_multiple(&mut rng, m).copied().collect()
            } else {
                domain
                    .iter()
                    .enumerate()
                    .collect::<Vec<_>>()
                    .choose_multiple_weighted(&mut rng, m, |(i, _)| {
                        ((i + 1) as f64).powf(-cfg.usage_skew)
                    })
                    .expect("weights are positive and finite")
                    .map(|(_, t)| **t)
                    .collect()
            };
            let mut text: Vec<&str> = Vec::new();
            for &t in &chosen {
                text.extend(pick(&mut rng, &vocabs[t], cfg.words_per_use));
            }
            text.extend(pick(&mut rng, &pool, cfg.noise_words));
            text.shuffle(&mut rng);
            queries.push(QueryRecord::new(
                format!("{}-{i:05}", split.as_str()),
                text.join(" "),
                chosen.iter().map(|t| tools[*t].tool_id.clone()),
                split,
            ));
        }
    }
    Corpus::new(tools, queries).expect("generated corpus is valid")
}
