#![allow(dead_code)]

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toolret::corpus::{Corpus, QueryRecord, Split, ToolRecord};
use toolret::embed::{EmbeddingMatrix, MatrixKind};

/// Random corpus with `n_tools` tools and `n_queries` queries of 1..=4 tools.
pub fn random_corpus(seed: u64, n_tools: usize, n_queries: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tools = (0..n_tools)
        .map(|i| ToolRecord::new(format!("t{i:02}"), format!("tool {i}"), format!("does {i}")))
        .collect();
    let queries = (0..n_queries)
        .map(|i| {
            let m = rng.gen_range(1..=n_tools.min(4));
            let picked = sample(&mut rng, n_tools, m).into_vec();
            let split = match rng.gen_range(0..10) {
                0..=5 => Split::Train,
                6..=7 => Split::Val,
                _ => Split::Test,
            };
            QueryRecord::new(
                format!("q{i:03}"),
                format!("query number {i}"),
                picked.iter().map(|t| format!("t{t:02}")),
                split,
            )
        })
        .collect();
    Corpus::new(tools, queries).unwrap()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

pub fn random_query_matrix(corpus: &Corpus, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = EmbeddingMatrix::new(dim, MatrixKind::Query, true);
    for q in corpus.queries() {
        m.push(q.query_id.clone(), &random_unit(&mut rng, dim))
            .unwrap();
    }
    m
}
