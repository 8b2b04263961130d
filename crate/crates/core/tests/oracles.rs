//! Reference implementations written independently of the library code.

mod common;

use common::{random_corpus, random_query_matrix, random_unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap, HashSet};
use toolret::corpus::{Corpus, QueryRecord, Split, ToolRecord};
use toolret::datagen::{sample_pool, DatagenConfig};
use toolret::embed::{build_tool2vec, Featurizer, FeaturizerConfig, TripletObjective};
use toolret::eval::{ndcg_at_k, BoxStats};
use toolret::refine::{RefinerConfig, RefinerModel, RefinerObjective};
use toolret::retrieve::{mlc_forward, MlcModel, MlcObjective};
use toolret::train::{grad_check, GradCheckConfig, Objective};

fn fnv_reference(data: &[u8]) -> u64 {
    let mut h: u64 = 14695981039346656037;
    for b in data {
        h ^= u64::from(*b);
        h = h.wrapping_mul(1099511628211);
    }
    h
}

#[test]
fn featurizer_matches_naive_ngram_counts() {
    let cfg = FeaturizerConfig {
        dim: 97,
        ..Default::default()
    };
    let f = Featurizer::new(cfg).unwrap();
    for text in [
        "Sort the Array",
        "naïve café ünïcode",
        "ab",
        "merge two tables by key",
    ] {
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let mut counts = vec![0.0; cfg.dim];
        for n in cfg.ngram_min..=cfg.ngram_max {
            for w in chars.windows(n) {
                let s: String = w.iter().collect();
                counts[(fnv_reference(s.as_bytes()) % cfg.dim as u64) as usize] += 1.0;
            }
        }
        let norm = counts.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|x| *x /= norm);
        }
        let got = f.featurize(text);
        for (a, b) in got.iter().zip(&counts) {
            assert!((a - b).abs() < 1e-12, "{text}");
        }
    }
}

#[test]
fn tool2vec_group_mean_oracle() {
    for seed in 0..10 {
        let c = random_corpus(seed, 30, 200);
        let q = random_query_matrix(&c, 7, seed + 100);
        let (m, _) = build_tool2vec(&c, &q, &[Split::Train]).unwrap();
        let mut groups: HashMap<&str, Vec<&[f64]>> = HashMap::new();
        for qr in c.queries_in(&[Split::Train]) {
            for t in &qr.tools {
                groups
                    .entry(t)
                    .or_default()
                    .push(q.row(&qr.query_id).unwrap());
            }
        }
        assert_eq!(groups.len(), m.len());
        for (tool, rows) in groups {
            let mut mean = vec![0.0; 7];
            for r in &rows {
                for (a, b) in mean.iter_mut().zip(*r) {
                    *a += b / rows.len() as f64;
                }
            }
            let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
            let got = m.row(tool).unwrap();
            for (g, e) in got.iter().zip(&mean) {
                assert!((g - e / norm).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn ndcg_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let retrieved: Vec<String> = (0..rng.gen_range(0..12))
            .map(|_| rng.gen_range(0..15).to_string())
            .collect();
        let relevant: HashSet<String> = (0..rng.gen_range(1..6))
            .map(|_| rng.gen_range(0..15).to_string())
            .collect();
        let rel: HashSet<&str> = relevant.iter().map(String::as_str).collect();
        let k = rng.gen_range(1..10);
        // gain list with repeats zeroed, then ideal list sorted descending
        let mut used = HashSet::new();
        let gains: Vec<f64> = retrieved
            .iter()
            .take(k)
            .map(|id| {
                if rel.contains(id.as_str()) && used.insert(id.clone()) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let dcg: f64 = gains
            .iter()
            .enumerate()
            .map(|(i, g)| g / (i as f64 + 2.0).log2())
            .sum();
        let mut ideal = vec![1.0; relevant.len()];
        ideal.resize(k.max(relevant.len()), 0.0);
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, g)| g / (i as f64 + 2.0).log2())
            .sum();
        let got = ndcg_at_k(&retrieved, &rel, k).unwrap();
        assert!((got - dcg / idcg).abs() < 1e-12);
    }
}

#[test]
fn quartiles_match_reference_values() {
    // values from the linear-interpolation percentile definition used by numpy
    let b = BoxStats::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
    let v: Vec<f64> = (1..=10).rev().map(f64::from).collect();
    let b = BoxStats::from_values(&v).unwrap();
    assert_eq!((b.q1, b.median, b.q3), (3.25, 5.5, 7.75));
    let b = BoxStats::from_values(&[7.0]).unwrap();
    assert_eq!((b.min, b.q1, b.q3, b.max, b.iqr), (7.0, 7.0, 7.0, 7.0, 0.0));
}

#[test]
fn mlc_forward_and_loss_match_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (h, t) = (6, 4);
    let weights: Vec<f64> = (0..h * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bias: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ids: Vec<String> = (0..t).map(|i| format!("t{i}")).collect();
    let cfg = FeaturizerConfig {
        dim: h,
        ..Default::default()
    };
    let model = MlcModel::from_parts(cfg, ids, weights.clone(), bias.clone()).unwrap();
    let x: Vec<f64> = (0..h)
        .map(|i| {
            if i % 2 == 0 {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let probs = mlc_forward(&x, &model).unwrap();
    let labels = [1usize, 3];
    let mut loss = 0.0;
    for j in 0..t {
        let z: f64 = bias[j] + (0..h).map(|i| x[i] * weights[i * t + j]).sum::<f64>();
        let p = 1.0 / (1.0 + (-z).exp());
        assert!((probs[j] - p).abs() < 1e-12);
        let y = if labels.contains(&j) { 1.0 } else { 0.0 };
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    loss /= t as f64;
    let sparse: Vec<(usize, f64)> = x
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect();
    let obj = MlcObjective::new(h, t, vec![(sparse, labels.to_vec())]);
    assert!((obj.loss(&model.params(), &[0]) - loss).abs() < 1e-12);
}

#[test]
#[allow(clippy::needless_range_loop)]
fn refiner_logit_matches_naive_mlp() {
    let model = RefinerModel::new(
        3,
        &RefinerConfig {
            hidden: vec![4, 2],
            ..Default::default()
        },
        21,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = random_unit(&mut rng, 3);
    let t = random_unit(&mut rng, 3);
    let root = 3f64.sqrt();
    let mut x: Vec<f64> = q.iter().map(|a| a * root).collect();
    x.extend(t.iter().map(|b| b * root));
    x.extend(q.iter().zip(&t).map(|(a, b)| a * b * 3.0));
    x.push(q.iter().zip(&t).map(|(a, b)| a * b).sum());
    let layers = model.layers();
    for (li, l) in layers.iter().enumerate() {
        let mut y = vec![0.0; l.out_dim];
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = l.bias[o];
            for i in 0..l.in_dim {
                *yo += l.weights[o * l.in_dim + i] * x[i];
            }
            if li + 1 < layers.len() {
                *yo = yo.tanh();
            }
        }
        x = y;
    }
    assert!((model.logit(&q, &t) - x[0]).abs() < 1e-14);
}

fn check(obj: &dyn Objective, params: &[f64]) {
    let report = grad_check(obj, params, &GradCheckConfig::default());
    assert!(report.passed, "max relative error {}", report.max_rel_error);
    assert!(report.max_rel_error < 1e-4);
}

#[test]
fn mlc_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, t) = (rng.gen_range(2..8), rng.gen_range(2..6));
        let examples = (0..rng.gen_range(1..6))
            .map(|_| {
                let mut feats = Vec::new();
                for i in 0..h {
                    if rng.gen_bool(0.6) {
                        feats.push((i, rng.gen_range(-1.0..1.0)));
                    }
                }
                let labels = (0..t).filter(|_| rng.gen_bool(0.4)).collect();
                (feats, labels)
            })
            .collect();
        let obj = MlcObjective::new(h, t, examples);
        let params: Vec<f64> = (0..obj.n_params())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        check(&obj, &params);
    }
}

#[test]
fn refiner_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.gen_range(2..5);
        let hidden = vec![rng.gen_range(2..5); rng.gen_range(1..3)];
        let cfg = RefinerConfig {
            hidden,
            init_scale: 0.5,
            ..Default::default()
        };
        let template = RefinerModel::new(dim, &cfg, seed).unwrap();
        let queries: Vec<Vec<f64>> = (0..3).map(|_| random_unit(&mut rng, dim)).collect();
        let tools: Vec<Vec<f64>> = (0..4).map(|_| random_unit(&mut rng, dim)).collect();
        let examples = (0..6)
            .map(|_| (rng.gen_range(0..3), rng.gen_range(0..4), rng.gen_bool(0.5)))
            .collect();
        let params = template.params();
        let obj = RefinerObjective::new(template, queries, tools, examples);
        check(&obj, &params);
    }
}

#[test]
fn triplet_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.gen_range(2..6);
        let triplets: Vec<_> = (0..rng.gen_range(1..5))
            .map(|_| {
                (
                    random_unit(&mut rng, dim),
                    random_unit(&mut rng, dim),
                    random_unit(&mut rng, dim),
                )
            })
            .collect();
        // a large margin keeps every triplet away from the hinge
        let obj = TripletObjective::from_triplets(dim, 5.0, &triplets);
        let params: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        check(&obj, &params);
    }
}

#[test]
fn pool_frequencies_are_uniform() {
    let tools: Vec<ToolRecord> = (0..40)
        .map(|i| ToolRecord::new(format!("t{i}"), format!("f{i}"), ""))
        .collect();
    let c = Corpus::new(
        tools,
        vec![QueryRecord::new("q", "x", ["t0"], Split::Train)],
    )
    .unwrap();
    let cfg = DatagenConfig {
        seed: 17,
        ..Default::default()
    };
    let rounds = 4000;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in 0..rounds {
        let pool = sample_pool(&c, &cfg, r).unwrap();
        assert_eq!(
            pool.iter()
                .map(|t| &t.tool_id)
                .collect::<HashSet<_>>()
                .len(),
            10
        );
        for t in pool {
            *counts.entry(t.tool_id.clone()).or_default() += 1;
        }
    }
    let p = 10.0 / 40.0;
    let expected = rounds as f64 * p;
    let sigma = (rounds as f64 * p * (1.0 - p)).sqrt();
    for (id, n) in &counts {
        assert!((*n as f64 - expected).abs() < 3.0 * sigma, "{id}: {n}");
    }
    // chi-square with 39 dof: mean 39, sd ~8.8
    let chi2: f64 = counts
        .values()
        .map(|n| (*n as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 39.0 + 4.0 * 78f64.sqrt(), "chi2 = {chi2}");
}
