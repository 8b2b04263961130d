use crate::args::*;
use crate::manifest::Manifest;
use crate::{ensure_dir, CliError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;
use std::path::{Path, PathBuf};
use toolret::corpus::{load_corpus, load_tools, split_train_val, Corpus, Split};
use toolret::datagen::{
    default_generation_examples, export_dataset, judge_pairs, run_generation, DatagenConfig,
    HttpChatClient, HttpClientConfig, InContextExample, LlmClient, MockClient, Prompts,
};
use toolret::embed::{
    build_description_embeddings, build_tool2vec, embed_queries, finetune_projection,
    EmbeddingMatrix, EmbeddingProvider, Featurizer, FeaturizerConfig, PrecomputedVectors,
    Projection, TripletConfig, TripletObjective,
};
use toolret::eval::{
    evaluate, failed_query_lengths, failure_rates, similarity_gap, vectors_csv, EvalConfig,
    GapConfig,
};
use toolret::refine::{
    retrieve_two_stage, train_refiner, Artifacts, PipelineConfig, RefinerConfig, RefinerModel,
    RefinerObjective,
};
use toolret::retrieve::{cosine_topn, train_mlc, Method, MlcModel, MlcObjective, RetrievalResult};
use toolret::train::{grad_check, GradCheckConfig, Objective, TrainConfig};

const FEATURIZER_FILE: &str = "featurizer.json";

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::BuildEmbeddings(a) => build_embeddings(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Retrieve(a) => retrieve(cli, a),
        Command::Evaluate(a) => evaluate_cmd(cli, a),
        Command::GenDataset(a) => gen_dataset(cli, a),
        Command::GradCheck(a) => grad_check_cmd(cli, a),
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write(path, &text)
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|r| serde_json::to_string(r).expect("value serializes") + "\n")
        .collect()
}

fn load_corpus_args(a: &CorpusArgs, manifest: &mut Manifest) -> Result<Corpus, CliError> {
    let corpus = load_corpus(&a.tools, &a.queries)?;
    manifest.input(&a.tools)?;
    manifest.input(&a.queries)?;
    Ok(corpus)
}

fn featurizer_config(a: &FeaturizerArgs) -> FeaturizerConfig {
    FeaturizerConfig {
        dim: a.dim,
        ngram_min: a.ngram_min,
        ngram_max: a.ngram_max,
        lowercase: !a.no_lowercase,
    }
}

fn parse_splits(names: &[String]) -> Result<Vec<Split>, CliError> {
    names
        .iter()
        .map(|s| {
            s.parse::<Split>()
                .map_err(|e| CliError::Validation(e.to_string()))
        })
        .collect()
}

fn build_embeddings(cli: &Cli, a: &BuildEmbeddingsArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("build-embeddings", cli);
    let corpus = load_corpus_args(&a.corpus, &mut manifest)?;
    let splits = parse_splits(&a.tool2vec_splits)?;
    let out = &cli.out_dir;
    ensure_dir(out)?;

    let featurizer;
    let precomputed;
    let provider: &dyn EmbeddingProvider = match &a.precomputed {
        Some(path) => {
            precomputed = PrecomputedVectors::load(path)?;
            manifest.input(path)?;
            // a stale featurizer would make text queries use the wrong space
            let _ = std::fs::remove_file(out.join(FEATURIZER_FILE));
            &precomputed
        }
        None => {
            featurizer = Featurizer::new(featurizer_config(&a.featurizer))?;
            let path = out.join(FEATURIZER_FILE);
            write_json(&path, featurizer.config())?;
            manifest.output(&path)?;
            &featurizer
        }
    };

    let queries = embed_queries(&corpus, provider)?;
    let (descriptions, desc_cov) = build_description_embeddings(&corpus, provider)?;
    let (tool2vec, t2v_cov) = build_tool2vec(&corpus, &queries, &splits)?;
    for (name, m) in [
        ("query.jsonl", &queries),
        ("tool2vec.jsonl", &tool2vec),
        ("description.jsonl", &descriptions),
    ] {
        let path = out.join(name);
        m.save(&path)?;
        manifest.output(&path)?;
    }
    let coverage = out.join("coverage.json");
    write_json(
        &coverage,
        &json!({"queries": queries.len(), "tool2vec": t2v_cov, "description": desc_cov}),
    )?;
    manifest.output(&coverage)?;
    manifest.write(out)?;
    log::info!(
        "embedded {} queries; {} Tool2Vec rows, {} tools uncovered",
        queries.len(),
        t2v_cov.rows,
        t2v_cov.uncovered.len()
    );
    Ok(())
}

fn require_embeddings(a: &ArtifactArgs) -> Result<&Path, CliError> {
    a.embeddings
        .as_deref()
        .ok_or_else(|| CliError::Validation("--embeddings <DIR> is required".into()))
}

fn load_featurizer(dir: &Path) -> Result<Option<Featurizer>, CliError> {
    let path = dir.join(FEATURIZER_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let cfg: FeaturizerConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(Some(Featurizer::new(cfg)?))
}

fn load_matrix(
    dir: &Path,
    name: &str,
    manifest: &mut Manifest,
) -> Result<EmbeddingMatrix, CliError> {
    let path = dir.join(name);
    let m = EmbeddingMatrix::load(&path)?;
    manifest.input(&path)?;
    Ok(m)
}

fn load_projection(
    a: &ArtifactArgs,
    manifest: &mut Manifest,
) -> Result<Option<Projection>, CliError> {
    a.projection
        .as_deref()
        .map(|p| {
            manifest.input(p)?;
            Ok(Projection::load(p)?)
        })
        .transpose()
}

/// Loads everything `a` points at into pipeline artifacts.
fn load_artifacts(a: &ArtifactArgs, manifest: &mut Manifest) -> Result<Artifacts, CliError> {
    let dir = require_embeddings(a)?;
    let featurizer = load_featurizer(dir)?.ok_or_else(|| {
        CliError::Validation(format!(
            "{} has no {FEATURIZER_FILE}; embeddings built from precomputed vectors cannot embed query text",
            dir.display()
        ))
    })?;
    let mut art = Artifacts::new(featurizer, load_matrix(dir, "tool2vec.jsonl", manifest)?);
    if dir.join("description.jsonl").exists() {
        art = art.with_descriptions(load_matrix(dir, "description.jsonl", manifest)?);
    }
    if let Some(p) = &a.mlc {
        manifest.input(p)?;
        art = art.with_mlc(MlcModel::load(p)?);
    }
    if let Some(p) = &a.refiner {
        manifest.input(p)?;
        art = art.with_refiner(RefinerModel::load(p)?);
    }
    if let Some(p) = load_projection(a, manifest)? {
        art = art.with_projection(p)?;
    }
    Ok(art)
}

fn with_val_split(corpus: Corpus, ratio: f64, seed: u64) -> Result<Corpus, CliError> {
    if corpus.queries_in(&[Split::Val]).next().is_some() {
        return Ok(corpus);
    }
    log::info!(
        "no val split in corpus; holding out {:.0}% of train",
        100.0 * (1.0 - ratio)
    );
    Ok(split_train_val(&corpus, ratio, seed)?)
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("train", cli);
    let corpus = load_corpus_args(&a.corpus, &mut manifest)?;
    let corpus = with_val_split(corpus, a.train_ratio, cli.seed)?;
    let out = &cli.out_dir;
    ensure_dir(out)?;
    let train_cfg = |lr: f64, epochs: usize, batch: usize| TrainConfig {
        learning_rate: a.learning_rate.unwrap_or(lr),
        epochs: a.epochs.unwrap_or(epochs),
        batch_size: a.batch_size.unwrap_or(batch),
        l2: a.l2,
        seed: cli.seed,
    };

    let (artifact, report) = match a.model {
        ModelKind::Mlc => {
            let featurizer = match a
                .artifacts
                .embeddings
                .as_deref()
                .map(load_featurizer)
                .transpose()?
                .flatten()
            {
                Some(f) => f,
                None => Featurizer::new(featurizer_config(&a.featurizer))?,
            };
            let cfg = train_cfg(100.0, 40, 32);
            let (model, report) = train_mlc(&corpus, &featurizer, &cfg)?;
            let path = out.join("mlc.jsonl");
            model.save(&path, &cfg)?;
            (path, report)
        }
        ModelKind::Projection => {
            let dir = require_embeddings(&a.artifacts)?;
            let queries = load_matrix(dir, "query.jsonl", &mut manifest)?;
            let tool2vec = load_matrix(dir, "tool2vec.jsonl", &mut manifest)?;
            let base = train_cfg(0.05, 1, 16);
            let cfg = TripletConfig {
                margin: a.margin,
                epochs: base.epochs,
                learning_rate: base.learning_rate,
                batch_size: base.batch_size,
                seed: cli.seed,
            };
            let (proj, report) = finetune_projection(&corpus, &queries, &tool2vec, &cfg)?;
            let path = out.join("projection.jsonl");
            proj.save(&path, &cfg)?;
            (path, report)
        }
        ModelKind::Refiner => {
            let artifacts = load_artifacts(&a.artifacts, &mut manifest)?;
            let dir = require_embeddings(&a.artifacts)?;
            let mut queries = load_matrix(dir, "query.jsonl", &mut manifest)?;
            if let Some(p) = load_projection(&a.artifacts, &mut manifest)? {
                queries = p.project_matrix(&queries)?;
            }
            let cfg = train_cfg(0.02, 15, 32);
            let refiner_cfg = RefinerConfig {
                hidden: a.hidden.clone(),
                init: a.init.into(),
                init_scale: a.init_scale,
            };
            let stage1 =
                |q: &toolret::QueryRecord| artifacts.stage1(&q.query_id, &q.text, a.stage1, a.n);
            let (model, report, stats) = train_refiner(
                &corpus,
                &queries,
                &artifacts.tool2vec,
                stage1,
                &cfg,
                &refiner_cfg,
            )?;
            let path = out.join("refiner.jsonl");
            model.save(&path, &cfg, a.n)?;
            let stats_path = out.join("refiner_stats.json");
            write_json(&stats_path, &stats)?;
            manifest.output(&stats_path)?;
            (path, report)
        }
    };
    manifest.output(&artifact)?;
    let loss = out.join("loss.csv");
    write(&loss, &report.to_csv())?;
    manifest.output(&loss)?;
    manifest.write(out)?;
    if let Some(last) = report.epochs.last() {
        log::info!(
            "final train loss {:.6} after {} epochs",
            last.train_loss,
            report.epochs.len()
        );
    }
    Ok(())
}

fn pipeline_config(p: &PipelineArgs, k: usize) -> Result<PipelineConfig, CliError> {
    let cfg = PipelineConfig {
        stage1_method: p.method,
        n: p.n,
        k,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run_query(
    query_id: &str,
    text: &str,
    artifacts: &Artifacts,
    cfg: &PipelineConfig,
    stage1_only: bool,
) -> Result<RetrievalResult, CliError> {
    if artifacts.refiner.is_some() && !stage1_only {
        Ok(retrieve_two_stage(query_id, text, artifacts, cfg)?)
    } else {
        Ok(artifacts
            .stage1(query_id, text, cfg.stage1_method, cfg.n)?
            .truncated(cfg.k))
    }
}

#[derive(Deserialize)]
struct QueryLine {
    query_id: Option<String>,
    text: String,
}

fn read_query_lines(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match serde_json::from_str::<QueryLine>(l) {
            Ok(q) => (
                q.query_id.unwrap_or_else(|| format!("line-{}", i + 1)),
                q.text,
            ),
            Err(_) => (format!("line-{}", i + 1), l.trim().to_owned()),
        })
        .collect())
}

fn retrieve(cli: &Cli, a: &RetrieveArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("retrieve", cli);
    let cfg = pipeline_config(&a.pipeline, a.k)?;
    let artifacts = load_artifacts(&a.artifacts, &mut manifest)?;
    let queries = match (&a.query, &a.queries_file) {
        (Some(q), _) => vec![("query".to_owned(), q.clone())],
        (None, Some(path)) => {
            manifest.input(path)?;
            read_query_lines(path)?
        }
        (None, None) => {
            return Err(CliError::Validation(
                "give --query or --queries-file".into(),
            ))
        }
    };
    let results = queries
        .iter()
        .map(|(id, text)| run_query(id, text, &artifacts, &cfg, a.pipeline.stage1_only))
        .collect::<Result<Vec<_>, _>>()?;
    let lines = jsonl(&results);
    print!("{lines}");
    ensure_dir(&cli.out_dir)?;
    let path = cli.out_dir.join("results.jsonl");
    write(&path, &lines)?;
    manifest.output(&path)?;
    manifest.write(&cli.out_dir)
}

fn read_results(path: &Path) -> Result<Vec<RetrievalResult>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn evaluate_cmd(cli: &Cli, a: &EvaluateArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("evaluate", cli);
    let corpus = load_corpus_args(&a.corpus, &mut manifest)?;
    let split: Split = a.split.parse().map_err(CliError::Validation)?;
    let eval_cfg = EvalConfig { ks: a.ks.clone() };
    eval_cfg.validate()?;
    let split_queries: Vec<_> = corpus.queries_in(&[split]).cloned().collect();
    if split_queries.is_empty() {
        return Err(CliError::Validation(format!(
            "corpus has no {split} queries"
        )));
    }
    let out = &cli.out_dir;
    ensure_dir(out)?;

    let mut gap_matrices: Option<(EmbeddingMatrix, EmbeddingMatrix)> = None;
    let results = if let Some(path) = &a.results {
        manifest.input(path)?;
        read_results(path)?
    } else {
        let k_max = *eval_cfg.ks.last().expect("validated non-empty");
        let dir = require_embeddings(&a.artifacts)?;
        let cosine = matches!(a.pipeline.method, Method::Tool2vec | Method::Description);
        if load_featurizer(dir)?.is_none() {
            if !cosine || a.artifacts.refiner.is_some() || a.artifacts.projection.is_some() {
                return Err(CliError::Validation(
                    "embeddings built from precomputed vectors support only stage-1 cosine evaluation".into(),
                ));
            }
            let queries = load_matrix(dir, "query.jsonl", &mut manifest)?;
            let name = if a.pipeline.method == Method::Tool2vec {
                "tool2vec.jsonl"
            } else {
                "description.jsonl"
            };
            let tools = load_matrix(dir, name, &mut manifest)?;
            let results = split_queries
                .iter()
                .map(|q| {
                    let row = queries.row(&q.query_id).ok_or_else(|| {
                        CliError::Validation(format!("no stored vector for `{}`", q.query_id))
                    })?;
                    Ok(cosine_topn(
                        &q.query_id,
                        row,
                        &tools,
                        a.pipeline.n,
                        a.pipeline.method,
                    )?)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            gap_matrices = Some((queries, tools));
            results
        } else {
            let cfg = pipeline_config(&a.pipeline, k_max)?;
            let artifacts = load_artifacts(&a.artifacts, &mut manifest)?;
            let results = split_queries
                .iter()
                .map(|q| {
                    run_query(
                        &q.query_id,
                        &q.text,
                        &artifacts,
                        &cfg,
                        a.pipeline.stage1_only,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            if cosine {
                let mut queries = EmbeddingMatrix::new(
                    artifacts.tool2vec.dim(),
                    toolret::MatrixKind::Query,
                    true,
                );
                for q in &split_queries {
                    queries.push(q.query_id.clone(), &artifacts.query_vector(&q.text))?;
                }
                let tools = if a.pipeline.method == Method::Tool2vec {
                    Some(artifacts.tool2vec.clone())
                } else {
                    artifacts.descriptions.clone()
                };
                gap_matrices = tools.map(|t| (queries, t));
            }
            results
        }
    };

    let report = evaluate(&results, &corpus, &eval_cfg)?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut emit = |name: &str, contents: String| -> Result<(), CliError> {
        let path = out.join(name);
        write(&path, &contents)?;
        outputs.push(path);
        Ok(())
    };
    emit("results.jsonl", jsonl(&results))?;
    emit(
        "eval.json",
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )?;
    emit("eval.csv", report.to_csv())?;
    emit("per_query.csv", report.per_query_csv())?;
    let failures = failure_rates(&results, &corpus, a.failure_k)?;
    emit("failures.csv", failures.to_csv())?;
    let summary = json!({"k": failures.k, "mean": failures.mean, "std": failures.std, "tools": failures.tools.len()});
    emit(
        "failures.json",
        serde_json::to_string_pretty(&summary).expect("json") + "\n",
    )?;
    let lengths = failed_query_lengths(&results, &corpus, a.failure_k)?;
    emit(
        "failed_lengths.json",
        serde_json::to_string_pretty(&lengths).expect("json") + "\n",
    )?;
    if let Some((queries, tools)) = &gap_matrices {
        let split_corpus = Corpus::new(corpus.tools().to_vec(), split_queries.clone())?;
        let gap_cfg = GapConfig {
            negative_cap: a.gap_negatives,
            seed: cli.seed,
        };
        let gap = similarity_gap(queries, tools, &split_corpus, &gap_cfg)?;
        emit("similarity_gap.csv", gap.to_csv())?;
        let stats = json!({"positive": gap.positive, "negative": gap.negative});
        emit(
            "similarity_gap.json",
            serde_json::to_string_pretty(&stats).expect("json") + "\n",
        )?;
        if a.export_vectors {
            emit("vectors.csv", vectors_csv(&[queries, tools]))?;
        }
    }
    for p in &outputs {
        manifest.output(p)?;
    }
    manifest.write(out)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn llm_client(a: &LlmArgs, manifest: &mut Manifest) -> Result<Box<dyn LlmClient>, CliError> {
    match (&a.mock, &a.endpoint) {
        (Some(path), _) => {
            manifest.input(path)?;
            Ok(Box::new(MockClient::load(path)?))
        }
        (None, Some(endpoint)) => Ok(Box::new(HttpChatClient::new(HttpClientConfig {
            endpoint: endpoint.clone(),
            model: a.model.clone(),
            api_key_env: a.api_key_env.clone(),
            timeout_secs: a.timeout_secs,
            temperature: a.temperature,
        })?)),
        (None, None) => Err(CliError::Validation(
            "give --mock <FIXTURE> or --endpoint <URL>".into(),
        )),
    }
}

fn gen_dataset(cli: &Cli, a: &GenDatasetArgs) -> Result<(), CliError> {
    let mut manifest = Manifest::new("gen-dataset", cli);
    let catalog = Corpus::new(load_tools(&a.tools)?, Vec::new())?;
    manifest.input(&a.tools)?;
    let client = llm_client(&a.llm, &mut manifest)?;
    let examples: Vec<InContextExample> = match &a.examples {
        Some(path) => {
            manifest.input(path)?;
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        }
        None => default_generation_examples(),
    };
    let cfg = DatagenConfig {
        t_pool: a.t_pool,
        m_min: a.m_min,
        m_max: a.m_max,
        n_incontext: a.n_incontext,
        seed: cli.seed,
        rounds: a.rounds,
        library_specific_instructions: a.library_instructions.clone(),
        request_cap: a.request_cap,
    };
    let prompts = Prompts::default();
    let run = run_generation(
        &catalog,
        &examples,
        client.as_ref(),
        &cfg,
        &prompts,
        !a.no_polish,
    )?;
    if run.accepted.is_empty()
        && !run.rejected.is_empty()
        && run.rejected.iter().all(|r| r.kind == "transport")
    {
        return Err(CliError::External(format!(
            "every generation request failed; first error: {}",
            run.rejected[0].reason
        )));
    }

    let out = &cli.out_dir;
    ensure_dir(out)?;
    let (tools_path, queries_path) = (out.join("tools.jsonl"), out.join("queries.jsonl"));
    let exported = export_dataset(&catalog, &run.accepted, &tools_path, &queries_path)?;
    let log_path = out.join("generation_log.jsonl");
    write(&log_path, &run.log_jsonl())?;
    for p in [&tools_path, &queries_path, &log_path] {
        manifest.output(p)?;
    }
    if let Some(reference) = &a.judge_against {
        let reference_corpus = load_corpus(&a.tools, reference)?;
        manifest.input(reference)?;
        let generated: Vec<&str> = exported.queries().iter().map(|q| q.text.as_str()).collect();
        let baseline: Vec<&str> = reference_corpus
            .queries()
            .iter()
            .map(|q| q.text.as_str())
            .collect();
        if generated.is_empty() || baseline.is_empty() {
            log::warn!("skipping judging: one of the query sets is empty");
        } else {
            let counts = judge_pairs(
                &generated,
                &baseline,
                client.as_ref(),
                a.judge_samples,
                cli.seed,
                &prompts,
            )?;
            let path = out.join("judge.json");
            write_json(&path, &counts)?;
            manifest.output(&path)?;
        }
    }
    manifest.write(out)?;
    log::info!(
        "{} queries accepted, {} rejected",
        run.accepted.len(),
        run.rejected.len()
    );
    Ok(())
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn random_objective(
    kind: ObjectiveKind,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> (Box<dyn Objective>, Vec<f64>) {
    match kind {
        ObjectiveKind::Mlc => {
            let (h, t) = (rng.gen_range(2..10), rng.gen_range(2..8));
            let examples = (0..rng.gen_range(1..6))
                .map(|_| {
                    let mut feats = Vec::new();
                    for i in 0..h {
                        if rng.gen_bool(0.5) {
                            feats.push((i, rng.gen_range(-1.0..1.0)));
                        }
                    }
                    let labels = (0..t).filter(|_| rng.gen_bool(0.3)).collect();
                    (feats, labels)
                })
                .collect();
            let obj = MlcObjective::new(h, t, examples);
            let params = random_vec(rng, obj.n_params(), 1.0);
            (Box::new(obj), params)
        }
        ObjectiveKind::Refiner => {
            let dim = rng.gen_range(2..6);
            let cfg = RefinerConfig {
                hidden: vec![rng.gen_range(2..6)],
                init_scale: 0.5,
                ..Default::default()
            };
            let template = RefinerModel::new(dim, &cfg, seed).expect("valid refiner config");
            let queries = (0..3).map(|_| random_vec(rng, dim, 1.0)).collect();
            let tools = (0..5).map(|_| random_vec(rng, dim, 1.0)).collect();
            let examples = (0..8)
                .map(|_| (rng.gen_range(0..3), rng.gen_range(0..5), rng.gen_bool(0.4)))
                .collect();
            let params = template.params();
            (
                Box::new(RefinerObjective::new(template, queries, tools, examples)),
                params,
            )
        }
        ObjectiveKind::Triplet | ObjectiveKind::All => {
            let dim = rng.gen_range(2..6);
            let triplets: Vec<_> = (0..rng.gen_range(1..6))
                .map(|_| {
                    (
                        random_vec(rng, dim, 1.0),
                        random_vec(rng, dim, 1.0),
                        random_vec(rng, dim, 1.0),
                    )
                })
                .collect();
            let obj = TripletObjective::from_triplets(dim, 10.0, &triplets);
            let params = random_vec(rng, dim * dim, 1.0);
            (Box::new(obj), params)
        }
    }
}

fn grad_check_cmd(cli: &Cli, a: &GradCheckArgs) -> Result<(), CliError> {
    let manifest_cfg = Manifest::new("grad-check", cli);
    let kinds = match a.objective {
        ObjectiveKind::All => vec![
            ObjectiveKind::Mlc,
            ObjectiveKind::Refiner,
            ObjectiveKind::Triplet,
        ],
        k => vec![k],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for kind in kinds {
        let mut worst = 0.0f64;
        for i in 0..a.instances {
            let (obj, params) = random_objective(kind, &mut rng, cli.seed.wrapping_add(i as u64));
            let cfg = GradCheckConfig {
                step: a.step,
                tolerance: a.tolerance,
                seed: cli.seed,
                ..Default::default()
            };
            let report = grad_check(obj.as_ref(), &params, &cfg);
            worst = worst.max(report.max_rel_error);
            if !report.passed {
                failed.push(format!(
                    "{kind:?} instance {i}: {:.3e}",
                    report.max_rel_error
                ));
            }
        }
        let row = json!({"objective": kind, "instances": a.instances, "max_rel_error": worst, "passed": worst < a.tolerance});
        println!("{row}");
        rows.push(row);
    }
    let out = &cli.out_dir;
    ensure_dir(out)?;
    let path = out.join("grad_check.json");
    write_json(&path, &rows)?;
    let mut manifest = manifest_cfg;
    manifest.output(&path)?;
    manifest.write(out)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: {}",
            failed.join("; ")
        )))
    }
}
