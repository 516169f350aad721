//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N ... PASS|FAIL` line. Every oracle here is written
//! independently of the library code it checks.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use entrep::extraction::{
    extract_skipgrams, extract_windows, make_instances, resample_per_entity, weight_reciprocal_length,
    AssociationTable, EntityIndex, ExtractionConfig, SkipStats, TrainingInstance, Window,
};
use entrep::models::{
    forward_log_linear, forward_vector_space, gradients, init_params, log_probabilities, loss, Batch, Head,
    ModelConfig, ModelKind, ModelParams,
};
use entrep::npy::{self, NpyArray, NpyData};
use entrep::pipeline::{self, PrepareConfig, QueryConfig, TrainConfig};
use entrep::ranking::{read_queries, EntityRanker, KnnIndex, Metric};
use entrep::vocabulary::{tokenize, FilterConfig, Vocabulary};

fn report(n: usize, name: &str, pass: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let within = elapsed <= budget;
    let verdict = if pass && within { "PASS" } else { "FAIL" };
    println!(
        "criterion {n} {name}: {verdict} ({detail}; {:.2}s of {:.0}s budget)",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(within, "criterion {n} exceeded its runtime budget");
}

fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

// ---------------------------------------------------------------- 1

/// Every index tuple `(s, s+g, ..., s+(w-1)g)` with `g = skip+1` and `s` a
/// multiple of `stride`. A tuple fully inside the sequence is a full window.
/// With padding, the first scheduled tuple running past the end is kept,
/// truncated to its in-bounds indices, if it touches an index no full tuple
/// touched.
fn brute_force_windows(n: usize, w: usize, stride: usize, skip: usize, pad: bool) -> Vec<Vec<Option<usize>>> {
    let g = skip + 1;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut first_overflow = None;
    for s in (0..n).filter(|s| s % stride == 0) {
        let tuple: Vec<usize> = (0..w).map(|j| s + j * g).collect();
        if tuple.iter().all(|&p| p < n) {
            seen.extend(tuple.iter().copied());
            out.push(tuple.into_iter().map(Some).collect());
        } else if first_overflow.is_none() {
            first_overflow = Some(tuple);
        }
    }
    if pad {
        if let Some(tuple) = first_overflow {
            if tuple.iter().any(|&p| p < n && !seen.contains(&p)) {
                out.push(tuple.into_iter().map(|p| (p < n).then_some(p)).collect());
            }
        }
    }
    out
}

#[test]
fn criterion_1_extraction_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    const PAD: usize = 1_000_000;
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(0..=50);
        let seq: Vec<usize> = (0..n).map(|_| rng.random_range(0..40)).collect();
        let (w, stride, skip) = (rng.random_range(1..=5), rng.random_range(1..=4), rng.random_range(0..=3));
        let pad = rng.random_bool(0.5);
        let config = ExtractionConfig {
            window_size: w,
            stride,
            skip,
            pad_short_documents: pad,
        };
        let expected: Vec<Vec<usize>> = brute_force_windows(n, w, stride, skip, pad)
            .into_iter()
            .map(|t| t.into_iter().map(|p| p.map_or(PAD, |p| seq[p])).collect())
            .collect();
        let got = extract_skipgrams(&seq, &config, Some(PAD)).unwrap();
        let got: Vec<Vec<usize>> = got.iter().map(|w| w.ids().to_vec()).collect();
        if got != expected {
            mismatches += 1;
        }
        if skip == 0 {
            let plain: Vec<Vec<usize>> =
                extract_windows(&seq, &config, Some(PAD)).unwrap().iter().map(|w| w.ids().to_vec()).collect();
            if plain != expected {
                mismatches += 1;
            }
        }
    }
    report(
        1,
        "extraction oracle equivalence",
        mismatches == 0,
        start.elapsed(),
        Duration::from_secs(10),
        &format!("10000 configs, {mismatches} mismatches"),
    );
}

// ---------------------------------------------------------------- 2

fn small_config(kind: ModelKind, d: usize) -> ModelConfig {
    ModelConfig {
        kind,
        embedding_dim: d,
        batch_size: 4,
        window_size: 1,
        epochs: 1,
        learning_rate: 0.1,
        negatives: 3,
        init_scale: 1.0,
        seed: 0,
    }
}

fn random_instance(kind: ModelKind, rng: &mut ChaCha8Rng) -> (ModelParams<f64>, Batch<f64>) {
    let d = rng.random_range(1..=8);
    let v = rng.random_range(2..=20);
    let e = rng.random_range(2..=5);
    let w = rng.random_range(1..=4);
    let n = rng.random_range(1..=4);
    let mut params: ModelParams<f64> = init_params(&small_config(kind, d), v, e, Some(v - 1), rng.random()).unwrap();
    match &mut params.head {
        Head::LogLinear { entity_bias, .. } => entity_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0)),
        Head::VectorSpace { projection_bias, .. } => projection_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0)),
    }
    let windows = Array2::from_shape_fn((n, w), |_| rng.random_range(0..v));
    let entities = (0..n).map(|_| rng.random_range(0..e)).collect();
    let weights = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
    (params, Batch::new(windows, entities, weights).unwrap())
}

/// Central differences over every parameter.
fn finite_differences(params: &ModelParams<f64>, batch: &Batch<f64>, negatives: usize, seed: u64) -> Vec<Vec<f64>> {
    const STEP: f64 = 1e-6;
    let mut probe = params.clone();
    let lens: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    let mut out = Vec::new();
    for (t, &len) in lens.iter().enumerate() {
        let mut grad = vec![0.0; len];
        for (k, g) in grad.iter_mut().enumerate() {
            let orig = probe.tensors_mut()[t].1[k];
            probe.tensors_mut()[t].1[k] = orig + STEP;
            let up = loss(&probe, batch, negatives, seed).unwrap();
            probe.tensors_mut()[t].1[k] = orig - STEP;
            let down = loss(&probe, batch, negatives, seed).unwrap();
            probe.tensors_mut()[t].1[k] = orig;
            *g = (up - down) / (2.0 * STEP);
        }
        out.push(grad);
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for kind in [ModelKind::LogLinear, ModelKind::VectorSpace] {
        for _ in 0..100 {
            let (params, batch) = random_instance(kind, &mut rng);
            let seed = rng.random();
            let (_, analytic) = gradients(&params, &batch, 3, seed).unwrap();
            let numeric = finite_differences(&params, &batch, 3, seed);
            for ((_, a), n) in analytic.tensors().iter().zip(&numeric) {
                let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
                let scale = norm(a).max(norm(n));
                let err = if scale > 0.0 { norm(&diff) / scale } else { norm(&diff) };
                worst = worst.max(err);
            }
            cases += 1;
        }
    }
    report(
        2,
        "gradient correctness",
        worst <= 1e-5,
        start.elapsed(),
        Duration::from_secs(30),
        &format!("{cases} instances, worst relative error {worst:.2e}"),
    );
}

// ---------------------------------------------------------------- 3

/// Full scan: every entity scored, sorted by score descending then name.
fn brute_top_k(vectors: &Array2<f64>, names: &[String], metric: Metric, q: &Array1<f64>, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> =
        (0..vectors.nrows()).map(|i| (i, metric.similarity(q.view(), vectors.row(i)))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| names[a.0].cmp(&names[b.0])));
    all.truncate(k);
    all
}

fn reference_similarity(metric: Metric, q: &Array1<f64>, e: ndarray::ArrayView1<f64>) -> f64 {
    let dot: f64 = q.iter().zip(e).map(|(a, b)| a * b).sum();
    match metric {
        Metric::InnerProduct => dot,
        Metric::Cosine => {
            let (nq, ne) = (norm(q.as_slice().unwrap()), e.iter().map(|x| x * x).sum::<f64>().sqrt());
            if nq == 0.0 || ne == 0.0 {
                0.0
            } else {
                dot / (nq * ne)
            }
        }
        Metric::Euclidean => -q.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
    }
}

#[test]
fn criterion_3_knn_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut per_metric = BTreeMap::new();
    let mut failures = 0;
    let mut metric_drift: f64 = 0.0;
    for metric in Metric::ALL {
        let mut queries = 0;
        for instance in 0..25 {
            let n = rng.random_range(1..=500);
            let d = rng.random_range(1..=64);
            // every fifth instance uses a coarse integer grid with duplicates, to force ties
            let coarse = instance % 5 == 0;
            let mut vectors = Array2::from_shape_fn((n, d), |_| {
                if coarse {
                    rng.random_range(-2..=2) as f64
                } else {
                    rng.random_range(-1.0..1.0)
                }
            });
            if metric == Metric::Cosine {
                for mut row in vectors.rows_mut() {
                    if row.iter().all(|&x| x == 0.0) {
                        row[0] = 1.0;
                    }
                }
            }
            if coarse && n > 1 {
                let dup = vectors.row(0).to_owned();
                vectors.row_mut(n - 1).assign(&dup);
            }
            let names: Vec<String> = (0..n).map(|i| format!("ent{:04}", (i * 7919) % 10_000)).collect();
            let index = KnnIndex::build(vectors.clone(), names.clone(), metric).unwrap();
            for _ in 0..45 {
                let q = Array1::from_shape_fn(d, |_| {
                    if coarse {
                        rng.random_range(-2..=2) as f64
                    } else {
                        rng.random_range(-1.5..1.5)
                    }
                });
                let k = rng.random_range(1..=n.min(50) + 2);
                let got = index.query(q.view(), k).unwrap();
                let want = brute_top_k(&vectors, &names, metric, &q, k);
                if got != want {
                    failures += 1;
                }
                for &(i, s) in &want {
                    let r = reference_similarity(metric, &q, vectors.row(i));
                    metric_drift = metric_drift.max((r - s).abs() / (1.0 + r.abs()));
                }
                queries += 1;
            }
        }
        per_metric.insert(metric.as_str(), queries);
    }
    let enough = per_metric.values().all(|&q| q >= 1000);
    report(
        3,
        "k-NN exactness",
        failures == 0 && enough && metric_drift < 1e-12,
        start.elapsed(),
        Duration::from_secs(30),
        &format!("queries per metric {per_metric:?}, {failures} mismatches, metric drift {metric_drift:.1e}"),
    );
}

// ---------------------------------------------------------------- 4

fn random_npy(rng: &mut ChaCha8Rng) -> NpyArray {
    let dims = rng.random_range(1..=3);
    let shape: Vec<usize> = (0..dims).map(|_| rng.random_range(1..=7)).collect();
    let len: usize = shape.iter().product();
    let data = if rng.random_bool(0.5) {
        NpyData::I64((0..len).map(|_| rng.random::<i64>()).collect())
    } else {
        let specials = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY, -0.0, f64::MIN_POSITIVE, f64::MAX, 5e-324];
        NpyData::F64(
            (0..len)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        specials[rng.random_range(0..specials.len())]
                    } else {
                        f64::from_bits(rng.random::<u64>())
                    }
                })
                .collect(),
        )
    };
    NpyArray::new(shape, data).unwrap()
}

fn bits(data: &NpyData) -> Vec<u64> {
    match data {
        NpyData::I64(v) => v.iter().map(|&x| x as u64).collect(),
        NpyData::F64(v) => v.iter().map(|x| x.to_bits()).collect(),
    }
}

#[test]
fn criterion_4_npy_interoperability() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dir = tempfile::tempdir().unwrap();
    let mut round_trip_failures = 0;
    let mut reader_failures = 0;
    for i in 0..100 {
        let array = random_npy(&mut rng);
        let path = dir.path().join(format!("a{i}.npy"));
        npy::write_array(&path, &array).unwrap();
        let back = npy::read_array(&path).unwrap();
        if back.shape() != array.shape() || bits(back.data()) != bits(array.data()) {
            round_trip_failures += 1;
        }
        // independent reader
        let file = npyz::NpyFile::new(BufReader::new(File::open(&path).unwrap())).unwrap();
        let shape: Vec<usize> = file.shape().iter().map(|&d| d as usize).collect();
        let c_order = file.order() == npyz::Order::C;
        let ok = match array.data() {
            NpyData::I64(v) => file.into_vec::<i64>().map(|got| &got == v).unwrap_or(false),
            NpyData::F64(v) => file
                .into_vec::<f64>()
                .map(|got| got.iter().map(|x| x.to_bits()).eq(v.iter().map(|x| x.to_bits())))
                .unwrap_or(false),
        };
        if !(ok && c_order && shape == array.shape()) {
            reader_failures += 1;
        }
    }
    report(
        4,
        "NPY interoperability",
        round_trip_failures == 0 && reader_failures == 0,
        start.elapsed(),
        Duration::from_secs(5),
        &format!("100 arrays, {round_trip_failures} round-trip and {reader_failures} third-party reader failures"),
    );
}

// ---------------------------------------------------------------- 5

fn hits_at_one(model_dir: &Path, knn: bool) -> (usize, usize, bool) {
    let model = entrep::models::load_model::<f64>(model_dir).unwrap();
    let queries = read_queries(BufReader::new(File::open(toy_dir().join("queries.tsv")).unwrap())).unwrap();
    let ranker = EntityRanker::new(&model, Metric::InnerProduct, !knn).unwrap();
    let hits = queries
        .iter()
        .filter(|q| {
            let expected = format!("entity{}", q.id().trim_start_matches('q'));
            ranker.rank_query(q, 1).unwrap().entries[0].entity == expected
        })
        .count();
    (hits, queries.len(), ranker.uses_knn())
}

#[test]
fn criterion_5_toy_retrieval_convergence() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let toy = toy_dir();
    pipeline::prepare(&toy.join("corpus.tsv"), &toy.join("associations.tsv"), &data, &PrepareConfig::default()).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for (kind, knn, needed) in [(ModelKind::LogLinear, false, 0.95), (ModelKind::VectorSpace, true, 0.90)] {
        let config = TrainConfig {
            kind,
            embedding_dim: 16,
            epochs: 50,
            ..TrainConfig::default()
        };
        let model_dir = dir.path().join(kind.as_str());
        let losses = pipeline::train_stage(&data, &model_dir, &config).unwrap();
        let ratio = losses[losses.len() - 1] / losses[0];
        let (hits, total, used_knn) = hits_at_one(&model_dir, knn);
        let rate = hits as f64 / total as f64;
        let ok = used_knn == knn && rate >= needed && (kind != ModelKind::LogLinear || ratio < 0.5);
        pass &= ok;
        details.push(format!(
            "{}: loss ratio {ratio:.4}, {hits}/{total} first{}",
            kind.as_str(),
            if knn { " via k-NN" } else { "" }
        ));
    }
    report(
        5,
        "toy retrieval convergence",
        pass,
        start.elapsed(),
        Duration::from_secs(120),
        &details.join("; "),
    );
}

// ---------------------------------------------------------------- 6

fn instance(doc: &str, entity: usize, marker: usize) -> TrainingInstance {
    TrainingInstance {
        window: Window::full(vec![marker, entity]),
        entity,
        weight: 1.0,
        source_doc: Arc::from(doc),
    }
}

#[test]
fn criterion_6_resampling_balance() {
    let start = Instant::now();
    let entities = EntityIndex::from_names((0..8).map(|i| format!("e{i}")));
    // entity i has (i + 1)^2 instances, each with a distinct marker
    let mut instances = Vec::new();
    let mut marker = 0;
    for e in 0..8 {
        for _ in 0..(e + 1) * (e + 1) {
            instances.push(instance(&format!("doc{marker}"), e, marker));
            marker += 1;
        }
    }
    let mut pass = true;
    let mut detail = Vec::new();
    for target in [None, Some(5), Some(200)] {
        let a = resample_per_entity(&instances, &entities, target, 42).unwrap();
        let b = resample_per_entity(&instances, &entities, target, 42).unwrap();
        let want = target.unwrap_or(64);
        let mut counts = vec![0; 8];
        for i in &a {
            counts[i.entity] += 1;
        }
        let balanced = counts.iter().all(|&c| c == want);
        // every drawn instance must exist in the input with the same entity
        let genuine = a.iter().all(|i| {
            instances
                .iter()
                .any(|o| o.window == i.window && o.entity == i.entity && o.source_doc == i.source_doc)
        });
        pass &= balanced && genuine && a == b && a.iter().all(|i| i.weight == 1.0);
        detail.push(format!("target {want}: counts {counts:?}"));
    }
    report(
        6,
        "resampling balance",
        pass,
        start.elapsed(),
        Duration::from_secs(5),
        &detail.join("; "),
    );
}

// ---------------------------------------------------------------- 7

/// Lowercase and strip leading/trailing non-alphanumerics; empty pieces vanish.
fn reference_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|p| p.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[test]
fn criterion_7_reciprocal_weights() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let words = ["alpha", "Beta", "gamma,", "delta.", "(eps)", "zeta", "eta!", "theta", "--", "iota"];
    let docs: Vec<(String, String)> = (0..300)
        .map(|i| {
            let len = rng.random_range(0..40);
            let text: Vec<&str> = (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
            (format!("d{i}"), text.join(" "))
        })
        .collect();
    let filter = FilterConfig {
        min_collection_frequency: 3,
        max_document_frequency_fraction: 0.95,
        ..FilterConfig::default()
    };
    let vocab = Vocabulary::build(docs.iter().map(|(d, t)| (d.as_str(), t.as_str())), &filter, true).unwrap();
    let assoc = AssociationTable::from_pairs(docs.iter().enumerate().flat_map(|(i, (d, _))| {
        let mut pairs = vec![(d.clone(), format!("e{}", i % 7))];
        if i % 3 == 0 {
            pairs.push((d.clone(), format!("e{}", (i + 1) % 7)));
        }
        pairs
    }));
    let config = ExtractionConfig {
        window_size: 3,
        stride: 2,
        skip: 1,
        pad_short_documents: true,
    };
    let mut lengths = HashMap::new();
    let mut instances = Vec::new();
    let mut stats = SkipStats::default();
    for (d, text) in &docs {
        let ids = vocab.encode(tokenize(text));
        lengths.insert(d.clone(), ids.len());
        let windows = extract_skipgrams(&ids, &config, vocab.padding_id()).unwrap();
        instances.extend(make_instances(d, &windows, &assoc, &mut stats));
    }
    weight_reciprocal_length(&mut instances, &lengths).unwrap();

    // lengths recomputed from the raw text and the vocabulary's token list
    let in_vocab: HashSet<&str> = vocab.tokens().iter().map(String::as_str).collect();
    let oracle: HashMap<&str, usize> = docs
        .iter()
        .map(|(d, t)| (d.as_str(), reference_tokens(t).iter().filter(|t| in_vocab.contains(t.as_str())).count()))
        .collect();
    let wrong = instances
        .iter()
        .filter(|i| i.weight != 1.0 / oracle[&*i.source_doc] as f64)
        .count();
    report(
        7,
        "weighting identity",
        wrong == 0 && !instances.is_empty(),
        start.elapsed(),
        Duration::from_secs(5),
        &format!("{} instances, {wrong} with weight != 1/len", instances.len()),
    );
}

// ---------------------------------------------------------------- 8

#[derive(Debug)]
struct RunLine {
    query: String,
    entity: String,
    rank: usize,
    score: f64,
    run_id: String,
}

/// Strict six-column run parser: single spaces, LF endings, literal `Q0`,
/// integer ranks starting at 1 and consecutive per query, finite scores
/// non-increasing with rank, one run id, no duplicate entities per query.
fn parse_trec_run(text: &str) -> Result<Vec<RunLine>, String> {
    if text.contains('\r') {
        return Err("CR found".into());
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err("missing final LF".into());
    }
    let mut lines = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 6 || fields.iter().any(|f| f.is_empty() || f.contains('\t')) {
            return Err(format!("line {}: expected 6 single-space separated fields", no + 1));
        }
        if fields[1] != "Q0" {
            return Err(format!("line {}: second field must be Q0", no + 1));
        }
        let rank: usize = fields[3].parse().map_err(|_| format!("line {}: bad rank", no + 1))?;
        let score: f64 = fields[4].parse().map_err(|_| format!("line {}: bad score", no + 1))?;
        if !score.is_finite() {
            return Err(format!("line {}: non-finite score", no + 1));
        }
        lines.push(RunLine {
            query: fields[0].into(),
            entity: fields[2].into(),
            rank,
            score,
            run_id: fields[5].into(),
        });
    }
    let mut finished = HashSet::new();
    for (i, l) in lines.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| &lines[p]).filter(|p| p.query == l.query);
        match prev {
            Some(p) => {
                if l.rank != p.rank + 1 || l.score > p.score {
                    return Err(format!("line {}: rank/score order broken", i + 1));
                }
            }
            None => {
                if l.rank != 1 || !finished.insert(l.query.clone()) {
                    return Err(format!("line {}: query block must start at rank 1 and be contiguous", i + 1));
                }
            }
        }
        if l.run_id != lines[0].run_id {
            return Err("mixed run ids".into());
        }
    }
    let mut pairs = HashSet::new();
    if !lines.iter().all(|l| pairs.insert((l.query.clone(), l.entity.clone()))) {
        return Err("duplicate entity in a query".into());
    }
    Ok(lines)
}

fn end_to_end(root: &Path) -> Vec<u8> {
    let toy = toy_dir();
    let prepare = PrepareConfig {
        resample: true,
        resample_target: Some(60),
        seed: 11,
        ..PrepareConfig::default()
    };
    pipeline::prepare(&toy.join("corpus.tsv"), &toy.join("associations.tsv"), &root.join("data"), &prepare).unwrap();
    let train = TrainConfig {
        kind: ModelKind::VectorSpace,
        embedding_dim: 8,
        epochs: 5,
        seed: 11,
        ..TrainConfig::default()
    };
    pipeline::train_stage(&root.join("data"), &root.join("model"), &train).unwrap();
    let query = QueryConfig {
        k: 7,
        metric: Metric::Cosine,
        run_id: "acceptance".into(),
        ..QueryConfig::default()
    };
    pipeline::query_stage(&root.join("model"), &toy.join("queries.tsv"), &root.join("run.txt"), &query).unwrap();
    std::fs::read(root.join("run.txt")).unwrap()
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = end_to_end(a.path());
    let second = end_to_end(b.path());
    let identical = first == second;
    let parsed = parse_trec_run(&String::from_utf8(first).unwrap());
    let detail = match &parsed {
        Ok(lines) => format!("byte-identical: {identical}, {} lines parsed", lines.len()),
        Err(e) => format!("byte-identical: {identical}, parse error: {e}"),
    };
    let complete = parsed.as_ref().is_ok_and(|l| l.len() == 20 * 7 && l.iter().all(|l| l.run_id == "acceptance"));
    report(
        8,
        "end-to-end determinism",
        identical && complete,
        start.elapsed(),
        Duration::from_secs(120),
        &detail,
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_invariance_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = 200;
    let mut simplex: f64 = 0.0;
    let mut shift_failures = 0;
    let mut scaling: f64 = 0.0;
    let mut padding_failures = 0;
    for _ in 0..draws {
        // softmax simplex and logit shift
        let (mut params, batch) = random_instance(ModelKind::LogLinear, &mut rng);
        let window = batch.window(0).to_vec();
        let p = forward_log_linear(&params, &window).unwrap();
        simplex = simplex.max((p.sum() - 1.0).abs());
        let before = log_probabilities(&params, &window).unwrap();
        let argmax = |v: &Array1<f64>| {
            v.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0
        };
        let c = rng.random_range(-50.0..50.0);
        if let Head::LogLinear { entity_bias, .. } = &mut params.head {
            *entity_bias += c;
        }
        let after = log_probabilities(&params, &window).unwrap();
        if argmax(&before) != argmax(&after) {
            shift_failures += 1;
        }

        // uniform weight scaling, both models
        for kind in [ModelKind::LogLinear, ModelKind::VectorSpace] {
            let (params, batch) = random_instance(kind, &mut rng);
            let seed = rng.random();
            let factor = rng.random_range(0.01..100.0);
            let scaled = batch.with_weights((0..batch.len()).map(|i| batch.weight(i) * factor).collect()).unwrap();
            let (l1, g1) = gradients(&params, &batch, 2, seed).unwrap();
            let (l2, g2) = gradients(&params, &scaled, 2, seed).unwrap();
            scaling = scaling.max((l1 - l2).abs() / l1.abs().max(1.0));
            for ((_, a), (_, b)) in g1.tensors().iter().zip(g2.tensors().iter()) {
                for (x, y) in a.iter().zip(b.iter()) {
                    scaling = scaling.max((x - y).abs() / x.abs().max(1.0));
                }
            }

            // padding neutrality: appending padding or changing the padding row changes nothing
            let mut params = params;
            let pad = params.padding_id.unwrap();
            let real: Vec<usize> = batch.window(0).iter().copied().filter(|&w| w != pad).collect();
            if real.is_empty() {
                continue;
            }
            let mut padded = real.clone();
            padded.extend(std::iter::repeat_n(pad, rng.random_range(1..4)));
            let forward = |p: &ModelParams<f64>, w: &[usize]| match kind {
                ModelKind::LogLinear => forward_log_linear(p, w).unwrap(),
                ModelKind::VectorSpace => forward_vector_space(p, w).unwrap(),
            };
            let plain = forward(&params, &real);
            let with_pad = forward(&params, &padded);
            params.word_embeddings.row_mut(pad).mapv_inplace(|_| rng.random_range(-5.0..5.0));
            let junk_row = forward(&params, &padded);
            if plain != with_pad || plain != junk_row {
                padding_failures += 1;
            }
        }
    }
    report(
        9,
        "invariance suite",
        simplex <= 1e-12 && shift_failures == 0 && scaling <= 1e-12 && padding_failures == 0,
        start.elapsed(),
        Duration::from_secs(10),
        &format!(
            "{draws} draws each: simplex dev {simplex:.1e}, shift failures {shift_failures}, \
             scaling dev {scaling:.1e}, padding failures {padding_failures}"
        ),
    );
}
