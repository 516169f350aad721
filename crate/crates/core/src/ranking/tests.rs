use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::extraction::EntityIndex;
use crate::models::{init_params, ModelConfig, ModelParams};
use crate::vocabulary::{FilterConfig, Vocabulary};

const WORDS: usize = 8;

fn config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        embedding_dim: 4,
        batch_size: 4,
        window_size: 3,
        epochs: 1,
        learning_rate: 0.1,
        negatives: 2,
        init_scale: 0.5,
        seed: 5,
    }
}

/// Words `w0..w7` get ids 0..7 and padding is 8.
fn model_with(params: ModelParams<f64>, kind: ModelKind, entities: usize) -> TrainedModel<f64> {
    let text: Vec<String> = (0..WORDS).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::build([("d", text.join(" "))], &FilterConfig::default(), true).unwrap();
    let names = EntityIndex::from_names((0..entities).map(|i| format!("e{i}")));
    TrainedModel::new(params, &config(kind), &[], vocab, names).unwrap()
}

fn random_model(kind: ModelKind, entities: usize, seed: u64) -> TrainedModel<f64> {
    let params = init_params(&config(kind), WORDS + 1, entities, Some(WORDS), seed).unwrap();
    model_with(params, kind, entities)
}

fn query(text: &str) -> Query {
    Query::new("q", text).unwrap()
}

#[test]
fn rank_examples() {
    let names: Vec<String> = ["e0", "e1", "e2"].map(String::from).to_vec();
    let r = rank("q", &[0.1, 0.9, 0.5], &names, 2).unwrap();
    let got: Vec<_> = r.entries.iter().map(|e| (e.entity.as_str(), e.score, e.rank)).collect();
    assert_eq!(got, [("e1", 0.9, 1), ("e2", 0.5, 2)]);

    let tied = rank("q", &[1.0, 1.0, 1.0], &["c", "a", "b"].map(String::from), 3).unwrap();
    assert_eq!(tied.entries.iter().map(|e| e.entity.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);

    assert_eq!(rank("q", &[0.1, 0.9, 0.5], &names, 10).unwrap().entries.len(), 3);
    assert!(matches!(rank("q", &[0.1], &names[..1], 0), Err(RankingError::ZeroK)));
}

#[test]
fn zero_log_linear_scores_uniform() {
    let params = ModelParams {
        word_embeddings: Array2::zeros((WORDS + 1, 4)),
        padding_id: Some(WORDS),
        head: crate::models::Head::LogLinear {
            entity_weights: Array2::zeros((5, 4)),
            entity_bias: Array1::zeros(5),
        },
    };
    let model = model_with(params, ModelKind::LogLinear, 5);
    let scores = score_all(&model, &query("w1 w2"), Metric::InnerProduct).unwrap();
    for s in scores {
        assert!((s - (1.0f64 / 5.0).ln()).abs() < 1e-15);
    }
}

#[test]
fn single_window_query_equals_forward_pass() {
    let ll = random_model(ModelKind::LogLinear, 4, 1);
    let scores = score_all(&ll, &query("w1 W2 w3"), Metric::Cosine).unwrap();
    assert_eq!(scores, log_probabilities(&ll.params, &[1, 2, 3]).unwrap());

    let vs = random_model(ModelKind::VectorSpace, 4, 2);
    let h = forward_vector_space(&vs.params, &[1, 2, 3]).unwrap();
    for metric in Metric::ALL {
        let scores = score_all(&vs, &query("w1 w2 w3"), metric).unwrap();
        let direct: Array1<f64> = vs.params.entity_vectors().rows().into_iter().map(|e| metric.similarity(h.view(), e)).collect();
        assert_eq!(scores, direct);
    }
}

#[test]
fn long_queries_average_windows() {
    let ll = random_model(ModelKind::LogLinear, 4, 3);
    let scores = score_all(&ll, &query("w0 w1 w2 w3 w4"), Metric::InnerProduct).unwrap();
    let a = log_probabilities(&ll.params, &[0, 1, 2]).unwrap();
    let b = log_probabilities(&ll.params, &[3, 4]).unwrap();
    let want = (a + b) / 2.0;
    assert!(scores.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-14));
}

#[test]
fn oov_only_query_is_an_error() {
    let ll = random_model(ModelKind::LogLinear, 3, 4);
    let err = score_all(&ll, &query("unknown words ..."), Metric::InnerProduct).unwrap_err();
    assert!(err.to_string().contains("empty query after encoding"));
    assert!(matches!(score_all(&ll, &query(""), Metric::InnerProduct), Err(RankingError::EmptyQuery(_))));
}

#[test]
fn knn_and_exhaustive_agree_for_vector_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..5 {
        let model = random_model(ModelKind::VectorSpace, 30, seed);
        for metric in Metric::ALL {
            let knn = EntityRanker::new(&model, metric, false).unwrap();
            let exhaustive = EntityRanker::new(&model, metric, true).unwrap();
            assert!(knn.uses_knn() && !exhaustive.uses_knn());
            for _ in 0..5 {
                let text: Vec<String> = (0..rng.random_range(1..7)).map(|_| format!("w{}", rng.random_range(0..WORDS))).collect();
                let q = query(&text.join(" "));
                for k in [1, 5, 30, 40] {
                    assert_eq!(knn.rank_query(&q, k).unwrap(), exhaustive.rank_query(&q, k).unwrap());
                }
            }
        }
    }
}

#[test]
fn log_linear_is_always_exhaustive() {
    let model = random_model(ModelKind::LogLinear, 3, 1);
    assert!(!EntityRanker::new(&model, Metric::Euclidean, false).unwrap().uses_knn());
}

#[test]
fn query_file_parsing() {
    let text = "# comment\nQ1\tfirst query\n\nQ2\tsecond\r\n";
    let qs = read_queries(text.as_bytes()).unwrap();
    assert_eq!(qs, [Query::new("Q1", "first query").unwrap(), Query::new("Q2", "second").unwrap()]);

    let err = read_queries("Q1\tok\nno tab here\n".as_bytes()).unwrap_err();
    assert!(matches!(err, RankingError::QueryParse { line: 2, .. }));
    assert!(read_queries("\tempty id\n".as_bytes()).is_err());
    assert!(read_queries("Q1\ta\nQ1\tb\n".as_bytes()).is_err());
}

#[test]
fn metric_names() {
    for m in Metric::ALL {
        assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
    }
    let err = "manhattan".parse::<Metric>().unwrap_err();
    assert!(err.contains("inner_product") && err.contains("cosine") && err.contains("euclidean"));
}

#[test]
fn metric_values() {
    let q = ndarray::arr1(&[3.0, 4.0]);
    let e = ndarray::arr1(&[0.0, 1.0]);
    assert_eq!(Metric::InnerProduct.similarity(q.view(), e.view()), 4.0);
    assert_eq!(Metric::Cosine.similarity(q.view(), e.view()), 0.8);
    assert_eq!(Metric::Euclidean.similarity(q.view(), e.view()), -(18.0f64).sqrt());
    assert_eq!(Metric::Cosine.similarity(Array1::zeros(2).view(), e.view()), 0.0);
}

#[test]
fn export_writes_aligned_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("export");
    let model = random_model(ModelKind::VectorSpace, 3, 6);
    export_representations(&model, &out).unwrap();
    let mut files: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(
        files,
        [
            "entity_representations.labels",
            "entity_representations.npy",
            "projection.labels",
            "projection.npy",
            "projection_bias.labels",
            "projection_bias.npy",
            "word_embeddings.labels",
            "word_embeddings.npy",
        ]
    );
    let reps = get_representations(&model.params, &model.vocab, &model.entities);
    let words = npy::read_array(out.join("word_embeddings.npy")).unwrap();
    assert_eq!(words.shape(), reps["word_embeddings"].values.shape());
    assert_eq!(words.as_f64().unwrap(), reps["word_embeddings"].values.as_slice().unwrap());
    let labels = std::fs::read_to_string(out.join("entity_representations.labels")).unwrap();
    assert_eq!(labels, "e0\ne1\ne2\n");

    // re-export over a previous export is fine; over unrelated files is not
    export_representations(&model, &out).unwrap();
    std::fs::write(dir.path().join("other.txt"), "x").unwrap();
    assert!(matches!(export_representations(&model, dir.path()), Err(RankingError::NotAnExport(_))));
}

mod props {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{:03}", (i * 37) % 1000)).collect()
    }

    proptest! {
        #[test]
        fn rank_is_a_strict_total_order(
            scores in prop::collection::vec(prop_oneof![(-3i32..3).prop_map(f64::from), -1e3f64..1e3], 1..40),
            k in 1usize..50,
        ) {
            let nm = names(scores.len());
            let r = rank("q", &scores, &nm, k).unwrap();
            prop_assert_eq!(r.entries.len(), k.min(scores.len()));
            for (i, e) in r.entries.iter().enumerate() {
                prop_assert_eq!(e.rank, i + 1);
            }
            for pair in r.entries.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                prop_assert!(a.score > b.score || (a.score == b.score && a.entity < b.entity));
            }
            // nothing left out scores better than the last kept entry
            let last = r.entries.last().unwrap();
            let kept: std::collections::HashSet<&str> = r.entries.iter().map(|e| e.entity.as_str()).collect();
            for (s, n) in scores.iter().zip(&nm) {
                if !kept.contains(n.as_str()) {
                    prop_assert!(*s < last.score || (*s == last.score && n > &last.entity));
                }
            }
        }

        #[test]
        fn run_files_round_trip_to_six_digits(
            raw in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 1..6), 1..5),
        ) {
            let rankings: Vec<EntityRanking> = raw
                .iter()
                .enumerate()
                .map(|(q, scores)| rank(&format!("Q{q}"), scores, &names(scores.len()), scores.len()).unwrap())
                .collect();
            let mut out = Vec::new();
            write_trec_run_to(&rankings, "run", &mut out).unwrap();
            let text = String::from_utf8(out).unwrap();
            let mut lines = text.lines();
            for r in &rankings {
                for e in &r.entries {
                    let fields: Vec<&str> = lines.next().unwrap().split(' ').collect();
                    prop_assert_eq!(fields.len(), 6);
                    prop_assert_eq!(fields[0], r.query_id.as_str());
                    prop_assert_eq!(fields[2], e.entity.as_str());
                    prop_assert_eq!(fields[3].parse::<usize>().unwrap(), e.rank);
                    let back: f64 = fields[4].parse().unwrap();
                    prop_assert!((back - e.score).abs() <= 5e-6 * e.score.abs() + 1e-300);
                }
            }
            prop_assert!(lines.next().is_none());
        }

        #[test]
        fn knn_equals_exhaustive(
            seed in any::<u64>(),
            n in 1usize..80,
            d in 1usize..8,
            k in 1usize..90,
            grid in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || if grid { f64::from(rng.random_range(-1i32..=1)) } else { rng.random_range(-1.0..1.0) };
            let mut v = Array2::from_shape_fn((n, d), |_| draw());
            v.column_mut(0).mapv_inplace(|x| if x == 0.0 { 0.5 } else { x });
            let q = Array1::from_shape_fn(d, |_| draw());
            let nm = names(n);
            for metric in Metric::ALL {
                let index = KnnIndex::build(v.clone(), nm.clone(), metric).unwrap();
                let scores: Vec<f64> = v.rows().into_iter().map(|e| metric.similarity(q.view(), e)).collect();
                let want = rank("q", &scores, &nm, k).unwrap();
                prop_assert_eq!(index.knn_query("q", q.view(), k).unwrap(), want);
            }
        }
    }
}
