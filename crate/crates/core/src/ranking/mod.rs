//! Entity ranking for textual queries, exact k-NN retrieval, TREC run files
//! and representation export.
//!
//! Rankings order entities by descending score with ties broken by
//! ascending entity name, so run files are reproducible.

mod knn;
mod trec;

use std::cmp::Ordering;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use knn::{KnnError, KnnIndex};
pub use trec::{format_score, write_trec_run, write_trec_run_to};

use crate::models::{
    forward_vector_space, get_representations, log_probabilities, ModelError, ModelKind, TrainedModel,
};
use crate::npy::{self, NpyArray, NpyData, NpyError};
use crate::staging::StagingDir;
use crate::vocabulary::tokenize;
use crate::{Scalar, WordId};

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("query {0:?}: empty query after encoding")]
    EmptyQuery(String),
    #[error("invalid query id {0:?}: must be non-empty and whitespace-free")]
    InvalidQueryId(String),
    #[error("invalid run id {0:?}: must be non-empty and whitespace-free")]
    InvalidRunId(String),
    #[error("entity name {0:?} contains whitespace")]
    WhitespaceInName(String),
    #[error("line {line}: {message}")]
    QueryParse { line: usize, message: String },
    #[error("k must be >= 1")]
    ZeroK,
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Npy(#[from] NpyError),
    #[error("{0} is not empty and does not hold an export; refusing to replace it")]
    NotAnExport(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RankingError + '_ {
    move |source| RankingError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Similarity between a query vector and entity vectors; higher is better.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    InnerProduct,
    Cosine,
    Euclidean,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::InnerProduct, Metric::Cosine, Metric::Euclidean];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::InnerProduct => "inner_product",
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }

    /// Inner product, cosine (0 when either side is zero), or negated
    /// Euclidean distance.
    pub fn similarity<S: Scalar>(self, query: ArrayView1<S>, entity: ArrayView1<S>) -> S {
        match self {
            Metric::InnerProduct => query.dot(&entity),
            Metric::Cosine => {
                let nq = query.dot(&query).sqrt();
                let ne = entity.dot(&entity).sqrt();
                if nq.is_zero() || ne.is_zero() {
                    S::zero()
                } else {
                    query.dot(&entity) / (nq * ne)
                }
            }
            Metric::Euclidean => -query
                .iter()
                .zip(entity)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<S>()
                .sqrt(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Metric, String> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric {s:?} (expected one of: inner_product, cosine, euclidean)"))
    }
}

/// Descending score, NaN last, then ascending name.
pub(crate) fn compare_ranked<S: Scalar>(a: S, a_name: &str, b: S, b_name: &str) -> Ordering {
    let by_score = match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => b.partial_cmp(&a).unwrap_or(Ordering::Equal),
    };
    by_score.then_with(|| a_name.cmp(b_name))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    id: String,
    text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Query, RankingError> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(RankingError::InvalidQueryId(id));
        }
        Ok(Query { id, text: text.into() })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Reads `query_id<TAB>text` lines. Blank lines and lines starting with `#`
/// are skipped.
pub fn read_queries<R: BufRead>(input: R) -> Result<Vec<Query>, RankingError> {
    let mut queries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| RankingError::QueryParse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| RankingError::QueryParse { line: line_no, message };
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected query_id<TAB>query text".into()))?;
        let query = Query::new(id, text).map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(query.id.clone()) {
            return Err(parse_err(format!("duplicate query id {id:?}")));
        }
        queries.push(query);
    }
    Ok(queries)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedEntity {
    pub entity: String,
    pub score: f64,
    /// Starts at 1.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntityRanking {
    pub query_id: String,
    pub entries: Vec<RankedEntity>,
}

/// Top `min(k, |E|)` entities by descending score, ties by ascending name.
pub fn rank<S: Scalar>(query_id: &str, scores: &[S], names: &[String], k: usize) -> Result<EntityRanking, RankingError> {
    if k == 0 {
        return Err(RankingError::ZeroK);
    }
    assert_eq!(scores.len(), names.len(), "one score per entity");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| compare_ranked(scores[a], &names[a], scores[b], &names[b]));
    order.truncate(k);
    Ok(EntityRanking {
        query_id: query_id.to_string(),
        entries: order
            .into_iter()
            .enumerate()
            .map(|(i, e)| RankedEntity {
                entity: names[e].clone(),
                score: scores[e].to_f64_lossy(),
                rank: i + 1,
            })
            .collect(),
    })
}

/// Tokenizes and encodes `text`, then cuts it into consecutive windows of
/// at most `window_size` ids. The last window may be short; the models
/// average only over real ids, which is what padding it would give.
pub fn query_windows<S>(model: &TrainedModel<S>, query: &Query) -> Result<Vec<Vec<WordId>>, RankingError> {
    let ids = model.vocab.encode(tokenize(&query.text));
    if ids.is_empty() {
        return Err(RankingError::EmptyQuery(query.id.clone()));
    }
    Ok(ids.chunks(model.manifest.window_size).map(<[WordId]>::to_vec).collect())
}

/// Mean of the projected query windows of a vector-space model.
pub fn query_vector<S: Scalar>(model: &TrainedModel<S>, query: &Query) -> Result<Array1<S>, RankingError> {
    let windows = query_windows(model, query)?;
    let mut sum = Array1::zeros(model.params.dim());
    for w in &windows {
        sum += &forward_vector_space(&model.params, w)?;
    }
    Ok(sum / S::from_usize_lossy(windows.len()))
}

/// Score of every entity for `query`: mean log-probability over query
/// windows for log-linear models; metric similarity between the mean
/// projected query vector and each entity vector for vector-space models.
pub fn score_all<S: Scalar>(model: &TrainedModel<S>, query: &Query, metric: Metric) -> Result<Array1<S>, RankingError> {
    match model.kind() {
        ModelKind::LogLinear => {
            let windows = query_windows(model, query)?;
            let mut sum = Array1::zeros(model.params.num_entities());
            for w in &windows {
                sum += &log_probabilities(&model.params, w)?;
            }
            Ok(sum / S::from_usize_lossy(windows.len()))
        }
        ModelKind::VectorSpace => {
            let q = query_vector(model, query)?;
            let entities = model.params.entity_vectors();
            Ok(entities.rows().into_iter().map(|e| metric.similarity(q.view(), e)).collect())
        }
    }
}

/// Ranks queries against one model: k-NN for vector-space models unless
/// forced exhaustive, exhaustive scoring for log-linear models.
pub struct EntityRanker<'m, S> {
    model: &'m TrainedModel<S>,
    metric: Metric,
    index: Option<KnnIndex<S>>,
}

impl<'m, S: Scalar> EntityRanker<'m, S> {
    pub fn new(model: &'m TrainedModel<S>, metric: Metric, force_exhaustive: bool) -> Result<Self, RankingError> {
        let index = match model.kind() {
            ModelKind::VectorSpace if !force_exhaustive => Some(KnnIndex::build(
                model.params.entity_vectors().clone(),
                model.entities.names().to_vec(),
                metric,
            )?),
            _ => None,
        };
        Ok(EntityRanker { model, metric, index })
    }

    pub fn uses_knn(&self) -> bool {
        self.index.is_some()
    }

    pub fn rank_query(&self, query: &Query, k: usize) -> Result<EntityRanking, RankingError> {
        if k == 0 {
            return Err(RankingError::ZeroK);
        }
        match &self.index {
            Some(index) => {
                let q = query_vector(self.model, query)?;
                Ok(index.knn_query(&query.id, q.view(), k)?)
            }
            None => {
                let scores = score_all(self.model, query, self.metric)?;
                rank(&query.id, scores.as_slice().expect("contiguous"), self.model.entities.names(), k)
            }
        }
    }
}

/// Writes every representation of `model` as `<name>.npy` plus a
/// `<name>.labels` file with one row label per line.
pub fn export_representations<S: Scalar>(model: &TrainedModel<S>, out_dir: &Path) -> Result<Vec<PathBuf>, RankingError> {
    if out_dir.exists() {
        for entry in std::fs::read_dir(out_dir).map_err(io_err(out_dir))? {
            let path = entry.map_err(io_err(out_dir))?.path();
            let ours = path.is_file() && matches!(path.extension().and_then(|e| e.to_str()), Some("npy" | "labels"));
            if !ours {
                return Err(RankingError::NotAnExport(out_dir.to_path_buf()));
            }
        }
    }
    let stage = StagingDir::new(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for (name, tensor) in get_representations(&model.params, &model.vocab, &model.entities) {
        let data = tensor.values.iter().map(|x| x.to_f64_lossy()).collect();
        let array = NpyArray::new(tensor.values.shape().to_vec(), NpyData::F64(data)).expect("shape matches data");
        npy::write_array(stage.file(&format!("{name}.npy")), &array)?;
        let labels_path = stage.file(&format!("{name}.labels"));
        let file = File::create(&labels_path).map_err(io_err(&labels_path))?;
        let mut out = BufWriter::new(file);
        tensor
            .labels
            .iter()
            .try_for_each(|l| writeln!(out, "{l}"))
            .and_then(|_| out.flush())
            .map_err(io_err(&labels_path))?;
        written.push(out_dir.join(format!("{name}.npy")));
        written.push(out_dir.join(format!("{name}.labels")));
    }
    stage.commit().map_err(io_err(out_dir))?;
    Ok(written)
}

#[cfg(test)]
mod tests;
