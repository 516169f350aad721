//! The three stages end to end: prepare a dataset from text files, train a
//! model on it, and rank entities for a query file.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, Manifest, PackageInfo, WeightingScheme};
use crate::extraction::{
    extract_skipgrams, extract_windows, make_instances, resample_per_entity, weight_reciprocal_length,
    AssociationTable, ExtractionConfig, ExtractionError, SkipStats,
};
use crate::models::{self, ModelConfig, ModelError, ModelKind, StoreError};
use crate::ranking::{self, EntityRanker, Metric, RankingError};
use crate::vocabulary::{tokenize, FilterConfig, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    InvalidConfig(String),
    #[error("{}:{line}: {message}", path.display())]
    Corpus { path: PathBuf, line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

impl PipelineError {
    /// Errors caused by the arguments rather than by the data.
    pub fn is_usage_error(&self) -> bool {
        matches!(
            self,
            PipelineError::InvalidConfig(_)
                | PipelineError::Vocab(VocabError::InvalidConfig(_))
                | PipelineError::Extraction(ExtractionError::InvalidConfig(_))
                | PipelineError::Model(ModelError::InvalidConfig(_) | ModelError::WindowSizeMismatch { .. })
                | PipelineError::Ranking(RankingError::ZeroK | RankingError::InvalidRunId(_))
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    None,
    Reciprocal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub filter: FilterConfig,
    pub extraction: ExtractionConfig,
    pub weighting: Weighting,
    /// Resample every entity to the same instance count.
    pub resample: bool,
    /// Instances per entity; defaults to the largest per-entity count.
    pub resample_target: Option<usize>,
    pub seed: u64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            filter: FilterConfig::default(),
            extraction: ExtractionConfig {
                window_size: 4,
                stride: 1,
                skip: 0,
                pad_short_documents: true,
            },
            weighting: Weighting::None,
            resample: false,
            resample_target: None,
            seed: 0,
        }
    }
}

impl PrepareConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.filter.validate()?;
        self.extraction.validate()?;
        if self.weighting == Weighting::Reciprocal && self.resample {
            return Err(PipelineError::InvalidConfig(
                "reciprocal weighting and resampling are mutually exclusive".into(),
            ));
        }
        if self.resample_target.is_some() && !self.resample {
            return Err(PipelineError::InvalidConfig("resample_target given without resampling".into()));
        }
        if self.resample_target == Some(0) {
            return Err(PipelineError::InvalidConfig("resample target must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub embedding_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Checked against the dataset; taken from it when absent.
    pub window_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::LogLinear,
            embedding_dim: 32,
            batch_size: 64,
            epochs: 10,
            learning_rate: 0.1,
            negatives: 5,
            init_scale: 0.1,
            seed: 0,
            window_size: None,
        }
    }
}

impl TrainConfig {
    /// The model config for a dataset with the given window size.
    pub fn model_config(&self, dataset_window_size: usize) -> Result<ModelConfig, PipelineError> {
        if let Some(w) = self.window_size.filter(|&w| w != dataset_window_size) {
            return Err(ModelError::WindowSizeMismatch {
                config: w,
                manifest: dataset_window_size,
            }
            .into());
        }
        let config = ModelConfig {
            kind: self.kind,
            embedding_dim: self.embedding_dim,
            batch_size: self.batch_size,
            window_size: dataset_window_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            negatives: self.negatives,
            init_scale: self.init_scale,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub k: usize,
    pub metric: Metric,
    pub run_id: String,
    pub force_exhaustive: bool,
    pub export_representations: Option<PathBuf>,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            k: 100,
            metric: Metric::InnerProduct,
            run_id: "entrep".into(),
            force_exhaustive: false,
            export_representations: None,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(RankingError::ZeroK.into());
        }
        if self.run_id.is_empty() || self.run_id.chars().any(char::is_whitespace) {
            return Err(RankingError::InvalidRunId(self.run_id.clone()).into());
        }
        Ok(())
    }
}

/// Settings for all three stages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub prepare: PrepareConfig,
    pub train: TrainConfig,
    pub query: QueryConfig,
}

impl PipelineConfig {
    /// Validates each stage and their agreement with each other.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.prepare.validate()?;
        self.train.model_config(self.prepare.extraction.window_size)?;
        self.query.validate()
    }
}

/// Reads `doc_id<TAB>text` lines; blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<(String, String)>, PipelineError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let err = |message: String| PipelineError::Corpus {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| err("expected doc_id<TAB>text".into()))?;
        if id.is_empty() {
            return Err(err("empty document id".into()));
        }
        if !seen.insert(id.to_string()) {
            return Err(err(format!("duplicate document id {id:?}")));
        }
        docs.push((id.to_string(), text.to_string()));
    }
    Ok(docs)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrepareSummary {
    pub documents: usize,
    pub skipped_documents: usize,
    pub instances: usize,
    pub vocabulary_size: usize,
    pub entities: usize,
}

impl PrepareSummary {
    pub fn key_values(&self) -> Vec<String> {
        vec![
            format!("documents={}", self.documents),
            format!("skipped_documents={}", self.skipped_documents),
            format!("instances={}", self.instances),
            format!("vocabulary_size={}", self.vocabulary_size),
            format!("entities={}", self.entities),
        ]
    }
}

/// Builds the vocabulary over the whole corpus, extracts and weights
/// instances, and packages them into `output`.
pub fn prepare(
    corpus: &Path,
    associations: &Path,
    output: &Path,
    config: &PrepareConfig,
) -> Result<(Manifest, PrepareSummary), PipelineError> {
    config.validate()?;
    let docs = read_corpus(corpus)?;
    let assoc = AssociationTable::read_from(open(associations)?)?;
    let vocab = Vocabulary::build(
        docs.iter().map(|(id, text)| (id.as_str(), text.as_str())),
        &config.filter,
        config.extraction.pad_short_documents,
    )?;
    let extract = if config.extraction.skip == 0 {
        extract_windows
    } else {
        extract_skipgrams
    };
    let mut stats = SkipStats::default();
    let mut instances = Vec::new();
    let mut lengths = HashMap::new();
    for (id, text) in &docs {
        let ids = vocab.encode(tokenize(text));
        let windows = extract(&ids, &config.extraction, vocab.padding_id())?;
        instances.extend(make_instances(id, &windows, &assoc, &mut stats));
        lengths.insert(id.clone(), ids.len());
    }
    let entities = assoc.entity_index();
    let (scheme, instances) = match (config.weighting, config.resample) {
        (Weighting::Reciprocal, _) => {
            weight_reciprocal_length(&mut instances, &lengths)?;
            (WeightingScheme::ReciprocalDocLength, instances)
        }
        (Weighting::None, true) => (
            WeightingScheme::Resampled,
            resample_per_entity(&instances, entities, config.resample_target, config.seed)?,
        ),
        (Weighting::None, false) => (WeightingScheme::None, instances),
    };
    let info = PackageInfo {
        extraction: config.extraction.clone(),
        weighting_scheme: scheme,
        resample_target: config.resample_target,
        seed: config.seed,
        documents: docs.len(),
        skipped_documents: stats.skipped_documents,
    };
    let manifest = dataset::package(&instances, &vocab, entities, &info, output)?;
    let summary = PrepareSummary {
        documents: docs.len(),
        skipped_documents: stats.skipped_documents,
        instances: instances.len(),
        vocabulary_size: vocab.len(),
        entities: entities.len(),
    };
    Ok((manifest, summary))
}

/// Trains on the dataset in `data` and saves the model to `output`.
/// Returns the per-epoch losses.
pub fn train_stage(data: &Path, output: &Path, config: &TrainConfig) -> Result<Vec<f64>, PipelineError> {
    let manifest = dataset::read_manifest(data)?;
    let model_config = config.model_config(manifest.window_size)?;
    let dataset = dataset::load_dataset(data)?;
    let report = models::train::<f64>(&dataset, &model_config)?;
    models::save_model(
        output,
        &report.params,
        &model_config,
        &report.epoch_losses,
        dataset.vocab(),
        dataset.entity_index(),
    )?;
    Ok(report.epoch_losses)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuerySummary {
    pub queries: usize,
    pub ranked: usize,
    /// One diagnostic per query that was skipped.
    pub diagnostics: Vec<String>,
    pub used_knn: bool,
}

impl QuerySummary {
    pub fn key_values(&self) -> Vec<String> {
        vec![
            format!("queries={}", self.queries),
            format!("ranked={}", self.ranked),
            format!("skipped_queries={}", self.diagnostics.len()),
            format!("search={}", if self.used_knn { "knn" } else { "exhaustive" }),
        ]
    }
}

/// Ranks every query of `queries` against the model in `model_dir` and
/// writes a run file to `output`. Queries with no in-vocabulary token are
/// reported and skipped.
pub fn query_stage(
    model_dir: &Path,
    queries: &Path,
    output: &Path,
    config: &QueryConfig,
) -> Result<QuerySummary, PipelineError> {
    config.validate()?;
    let model = models::load_model::<f64>(model_dir)?;
    let queries = ranking::read_queries(open(queries)?).map_err(|e| match e {
        RankingError::QueryParse { line, message } => PipelineError::Corpus {
            path: queries.to_path_buf(),
            line,
            message,
        },
        other => other.into(),
    })?;
    let ranker = EntityRanker::new(&model, config.metric, config.force_exhaustive)?;
    let mut rankings = Vec::new();
    let mut diagnostics = Vec::new();
    for query in &queries {
        match ranker.rank_query(query, config.k) {
            Ok(r) => rankings.push(r),
            Err(e @ RankingError::EmptyQuery(_)) => diagnostics.push(e.to_string()),
            Err(e) => return Err(e.into()),
        }
    }
    ranking::write_trec_run(&rankings, &config.run_id, output)?;
    if let Some(dir) = &config.export_representations {
        ranking::export_representations(&model, dir)?;
    }
    Ok(QuerySummary {
        queries: queries.len(),
        ranked: rankings.len(),
        diagnostics,
        used_knn: ranker.uses_knn(),
    })
}
