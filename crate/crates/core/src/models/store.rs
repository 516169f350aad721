//! Model directories: one NPY file per tensor plus `model.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayD, Ix1, Ix2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{get_representations, Head, ModelConfig, ModelKind, ModelParams};
use crate::dataset::{to_sorted_json, ENTITIES_FILE, VOCABULARY_FILE};
use crate::extraction::{EntityIndex, ExtractionError};
use crate::npy::{self, NpyArray, NpyError};
use crate::staging::StagingDir;
use crate::vocabulary::{FilterConfig, VocabError, Vocabulary};
use crate::{Scalar, WordId};

pub const MODEL_MANIFEST_FILE: &str = "model.json";
const FULL_WORD_EMBEDDINGS: &str = "word_embeddings.full";
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Npy(#[from] NpyError),
    #[error("{}: bad model manifest: {source}", path.display())]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("vocabulary: {0}")]
    Vocab(#[from] VocabError),
    #[error("entities: {0}")]
    Entities(#[from] ExtractionError),
    #[error("inconsistent model directory: {0}")]
    Inconsistent(String),
    #[error("{} exists and is not a model directory, refusing to overwrite", .0.display())]
    NotAModel(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub embedding_dim: usize,
    pub window_size: usize,
    pub seed: u64,
    pub epoch_losses: Vec<f64>,
    pub config: ModelConfig,
    pub padding_id: Option<WordId>,
    pub vocabulary_file: String,
    pub entities_file: String,
    /// Filter the vocabulary was built with.
    pub filter: FilterConfig,
    /// Tensor name to NPY file name.
    pub tensors: BTreeMap<String, String>,
}

/// Parameters together with the indices needed to interpret them.
#[derive(Clone, Debug)]
pub struct TrainedModel<S> {
    pub params: ModelParams<S>,
    pub vocab: Vocabulary,
    pub entities: EntityIndex,
    pub manifest: ModelManifest,
}

impl<S: Scalar> TrainedModel<S> {
    /// Assembles an in-memory model with the manifest [`save_model`] would write.
    pub fn new(
        params: ModelParams<S>,
        config: &ModelConfig,
        epoch_losses: &[S],
        vocab: Vocabulary,
        entities: EntityIndex,
    ) -> Result<TrainedModel<S>, StoreError> {
        if vocab.len() != params.vocab_size() || entities.len() != params.num_entities() {
            return Err(StoreError::Inconsistent("parameter shapes do not match vocabulary/entities".into()));
        }
        let mut tensors: BTreeMap<String, String> = get_representations(&params, &vocab, &entities)
            .into_keys()
            .map(|name| (name.to_string(), format!("{name}.npy")))
            .collect();
        tensors.insert(FULL_WORD_EMBEDDINGS.to_string(), format!("{FULL_WORD_EMBEDDINGS}.npy"));
        let manifest = build_manifest(&params, config, epoch_losses, &vocab, tensors);
        Ok(TrainedModel {
            params,
            vocab,
            entities,
            manifest,
        })
    }

    pub fn window_size(&self) -> usize {
        self.manifest.window_size
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }
}

pub(crate) fn to_npy<S: Scalar>(values: &ArrayD<S>) -> NpyArray {
    let data = values.iter().map(|x| x.to_f64_lossy()).collect();
    NpyArray::new(values.shape().to_vec(), npy::NpyData::F64(data)).expect("non-empty tensor")
}

fn from_npy<S: Scalar>(array: &NpyArray, name: &str) -> Result<ArrayD<S>, StoreError> {
    let data = array
        .as_f64()
        .ok_or_else(|| StoreError::Inconsistent(format!("{name} must be <f8")))?;
    let values = data.iter().map(|&x| S::from_f64_lossy(x)).collect();
    ArrayD::from_shape_vec(array.shape().to_vec(), values).map_err(|e| StoreError::Inconsistent(e.to_string()))
}

fn write_text(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), StoreError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write(&mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

fn build_manifest<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    epoch_losses: &[S],
    vocab: &Vocabulary,
    tensors: BTreeMap<String, String>,
) -> ModelManifest {
    ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        model_kind: params.kind(),
        embedding_dim: params.dim(),
        window_size: config.window_size,
        seed: config.seed,
        epoch_losses: epoch_losses.iter().map(|l| l.to_f64_lossy()).collect(),
        config: config.clone(),
        padding_id: params.padding_id,
        vocabulary_file: VOCABULARY_FILE.to_string(),
        entities_file: ENTITIES_FILE.to_string(),
        filter: vocab.filter_config().clone(),
        tensors,
    }
}

/// Writes `dir` atomically. The bytes depend only on the arguments.
pub fn save_model<S: Scalar>(
    dir: &Path,
    params: &ModelParams<S>,
    config: &ModelConfig,
    epoch_losses: &[S],
    vocab: &Vocabulary,
    entities: &EntityIndex,
) -> Result<ModelManifest, StoreError> {
    if dir.exists() && !dir.join(MODEL_MANIFEST_FILE).exists() && fs::read_dir(dir).map_err(io_err(dir))?.next().is_some() {
        return Err(StoreError::NotAModel(dir.to_path_buf()));
    }
    if vocab.len() != params.vocab_size() || entities.len() != params.num_entities() {
        return Err(StoreError::Inconsistent("parameter shapes do not match vocabulary/entities".into()));
    }
    let stage = StagingDir::new(dir).map_err(io_err(dir))?;
    let mut tensors = BTreeMap::new();
    for (name, tensor) in get_representations(params, vocab, entities) {
        let file = format!("{name}.npy");
        npy::write_array(stage.file(&file), &to_npy(&tensor.values))?;
        tensors.insert(name.to_string(), file);
    }
    let full = format!("{FULL_WORD_EMBEDDINGS}.npy");
    npy::write_array(stage.file(&full), &to_npy(&params.word_embeddings.clone().into_dyn()))?;
    tensors.insert(FULL_WORD_EMBEDDINGS.to_string(), full);

    write_text(&stage.file(VOCABULARY_FILE), |w| vocab.write_to(w))?;
    write_text(&stage.file(ENTITIES_FILE), |w| entities.write_to(w))?;
    let manifest = build_manifest(params, config, epoch_losses, vocab, tensors);
    let text = to_sorted_json(&manifest);
    write_text(&stage.file(MODEL_MANIFEST_FILE), |w| w.write_all(text.as_bytes()))?;
    stage.commit().map_err(io_err(dir))?;
    Ok(manifest)
}

pub fn load_model<S: Scalar>(dir: &Path) -> Result<TrainedModel<S>, StoreError> {
    let manifest_path = dir.join(MODEL_MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|source| StoreError::Manifest { path: manifest_path, source })?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(StoreError::Inconsistent(format!(
            "unsupported model format_version {}",
            manifest.format_version
        )));
    }
    let vocab_path = dir.join(&manifest.vocabulary_file);
    let vocab = Vocabulary::read_from(
        BufReader::new(File::open(&vocab_path).map_err(io_err(&vocab_path))?),
        manifest.filter.clone(),
    )?;
    let entities_path = dir.join(&manifest.entities_file);
    let entities = EntityIndex::read_from(BufReader::new(File::open(&entities_path).map_err(io_err(&entities_path))?))?;

    let tensor = |name: &str| -> Result<ArrayD<S>, StoreError> {
        let file = manifest
            .tensors
            .get(name)
            .ok_or_else(|| StoreError::Inconsistent(format!("model.json lists no {name} tensor")))?;
        from_npy(&npy::read_array(dir.join(file))?, name)
    };
    let matrix = |name: &str| -> Result<Array2<S>, StoreError> {
        tensor(name)?
            .into_dimensionality::<Ix2>()
            .map_err(|_| StoreError::Inconsistent(format!("{name} must be a matrix")))
    };
    let vector = |name: &str| -> Result<Array1<S>, StoreError> {
        tensor(name)?
            .into_dimensionality::<Ix1>()
            .map_err(|_| StoreError::Inconsistent(format!("{name} must be a vector")))
    };

    let word_embeddings = matrix(FULL_WORD_EMBEDDINGS)?;
    let head = match manifest.model_kind {
        ModelKind::LogLinear => Head::LogLinear {
            entity_weights: matrix("entity_representations")?,
            entity_bias: vector("entity_bias")?,
        },
        ModelKind::VectorSpace => Head::VectorSpace {
            entity_embeddings: matrix("entity_representations")?,
            projection: matrix("projection")?,
            projection_bias: vector("projection_bias")?,
        },
    };
    let params = ModelParams {
        word_embeddings,
        padding_id: manifest.padding_id,
        head,
    };
    let d = manifest.embedding_dim;
    let shapes_ok = params.vocab_size() == vocab.len()
        && params.dim() == d
        && params.num_entities() == entities.len()
        && params.entity_vectors().ncols() == d
        && vocab.padding_id() == manifest.padding_id
        && match &params.head {
            Head::LogLinear { .. } => true,
            Head::VectorSpace {
                projection,
                projection_bias,
                ..
            } => projection.dim() == (d, d) && projection_bias.len() == d,
        };
    if !shapes_ok {
        return Err(StoreError::Inconsistent("tensor shapes disagree with model.json or indices".into()));
    }
    if !params.is_finite() {
        return Err(StoreError::Inconsistent("non-finite parameter".into()));
    }
    Ok(TrainedModel {
        params,
        vocab,
        entities,
        manifest,
    })
}
