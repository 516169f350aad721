//! Packaged training data: three NPY arrays, the vocabulary and entity files,
//! and a JSON manifest with sorted keys.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{EntityIndex, ExtractionConfig, ExtractionError, TrainingInstance};
use crate::npy::{self, NpyArray, NpyError};
use crate::staging::StagingDir;
use crate::vocabulary::{FilterConfig, VocabError, Vocabulary};
use crate::{EntityId, WordId};

pub const FORMAT_VERSION: u32 = 1;

pub const WINDOWS_FILE: &str = "windows.npy";
pub const ENTITIES_ARRAY_FILE: &str = "entities.npy";
pub const WEIGHTS_FILE: &str = "weights.npy";
pub const VOCABULARY_FILE: &str = "vocabulary.tsv";
pub const ENTITIES_FILE: &str = "entities.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no training instances")]
    NoInstances,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Npy(#[from] NpyError),
    #[error("{}: bad manifest: {source}", path.display())]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("vocabulary: {0}")]
    Vocab(#[from] VocabError),
    #[error("entities: {0}")]
    Entities(#[from] ExtractionError),
    #[error("{} holds format_version {found}, refusing to overwrite with {FORMAT_VERSION}", path.display())]
    VersionConflict { path: PathBuf, found: String },
    #[error("{} exists and is not a dataset directory, refusing to overwrite", .0.display())]
    NotADataset(PathBuf),
    #[error("inconsistent {field}: {detail}")]
    Inconsistent { field: &'static str, detail: String },
    #[error("entity id out of range: row {row} holds {id}, {len} entities")]
    EntityOutOfRange { row: usize, id: i64, len: usize },
    #[error("word id out of range: row {row} holds {id}, vocabulary size {len}")]
    WordOutOfRange { row: usize, id: i64, len: usize },
    #[error("non-positive weight at row {row}: {weight}")]
    NonPositiveWeight { row: usize, weight: f64 },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingScheme {
    None,
    ReciprocalDocLength,
    Resampled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub instances: usize,
    pub vocabulary_size: usize,
    pub entities: usize,
    pub documents: usize,
    pub skipped_documents: usize,
}

/// Parameters the dataset was created with, echoed verbatim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreationParameters {
    pub filter: FilterConfig,
    pub extraction: ExtractionConfig,
    pub resample_target: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub window_size: usize,
    pub stride: usize,
    pub skip: usize,
    pub padding_id: Option<WordId>,
    pub weighting_scheme: WeightingScheme,
    pub counts: Counts,
    pub seed: u64,
    pub parameters: CreationParameters,
}

/// Everything [`package`] needs besides the instances and the two indices.
#[derive(Clone, Debug)]
pub struct PackageInfo {
    pub extraction: ExtractionConfig,
    pub weighting_scheme: WeightingScheme,
    pub resample_target: Option<usize>,
    pub seed: u64,
    pub documents: usize,
    pub skipped_documents: usize,
}

/// JSON with keys sorted at every level, pretty-printed, LF-terminated.
pub(crate) fn to_sorted_json<T: Serialize>(value: &T) -> String {
    // serde_json::Map is a BTreeMap here, so going through Value sorts keys.
    let value = serde_json::to_value(value).expect("manifest types serialize");
    let mut text = serde_json::to_string_pretty(&value).expect("Value serializes");
    text.push('\n');
    text
}

fn write_text(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write(&mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

fn check_overwrite(out_dir: &Path) -> Result<(), DatasetError> {
    if !out_dir.exists() {
        return Ok(());
    }
    let manifest = out_dir.join(MANIFEST_FILE);
    if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
        let found = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v.get("format_version").cloned());
        return match found {
            Some(v) if v == serde_json::json!(FORMAT_VERSION) => Ok(()),
            other => Err(DatasetError::VersionConflict {
                path: out_dir.to_path_buf(),
                found: other.map_or_else(|| "none".into(), |v| v.to_string()),
            }),
        };
    }
    let empty = fs::read_dir(out_dir).map_err(io_err(out_dir))?.next().is_none();
    if empty {
        Ok(())
    } else {
        Err(DatasetError::NotADataset(out_dir.to_path_buf()))
    }
}

/// Writes the dataset directory atomically and returns its manifest. Output
/// bytes depend only on the arguments.
pub fn package(
    instances: &[TrainingInstance],
    vocab: &Vocabulary,
    entities: &EntityIndex,
    info: &PackageInfo,
    out_dir: &Path,
) -> Result<Manifest, DatasetError> {
    if instances.is_empty() {
        return Err(DatasetError::NoInstances);
    }
    check_overwrite(out_dir)?;
    let window_size = info.extraction.window_size;
    let n = instances.len();
    let mut windows = Vec::with_capacity(n * window_size);
    let mut entity_ids = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (row, inst) in instances.iter().enumerate() {
        if inst.window.len() != window_size {
            return Err(DatasetError::Inconsistent {
                field: "window_size",
                detail: format!("row {row} has {} ids, expected {window_size}", inst.window.len()),
            });
        }
        for &id in inst.window.ids() {
            if id >= vocab.len() {
                return Err(DatasetError::WordOutOfRange {
                    row,
                    id: id as i64,
                    len: vocab.len(),
                });
            }
            windows.push(id as i64);
        }
        if inst.entity >= entities.len() {
            return Err(DatasetError::EntityOutOfRange {
                row,
                id: inst.entity as i64,
                len: entities.len(),
            });
        }
        if !(inst.weight > 0.0 && inst.weight.is_finite()) {
            return Err(DatasetError::NonPositiveWeight { row, weight: inst.weight });
        }
        entity_ids.push(inst.entity as i64);
        weights.push(inst.weight);
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        window_size,
        stride: info.extraction.stride,
        skip: info.extraction.skip,
        padding_id: vocab.padding_id(),
        weighting_scheme: info.weighting_scheme,
        counts: Counts {
            instances: n,
            vocabulary_size: vocab.len(),
            entities: entities.len(),
            documents: info.documents,
            skipped_documents: info.skipped_documents,
        },
        seed: info.seed,
        parameters: CreationParameters {
            filter: vocab.filter_config().clone(),
            extraction: info.extraction.clone(),
            resample_target: info.resample_target,
        },
    };

    let stage = StagingDir::new(out_dir).map_err(io_err(out_dir))?;
    let shape_err = |e| DatasetError::Inconsistent {
        field: "shape",
        detail: format!("{e}"),
    };
    npy::write_array(
        stage.file(WINDOWS_FILE),
        &NpyArray::matrix_i64(n, window_size, windows).map_err(shape_err)?,
    )?;
    npy::write_array(stage.file(ENTITIES_ARRAY_FILE), &NpyArray::vector_i64(entity_ids).map_err(shape_err)?)?;
    npy::write_array(stage.file(WEIGHTS_FILE), &NpyArray::vector_f64(weights).map_err(shape_err)?)?;
    write_text(&stage.file(VOCABULARY_FILE), |w| vocab.write_to(w))?;
    write_text(&stage.file(ENTITIES_FILE), |w| entities.write_to(w))?;
    let manifest_text = to_sorted_json(&manifest);
    write_text(&stage.file(MANIFEST_FILE), |w| w.write_all(manifest_text.as_bytes()))?;
    stage.commit().map_err(io_err(out_dir))?;
    Ok(manifest)
}

/// A validated, immutable dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PackagedDataset {
    windows: Vec<WordId>,
    entities: Vec<EntityId>,
    weights: Vec<f64>,
    vocab: Vocabulary,
    entity_index: EntityIndex,
    manifest: Manifest,
}

impl PackagedDataset {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn window_size(&self) -> usize {
        self.manifest.window_size
    }

    pub fn window(&self, row: usize) -> &[WordId] {
        let w = self.window_size();
        &self.windows[row * w..(row + 1) * w]
    }

    pub fn entity(&self, row: usize) -> EntityId {
        self.entities[row]
    }

    pub fn weight(&self, row: usize) -> f64 {
        self.weights[row]
    }

    pub fn entities(&self) -> &[EntityId] {
        &self.entities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn entity_index(&self) -> &EntityIndex {
        &self.entity_index
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }
}

fn inconsistent(field: &'static str, manifest: usize, actual: usize) -> DatasetError {
    DatasetError::Inconsistent {
        field,
        detail: format!("manifest says {manifest}, files hold {actual}"),
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Manifest { path, source })
}

/// Loads a directory written by [`package`], validating every invariant.
pub fn load_dataset(dir: &Path) -> Result<PackagedDataset, DatasetError> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DatasetError::VersionConflict {
            path: dir.to_path_buf(),
            found: manifest.format_version.to_string(),
        });
    }
    let vocab_path = dir.join(VOCABULARY_FILE);
    let vocab = Vocabulary::read_from(
        BufReader::new(File::open(&vocab_path).map_err(io_err(&vocab_path))?),
        manifest.parameters.filter.clone(),
    )?;
    let entities_path = dir.join(ENTITIES_FILE);
    let entity_index =
        EntityIndex::read_from(BufReader::new(File::open(&entities_path).map_err(io_err(&entities_path))?))?;

    let windows = npy::read_array(dir.join(WINDOWS_FILE))?;
    let entities = npy::read_array(dir.join(ENTITIES_ARRAY_FILE))?;
    let weights = npy::read_array(dir.join(WEIGHTS_FILE))?;
    let dtype = |field: &'static str, want: &str| DatasetError::Inconsistent {
        field,
        detail: format!("expected dtype {want}"),
    };
    let window_data = windows.as_i64().ok_or_else(|| dtype("windows", "<i8"))?;
    let entity_data = entities.as_i64().ok_or_else(|| dtype("entities", "<i8"))?;
    let weight_data = weights.as_f64().ok_or_else(|| dtype("weights", "<f8"))?;

    let counts = &manifest.counts;
    let n = counts.instances;
    if windows.shape().len() != 2 {
        return Err(DatasetError::Inconsistent {
            field: "windows",
            detail: format!("expected a matrix, got shape {:?}", windows.shape()),
        });
    }
    if windows.shape()[0] != n {
        return Err(inconsistent("instances", n, windows.shape()[0]));
    }
    if windows.shape()[1] != manifest.window_size {
        return Err(inconsistent("window_size", manifest.window_size, windows.shape()[1]));
    }
    if entities.shape() != [n] {
        return Err(inconsistent("instances", n, entities.shape()[0]));
    }
    if weights.shape() != [n] {
        return Err(inconsistent("instances", n, weights.shape()[0]));
    }
    if vocab.len() != counts.vocabulary_size {
        return Err(inconsistent("vocabulary_size", counts.vocabulary_size, vocab.len()));
    }
    if vocab.padding_id() != manifest.padding_id {
        return Err(DatasetError::Inconsistent {
            field: "padding_id",
            detail: format!("manifest says {:?}, vocabulary has {:?}", manifest.padding_id, vocab.padding_id()),
        });
    }
    if entity_index.len() != counts.entities {
        return Err(inconsistent("entities", counts.entities, entity_index.len()));
    }

    let w = manifest.window_size;
    let mut window_ids = Vec::with_capacity(window_data.len());
    for (i, &id) in window_data.iter().enumerate() {
        if id < 0 || id as usize >= vocab.len() {
            return Err(DatasetError::WordOutOfRange {
                row: i / w,
                id,
                len: vocab.len(),
            });
        }
        window_ids.push(id as WordId);
    }
    let mut entity_ids = Vec::with_capacity(n);
    for (row, &id) in entity_data.iter().enumerate() {
        if id < 0 || id as usize >= entity_index.len() {
            return Err(DatasetError::EntityOutOfRange {
                row,
                id,
                len: entity_index.len(),
            });
        }
        entity_ids.push(id as EntityId);
    }
    for (row, &weight) in weight_data.iter().enumerate() {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(DatasetError::NonPositiveWeight { row, weight });
        }
    }
    let weights = weight_data.to_vec();
    Ok(PackagedDataset {
        windows: window_ids,
        entities: entity_ids,
        weights,
        vocab,
        entity_index,
        manifest,
    })
}
