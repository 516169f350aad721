//! Window and skip-gram extraction, document/entity association, and the two
//! instance weighting schemes (reciprocal document length and per-entity
//! resampling).
//!
//! Window starts fall at `0, stride, 2*stride, ...`. A window selects
//! `window_size` positions spaced `skip + 1` apart. Windows whose selections
//! are all in bounds are always emitted. With padding enabled, at most one
//! extra window is emitted per document: the first one that runs past the end,
//! and only if it selects at least one position no full window selected. Its
//! out-of-bounds positions hold the padding id, so padding is always a suffix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{EntityId, WordId};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("invalid extraction config: {0}")]
    InvalidConfig(String),
    #[error("padding requested but the vocabulary reserves no padding id")]
    MissingPadding,
    #[error("zero-length document {0:?}")]
    ZeroLengthDocument(String),
    #[error("no recorded length for document {0:?}")]
    UnknownDocument(String),
    #[error("entity {0:?} has no training instances")]
    EntityWithoutInstances(String),
    #[error("resample target must be >= 1")]
    ZeroTarget,
    #[error("association file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub window_size: usize,
    /// Tokens advanced between consecutive window starts.
    pub stride: usize,
    /// Tokens skipped after each selected token inside a window.
    pub skip: usize,
    pub pad_short_documents: bool,
}

impl ExtractionConfig {
    /// Adjacent, non-overlapping chunks.
    pub fn consecutive(window_size: usize) -> Self {
        ExtractionConfig {
            window_size,
            stride: window_size,
            skip: 0,
            pad_short_documents: false,
        }
    }

    pub fn validate(&self) -> Result<(), ExtractionError> {
        if self.window_size < 1 {
            return Err(ExtractionError::InvalidConfig("window_size must be >= 1".into()));
        }
        if self.stride < 1 {
            return Err(ExtractionError::InvalidConfig("stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fixed-length run of word ids; any padding occupies a trailing suffix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    ids: Vec<WordId>,
    padding: usize,
}

impl Window {
    /// Builds a window from `ids` followed by `padding` copies of `padding_id`.
    pub fn padded(mut ids: Vec<WordId>, padding: usize, padding_id: WordId) -> Window {
        ids.extend(std::iter::repeat_n(padding_id, padding));
        Window { ids, padding }
    }

    pub fn full(ids: Vec<WordId>) -> Window {
        Window { ids, padding: 0 }
    }

    pub fn ids(&self) -> &[WordId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of trailing padding positions.
    pub fn padding(&self) -> usize {
        self.padding
    }
}

/// Plain contiguous windows. `config.skip` is ignored.
pub fn extract_windows(
    ids: &[WordId],
    config: &ExtractionConfig,
    padding_id: Option<WordId>,
) -> Result<Vec<Window>, ExtractionError> {
    extract_spaced(ids, config.window_size, config.stride, 1, config.pad_short_documents, padding_id)
}

/// Skip-grams: selections spaced `config.skip + 1` apart, on the same start
/// schedule as [`extract_windows`]. With `skip == 0` the output is identical
/// to [`extract_windows`].
pub fn extract_skipgrams(
    ids: &[WordId],
    config: &ExtractionConfig,
    padding_id: Option<WordId>,
) -> Result<Vec<Window>, ExtractionError> {
    extract_spaced(
        ids,
        config.window_size,
        config.stride,
        config.skip + 1,
        config.pad_short_documents,
        padding_id,
    )
}

fn extract_spaced(
    ids: &[WordId],
    window_size: usize,
    stride: usize,
    step: usize,
    pad: bool,
    padding_id: Option<WordId>,
) -> Result<Vec<Window>, ExtractionError> {
    if window_size == 0 || stride == 0 {
        return Err(ExtractionError::InvalidConfig("window_size and stride must be >= 1".into()));
    }
    if pad && padding_id.is_none() {
        return Err(ExtractionError::MissingPadding);
    }
    let n = ids.len();
    let span = (window_size - 1) * step;
    let mut windows = Vec::new();
    let mut covered = vec![false; n];
    let mut start = 0;
    while start < n && start + span < n {
        let window: Vec<WordId> = (0..window_size).map(|j| ids[start + j * step]).collect();
        for j in 0..window_size {
            covered[start + j * step] = true;
        }
        windows.push(Window::full(window));
        start += stride;
    }
    if pad && start < n {
        let selected: Vec<usize> = (start..n).step_by(step).collect();
        if selected.iter().any(|&p| !covered[p]) {
            let real: Vec<WordId> = selected.iter().map(|&p| ids[p]).collect();
            let padding = window_size - real.len();
            windows.push(Window::padded(real, padding, padding_id.expect("checked above")));
        }
    }
    Ok(windows)
}

/// Dense, name-ordered entity ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityIndex {
    names: Vec<String>,
    id_of: HashMap<String, EntityId>,
}

impl EntityIndex {
    /// Assigns ids in ascending name order; duplicates collapse.
    pub fn from_names<I, S>(names: I) -> EntityIndex
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        let names: Vec<String> = sorted.into_iter().collect();
        let id_of = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        EntityIndex { names, id_of }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<EntityId> {
        self.id_of.get(name).copied()
    }

    pub fn name(&self, id: EntityId) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `name<TAB>id` per line in id order.
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            writeln!(out, "{name}\t{i}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<EntityIndex, ExtractionError> {
        let mut names = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let parse_err = |message: &str| ExtractionError::Parse {
                line: i + 1,
                message: message.to_string(),
            };
            let (name, id) = line.split_once('\t').ok_or_else(|| parse_err("expected name<TAB>id"))?;
            let id: usize = id.parse().map_err(|_| parse_err("bad entity id"))?;
            if id != names.len() {
                return Err(parse_err("entity ids must be dense and in order"));
            }
            if name.is_empty() {
                return Err(parse_err("empty entity name"));
            }
            names.push(name.to_string());
        }
        let id_of: HashMap<String, EntityId> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        if id_of.len() != names.len() {
            return Err(ExtractionError::Parse {
                line: 0,
                message: "duplicate entity name".into(),
            });
        }
        Ok(EntityIndex { names, id_of })
    }
}

/// Which entities each document is associated with.
#[derive(Clone, Debug, Default)]
pub struct AssociationTable {
    doc_to_entities: HashMap<String, BTreeSet<EntityId>>,
    entity_index: EntityIndex,
}

impl AssociationTable {
    pub fn from_pairs<I, D, E>(pairs: I) -> AssociationTable
    where
        I: IntoIterator<Item = (D, E)>,
        D: Into<String>,
        E: Into<String>,
    {
        let pairs: Vec<(String, String)> = pairs.into_iter().map(|(d, e)| (d.into(), e.into())).collect();
        let entity_index = EntityIndex::from_names(pairs.iter().map(|(_, e)| e.clone()));
        let mut doc_to_entities: HashMap<String, BTreeSet<EntityId>> = HashMap::new();
        for (doc, entity) in pairs {
            let id = entity_index.id(&entity).expect("indexed above");
            doc_to_entities.entry(doc).or_default().insert(id);
        }
        AssociationTable {
            doc_to_entities,
            entity_index,
        }
    }

    /// Parses `doc_id<TAB>entity_name` lines.
    pub fn read_from<R: BufRead>(input: R) -> Result<AssociationTable, ExtractionError> {
        let mut pairs = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: &str| ExtractionError::Parse {
                line: i + 1,
                message: message.to_string(),
            };
            let (doc, entity) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected doc_id<TAB>entity_name"))?;
            if doc.is_empty() || entity.is_empty() || entity.contains('\t') {
                return Err(parse_err("expected doc_id<TAB>entity_name"));
            }
            pairs.push((doc.to_string(), entity.to_string()));
        }
        Ok(AssociationTable::from_pairs(pairs))
    }

    pub fn entities_of(&self, doc_id: &str) -> Option<&BTreeSet<EntityId>> {
        self.doc_to_entities.get(doc_id)
    }

    pub fn entity_index(&self) -> &EntityIndex {
        &self.entity_index
    }

    pub fn num_documents(&self) -> usize {
        self.doc_to_entities.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingInstance {
    pub window: Window,
    pub entity: EntityId,
    /// Positive objective weight.
    pub weight: f64,
    pub source_doc: Arc<str>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SkipStats {
    /// Documents with no association entry.
    pub skipped_documents: usize,
}

/// Pairs every window with every entity associated to `doc_id`, windows in
/// order and entities by ascending id, all with weight 1.
pub fn make_instances(
    doc_id: &str,
    windows: &[Window],
    assoc: &AssociationTable,
    stats: &mut SkipStats,
) -> Vec<TrainingInstance> {
    let Some(entities) = assoc.entities_of(doc_id) else {
        stats.skipped_documents += 1;
        return Vec::new();
    };
    let source: Arc<str> = Arc::from(doc_id);
    windows
        .iter()
        .flat_map(|w| {
            let source = source.clone();
            entities.iter().map(move |&entity| TrainingInstance {
                window: w.clone(),
                entity,
                weight: 1.0,
                source_doc: source.clone(),
            })
        })
        .collect()
}

/// Sets each weight to `1 / length(source_doc)`.
pub fn weight_reciprocal_length(
    instances: &mut [TrainingInstance],
    doc_lengths: &HashMap<String, usize>,
) -> Result<(), ExtractionError> {
    for instance in instances.iter_mut() {
        let doc = &*instance.source_doc;
        let len = *doc_lengths
            .get(doc)
            .ok_or_else(|| ExtractionError::UnknownDocument(doc.to_string()))?;
        if len == 0 {
            return Err(ExtractionError::ZeroLengthDocument(doc.to_string()));
        }
        instance.weight = 1.0 / len as f64;
    }
    Ok(())
}

/// Draws `target` instances per entity uniformly with replacement, entity by
/// entity in id order. Each entity uses its own ChaCha stream of `seed`, so the
/// result does not depend on processing order. Output weights are 1.
pub fn resample_per_entity(
    instances: &[TrainingInstance],
    entities: &EntityIndex,
    target: Option<usize>,
    seed: u64,
) -> Result<Vec<TrainingInstance>, ExtractionError> {
    let mut by_entity: BTreeMap<EntityId, Vec<&TrainingInstance>> = BTreeMap::new();
    for instance in instances {
        by_entity.entry(instance.entity).or_default().push(instance);
    }
    for id in 0..entities.len() {
        if !by_entity.contains_key(&id) {
            return Err(ExtractionError::EntityWithoutInstances(
                entities.name(id).unwrap_or("?").to_string(),
            ));
        }
    }
    let target = match target {
        Some(0) => return Err(ExtractionError::ZeroTarget),
        Some(t) => t,
        None => by_entity.values().map(Vec::len).max().unwrap_or(0),
    };
    let mut out = Vec::with_capacity(target * by_entity.len());
    for (&entity, pool) in &by_entity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(entity as u64);
        for _ in 0..target {
            let pick = pool[rng.random_range(0..pool.len())];
            out.push(TrainingInstance {
                weight: 1.0,
                ..pick.clone()
            });
        }
    }
    Ok(out)
}
