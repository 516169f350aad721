//! Entity representation models trained by mini-batch SGD.
//!
//! Both models share the word embedding table `W` and represent a window of
//! text by the mean of its non-padding rows. They differ in the head:
//!
//! * [`ModelKind::LogLinear`]: a softmax over entities,
//!   `P(e | window) = softmax(U a + b)`, trained with weighted cross-entropy;
//! * [`ModelKind::VectorSpace`]: the window is projected into entity space,
//!   `h = tanh(M a + c)`, and matched to entity embeddings by inner product,
//!   trained with uniform negative sampling.
//!
//! Losses are weighted means over the batch, `sum_i w_i l_i / sum_i w_i`,
//! and gradients are the exact analytic derivatives of those losses.

mod log_linear;
mod store;
mod train;
mod vector_space;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::EntityIndex;
use crate::vocabulary::Vocabulary;
use crate::{EntityId, Scalar, WordId};

pub use log_linear::{forward_log_linear, log_probabilities, loss_log_linear};
pub use store::{load_model, save_model, ModelManifest, StoreError, TrainedModel, MODEL_MANIFEST_FILE};
pub use train::{train, TrainReport};
pub use vector_space::{forward_vector_space, loss_vector_space, sample_negatives};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("window size mismatch: model config has {config}, dataset manifest has {manifest}")]
    WindowSizeMismatch { config: usize, manifest: usize },
    #[error("need >=2 entities for negative sampling")]
    TooFewEntities,
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("divergence detected at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("model kind mismatch: expected {expected:?}")]
    WrongKind { expected: ModelKind },
    #[error(transparent)]
    Store(#[from] store::StoreError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogLinear,
    VectorSpace,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LogLinear => "log_linear",
            ModelKind::VectorSpace => "vector_space",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub embedding_dim: usize,
    pub batch_size: usize,
    /// Must equal the dataset's window size.
    pub window_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Negative samples per instance; vector-space model only.
    pub negatives: usize,
    /// Initial parameters are uniform on `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.embedding_dim < 1 {
            return bad("embedding_dim must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.window_size < 1 {
            return bad("window_size must be >= 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.negatives < 1 {
            return bad("negatives must be >= 1");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be positive");
        }
        Ok(())
    }
}

/// Kind-specific parameters on top of the shared word embeddings.
#[derive(Clone, Debug, PartialEq)]
pub enum Head<S> {
    LogLinear {
        /// `|E| x d` output weights.
        entity_weights: Array2<S>,
        /// `|E|` biases.
        entity_bias: Array1<S>,
    },
    VectorSpace {
        /// `|E| x d` entity embeddings.
        entity_embeddings: Array2<S>,
        /// `d x d` projection into entity space.
        projection: Array2<S>,
        projection_bias: Array1<S>,
    },
}

/// Model parameters. Gradients use the same structure.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    /// `|V| x d`, padding row included and kept at zero.
    pub word_embeddings: Array2<S>,
    pub padding_id: Option<WordId>,
    pub head: Head<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn kind(&self) -> ModelKind {
        match self.head {
            Head::LogLinear { .. } => ModelKind::LogLinear,
            Head::VectorSpace { .. } => ModelKind::VectorSpace,
        }
    }

    pub fn dim(&self) -> usize {
        self.word_embeddings.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.word_embeddings.nrows()
    }

    pub fn num_entities(&self) -> usize {
        match &self.head {
            Head::LogLinear { entity_bias, .. } => entity_bias.len(),
            Head::VectorSpace { entity_embeddings, .. } => entity_embeddings.nrows(),
        }
    }

    /// The entity-space vectors: `U` for log-linear, `E` for vector-space.
    pub fn entity_vectors(&self) -> &Array2<S> {
        match &self.head {
            Head::LogLinear { entity_weights, .. } => entity_weights,
            Head::VectorSpace { entity_embeddings, .. } => entity_embeddings,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> ModelParams<S> {
        let z2 = |a: &Array2<S>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<S>| Array1::zeros(a.raw_dim());
        ModelParams {
            word_embeddings: z2(&self.word_embeddings),
            padding_id: self.padding_id,
            head: match &self.head {
                Head::LogLinear {
                    entity_weights,
                    entity_bias,
                } => Head::LogLinear {
                    entity_weights: z2(entity_weights),
                    entity_bias: z1(entity_bias),
                },
                Head::VectorSpace {
                    entity_embeddings,
                    projection,
                    projection_bias,
                } => Head::VectorSpace {
                    entity_embeddings: z2(entity_embeddings),
                    projection: z2(projection),
                    projection_bias: z1(projection_bias),
                },
            },
        }
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[S])> {
        let mut out = vec![(
            "word_embeddings",
            self.word_embeddings.as_slice().expect("standard layout"),
        )];
        match &self.head {
            Head::LogLinear {
                entity_weights,
                entity_bias,
            } => {
                out.push(("entity_representations", entity_weights.as_slice().expect("standard layout")));
                out.push(("entity_bias", entity_bias.as_slice().expect("standard layout")));
            }
            Head::VectorSpace {
                entity_embeddings,
                projection,
                projection_bias,
            } => {
                out.push(("entity_representations", entity_embeddings.as_slice().expect("standard layout")));
                out.push(("projection", projection.as_slice().expect("standard layout")));
                out.push(("projection_bias", projection_bias.as_slice().expect("standard layout")));
            }
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [S])> {
        let mut out = vec![(
            "word_embeddings",
            self.word_embeddings.as_slice_mut().expect("standard layout"),
        )];
        match &mut self.head {
            Head::LogLinear {
                entity_weights,
                entity_bias,
            } => {
                out.push(("entity_representations", entity_weights.as_slice_mut().expect("standard layout")));
                out.push(("entity_bias", entity_bias.as_slice_mut().expect("standard layout")));
            }
            Head::VectorSpace {
                entity_embeddings,
                projection,
                projection_bias,
            } => {
                out.push(("entity_representations", entity_embeddings.as_slice_mut().expect("standard layout")));
                out.push(("projection", projection.as_slice_mut().expect("standard layout")));
                out.push(("projection_bias", projection_bias.as_slice_mut().expect("standard layout")));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// One mini-batch. The last batch of an epoch may be shorter.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<S> {
    windows: Array2<WordId>,
    entities: Vec<EntityId>,
    weights: Vec<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn new(windows: Array2<WordId>, entities: Vec<EntityId>, weights: Vec<S>) -> Result<Batch<S>, ModelError> {
        if windows.nrows() == 0 {
            return Err(ModelError::InvalidBatch("empty batch".into()));
        }
        if windows.nrows() != entities.len() || entities.len() != weights.len() {
            return Err(ModelError::InvalidBatch(format!(
                "length mismatch: {} windows, {} entities, {} weights",
                windows.nrows(),
                entities.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w > S::zero() && w.is_finite())) {
            return Err(ModelError::InvalidBatch("weights must be positive".into()));
        }
        Ok(Batch {
            windows,
            entities,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn window(&self, i: usize) -> &[WordId] {
        self.windows.row(i).to_slice().expect("standard layout")
    }

    pub fn entity(&self, i: usize) -> EntityId {
        self.entities[i]
    }

    pub fn weight(&self, i: usize) -> S {
        self.weights[i]
    }

    pub fn total_weight(&self) -> S {
        self.weights.iter().copied().sum()
    }

    pub fn with_weights(&self, weights: Vec<S>) -> Result<Batch<S>, ModelError> {
        Batch::new(self.windows.clone(), self.entities.clone(), weights)
    }

    fn check_against(&self, params: &ModelParams<S>) -> Result<(), ModelError> {
        let v = params.vocab_size();
        let e = params.num_entities();
        if self.windows.iter().any(|&id| id >= v) {
            return Err(ModelError::InvalidBatch(format!("word id >= vocabulary size {v}")));
        }
        if self.entities.iter().any(|&id| id >= e) {
            return Err(ModelError::InvalidBatch(format!("entity id >= entity count {e}")));
        }
        Ok(())
    }
}

/// Fills parameters i.i.d. uniform on `[-init_scale, init_scale]` from a
/// ChaCha8 stream of `seed`; biases and the padding row are zero.
pub fn init_params<S: Scalar>(
    config: &ModelConfig,
    vocab_size: usize,
    num_entities: usize,
    padding_id: Option<WordId>,
    seed: u64,
) -> Result<ModelParams<S>, ModelError> {
    config.validate()?;
    if vocab_size < 1 || num_entities < 1 {
        return Err(ModelError::InvalidConfig("vocabulary and entity counts must be >= 1".into()));
    }
    if padding_id.is_some_and(|p| p >= vocab_size) {
        return Err(ModelError::InvalidConfig("padding id outside vocabulary".into()));
    }
    let d = config.embedding_dim;
    let scale = config.init_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize| {
        Array2::from_shape_fn((rows, cols), |_| S::from_f64_lossy(rng.random_range(-scale..=scale)))
    };
    let mut word_embeddings = uniform(vocab_size, d);
    if let Some(p) = padding_id {
        word_embeddings.row_mut(p).fill(S::zero());
    }
    let head = match config.kind {
        ModelKind::LogLinear => Head::LogLinear {
            entity_weights: uniform(num_entities, d),
            entity_bias: Array1::zeros(num_entities),
        },
        ModelKind::VectorSpace => Head::VectorSpace {
            entity_embeddings: uniform(num_entities, d),
            projection: uniform(d, d),
            projection_bias: Array1::zeros(d),
        },
    };
    Ok(ModelParams {
        word_embeddings,
        padding_id,
        head,
    })
}

/// Mean of the non-padding word vectors in `window` and how many there were.
pub(crate) fn window_mean<S: Scalar>(params: &ModelParams<S>, window: &[WordId]) -> (Array1<S>, usize) {
    let mut sum = Array1::zeros(params.dim());
    let mut count = 0;
    for &id in window {
        if Some(id) != params.padding_id {
            sum += &params.word_embeddings.row(id);
            count += 1;
        }
    }
    if count > 0 {
        sum /= S::from_usize_lossy(count);
    }
    (sum, count)
}

/// Mean embedding of the non-padding positions; zero for all-padding windows.
pub fn average_window<S: Scalar>(params: &ModelParams<S>, window: &[WordId]) -> Array1<S> {
    window_mean(params, window).0
}

/// Spreads the gradient of the window mean back onto word rows.
pub(crate) fn scatter_window_grad<S: Scalar>(
    grad_w: &mut Array2<S>,
    padding_id: Option<WordId>,
    window: &[WordId],
    count: usize,
    d_mean: &Array1<S>,
) {
    if count == 0 {
        return;
    }
    let share = d_mean / S::from_usize_lossy(count);
    for &id in window {
        if Some(id) != padding_id {
            let mut row = grad_w.row_mut(id);
            row += &share;
        }
    }
}

/// Weighted-mean loss of `batch`. `negatives` and `seed` drive negative
/// sampling and are ignored by the log-linear model.
pub fn loss<S: Scalar>(params: &ModelParams<S>, batch: &Batch<S>, negatives: usize, seed: u64) -> Result<S, ModelError> {
    match params.kind() {
        ModelKind::LogLinear => loss_log_linear(params, batch),
        ModelKind::VectorSpace => loss_vector_space(params, batch, negatives, seed),
    }
}

/// Loss and its exact gradient with respect to every parameter. The padding
/// row of the word-embedding gradient is always zero.
pub fn gradients<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch<S>,
    negatives: usize,
    seed: u64,
) -> Result<(S, ModelParams<S>), ModelError> {
    batch.check_against(params)?;
    let (loss, mut grads) = match params.kind() {
        ModelKind::LogLinear => log_linear::loss_and_gradients(params, batch)?,
        ModelKind::VectorSpace => vector_space::loss_and_gradients(params, batch, negatives, seed)?,
    };
    if let Some(p) = params.padding_id {
        grads.word_embeddings.row_mut(p).fill(S::zero());
    }
    Ok((loss, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("non-finite gradient in {tensor}")]
pub struct NonFiniteGradient {
    pub tensor: &'static str,
}

/// `params -= learning_rate * grads`, elementwise. The padding row is left
/// untouched. Nothing is modified when any gradient entry is non-finite.
pub fn sgd_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &ModelParams<S>,
    learning_rate: S,
) -> Result<(), NonFiniteGradient> {
    for (tensor, g) in grads.tensors() {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(NonFiniteGradient { tensor });
        }
    }
    let padding = params.padding_id;
    let d = params.dim();
    for ((name, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (i, (p, g)) in p.iter_mut().zip(g).enumerate() {
            if name == "word_embeddings" && padding == Some(i / d) {
                continue;
            }
            *p -= learning_rate * *g;
        }
    }
    Ok(())
}

/// A named exported tensor with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<S> {
    pub values: ArrayD<S>,
    /// Token, entity name, or dimension index for each row.
    pub labels: Vec<String>,
}

/// Representations and model-specific parameters by name.
pub type Representations<S> = BTreeMap<&'static str, NamedTensor<S>>;

/// Word embeddings without the padding row, entity representations, plus
/// `entity_bias` (log-linear) or `projection` and `projection_bias`
/// (vector-space).
pub fn get_representations<S: Scalar>(
    params: &ModelParams<S>,
    vocab: &Vocabulary,
    entities: &EntityIndex,
) -> Representations<S> {
    let d = params.dim();
    let dims: Vec<String> = (0..d).map(|i| i.to_string()).collect();
    let names = entities.names().to_vec();
    let real_rows: Vec<usize> = (0..params.vocab_size()).filter(|&i| Some(i) != params.padding_id).collect();
    let words = params.word_embeddings.select(Axis(0), &real_rows).into_dyn();
    let word_labels = real_rows
        .iter()
        .map(|&i| vocab.token(i).unwrap_or_default().to_string())
        .collect();
    let mut out = BTreeMap::new();
    out.insert(
        "word_embeddings",
        NamedTensor {
            values: words,
            labels: word_labels,
        },
    );
    let tensor = |values: ArrayD<S>, labels: &Vec<String>| NamedTensor {
        values,
        labels: labels.clone(),
    };
    match &params.head {
        Head::LogLinear {
            entity_weights,
            entity_bias,
        } => {
            out.insert("entity_representations", tensor(entity_weights.clone().into_dyn(), &names));
            out.insert("entity_bias", tensor(entity_bias.clone().into_dyn(), &names));
        }
        Head::VectorSpace {
            entity_embeddings,
            projection,
            projection_bias,
        } => {
            out.insert("entity_representations", tensor(entity_embeddings.clone().into_dyn(), &names));
            out.insert("projection", tensor(projection.clone().into_dyn(), &dims));
            out.insert("projection_bias", tensor(projection_bias.clone().into_dyn(), &dims));
        }
    }
    debug_assert!(out.values().all(|t| t.values.shape()[0] == t.labels.len()));
    out
}
