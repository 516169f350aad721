use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gradients, init_params, sgd_step, Batch, ModelConfig, ModelError, ModelKind, ModelParams};
use crate::dataset::PackagedDataset;
use crate::Scalar;

// ChaCha streams derived from the configured seed.
const SHUFFLE_STREAM: u64 = 1;
const NEGATIVE_STREAM: u64 = 2;

#[derive(Clone, Debug)]
pub struct TrainReport<S> {
    /// Weighted mean loss over each epoch's batches.
    pub epoch_losses: Vec<S>,
    pub params: ModelParams<S>,
    /// Wall-clock time; not covered by the determinism guarantee.
    pub elapsed: Duration,
}

fn make_batch<S: Scalar>(dataset: &PackagedDataset, rows: &[usize]) -> Result<Batch<S>, ModelError> {
    let w = dataset.window_size();
    let windows = Array2::from_shape_fn((rows.len(), w), |(i, j)| dataset.window(rows[i])[j]);
    let entities = rows.iter().map(|&r| dataset.entity(r)).collect();
    let weights = rows.iter().map(|&r| S::from_f64_lossy(dataset.weight(r))).collect();
    Batch::new(windows, entities, weights)
}

/// Mini-batch SGD over `dataset`. Each epoch shuffles the instance order,
/// keeps the final short batch, and takes one step per batch. Everything
/// except `elapsed` is a deterministic function of the inputs.
pub fn train<S: Scalar>(dataset: &PackagedDataset, config: &ModelConfig) -> Result<TrainReport<S>, ModelError> {
    config.validate()?;
    if config.window_size != dataset.window_size() {
        return Err(ModelError::WindowSizeMismatch {
            config: config.window_size,
            manifest: dataset.window_size(),
        });
    }
    let num_entities = dataset.entity_index().len();
    if config.kind == ModelKind::VectorSpace && num_entities < 2 {
        return Err(ModelError::TooFewEntities);
    }
    let started = Instant::now();
    let mut params = init_params(
        config,
        dataset.vocab().len(),
        num_entities,
        dataset.vocab().padding_id(),
        config.seed,
    )?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut negative_rng = ChaCha8Rng::seed_from_u64(config.seed);
    negative_rng.set_stream(NEGATIVE_STREAM);

    let learning_rate = S::from_f64_lossy(config.learning_rate);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut weighted = S::zero();
        let mut mass = S::zero();
        for (index, rows) in order.chunks(config.batch_size).enumerate() {
            let batch = make_batch::<S>(dataset, rows)?;
            let seed = negative_rng.random::<u64>();
            let (loss, grads) = gradients(&params, &batch, config.negatives, seed)?;
            let diverged = || ModelError::Divergence { epoch, batch: index };
            if !loss.is_finite() {
                return Err(diverged());
            }
            sgd_step(&mut params, &grads, learning_rate).map_err(|_| diverged())?;
            let w = batch.total_weight();
            weighted += loss * w;
            mass += w;
        }
        let epoch_loss = weighted / mass;
        if !epoch_loss.is_finite() {
            return Err(ModelError::Divergence { epoch, batch: 0 });
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainReport {
        epoch_losses,
        params,
        elapsed: started.elapsed(),
    })
}
