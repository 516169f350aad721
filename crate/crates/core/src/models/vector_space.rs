use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{scatter_window_grad, window_mean, Batch, Head, ModelError, ModelKind, ModelParams};
use crate::scalar::{sigmoid, softplus};
use crate::{EntityId, Scalar, WordId};

struct VectorHead<'a, S> {
    entities: &'a Array2<S>,
    projection: &'a Array2<S>,
    bias: &'a Array1<S>,
}

fn head<S: Scalar>(params: &ModelParams<S>) -> Result<VectorHead<'_, S>, ModelError> {
    match &params.head {
        Head::VectorSpace {
            entity_embeddings,
            projection,
            projection_bias,
        } => Ok(VectorHead {
            entities: entity_embeddings,
            projection,
            bias: projection_bias,
        }),
        _ => Err(ModelError::WrongKind {
            expected: ModelKind::VectorSpace,
        }),
    }
}

/// `tanh(M a + c)`: the window projected into entity space.
pub fn forward_vector_space<S: Scalar>(params: &ModelParams<S>, window: &[WordId]) -> Result<Array1<S>, ModelError> {
    let h = head(params)?;
    let mean = window_mean(params, window).0;
    Ok((h.projection.dot(&mean) + h.bias).mapv(S::tanh))
}

/// Draws `count` negatives per target, uniformly among the other entities,
/// from a ChaCha8 stream of `seed`. Targets are visited in order.
pub fn sample_negatives(
    targets: &[EntityId],
    num_entities: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<EntityId>>, ModelError> {
    if num_entities < 2 {
        return Err(ModelError::TooFewEntities);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(targets
        .iter()
        .map(|&target| {
            (0..count)
                .map(|_| {
                    let r = rng.random_range(0..num_entities - 1);
                    if r >= target {
                        r + 1
                    } else {
                        r
                    }
                })
                .collect()
        })
        .collect())
}

/// Negative-sampling loss of one projected window `out`.
pub(crate) fn item_loss<S: Scalar>(out: &Array1<S>, entities: &Array2<S>, target: EntityId, negatives: &[EntityId]) -> S {
    let mut loss = softplus(-out.dot(&entities.row(target)));
    for &n in negatives {
        loss += softplus(out.dot(&entities.row(n)));
    }
    loss
}

/// Weighted mean over the batch of
/// `-log sigma(<h, E[e]>) - sum_j log sigma(-<h, E[neg_j]>)`.
pub fn loss_vector_space<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch<S>,
    negatives: usize,
    seed: u64,
) -> Result<S, ModelError> {
    batch.check_against(params)?;
    let h = head(params)?;
    let negs = sample_negatives(&batch.entities, params.num_entities(), negatives, seed)?;
    let mut total = S::zero();
    for (i, neg) in negs.iter().enumerate() {
        let out = forward_vector_space(params, batch.window(i))?;
        total += batch.weight(i) * item_loss(&out, h.entities, batch.entity(i), neg);
    }
    Ok(total / batch.total_weight())
}

pub(super) fn loss_and_gradients<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch<S>,
    negatives: usize,
    seed: u64,
) -> Result<(S, ModelParams<S>), ModelError> {
    let h = head(params)?;
    let negs = sample_negatives(&batch.entities, params.num_entities(), negatives, seed)?;
    let mut grads = params.zeros_like();
    let norm = batch.total_weight();
    let mut loss = S::zero();
    let (g_entities, g_projection, g_bias) = match &mut grads.head {
        Head::VectorSpace {
            entity_embeddings,
            projection,
            projection_bias,
        } => (entity_embeddings, projection, projection_bias),
        _ => unreachable!("zeros_like keeps the head kind"),
    };
    for (i, neg) in negs.iter().enumerate() {
        let window = batch.window(i);
        let alpha = batch.weight(i) / norm;
        let (mean, count) = window_mean(params, window);
        let out = (h.projection.dot(&mean) + h.bias).mapv(S::tanh);
        let mut d_out = Array1::zeros(out.len());

        let target = batch.entity(i);
        let score = out.dot(&h.entities.row(target));
        let mut item = softplus(-score);
        // d/ds softplus(-s) = sigma(s) - 1
        let g = alpha * (sigmoid(score) - S::one());
        g_entities.row_mut(target).scaled_add(g, &out);
        d_out.scaled_add(g, &h.entities.row(target));
        for &n in neg {
            let score = out.dot(&h.entities.row(n));
            item += softplus(score);
            let g = alpha * sigmoid(score);
            g_entities.row_mut(n).scaled_add(g, &out);
            d_out.scaled_add(g, &h.entities.row(n));
        }
        loss += batch.weight(i) * item;

        // through tanh: d u = d out * (1 - out^2)
        let d_pre = &d_out * &out.mapv(|o| S::one() - o * o);
        for (r, &g) in d_pre.iter().enumerate() {
            g_projection.row_mut(r).scaled_add(g, &mean);
        }
        *g_bias += &d_pre;
        let d_mean = h.projection.t().dot(&d_pre);
        scatter_window_grad(&mut grads.word_embeddings, params.padding_id, window, count, &d_mean);
    }
    Ok((loss / norm, grads))
}
