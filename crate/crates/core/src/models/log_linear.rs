use ndarray::{Array1, Array2};

use super::{window_mean, scatter_window_grad, Batch, Head, ModelError, ModelKind, ModelParams};
use crate::{Scalar, WordId};

fn head<S: Scalar>(params: &ModelParams<S>) -> Result<(&Array2<S>, &Array1<S>), ModelError> {
    match &params.head {
        Head::LogLinear {
            entity_weights,
            entity_bias,
        } => Ok((entity_weights, entity_bias)),
        _ => Err(ModelError::WrongKind {
            expected: ModelKind::LogLinear,
        }),
    }
}

fn logits<S: Scalar>(weights: &Array2<S>, bias: &Array1<S>, mean: &Array1<S>) -> Array1<S> {
    weights.dot(mean) + bias
}

fn log_sum_exp<S: Scalar>(z: &Array1<S>) -> S {
    let max = z.iter().copied().fold(S::neg_infinity(), S::max);
    max + z.iter().map(|&x| (x - max).exp()).sum::<S>().ln()
}

/// `log softmax(U a + b)`: the log-probability of every entity given the window.
pub fn log_probabilities<S: Scalar>(params: &ModelParams<S>, window: &[WordId]) -> Result<Array1<S>, ModelError> {
    let (weights, bias) = head(params)?;
    let z = logits(weights, bias, &window_mean(params, window).0);
    let lse = log_sum_exp(&z);
    Ok(z.mapv(|x| x - lse))
}

/// `softmax(U a + b)`.
pub fn forward_log_linear<S: Scalar>(params: &ModelParams<S>, window: &[WordId]) -> Result<Array1<S>, ModelError> {
    let (weights, bias) = head(params)?;
    let z = logits(weights, bias, &window_mean(params, window).0);
    let max = z.iter().copied().fold(S::neg_infinity(), S::max);
    let e = z.mapv(|x| (x - max).exp());
    let total = e.sum();
    Ok(e / total)
}

/// Weighted mean of `-log P(entity_i | window_i)`.
pub fn loss_log_linear<S: Scalar>(params: &ModelParams<S>, batch: &Batch<S>) -> Result<S, ModelError> {
    batch.check_against(params)?;
    let (weights, bias) = head(params)?;
    let mut total = S::zero();
    for i in 0..batch.len() {
        let z = logits(weights, bias, &window_mean(params, batch.window(i)).0);
        total += batch.weight(i) * (log_sum_exp(&z) - z[batch.entity(i)]);
    }
    Ok(total / batch.total_weight())
}

pub(super) fn loss_and_gradients<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Batch<S>,
) -> Result<(S, ModelParams<S>), ModelError> {
    let (weights, bias) = head(params)?;
    let mut grads = params.zeros_like();
    let norm = batch.total_weight();
    let mut loss = S::zero();
    let (g_weights, g_bias) = match &mut grads.head {
        Head::LogLinear {
            entity_weights,
            entity_bias,
        } => (entity_weights, entity_bias),
        _ => unreachable!("zeros_like keeps the head kind"),
    };
    for i in 0..batch.len() {
        let window = batch.window(i);
        let target = batch.entity(i);
        let alpha = batch.weight(i) / norm;
        let (mean, count) = window_mean(params, window);
        let z = logits(weights, bias, &mean);
        let lse = log_sum_exp(&z);
        loss += batch.weight(i) * (lse - z[target]);

        // d loss / d z = alpha * (softmax(z) - onehot(target))
        let mut dz = z.mapv(|x| (x - lse).exp());
        dz[target] -= S::one();
        dz *= alpha;

        for (e, &g) in dz.iter().enumerate() {
            let mut row = g_weights.row_mut(e);
            row.scaled_add(g, &mean);
        }
        *g_bias += &dz;
        let d_mean = weights.t().dot(&dz);
        scatter_window_grad(&mut grads.word_embeddings, params.padding_id, window, count, &d_mean);
    }
    Ok((loss / norm, grads))
}
