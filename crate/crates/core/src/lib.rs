//! Learn low-dimensional word and entity representations from documents with
//! document/entity associations, then rank entities for textual queries.
//!
//! The pipeline has three stages:
//!
//! * **prepare**: [`vocabulary`] construction, window extraction and
//!   instance weighting in [`extraction`], packaging in [`dataset`];
//! * **train**: the entity [`models`], fit by mini-batch SGD;
//! * **query**: exhaustive or exact k-NN [`ranking`] with TREC run output.
//!
//! Model and ranking math is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64`/`*32` aliases below name the concrete instantiations.

pub mod dataset;
pub mod extraction;
pub mod models;
pub mod npy;
pub mod pipeline;
pub mod ranking;
pub mod scalar;
pub mod synthetic;
mod staging;
pub mod vocabulary;

pub use scalar::Scalar;

/// Dense word id; the padding id, when reserved, is the last one.
pub type WordId = usize;
/// Dense entity id, assigned in ascending entity-name order.
pub type EntityId = usize;

/// `f64` model parameters.
pub type ModelParams64 = models::ModelParams<f64>;
/// `f32` model parameters.
pub type ModelParams32 = models::ModelParams<f32>;
pub type TrainedModel64 = models::TrainedModel<f64>;
pub type TrainedModel32 = models::TrainedModel<f32>;
pub type TrainReport64 = models::TrainReport<f64>;
pub type TrainReport32 = models::TrainReport<f32>;
