//! Exact k-nearest-neighbour search over entity vectors with a ball tree.
//!
//! Candidates are always scored with [`Metric::similarity`] on the original
//! vectors, the same function exhaustive ranking uses, so both paths produce
//! bit-identical scores. The tree only decides which candidates to visit: a
//! ball is skipped when an upper bound on any score inside it, widened by a
//! rounding tolerance, is strictly below the current k-th best score. Balls
//! whose bound ties the k-th score are visited, because they may hold an
//! equal score with a smaller name.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use super::{compare_ranked, EntityRanking, Metric, RankedEntity};
use crate::{EntityId, Scalar};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KnnError {
    #[error("cannot index an empty entity set")]
    Empty,
    #[error("{vectors} entity vectors but {names} names")]
    NameCountMismatch { vectors: usize, names: usize },
    #[error("entity {0:?} has a zero vector, undefined under the cosine metric")]
    ZeroVector(String),
    #[error("entity {0:?} has a non-finite vector")]
    NonFinite(String),
    #[error("query has dimension {query}, index has {index}")]
    DimensionMismatch { query: usize, index: usize },
    #[error("query vector is not finite")]
    NonFiniteQuery,
    #[error("k must be >= 1")]
    ZeroK,
}

#[derive(Clone, Debug)]
struct Node<S> {
    center: Array1<S>,
    radius: S,
    center_norm: S,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// Immutable exact search index; safe to query from many threads.
#[derive(Clone, Debug)]
pub struct KnnIndex<S> {
    vectors: Array2<S>,
    /// Vectors the tree is built over: unit-normalized for cosine.
    tree_points: Array2<S>,
    names: Vec<String>,
    metric: Metric,
    order: Vec<EntityId>,
    nodes: Vec<Node<S>>,
}

fn norm<S: Scalar>(v: ArrayView1<S>) -> S {
    v.dot(&v).sqrt()
}

fn distance<S: Scalar>(a: ArrayView1<S>, b: ArrayView1<S>) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<S>().sqrt()
}

impl<S: Scalar> KnnIndex<S> {
    /// Builds the index over the rows of `vectors`, labelled by `names`.
    /// Deterministic in its inputs.
    pub fn build(vectors: Array2<S>, names: Vec<String>, metric: Metric) -> Result<KnnIndex<S>, KnnError> {
        if vectors.nrows() == 0 {
            return Err(KnnError::Empty);
        }
        if vectors.nrows() != names.len() {
            return Err(KnnError::NameCountMismatch {
                vectors: vectors.nrows(),
                names: names.len(),
            });
        }
        for (row, name) in vectors.rows().into_iter().zip(&names) {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(KnnError::NonFinite(name.clone()));
            }
            if metric == Metric::Cosine && row.iter().all(|x| x.is_zero()) {
                return Err(KnnError::ZeroVector(name.clone()));
            }
        }
        let tree_points = match metric {
            Metric::Cosine => {
                let mut p = vectors.clone();
                for mut row in p.rows_mut() {
                    let n = norm(row.view());
                    row /= n;
                }
                p
            }
            _ => vectors.clone(),
        };
        let mut index = KnnIndex {
            order: (0..vectors.nrows()).collect(),
            vectors,
            tree_points,
            names,
            metric,
            nodes: Vec::new(),
        };
        index.build_node(0, index.order.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let d = self.tree_points.ncols();
        let count = S::from_usize_lossy(end - start);
        let mut center = Array1::<S>::zeros(d);
        for &i in &self.order[start..end] {
            center += &self.tree_points.row(i);
        }
        center /= count;
        let radius = self.order[start..end]
            .iter()
            .map(|&i| distance(center.view(), self.tree_points.row(i)))
            .fold(S::zero(), S::max);
        let id = self.nodes.len();
        self.nodes.push(Node {
            center_norm: norm(center.view()),
            center,
            radius,
            start,
            end,
            children: None,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        // split on the widest coordinate at the median
        let mut best = (0, S::zero());
        for j in 0..d {
            let (lo, hi) = self.order[start..end].iter().fold((S::infinity(), S::neg_infinity()), |(lo, hi), &i| {
                let x = self.tree_points[[i, j]];
                (lo.min(x), hi.max(x))
            });
            if hi - lo > best.1 {
                best = (j, hi - lo);
            }
        }
        if best.1 <= S::zero() {
            return id;
        }
        let dim = best.0;
        let points = &self.tree_points;
        self.order[start..end].sort_by(|&a, &b| {
            points[[a, dim]]
                .partial_cmp(&points[[b, dim]])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mid = start + (end - start) / 2;
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vectors(&self) -> &Array2<S> {
        &self.vectors
    }

    /// Upper bound on the similarity of `query` to any point in `node`, and
    /// the tolerance to widen it by.
    fn bound(&self, node: &Node<S>, query: ArrayView1<S>, query_norm: S) -> (S, S) {
        let ub = match self.metric {
            Metric::Euclidean => -(distance(query, node.center.view()) - node.radius).max(S::zero()),
            Metric::InnerProduct | Metric::Cosine => query.dot(&node.center) + query_norm * node.radius,
        };
        let slack = S::epsilon().sqrt() * (S::one() + ub.abs() + query_norm * (node.center_norm + node.radius));
        (ub, slack)
    }

    /// Top `k` entities by [`Metric::similarity`], ties broken by ascending
    /// name; identical to brute force.
    pub fn query(&self, query: ArrayView1<S>, k: usize) -> Result<Vec<(EntityId, S)>, KnnError> {
        if k == 0 {
            return Err(KnnError::ZeroK);
        }
        if query.len() != self.dim() {
            return Err(KnnError::DimensionMismatch {
                query: query.len(),
                index: self.dim(),
            });
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(KnnError::NonFiniteQuery);
        }
        let k = k.min(self.len());
        let bound_query = match self.metric {
            Metric::Cosine => {
                let n = norm(query);
                if n.is_zero() {
                    query.to_owned()
                } else {
                    query.mapv(|x| x / n)
                }
            }
            _ => query.to_owned(),
        };
        let query_norm = norm(bound_query.view());

        let mut best: Vec<(EntityId, S)> = Vec::with_capacity(k + 1);
        let mut frontier = BinaryHeap::new();
        let (ub, slack) = self.bound(&self.nodes[0], bound_query.view(), query_norm);
        frontier.push(Frontier { bound: ub, slack, node: 0 });
        while let Some(Frontier { bound, slack, node }) = frontier.pop() {
            if best.len() == k && bound + slack < best[k - 1].1 {
                break;
            }
            let node = &self.nodes[node];
            match node.children {
                Some((left, right)) => {
                    for child in [left, right] {
                        let (ub, slack) = self.bound(&self.nodes[child], bound_query.view(), query_norm);
                        if best.len() < k || ub + slack >= best[k - 1].1 {
                            frontier.push(Frontier { bound: ub, slack, node: child });
                        }
                    }
                }
                None => {
                    for &id in &self.order[node.start..node.end] {
                        let score = self.metric.similarity(query, self.vectors.row(id));
                        let candidate = (id, score);
                        let pos = best
                            .binary_search_by(|probe| {
                                compare_ranked(probe.1, &self.names[probe.0], candidate.1, &self.names[id])
                            })
                            .unwrap_or_else(|p| p);
                        if pos < k {
                            best.insert(pos, candidate);
                            best.truncate(k);
                        }
                    }
                }
            }
        }
        Ok(best)
    }

    /// [`KnnIndex::query`] packaged as a ranking for `query_id`.
    pub fn knn_query(&self, query_id: &str, query: ArrayView1<S>, k: usize) -> Result<EntityRanking, KnnError> {
        let hits = self.query(query, k)?;
        Ok(EntityRanking {
            query_id: query_id.to_string(),
            entries: hits
                .into_iter()
                .enumerate()
                .map(|(i, (id, score))| RankedEntity {
                    entity: self.names[id].clone(),
                    score: score.to_f64_lossy(),
                    rank: i + 1,
                })
                .collect(),
        })
    }
}

struct Frontier<S> {
    bound: S,
    slack: S,
    node: usize,
}

impl<S: Scalar> PartialEq for Frontier<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Frontier<S> {}

impl<S: Scalar> PartialOrd for Frontier<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Frontier<S> {
    // max-heap on the widened bound, then lower node id first
    fn cmp(&self, other: &Self) -> Ordering {
        (self.bound + self.slack)
            .partial_cmp(&(other.bound + other.slack))
            .unwrap_or(Ordering::Equal)
            .then(other.node.cmp(&self.node))
    }
}
