//! Exact cosine-distance k-nearest-neighbor classification.
//!
//! Neighbors are ranked by `(distance, field_id)`, so a tie at rank k goes to
//! the smaller field id. A tied class vote goes to the class whose neighbors
//! have the smaller distance sum, then to the smaller class id.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::class::CropClass;
use crate::indices::{FeatureDataset, FeatureVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KnnError {
    #[error("zero vector has no cosine distance")]
    ZeroVector,
    #[error("reference field {0} is a zero vector")]
    ZeroReference(i32),
    #[error("model has no reference vectors")]
    EmptyModel,
    #[error("vector length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k = {k} is not in [1, {max}]")]
    InvalidK { k: usize, max: usize },
    #[error("{} of the queries failed, first at index {}: {}", .0.len(), .0[0].0, .0[0].1)]
    Batch(Vec<(usize, KnnError)>),
}

fn squared_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn distance_from_parts(dot: f64, na2: f64, nb2: f64) -> f64 {
    // sqrt(na2 * nb2) keeps the self-distance exactly zero.
    (1.0 - dot / (na2 * nb2).sqrt()).clamp(0.0, 2.0)
}

/// `1 − a·b / (‖a‖‖b‖)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, KnnError> {
    if a.len() != b.len() {
        return Err(KnnError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na2, nb2) = (squared_norm(a), squared_norm(b));
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(KnnError::ZeroVector);
    }
    Ok(distance_from_parts(dot(a, b), na2, nb2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborResult {
    pub neighbor_ids: Vec<i32>,
    pub distances: Vec<f64>,
    pub votes: BTreeMap<CropClass, usize>,
    pub predicted: CropClass,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub field_id: i32,
    pub label: CropClass,
    pub distance: f64,
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.field_id.cmp(&b.field_id))
}

/// Majority vote over an ascending neighbor list.
pub fn vote(neighbors: &[Neighbor]) -> NeighborResult {
    let mut votes: BTreeMap<CropClass, usize> = BTreeMap::new();
    let mut sums: BTreeMap<CropClass, f64> = BTreeMap::new();
    for n in neighbors {
        *votes.entry(n.label).or_insert(0) += 1;
        *sums.entry(n.label).or_insert(0.0) += n.distance;
    }
    let predicted = votes
        .iter()
        .min_by(|(ca, na), (cb, nb)| {
            nb.cmp(na)
                .then(sums[ca].total_cmp(&sums[cb]))
                .then(ca.cmp(cb))
        })
        .map(|(c, _)| *c)
        .expect("at least one neighbor");
    NeighborResult {
        neighbor_ids: neighbors.iter().map(|n| n.field_id).collect(),
        distances: neighbors.iter().map(|n| n.distance).collect(),
        votes,
        predicted,
    }
}

#[derive(Clone, Debug)]
struct Reference {
    field_id: i32,
    label: CropClass,
    values: Vec<f64>,
    norm2: f64,
}

/// Immutable reference set plus k.
#[derive(Clone, Debug)]
pub struct KnnModel {
    refs: Vec<Reference>,
    dim: usize,
    k: usize,
}

impl KnnModel {
    pub fn new(reference: &FeatureDataset, k: usize) -> Result<Self, KnnError> {
        Self::from_vectors(reference.features(), k)
    }

    pub fn from_vectors(reference: &[FeatureVector], k: usize) -> Result<Self, KnnError> {
        let first = reference.first().ok_or(KnnError::EmptyModel)?;
        let dim = first.values.len();
        if k == 0 || k > reference.len() {
            return Err(KnnError::InvalidK {
                k,
                max: reference.len(),
            });
        }
        let refs = reference
            .iter()
            .map(|f| {
                if f.values.len() != dim {
                    return Err(KnnError::DimensionMismatch {
                        expected: dim,
                        found: f.values.len(),
                    });
                }
                let norm2 = squared_norm(&f.values);
                if norm2 == 0.0 {
                    return Err(KnnError::ZeroReference(f.field_id));
                }
                Ok(Reference {
                    field_id: f.field_id,
                    label: f.label,
                    values: f.values.clone(),
                    norm2,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { refs, dim, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// The `depth` nearest references in ascending `(distance, field_id)`.
    pub fn nearest(&self, query: &[f64], depth: usize) -> Result<Vec<Neighbor>, KnnError> {
        if query.len() != self.dim {
            return Err(KnnError::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let qn2 = squared_norm(query);
        if qn2 == 0.0 {
            return Err(KnnError::ZeroVector);
        }
        let mut all: Vec<Neighbor> = self
            .refs
            .iter()
            .map(|r| Neighbor {
                field_id: r.field_id,
                label: r.label,
                distance: distance_from_parts(dot(query, &r.values), qn2, r.norm2),
            })
            .collect();
        let depth = depth.min(all.len());
        if depth == 0 {
            return Ok(Vec::new());
        }
        if depth < all.len() {
            all.select_nth_unstable_by(depth - 1, neighbor_order);
            all.truncate(depth);
        }
        all.sort_unstable_by(neighbor_order);
        Ok(all)
    }

    pub fn predict(&self, query: &[f64]) -> Result<NeighborResult, KnnError> {
        Ok(vote(&self.nearest(query, self.k)?))
    }

    /// `predict` over every query, in query order.
    pub fn predict_batch(
        &self,
        queries: &[FeatureVector],
    ) -> Result<Vec<NeighborResult>, KnnError> {
        let results: Vec<Result<NeighborResult, KnnError>> = queries
            .par_iter()
            .map(|q| self.predict(&q.values))
            .collect();
        let mut out = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(r) => out.push(r),
                Err(e) => failures.push((i, e)),
            }
        }
        if failures.is_empty() {
            Ok(out)
        } else {
            Err(KnnError::Batch(failures))
        }
    }
}
