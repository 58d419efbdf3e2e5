//! Dataset statistics: label distributions, lengths and embedding-space
//! diversity.
//!
//! Pairwise sums are computed per row in parallel and reduced in row
//! order, so results are identical across thread counts.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DifficultyLabel, EmbeddingVector, QuestionRecord, QuestionType};
use crate::qbank::{kmeans, ClusterError};
use crate::vector::{self, dot, euclidean, VectorError};

pub const DEFAULT_SAMPLE: usize = 300_000;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("need at least {need} embeddings, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("no active records")]
    NoActiveRecords,
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

fn need_two(e: &[EmbeddingVector]) -> Result<(), AnalyticsError> {
    if e.len() < 2 {
        return Err(AnalyticsError::TooFew { need: 2, got: e.len() });
    }
    let d = e[0].dim();
    if let Some(bad) = e.iter().find(|v| v.dim() != d) {
        return Err(VectorError::DimensionMismatch(d, bad.dim()).into());
    }
    Ok(())
}

fn unit_rows(e: &[EmbeddingVector]) -> Result<Vec<Vec<f64>>, AnalyticsError> {
    e.iter()
        .map(|v| vector::normalized(v.as_slice()).map_err(Into::into))
        .collect()
}

/// Cosine of two rows from their unit versions; equal rows give exactly 1.
fn cos_between(e: &[EmbeddingVector], units: &[Vec<f64>], i: usize, j: usize) -> f64 {
    if e[i] == e[j] {
        return 1.0;
    }
    dot(&units[i], &units[j]).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDistances {
    pub cosine: f64,
    pub l2: f64,
}

/// Mean cosine distance and mean Euclidean distance over unique pairs.
pub fn mean_pairwise_distances(e: &[EmbeddingVector]) -> Result<PairwiseDistances, AnalyticsError> {
    need_two(e)?;
    let units = unit_rows(e)?;
    let rows: Vec<(f64, f64)> = (0..e.len())
        .into_par_iter()
        .map(|i| {
            let mut c = 0.0;
            let mut l = 0.0;
            for j in i + 1..e.len() {
                c += 1.0 - cos_between(e, &units, i, j);
                l += euclidean(e[i].as_slice(), e[j].as_slice());
            }
            (c, l)
        })
        .collect();
    let pairs = (e.len() * (e.len() - 1) / 2) as f64;
    let (c, l) = rows.iter().fold((0.0, 0.0), |acc, r| (acc.0 + r.0, acc.1 + r.1));
    Ok(PairwiseDistances {
        cosine: c / pairs,
        l2: l / pairs,
    })
}

/// Mean over points of the cosine distance to the nearest other point.
pub fn one_nn_distance(e: &[EmbeddingVector]) -> Result<f64, AnalyticsError> {
    need_two(e)?;
    let units = unit_rows(e)?;
    let nn: Vec<f64> = (0..e.len())
        .into_par_iter()
        .map(|i| {
            (0..e.len())
                .filter(|&j| j != i)
                .map(|j| 1.0 - cos_between(e, &units, i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(nn.iter().sum::<f64>() / e.len() as f64)
}

/// `round(sqrt(N / 2))`, at least 1 and at most N.
pub fn default_inertia_k(n: usize) -> usize {
    ((n as f64 / 2.0).sqrt().round() as usize).clamp(1, n.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inertia {
    pub inertia: f64,
    pub k: usize,
    pub seed: u64,
}

/// Sum of squared distances to the nearest of `k` k-means centers.
pub fn cluster_inertia(e: &[EmbeddingVector], k: usize, seed: u64) -> Result<Inertia, AnalyticsError> {
    let result = kmeans(e, k, seed)?;
    Ok(Inertia {
        inertia: result.inertia,
        k,
        seed,
    })
}

/// Geometric mean of per-dimension population standard deviations,
/// accumulated in log space; zero when any dimension is constant.
pub fn radius(e: &[EmbeddingVector]) -> Result<f64, AnalyticsError> {
    need_two(e)?;
    let n = e.len() as f64;
    let d = e[0].dim();
    if d == 0 {
        return Err(VectorError::DimensionMismatch(1, 0).into());
    }
    let mut log_sum = 0.0;
    for j in 0..d {
        let mean = e.iter().map(|v| v.as_slice()[j]).sum::<f64>() / n;
        let var = e.iter().map(|v| (v.as_slice()[j] - mean).powi(2)).sum::<f64>() / n;
        if var == 0.0 {
            return Ok(0.0);
        }
        log_sum += 0.5 * var.ln();
    }
    Ok((log_sum / d as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub n_sampled: usize,
    pub mean_cosine_distance: f64,
    pub mean_l2_distance: f64,
    pub one_nn_distance: f64,
    pub cluster_inertia: f64,
    pub inertia_k: usize,
    pub seed: u64,
    pub radius: f64,
}

/// All five diversity metrics; `k` defaults to [`default_inertia_k`].
pub fn diversity_report(e: &[EmbeddingVector], k: Option<usize>, seed: u64) -> Result<DiversityReport, AnalyticsError> {
    let pair = mean_pairwise_distances(e)?;
    let k = k.unwrap_or_else(|| default_inertia_k(e.len()));
    Ok(DiversityReport {
        n_sampled: e.len(),
        mean_cosine_distance: pair.cosine,
        mean_l2_distance: pair.l2,
        one_nn_distance: one_nn_distance(e)?,
        cluster_inertia: cluster_inertia(e, k, seed)?.inertia,
        inertia_k: k,
        seed,
        radius: radius(e)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub n_active: usize,
    /// Percent of active records carrying a type label.
    pub by_qtype: BTreeMap<String, f64>,
    pub by_difficulty: BTreeMap<String, f64>,
    pub unlabeled_qtype: usize,
    pub unlabeled_difficulty: usize,
    /// Mean question length in Unicode scalar values.
    pub avg_question_length: f64,
    /// Mean over records that carry a response.
    pub avg_response_length: Option<f64>,
}

fn percentages<K: Ord + Copy>(labels: impl Iterator<Item = K>, all: &[K], name: impl Fn(K) -> &'static str) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<K, usize> = all.iter().map(|k| (*k, 0)).collect();
    let mut n = 0usize;
    for l in labels {
        *counts.get_mut(&l).unwrap() += 1;
        n += 1;
    }
    counts
        .into_iter()
        .map(|(k, c)| (name(k).to_string(), if n == 0 { 0.0 } else { c as f64 * 100.0 / n as f64 }))
        .collect()
}

/// Type and difficulty percentages over labeled active records, plus mean
/// character lengths.
pub fn distribution_report(records: &[QuestionRecord]) -> Result<DistributionReport, AnalyticsError> {
    let active: Vec<&QuestionRecord> = records.iter().filter(|r| r.is_active()).collect();
    if active.is_empty() {
        return Err(AnalyticsError::NoActiveRecords);
    }
    let chars = |s: &str| s.chars().count() as f64;
    let responses: Vec<f64> = active.iter().filter_map(|r| r.response.as_deref()).map(chars).collect();
    Ok(DistributionReport {
        n_active: active.len(),
        by_qtype: percentages(active.iter().filter_map(|r| r.qtype), &QuestionType::ALL, QuestionType::as_str),
        by_difficulty: percentages(active.iter().filter_map(|r| r.difficulty), &DifficultyLabel::ALL, DifficultyLabel::as_str),
        unlabeled_qtype: active.iter().filter(|r| r.qtype.is_none()).count(),
        unlabeled_difficulty: active.iter().filter(|r| r.difficulty.is_none()).count(),
        avg_question_length: active.iter().map(|r| chars(&r.text)).sum::<f64>() / active.len() as f64,
        avg_response_length: (!responses.is_empty()).then(|| responses.iter().sum::<f64>() / responses.len() as f64),
    })
}

/// Seeded uniform sample without replacement, in original order. Takes
/// everything when `n` exceeds the population.
pub fn sample_uniform<T: Clone>(items: &[T], n: usize, seed: u64) -> Vec<T> {
    if n >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, items.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}
