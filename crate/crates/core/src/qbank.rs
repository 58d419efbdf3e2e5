//! Question-bank labeling and diverse, difficulty-skewed subset selection.
//!
//! Within a discipline, questions are clustered with seeded k-means (k
//! chosen by silhouette), each cluster receives an equal share of the
//! quota, and each share is split across Very Hard, Hard and Medium by a
//! fixed ratio.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{LlmContext, Role, Warnings};
use crate::curation::{label_discipline, largest_remainder};
use crate::gateway::GatewayError;
use crate::model::{DifficultyLabel, Discipline, EmbeddingVector, QuestionRecord, QuestionType};
use crate::prompts;
use crate::vector::{euclidean, squared_distance};

pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 100;
pub const MAX_SEARCH_K: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k = {k} outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("k range {lo}..={hi} outside 2..={max}")]
    InvalidRange { lo: usize, hi: usize, max: usize },
    #[error("silhouette undefined: all points coincide")]
    Degenerate,
    #[error("points have inconsistent dimensions")]
    DimensionMismatch,
}

fn difficulty_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)difficulty\s*:\s*\**\s*([a-z][a-z \-]*[a-z])").unwrap())
}

fn qtype_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)question\s*type\s*:\s*\**\s*([^\n*]+)").unwrap())
}

/// Last `Difficulty: <label>` in a completion.
pub fn parse_difficulty_output(raw: &str) -> Option<DifficultyLabel> {
    let label = difficulty_re().captures_iter(raw).last()?.get(1)?.as_str();
    DifficultyLabel::parse_label(label)
}

/// Last `Question type: <label>` in a completion; `None` when absent or
/// not one of the four kinds.
pub fn parse_qtype_output(raw: &str) -> Option<QuestionType> {
    let label = qtype_re().captures_iter(raw).last()?.get(1)?.as_str();
    let kind = QuestionType::from_label(label);
    let lower = label.trim().trim_matches(|c: char| c == '*' || c == '"').to_ascii_lowercase();
    (kind != QuestionType::Other || lower.starts_with("other")).then_some(kind)
}

/// Labels discipline, difficulty and type with three independent calls.
pub fn label_question(ctx: &LlmContext, q: &QuestionRecord) -> Result<QuestionRecord, GatewayError> {
    let mut out = q.clone();
    out.discipline = label_discipline(ctx, &q.text)?;
    let (difficulty, qtype) = label_difficulty_and_type(ctx, &q.text)?;
    out.difficulty = difficulty;
    out.qtype = Some(qtype);
    Ok(out)
}

/// Unparseable difficulty stays unset; unparseable type becomes `Other`.
/// Both cases are counted as warnings.
pub fn label_difficulty_and_type(ctx: &LlmContext, text: &str) -> Result<(Option<DifficultyLabel>, QuestionType), GatewayError> {
    let raw = ctx.complete(Role::Labeler, prompts::render_difficulty(text))?;
    let difficulty = parse_difficulty_output(&raw);
    if difficulty.is_none() {
        Warnings::bump(&ctx.warnings.unparseable_label);
    }
    let raw = ctx.complete(Role::Labeler, prompts::render_qtype(text))?;
    let qtype = parse_qtype_output(&raw).unwrap_or_else(|| {
        Warnings::bump(&ctx.warnings.unparseable_label);
        QuestionType::Other
    });
    Ok((difficulty, qtype))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.unwrap()
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.push(points[next].to_vec());
        let c = centroids.last().unwrap();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, c));
        }
    }
    centroids
}

/// Lloyd iterations from a seeded k-means++ start, until every centroid
/// moves less than [`KMEANS_TOL`] or [`KMEANS_MAX_ITER`] passes. Empty
/// clusters keep their previous centroid; ties go to the lower index.
pub fn kmeans(points: &[EmbeddingVector], k: usize, seed: u64) -> Result<KMeansResult, ClusterError> {
    let rows: Vec<&[f64]> = points.iter().map(EmbeddingVector::as_slice).collect();
    kmeans_slices(&rows, k, seed)
}

pub fn kmeans_slices(points: &[&[f64]], k: usize, seed: u64) -> Result<KMeansResult, ClusterError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(ClusterError::KOutOfRange { k, n });
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(ClusterError::DimensionMismatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    let (mut assignments, mut inertia) = assign(points, &centroids);
    history.push(inertia);
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p.iter()).for_each(|(s, x)| *s += x);
        }
        let mut movement: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            movement = movement.max(euclidean(&mean, &centroids[j]));
            centroids[j] = mean;
        }
        let (a, i) = assign(points, &centroids);
        assignments = a;
        inertia = i;
        history.push(inertia);
        if movement < KMEANS_TOL {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
    })
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let pairs: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, centroids)).collect();
    let inertia = pairs.iter().map(|p| p.1).sum();
    (pairs.into_iter().map(|p| p.0).collect(), inertia)
}

/// Mean silhouette coefficient under Euclidean distance; points alone in
/// their cluster score 0.
pub fn silhouette(points: &[&[f64]], assignments: &[usize]) -> f64 {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    assignments.iter().for_each(|&a| sizes[a] += 1);
    let scores: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    sums[assignments[j]] += euclidean(points[i], p);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    scores.iter().sum::<f64>() / points.len() as f64
}

pub fn default_k_range(n: usize) -> RangeInclusive<usize> {
    2..=MAX_SEARCH_K.min(n.saturating_sub(1)).max(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteSearch {
    pub k: usize,
    pub scores: Vec<(usize, f64)>,
    pub clustering: KMeansResult,
}

/// Runs k-means with `seed` for every k in range and keeps the highest
/// mean silhouette, preferring the smaller k on ties.
pub fn choose_k_by_silhouette(points: &[EmbeddingVector], k_range: RangeInclusive<usize>, seed: u64) -> Result<SilhouetteSearch, ClusterError> {
    let rows: Vec<&[f64]> = points.iter().map(EmbeddingVector::as_slice).collect();
    let n = rows.len();
    if n < 3 {
        return Err(ClusterError::TooFewPoints(n));
    }
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi > n - 1 || lo > hi {
        return Err(ClusterError::InvalidRange { lo, hi, max: n - 1 });
    }
    if rows.iter().all(|p| *p == rows[0]) {
        return Err(ClusterError::Degenerate);
    }
    let mut best: Option<(f64, KMeansResult, usize)> = None;
    let mut scores = Vec::new();
    for k in k_range {
        let result = kmeans_slices(&rows, k, seed)?;
        let s = silhouette(&rows, &result.assignments);
        scores.push((k, s));
        if best.as_ref().is_none_or(|b| s > b.0) {
            best = Some((s, result, k));
        }
    }
    let (_, clustering, k) = best.unwrap();
    Ok(SilhouetteSearch { k, scores, clustering })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub question_id: String,
    pub cluster_index: usize,
    pub discipline: Discipline,
}

/// Very Hard : Hard : Medium weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifficultyRatio(pub [u32; 3]);

impl Default for DifficultyRatio {
    fn default() -> Self {
        DifficultyRatio([3, 2, 1])
    }
}

impl DifficultyRatio {
    /// Strata the ratio covers, hardest first.
    pub const STRATA: [DifficultyLabel; 3] = [DifficultyLabel::VeryHard, DifficultyLabel::Hard, DifficultyLabel::Medium];

    pub fn targets(&self, share: usize) -> [usize; 3] {
        let w: Vec<f64> = self.0.iter().map(|&x| x as f64).collect();
        let t = largest_remainder(&w, share);
        [t[0], t[1], t[2]]
    }
}

impl fmt::Display for DifficultyRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.0[0], self.0[1], self.0[2])
    }
}

impl FromStr for DifficultyRatio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<u32> = s
            .split(':')
            .map(|p| p.trim().parse::<u32>().map_err(|e| format!("ratio {s:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [a, b, c] if a + b + c > 0 => Ok(DifficultyRatio([a, b, c])),
            [_, _, _] => Err(format!("ratio {s:?} has zero total")),
            _ => Err(format!("ratio {s:?} must have three parts")),
        }
    }
}

impl Serialize for DifficultyRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DifficultyRatio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Splits `quota` equally across clusters, capped by cluster size; any
/// capped remainder is re-split over clusters that still have room.
pub fn cluster_shares(sizes: &[usize], quota: usize) -> Vec<usize> {
    let mut shares = vec![0usize; sizes.len()];
    let mut left = quota.min(sizes.iter().sum());
    while left > 0 {
        let open: Vec<usize> = (0..sizes.len()).filter(|&c| shares[c] < sizes[c]).collect();
        let split = largest_remainder(&vec![1.0; open.len()], left);
        for (&c, add) in open.iter().zip(split) {
            let take = add.min(sizes[c] - shares[c]);
            shares[c] += take;
            left -= take;
        }
    }
    shares
}

/// Order in which strata are drawn when `short` runs out: harder strata
/// nearest first, then easier ones nearest first, Easy last.
fn backfill_order(short: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..short).rev().collect();
    order.extend(short + 1..3);
    order.push(3);
    order
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StratifiedSample {
    pub selected: Vec<QuestionRecord>,
    pub per_cluster: Vec<usize>,
    pub per_difficulty: BTreeMap<String, usize>,
}

/// Draws `quota` questions: equal shares per non-empty cluster, each share
/// split by `ratio` and drawn uniformly with `seed`. Unlabeled questions
/// rank with Easy and are used only once all ratio strata are exhausted.
pub fn stratified_sample(clusters: &[Vec<QuestionRecord>], quota: usize, ratio: DifficultyRatio, seed: u64) -> StratifiedSample {
    let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    let shares = cluster_shares(&sizes, quota);
    let mut out = StratifiedSample {
        per_cluster: vec![0; clusters.len()],
        per_difficulty: DifficultyLabel::ALL.iter().map(|d| (d.as_str().to_string(), 0)).collect(),
        ..Default::default()
    };
    for (c, cluster) in clusters.iter().enumerate() {
        if shares[c] == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut pools: [Vec<&QuestionRecord>; 4] = Default::default();
        for q in cluster {
            let slot = match q.difficulty {
                Some(DifficultyLabel::VeryHard) => 0,
                Some(DifficultyLabel::Hard) => 1,
                Some(DifficultyLabel::Medium) => 2,
                _ => 3,
            };
            pools[slot].push(q);
        }
        pools.iter_mut().for_each(|p| p.shuffle(&mut rng));
        let targets = ratio.targets(shares[c]);
        let mut taken = [0usize; 4];
        for s in 0..3 {
            taken[s] = targets[s].min(pools[s].len());
        }
        let own = taken;
        for s in 0..3 {
            let mut deficit = targets[s] - own[s];
            for donor in backfill_order(s) {
                if deficit == 0 {
                    break;
                }
                let spare = pools[donor].len() - taken[donor];
                let extra = spare.min(deficit);
                taken[donor] += extra;
                deficit -= extra;
            }
        }
        for s in 0..4 {
            for q in &pools[s][..taken[s]] {
                let key = q.difficulty.unwrap_or(DifficultyLabel::Easy).as_str().to_string();
                *out.per_difficulty.get_mut(&key).unwrap() += 1;
                out.selected.push((*q).clone());
            }
            out.per_cluster[c] += taken[s];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[&[f64]]) -> Vec<EmbeddingVector> {
        v.iter().map(|p| EmbeddingVector::new(p.to_vec()).unwrap()).collect()
    }

    fn q(i: usize, d: Option<DifficultyLabel>) -> QuestionRecord {
        let mut r = QuestionRecord::bank(format!("q{i:04}"), format!("question {i}"), Discipline::unknown());
        r.difficulty = d;
        r
    }

    fn cluster(vh: usize, h: usize, m: usize, e: usize, start: usize) -> Vec<QuestionRecord> {
        use DifficultyLabel::*;
        let mut out = Vec::new();
        for (count, d) in [(vh, VeryHard), (h, Hard), (m, Medium), (e, Easy)] {
            for _ in 0..count {
                out.push(q(start + out.len(), Some(d)));
            }
        }
        out
    }

    fn counts(s: &StratifiedSample) -> [usize; 4] {
        ["Very Hard", "Hard", "Medium", "Easy"].map(|k| s.per_difficulty[k])
    }

    #[test]
    fn label_parsers() {
        assert_eq!(parse_difficulty_output("\"Difficulty: Very Hard\""), Some(DifficultyLabel::VeryHard));
        assert_eq!(parse_difficulty_output("Difficulty: **Easy**"), Some(DifficultyLabel::Easy));
        assert_eq!(parse_difficulty_output("Difficulty: Impossible"), None);
        assert_eq!(parse_qtype_output("Question type: Multiple-choice question"), Some(QuestionType::MultipleChoice));
        assert_eq!(parse_qtype_output("Question type: Other question types"), Some(QuestionType::Other));
        assert_eq!(parse_qtype_output("Question type: Essay"), None);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let p = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[5.0, 5.0], &[5.0, 5.0]]);
        let r = kmeans(&p, 4, 3).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn k_one_is_the_mean() {
        let p = pts(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, 8.0]]);
        let r = kmeans(&p, 1, 0).unwrap();
        assert!((r.centroids[0][0] - 2.0).abs() < 1e-12 && (r.centroids[0][1] - 4.0).abs() < 1e-12);
        assert!((r.inertia - (4.0 + 9.0 + 0.0 + 1.0 + 4.0 + 16.0)).abs() < 1e-9);
    }

    #[test]
    fn k_out_of_range() {
        let p = pts(&[&[0.0], &[1.0]]);
        assert_eq!(kmeans(&p, 0, 0).unwrap_err(), ClusterError::KOutOfRange { k: 0, n: 2 });
        assert!(kmeans(&p, 3, 0).is_err());
    }

    #[test]
    fn separated_blobs_split_exactly() {
        let mut v: Vec<Vec<f64>> = Vec::new();
        for i in 0..10 {
            v.push(vec![i as f64 * 0.01, 0.0]);
            v.push(vec![100.0 + i as f64 * 0.01, 0.0]);
        }
        let p: Vec<EmbeddingVector> = v.into_iter().map(|x| EmbeddingVector::new(x).unwrap()).collect();
        let r = kmeans(&p, 2, 11).unwrap();
        for i in (0..20).step_by(2) {
            assert_eq!(r.assignments[i], r.assignments[0]);
            assert_ne!(r.assignments[i + 1], r.assignments[0]);
        }
    }

    #[test]
    fn duplicated_blob_points_pick_two() {
        let p = pts(&[&[0.0, 0.0], &[0.0, 0.0], &[10.0, 10.0], &[10.0, 10.0]]);
        assert_eq!(choose_k_by_silhouette(&p, 2..=3, 1).unwrap().k, 2);
    }

    #[test]
    fn silhouette_errors() {
        let same = pts(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        assert_eq!(choose_k_by_silhouette(&same, 2..=3, 0).unwrap_err(), ClusterError::Degenerate);
        assert_eq!(choose_k_by_silhouette(&same[..2], 2..=2, 0).unwrap_err(), ClusterError::TooFewPoints(2));
        let p = pts(&[&[0.0], &[1.0], &[2.0]]);
        assert!(matches!(choose_k_by_silhouette(&p, 2..=3, 0), Err(ClusterError::InvalidRange { .. })));
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("3:2:1".parse::<DifficultyRatio>().unwrap(), DifficultyRatio::default());
        assert!("3:2".parse::<DifficultyRatio>().is_err());
        assert!("0:0:0".parse::<DifficultyRatio>().is_err());
        assert_eq!(DifficultyRatio::default().to_string(), "3:2:1");
    }

    #[test]
    fn single_cluster_abundant_strata() {
        let s = stratified_sample(&[cluster(10, 10, 10, 10, 0)], 6, DifficultyRatio::default(), 5);
        assert_eq!(counts(&s), [3, 2, 1, 0]);
    }

    #[test]
    fn two_clusters_split_evenly() {
        let s = stratified_sample(&[cluster(10, 10, 10, 0, 0), cluster(10, 10, 10, 0, 100)], 6, DifficultyRatio::default(), 5);
        assert_eq!(s.per_cluster, vec![3, 3]);
    }

    #[test]
    fn missing_very_hard_backfills_from_hard() {
        let s = stratified_sample(&[cluster(0, 10, 10, 10, 0)], 6, DifficultyRatio::default(), 5);
        assert_eq!(counts(&s), [0, 5, 1, 0]);
    }

    #[test]
    fn easy_only_when_everything_else_is_gone() {
        let s = stratified_sample(&[cluster(1, 1, 1, 10, 0)], 6, DifficultyRatio::default(), 5);
        assert_eq!(counts(&s), [1, 1, 1, 3]);
    }

    #[test]
    fn empty_and_small_clusters_redistribute() {
        let s = stratified_sample(&[vec![], cluster(1, 0, 0, 0, 0), cluster(10, 10, 10, 0, 100)], 6, DifficultyRatio::default(), 5);
        assert_eq!(s.per_cluster, vec![0, 1, 5]);
        assert_eq!(s.selected.len(), 6);
    }

    #[test]
    fn sampling_is_seeded() {
        let c = [cluster(20, 20, 20, 20, 0)];
        let a = stratified_sample(&c, 12, DifficultyRatio::default(), 9);
        let b = stratified_sample(&c, 12, DifficultyRatio::default(), 9);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn inertia_never_increases(raw in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 5..40), k in 1usize..5, seed in any::<u64>()) {
            let p: Vec<EmbeddingVector> = raw.into_iter().map(|x| EmbeddingVector::new(x).unwrap()).collect();
            let k = k.min(p.len());
            let r = kmeans(&p, k, seed).unwrap();
            prop_assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
            prop_assert!(r.assignments.iter().all(|&a| a < k));
            prop_assert_eq!(r, kmeans(&p, k, seed).unwrap());
        }

        #[test]
        fn sample_size_and_targets(sizes in prop::collection::vec((0usize..8, 0usize..8, 0usize..8, 0usize..8), 1..5), quota in 0usize..60, seed in any::<u64>()) {
            let clusters: Vec<Vec<QuestionRecord>> = sizes.iter().enumerate().map(|(c, &(a, b, m, e))| cluster(a, b, m, e, c * 100)).collect();
            let pool: usize = clusters.iter().map(Vec::len).sum();
            let s = stratified_sample(&clusters, quota, DifficultyRatio::default(), seed);
            prop_assert_eq!(s.selected.len(), quota.min(pool));
            let mut ids: Vec<&str> = s.selected.iter().map(|q| q.id.as_str()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), s.selected.len());
        }
    }
}
