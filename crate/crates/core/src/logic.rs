//! Design-logic extraction and graph-based deduplication.
//!
//! Deduplication builds an undirected graph over the logics of one
//! discipline, joining `i` and `j` when their similarity exceeds the
//! threshold, and keeps from every connected component the member whose
//! summed similarity to the rest of its component is largest.

use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{LlmContext, Role, Warnings};
use crate::dsu::DisjointSet;
use crate::gateway::GatewayError;
use crate::model::{DesignLogic, EmbeddingVector, LogicStatus, QuestionRecord};
use crate::prompts;
use crate::vector::{self, VectorError};

/// Largest n for which the full similarity matrix is materialized.
pub const DENSE_LIMIT: usize = 20_000;

pub const DEFAULT_TAU: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MermaidError {
    #[error("missing diagram keyword (graph/flowchart)")]
    MissingKeyword,
    #[error("no edge arrow")]
    NoEdge,
    #[error("unbalanced brackets")]
    UnbalancedBrackets,
}

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("completion contains no mermaid block")]
    NoMermaidBlock { raw: String },
    #[error("invalid mermaid: {reason}")]
    InvalidMermaid { raw: String, reason: MermaidError },
    #[error("logic {0} has no embedding")]
    MissingEmbedding(String),
    #[error("logics span several disciplines")]
    MixedDisciplines,
    #[error(transparent)]
    Similarity(#[from] VectorError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl ForgeError {
    /// Raw completion for quarantine, when the failure was a parse failure.
    pub fn raw(&self) -> Option<&str> {
        match self {
            ForgeError::NoMermaidBlock { raw } | ForgeError::InvalidMermaid { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

const ARROWS: &[&str] = &["-->", "---", "-.->", "-.-", "==>", "===", "--o", "--x", "<-->"];

/// Structural check: leading diagram keyword, at least one edge, balanced
/// brackets outside quoted labels.
pub fn validate_mermaid(text: &str) -> Result<(), MermaidError> {
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or(MermaidError::MissingKeyword)?;
    let keyword = first
        .split(|c: char| c.is_whitespace() || c == ';')
        .next()
        .unwrap_or("")
        .to_ascii_lowercase();
    if keyword != "graph" && keyword != "flowchart" {
        return Err(MermaidError::MissingKeyword);
    }
    if !ARROWS.iter().any(|a| text.contains(a)) {
        return Err(MermaidError::NoEdge);
    }
    let mut stack = Vec::new();
    let mut in_quote = false;
    for c in text.chars() {
        if c == '"' {
            in_quote = !in_quote;
            continue;
        }
        if in_quote {
            continue;
        }
        match c {
            '(' | '[' | '{' => stack.push(c),
            ')' | ']' | '}' => {
                let open = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                if stack.pop() != Some(open) {
                    return Err(MermaidError::UnbalancedBrackets);
                }
            }
            _ => {}
        }
    }
    if !stack.is_empty() || in_quote {
        return Err(MermaidError::UnbalancedBrackets);
    }
    Ok(())
}

fn mermaid_fence() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)```[ \t]*mermaid[^\n]*\n(.*?)```").unwrap())
}

/// Bodies of every fenced mermaid block, in order.
pub fn mermaid_blocks(completion: &str) -> Vec<&str> {
    mermaid_fence()
        .captures_iter(completion)
        .map(|c| c.get(1).unwrap().as_str().trim_end())
        .collect()
}

/// Renders the extraction prompt for `q`, keeps the last mermaid block of
/// the completion and validates it.
pub fn extract_design_logic(ctx: &LlmContext, q: &QuestionRecord) -> Result<DesignLogic, ForgeError> {
    let raw = ctx.complete(Role::Extractor, prompts::render_logic_extraction(&q.text))?;
    logic_from_completion(ctx, q, raw)
}

fn logic_from_completion(ctx: &LlmContext, q: &QuestionRecord, raw: String) -> Result<DesignLogic, ForgeError> {
    let blocks = mermaid_blocks(&raw);
    let Some(body) = blocks.last() else {
        return Err(ForgeError::NoMermaidBlock { raw });
    };
    if blocks.len() > 1 {
        Warnings::bump(&ctx.warnings.multiple_mermaid_blocks);
    }
    let body = body.trim().to_string();
    if let Err(reason) = validate_mermaid(&body) {
        return Err(ForgeError::InvalidMermaid { raw, reason });
    }
    Ok(DesignLogic::new(q, body))
}

/// Symmetric cosine-similarity matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds from row-major entries, enforcing symmetry, unit diagonal and
    /// finiteness.
    pub fn from_dense(n: usize, entries: Vec<f64>) -> Result<Self, String> {
        if entries.len() != n * n {
            return Err(format!("expected {} entries, got {}", n * n, entries.len()));
        }
        for i in 0..n {
            if entries[i * n + i] != 1.0 {
                return Err(format!("diagonal entry {i} is not 1"));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !v.is_finite() {
                    return Err(format!("entry ({i},{j}) is not finite"));
                }
                if v != entries[j * n + i] {
                    return Err(format!("entry ({i},{j}) breaks symmetry"));
                }
            }
        }
        Ok(SimilarityMatrix { n, entries })
    }

    /// Convenience for tests and small instances: unit diagonal, all other
    /// entries `fill`, then the listed symmetric overrides.
    pub fn with_pairs(n: usize, fill: f64, pairs: &[(usize, usize, f64)]) -> Self {
        let mut entries = vec![fill; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        for &(i, j, v) in pairs {
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
        SimilarityMatrix { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }
}

/// Pairwise cosine similarity of `embeddings`.
pub fn pairwise_similarity(embeddings: &[EmbeddingVector]) -> Result<SimilarityMatrix, VectorError> {
    let unit = unit_rows(embeddings)?;
    let n = unit.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        // Same operand order for (i,j) and (j,i) keeps the matrix exactly symmetric.
                        let (a, b) = if i < j { (i, j) } else { (j, i) };
                        vector::dot(&unit[a], &unit[b]).clamp(-1.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    Ok(SimilarityMatrix {
        n,
        entries: rows.concat(),
    })
}

fn unit_rows(embeddings: &[EmbeddingVector]) -> Result<Vec<Vec<f64>>, VectorError> {
    let dim = embeddings.first().map_or(0, EmbeddingVector::dim);
    embeddings
        .iter()
        .map(|e| {
            if e.dim() != dim {
                return Err(VectorError::DimensionMismatch(dim, e.dim()));
            }
            vector::normalized(e.as_slice())
        })
        .collect()
}

/// Edge condition between two items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRule {
    /// `S_ij > tau`.
    #[default]
    Strict,
    /// `S_ij >= tau`.
    Inclusive,
}

impl EdgeRule {
    pub fn connects(self, similarity: f64, tau: f64) -> bool {
        match self {
            EdgeRule::Strict => similarity > tau,
            EdgeRule::Inclusive => similarity >= tau,
        }
    }
}

/// Undirected threshold graph; edges stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl DedupGraph {
    pub fn build(s: &SimilarityMatrix, tau: f64, rule: EdgeRule) -> Self {
        Self::build_with(s.n(), |i, j| s.get(i, j), tau, rule)
    }

    fn build_with<F>(n: usize, sim: F, tau: f64, rule: EdgeRule) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let edges = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let sim = &sim;
                ((i + 1)..n).filter_map(move |j| rule.connects(sim(i, j), tau).then_some((i, j)))
            })
            .collect();
        DedupGraph { n, edges }
    }

    /// Components with ascending members, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut dsu = DisjointSet::new(self.n);
        for &(i, j) in &self.edges {
            dsu.union(i, j);
        }
        dsu.groups()
    }
}

/// Connected components of the strict threshold graph.
pub fn connected_components(s: &SimilarityMatrix, tau: f64) -> Vec<Vec<usize>> {
    DedupGraph::build(s, tau, EdgeRule::Strict).components()
}

/// Member with the largest summed similarity to the rest of `component`;
/// ties go to the smallest id.
pub fn select_centroid(component: &[usize], s: &SimilarityMatrix) -> usize {
    centroid_with(component, |i, j| s.get(i, j))
}

fn centroid_with<F: Fn(usize, usize) -> f64>(component: &[usize], sim: F) -> usize {
    assert!(!component.is_empty(), "component must be non-empty");
    let mut best = (component[0], f64::NEG_INFINITY);
    let mut members = component.to_vec();
    members.sort_unstable();
    for &i in &members {
        let total: f64 = members.iter().filter(|&&j| j != i).map(|&j| sim(i, j)).sum();
        if total > best.1 {
            best = (i, total);
        }
    }
    best.0
}

/// Result of deduplicating one discipline's logics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupOutcome {
    pub input: usize,
    pub components: usize,
    /// Indices of kept logics, ascending.
    pub kept: Vec<usize>,
    pub dropped: usize,
}

/// Keeps one centroid per component of the similarity graph over
/// `logics`; marks every other member `dropped_duplicate`.
pub fn dedup_design_logics(logics: &mut [DesignLogic], tau: f64, rule: EdgeRule) -> Result<DedupOutcome, ForgeError> {
    if let Some(first) = logics.first() {
        if logics.iter().any(|l| l.discipline != first.discipline) {
            return Err(ForgeError::MixedDisciplines);
        }
    }
    let embeddings: Vec<EmbeddingVector> = logics
        .iter()
        .map(|l| l.embedding.clone().ok_or_else(|| ForgeError::MissingEmbedding(l.id.clone())))
        .collect::<Result<_, _>>()?;
    let kept = if logics.len() <= DENSE_LIMIT {
        let s = pairwise_similarity(&embeddings)?;
        select_representatives(s.n(), |i, j| s.get(i, j), tau, rule)
    } else {
        let unit = unit_rows(&embeddings)?;
        let sim = |i: usize, j: usize| {
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            vector::dot(&unit[a], &unit[b]).clamp(-1.0, 1.0)
        };
        select_representatives(unit.len(), sim, tau, rule)
    };
    Ok(apply_dedup(logics, kept))
}

/// Like [`dedup_design_logics`] but over a precomputed similarity matrix,
/// which need not come from embeddings.
pub fn dedup_design_logics_with(logics: &mut [DesignLogic], s: &SimilarityMatrix, tau: f64, rule: EdgeRule) -> Result<DedupOutcome, ForgeError> {
    if s.n() != logics.len() {
        return Err(ForgeError::Similarity(VectorError::DimensionMismatch(s.n(), logics.len())));
    }
    Ok(apply_dedup(logics, select_representatives(s.n(), |i, j| s.get(i, j), tau, rule)))
}

fn apply_dedup(logics: &mut [DesignLogic], (components, kept): (usize, Vec<usize>)) -> DedupOutcome {
    let mut is_kept = vec![false; logics.len()];
    for &k in &kept {
        is_kept[k] = true;
    }
    for (logic, keep) in logics.iter_mut().zip(&is_kept) {
        if !keep {
            logic.status = LogicStatus::DroppedDuplicate;
        }
    }
    DedupOutcome {
        input: logics.len(),
        components,
        dropped: logics.len() - kept.len(),
        kept,
    }
}

/// Returns (component count, ascending centroid indices).
pub fn select_representatives<F>(n: usize, sim: F, tau: f64, rule: EdgeRule) -> (usize, Vec<usize>)
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let graph = DedupGraph::build_with(n, &sim, tau, rule);
    let components = graph.components();
    let mut kept: Vec<usize> = components.iter().map(|c| centroid_with(c, &sim)).collect();
    kept.sort_unstable();
    (components.len(), kept)
}
