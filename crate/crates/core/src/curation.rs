//! Book and web corpus curation.
//!
//! Books are split into bounded blocks, near-duplicate blocks removed,
//! and a quality-ranked sample drawn per discipline under quotas. Web
//! pages are scored with the reasoning rubric and kept above a threshold.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{LlmContext, Role, Warnings};
use crate::gateway::GatewayError;
use crate::model::{content_id, Discipline, Document, Readability, SourceKind, MAX_SEGMENT_WORDS};
use crate::postproc::{near_duplicates, DuplicateGroups, MinHashParams, PostprocError};
use crate::prompts;

pub const DEFAULT_MIN_SCORE: u8 = 3;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("max_words must be at least 1")]
    InvalidMaxWords,
    #[error("unparseable reasoning score")]
    UnparseableScore { raw: String },
    #[error("unparseable classifier output")]
    UnparseableClassifier { raw: String },
    #[error("document {0} has no reasoning score")]
    UnscoredDocument(String),
    #[error("all discipline frequencies are zero")]
    AllZeroFrequencies,
    #[error(transparent)]
    Postproc(#[from] PostprocError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl CurationError {
    pub fn raw(&self) -> Option<&str> {
        match self {
            CurationError::UnparseableScore { raw } | CurationError::UnparseableClassifier { raw } => Some(raw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookChapter {
    pub book_id: String,
    pub chapter_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebPage {
    pub id: String,
    pub text: String,
}

impl WebPage {
    pub fn into_document(self) -> Document {
        let mut doc = Document::new(SourceKind::Web, self.text);
        doc.id = self.id;
        doc
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<Document>,
    pub empty_chapters: usize,
}

/// Byte spans of whitespace-separated words.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// One segment per chapter of at most `max_words` words, otherwise
/// consecutive blocks of `max_words` words cut at word boundaries. Blocks
/// keep the chapter's original spacing between their first and last word.
pub fn segment_book(chapters: &[BookChapter], max_words: usize) -> Result<Segmentation, CurationError> {
    if max_words == 0 {
        return Err(CurationError::InvalidMaxWords);
    }
    let mut out = Segmentation::default();
    for ch in chapters {
        let spans = word_spans(&ch.text);
        if spans.is_empty() {
            out.empty_chapters += 1;
            continue;
        }
        let blocks: Vec<&str> = if spans.len() <= max_words {
            vec![ch.text.as_str()]
        } else {
            spans
                .chunks(max_words)
                .map(|c| &ch.text[c[0].0..c[c.len() - 1].1])
                .collect()
        };
        for (b, text) in blocks.into_iter().enumerate() {
            let mut doc = Document::new(SourceKind::Book, text);
            doc.id = content_id("doc", &["book", &ch.book_id, &ch.chapter_index.to_string(), &b.to_string()]);
            out.segments.push(doc);
        }
    }
    Ok(out)
}

pub fn segment_book_default(chapters: &[BookChapter]) -> Result<Segmentation, CurationError> {
    segment_book(chapters, MAX_SEGMENT_WORDS)
}

/// Removes near-duplicate segments, keeping the earliest of each group.
pub fn dedup_segments(docs: &mut Vec<Document>, params: &MinHashParams) -> Result<DuplicateGroups, CurationError> {
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let groups = near_duplicates(&texts, params)?;
    let mut drop = vec![false; docs.len()];
    groups.dropped.iter().for_each(|&i| drop[i] = true);
    let mut i = 0;
    docs.retain(|_| {
        i += 1;
        !drop[i - 1]
    });
    Ok(groups)
}

fn final_score_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^#+\s*Final score\s*:?\s*$").unwrap())
}

fn score_value_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\s*\[]*(-?\d+)\b").unwrap())
}

/// Integer following the last `## Final score` heading, if in 0..=5.
pub fn parse_final_score(raw: &str) -> Option<u8> {
    let heading = final_score_re().find_iter(raw).last()?;
    let caps = score_value_re().captures(&raw[heading.end()..])?;
    let value: i64 = caps[1].parse().ok()?;
    (0..=5).contains(&value).then_some(value as u8)
}

/// Scores a web document with the reasoning rubric and stores the score.
pub fn score_web_reasoning(ctx: &LlmContext, doc: &mut Document) -> Result<u8, CurationError> {
    let raw = ctx.complete(Role::Classifier, prompts::render_web_rubric(&doc.text))?;
    let score = parse_final_score(&raw).ok_or(CurationError::UnparseableScore { raw })?;
    doc.reasoning_score = Some(score);
    Ok(score)
}

/// Keeps documents scoring at least `min_score`, in input order.
pub fn filter_web(docs: Vec<Document>, min_score: u8) -> Result<Vec<Document>, CurationError> {
    let mut kept = Vec::new();
    for d in docs {
        match d.reasoning_score {
            None => return Err(CurationError::UnscoredDocument(d.id)),
            Some(s) if s >= min_score => kept.push(d),
            Some(_) => {}
        }
    }
    Ok(kept)
}

fn labels_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""?labels"?\s*:\s*"([^"\n]*)""#).unwrap())
}

/// Label in the last `"labels": "<label>"` of a completion.
pub fn parse_discipline_output(raw: &str) -> Option<&str> {
    labels_re().captures_iter(raw).last().map(|c| c.get(1).unwrap().as_str())
}

/// Closed-vocabulary discipline label; unparseable or unknown labels map
/// to the unknown sentinel and are counted.
pub fn label_discipline(ctx: &LlmContext, text: &str) -> Result<Discipline, GatewayError> {
    let raw = ctx.complete(Role::Labeler, prompts::render_discipline(&ctx.taxonomy, text))?;
    Ok(match parse_discipline_output(&raw) {
        None => {
            Warnings::bump(&ctx.warnings.unparseable_label);
            Discipline::unknown()
        }
        Some(label) => ctx.taxonomy.resolve(label).unwrap_or_else(|| {
            Warnings::bump(&ctx.warnings.out_of_vocabulary);
            Discipline::unknown()
        }),
    })
}

fn readability_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)readability\s*:\s*\**\s*(positive|negative)\b").unwrap())
}

fn helpfulness_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)helpfulness\s*:\s*\**\s*(-?\d+)").unwrap())
}

pub fn parse_readability(raw: &str) -> Option<Readability> {
    let label = readability_re().captures_iter(raw).last()?.get(1)?.as_str().to_ascii_lowercase();
    Some(if label == "positive" {
        Readability::Positive
    } else {
        Readability::Negative
    })
}

pub fn parse_helpfulness(raw: &str) -> Option<u8> {
    let value: i64 = helpfulness_re().captures_iter(raw).last()?.get(1)?.as_str().parse().ok()?;
    (0..=5).contains(&value).then_some(value as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quality {
    pub readability: Readability,
    pub helpfulness: u8,
}

/// Readability and helpfulness from the classifier role, stored on `doc`.
pub fn assess_quality(ctx: &LlmContext, doc: &mut Document) -> Result<Quality, CurationError> {
    let raw = ctx.complete(Role::Classifier, prompts::render_readability(&doc.text))?;
    let readability = parse_readability(&raw).ok_or(CurationError::UnparseableClassifier { raw })?;
    let raw = ctx.complete(Role::Classifier, prompts::render_helpfulness(&doc.text))?;
    let helpfulness = parse_helpfulness(&raw).ok_or(CurationError::UnparseableClassifier { raw })?;
    doc.readability = Some(readability);
    doc.helpfulness = Some(helpfulness);
    Ok(Quality { readability, helpfulness })
}

/// Integer apportionment of `total` proportional to `weights`: floors
/// first, then one extra unit per largest fractional part, earlier index
/// first on ties. Sums to `total` whenever some weight is positive.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64 / sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaPlan {
    pub per_discipline: BTreeMap<Discipline, usize>,
    pub total: usize,
}

/// Quotas from the mean of the normalized frequency maps. Maps with a zero
/// total are left out of the mean; disciplines missing from a map count 0.
pub fn combine_quotas(maps: &[&BTreeMap<Discipline, usize>], total: usize) -> Result<QuotaPlan, CurationError> {
    let live: Vec<(&BTreeMap<Discipline, usize>, f64)> = maps
        .iter()
        .map(|m| (*m, m.values().sum::<usize>() as f64))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    if live.is_empty() {
        return Err(CurationError::AllZeroFrequencies);
    }
    let mut keys: Vec<&Discipline> = maps.iter().flat_map(|m| m.keys()).collect();
    keys.sort();
    keys.dedup();
    let weights: Vec<f64> = keys
        .iter()
        .map(|k| live.iter().map(|(m, s)| *m.get(*k).unwrap_or(&0) as f64 / s).sum::<f64>() / live.len() as f64)
        .collect();
    let counts = largest_remainder(&weights, total);
    Ok(QuotaPlan {
        per_discipline: keys.into_iter().cloned().zip(counts).collect(),
        total,
    })
}

pub fn allocate_quotas(corpus_freq: &BTreeMap<Discipline, usize>, bank_freq: &BTreeMap<Discipline, usize>, total: usize) -> Result<QuotaPlan, CurationError> {
    combine_quotas(&[corpus_freq, bank_freq], total)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualitySample {
    pub selected: Vec<Document>,
    pub shortfalls: BTreeMap<Discipline, usize>,
}

/// Per discipline: drop negative readability, rank by helpfulness
/// descending then id ascending, and take the quota. Unassessed documents
/// are never selected.
pub fn quality_prioritized_sample(docs: &[Document], plan: &QuotaPlan) -> QualitySample {
    let mut out = QualitySample::default();
    for (discipline, &quota) in &plan.per_discipline {
        let mut pool: Vec<&Document> = docs
            .iter()
            .filter(|d| d.discipline.as_ref() == Some(discipline))
            .filter(|d| d.readability == Some(Readability::Positive) && d.helpfulness.is_some())
            .collect();
        pool.sort_by(|a, b| b.helpfulness.cmp(&a.helpfulness).then_with(|| a.id.cmp(&b.id)));
        if pool.len() < quota {
            out.shortfalls.insert(discipline.clone(), quota - pool.len());
        }
        out.selected.extend(pool.into_iter().take(quota).cloned());
    }
    out
}
