//! Shared domain types and record schemas.
//!
//! Every store in the pipeline is append-only JSONL whose lines deserialize
//! into one of the record types defined here. Label fields are drawn from
//! closed vocabularies; [`Validate`] reports every invariant violation of a
//! record without stopping at the first one.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::logic::validate_mermaid;

/// Maximum words in one book segment.
pub const MAX_SEGMENT_WORDS: usize = 5000;

const CANONICAL_TAXONOMY: &str = include_str!("../data/disciplines.txt");

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed field: {0}")]
    MalformedField(String),
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("illegal status transition from {from} to {to}")]
    IllegalTransition { from: String, to: String },
    #[error("non-finite embedding value at position {0}")]
    NonFiniteEmbedding(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whitespace-delimited word count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// First eight bytes of SHA-256 as an integer.
pub fn stable_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Stable identifier derived from the hash of `parts`.
pub fn content_id(prefix: &str, parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    format!("{prefix}-{}", &hex::encode(digest)[..16])
}

/// A discipline label. Membership in the taxonomy is checked by
/// [`Taxonomy::resolve`] and [`Validate`], not at deserialization time, so
/// that out-of-vocabulary values surface as violations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Discipline(String);

impl Discipline {
    pub const OTHER: &'static str = "Other";
    pub const NON_DISCIPLINARY: &'static str = "Non-disciplinary";
    pub const UNKNOWN: &'static str = "Unknown Discipline";

    pub fn unknown() -> Self {
        Discipline(Self::UNKNOWN.to_string())
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    pub fn is_sentinel(&self) -> bool {
        matches!(
            self.0.as_str(),
            Self::OTHER | Self::NON_DISCIPLINARY | Self::UNKNOWN
        )
    }

    /// Lowercase ASCII file-name form, e.g. `computer-science-and-technology`.
    pub fn slug(&self) -> String {
        let mut out = String::with_capacity(self.0.len());
        let mut dash = false;
        for c in self.0.chars() {
            if c.is_ascii_alphanumeric() {
                out.push(c.to_ascii_lowercase());
                dash = false;
            } else if !dash && !out.is_empty() {
                out.push('-');
                dash = true;
            }
        }
        while out.ends_with('-') {
            out.pop();
        }
        out
    }
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The closed discipline vocabulary: 75 disciplines plus three sentinels.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    labels: Vec<String>,
    members: HashSet<String>,
}

impl Taxonomy {
    pub const DISCIPLINE_COUNT: usize = 75;

    /// The bundled taxonomy.
    pub fn canonical() -> &'static Taxonomy {
        static CANONICAL: OnceLock<Taxonomy> = OnceLock::new();
        CANONICAL.get_or_init(|| {
            Taxonomy::parse(CANONICAL_TAXONOMY).expect("bundled taxonomy is well-formed")
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses one label per line. Requires the three sentinels and no
    /// duplicates.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let labels: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let members: HashSet<String> = labels.iter().cloned().collect();
        if members.len() != labels.len() {
            return Err(ModelError::InvalidTaxonomy("duplicate label".into()));
        }
        for sentinel in [
            Discipline::OTHER,
            Discipline::NON_DISCIPLINARY,
            Discipline::UNKNOWN,
        ] {
            if !members.contains(sentinel) {
                return Err(ModelError::InvalidTaxonomy(format!(
                    "missing sentinel label {sentinel:?}"
                )));
            }
        }
        Ok(Taxonomy { labels, members })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Labels excluding the sentinels.
    pub fn disciplines(&self) -> impl Iterator<Item = &str> {
        self.labels
            .iter()
            .map(String::as_str)
            .filter(|l| ![Discipline::OTHER, Discipline::NON_DISCIPLINARY, Discipline::UNKNOWN].contains(l))
    }

    pub fn contains(&self, discipline: &Discipline) -> bool {
        self.members.contains(discipline.name())
    }

    /// Exact-match lookup; `None` for out-of-vocabulary labels.
    pub fn resolve(&self, label: &str) -> Option<Discipline> {
        let label = label.trim();
        if self.members.contains(label) {
            return Some(Discipline(label.to_string()));
        }
        // Models sometimes write the sentinel with a hyphen.
        if label.eq_ignore_ascii_case("Unknown-Discipline") {
            return Some(Discipline::unknown());
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DifficultyLabel {
    Easy,
    Medium,
    Hard,
    #[serde(rename = "Very Hard")]
    VeryHard,
}

impl DifficultyLabel {
    pub const ALL: [DifficultyLabel; 4] = [
        DifficultyLabel::Easy,
        DifficultyLabel::Medium,
        DifficultyLabel::Hard,
        DifficultyLabel::VeryHard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DifficultyLabel::Easy => "Easy",
            DifficultyLabel::Medium => "Medium",
            DifficultyLabel::Hard => "Hard",
            DifficultyLabel::VeryHard => "Very Hard",
        }
    }

    /// Case-insensitive parse tolerant of markdown emphasis.
    pub fn parse_label(label: &str) -> Option<Self> {
        let cleaned = label.trim().trim_matches(|c: char| c == '*' || c == '"' || c == '.');
        let lower = cleaned.trim().to_ascii_lowercase();
        match lower.as_str() {
            "easy" => Some(DifficultyLabel::Easy),
            "medium" => Some(DifficultyLabel::Medium),
            "hard" => Some(DifficultyLabel::Hard),
            "very hard" | "very-hard" | "veryhard" => Some(DifficultyLabel::VeryHard),
            _ => None,
        }
    }
}

impl fmt::Display for DifficultyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionType {
    #[serde(rename = "Problem-solving")]
    ProblemSolving,
    #[serde(rename = "Multiple-choice")]
    MultipleChoice,
    Proof,
    Other,
}

impl QuestionType {
    pub const ALL: [QuestionType; 4] = [
        QuestionType::ProblemSolving,
        QuestionType::MultipleChoice,
        QuestionType::Proof,
        QuestionType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::ProblemSolving => "Problem-solving",
            QuestionType::MultipleChoice => "Multiple-choice",
            QuestionType::Proof => "Proof",
            QuestionType::Other => "Other",
        }
    }

    /// Maps any label to a kind; unknown inputs become `Other`.
    pub fn from_label(label: &str) -> Self {
        let lower = label
            .trim()
            .trim_matches(|c: char| c == '*' || c == '"' || c == '.')
            .to_ascii_lowercase();
        if lower.starts_with("problem-solving") || lower.starts_with("problem solving") {
            QuestionType::ProblemSolving
        } else if lower.starts_with("multiple-choice") || lower.starts_with("multiple choice") {
            QuestionType::MultipleChoice
        } else if lower.starts_with("proof") {
            QuestionType::Proof
        } else {
            QuestionType::Other
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Book,
    Web,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readability {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteEmbedding(pos));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: SourceKind,
    pub text: String,
    pub word_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discipline: Option<Discipline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readability: Option<Readability>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub helpfulness: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_score: Option<u8>,
}

impl Document {
    /// Builds an unlabeled document with a content-derived id.
    pub fn new(source: SourceKind, text: impl Into<String>) -> Self {
        let text = text.into();
        let tag = match source {
            SourceKind::Book => "book",
            SourceKind::Web => "web",
        };
        Document {
            id: content_id("doc", &[tag, &text]),
            source,
            word_count: word_count(&text),
            text,
            discipline: None,
            readability: None,
            helpfulness: None,
            reasoning_score: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Active,
    DroppedDuplicate,
    DroppedContaminated,
}

impl RecordStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Active => "active",
            RecordStatus::DroppedDuplicate => "dropped_duplicate",
            RecordStatus::DroppedContaminated => "dropped_contaminated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceKind {
    Bank,
    Synthesized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: ProvenanceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logic_id: Option<String>,
}

impl Provenance {
    pub fn bank() -> Self {
        Provenance {
            source: ProvenanceKind::Bank,
            document_id: None,
            logic_id: None,
        }
    }

    pub fn synthesized(document_id: impl Into<String>, logic_id: impl Into<String>) -> Self {
        Provenance {
            source: ProvenanceKind::Synthesized,
            document_id: Some(document_id.into()),
            logic_id: Some(logic_id.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub text: String,
    pub discipline: Discipline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<DifficultyLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qtype: Option<QuestionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
    pub provenance: Provenance,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxed_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

impl QuestionRecord {
    pub fn bank(id: impl Into<String>, text: impl Into<String>, discipline: Discipline) -> Self {
        QuestionRecord {
            id: id.into(),
            text: text.into(),
            discipline,
            difficulty: None,
            qtype: None,
            embedding: None,
            provenance: Provenance::bank(),
            status: RecordStatus::Active,
            reference_answer: None,
            boxed_answer: None,
            response: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == RecordStatus::Active
    }

    /// Moves the record to `to`. Only `active -> dropped_*` is legal;
    /// re-applying the current status is a no-op.
    pub fn transition(&mut self, to: RecordStatus) -> Result<(), ModelError> {
        if self.status == to {
            return Ok(());
        }
        if self.status != RecordStatus::Active || to == RecordStatus::Active {
            return Err(ModelError::IllegalTransition {
                from: self.status.as_str().into(),
                to: to.as_str().into(),
            });
        }
        self.status = to;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogicStatus {
    Active,
    DroppedDuplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLogic {
    pub id: String,
    pub discipline: Discipline,
    pub mermaid_text: String,
    pub source_question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
    pub status: LogicStatus,
}

impl DesignLogic {
    pub fn new(source: &QuestionRecord, mermaid_text: impl Into<String>) -> Self {
        let mermaid_text = mermaid_text.into();
        DesignLogic {
            id: content_id("logic", &[&source.id, source.discipline.name(), &mermaid_text]),
            discipline: source.discipline.clone(),
            mermaid_text,
            source_question_id: source.id.clone(),
            embedding: None,
            status: LogicStatus::Active,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == LogicStatus::Active
    }
}

/// One broken invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl Violation {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Violation {
            field,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub trait Validate {
    /// Every invariant violation; empty means the record is valid.
    fn violations(&self, taxonomy: &Taxonomy) -> Vec<Violation>;
}

fn check_discipline(out: &mut Vec<Violation>, taxonomy: &Taxonomy, d: &Discipline) {
    if !taxonomy.contains(d) {
        out.push(Violation::new(
            "discipline",
            format!("{:?} is not a taxonomy label", d.name()),
        ));
    }
}

fn check_embedding(out: &mut Vec<Violation>, e: &Option<EmbeddingVector>) {
    if let Some(e) = e {
        if e.as_slice().iter().any(|v| !v.is_finite()) {
            out.push(Violation::new("embedding", "non-finite value"));
        }
        if e.dim() == 0 {
            out.push(Violation::new("embedding", "empty vector"));
        }
    }
}

impl Validate for Document {
    fn violations(&self, taxonomy: &Taxonomy) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push(Violation::new("id", "empty id"));
        }
        let counted = word_count(&self.text);
        if counted != self.word_count {
            out.push(Violation::new(
                "word_count",
                format!("word_count {} does not match text ({counted} words)", self.word_count),
            ));
        }
        if self.source == SourceKind::Book && self.word_count > MAX_SEGMENT_WORDS {
            out.push(Violation::new("word_count", "word_count exceeds 5,000"));
        }
        if let Some(d) = &self.discipline {
            check_discipline(&mut out, taxonomy, d);
        }
        if matches!(self.helpfulness, Some(h) if h > 5) {
            out.push(Violation::new("helpfulness", "helpfulness outside 0..5"));
        }
        if matches!(self.reasoning_score, Some(s) if s > 5) {
            out.push(Violation::new("reasoning_score", "reasoning_score outside 0..5"));
        }
        if self.reasoning_score.is_some() && self.source != SourceKind::Web {
            out.push(Violation::new("reasoning_score", "reasoning_score on a non-web document"));
        }
        out
    }
}

impl Validate for QuestionRecord {
    fn violations(&self, taxonomy: &Taxonomy) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push(Violation::new("id", "empty id"));
        }
        check_discipline(&mut out, taxonomy, &self.discipline);
        check_embedding(&mut out, &self.embedding);
        if self.provenance.source == ProvenanceKind::Synthesized {
            if self.provenance.document_id.is_none() {
                out.push(Violation::new("provenance", "missing document_id"));
            }
            if self.provenance.logic_id.is_none() {
                out.push(Violation::new("provenance", "missing logic_id"));
            }
        }
        out
    }
}

impl Validate for DesignLogic {
    fn violations(&self, taxonomy: &Taxonomy) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push(Violation::new("id", "empty id"));
        }
        check_discipline(&mut out, taxonomy, &self.discipline);
        check_embedding(&mut out, &self.embedding);
        if let Err(e) = validate_mermaid(&self.mermaid_text) {
            out.push(Violation::new("mermaid_text", e.to_string()));
        }
        out
    }
}

/// Deserializes one JSONL line and validates it.
///
/// Non-UTF-8 input, missing required fields and out-of-vocabulary enum
/// labels are reported as [`ModelError::MalformedField`].
pub fn validate_line<T>(line: &[u8], taxonomy: &Taxonomy) -> Result<Vec<Violation>, ModelError>
where
    T: DeserializeOwned + Validate,
{
    let text = std::str::from_utf8(line)
        .map_err(|e| ModelError::MalformedField(format!("non-UTF-8 input: {e}")))?;
    let record: T =
        serde_json::from_str(text).map_err(|e| ModelError::MalformedField(e.to_string()))?;
    Ok(record.violations(taxonomy))
}
