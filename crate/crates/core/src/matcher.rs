//! Coarse-to-fine matching of documents to design logics.
//!
//! Retrieval is exact cosine top-k over a per-discipline [`LogicIndex`];
//! the synthesizer model then picks one of the numbered candidates and
//! writes the question. Completions end in a JSON object that is located
//! by [`last_json_object`].

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::context::{LlmContext, Role, Warnings};
use crate::gateway::GatewayError;
use crate::model::{DesignLogic, Discipline, Document, EmbeddingVector};
use crate::prompts;
pub use crate::vector::cosine;
use crate::vector::{self, VectorError};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate logic id {0} in index")]
    DuplicateId(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub logic_id: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub dimension: usize,
    pub discipline: Discipline,
    pub count: usize,
}

/// Immutable per-discipline retrieval index.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicIndex {
    discipline: Discipline,
    dimension: usize,
    entries: Vec<IndexEntry>,
}

impl LogicIndex {
    pub fn new(discipline: Discipline, entries: Vec<IndexEntry>) -> Result<Self, MatchError> {
        let dimension = entries.first().map_or(0, |e| e.embedding.dim());
        let mut seen = HashSet::new();
        for e in &entries {
            if e.embedding.dim() != dimension {
                return Err(VectorError::DimensionMismatch(dimension, e.embedding.dim()).into());
            }
            if e.embedding.norm() == 0.0 {
                return Err(VectorError::ZeroVector.into());
            }
            if !seen.insert(e.logic_id.as_str()) {
                return Err(MatchError::DuplicateId(e.logic_id.clone()));
            }
        }
        Ok(LogicIndex {
            discipline,
            dimension,
            entries,
        })
    }

    /// Index over the active, embedded logics of one discipline.
    pub fn from_logics<'a>(discipline: Discipline, logics: impl IntoIterator<Item = &'a DesignLogic>) -> Result<Self, MatchError> {
        let entries = logics
            .into_iter()
            .filter(|l| l.is_active() && l.discipline == discipline)
            .filter_map(|l| {
                l.embedding.clone().map(|embedding| IndexEntry {
                    logic_id: l.id.clone(),
                    embedding,
                })
            })
            .collect();
        Self::new(discipline, entries)
    }

    pub fn discipline(&self) -> &Discipline {
        &self.discipline
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn header(&self) -> IndexHeader {
        IndexHeader {
            dimension: self.dimension,
            discipline: self.discipline.clone(),
            count: self.entries.len(),
        }
    }

    /// Header line followed by one entry per line.
    pub fn to_jsonl_bytes(&self) -> Result<Vec<u8>, MatchError> {
        let mut w = Vec::new();
        serde_json::to_writer(&mut w, &self.header()).map_err(|e| MatchError::Format(e.to_string()))?;
        w.push(b'\n');
        for e in &self.entries {
            serde_json::to_writer(&mut w, e).map_err(|e| MatchError::Format(e.to_string()))?;
            w.push(b'\n');
        }
        Ok(w)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), MatchError> {
        std::fs::write(path, self.to_jsonl_bytes()?)?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, MatchError> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header: IndexHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?).map_err(|e| MatchError::Format(e.to_string()))?,
            None => return Err(MatchError::Format("missing header".into())),
        };
        let mut entries = Vec::with_capacity(header.count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| MatchError::Format(e.to_string()))?);
        }
        if entries.len() != header.count {
            return Err(MatchError::Format(format!(
                "header promises {} entries, found {}",
                header.count,
                entries.len()
            )));
        }
        let index = Self::new(header.discipline, entries)?;
        if !index.is_empty() && index.dimension != header.dimension {
            return Err(MatchError::Format("header dimension disagrees with entries".into()));
        }
        Ok(index)
    }
}

/// Exact top-`k` by cosine, descending; ties broken by ascending logic id.
pub fn retrieve_top_k(query: &EmbeddingVector, index: &LogicIndex, k: usize) -> Result<Vec<(String, f64)>, MatchError> {
    if k == 0 {
        return Err(MatchError::InvalidK);
    }
    if index.is_empty() {
        return Err(MatchError::EmptyIndex);
    }
    let mut scored: Vec<(usize, f64)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| Ok((i, vector::cosine(query.as_slice(), e.embedding.as_slice())?)))
        .collect::<Result<_, VectorError>>()?;
    let order = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.total_cmp(&a.1)
            .then_with(|| index.entries[a.0].logic_id.cmp(&index.entries[b.0].logic_id))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(scored
        .into_iter()
        .map(|(i, s)| (index.entries[i].logic_id.clone(), s))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub exam_question: String,
    pub reference_answer: String,
    pub chosen_logic_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxed_answer: Option<String>,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("no candidate logics")]
    NoCandidates,
    #[error("could not parse synthesis output: {reason}")]
    ParseFailure { raw: String, reason: String },
    #[error("selected id {id} outside 1..={candidates}")]
    IdOutOfRange { raw: String, id: i64, candidates: usize },
    #[error("responder returned an empty response")]
    EmptyResponse,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl SynthesisError {
    pub fn raw(&self) -> Option<&str> {
        match self {
            SynthesisError::ParseFailure { raw, .. } | SynthesisError::IdOutOfRange { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

/// Renders the synthesis prompt over `candidates` (numbered from 1 in rank
/// order) and parses the completion.
pub fn synthesize_question(ctx: &LlmContext, doc: &Document, candidates: &[&DesignLogic]) -> Result<SynthesisResult, SynthesisError> {
    if candidates.is_empty() {
        return Err(SynthesisError::NoCandidates);
    }
    let logics: Vec<&str> = candidates.iter().map(|l| l.mermaid_text.as_str()).collect();
    let raw = ctx.complete(Role::Synthesizer, prompts::render_synthesis(&logics, &doc.text))?;
    let ids: Vec<&str> = candidates.iter().map(|l| l.id.as_str()).collect();
    let (result, boxed) = parse_synthesis(&raw, &ids)?;
    if boxed == BoxedScan::Unbalanced {
        Warnings::bump(&ctx.warnings.unbalanced_boxed);
    }
    Ok(result)
}

/// Parses a synthesis completion against the offered candidate ids.
pub fn parse_synthesis(raw: &str, candidate_ids: &[&str]) -> Result<(SynthesisResult, BoxedScan), SynthesisError> {
    let fail = |reason: &str| SynthesisError::ParseFailure {
        raw: raw.to_string(),
        reason: reason.to_string(),
    };
    let obj = last_json_object(raw, "exam_question").ok_or_else(|| fail("no JSON object"))?;
    let text_field = |name: &str| -> Result<String, SynthesisError> {
        match obj.get(name) {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
            _ => Err(fail(&format!("missing or empty {name:?}"))),
        }
    };
    let exam_question = text_field("exam_question")?;
    let reference_answer = text_field("reference_answer")?;
    let id = match obj.get("id") {
        Some(Value::Number(n)) => n.as_i64(),
        Some(Value::String(s)) => s
            .trim()
            .trim_start_matches(|c: char| !c.is_ascii_digit() && c != '-')
            .parse::<i64>()
            .ok(),
        _ => None,
    }
    .ok_or_else(|| fail("missing or non-numeric \"id\""))?;
    if id < 1 || id as usize > candidate_ids.len() {
        return Err(SynthesisError::IdOutOfRange {
            raw: raw.to_string(),
            id,
            candidates: candidate_ids.len(),
        });
    }
    let boxed = scan_boxed(&reference_answer);
    let result = SynthesisResult {
        exam_question,
        reference_answer,
        chosen_logic_id: candidate_ids[id as usize - 1].to_string(),
        boxed_answer: match &boxed {
            BoxedScan::Found(s) => Some(s.clone()),
            _ => None,
        },
    };
    Ok((result, boxed))
}

/// Sends the exam question to the responder role.
pub fn synthesize_response(ctx: &LlmContext, exam_question: &str) -> Result<String, SynthesisError> {
    match ctx.complete(Role::Responder, exam_question.to_string()) {
        Ok(text) if text.trim().is_empty() => Err(SynthesisError::EmptyResponse),
        Ok(text) => Ok(text),
        Err(GatewayError::EmptyCompletion) => Err(SynthesisError::EmptyResponse),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoxedScan {
    Found(String),
    Absent,
    Unbalanced,
}

const BOXED: &str = "\\boxed{";

/// Scans from the last `\boxed{` to its balanced closing brace.
pub fn scan_boxed(text: &str) -> BoxedScan {
    let Some(pos) = text.rfind(BOXED) else {
        return BoxedScan::Absent;
    };
    let start = pos + BOXED.len();
    let mut depth = 1usize;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return BoxedScan::Found(text[start..start + i].to_string());
                }
            }
            _ => {}
        }
    }
    BoxedScan::Unbalanced
}

/// Content of the last `\boxed{...}`, if present and balanced.
pub fn extract_boxed_answer(text: &str) -> Option<String> {
    match scan_boxed(text) {
        BoxedScan::Found(s) => Some(s),
        _ => None,
    }
}

/// End (inclusive) of the brace-balanced span opening at `start`, honoring
/// double-quoted strings.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut i = start;
    while i < bytes.len() {
        let b = bytes[i];
        if in_string {
            match b {
                b'\\' => i += 1,
                b'"' => in_string = false,
                _ => {}
            }
        } else {
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(i);
                    }
                }
                _ => {}
            }
        }
        i += 1;
    }
    None
}

/// LaTeX commands that begin with a JSON escape letter (`\n`, `\t`) and
/// must be kept literal.
const LATEX_N_T: &[&str] = &[
    "nabla", "neq", "ne", "nu", "neg", "ni", "not", "nolimits", "newline", "nmid", "nleq", "ngeq", "notin",
    "theta", "tau", "times", "text", "textbf", "textit", "textrm", "tan", "tanh", "tilde", "to", "top",
    "tfrac", "therefore", "triangle", "triangleq", "tbinom",
];

/// Escapes backslashes inside JSON strings that start a LaTeX command or
/// are otherwise not valid JSON escapes.
pub fn repair_latex_escapes(json: &str) -> String {
    let chars: Vec<char> = json.chars().collect();
    let mut out = String::with_capacity(json.len() + 16);
    let mut in_string = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if !in_string {
            if c == '"' {
                in_string = true;
            }
            out.push(c);
            i += 1;
            continue;
        }
        match c {
            '"' => {
                in_string = false;
                out.push(c);
                i += 1;
            }
            '\\' => {
                let next = chars.get(i + 1).copied();
                let run: String = chars[i + 1..].iter().take_while(|c| c.is_ascii_alphabetic()).collect();
                let literal = match next {
                    Some('"' | '\\' | '/') => false,
                    Some('b' | 'f' | 'r') => run.len() >= 2,
                    Some('n' | 't') => run.len() >= 2 && LATEX_N_T.contains(&run.as_str()),
                    Some('u') => {
                        let hex: String = chars[i + 2..].iter().take(4).collect();
                        !(hex.len() == 4 && hex.chars().all(|c| c.is_ascii_hexdigit()))
                    }
                    _ => true,
                };
                if literal {
                    out.push_str("\\\\");
                    i += 1;
                } else {
                    out.push('\\');
                    if let Some(n) = next {
                        out.push(n);
                    }
                    i += 2;
                }
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

/// Last top-level JSON object in `text`, preferring objects that contain
/// `key`. Invalid LaTeX escapes inside strings are tolerated.
pub fn last_json_object(text: &str, key: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut last_any = None;
    let mut last_keyed = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        match balanced_end(bytes, i) {
            Some(end) => {
                let candidate = &text[i..=end];
                let parsed = serde_json::from_str::<Value>(&repair_latex_escapes(candidate))
                    .or_else(|_| serde_json::from_str::<Value>(candidate));
                if let Ok(Value::Object(map)) = parsed {
                    if map.contains_key(key) {
                        last_keyed = Some(map.clone());
                    }
                    last_any = Some(map);
                    i = end + 1;
                } else {
                    i += 1;
                }
            }
            None => i += 1,
        }
    }
    last_keyed.or(last_any)
}
