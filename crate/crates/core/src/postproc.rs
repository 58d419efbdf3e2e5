//! Near-duplicate removal and benchmark decontamination.
//!
//! Near duplicates are proposed by MinHash LSH banding and confirmed by
//! exact Jaccard over word-shingle sets, so every reported pair truly
//! meets the threshold. Decontamination flags any record sharing a
//! normalized n-token window with a benchmark item.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dsu::DisjointSet;
use crate::model::{stable_hash, ModelError, QuestionRecord, RecordStatus};

pub const DEFAULT_NGRAM: usize = 13;

/// Mersenne prime 2^61 - 1.
const PRIME: u64 = (1 << 61) - 1;

#[derive(Debug, Error)]
pub enum PostprocError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("benchmark {path}: {reason}")]
    Benchmark { path: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How punctuation is removed before tokenization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PunctuationMode {
    #[default]
    Delete,
    Space,
}

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{P}[:punct:]]").unwrap())
}

/// Lowercased, punctuation-free whitespace tokens.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    normalize_tokens_with(text, PunctuationMode::Delete)
}

pub fn normalize_tokens_with(text: &str, mode: PunctuationMode) -> Vec<String> {
    let lower = text.to_lowercase();
    let replacement = match mode {
        PunctuationMode::Delete => "",
        PunctuationMode::Space => " ",
    };
    punctuation()
        .replace_all(&lower, replacement)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn window_hash(tokens: &[String]) -> u64 {
    stable_hash(&tokens.join("\u{1f}"))
}

/// Hashed word `n`-grams; fewer than `n` tokens yield one shingle of the
/// whole sequence and no tokens yield the empty set.
pub fn shingle_set(tokens: &[String], n: usize) -> BTreeSet<u64> {
    if tokens.is_empty() {
        return BTreeSet::new();
    }
    if tokens.len() < n {
        return BTreeSet::from([window_hash(tokens)]);
    }
    tokens.windows(n).map(window_hash).collect()
}

/// Exact Jaccard; two empty sets are identical.
pub fn jaccard(a: &BTreeSet<u64>, b: &BTreeSet<u64>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinHashParams {
    pub num_perm: usize,
    pub shingle_n: usize,
    pub bands: usize,
    pub rows: usize,
    pub threshold: f64,
    pub seed: u64,
    pub punctuation: PunctuationMode,
}

impl Default for MinHashParams {
    fn default() -> Self {
        MinHashParams {
            num_perm: 128,
            shingle_n: 5,
            bands: 16,
            rows: 8,
            threshold: 0.8,
            seed: 0,
            punctuation: PunctuationMode::Delete,
        }
    }
}

impl MinHashParams {
    pub fn validate(&self) -> Result<(), PostprocError> {
        let bad = |m: &str| Err(PostprocError::InvalidParams(m.to_string()));
        if self.num_perm == 0 || self.shingle_n == 0 || self.bands == 0 || self.rows == 0 {
            return bad("num_perm, shingle_n, bands and rows must be positive");
        }
        if self.bands * self.rows > self.num_perm {
            return bad("bands * rows exceeds num_perm");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
}

impl MinHashSignature {
    /// Fraction of agreeing positions.
    pub fn estimate_jaccard(&self, other: &MinHashSignature) -> f64 {
        let same = self.values.iter().zip(&other.values).filter(|(a, b)| a == b).count();
        same as f64 / self.values.len() as f64
    }
}

/// Seeded family of `p` affine hashes modulo 2^61 - 1.
#[derive(Debug, Clone)]
pub struct MinHasher {
    coeffs: Vec<(u64, u64)>,
    shingle_n: usize,
    punctuation: PunctuationMode,
}

impl MinHasher {
    pub fn new(num_perm: usize, shingle_n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..num_perm)
            .map(|_| (rng.gen_range(1..PRIME), rng.gen_range(0..PRIME)))
            .collect();
        MinHasher {
            coeffs,
            shingle_n,
            punctuation: PunctuationMode::Delete,
        }
    }

    pub fn from_params(params: &MinHashParams) -> Self {
        let mut h = Self::new(params.num_perm, params.shingle_n, params.seed);
        h.punctuation = params.punctuation;
        h
    }

    pub fn shingles(&self, text: &str) -> BTreeSet<u64> {
        shingle_set(&normalize_tokens_with(text, self.punctuation), self.shingle_n)
    }

    pub fn signature_of_set(&self, shingles: &BTreeSet<u64>) -> MinHashSignature {
        let values = self
            .coeffs
            .iter()
            .map(|&(a, b)| {
                shingles
                    .iter()
                    .map(|&x| ((a as u128 * (x % PRIME) as u128 + b as u128) % PRIME as u128) as u64)
                    .min()
                    .unwrap_or(u64::MAX)
            })
            .collect();
        MinHashSignature { values }
    }

    pub fn signature(&self, text: &str) -> MinHashSignature {
        self.signature_of_set(&self.shingles(text))
    }
}

pub fn minhash_signature(text: &str, p: usize, shingle_n: usize, seed: u64) -> MinHashSignature {
    MinHasher::new(p, shingle_n, seed).signature(text)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DuplicateGroups {
    /// Components of size at least two, members ascending by position.
    pub groups: Vec<Vec<usize>>,
    /// Every non-first member of a group, ascending.
    pub dropped: Vec<usize>,
    pub candidate_pairs: usize,
    pub verified_pairs: usize,
}

/// Groups texts whose shingle sets reach `params.threshold` Jaccard; the
/// earliest position in each group survives.
pub fn near_duplicates<S: AsRef<str> + Sync>(texts: &[S], params: &MinHashParams) -> Result<DuplicateGroups, PostprocError> {
    params.validate()?;
    let hasher = MinHasher::from_params(params);
    let sets: Vec<BTreeSet<u64>> = texts.par_iter().map(|t| hasher.shingles(t.as_ref())).collect();
    let sigs: Vec<MinHashSignature> = sets.par_iter().map(|s| hasher.signature_of_set(s)).collect();

    let mut candidates = BTreeSet::new();
    for band in 0..params.bands {
        let mut buckets: HashMap<&[u64], Vec<usize>> = HashMap::new();
        for (i, sig) in sigs.iter().enumerate() {
            let key = &sig.values[band * params.rows..(band + 1) * params.rows];
            buckets.entry(key).or_default().push(i);
        }
        for members in buckets.values() {
            for (x, &i) in members.iter().enumerate() {
                for &j in &members[x + 1..] {
                    candidates.insert((i.min(j), i.max(j)));
                }
            }
        }
    }

    let candidate_list: Vec<(usize, usize)> = candidates.into_iter().collect();
    let verified: Vec<(usize, usize)> = candidate_list
        .par_iter()
        .copied()
        .filter(|&(i, j)| jaccard(&sets[i], &sets[j]) >= params.threshold)
        .collect();

    let mut dsu = DisjointSet::new(texts.len());
    for &(i, j) in &verified {
        dsu.union(i, j);
    }
    let groups: Vec<Vec<usize>> = dsu.groups().into_iter().filter(|g| g.len() > 1).collect();
    let mut dropped: Vec<usize> = groups.iter().flat_map(|g| g[1..].iter().copied()).collect();
    dropped.sort_unstable();
    Ok(DuplicateGroups {
        groups,
        dropped,
        candidate_pairs: candidate_list.len(),
        verified_pairs: verified.len(),
    })
}

/// Marks near-duplicate active records as dropped, keeping the earliest.
pub fn dedup_questions(records: &mut [QuestionRecord], params: &MinHashParams) -> Result<DuplicateGroups, PostprocError> {
    let active: Vec<usize> = (0..records.len()).filter(|&i| records[i].is_active()).collect();
    let texts: Vec<&str> = active.iter().map(|&i| records[i].text.as_str()).collect();
    let mut found = near_duplicates(&texts, params)?;
    for g in &mut found.groups {
        g.iter_mut().for_each(|x| *x = active[*x]);
    }
    for x in &mut found.dropped {
        *x = active[*x];
        records[*x].transition(RecordStatus::DroppedDuplicate)?;
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Benchmark {
    pub name: String,
    pub items: Vec<String>,
}

const ITEM_KEYS: &[&str] = &["question", "problem", "prompt", "text", "input", "query", "exam_question"];

fn item_text(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Object(map) => {
            if let Some(s) = ITEM_KEYS.iter().find_map(|k| map.get(*k).and_then(Value::as_str)) {
                return Some(s.to_string());
            }
            let joined: Vec<&str> = map.values().filter_map(Value::as_str).collect();
            (!joined.is_empty()).then(|| joined.join(" "))
        }
        _ => None,
    }
}

impl Benchmark {
    /// One item per JSONL line: a well-known text field when present,
    /// otherwise every string field joined.
    pub fn load_jsonl(path: &Path) -> Result<Self, PostprocError> {
        let fail = |reason: String| PostprocError::Benchmark {
            path: path.display().to_string(),
            reason,
        };
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "benchmark".into());
        let mut items = Vec::new();
        for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(&line).map_err(|e| fail(format!("line {}: {e}", n + 1)))?;
            items.push(item_text(&value).ok_or_else(|| fail(format!("line {}: no text field", n + 1)))?);
        }
        Ok(Benchmark { name, items })
    }
}

/// Hashed `n`-token windows of benchmark items, with the benchmarks each
/// window occurs in.
#[derive(Debug, Clone)]
pub struct NGramIndex {
    n: usize,
    mode: PunctuationMode,
    names: Vec<String>,
    grams: HashMap<u64, Vec<u16>>,
}

impl NGramIndex {
    pub fn build(benchmarks: &[Benchmark], n: usize) -> Result<Self, PostprocError> {
        Self::build_with(benchmarks, n, PunctuationMode::Delete)
    }

    pub fn build_with(benchmarks: &[Benchmark], n: usize, mode: PunctuationMode) -> Result<Self, PostprocError> {
        if n == 0 {
            return Err(PostprocError::InvalidParams("n must be positive".into()));
        }
        if benchmarks.len() > u16::MAX as usize {
            return Err(PostprocError::InvalidParams("too many benchmarks".into()));
        }
        let mut grams: HashMap<u64, Vec<u16>> = HashMap::new();
        for (b, bench) in benchmarks.iter().enumerate() {
            let hashes: HashSet<u64> = bench
                .items
                .par_iter()
                .flat_map_iter(|item| {
                    let tokens = normalize_tokens_with(item, mode);
                    tokens.windows(n).map(window_hash).collect::<Vec<_>>()
                })
                .collect();
            for h in hashes {
                grams.entry(h).or_default().push(b as u16);
            }
        }
        Ok(NGramIndex {
            n,
            mode,
            names: benchmarks.iter().map(|b| b.name.clone()).collect(),
            grams,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// Benchmarks sharing at least one window with `text`, ascending.
    pub fn hits(&self, text: &str) -> BTreeSet<usize> {
        let tokens = normalize_tokens_with(text, self.mode);
        tokens
            .windows(self.n)
            .filter_map(|w| self.grams.get(&window_hash(w)))
            .flatten()
            .map(|&b| b as usize)
            .collect()
    }

    pub fn is_contaminated(&self, text: &str) -> bool {
        let tokens = normalize_tokens_with(text, self.mode);
        tokens.windows(self.n).any(|w| self.grams.contains_key(&window_hash(w)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecontaminationReport {
    pub checked: usize,
    pub flagged: Vec<usize>,
    pub per_benchmark: BTreeMap<String, usize>,
}

/// Marks active records whose text shares a window with the index.
pub fn decontaminate(records: &mut [QuestionRecord], index: &NGramIndex) -> Result<DecontaminationReport, PostprocError> {
    let hits: Vec<(usize, BTreeSet<usize>)> = records
        .par_iter()
        .enumerate()
        .filter(|(_, r)| r.is_active())
        .map(|(i, r)| (i, index.hits(&r.text)))
        .collect();
    let mut report = DecontaminationReport {
        checked: hits.len(),
        per_benchmark: index.names.iter().map(|n| (n.clone(), 0)).collect(),
        ..Default::default()
    };
    for (i, benches) in hits {
        if benches.is_empty() {
            continue;
        }
        records[i].transition(RecordStatus::DroppedContaminated)?;
        report.flagged.push(i);
        for b in benches {
            *report.per_benchmark.get_mut(&index.names[b]).unwrap() += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PostprocReport {
    pub input: usize,
    pub dropped_duplicate: usize,
    pub dropped_contaminated: usize,
    pub kept: usize,
    pub per_benchmark: BTreeMap<String, usize>,
}

impl PostprocReport {
    pub fn tally(records: &[QuestionRecord]) -> Self {
        let count = |s: RecordStatus| records.iter().filter(|r| r.status == s).count();
        PostprocReport {
            input: records.len(),
            dropped_duplicate: count(RecordStatus::DroppedDuplicate),
            dropped_contaminated: count(RecordStatus::DroppedContaminated),
            kept: count(RecordStatus::Active),
            per_benchmark: BTreeMap::new(),
        }
    }
}
