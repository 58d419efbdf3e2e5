use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::context::GenerationParams;
use crate::gateway::ProviderConfig;
use crate::logic::{EdgeRule, DEFAULT_TAU};
use crate::matcher::DEFAULT_TOP_K;
use crate::model::MAX_SEGMENT_WORDS;
use crate::postproc::{MinHashParams, DEFAULT_NGRAM};
use crate::qbank::{DifficultyRatio, MAX_SEARCH_K};
use crate::curation::DEFAULT_MIN_SCORE;
use crate::analytics::DEFAULT_SAMPLE;

/// Raw corpus locations. Absent inputs are treated as empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    /// JSONL of `{book_id, chapter_index, text}`.
    pub books: Option<PathBuf>,
    /// JSONL of `{id, text}`.
    pub web: Option<PathBuf>,
    /// JSONL of `{id, text}` question-bank items.
    pub bank: Option<PathBuf>,
    /// One JSONL file per evaluation benchmark.
    pub benchmarks: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationParams {
    pub max_words: usize,
    pub min_score: u8,
    /// Book segments to keep after quota sampling; all eligible when unset.
    pub book_total: Option<usize>,
    pub minhash: MinHashParams,
}

impl Default for CurationParams {
    fn default() -> Self {
        CurationParams {
            max_words: MAX_SEGMENT_WORDS,
            min_score: DEFAULT_MIN_SCORE,
            book_total: None,
            minhash: MinHashParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionParams {
    pub quota_total: usize,
    pub ratio: DifficultyRatio,
    /// Upper end of the silhouette search, further capped at n - 1.
    pub k_max: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            quota_total: 1000,
            ratio: DifficultyRatio::default(),
            k_max: MAX_SEARCH_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogicParams {
    pub tau: f64,
    pub edge_rule: EdgeRule,
}

impl Default for LogicParams {
    fn default() -> Self {
        LogicParams {
            tau: DEFAULT_TAU,
            edge_rule: EdgeRule::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingParams {
    pub top_k: usize,
}

impl Default for MatchingParams {
    fn default() -> Self {
        MatchingParams { top_k: DEFAULT_TOP_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocParams {
    pub minhash: MinHashParams,
    pub ngram_n: usize,
}

impl Default for PostprocParams {
    fn default() -> Self {
        PostprocParams {
            minhash: MinHashParams::default(),
            ngram_n: DEFAULT_NGRAM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsParams {
    pub sample: usize,
    /// Inertia cluster count; `round(sqrt(N / 2))` when unset.
    pub inertia_k: Option<usize>,
}

impl Default for AnalyticsParams {
    fn default() -> Self {
        AnalyticsParams {
            sample: DEFAULT_SAMPLE,
            inertia_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    /// Items processed concurrently between manifest commits.
    pub chunk_size: usize,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams { chunk_size: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub store_dir: PathBuf,
    /// Label file, one per line; the built-in taxonomy when unset.
    pub taxonomy: Option<PathBuf>,
    pub seed: u64,
    pub inputs: InputPaths,
    pub provider: ProviderConfig,
    pub generation: GenerationParams,
    pub curation: CurationParams,
    pub selection: SelectionParams,
    pub logic: LogicParams,
    pub matching: MatchingParams,
    pub postproc: PostprocParams,
    pub analytics: AnalyticsParams,
    pub run: RunParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            store_dir: PathBuf::from("designer-run"),
            taxonomy: None,
            seed: 0,
            inputs: InputPaths::default(),
            provider: ProviderConfig::default(),
            generation: GenerationParams::default(),
            curation: CurationParams::default(),
            selection: SelectionParams::default(),
            logic: LogicParams::default(),
            matching: MatchingParams::default(),
            postproc: PostprocParams::default(),
            analytics: AnalyticsParams::default(),
            run: RunParams::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a TOML file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        Ok(config)
    }

    pub fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.store_dir);
        if let Some(p) = &mut self.taxonomy {
            rebase(base, p);
        }
        if let Some(p) = &mut self.provider.cache_dir {
            rebase(base, p);
        }
        let inputs = &mut self.inputs;
        for p in [&mut inputs.books, &mut inputs.web, &mut inputs.bank].into_iter().flatten() {
            rebase(base, p);
        }
        inputs.benchmarks.iter_mut().for_each(|p| rebase(base, p));
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        self.provider.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.curation.max_words == 0 {
            return bad("curation.max_words must be >= 1");
        }
        if self.curation.min_score > 5 {
            return bad("curation.min_score must be in 0..=5");
        }
        if !(-1.0..=1.0).contains(&self.logic.tau) {
            return bad("logic.tau must be in [-1, 1]");
        }
        if self.matching.top_k == 0 {
            return bad("matching.top_k must be >= 1");
        }
        if self.postproc.ngram_n == 0 {
            return bad("postproc.ngram_n must be >= 1");
        }
        if self.selection.k_max < 2 {
            return bad("selection.k_max must be >= 2");
        }
        if self.selection.ratio.0.iter().sum::<u32>() == 0 {
            return bad("selection.ratio must not be all zero");
        }
        if self.run.chunk_size == 0 {
            return bad("run.chunk_size must be >= 1");
        }
        if self.generation.embed_batch == 0 {
            return bad("generation.embed_batch must be >= 1");
        }
        for p in [&self.curation.minhash, &self.postproc.minhash] {
            p.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.provider.cache_dir.clone().unwrap_or_else(|| self.store_dir.join("cache"))
    }
}
