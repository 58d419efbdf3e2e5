//! Staged, resumable orchestration.
//!
//! Every stage reads upstream stores, writes its own directory under
//! `stores/<stage>/` and records progress in `manifests/<stage>.json`.
//! Item stages append one output line per item in input order and commit
//! after each chunk, so an interrupted stage resumes where the last commit
//! left off and produces the same bytes as an uninterrupted run. Whole
//! stages write their outputs atomically at the end.

pub mod config;
mod stages;
pub mod store;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::PipelineConfig;
use store::{AppendStore, InputDigest, Manifest, QuarantineEntry, StageStatus};

use crate::context::LlmContext;
use crate::gateway::{Gateway, GatewayError, GatewayStats, ProviderKind};
use crate::model::{Taxonomy, Violation};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input {0}")]
    MissingInput(PathBuf),
    #[error("invalid input {path}: {reason}")]
    InvalidInput { path: PathBuf, reason: String },
    #[error("stage {stage}: config changed since the stage started (rerun with --fresh to discard it)")]
    ConfigMismatch { stage: String },
    #[error("stage {stage}: input {path} changed since the stage started (rerun with --fresh to discard it)")]
    InputsChanged { stage: String, path: PathBuf },
    #[error("stage {stage}: duplicate item id {id}")]
    DuplicateItem { stage: String, id: String },
    #[error("stage {stage} halted after {processed} item(s)")]
    Halted { stage: String, processed: usize },
    #[error("stage {stage}: {message}")]
    Stage { stage: String, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    LabelBank,
    CurateBook,
    CurateWeb,
    SelectSubset,
    ExtractLogic,
    DedupLogic,
    BuildIndex,
    MatchSynthesize,
    DedupQuestions,
    Decontaminate,
    Respond,
    Analyze,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 12] = [
        Stage::LabelBank,
        Stage::CurateBook,
        Stage::CurateWeb,
        Stage::SelectSubset,
        Stage::ExtractLogic,
        Stage::DedupLogic,
        Stage::BuildIndex,
        Stage::MatchSynthesize,
        Stage::DedupQuestions,
        Stage::Decontaminate,
        Stage::Respond,
        Stage::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::LabelBank => "label-bank",
            Stage::CurateBook => "curate-book",
            Stage::CurateWeb => "curate-web",
            Stage::SelectSubset => "select-subset",
            Stage::ExtractLogic => "extract-logic",
            Stage::DedupLogic => "dedup-logic",
            Stage::BuildIndex => "build-index",
            Stage::MatchSynthesize => "match-synthesize",
            Stage::DedupQuestions => "dedup-questions",
            Stage::Decontaminate => "decontaminate",
            Stage::Respond => "respond",
            Stage::Analyze => "analyze",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Stages that call a chat model.
    pub fn uses_llm(self) -> bool {
        !matches!(self, Stage::BuildIndex | Stage::DedupQuestions | Stage::Decontaminate)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Knobs that affect how a run executes but not what it produces.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this many items have been committed in this process,
    /// leaving an uncommitted tail as a crash would.
    pub halt_after_items: Option<usize>,
    /// Discard existing progress of each stage before running it.
    pub fresh: bool,
}

/// What a stage produced for one item.
pub enum ItemOutcome {
    Emit(String),
    Quarantine(QuarantineEntry),
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Ran,
    AlreadyComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub state: StageState,
    pub emitted: usize,
    pub quarantined: usize,
    pub skipped: usize,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stages: Vec<StageSummary>,
    pub quarantined: usize,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub warnings: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub stage: Stage,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub status: String,
}

pub struct Pipeline {
    config: PipelineConfig,
    ctx: LlmContext,
    options: RunOptions,
    processed: AtomicUsize,
}

impl Pipeline {
    /// Builds the configured provider with an on-disk response cache.
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut provider = config.provider.clone();
        provider.cache_dir = Some(config.cache_dir());
        let gateway = Gateway::from_config(&provider)?;
        Self::with_gateway(config, Arc::new(gateway))
    }

    pub fn with_gateway(config: PipelineConfig, gateway: Arc<Gateway>) -> Result<Self, PipelineError> {
        config.validate()?;
        let taxonomy = match &config.taxonomy {
            Some(path) => Taxonomy::load(path).map_err(|e| PipelineError::Config(e.to_string()))?,
            None => Taxonomy::canonical().clone(),
        };
        let ctx = LlmContext::new(gateway, config.provider.models.clone(), Arc::new(taxonomy), config.generation.clone());
        Ok(Pipeline {
            config,
            ctx,
            options: RunOptions::default(),
            processed: AtomicUsize::new(0),
        })
    }

    pub fn with_options(mut self, options: RunOptions) -> Self {
        self.options = options;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn context(&self) -> &LlmContext {
        &self.ctx
    }

    pub fn stats(&self) -> GatewayStats {
        self.ctx.gateway.stats()
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.config.store_dir.join("stores").join(stage.name())
    }

    pub fn store_path(&self, stage: Stage, name: &str) -> PathBuf {
        self.stage_dir(stage).join(name)
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.config.store_dir.join("manifests").join(format!("{}.json", stage.name()))
    }

    /// Files whose content hashes guard a stage's resumption.
    pub fn stage_inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let i = &self.config.inputs;
        let s = |st: Stage, n: &str| self.store_path(st, n);
        match stage {
            Stage::LabelBank => i.bank.iter().cloned().collect(),
            Stage::CurateBook => i.books.iter().cloned().chain([s(Stage::LabelBank, "questions.jsonl")]).collect(),
            Stage::CurateWeb => i.web.iter().cloned().collect(),
            Stage::SelectSubset => vec![s(Stage::LabelBank, "questions.jsonl")],
            Stage::ExtractLogic => vec![s(Stage::SelectSubset, "selected.jsonl")],
            Stage::DedupLogic => vec![s(Stage::ExtractLogic, "logics.jsonl")],
            Stage::BuildIndex => vec![s(Stage::DedupLogic, "logics.jsonl")],
            Stage::MatchSynthesize => vec![
                s(Stage::CurateBook, "documents.jsonl"),
                s(Stage::CurateWeb, "documents.jsonl"),
                s(Stage::DedupLogic, "logics.jsonl"),
                s(Stage::BuildIndex, "report.json"),
            ],
            Stage::DedupQuestions => vec![s(Stage::MatchSynthesize, "questions.jsonl")],
            Stage::Decontaminate => std::iter::once(s(Stage::DedupQuestions, "questions.jsonl"))
                .chain(i.benchmarks.iter().cloned())
                .collect(),
            Stage::Respond => vec![s(Stage::Decontaminate, "questions.jsonl")],
            Stage::Analyze => vec![s(Stage::Respond, "dataset.jsonl")],
        }
    }

    /// Parameters that determine a stage's output.
    pub fn fingerprint(&self, stage: Stage) -> Value {
        let c = &self.config;
        let params = match stage {
            Stage::CurateBook => json!({ "max_words": c.curation.max_words, "book_total": c.curation.book_total, "minhash": c.curation.minhash }),
            Stage::CurateWeb => json!({ "min_score": c.curation.min_score }),
            Stage::SelectSubset => json!({ "selection": c.selection, "seed": c.seed }),
            Stage::DedupLogic => json!({ "logic": c.logic }),
            Stage::MatchSynthesize => json!({ "matching": c.matching }),
            Stage::DedupQuestions => json!({ "minhash": c.postproc.minhash }),
            Stage::Decontaminate => json!({ "ngram_n": c.postproc.ngram_n }),
            Stage::Analyze => json!({ "analytics": c.analytics, "seed": c.seed }),
            _ => json!({}),
        };
        let llm = stage.uses_llm().then(|| {
            let backend = match c.provider.kind {
                ProviderKind::Mock => json!({ "mock": c.provider.mock }),
                ProviderKind::Openai => json!({ "base_url": c.provider.base_url }),
            };
            json!({ "models": c.provider.models, "generation": c.generation, "backend": backend })
        });
        json!({
            "stage": stage.name(),
            "params": params,
            "llm": llm,
            "taxonomy": self.ctx.taxonomy.labels(),
        })
    }

    pub fn config_hash(&self, stage: Stage) -> String {
        let bytes = serde_json::to_vec(&self.fingerprint(stage)).expect("fingerprint serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn digests(&self, stage: Stage) -> Result<Vec<InputDigest>, PipelineError> {
        self.stage_inputs(stage)
            .into_iter()
            .map(|path| {
                let sha256 = store::sha256_file(&path)?;
                Ok(InputDigest { path, sha256 })
            })
            .collect()
    }

    /// Dry-run view of every stage.
    pub fn plan(&self) -> Result<Vec<PlanEntry>, PipelineError> {
        Stage::ALL
            .iter()
            .map(|&stage| {
                let status = match Manifest::load(&self.manifest_path(stage))? {
                    None => "pending".to_string(),
                    Some(m) if m.config_hash != self.config_hash(stage) => "config-changed".to_string(),
                    Some(m) if m.status == StageStatus::Complete => "complete".to_string(),
                    Some(m) => format!("partial ({} items committed)", m.completed.len()),
                };
                Ok(PlanEntry {
                    stage,
                    inputs: self.stage_inputs(stage),
                    output_dir: self.stage_dir(stage),
                    status,
                })
            })
            .collect()
    }

    /// Runs one stage, resuming committed progress or skipping it when a
    /// matching manifest is already complete.
    pub fn run_stage(&self, stage: Stage) -> Result<StageSummary, PipelineError> {
        let started = Instant::now();
        let before = self.stats();
        let summary = |m: &Manifest, state: StageState, after: GatewayStats| StageSummary {
            stage,
            state,
            emitted: m.emitted,
            quarantined: m.quarantined,
            skipped: m.skipped,
            backend_calls: after.backend_calls - before.backend_calls,
            cache_hits: after.cache_hits - before.cache_hits,
            elapsed_ms: started.elapsed().as_millis(),
        };
        let run = match StageRun::open(self, stage)? {
            Opened::Complete(m) => return Ok(summary(&m, StageState::AlreadyComplete, self.stats())),
            Opened::Run(run) => run,
        };
        tracing::info!(stage = stage.name(), "stage started");
        let manifest = stages::execute(self, run)?;
        let s = summary(&manifest, StageState::Ran, self.stats());
        tracing::info!(stage = stage.name(), emitted = s.emitted, quarantined = s.quarantined, "stage finished");
        Ok(s)
    }

    /// Runs every stage in order, stopping at the first error, and writes
    /// `reports/run.json`.
    pub fn run_all(&self) -> Result<RunReport, PipelineError> {
        let mut stages = Vec::new();
        for stage in Stage::ALL {
            stages.push(self.run_stage(stage)?);
        }
        let report = RunReport {
            quarantined: stages.iter().map(|s| s.quarantined).sum(),
            backend_calls: stages.iter().map(|s| s.backend_calls).sum(),
            cache_hits: stages.iter().map(|s| s.cache_hits).sum(),
            warnings: self.ctx.warnings.snapshot(),
            stages,
        };
        store::write_atomic(&self.config.store_dir.join("reports").join("run.json"), &store::to_pretty(&report))?;
        Ok(report)
    }
}

enum Opened<'p> {
    Complete(Manifest),
    Run(StageRun<'p>),
}

/// An open stage: its directory, manifest and commit machinery.
pub(crate) struct StageRun<'p> {
    p: &'p Pipeline,
    stage: Stage,
    dir: PathBuf,
    manifest_path: PathBuf,
    manifest: Manifest,
}

const SPOT_CHECK_LINES: usize = 16;

impl<'p> StageRun<'p> {
    fn open(p: &'p Pipeline, stage: Stage) -> Result<Opened<'p>, PipelineError> {
        let dir = p.stage_dir(stage);
        let manifest_path = p.manifest_path(stage);
        if p.options.fresh {
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            if manifest_path.exists() {
                fs::remove_file(&manifest_path)?;
            }
        }
        let config_hash = p.config_hash(stage);
        let inputs = p.digests(stage)?;
        let manifest = match Manifest::load(&manifest_path)? {
            Some(m) => {
                if m.config_hash != config_hash {
                    return Err(PipelineError::ConfigMismatch { stage: stage.name().into() });
                }
                if let Some(changed) = m.inputs.iter().zip(&inputs).find(|(a, b)| a != b).map(|(a, _)| a.path.clone()) {
                    return Err(PipelineError::InputsChanged { stage: stage.name().into(), path: changed });
                }
                if m.inputs.len() != inputs.len() {
                    return Err(PipelineError::InputsChanged {
                        stage: stage.name().into(),
                        path: inputs.last().map(|d| d.path.clone()).unwrap_or_default(),
                    });
                }
                if m.status == StageStatus::Complete {
                    return Ok(Opened::Complete(m));
                }
                m
            }
            None => {
                if dir.exists() {
                    fs::remove_dir_all(&dir)?;
                }
                Manifest {
                    stage: stage.name().into(),
                    config_hash,
                    inputs,
                    output_dir: dir.clone(),
                    committed: Default::default(),
                    completed: Vec::new(),
                    emitted: 0,
                    quarantined: 0,
                    skipped: 0,
                    status: StageStatus::Running,
                    started_at: store::now_secs(),
                    finished_at: None,
                }
            }
        };
        fs::create_dir_all(&dir)?;
        let run = StageRun {
            p,
            stage,
            dir,
            manifest_path,
            manifest,
        };
        run.manifest.save(&run.manifest_path)?;
        Ok(Opened::Run(run))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn stage_error(&self, message: impl std::fmt::Display) -> PipelineError {
        PipelineError::Stage {
            stage: self.stage.name().into(),
            message: message.to_string(),
        }
    }

    /// Rejects upstream stores whose leading records fail validation.
    pub fn spot_check<T>(&self, path: &Path) -> Result<(), PipelineError>
    where
        T: serde::de::DeserializeOwned + crate::model::Validate,
    {
        let text = fs::read_to_string(path).map_err(|_| PipelineError::MissingInput(path.to_path_buf()))?;
        for (n, line) in text.lines().filter(|l| !l.trim().is_empty()).take(SPOT_CHECK_LINES).enumerate() {
            let violations: Vec<Violation> = crate::model::validate_line::<T>(line.as_bytes(), &self.p.ctx.taxonomy)
                .map_err(|e| PipelineError::InvalidInput {
                    path: path.to_path_buf(),
                    reason: format!("record {}: {e}", n + 1),
                })?;
            if let Some(v) = violations.first() {
                return Err(PipelineError::InvalidInput {
                    path: path.to_path_buf(),
                    reason: format!("record {}: {}: {}", n + 1, v.field, v.message),
                });
            }
        }
        Ok(())
    }

    /// Processes items absent from the completion set, in input order,
    /// committing after each chunk.
    pub fn run_items<T, F>(&mut self, output: &str, items: &[(String, T)], f: F) -> Result<(), PipelineError>
    where
        T: Sync,
        F: Fn(&str, &T) -> Result<ItemOutcome, PipelineError> + Sync,
    {
        let mut seen = HashSet::new();
        if let Some((id, _)) = items.iter().find(|(id, _)| !seen.insert(id.as_str())) {
            return Err(PipelineError::DuplicateItem {
                stage: self.stage.name().into(),
                id: id.clone(),
            });
        }
        const QUARANTINE: &str = "quarantine.jsonl";
        let done: HashSet<String> = self.manifest.completed.iter().cloned().collect();
        let pending: Vec<&(String, T)> = items.iter().filter(|(id, _)| !done.contains(id)).collect();
        let mut out = AppendStore::open(&self.path(output), self.manifest.committed.get(output).copied().unwrap_or(0))?;
        let mut quarantine = AppendStore::open(&self.path(QUARANTINE), self.manifest.committed.get(QUARANTINE).copied().unwrap_or(0))?;
        self.manifest.committed.entry(output.into()).or_insert(0);
        self.manifest.committed.entry(QUARANTINE.into()).or_insert(0);

        let chunk_size = self.p.config.run.chunk_size;
        let mut next = 0;
        while next < pending.len() {
            let mut take = chunk_size.min(pending.len() - next);
            if let Some(limit) = self.p.options.halt_after_items {
                let left = limit.saturating_sub(self.p.processed.load(Ordering::SeqCst));
                if left == 0 {
                    out.append(b"{\"interrupted\":")?;
                    return Err(PipelineError::Halted {
                        stage: self.stage.name().into(),
                        processed: self.manifest.completed.len(),
                    });
                }
                take = take.min(left);
            }
            let chunk = &pending[next..next + take];
            let results: Vec<Result<ItemOutcome, PipelineError>> = chunk.par_iter().map(|(id, item)| f(id, item)).collect();
            let outcomes: Vec<ItemOutcome> = results.into_iter().collect::<Result<_, _>>()?;
            for ((id, _), outcome) in chunk.iter().zip(outcomes) {
                match outcome {
                    ItemOutcome::Emit(line) => {
                        out.append(line.as_bytes())?;
                        self.manifest.emitted += 1;
                    }
                    ItemOutcome::Quarantine(entry) => {
                        quarantine.append(store::to_line(&entry).as_bytes())?;
                        self.manifest.quarantined += 1;
                    }
                    ItemOutcome::Skip => self.manifest.skipped += 1,
                }
                self.manifest.completed.push(id.clone());
            }
            self.manifest.committed.insert(output.into(), out.sync()?);
            self.manifest.committed.insert(QUARANTINE.into(), quarantine.sync()?);
            self.manifest.save(&self.manifest_path)?;
            self.p.processed.fetch_add(take, Ordering::SeqCst);
            next += take;
        }
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        store::write_atomic(&self.path(name), bytes)
    }

    fn finish(mut self) -> Result<Manifest, PipelineError> {
        self.manifest.status = StageStatus::Complete;
        self.manifest.finished_at = Some(store::now_secs());
        self.manifest.save(&self.manifest_path)?;
        Ok(self.manifest)
    }
}
