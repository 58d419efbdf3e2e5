//! Stage bodies. Each reads upstream stores through the run handle and
//! leaves its outputs in the stage directory.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::store::{read_jsonl, read_optional_jsonl, to_jsonl, to_line, to_pretty, QuarantineEntry};
use super::{ItemOutcome, Manifest, Pipeline, PipelineError, Stage, StageRun};
use crate::analytics::{distribution_report, diversity_report, sample_uniform, AnalyticsError};
use crate::curation::{
    allocate_quotas, assess_quality, dedup_segments, filter_web, label_discipline, quality_prioritized_sample,
    score_web_reasoning, segment_book, BookChapter, CurationError, QuotaPlan, WebPage,
};
use crate::gateway::GatewayError;
use crate::logic::{dedup_design_logics, extract_design_logic, ForgeError};
use crate::matcher::{retrieve_top_k, synthesize_question, synthesize_response, LogicIndex, SynthesisError};
use crate::model::{content_id, DesignLogic, Discipline, Document, EmbeddingVector, Provenance, QuestionRecord, RecordStatus};
use crate::postproc::{decontaminate, dedup_questions, Benchmark, NGramIndex, PostprocReport};
use crate::prompts::RETRIEVAL_INSTRUCTION;
use crate::qbank::{choose_k_by_silhouette, label_difficulty_and_type, label_question, stratified_sample, ClusterAssignment, ClusterError};

pub(super) fn execute(p: &Pipeline, mut run: StageRun<'_>) -> Result<Manifest, PipelineError> {
    match run.stage {
        Stage::LabelBank => label_bank(p, &mut run)?,
        Stage::CurateBook => curate_book(p, &mut run)?,
        Stage::CurateWeb => curate_web(p, &mut run)?,
        Stage::SelectSubset => select_subset(p, &mut run)?,
        Stage::ExtractLogic => extract_logic(p, &mut run)?,
        Stage::DedupLogic => dedup_logic(p, &mut run)?,
        Stage::BuildIndex => build_index(p, &mut run)?,
        Stage::MatchSynthesize => match_synthesize(p, &mut run)?,
        Stage::DedupQuestions => dedup_stage(p, &mut run)?,
        Stage::Decontaminate => decontaminate_stage(p, &mut run)?,
        Stage::Respond => respond(p, &mut run)?,
        Stage::Analyze => analyze(p, &mut run)?,
    }
    run.finish()
}

/// Raw question-bank item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankItem {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
}

/// Fatal provider errors abort the stage; anything else quarantines the item.
fn gateway_outcome(stage: Stage, id: &str, e: GatewayError) -> Result<ItemOutcome, PipelineError> {
    if e.is_fatal() {
        Err(e.into())
    } else {
        Ok(quarantine(stage, id, &e, None))
    }
}

fn quarantine(stage: Stage, item_id: &str, error: impl std::fmt::Display, raw: Option<&str>) -> ItemOutcome {
    ItemOutcome::Quarantine(QuarantineEntry {
        stage: stage.name().into(),
        item_id: item_id.into(),
        error: error.to_string(),
        raw: raw.map(str::to_string),
    })
}

fn counts<'a>(items: impl Iterator<Item = &'a Discipline>) -> BTreeMap<Discipline, usize> {
    let mut out = BTreeMap::new();
    for d in items.filter(|d| d.name() != Discipline::UNKNOWN) {
        *out.entry(d.clone()).or_insert(0) += 1;
    }
    out
}

fn label_bank(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let raw: Vec<BankItem> = read_optional_jsonl(p.config.inputs.bank.as_deref())?;
    let items: Vec<(String, BankItem)> = raw
        .into_iter()
        .map(|b| (b.id.clone().unwrap_or_else(|| content_id("bank", &[&b.text])), b))
        .collect();
    let ctx = &p.ctx;
    let stage = run.stage;
    run.run_items("questions.jsonl", &items, |id, b| {
        let q = QuestionRecord::bank(id, b.text.clone(), Discipline::unknown());
        match label_question(ctx, &q) {
            Ok(r) => Ok(ItemOutcome::Emit(to_line(&r))),
            Err(e) => gateway_outcome(stage, id, e),
        }
    })?;
    let labeled: Vec<QuestionRecord> = read_jsonl(&run.path("questions.jsonl"))?;
    let report = json!({
        "input": items.len(),
        "labeled": labeled.len(),
        "quarantined": run.manifest.quarantined,
        "per_discipline": counts(labeled.iter().map(|q| &q.discipline)),
        "unknown_discipline": labeled.iter().filter(|q| q.discipline.name() == Discipline::UNKNOWN).count(),
    });
    run.write("report.json", &to_pretty(&report))
}

fn curate_book(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let c = &p.config.curation;
    let chapters: Vec<BookChapter> = read_optional_jsonl(p.config.inputs.books.as_deref())?;
    let seg = segment_book(&chapters, c.max_words).map_err(|e| run.stage_error(e))?;
    let mut segments = seg.segments;
    let n_segments = segments.len();
    let dups = dedup_segments(&mut segments, &c.minhash).map_err(|e| run.stage_error(e))?;
    let items: Vec<(String, Document)> = segments.into_iter().map(|d| (d.id.clone(), d)).collect();
    let ctx = &p.ctx;
    let stage = run.stage;
    run.run_items("labeled.jsonl", &items, |id, doc| {
        let mut d = doc.clone();
        d.discipline = match label_discipline(ctx, &d.text) {
            Ok(l) => Some(l),
            Err(e) => return gateway_outcome(stage, id, e),
        };
        match assess_quality(ctx, &mut d) {
            Ok(_) => Ok(ItemOutcome::Emit(to_line(&d))),
            Err(CurationError::Gateway(g)) => gateway_outcome(stage, id, g),
            Err(e) => Ok(quarantine(stage, id, &e, e.raw())),
        }
    })?;
    let labeled: Vec<Document> = read_jsonl(&run.path("labeled.jsonl"))?;
    let bank_path = p.store_path(Stage::LabelBank, "questions.jsonl");
    run.spot_check::<QuestionRecord>(&bank_path)?;
    let bank: Vec<QuestionRecord> = read_jsonl(&bank_path)?;
    let corpus_freq = counts(labeled.iter().filter_map(|d| d.discipline.as_ref()));
    let bank_freq = counts(bank.iter().map(|q| &q.discipline));
    let eligible = labeled.iter().filter(|d| d.discipline.as_ref().is_some_and(|x| x.name() != Discipline::UNKNOWN)).count();
    let total = c.book_total.unwrap_or(eligible);
    let plan = match allocate_quotas(&corpus_freq, &bank_freq, total) {
        Ok(plan) => plan,
        Err(CurationError::AllZeroFrequencies) => QuotaPlan::default(),
        Err(e) => return Err(run.stage_error(e)),
    };
    let sample = quality_prioritized_sample(&labeled, &plan);
    run.write("documents.jsonl", &to_jsonl(&sample.selected))?;
    run.manifest.emitted = sample.selected.len();
    let report = json!({
        "chapters": chapters.len(),
        "empty_chapters": seg.empty_chapters,
        "segments": n_segments,
        "near_duplicates_dropped": dups.dropped.len(),
        "labeled": labeled.len(),
        "quarantined": run.manifest.quarantined,
        "corpus_frequency": corpus_freq,
        "bank_frequency": bank_freq,
        "quotas": plan.per_discipline,
        "selected": sample.selected.len(),
        "shortfalls": sample.shortfalls,
    });
    run.write("report.json", &to_pretty(&report))
}

fn curate_web(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let min_score = p.config.curation.min_score;
    let pages: Vec<WebPage> = read_optional_jsonl(p.config.inputs.web.as_deref())?;
    let items: Vec<(String, WebPage)> = pages.into_iter().map(|w| (w.id.clone(), w)).collect();
    let ctx = &p.ctx;
    let stage = run.stage;
    run.run_items("scored.jsonl", &items, |id, page| {
        let mut d = page.clone().into_document();
        let score = match score_web_reasoning(ctx, &mut d) {
            Ok(s) => s,
            Err(CurationError::Gateway(g)) => return gateway_outcome(stage, id, g),
            Err(e) => return Ok(quarantine(stage, id, &e, e.raw())),
        };
        if score >= min_score {
            d.discipline = match label_discipline(ctx, &d.text) {
                Ok(l) => Some(l),
                Err(e) => return gateway_outcome(stage, id, e),
            };
        }
        Ok(ItemOutcome::Emit(to_line(&d)))
    })?;
    let scored: Vec<Document> = read_jsonl(&run.path("scored.jsonl"))?;
    let mut histogram = BTreeMap::new();
    for d in &scored {
        *histogram.entry(d.reasoning_score.unwrap_or(0).to_string()).or_insert(0usize) += 1;
    }
    let kept = filter_web(scored, min_score).map_err(|e| run.stage_error(e))?;
    run.write("documents.jsonl", &to_jsonl(&kept))?;
    run.manifest.emitted = kept.len();
    let report = json!({
        "pages": items.len(),
        "quarantined": run.manifest.quarantined,
        "score_histogram": histogram,
        "min_score": min_score,
        "kept": kept.len(),
    });
    run.write("report.json", &to_pretty(&report))
}

fn select_subset(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let sel = &p.config.selection;
    let bank_path = p.store_path(Stage::LabelBank, "questions.jsonl");
    run.spot_check::<QuestionRecord>(&bank_path)?;
    let bank: Vec<QuestionRecord> = read_jsonl(&bank_path)?;
    let mut by_discipline: BTreeMap<Discipline, Vec<QuestionRecord>> = BTreeMap::new();
    for q in bank.into_iter().filter(|q| q.discipline.name() != Discipline::UNKNOWN) {
        by_discipline.entry(q.discipline.clone()).or_default().push(q);
    }
    let freq: BTreeMap<Discipline, usize> = by_discipline.iter().map(|(d, v)| (d.clone(), v.len())).collect();
    let plan = match crate::curation::combine_quotas(&[&freq], sel.quota_total) {
        Ok(plan) => plan,
        Err(CurationError::AllZeroFrequencies) => QuotaPlan::default(),
        Err(e) => return Err(run.stage_error(e)),
    };
    let mut selected = Vec::new();
    let mut assignments = Vec::new();
    let mut per_discipline = BTreeMap::new();
    for (discipline, questions) in by_discipline {
        let quota = plan.per_discipline.get(&discipline).copied().unwrap_or(0);
        if quota == 0 {
            continue;
        }
        let texts: Vec<String> = questions.iter().map(|q| q.text.clone()).collect();
        let embeddings = p.ctx.embed_all(None, &texts)?;
        let n = questions.len();
        let labels: Vec<usize> = if n >= 3 {
            let hi = sel.k_max.min(n - 1);
            match choose_k_by_silhouette(&embeddings, 2..=hi, p.config.seed) {
                Ok(search) => search.clustering.assignments,
                Err(ClusterError::Degenerate) => vec![0; n],
                Err(e) => return Err(run.stage_error(e)),
            }
        } else {
            vec![0; n]
        };
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut clusters: Vec<Vec<QuestionRecord>> = vec![Vec::new(); k];
        for ((q, e), &c) in questions.into_iter().zip(embeddings).zip(&labels) {
            assignments.push(ClusterAssignment {
                question_id: q.id.clone(),
                cluster_index: c,
                discipline: discipline.clone(),
            });
            let mut q = q;
            q.embedding = Some(e);
            clusters[c].push(q);
        }
        let seed = p.config.seed ^ crate::model::stable_hash(discipline.name());
        let sample = stratified_sample(&clusters, quota, sel.ratio, seed);
        per_discipline.insert(
            discipline.name().to_string(),
            json!({
                "questions": n,
                "k": k,
                "quota": quota,
                "selected": sample.selected.len(),
                "per_cluster": sample.per_cluster,
                "per_difficulty": sample.per_difficulty,
            }),
        );
        selected.extend(sample.selected);
    }
    run.write("selected.jsonl", &to_jsonl(&selected))?;
    run.manifest.emitted = selected.len();
    run.write("clusters.jsonl", &to_jsonl(&assignments))?;
    let report = json!({
        "quota_total": sel.quota_total,
        "ratio": sel.ratio,
        "selected": selected.len(),
        "per_discipline": per_discipline,
    });
    run.write("report.json", &to_pretty(&report))
}

fn extract_logic(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let path = p.store_path(Stage::SelectSubset, "selected.jsonl");
    run.spot_check::<QuestionRecord>(&path)?;
    let selected: Vec<QuestionRecord> = read_jsonl(&path)?;
    let items: Vec<(String, QuestionRecord)> = selected.into_iter().map(|q| (q.id.clone(), q)).collect();
    let ctx = &p.ctx;
    let stage = run.stage;
    run.run_items("logics.jsonl", &items, |id, q| match extract_design_logic(ctx, q) {
        Ok(l) => Ok(ItemOutcome::Emit(to_line(&l))),
        Err(ForgeError::Gateway(g)) => gateway_outcome(stage, id, g),
        Err(e) => Ok(quarantine(stage, id, &e, e.raw())),
    })?;
    let report = json!({
        "questions": items.len(),
        "extracted": run.manifest.emitted,
        "quarantined": run.manifest.quarantined,
    });
    run.write("report.json", &to_pretty(&report))
}

fn dedup_logic(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let path = p.store_path(Stage::ExtractLogic, "logics.jsonl");
    run.spot_check::<DesignLogic>(&path)?;
    let mut logics: Vec<DesignLogic> = read_jsonl(&path)?;
    let texts: Vec<String> = logics.iter().map(|l| l.mermaid_text.clone()).collect();
    let embeddings = p.ctx.embed_all(None, &texts)?;
    for (l, e) in logics.iter_mut().zip(embeddings) {
        l.embedding = Some(e);
    }
    let mut groups: BTreeMap<Discipline, Vec<usize>> = BTreeMap::new();
    for (i, l) in logics.iter().enumerate() {
        groups.entry(l.discipline.clone()).or_default().push(i);
    }
    let mut per_discipline = BTreeMap::new();
    for (discipline, idx) in groups {
        let mut group: Vec<DesignLogic> = idx.iter().map(|&i| logics[i].clone()).collect();
        let outcome = dedup_design_logics(&mut group, p.config.logic.tau, p.config.logic.edge_rule).map_err(|e| run.stage_error(e))?;
        for (&i, l) in idx.iter().zip(group) {
            logics[i].status = l.status;
        }
        per_discipline.insert(
            discipline.name().to_string(),
            json!({ "input": outcome.input, "components": outcome.components, "kept": outcome.kept.len(), "dropped": outcome.dropped }),
        );
    }
    run.write("logics.jsonl", &to_jsonl(&logics))?;
    run.manifest.emitted = logics.iter().filter(|l| l.is_active()).count();
    let report = json!({
        "tau": p.config.logic.tau,
        "edge_rule": p.config.logic.edge_rule,
        "input": logics.len(),
        "kept": logics.iter().filter(|l| l.is_active()).count(),
        "per_discipline": per_discipline,
    });
    run.write("report.json", &to_pretty(&report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexFile {
    discipline: Discipline,
    file: String,
    count: usize,
    dimension: usize,
}

fn build_index(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let path = p.store_path(Stage::DedupLogic, "logics.jsonl");
    run.spot_check::<DesignLogic>(&path)?;
    let logics: Vec<DesignLogic> = read_jsonl(&path)?;
    let mut groups: BTreeMap<Discipline, Vec<&DesignLogic>> = BTreeMap::new();
    for l in logics.iter().filter(|l| l.is_active()) {
        groups.entry(l.discipline.clone()).or_default().push(l);
    }
    let mut files = Vec::new();
    for (discipline, group) in groups {
        let index = LogicIndex::from_logics(discipline.clone(), group).map_err(|e| run.stage_error(e))?;
        let file = format!("{}.jsonl", discipline.slug());
        run.write(&file, &index.to_jsonl_bytes().map_err(|e| run.stage_error(e))?)?;
        files.push(IndexFile {
            discipline,
            file,
            count: index.len(),
            dimension: index.dimension(),
        });
    }
    run.manifest.emitted = files.len();
    run.write("report.json", &to_pretty(&json!({ "indices": files })))
}

fn load_indices(p: &Pipeline) -> Result<BTreeMap<Discipline, LogicIndex>, PipelineError> {
    let report_path = p.store_path(Stage::BuildIndex, "report.json");
    let bytes = std::fs::read(&report_path).map_err(|_| PipelineError::MissingInput(report_path.clone()))?;
    #[derive(Deserialize)]
    struct Report {
        indices: Vec<IndexFile>,
    }
    let report: Report = serde_json::from_slice(&bytes).map_err(|e| PipelineError::InvalidInput {
        path: report_path.clone(),
        reason: e.to_string(),
    })?;
    report
        .indices
        .into_iter()
        .map(|f| {
            let path = p.store_path(Stage::BuildIndex, &f.file);
            let index = LogicIndex::read_jsonl(&path).map_err(|e| PipelineError::InvalidInput {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            Ok((f.discipline, index))
        })
        .collect()
}

fn read_documents(run: &StageRun<'_>, path: &Path) -> Result<Vec<Document>, PipelineError> {
    run.spot_check::<Document>(path)?;
    read_jsonl(path)
}

fn match_synthesize(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let mut docs = read_documents(run, &p.store_path(Stage::CurateBook, "documents.jsonl"))?;
    docs.extend(read_documents(run, &p.store_path(Stage::CurateWeb, "documents.jsonl"))?);
    let indices = load_indices(p)?;
    let logics: HashMap<String, DesignLogic> = read_jsonl::<DesignLogic>(&p.store_path(Stage::DedupLogic, "logics.jsonl"))?
        .into_iter()
        .map(|l| (l.id.clone(), l))
        .collect();
    let items: Vec<(String, Document)> = docs.into_iter().map(|d| (d.id.clone(), d)).collect();
    let ctx = &p.ctx;
    let top_k = p.config.matching.top_k;
    let stage = run.stage;
    run.run_items("questions.jsonl", &items, |id, doc| {
        let Some(index) = doc.discipline.as_ref().and_then(|d| indices.get(d)) else {
            return Ok(ItemOutcome::Skip);
        };
        let query: EmbeddingVector = match ctx.embed_all(Some(RETRIEVAL_INSTRUCTION), std::slice::from_ref(&doc.text)) {
            Ok(mut v) => v.remove(0),
            Err(e) => return gateway_outcome(stage, id, e),
        };
        let hits = match retrieve_top_k(&query, index, top_k) {
            Ok(h) => h,
            Err(e) => return Ok(quarantine(stage, id, &e, None)),
        };
        let candidates: Vec<&DesignLogic> = hits.iter().filter_map(|(lid, _)| logics.get(lid)).collect();
        let result = match synthesize_question(ctx, doc, &candidates) {
            Ok(r) => r,
            Err(SynthesisError::Gateway(g)) => return gateway_outcome(stage, id, g),
            Err(e) => return Ok(quarantine(stage, id, &e, e.raw())),
        };
        let (difficulty, qtype) = match label_difficulty_and_type(ctx, &result.exam_question) {
            Ok(l) => l,
            Err(e) => return gateway_outcome(stage, id, e),
        };
        let record = QuestionRecord {
            id: content_id("q", &[&doc.id, &result.chosen_logic_id]),
            text: result.exam_question,
            discipline: index.discipline().clone(),
            difficulty,
            qtype: Some(qtype),
            embedding: None,
            provenance: Provenance::synthesized(doc.id.clone(), result.chosen_logic_id),
            status: RecordStatus::Active,
            reference_answer: Some(result.reference_answer),
            boxed_answer: result.boxed_answer,
            response: None,
        };
        Ok(ItemOutcome::Emit(to_line(&record)))
    })?;
    let report = json!({
        "documents": items.len(),
        "synthesized": run.manifest.emitted,
        "unmatched": run.manifest.skipped,
        "quarantined": run.manifest.quarantined,
        "top_k": top_k,
    });
    run.write("report.json", &to_pretty(&report))
}

fn dedup_stage(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let path = p.store_path(Stage::MatchSynthesize, "questions.jsonl");
    run.spot_check::<QuestionRecord>(&path)?;
    let mut records: Vec<QuestionRecord> = read_jsonl(&path)?;
    let groups = dedup_questions(&mut records, &p.config.postproc.minhash).map_err(|e| run.stage_error(e))?;
    run.write("questions.jsonl", &to_jsonl(&records))?;
    run.manifest.emitted = records.iter().filter(|r| r.is_active()).count();
    let report = json!({
        "tally": PostprocReport::tally(&records),
        "groups": groups.groups.len(),
        "candidate_pairs": groups.candidate_pairs,
        "verified_pairs": groups.verified_pairs,
    });
    run.write("report.json", &to_pretty(&report))
}

fn decontaminate_stage(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let path = p.store_path(Stage::DedupQuestions, "questions.jsonl");
    run.spot_check::<QuestionRecord>(&path)?;
    let mut records: Vec<QuestionRecord> = read_jsonl(&path)?;
    let benchmarks: Vec<Benchmark> = p
        .config
        .inputs
        .benchmarks
        .iter()
        .map(|b| {
            Benchmark::load_jsonl(b).map_err(|e| PipelineError::InvalidInput {
                path: b.clone(),
                reason: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    let index = NGramIndex::build(&benchmarks, p.config.postproc.ngram_n).map_err(|e| run.stage_error(e))?;
    let found = decontaminate(&mut records, &index).map_err(|e| run.stage_error(e))?;
    run.write("questions.jsonl", &to_jsonl(&records))?;
    run.manifest.emitted = records.iter().filter(|r| r.is_active()).count();
    let mut tally = PostprocReport::tally(&records);
    tally.per_benchmark = found.per_benchmark.clone();
    let report = json!({
        "ngram_n": index.n(),
        "benchmark_windows": index.len(),
        "checked": found.checked,
        "flagged": found.flagged.len(),
        "tally": tally,
    });
    run.write("report.json", &to_pretty(&report))
}

fn respond(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let path = p.store_path(Stage::Decontaminate, "questions.jsonl");
    run.spot_check::<QuestionRecord>(&path)?;
    let records: Vec<QuestionRecord> = read_jsonl(&path)?;
    let items: Vec<(String, QuestionRecord)> = records.into_iter().filter(|r| r.is_active()).map(|r| (r.id.clone(), r)).collect();
    let ctx = &p.ctx;
    let stage = run.stage;
    run.run_items("dataset.jsonl", &items, |id, r| match synthesize_response(ctx, &r.text) {
        Ok(text) => {
            let mut r = r.clone();
            r.response = Some(text);
            Ok(ItemOutcome::Emit(to_line(&r)))
        }
        Err(SynthesisError::Gateway(g)) => gateway_outcome(stage, id, g),
        Err(e) => Ok(quarantine(stage, id, &e, e.raw())),
    })?;
    let report = json!({
        "questions": items.len(),
        "answered": run.manifest.emitted,
        "quarantined": run.manifest.quarantined,
    });
    run.write("report.json", &to_pretty(&report))
}

fn analyze(p: &Pipeline, run: &mut StageRun<'_>) -> Result<(), PipelineError> {
    let path = p.store_path(Stage::Respond, "dataset.jsonl");
    run.spot_check::<QuestionRecord>(&path)?;
    let dataset: Vec<QuestionRecord> = read_jsonl(&path)?;
    let distribution = match distribution_report(&dataset) {
        Ok(d) => Some(d),
        Err(AnalyticsError::NoActiveRecords) => None,
        Err(e) => return Err(run.stage_error(e)),
    };
    let a = &p.config.analytics;
    let sample = sample_uniform(&dataset, a.sample, p.config.seed);
    let diversity = if sample.len() >= 2 {
        let texts: Vec<String> = sample.iter().map(|r| r.text.clone()).collect();
        let embeddings = p.ctx.embed_all(None, &texts)?;
        let k = a.inertia_k.map(|k| k.clamp(1, embeddings.len()));
        Some(diversity_report(&embeddings, k, p.config.seed).map_err(|e| run.stage_error(e))?)
    } else {
        None
    };
    let mut csv = String::from("table,label,percent\n");
    if let Some(d) = &distribution {
        for (table, map) in [("qtype", &d.by_qtype), ("difficulty", &d.by_difficulty)] {
            for (label, pct) in map {
                csv.push_str(&format!("{table},{label},{pct:.2}\n"));
            }
        }
    }
    run.write("distribution.csv", csv.as_bytes())?;
    run.manifest.emitted = dataset.len();
    let report = json!({
        "records": dataset.len(),
        "distribution": distribution,
        "diversity": diversity,
    });
    run.write("report.json", &to_pretty(&report))
}
