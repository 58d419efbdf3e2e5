//! Acceptance suite. Runs every criterion against independent oracles and
//! prints one PASS/FAIL line per criterion; exits non-zero on any failure.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use designer_core::analytics::{cluster_inertia, default_inertia_k, distribution_report, mean_pairwise_distances, one_nn_distance, radius};
use designer_core::curation::DEFAULT_MIN_SCORE;
use designer_core::logic::{dedup_design_logics, dedup_design_logics_with, pairwise_similarity, EdgeRule, SimilarityMatrix, DEFAULT_TAU};
use designer_core::matcher::{retrieve_top_k, IndexEntry, LogicIndex, DEFAULT_TOP_K};
use designer_core::model::{DesignLogic, DifficultyLabel, Discipline, EmbeddingVector, LogicStatus, QuestionRecord, QuestionType, RecordStatus, MAX_SEGMENT_WORDS};
use designer_core::pipeline::{Pipeline, PipelineConfig, PipelineError, RunOptions, Stage, StageState};
use designer_core::postproc::{decontaminate, near_duplicates, normalize_tokens, Benchmark, MinHashParams, MinHasher, NGramIndex, DEFAULT_NGRAM};
use designer_core::qbank::{choose_k_by_silhouette, kmeans, stratified_sample, DifficultyRatio};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn emb(v: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(v).expect("finite non-empty vector")
}

fn uniform_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<EmbeddingVector> {
    (0..n).map(|_| emb((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect()
}

fn dummy_logics(n: usize) -> Vec<DesignLogic> {
    (0..n)
        .map(|i| {
            let q = QuestionRecord::bank(format!("q{i}"), format!("question {i}"), Discipline::unknown());
            DesignLogic::new(&q, format!("graph TD; A{i}-->B{i};"))
        })
        .collect()
}

// Criterion 1 ---------------------------------------------------------------

/// Explicit adjacency, exhaustive component scan, exhaustive centroid.
fn oracle_dedup(n: usize, s: impl Fn(usize, usize) -> f64, tau: f64) -> (usize, Vec<usize>) {
    let adj: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i != j && s(i, j) > tau).collect()).collect();
    let mut seen = vec![false; n];
    let mut kept = Vec::new();
    let mut components = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            members.push(u);
            for v in 0..n {
                if adj[u][v] && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        members.sort_unstable();
        let mut best = (members[0], f64::NEG_INFINITY);
        for &i in &members {
            let total: f64 = members.iter().filter(|&&j| j != i).map(|&j| s(i, j)).sum();
            if total > best.1 {
                best = (i, total);
            }
        }
        kept.push(best.0);
    }
    kept.sort_unstable();
    (components, kept)
}

/// Symmetric unit-diagonal matrix mixing continuous values, a coarse grid
/// (forcing centroid ties) and entries exactly at `tau`.
fn random_matrix(rng: &mut ChaCha8Rng, n: usize, tau: f64) -> SimilarityMatrix {
    let density = rng.gen_range(0.0..4.0) / n as f64;
    let mut e = vec![0.0; n * n];
    for i in 0..n {
        e[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = match rng.gen_range(0..20) {
                0 => tau,
                1 => (rng.gen_range(0..=40) as f64) * 0.05 - 1.0,
                _ if rng.gen_bool(density.min(1.0)) => rng.gen_range(tau..=1.0),
                _ => rng.gen_range(-1.0..tau),
            };
            e[i * n + j] = v;
            e[j * n + i] = v;
        }
    }
    SimilarityMatrix::from_dense(n, e).expect("valid matrix")
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut cases = 0;
    for &n in &[5usize, 50, 200] {
        for &tau in &[0.5, 0.85, 0.99] {
            for seed in 0..100u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + n as u64 + (tau * 100.0) as u64);
                let s = random_matrix(&mut rng, n, tau);
                let mut logics = dummy_logics(n);
                let got = dedup_design_logics_with(&mut logics, &s, tau, EdgeRule::Strict).map_err(|e| e.to_string())?;
                let (components, kept) = oracle_dedup(n, |i, j| s.get(i, j), tau);
                ensure(got.kept == kept && got.components == components, || format!("n={n} tau={tau} seed={seed}: kept {:?} vs oracle {:?}", got.kept, kept))?;
                let active: Vec<usize> = (0..n).filter(|&i| logics[i].status == LogicStatus::Active).collect();
                ensure(active == kept, || format!("n={n} tau={tau} seed={seed}: statuses disagree with kept set"))?;
                cases += 1;
            }
        }
    }
    // Same comparison through the embedding entry point.
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 5 + (seed as usize * 7) % 150;
        let centers = uniform_points(&mut rng, 1 + n / 10, 16);
        let points: Vec<EmbeddingVector> = (0..n)
            .map(|_| {
                let c = &centers[rng.gen_range(0..centers.len())];
                let noise = rng.gen_range(0.01..0.6);
                emb(c.as_slice().iter().map(|x| x + rng.gen_range(-noise..noise)).collect())
            })
            .collect();
        let mut logics = dummy_logics(n);
        for (l, p) in logics.iter_mut().zip(&points) {
            l.embedding = Some(p.clone());
        }
        let s = pairwise_similarity(&points).map_err(|e| e.to_string())?;
        let got = dedup_design_logics(&mut logics, DEFAULT_TAU, EdgeRule::Strict).map_err(|e| e.to_string())?;
        let (_, kept) = oracle_dedup(n, |i, j| s.get(i, j), DEFAULT_TAU);
        ensure(got.kept == kept, || format!("embedding case seed={seed}: {:?} vs {:?}", got.kept, kept))?;
        cases += 1;
    }
    let worked = SimilarityMatrix::with_pairs(4, 0.0, &[(0, 1, 0.9), (1, 2, 0.9), (0, 2, 0.5)]);
    let mut logics = dummy_logics(4);
    let got = dedup_design_logics_with(&mut logics, &worked, 0.85, EdgeRule::Strict).map_err(|e| e.to_string())?;
    ensure(got.kept == vec![1, 3], || format!("worked n=4 instance kept {:?}", got.kept))?;
    let elapsed = started.elapsed();
    ensure(elapsed.as_secs_f64() < 5.0, || format!("took {elapsed:?}, limit 5 s"))?;
    Ok(format!("{cases} instances match the oracle; worked n=4 keeps {{1, 3}}; {:.2} s", elapsed.as_secs_f64()))
}

// Criterion 2 ---------------------------------------------------------------

fn criterion_2() -> Outcome {
    let c = PipelineConfig::default();
    let snapshot = [
        ("logic.tau", c.logic.tau.to_string(), "0.85"),
        ("matching.top_k", c.matching.top_k.to_string(), "5"),
        ("postproc.ngram_n", c.postproc.ngram_n.to_string(), "13"),
        ("selection.ratio", c.selection.ratio.to_string(), "3:2:1"),
        ("curation.max_words", c.curation.max_words.to_string(), "5000"),
        ("curation.min_score", c.curation.min_score.to_string(), "3"),
    ];
    for (key, got, want) in &snapshot {
        ensure(got == want, || format!("{key} = {got}, expected {want}"))?;
    }
    ensure(c.logic.edge_rule == EdgeRule::Strict, || "edge rule is not strict".into())?;
    ensure(
        DEFAULT_TAU == 0.85 && DEFAULT_TOP_K == 5 && DEFAULT_NGRAM == 13 && MAX_SEGMENT_WORDS == 5000 && DEFAULT_MIN_SCORE == 3,
        || "library constants drifted from the config defaults".into(),
    )?;
    ensure(DifficultyRatio::default() == DifficultyRatio([3, 2, 1]), || "default ratio is not 3:2:1".into())?;
    // The defaults must survive a TOML round trip unchanged.
    let reparsed = PipelineConfig::from_toml(&c.to_toml()).map_err(|e| e.to_string())?;
    ensure(reparsed == c, || "defaults change across a TOML round trip".into())?;
    Ok("tau 0.85, top-k 5, n-gram 13, ratio 3:2:1, block 5000 words, min score 3".into())
}

// Criterion 3 ---------------------------------------------------------------

fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn naive_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn naive_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    const SIZES: [usize; 20] = [2, 3, 5, 10, 25, 50, 100, 150, 200, 300, 400, 500, 750, 1000, 1200, 1500, 1750, 2000, 2000, 64];
    let mut checked = 0;
    for (seed, &n) in SIZES.iter().enumerate() {
        for &d in &[8usize, 64] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed as u64 * 31 + d as u64);
            let mut e = uniform_points(&mut rng, n, d);
            if n > 4 {
                // Repeated rows exercise the equal-vector path.
                e[n - 1] = e[0].clone();
            }
            let rows: Vec<&[f64]> = e.iter().map(EmbeddingVector::as_slice).collect();
            let pairs = (n * (n - 1) / 2) as f64;
            let (mut cos_sum, mut l2_sum) = (0.0, 0.0);
            for i in 0..n {
                for j in i + 1..n {
                    cos_sum += 1.0 - naive_cos(rows[i], rows[j]);
                    l2_sum += naive_l2(rows[i], rows[j]);
                }
            }
            let nn: f64 = (0..n)
                .map(|i| (0..n).filter(|&j| j != i).map(|j| 1.0 - naive_cos(rows[i], rows[j])).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / n as f64;
            let mut log_sigma = 0.0;
            let mut product_sigma = 1.0;
            for j in 0..d {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
                log_sigma += var.sqrt().ln();
                product_sigma *= var.sqrt();
            }
            let radius_oracle = product_sigma.powf(1.0 / d as f64);
            let k = default_inertia_k(n);
            let clustering = kmeans(&e, k, seed as u64).map_err(|e| e.to_string())?;
            let inertia_oracle: f64 = rows
                .iter()
                .map(|r| clustering.centroids.iter().map(|c| naive_sq(r, c)).fold(f64::INFINITY, f64::min))
                .sum();

            let pd = mean_pairwise_distances(&e).map_err(|e| e.to_string())?;
            let got_nn = one_nn_distance(&e).map_err(|e| e.to_string())?;
            let got_radius = radius(&e).map_err(|e| e.to_string())?;
            let got_inertia = cluster_inertia(&e, k, seed as u64).map_err(|e| e.to_string())?.inertia;
            let tag = format!("N={n} d={d} seed={seed}");
            ensure(close(pd.cosine, cos_sum / pairs), || format!("{tag}: cosine {} vs {}", pd.cosine, cos_sum / pairs))?;
            ensure(close(pd.l2, l2_sum / pairs), || format!("{tag}: l2 {} vs {}", pd.l2, l2_sum / pairs))?;
            ensure(close(got_nn, nn), || format!("{tag}: 1-NN {got_nn} vs {nn}"))?;
            ensure(close(got_radius, radius_oracle) && close(got_radius, (log_sigma / d as f64).exp()), || format!("{tag}: radius {got_radius} vs {radius_oracle}"))?;
            ensure(close(got_inertia, inertia_oracle), || format!("{tag}: inertia {got_inertia} vs {inertia_oracle}"))?;
            checked += 1;
        }
    }

    let same = vec![emb(vec![0.3, -1.2, 2.0]); 5];
    let pd = mean_pairwise_distances(&same).map_err(|e| e.to_string())?;
    let zeros = [pd.cosine, pd.l2, one_nn_distance(&same).unwrap(), radius(&same).unwrap(), cluster_inertia(&same, 1, 0).unwrap().inertia];
    ensure(zeros.iter().all(|&x| x == 0.0), || format!("identical set gives {zeros:?}"))?;
    let ortho = [emb(vec![1.0, 0.0]), emb(vec![0.0, 1.0])];
    let pd = mean_pairwise_distances(&ortho).map_err(|e| e.to_string())?;
    ensure(pd.cosine == 1.0 && pd.l2 == 2f64.sqrt(), || format!("orthogonal pair gives cosine {} l2 {}", pd.cosine, pd.l2))?;
    let sigma = [emb(vec![1.0, 2.0, 4.0]), emb(vec![-1.0, -2.0, -4.0])];
    let r = radius(&sigma).map_err(|e| e.to_string())?;
    ensure(r == 2.0, || format!("sigma (1,2,4) gives radius {r}"))?;

    let elapsed = started.elapsed();
    ensure(elapsed.as_secs_f64() < 60.0, || format!("took {elapsed:?}, limit 60 s"))?;
    Ok(format!("{checked} (N, d, seed) cases within 1e-9; analytic cases exact; {:.1} s", elapsed.as_secs_f64()))
}

// Criterion 4 ---------------------------------------------------------------

fn words_between(rng: &mut ChaCha8Rng, prefix: &str, range: std::ops::Range<usize>) -> Vec<String> {
    let n = rng.gen_range(range);
    words(rng, prefix, n)
}

fn words(rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|_| format!("{prefix}{}", rng.gen_range(0..1_000_000))).collect()
}

fn record(text: String) -> QuestionRecord {
    QuestionRecord::bank(format!("r{}", designer_core::model::stable_hash(&text)), text, Discipline::unknown())
}

fn punctuate(rng: &mut ChaCha8Rng, tokens: &[String]) -> String {
    let mut out = Vec::new();
    for t in tokens {
        let t = match rng.gen_range(0..6) {
            0 => format!("{t},"),
            1 => format!("\u{201c}{}\u{201d}", t.to_uppercase()),
            2 => format!("({t})"),
            3 => format!("{t}..."),
            4 => format!("{t}!"),
            _ => t.clone(),
        };
        out.push(t);
        if rng.gen_range(0..5) == 0 {
            out.push("-".into());
        }
    }
    out.join(" ")
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let items: Vec<Vec<String>> = (0..200).map(|_| words(&mut rng, "bench", 40)).collect();
    let bench = Benchmark {
        name: "planted".into(),
        items: items.iter().map(|w| w.join(" ")).collect(),
    };
    let index = NGramIndex::build(&[bench.clone()], 13).map_err(|e| e.to_string())?;
    let plant = |rng: &mut ChaCha8Rng, len: usize, punct: bool| -> Vec<QuestionRecord> {
        items
            .iter()
            .map(|item| {
                let start = rng.gen_range(0..=item.len() - len);
                let span = &item[start..start + len];
                let body = if punct { punctuate(rng, span) } else { span.join(" ") };
                let pre = words(rng, "fill", 15).join(" ");
                let post = words(rng, "fill", 15).join(" ");
                record(format!("{pre} {body} {post}"))
            })
            .collect()
    };
    let flagged = |records: &mut Vec<QuestionRecord>| -> Result<usize, String> {
        let report = decontaminate(records, &index).map_err(|e| e.to_string())?;
        Ok(report.flagged.len())
    };
    let mut thirteen = plant(&mut rng, 13, false);
    let hit13 = flagged(&mut thirteen)?;
    ensure(hit13 == 200, || format!("{hit13}/200 planted 13-token overlaps flagged"))?;
    ensure(thirteen.iter().all(|r| r.status == RecordStatus::DroppedContaminated), || "flagged records not marked".into())?;
    let mut twelve = plant(&mut rng, 12, false);
    let hit12 = flagged(&mut twelve)?;
    ensure(hit12 == 0, || format!("{hit12}/200 planted 12-token overlaps flagged"))?;
    let mut punct = plant(&mut rng, 13, true);
    let hitp = flagged(&mut punct)?;
    ensure(hitp == 200, || format!("{hitp}/200 punctuation variants flagged"))?;

    // Sliding-window oracle over unhashed token windows, three benchmarks.
    let mut agreements = 0;
    for corpus in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + corpus);
        let benches: Vec<Benchmark> = (0..3)
            .map(|b| Benchmark {
                name: format!("b{b}"),
                items: (0..60).map(|_| words_between(&mut rng, "tok", 5..50).join(" ")).collect(),
            })
            .collect();
        let all_items: Vec<Vec<String>> = benches.iter().flat_map(|b| b.items.iter().map(|i| normalize_tokens(i))).collect();
        let mut records = Vec::new();
        for _ in 0..1000 {
            let mut text = words_between(&mut rng, "tok", 0..30).join(" ");
            if rng.gen_bool(0.5) {
                let item = &all_items[rng.gen_range(0..all_items.len())];
                let len = rng.gen_range(1..=item.len());
                let start = rng.gen_range(0..=item.len() - len);
                let span = &item[start..start + len];
                let body = if rng.gen_bool(0.3) { punctuate(&mut rng, span) } else { span.join(" ") };
                text = format!("{text} {body} {}", words_between(&mut rng, "tok", 0..10).join(" "));
            }
            records.push(record(text));
        }
        let windows: Vec<HashSet<Vec<String>>> = benches
            .iter()
            .map(|b| b.items.iter().flat_map(|i| normalize_tokens(i).windows(13).map(<[String]>::to_vec).collect::<Vec<_>>()).collect())
            .collect();
        let expected: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| normalize_tokens(&r.text).windows(13).any(|w| windows.iter().any(|set| set.contains(w))))
            .map(|(i, _)| i)
            .collect();
        let mut per_bench = BTreeMap::new();
        for (b, set) in windows.iter().enumerate() {
            let c = records.iter().filter(|r| normalize_tokens(&r.text).windows(13).any(|w| set.contains(w))).count();
            per_bench.insert(format!("b{b}"), c);
        }
        let index = NGramIndex::build(&benches, 13).map_err(|e| e.to_string())?;
        let report = decontaminate(&mut records, &index).map_err(|e| e.to_string())?;
        ensure(report.flagged == expected, || format!("corpus {corpus}: {} flagged vs oracle {}", report.flagged.len(), expected.len()))?;
        ensure(report.per_benchmark == per_bench, || format!("corpus {corpus}: per-benchmark counts differ"))?;
        agreements += 1;
    }
    Ok(format!("13-token 200/200, 12-token 0/200, punctuation variants 200/200, oracle exact on {agreements} corpora of 1000"))
}

// Criterion 5 ---------------------------------------------------------------

fn word_shingles(text: &str, n: usize) -> BTreeSet<Vec<String>> {
    let t = normalize_tokens(text);
    if t.len() < n {
        return [t].into_iter().filter(|v| !v.is_empty()).collect();
    }
    t.windows(n).map(<[String]>::to_vec).collect()
}

fn exact_jaccard(a: &str, b: &str) -> f64 {
    let (x, y) = (word_shingles(a, 5), word_shingles(b, 5));
    let inter = x.intersection(&y).count();
    inter as f64 / (x.len() + y.len() - inter) as f64
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut texts = Vec::new();
    let mut pairs = Vec::new();
    for p in 0..150 {
        let base = words(&mut rng, &format!("d{p}x"), 200);
        let r = match p % 3 {
            0 => rng.gen_range(0..=10),
            1 => rng.gen_range(11..=21),
            _ => rng.gen_range(22..=120),
        };
        let mut variant = base.clone();
        let fresh = words(&mut rng, &format!("v{p}x"), r);
        variant.truncate(200 - r);
        variant.extend(fresh);
        texts.push(base.join(" "));
        texts.push(variant.join(" "));
        pairs.push((2 * p, 2 * p + 1));
    }
    let params = MinHashParams::default();
    let found = near_duplicates(&texts, &params).map_err(|e| e.to_string())?;
    let mut group_of = vec![usize::MAX; texts.len()];
    for (g, members) in found.groups.iter().enumerate() {
        for &m in members {
            group_of[m] = g;
        }
    }
    let together = |a: usize, b: usize| group_of[a] != usize::MAX && group_of[a] == group_of[b];
    let (mut high, mut low) = (0, 0);
    for &(a, b) in &pairs {
        let j = exact_jaccard(&texts[a], &texts[b]);
        if j >= 0.9 {
            high += 1;
            ensure(together(a, b), || format!("pair ({a},{b}) with Jaccard {j:.3} not detected"))?;
        }
        if j < 0.8 {
            low += 1;
            ensure(!together(a, b), || format!("pair ({a},{b}) with Jaccard {j:.3} merged"))?;
        }
    }
    // A dropped text must share a verified pair at or above the threshold.
    for &d in &found.dropped {
        let g = &found.groups[group_of[d]];
        ensure(g.iter().any(|&o| o != d && exact_jaccard(&texts[o], &texts[d]) >= 0.8), || format!("text {d} dropped without a partner at 0.8"))?;
    }
    ensure(high > 0 && low > 0, || "corpus lacks pairs on both sides of the threshold".into())?;

    let mut worst: f64 = 0.0;
    for &(a, b) in pairs.iter().step_by(5) {
        let exact = exact_jaccard(&texts[a], &texts[b]);
        let mean_est = (0..20u64)
            .map(|seed| {
                let h = MinHasher::new(128, 5, seed);
                h.signature(&texts[a]).estimate_jaccard(&h.signature(&texts[b]))
            })
            .sum::<f64>()
            / 20.0;
        worst = worst.max((mean_est - exact).abs());
    }
    ensure(worst <= 0.1, || format!("mean estimate error {worst:.4} exceeds 0.1"))?;
    Ok(format!("{high} pairs >= 0.9 all detected, {low} pairs < 0.8 all kept apart; worst mean |est - exact| {worst:.4}"))
}

// Criterion 6 ---------------------------------------------------------------

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let discipline = Discipline::unknown();
    let mut sizes = vec![1usize, 2, 5, 10_000];
    while sizes.len() < 50 {
        sizes.push(rng.gen_range(1..=10_000));
    }
    for (t, &n) in sizes.iter().enumerate() {
        let d = [4usize, 16, 32][t % 3];
        let points = uniform_points(&mut rng, n, d);
        let entries: Vec<IndexEntry> = points
            .iter()
            .enumerate()
            .map(|(i, e)| IndexEntry {
                logic_id: format!("logic-{i:05}"),
                embedding: e.clone(),
            })
            .collect();
        let index = LogicIndex::new(discipline.clone(), entries.clone()).map_err(|e| e.to_string())?;
        let query = uniform_points(&mut rng, 1, d).remove(0);
        let k = [1, 5, 17, n, n + 3][t % 5];
        let got = retrieve_top_k(&query, &index, k).map_err(|e| e.to_string())?;
        let mut oracle: Vec<(String, f64)> = entries.iter().map(|e| (e.logic_id.clone(), naive_cos(query.as_slice(), e.embedding.as_slice()))).collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        oracle.truncate(k);
        ensure(got.len() == oracle.len(), || format!("index {t}: {} results vs {}", got.len(), oracle.len()))?;
        for (g, o) in got.iter().zip(&oracle) {
            ensure(g.0 == o.0 && (g.1 - o.1).abs() <= 1e-12, || format!("index {t} (n={n}, k={k}): {g:?} vs {o:?}"))?;
        }
        let probe = rng.gen_range(0..n);
        let top = retrieve_top_k(&points[probe], &index, 1).map_err(|e| e.to_string())?;
        ensure(top[0].0 == entries[probe].logic_id && (top[0].1 - 1.0).abs() <= 1e-9, || format!("index {t}: identity query gave {:?}", top[0]))?;
    }
    Ok("50 indices (n up to 10000) equal the full-sort oracle; identity queries rank first at 1 +- 1e-9".into())
}

// Criterion 7 ---------------------------------------------------------------

/// Documented rule: each ratio stratum takes min(target, available); a
/// shortfall is filled from harder strata nearest first, then easier ratio
/// strata nearest first, then Easy and unlabeled.
fn oracle_counts(pools: [usize; 4], share: usize, ratio: DifficultyRatio) -> [usize; 4] {
    let targets = ratio.targets(share);
    let mut taken = [0usize; 4];
    for s in 0..3 {
        taken[s] = targets[s].min(pools[s]);
    }
    let own = taken;
    for s in 0..3 {
        let mut deficit = targets[s] - own[s];
        let mut donors: Vec<usize> = (0..s).rev().collect();
        donors.extend(s + 1..3);
        donors.push(3);
        for dnr in donors {
            let extra = (pools[dnr] - taken[dnr]).min(deficit);
            taken[dnr] += extra;
            deficit -= extra;
        }
    }
    taken
}

fn stratum_cluster(counts: [usize; 4], start: usize) -> Vec<QuestionRecord> {
    use DifficultyLabel::*;
    let mut out = Vec::new();
    for (c, d) in counts.iter().zip([VeryHard, Hard, Medium, Easy]) {
        for _ in 0..*c {
            let mut q = QuestionRecord::bank(format!("q{:05}", start + out.len()), "text", Discipline::unknown());
            q.difficulty = Some(d);
            out.push(q);
        }
    }
    out
}

fn criterion_7() -> Outcome {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let d = 2 + (seed as usize % 4);
        let mut centers: Vec<Vec<f64>> = Vec::new();
        while centers.len() < 3 {
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
            if centers.iter().all(|o| naive_l2(o, &c) > 8.0) {
                centers.push(c);
            }
        }
        let points: Vec<EmbeddingVector> = centers
            .iter()
            .flat_map(|c| (0..20 + seed as usize).map(|_| c.iter().map(|x| x + rng.gen_range(-0.7..0.7)).collect::<Vec<f64>>()).collect::<Vec<_>>())
            .map(emb)
            .collect();
        let search = choose_k_by_silhouette(&points, 2..=8, seed).map_err(|e| e.to_string())?;
        ensure(search.k == 3, || format!("seed {seed}: silhouette chose k = {}", search.k))?;
    }

    let ratio = DifficultyRatio::default();
    let ample = stratum_cluster([40, 40, 40, 40], 0);
    for quota in [6, 12, 60, 78] {
        let s = stratified_sample(std::slice::from_ref(&ample), quota, ratio, 1);
        let got = [s.per_difficulty["Very Hard"], s.per_difficulty["Hard"], s.per_difficulty["Medium"], s.per_difficulty["Easy"]];
        let want = [quota / 2, quota / 3, quota / 6, 0];
        ensure(got == want, || format!("quota {quota}: {got:?} vs exact 3:2:1 {want:?}"))?;
    }
    let two = [stratum_cluster([30, 30, 30, 0], 0), stratum_cluster([30, 30, 30, 0], 1000)];
    let s = stratified_sample(&two, 24, ratio, 2);
    ensure(s.per_cluster == vec![12, 12] && s.per_difficulty["Very Hard"] == 12 && s.per_difficulty["Hard"] == 8 && s.per_difficulty["Medium"] == 4, || format!("two clusters: {:?} {:?}", s.per_cluster, s.per_difficulty))?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut cases = 0;
    for _ in 0..300 {
        let pools = [rng.gen_range(0..12), rng.gen_range(0..12), rng.gen_range(0..12), rng.gen_range(0..12)];
        let total: usize = pools.iter().sum();
        let share = rng.gen_range(0..=total);
        let r = DifficultyRatio([rng.gen_range(0..5), rng.gen_range(0..5), rng.gen_range(1..5)]);
        let s = stratified_sample(&[stratum_cluster(pools, 0)], share, r, rng.gen());
        let got = [s.per_difficulty["Very Hard"], s.per_difficulty["Hard"], s.per_difficulty["Medium"], s.per_difficulty["Easy"]];
        let want = oracle_counts(pools, share, r);
        ensure(got == want, || format!("pools {pools:?} share {share} ratio {r}: {got:?} vs backfill oracle {want:?}"))?;
        ensure(s.selected.len() == share, || format!("pools {pools:?}: selected {} of {share}", s.selected.len()))?;
        cases += 1;
    }
    // Hand-checked: Very Hard short by 2 borrows nothing harder, so Hard fills it.
    let s = stratified_sample(&[stratum_cluster([1, 10, 10, 10], 0)], 6, ratio, 3);
    let got = [s.per_difficulty["Very Hard"], s.per_difficulty["Hard"], s.per_difficulty["Medium"], s.per_difficulty["Easy"]];
    ensure(got == [1, 4, 1, 0], || format!("Very Hard shortfall: {got:?}"))?;
    Ok(format!("k = 3 recovered on 20 seeds; exact 3:2:1 when strata suffice; backfill matches the documented rule on {cases} cases"))
}

// Criterion 8 ---------------------------------------------------------------

fn fixture_config(store: &Path) -> Result<PipelineConfig, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/pipeline.toml");
    let mut config = PipelineConfig::load(&path).map_err(|e| e.to_string())?;
    config.store_dir = store.to_path_buf();
    Ok(config)
}

fn snapshot(store: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let root = store.join("stores");
    let mut out = BTreeMap::new();
    let mut stack = vec![root.clone()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable store") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(&root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn run_all(config: PipelineConfig, options: RunOptions) -> Result<designer_core::pipeline::RunReport, PipelineError> {
    Pipeline::new(config)?.with_options(options).run_all()
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = tmp.path().join("a");
    let first = run_all(fixture_config(&a)?, RunOptions::default()).map_err(|e| e.to_string())?;
    let reference = snapshot(&a);
    let count = |name: &str| reference.get(Path::new(name)).map_or(0, |b| b.iter().filter(|&&c| c == b'\n').count());
    let inputs = [("label-bank/questions.jsonl", 40), ("curate-web/scored.jsonl", 30)];
    for (file, want) in inputs {
        ensure(count(file) == want, || format!("{file} has {} records, expected {want}", count(file)))?;
    }
    ensure(count("curate-book/labeled.jsonl") == 50, || "book segments were not all labeled".into())?;
    ensure(count("respond/dataset.jsonl") > 0, || "run produced an empty dataset".into())?;

    let b = tmp.path().join("b");
    run_all(fixture_config(&b)?, RunOptions::default()).map_err(|e| e.to_string())?;
    ensure(snapshot(&b) == reference, || "two fresh runs differ".into())?;

    let mut kills = Vec::new();
    for limit in [30usize, 97, 161] {
        let c = tmp.path().join(format!("kill-{limit}"));
        match run_all(fixture_config(&c)?, RunOptions { halt_after_items: Some(limit), fresh: false }) {
            Err(PipelineError::Halted { stage, .. }) => kills.push(format!("{limit} items ({stage})")),
            other => return Err(format!("halt after {limit} did not interrupt: {:?}", other.map(|_| ()))),
        }
        run_all(fixture_config(&c)?, RunOptions::default()).map_err(|e| e.to_string())?;
        ensure(snapshot(&c) == reference, || format!("kill after {limit} items then resume differs"))?;
    }

    let again = run_all(fixture_config(&a)?, RunOptions::default()).map_err(|e| e.to_string())?;
    ensure(again.backend_calls == 0 && again.stages.iter().all(|s| s.state == StageState::AlreadyComplete), || format!("rerun made {} provider calls", again.backend_calls))?;
    let mut cached = fixture_config(&tmp.path().join("cached"))?;
    cached.provider.cache_dir = Some(a.join("cache"));
    let warm = run_all(cached, RunOptions::default()).map_err(|e| e.to_string())?;
    ensure(warm.backend_calls == 0, || format!("fresh store over a warm cache made {} provider calls", warm.backend_calls))?;
    ensure(snapshot(&tmp.path().join("cached")) == reference, || "cache-served run differs".into())?;
    ensure(first.backend_calls > 0 && Stage::ALL.len() == first.stages.len(), || "first run did not exercise the provider".into())?;
    Ok(format!(
        "{} store files byte-identical across 2 runs and kill+resume at {}; reruns made 0 of {} provider calls",
        reference.len(),
        kills.join(", "),
        first.backend_calls
    ))
}

// Criterion 9 ---------------------------------------------------------------

fn labeled(qtype: Option<QuestionType>, difficulty: Option<DifficultyLabel>, i: usize) -> QuestionRecord {
    let mut q = QuestionRecord::bank(format!("q{i}"), "question", Discipline::unknown());
    q.qtype = qtype;
    q.difficulty = difficulty;
    q
}

fn criterion_9() -> Outcome {
    let mut records = Vec::new();
    for (t, count) in [(QuestionType::ProblemSolving, 6492), (QuestionType::MultipleChoice, 2994), (QuestionType::Proof, 439), (QuestionType::Other, 75)] {
        for _ in 0..count {
            records.push(labeled(Some(t), Some(DifficultyLabel::Hard), records.len()));
        }
    }
    let report = distribution_report(&records).map_err(|e| e.to_string())?;
    let want = [("Problem-solving", 64.92), ("Multiple-choice", 29.94), ("Proof", 4.39), ("Other", 0.75)];
    for (label, pct) in want {
        ensure(report.by_qtype[label] == pct, || format!("{label}: {} vs {pct}", report.by_qtype[label]))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for corpus in 0..200 {
        let n = rng.gen_range(1..3000);
        let records: Vec<QuestionRecord> = (0..n)
            .map(|i| {
                let t = (!rng.gen_bool(0.05)).then(|| QuestionType::ALL[rng.gen_range(0..4)]);
                let d = (!rng.gen_bool(0.05)).then(|| DifficultyLabel::ALL[rng.gen_range(0..4)]);
                let mut q = labeled(t, d, i);
                if rng.gen_bool(0.1) {
                    q.status = RecordStatus::DroppedDuplicate;
                }
                q
            })
            .collect();
        let Ok(report) = distribution_report(&records) else { continue };
        for (name, table, unlabeled) in [("qtype", &report.by_qtype, report.unlabeled_qtype), ("difficulty", &report.by_difficulty, report.unlabeled_difficulty)] {
            let sum: f64 = table.values().sum();
            if unlabeled < report.n_active {
                ensure((sum - 100.0).abs() <= 0.01, || format!("corpus {corpus}: {name} sums to {sum}"))?;
            }
        }
    }
    Ok("64.92 / 29.94 / 4.39 / 0.75 reproduced exactly; 200 random corpora sum to 100 +- 0.01".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("logic dedup equals the brute-force oracle", criterion_1),
        ("default config carries the pipeline constants", criterion_2),
        ("diversity metrics equal naive oracles", criterion_3),
        ("13-gram decontamination", criterion_4),
        ("MinHash near-duplicate detection", criterion_5),
        ("top-k retrieval equals full sort", criterion_6),
        ("silhouette k and stratified sampling", criterion_7),
        ("run-all determinism, resume and caching", criterion_8),
        ("distribution report percentages", criterion_9),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
