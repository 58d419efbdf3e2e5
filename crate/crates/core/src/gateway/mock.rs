//! Deterministic offline provider.
//!
//! Completions come from an explicit fixture map keyed by request hash, or
//! else from a rule-based simulator that recognizes each pipeline prompt and
//! answers it the way the prompt's own rubric or few-shot examples dictate.
//! Embeddings are hash-seeded pseudo-random unit vectors.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest, EmbedRequest};
pub use crate::model::stable_hash;
use crate::prompts::{self, markers};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub embedding_dim: usize,
    pub seed: u64,
    /// Request hash (see [`ChatRequest::cache_key`]) to completion text.
    pub fixtures: BTreeMap<String, String>,
    /// Any chat prompt or embedding input containing one of these fails.
    pub fail_when_contains: Vec<String>,
    pub latency_ms: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            embedding_dim: 64,
            seed: 0,
            fixtures: BTreeMap::new(),
            fail_when_contains: Vec::new(),
            latency_ms: 0,
        }
    }
}

pub struct MockProvider {
    config: MockConfig,
}

impl MockProvider {
    pub fn new(config: MockConfig) -> Self {
        MockProvider { config }
    }

    fn scripted_failure(&self, text: &str) -> Result<(), BackendError> {
        match self.config.fail_when_contains.iter().find(|n| text.contains(n.as_str())) {
            Some(needle) => Err(BackendError::Fatal(format!("scripted failure on {needle:?}"))),
            None => Ok(()),
        }
    }

    fn pause(&self) {
        if self.config.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.config.latency_ms));
        }
    }
}

impl Backend for MockProvider {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.pause();
        if let Some(text) = self.config.fixtures.get(&req.cache_key()) {
            return Ok(text.clone());
        }
        let prompt = req.prompt();
        self.scripted_failure(prompt)?;
        Ok(simulate(prompt))
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError> {
        self.pause();
        req.texts
            .iter()
            .map(|text| {
                self.scripted_failure(text)?;
                let input = req.formatted_input(text);
                let seed = stable_hash(&format!("{}\u{0}{}", req.model, input)) ^ self.config.seed;
                Ok(unit_vector(seed, self.config.embedding_dim))
            })
            .collect()
    }
}

/// Gaussian direction on the unit sphere, seeded.
pub fn unit_vector(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut v: Vec<f64> = (0..dim)
            .map(|_| {
                // Box-Muller.
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen::<f64>();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// Answers a pipeline prompt without a model.
pub fn simulate(prompt: &str) -> String {
    if prompt.contains(markers::DISCIPLINE) {
        let text = prompts::extract_quoted_input(prompt).unwrap_or("");
        format!("\"labels\": \"{}\"", simulate_discipline(text))
    } else if prompt.contains(markers::DIFFICULTY) {
        let text = prompts::extract_quoted_input(prompt).unwrap_or("");
        format!("Difficulty: {}", simulate_difficulty(text))
    } else if prompt.contains(markers::QTYPE) {
        let text = prompts::extract_quoted_input(prompt).unwrap_or("");
        format!("Question type: {}", simulate_qtype(text))
    } else if prompt.contains(markers::WEB_RUBRIC) {
        let text = prompts::extract_section(prompt, markers::WEB_RUBRIC).unwrap_or("");
        simulate_rubric(text)
    } else if prompt.contains(markers::READABILITY) {
        let text = prompts::extract_section(prompt, "# Text").unwrap_or("");
        let label = if simulate_readable(text) { "positive" } else { "negative" };
        format!("Readability: {label}")
    } else if prompt.contains(markers::HELPFULNESS) {
        let text = prompts::extract_section(prompt, "# Extract").unwrap_or("");
        format!("Helpfulness: {}", simulate_helpfulness(text))
    } else if prompt.contains(markers::LOGIC_EXTRACTION) {
        let text = prompt.rsplit("**Question:**\n").next().unwrap_or("");
        simulate_extraction(text)
    } else if prompt.contains(markers::SYNTHESIS) {
        simulate_synthesis(prompt)
    } else {
        simulate_response(prompt)
    }
}

fn lower_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const FEW_SHOT_PHOTON: &str = "Consider a photon traveling at the speed of light.";
const FEW_SHOT_POLE: &str = "A heavy pole, of mass M and length L, is freely hinged";
const FEW_SHOT_RENTAL: &str = "If John rented a car for $150";
const FEW_SHOT_SEQUENCES: &str = "Determine the number of $k$-letter sequences";
const FEW_SHOT_INTEGRAL: &str = "Consider the function $f(x) = \\frac{e^{x}}{x}$.";
const FEW_SHOT_ODD: &str = "is an odd function and is monotonically increasing";

const DISCIPLINE_KEYWORDS: &[(&str, &[&str])] = &[
    ("Physics", &["photon", "quantum", "relativity", "electron", "momentum", "velocity", "wavelength", "thermodynamic", "entropy", "magnetic"]),
    ("Mechanics", &["torque", "equilibrium", "beam", "hinged", "stress", "strain", "friction", "pulley"]),
    ("Mathematics", &["integer", "polynomial", "theorem", "prime", "integral", "matrix", "equation", "derivative", "probability", "geometry"]),
    ("Chemistry", &["molecule", "reaction", "acid", "catalyst", "oxidation", "molar", "bond", "isotope", "solvent"]),
    ("Biology", &["cell", "gene", "protein", "enzyme", "dna", "species", "evolution", "mitochondria", "organism"]),
    ("Economics", &["market", "inflation", "demand", "supply", "gdp", "monetary", "elasticity", "tariff"]),
    ("Computer Science and Technology", &["algorithm", "compiler", "database", "recursion", "complexity", "cache", "hashing", "graph"]),
    ("Law", &["contract", "court", "statute", "liability", "plaintiff", "tort", "defendant"]),
    ("World History", &["empire", "dynasty", "revolution", "treaty", "medieval", "colonial"]),
    ("Philosophy", &["ethics", "epistemology", "virtue", "metaphysics", "kant", "utilitarian"]),
];

pub fn simulate_discipline(text: &str) -> &'static str {
    if text.contains(FEW_SHOT_PHOTON) {
        return "Physics";
    }
    if text.contains(FEW_SHOT_POLE) {
        return "Mechanics";
    }
    if text.contains(FEW_SHOT_RENTAL) {
        return "Mathematics";
    }
    let words = lower_words(text);
    let mut best: Option<(&'static str, usize)> = None;
    for (label, keys) in DISCIPLINE_KEYWORDS {
        let hits = words
            .iter()
            .filter(|w| keys.iter().any(|k| w.starts_with(k)))
            .count();
        if hits > 0 && best.map_or(true, |(_, b)| hits > b) {
            best = Some((label, hits));
        }
    }
    best.map_or("Unknown Discipline", |(label, _)| label)
}

pub fn simulate_difficulty(text: &str) -> &'static str {
    if text.contains(FEW_SHOT_PHOTON) {
        return "Very Hard";
    }
    if text.contains(FEW_SHOT_POLE) {
        return "Hard";
    }
    if text.contains(FEW_SHOT_RENTAL) {
        return "Easy";
    }
    const CUES: &[&str] = &["derive", "prove", "justify", "rigorous", "analyze", "analyse", "evaluate", "optimal", "compare", "design"];
    let words = lower_words(text);
    let mut score = words
        .iter()
        .filter(|w| CUES.iter().any(|c| w.starts_with(c)))
        .count()
        .min(2);
    if words.len() >= 30 {
        score += 1;
    }
    if words.len() >= 60 {
        score += 1;
    }
    match score {
        0 => "Easy",
        1 => "Medium",
        2 => "Hard",
        _ => "Very Hard",
    }
}

pub fn simulate_qtype(text: &str) -> &'static str {
    if text.contains(FEW_SHOT_SEQUENCES) {
        return "Problem-solving question";
    }
    if text.contains(FEW_SHOT_INTEGRAL) {
        return "Other question types";
    }
    if text.contains(FEW_SHOT_ODD) {
        return "Multiple-choice question";
    }
    let option_lines = text
        .lines()
        .filter(|l| {
            let l = l.trim_start();
            let mut chars = l.chars();
            matches!(
                (chars.next(), chars.next()),
                (Some('A'..='H'), Some(':' | '.' | ')'))
            )
        })
        .count();
    let lower = text.to_lowercase();
    if option_lines >= 2 {
        "Multiple-choice question"
    } else if lower.contains("prove") || lower.contains("show that") {
        "Proof question"
    } else if text.contains("___") {
        "Other question types"
    } else {
        "Problem-solving question"
    }
}

/// Applies the additive reasoning rubric by cue phrases.
pub fn rubric_points(text: &str) -> (u8, Vec<&'static str>) {
    let lower = text.to_lowercase();
    let any = |cues: &[&str]| cues.iter().any(|c| lower.contains(c));
    let subgoal = any(&["first, we need", "let's first", "let us first", "i'll first", "in three parts", "then we can determine", "to solve this, "]);
    let verification = any(&["let's check", "to verify", "let's test", "to ensure this", "double-check"]);
    let backtracking = any(&["let me try again", "wait,", "i made a mistake", "try a different"]);
    let backward = any(&["work backward", "working backward", "start with what we want", "desired result"]);
    let reasoning = subgoal
        || verification
        || backtracking
        || backward
        || any(&["because", "therefore", "thus", "hence", "it follows", "implies"]);
    let mut notes = Vec::new();
    for (hit, name) in [
        (reasoning, "reasoning"),
        (subgoal, "subgoal setting"),
        (verification, "verification"),
        (backtracking, "backtracking"),
        (backward, "backward chaining"),
    ] {
        if hit {
            notes.push(name);
        }
    }
    (notes.len() as u8, notes)
}

fn simulate_rubric(text: &str) -> String {
    let (score, notes) = rubric_points(text);
    let thoughts = if notes.is_empty() {
        "No reasoning behavior was noticed.".to_string()
    } else {
        format!("The text shows {}.", notes.join(", "))
    };
    format!("## Thoughts\n{thoughts}\n\n## Final score\n{score}")
}

/// A text reads as coherent when most tokens look like words.
pub fn simulate_readable(text: &str) -> bool {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() < 3 {
        return false;
    }
    let wordlike = tokens
        .iter()
        .filter(|t| {
            let letters = t.chars().filter(|c| c.is_alphabetic()).count();
            let vowels = t.chars().filter(|c| "aeiouyAEIOUY".contains(*c)).count();
            let len = t.chars().count();
            letters * 10 >= len * 7 && vowels > 0 && len <= 20
        })
        .count();
    wordlike * 10 >= tokens.len() * 7
}

pub fn simulate_helpfulness(text: &str) -> u8 {
    let words = lower_words(text);
    let lower = text.to_lowercase();
    let mut score = 0u8;
    if words.len() >= 20 {
        score += 1;
    }
    if words.len() >= 60 {
        score += 1;
    }
    if ["definition", "defined", "principle", "theorem", "law", "concept"].iter().any(|c| lower.contains(c)) {
        score += 1;
    }
    if ["because", "therefore", "thus", "hence"].iter().any(|c| lower.contains(c)) {
        score += 1;
    }
    if ["for example", "consider", "for instance"].iter().any(|c| lower.contains(c)) {
        score += 1;
    }
    if !simulate_readable(text) {
        score = score.min(1);
    }
    score
}

const LOGIC_VARIANTS: &[&str] = &[
    "graph TD\n    A[Identify core knowledge points] --> B[Construct a realistic scenario]\n    B --> C[Design a multi-step reasoning path]\n    C --> D[Formulate the correct answer]\n    D --> E[Insert distractors and traps]\n    E --> F[Validate the final question]",
    "graph TD\n    A[Select a governing principle] --> B[Hide it behind a quantitative setup]\n    B --> C[Require an intermediate derivation]\n    C --> D[Combine results into a final value]\n    D --> E[Check units and limiting cases]",
    "flowchart LR\n    A[Pick two related concepts] --> B[Create a comparison context]\n    B --> C{Which concept applies?}\n    C -->|first| D[Derive consequence one]\n    C -->|second| E[Derive consequence two]\n    D --> F[Ask for the discriminating conclusion]\n    E --> F",
    "graph TD\n    A[State a claim from the source] --> B[Ask for a rigorous justification]\n    B --> C[Require a counterexample for a weaker variant]\n    C --> D[Assess the scope of the claim]",
    "flowchart TD\n    A[Extract a data table or case] --> B[Pose a decision problem]\n    B --> C[Require evaluating each option]\n    C --> D[Design plausible wrong options]\n    D --> E[Confirm a unique best option]",
    "graph LR\n    A[Identify a causal mechanism] --> B[Perturb one condition]\n    B --> C[Trace effects through the mechanism]\n    C --> D[Predict the observable outcome]\n    D --> E[Validate against known behavior]",
];

fn simulate_extraction(question: &str) -> String {
    let variant = LOGIC_VARIANTS[(stable_hash(question) % LOGIC_VARIANTS.len() as u64) as usize];
    format!(
        "The designer starts from a small set of knowledge points and builds a scenario that forces several inferential steps.\n\n```mermaid\n{variant}\n```\n"
    )
}

fn simulate_synthesis(prompt: &str) -> String {
    let candidates = prompt.matches("**--- Question-Design Logic ").count().max(1);
    let source = prompt
        .rsplit(markers::SYNTHESIS)
        .next()
        .unwrap_or("")
        .trim_start_matches('\n');
    let h = stable_hash(source);
    let id = 1 + (h % candidates as u64) as usize;
    let excerpt: Vec<&str> = source.split_whitespace().take(40).collect();
    let excerpt = excerpt.join(" ");
    let words = source.split_whitespace().count();
    let question = if h % 3 == 0 {
        format!(
            "Consider the following material: \"{excerpt}\". Which conclusion is best supported?\nA: The stated mechanism fully explains the result\nB: The result depends on an unstated assumption\nC: The result contradicts the premises\nD: The premises are insufficient to decide\nE: None of the above"
        )
    } else {
        format!(
            "Consider the following material: \"{excerpt}\". Derive the central result step by step, justify each inference, and state the final quantity."
        )
    };
    let answer = format!(
        "The material supports the result through a chain of inferences. The final answer is: \\boxed{{{}}}.",
        words % 97
    );
    let json = serde_json::json!({
        "exam_question": question,
        "reference_answer": answer,
        "id": id.to_string(),
    });
    let body = serde_json::to_string_pretty(&json).unwrap();
    if h % 2 == 0 {
        format!("I selected logic {id} because it fits the source.\n\n```json\n{body}\n```")
    } else {
        format!("I selected logic {id}.\n\n{body}")
    }
}

fn simulate_response(prompt: &str) -> String {
    let h = stable_hash(prompt);
    let steps = 2 + (h % 4) as usize;
    let mut out = String::from("<think>\n");
    for i in 1..=steps {
        out.push_str(&format!("Step {i}: examine the premises and derive an intermediate result.\n"));
    }
    out.push_str("</think>\n\n");
    out.push_str(&format!("The answer follows from the derivation above. The final answer is: \\boxed{{{}}}.", h % 97));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, ProviderConfig};
    use crate::model::Taxonomy;
    use std::sync::Arc;

    #[test]
    fn few_shot_examples_are_reproduced() {
        let tax = Taxonomy::canonical();
        let p = prompts::render_discipline(tax, "If John rented a car for $150 and had to buy 8 gallons of gas at $3.50 per gallon to fill it up, and the final expense is $0.50 per mile, how much did it cost him to drive 320 miles?");
        assert_eq!(simulate(&p), "\"labels\": \"Mathematics\"");
        let p = prompts::render_difficulty("Consider a photon traveling at the speed of light. How does it experience space?");
        assert_eq!(simulate(&p), "Difficulty: Very Hard");
    }

    #[test]
    fn every_keyword_discipline_is_in_taxonomy() {
        let tax = Taxonomy::canonical();
        for (label, _) in DISCIPLINE_KEYWORDS {
            assert!(tax.resolve(label).is_some(), "{label}");
        }
    }

    #[test]
    fn rubric_fixture_scores_three() {
        let text = "First, we need to find the total mass, then we can determine the force. Let's check the units.";
        assert_eq!(rubric_points(text).0, 3);
        assert_eq!(rubric_points("The sky is blue.").0, 0);
    }

    #[test]
    fn garbled_text_is_unreadable() {
        assert!(!simulate_readable("x7$#@ qq9%% ^^&&** 0x1F2E zz## 123 456 <<>>"));
        assert!(simulate_readable("The cell membrane regulates the transport of ions and molecules."));
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let gw = Gateway::new(Arc::new(MockProvider::new(MockConfig::default())), &ProviderConfig::default()).unwrap();
        let a = gw.embed(&EmbedRequest::new("e", None, vec!["a".into()])).unwrap();
        assert_eq!(a.len(), 1);
        assert!((a[0].norm() - 1.0).abs() < 1e-9);
        assert_eq!(a[0].dim(), 64);
        let b = gw.embed(&EmbedRequest::new("e", None, vec!["a".into()])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixtures_take_precedence() {
        let req = ChatRequest::user("labeler", "anything", 0.0, 8);
        let mut config = MockConfig::default();
        config.fixtures.insert(req.cache_key(), "Difficulty: Easy".into());
        let mock = MockProvider::new(config);
        assert_eq!(mock.chat(&req).unwrap(), "Difficulty: Easy");
    }
}
