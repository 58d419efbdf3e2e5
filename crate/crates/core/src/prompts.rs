//! Canonical prompt templates and their renderers.
//!
//! Templates keep the exact wording used for labeling, scoring, extraction
//! and synthesis; placeholders are `{text}`, `{labels}` and `{logicN}`.
//! Only the named placeholders are substituted, so literal braces in a
//! template (the JSON answer skeleton) are left alone.

use crate::model::Taxonomy;

pub const DISCIPLINE_TEMPLATE: &str = r#"You are a professional multidisciplinary data labeling expert specializing in the classification of multidisciplinary academic questions. Please select the ONE most relevant label from the given list of discipline labels for the input question data. For question data that you cannot determine, use the "Unknown Discipline" label. Please directly output "labels": "(the label you selected)".

# List of Discipline Labels:
{labels}

# Example 1
Input: "Consider a photon traveling at the speed of light. How does the photon experience space, and what are the implications of relativistic beaming on its perception of spatial dimensions? Provide a detailed explanation, including any relevant mathematical derivations and physical principles."
Output: "labels": "Physics"

# Example 2
Input: "A heavy pole, of mass M and length L, is freely hinged to a wall at the point O. A rope connects the other end of the pole, B, to a fixed point A on the wall above O. The system is in equilibrium, with the pole making an angle of \(\theta\) with the horizontal, and the rope making an angle of \(\alpha\) with the horizontal. Explore how the system's parameters (M, L, \(\theta\), \(\alpha\)) affect its equilibrium and stability."
Output: "labels": "Mechanics"

# Example 3
Input: "If John rented a car for $150 and had to buy 8 gallons of gas at $3.50 per gallon to fill it up, and the final expense is $0.50 per mile, how much did it cost him to drive 320 miles?"
Output: "labels": "Mathematics"

# Input Question Data
Input: "{text}"
Output: "#;

pub const DIFFICULTY_TEMPLATE: &str = r#"You are an expert in education and examination, specializing in classifying the difficulty levels of multidisciplinary questions. For the given question, please evaluate its difficulty based on the complexity and length of the reasoning required to answer it. Label it as one of the following: **Easy**, **Medium**, **Hard**, or **Very Hard**. Please directly output "Difficulty: (Your chosen label)".

# Example 1
Input: "Consider a photon traveling at the speed of light. How does the photon experience space, and what are the implications of relativistic beaming on its perception of spatial dimensions? Provide a detailed explanation, including any relevant mathematical derivations and physical principles."
Output: "Difficulty: Very Hard"

# Example 2
Input: "A heavy pole, of mass M and length L, is freely hinged to a wall at the point O. A rope connects the other end of the pole, B, to a fixed point A on the wall above O. The system is in equilibrium, with the pole making an angle of \(\theta\) with the horizontal, and the rope making an angle of \(\alpha\) with the horizontal. Explore how the system's parameters (M, L, \(\theta\), \(\alpha\)) affect its equilibrium and stability."
Output: "Difficulty: Hard"

# Example 3
Input: "If John rented a car for $150 and had to buy 8 gallons of gas at $3.50 per gallon to fill it up, and the final expense is $0.50 per mile, how much did it cost him to drive 320 miles?"
Output: "Difficulty: Easy"

# Given Question
Input: "{text}"
Output: "#;

pub const QTYPE_TEMPLATE: &str = r#"You are an expert in education and examination, specializing in classifying question types. For the given question, please evaluate its question type and label it as one of the following: **Problem-solving question**, **Multiple-choice question**, **Proof question**, or **Other question types**. For any question that you cannot determine, use the "Other question types" label. Please directly output "Question type: (Your chosen label)".

# Example 1
Input: "Determine the number of $k$-letter sequences composed of the letters $A$ and $B$ such that the sequence contains at least two consecutive $A$'s."
Output: "Question type: Problem-solving question"

# Example 2
Input: "Consider the function $f(x) = \frac{e^{x}}{x}$. The value of the integral $I = \int_{1}^{\infty} \left( \frac{e^{x}}{x} - \frac{e^{-x}}{x} \right) dx$ is ___."
Output: "Question type: Other question types"

# Example 3
Input: "Given that $a\in\{-1,2, \frac{1}{2},3, \frac{1}{3}\}$, if $f(x)=x^{a}$ is an odd function and is monotonically increasing on $(0,+\infty)$, then the possible values of the real number $a$ are ( ).
  A: $-1, 3$
  B: $\frac{1}{3}, 3$
  C: $-1, \frac{1}{3}, 3$
  D: $\frac{1}{3}, \frac{1}{2}, 3$"
Output: "Question type: Multiple-choice question"

# Given Question
Input: "{text}"
Output: "#;

pub const WEB_RUBRIC_TEMPLATE: &str = r#"You will be provided with text from the internet.

Evaluate the following text extract for its potential usefulness for studying reasoning process. Use the following 5-point scoring system described below. Start from 0, points are accumulated based on the satisfaction of each criterion:

(1) Add 1 point if the extract contains any reasoning or thinking process.

(2) Add 1 point if the extract contains any explicit subgoal setting, where the writer breaks down the problem into smaller, intermediate goals. Subgoal setting might look like:
 - "First, we need to find ..., then we can determine ..."
 - "To solve ..., let's first ..., then ..."
 - "Let's tackle ... in three parts: (1) ..., (2) ..., and (3) ..."
 - "To ..., I'll first ..., then ..."

(3) Add 1 point if the extract contains any verification steps. We want to mark instances where the writer explicitly checks their own work, such as by comparing the result to a known value or by checking the result of a calculation. Verification steps might look like:
 - "Let's check ..."
 - "To verify this is correct, I'll ..."
 - "Let's test ... with a simple case: ..."
 - "To ensure this solution is valid, I'll check if ..."

(4) Add 1 point if the text contains any backtracking behavior, where the writer realizes a path won't work and explicitly goes back to try a different approach. An example of backtracking is: "Let me try again", "Wait", "I made a mistake", or "we need to try a different sequence of operations". We want to mark instances where the writer abandons a thought and backtracks to a previous computation.

(5) Add 1 point if the text contains any backward-chaining behavior, where the writer is working towards a goal but starts from the goal and works backward. It might like:
 - "To solve ..., let's start with what we want to prove: ...Let's verify this."
 - "If we want to find ..., let's start with the desired result and work backward."
 - "To determine ..., I know the result ... Working backward from this final state using

# Task Format
Format your response in markdown as follows:

## Thoughts
[Brief description describing what behavior was noticed and where subgoal setting may have occurred, less than 100 words]

## Final score
[total points]

# Text to evaluate for reasoning degree
{text}

# Response"#;

pub const LOGIC_EXTRACTION_TEMPLATE: &str = r#"You are an expert educator and a specialist in exam question design. Below, I have provided an exam question. Your task is to deduce the thought process of the question designer. Analyze how they constructed this question based on the relevant knowledge points. You need to go beyond the specific details of the question and its knowledge points to abstract and summarize the underlying design logic and principles behind the question.

The goal is for me to be able to use this abstracted design logic to create other high-quality, challenging questions that require complex logical reasoning for different knowledge points and source materials.

**Finally, you must organize the abstracted question-design logic you have summarized into English Mermaid format.**

--- Analyze the Question Design Logic from the Following Question ---

**Question:**
{text}"#;

pub const RETRIEVAL_INSTRUCTION: &str = "Given a book snippet, retrieve the most suitable question-design logic in Mermaid format for creating a challenging exam question from the book snippet.";

pub const SYNTHESIS_HEADER: &str = r#"You are an expert in the field of education and examination design, and you are writing exam questions. Your task is to use the provided text to generate a high-quality exam question. Please follow the steps below to generate an English exam question and a reference answer:

**1. Create an Exam Question:**
- Based on the provided source text, write a challenging exam question at the graduate-level or above.
- Below are five question-design logics provided in Mermaid format. You need to select the most suitable question-design logic for creating a challenging question from the source text, and then strictly follow the corresponding question-design logic and steps to create a challenging question. Please record which design logic you used (by number) and output the corresponding numeric ID in the "id" field of the JSON below.
- The question should require critical thinking and test deep understanding and problem-solving skills, not just simple fact recall.
- The question must be self-contained and answerable without using the source text. If the question you write requires an answer based on the content of the source text, you must include the corresponding content and information from the source text within the question itself to make it self-contained.
- Ensure the question is self-contained, clear, without missing information or ambiguity, and has a correct answer.
- For multiple-choice questions, you should first analyze and determine the answer, then design the options to ensure that one specific option is the correct answer. The questions you design need to include as many options as possible (four or more). Do not be limited to only four options (A, B, C, D).

**2. Provide the Reference Answer:**
- Use the information in the source text to write a concise and accurate reference answer to the question you just created.
- If there is a final, single result or conclusion (like a number, formula, or short phrase), state it clearly at the end with: "The final answer is: \boxed{answer}." Otherwise, do not output \boxed{answer}.

**At the end of your response, please organize your results into the following JSON format:**
{
  "exam_question": "*(Your question goes here)*",
  "reference_answer": "*(Your reference answer goes here)*",
  "id": "*(The ID of the logic you selected goes here)*"
}
"#;

pub const SYNTHESIS_LOGIC_BLOCK: &str = "\n**--- Question-Design Logic {n} ---**\n```Mermaid\n{logic}\n```\n";

pub const SYNTHESIS_SOURCE_BLOCK: &str = "\n**--- Source Text for Question Creation ---**\n{text}";

/// Readability gate. Stands in for a trained coherence classifier.
pub const READABILITY_TEMPLATE: &str = r#"You are a text quality rater. Decide whether the following text extract is coherent and well organized enough to be read as instructional material. Text that is garbled, disorganized, mostly markup or symbols, or made of unrelated fragments is negative. Please directly output "Readability: positive" or "Readability: negative".

# Text
{text}

# Response"#;

/// Educational-value score on a 0 to 5 scale.
pub const HELPFULNESS_TEMPLATE: &str = r#"Below is an extract from a book. Evaluate whether the extract has a high educational value and could be useful in an educational setting, using an additive 0 to 5 scale: add 1 point if it provides some basic information relevant to educational topics; add another if it addresses elements pertinent to education in a coherent way; a third if it is appropriate for educational use and introduces key concepts; a fourth if it is highly relevant and beneficial for learning, with clear and consistent explanations; and a fifth if it is outstanding in its educational value, with thorough reasoning and worked detail. Please directly output "Helpfulness: (score)".

# Extract
{text}

# Response"#;

/// Marker phrases identifying each prompt kind; used by the mock provider.
pub mod markers {
    pub const DISCIPLINE: &str = "# List of Discipline Labels:";
    pub const DIFFICULTY: &str = "classifying the difficulty levels";
    pub const QTYPE: &str = "specializing in classifying question types";
    pub const WEB_RUBRIC: &str = "# Text to evaluate for reasoning degree";
    pub const LOGIC_EXTRACTION: &str = "--- Analyze the Question Design Logic from the Following Question ---";
    pub const SYNTHESIS: &str = "**--- Source Text for Question Creation ---**";
    pub const READABILITY: &str = "You are a text quality rater.";
    pub const HELPFULNESS: &str = "Evaluate whether the extract has a high educational value";
}

fn quoted_label_list(taxonomy: &Taxonomy) -> String {
    let quoted: Vec<String> = taxonomy.labels().iter().map(|l| format!("'{l}'")).collect();
    format!("[{}]", quoted.join(", "))
}

pub fn render_discipline(taxonomy: &Taxonomy, text: &str) -> String {
    DISCIPLINE_TEMPLATE
        .replace("{labels}", &quoted_label_list(taxonomy))
        .replace("{text}", text)
}

pub fn render_difficulty(text: &str) -> String {
    DIFFICULTY_TEMPLATE.replace("{text}", text)
}

pub fn render_qtype(text: &str) -> String {
    QTYPE_TEMPLATE.replace("{text}", text)
}

pub fn render_web_rubric(text: &str) -> String {
    WEB_RUBRIC_TEMPLATE.replace("{text}", text)
}

pub fn render_logic_extraction(text: &str) -> String {
    LOGIC_EXTRACTION_TEMPLATE.replace("{text}", text)
}

pub fn render_readability(text: &str) -> String {
    READABILITY_TEMPLATE.replace("{text}", text)
}

pub fn render_helpfulness(text: &str) -> String {
    HELPFULNESS_TEMPLATE.replace("{text}", text)
}

/// Synthesis prompt with the candidate logics numbered from 1.
pub fn render_synthesis<S: AsRef<str>>(logics: &[S], text: &str) -> String {
    let mut out = String::from(SYNTHESIS_HEADER);
    for (i, logic) in logics.iter().enumerate() {
        out.push_str(
            &SYNTHESIS_LOGIC_BLOCK
                .replace("{n}", &(i + 1).to_string())
                .replace("{logic}", logic.as_ref()),
        );
    }
    out.push_str(&SYNTHESIS_SOURCE_BLOCK.replace("{text}", text));
    out
}

/// Recovers the text substituted into a `... Input: "{text}"\nOutput: ` prompt.
pub fn extract_quoted_input(prompt: &str) -> Option<&str> {
    let start = prompt.rfind("Input: \"")? + "Input: \"".len();
    let end = prompt.rfind("\"\nOutput: ")?;
    (end >= start).then(|| &prompt[start..end])
}

/// Recovers the text following `heading` up to the next `# ` heading line.
pub fn extract_section<'a>(prompt: &'a str, heading: &str) -> Option<&'a str> {
    let start = prompt.find(heading)? + heading.len();
    let rest = prompt[start..].strip_prefix('\n').unwrap_or(&prompt[start..]);
    let end = rest.rfind("\n\n# ").unwrap_or(rest.len());
    Some(&rest[..end])
}
