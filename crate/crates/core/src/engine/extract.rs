//! Answer extraction from free-text model responses, and verification
//! against the ground-truth key.
//!
//! Rules, tried in order:
//! 1. an explicit marker (`答案`, `正确选项`, `Answer:`) followed by letters on
//!    the same line; the last marker that yields letters wins;
//! 2. the last `\boxed{..}` or bracketed capital letter(s) such as `(C)`;
//! 3. the last standalone option letter in the final paragraph.
//!
//! Fill-in-the-blank items only use rule 1.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Answer, Question};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Marker,
    Bracketed,
    LastLetter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub answer: Answer,
    pub rule: Rule,
    /// Byte offset where the reasoning ends: the marker or bracket position,
    /// or the full length when only rule 3 fired.
    pub cot_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no answer could be extracted from the response")]
pub struct ExtractionFailed;

/// True when a candidate answer matches the key. Both sides must already be
/// normalized the same way (letter sets for MCQ, normalized text otherwise).
pub fn verify(candidate: &Answer, ground_truth: &Answer) -> bool {
    candidate == ground_truth
}

const MARKERS: [&str; 4] = ["答案", "正确选项", "answer:", "answer："];

pub fn extract_answer(response: &str, question: &Question) -> Result<Extraction, ExtractionFailed> {
    let labels: Vec<char> = question.labels().collect();
    if let Some(found) = by_marker(response, question, &labels) {
        return Ok(found);
    }
    if !question.format.is_mcq() {
        return Err(ExtractionFailed);
    }
    if let Some(found) = bracketed(response, &labels) {
        return Ok(found);
    }
    last_letter(response, &labels).ok_or(ExtractionFailed)
}

/// Splits a response into (chain of thought, extraction).
pub fn split_response(response: &str, question: &Question) -> (String, Result<Extraction, ExtractionFailed>) {
    let extraction = extract_answer(response, question);
    let cot = match &extraction {
        Ok(e) => trim_cot(&response[..e.cot_end]),
        Err(_) => response.trim().to_string(),
    };
    (cot, extraction)
}

fn trim_cot(s: &str) -> String {
    s.trim_end_matches(|c: char| c.is_whitespace() || "【[(（*#:：-".contains(c))
        .trim_start()
        .to_string()
}

fn marker_positions(text: &str) -> Vec<(usize, usize)> {
    let lower = text.to_ascii_lowercase();
    let mut hits: Vec<(usize, usize)> = MARKERS
        .iter()
        .flat_map(|m| lower.match_indices(m).map(move |(i, _)| (i, m.len())))
        .collect();
    hits.sort_unstable();
    hits
}

fn by_marker(text: &str, question: &Question, labels: &[char]) -> Option<Extraction> {
    for (pos, len) in marker_positions(text).into_iter().rev() {
        let rest = &text[pos + len..];
        let line = rest.split('\n').next().unwrap_or("");
        let answer = if question.format.is_mcq() {
            letters_after_marker(line, labels).map(letters_answer)
        } else {
            fib_after_marker(line)
        };
        if let Some(answer) = answer {
            return Some(Extraction { answer, rule: Rule::Marker, cot_end: pos });
        }
    }
    None
}

const LEAD_SKIP: &str = " \t:：】]）)(（【[*\"“”「」'是为為应應选選择擇项項=-—";
const SEPARATORS: &str = " \t,，、;；/&和与及或";

fn letters_after_marker(line: &str, labels: &[char]) -> Option<BTreeSet<char>> {
    let mut rest = line.trim_start_matches(|c: char| LEAD_SKIP.contains(c));
    for word in ["option", "options", "is"] {
        if rest.get(..word.len()).is_some_and(|w| w.eq_ignore_ascii_case(word))
            && !rest[word.len()..].starts_with(|c: char| c.is_ascii_alphanumeric())
        {
            rest = rest[word.len()..].trim_start_matches(|c: char| LEAD_SKIP.contains(c));
        }
    }
    let mut found = BTreeSet::new();
    loop {
        let run_len = rest.find(|c: char| !c.is_ascii_alphabetic()).unwrap_or(rest.len());
        if run_len == 0 {
            break;
        }
        let run = &rest[..run_len];
        let followed_by_digit = rest[run_len..].starts_with(|c: char| c.is_ascii_digit());
        if followed_by_digit || !valid_run(run, labels) {
            break;
        }
        found.extend(run.chars().map(|c| c.to_ascii_uppercase()));
        rest = rest[run_len..].trim_start_matches(|c: char| SEPARATORS.contains(c));
        if rest.get(..3).is_some_and(|w| w.eq_ignore_ascii_case("and")) && !rest[3..].starts_with(|c: char| c.is_ascii_alphabetic()) {
            rest = rest[3..].trim_start_matches(|c: char| SEPARATORS.contains(c));
        }
    }
    (!found.is_empty()).then_some(found)
}

/// A letter run counts as an answer when every letter is an option label,
/// letters do not repeat, and multi-letter runs are written in capitals.
fn valid_run(run: &str, labels: &[char]) -> bool {
    if run.len() > 1 && !run.chars().all(|c| c.is_ascii_uppercase()) {
        return false;
    }
    let mut seen = BTreeSet::new();
    run.chars()
        .map(|c| c.to_ascii_uppercase())
        .all(|c| labels.contains(&c) && seen.insert(c))
}

fn fib_after_marker(line: &str) -> Option<Answer> {
    let text = line
        .trim_start_matches(|c: char| " \t:：】]*是为為".contains(c))
        .trim_end_matches(|c: char| c.is_whitespace() || "。.*".contains(c));
    let answer = Answer::text(text);
    (!answer.as_str().is_empty()).then_some(answer)
}

fn letters_answer(set: BTreeSet<char>) -> Answer {
    Answer::from_normalized(set.into_iter().collect())
}

static BOXED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\\boxed\{([^{}]*)\}").expect("valid regex"));
static BRACKETED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[(（\[【]\s*([A-Z](?:\s*[,，、]?\s*[A-Z])*)\s*[)）\]】]").expect("valid regex")
});

fn bracketed(text: &str, labels: &[char]) -> Option<Extraction> {
    let candidates = BOXED
        .captures_iter(text)
        .chain(BRACKETED.captures_iter(text))
        .filter_map(|c| {
            let whole = c.get(0)?;
            let inner = c.get(1)?.as_str();
            let letters: BTreeSet<char> = inner.chars().filter(char::is_ascii_alphabetic).map(|c| c.to_ascii_uppercase()).collect();
            let ok = !letters.is_empty()
                && letters.iter().all(|l| labels.contains(l))
                && inner.chars().all(|c| c.is_ascii_alphabetic() || " ,，、".contains(c));
            ok.then(|| (whole.start(), letters))
        });
    candidates
        .max_by_key(|(start, _)| *start)
        .map(|(start, letters)| Extraction { answer: letters_answer(letters), rule: Rule::Bracketed, cot_end: start })
}

fn last_letter(text: &str, labels: &[char]) -> Option<Extraction> {
    let trimmed = text.trim_end();
    let para_start = trimmed.rfind("\n\n").map(|i| i + 2).unwrap_or(0);
    let para = &trimmed[para_start..];
    let bytes = para.as_bytes();
    let mut last = None;
    for (i, c) in para.char_indices() {
        if !c.is_ascii_uppercase() || !labels.contains(&c) {
            continue;
        }
        let before_ok = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
        let after_ok = i + 1 >= bytes.len() || !bytes[i + 1].is_ascii_alphanumeric();
        if before_ok && after_ok {
            last = Some(c);
        }
    }
    last.map(|c| Extraction {
        answer: Answer::from_normalized(c.to_string()),
        rule: Rule::LastLetter,
        cot_end: text.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize_answer, Format, Origin, QuestionMeta, QuestionOption, Subject};

    fn q(format: Format, n_opts: usize, key: &str) -> Question {
        let options = if format.is_mcq() {
            (0..n_opts)
                .map(|i| QuestionOption { label: (b'A' + i as u8) as char, text: format!("opt {i}") })
                .collect()
        } else {
            vec![]
        };
        Question::new("stem".into(), options, key, format, Subject::Other, Origin::MockExam, QuestionMeta::default())
            .unwrap()
    }

    fn ans(text: &str) -> Option<String> {
        extract_answer(text, &q(Format::McqMulti, 5, "A")).ok().map(|e| e.answer.as_str().to_string())
    }

    #[test]
    fn verify_examples() {
        let n = |s| normalize_answer(s).unwrap();
        assert!(verify(&n("B"), &n("B")));
        assert!(verify(&n("CA"), &n("AC")));
        assert!(!verify(&n("B"), &n("C")));
    }

    #[test]
    fn rule_one_markers() {
        let e = extract_answer("……【答案】B", &q(Format::McqSingle, 5, "B")).unwrap();
        assert_eq!((e.answer.as_str(), e.rule), ("B", Rule::Marker));
        assert_eq!(ans("推理如下。\n答案：A、C"), Some("AC".into()));
        assert_eq!(ans("Thinking.\nAnswer: b"), Some("B".into()));
        assert_eq!(ans("Answer: C and E"), Some("CE".into()));
        assert_eq!(ans("正确选项是D。"), Some("D".into()));
        assert_eq!(ans("Answer: Option E"), Some("E".into()));
        assert_eq!(ans("所以答案为 (B)"), Some("B".into()));
    }

    #[test]
    fn last_marker_wins_and_bad_runs_stop() {
        assert_eq!(ans("Answer: A\nOn reflection...\nAnswer: D"), Some("D".into()));
        assert_eq!(ans("Answer: because it is warm"), None);
        assert_eq!(ans("Answer: B. Because"), Some("B".into()));
        assert_eq!(ans("Answer: A1 is a vitamin"), None);
    }

    #[test]
    fn rule_two_brackets() {
        let e = extract_answer("the answer is (C).", &q(Format::McqSingle, 4, "C")).unwrap();
        assert_eq!((e.answer.as_str(), e.rule), ("C", Rule::Bracketed));
        assert_eq!(ans(r"so \boxed{B, D}"), Some("BD".into()));
        assert_eq!(ans("first (A) then finally （E）"), Some("E".into()));
        assert_eq!(ans("(Z) only"), None);
    }

    #[test]
    fn rule_three_last_letter() {
        let e = extract_answer("Long reasoning.\n\nI pick B over C here", &q(Format::McqSingle, 4, "B")).unwrap();
        assert_eq!((e.answer.as_str(), e.rule), ("C", Rule::LastLetter));
        assert_eq!(e.cot_end, "Long reasoning.\n\nI pick B over C here".len());
        assert_eq!(ans("Only B in an earlier paragraph\n\nnothing here"), None);
    }

    #[test]
    fn failures() {
        let question = q(Format::McqSingle, 4, "A");
        assert_eq!(extract_answer("I cannot determine the answer.", &question), Err(ExtractionFailed));
        assert_eq!(extract_answer("", &question), Err(ExtractionFailed));
    }

    #[test]
    fn fill_in_blank_uses_marker_text() {
        let question = q(Format::FillInBlank, 0, "麻黄");
        let e = extract_answer("推理……\n答案：麻黄。", &question).unwrap();
        assert_eq!(e.answer.as_str(), "麻黄");
        assert!(verify(&e.answer, &question.answer_key));
        assert_eq!(extract_answer("The answer is (A)", &question), Err(ExtractionFailed));
    }

    #[test]
    fn cot_is_text_before_marker() {
        let question = q(Format::McqSingle, 4, "B");
        let (cot, e) = split_response("Step 1.\nStep 2.\nAnswer: B", &question);
        assert_eq!(cot, "Step 1.\nStep 2.");
        assert_eq!(e.unwrap().answer.as_str(), "B");
        let (cot, _) = split_response("reasoning\n【答案】B", &question);
        assert_eq!(cot, "reasoning");
        let (cot, e) = split_response("B is right\n\nsurely B", &question);
        assert_eq!(cot, "B is right\n\nsurely B");
        assert_eq!(e.unwrap().rule, Rule::LastLetter);
    }
}
