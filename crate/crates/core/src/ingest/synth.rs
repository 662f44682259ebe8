use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::filter::{filter_malformed, FilterPolicy, RawItem, RejectReason, SourceKind};
use super::segment::TextSegment;
use crate::backend::{derive_seed, Backend, BackendError, ChatRequest, Message, REASONING_TEMPERATURE};
use crate::io::{self, IoError};
use crate::model::{Format, Question};

const REQUIRED: [&str; 3] = ["{segment_text}", "{n_items}", "{format}"];

/// Prompt asking a model to write questions about a textbook passage. The
/// reply must be a JSON array of items shaped like raw harvested items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthTemplate {
    pub system: String,
    pub user: String,
}

impl Default for SynthTemplate {
    fn default() -> Self {
        SynthTemplate {
            system: "You write examination questions from textbook passages.".into(),
            user: "Write up to {n_items} questions of format {format} answerable from the passage below, \
                   of varying difficulty. Reply with only a JSON array; each element has \"stem\", \
                   \"options\" (list of strings, empty for fill_in_blank), \"answer\" and \"format\".\n\n\
                   Passage:\n{segment_text}"
                .into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("template is missing placeholder {0}")]
    MissingPlaceholder(&'static str),
    #[error("no parsable items in the model reply")]
    NoParsableItems,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl SynthTemplate {
    pub fn validate(&self) -> Result<(), SynthError> {
        match REQUIRED.iter().find(|p| !self.user.contains(**p)) {
            Some(p) => Err(SynthError::MissingPlaceholder(p)),
            None => Ok(()),
        }
    }

    pub fn load(path: &Path) -> Result<SynthTemplate, IoError> {
        if path.extension().is_some_and(|e| e == "json") {
            return io::read_json_file(path);
        }
        let user = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Ok(SynthTemplate { user, ..SynthTemplate::default() })
    }

    fn render(&self, segment: &TextSegment, n_items: usize, formats: &[Format]) -> Vec<Message> {
        let format = formats.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(" or ");
        let user = self
            .user
            .replace("{segment_text}", &segment.text)
            .replace("{n_items}", &n_items.to_string())
            .replace("{format}", &format);
        let mut msgs = Vec::new();
        if !self.system.is_empty() {
            msgs.push(Message::system(self.system.clone()));
        }
        msgs.push(Message::user(user));
        msgs
    }
}

#[derive(Debug, Clone)]
pub struct SynthParams<'a> {
    pub model: &'a str,
    pub template: &'a SynthTemplate,
    pub n_items: usize,
    /// Requested formats; items of other formats are dropped.
    pub formats: &'a [Format],
    pub policy: &'a FilterPolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    pub questions: Vec<Question>,
    pub rejected: Vec<(RawItem, RejectReason)>,
    /// Array elements that did not even parse as items.
    pub unparsable: usize,
}

/// Asks the backend for questions about one segment and keeps those that
/// parse and pass the malformed-item filter, at most `n_items`.
pub fn synthesize_qa(segment: &TextSegment, backend: &dyn Backend, params: &SynthParams<'_>) -> Result<SynthOutcome, SynthError> {
    params.template.validate()?;
    let seed = derive_seed(params.seed, &format!("{}:{:?}:{}", segment.book_id, segment.chapter_path, segment.text), 0);
    let request = ChatRequest::new(params.model, params.template.render(segment, params.n_items, params.formats), REASONING_TEMPERATURE)
        .with_seed(seed);
    let completion = backend.complete(&request)?;
    let Some(elements) = json_array(&completion.text) else {
        return Err(SynthError::NoParsableItems);
    };
    let mut unparsable = 0;
    let mut raw = Vec::new();
    for el in elements {
        match serde_json::from_value::<RawItem>(el) {
            Ok(mut item) => {
                item.source_kind = SourceKind::TextbookQa;
                if item.source_uri.is_empty() {
                    item.source_uri = format!("book:{}", segment.book_id);
                }
                raw.push(item);
            }
            Err(_) => unparsable += 1,
        }
    }
    let policy = FilterPolicy { allowed_formats: params.formats.to_vec(), ..params.policy.clone() };
    let mut out = filter_malformed(raw, &policy);
    if out.accepted.is_empty() {
        return Err(SynthError::NoParsableItems);
    }
    out.accepted.truncate(params.n_items);
    Ok(SynthOutcome { questions: out.accepted, rejected: out.rejected, unparsable })
}

/// The JSON array in a reply, tolerating code fences and surrounding prose.
fn json_array(text: &str) -> Option<Vec<serde_json::Value>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end < start {
        return None;
    }
    match serde_json::from_str(&text[start..=end]).ok()? {
        serde_json::Value::Array(items) => Some(items),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::model::Origin;

    fn segment() -> TextSegment {
        let text = "黄芪补气升阳，固表止汗。".to_string();
        TextSegment { book_id: "materia".into(), chapter_path: vec!["第一章".into()], char_count: text.chars().count(), text }
    }

    fn run(reply: &str, n: usize, formats: &[Format]) -> Result<SynthOutcome, SynthError> {
        let backend = ScriptedBackend::fixed("gen", reply);
        let template = SynthTemplate::default();
        let policy = FilterPolicy::default();
        let params = SynthParams { model: "gen", template: &template, n_items: n, formats, policy: &policy, seed: 0 };
        synthesize_qa(&segment(), &backend, &params)
    }

    #[test]
    fn two_fill_in_blank_items() {
        let reply = r#"```json
[{"stem":"黄芪的功效是补气____。","answer":"升阳"},{"stem":"黄芪能固表____。","answer":"止汗","format":"fill_in_blank"}]
```"#;
        let out = run(reply, 5, &[Format::FillInBlank]).unwrap();
        assert_eq!(out.questions.len(), 2);
        assert!(out.questions.iter().all(|q| q.format == Format::FillInBlank && q.origin == Origin::TextbookQa));
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(run("[{\"stem\": oops", 5, &[Format::FillInBlank]), Err(SynthError::NoParsableItems)));
        assert!(matches!(run("no json here", 5, &[Format::FillInBlank]), Err(SynthError::NoParsableItems)));
    }

    #[test]
    fn invalid_item_is_filtered() {
        let reply = r#"[
            {"stem":"s1","options":["a","b","c","d"],"answer":"A"},
            {"stem":"s2","options":["a","b","c","d"],"answer":"E"},
            {"stem":"s3","options":["a","b","c","d"],"answer":"D"}
        ]"#;
        let out = run(reply, 5, &[Format::McqSingle]).unwrap();
        assert_eq!(out.questions.len(), 2);
        assert_eq!(out.rejected[0].1, RejectReason::AnswerNotInOptions);
    }

    #[test]
    fn never_more_than_requested() {
        let reply = r#"[{"stem":"a","answer":"x"},{"stem":"b","answer":"y"},{"stem":"c","answer":"z"},17]"#;
        let out = run(reply, 2, &[Format::FillInBlank]).unwrap();
        assert_eq!(out.questions.len(), 2);
        assert_eq!(out.unparsable, 1);
    }

    #[test]
    fn template_placeholders_required() {
        let t = SynthTemplate { system: String::new(), user: "{segment_text} {format}".into() };
        assert!(matches!(t.validate(), Err(SynthError::MissingPlaceholder("{n_items}"))));
    }
}
