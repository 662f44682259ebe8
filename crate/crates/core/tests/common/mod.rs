#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use cotloop_core::backend::{derive_seed, Backend, BackendError, ChatRequest, Completion, KeyIndex, Outcome, ScriptedBackend};
use cotloop_core::model::{Format, Origin, Question, QuestionMeta, QuestionOption, Subject};

pub fn fixture(name: &str) -> PathBuf {
    // resolves from any crate in the workspace
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests").join(name)
}

/// Splits a LaTeX table row into cells, dropping `\textbf{}`, `\best{}`,
/// `\second{}` and `\third{}` wrappers.
pub fn latex_cells(line: &str) -> Vec<String> {
    let row = line.trim().trim_end_matches("\\\\").trim();
    row.split('&')
        .map(|cell| {
            let mut c = cell.trim().to_string();
            for macro_name in ["\\textbf{", "\\best{", "\\second{", "\\third{"] {
                while let Some(start) = c.find(macro_name) {
                    let inner = start + macro_name.len();
                    let Some(close) = c[inner..].find('}') else { break };
                    c = format!("{}{}{}", &c[..start], &c[inner..inner + close], &c[inner + close + 1..]);
                }
            }
            c
        })
        .collect()
}

pub fn mcq(stem: &str, origin: Origin, subject: Subject, meta: QuestionMeta) -> Question {
    let options = ["alpha", "beta", "gamma", "delta", "epsilon"]
        .iter()
        .enumerate()
        .map(|(i, t)| QuestionOption { label: (b'A' + i as u8) as char, text: t.to_string() })
        .collect();
    Question::new(stem.to_string(), options, "C", Format::McqSingle, subject, origin, meta).expect("valid fixture item")
}

/// Right on about `accuracy` of calls, decided by the request's seed so
/// the same request always gets the same reply. Wrong replies are either a
/// wrong letter or no answer at all.
pub fn scripted(questions: &[Question], accuracy: f64) -> ScriptedBackend {
    let keys = KeyIndex::new(questions.to_vec());
    ScriptedBackend::from_fn("m0", move |req, _| {
        let q = keys.lookup(&req.user_text()).expect("known question");
        let roll = derive_seed(1, &q.id, req.seed.unwrap_or(0));
        let u = (roll >> 11) as f64 / (1u64 << 53) as f64;
        if u < accuracy {
            Outcome::Text(format!("Working through {}.\nAnswer: {}", q.id, q.answer_key))
        } else if roll % 2 == 0 {
            let wrong = q.labels().find(|l| !q.answer_key.as_str().contains(*l)).unwrap();
            Outcome::Text(format!("Guessing.\nAnswer: {wrong}"))
        } else {
            Outcome::Text("Not sure what this is asking.".into())
        }
    })
}

/// Passes calls through until `budget` is spent, then fails them all.
pub struct Killable<'a> {
    pub inner: &'a dyn Backend,
    pub budget: u64,
    pub calls: AtomicU64,
}

impl Backend for Killable<'_> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(BackendError::Auth("killed".into()));
        }
        self.inner.complete(request)
    }
}
