//! Textbook segmentation. Chapters are opened by heading lines; each
//! chapter body is cut into segments that respect a length window and end
//! on sentence boundaries where possible.

use std::collections::HashMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::IoError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSegment {
    pub book_id: String,
    pub chapter_path: Vec<String>,
    pub text: String,
    pub char_count: usize,
}

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("book has no body text")]
    EmptyBook,
    #[error("segment window needs max > min > 0, got max={max} min={min}")]
    BadWindow { max: usize, min: usize },
    #[error("bad heading pattern: {0}")]
    BadPattern(#[from] regex::Error),
}

/// Which lines open a chapter. A Markdown heading's depth sets its level;
/// lines matching `chapter` are level 1.
#[derive(Debug, Clone)]
pub struct HeadingGrammar {
    chapter: Regex,
    markdown: bool,
}

impl Default for HeadingGrammar {
    fn default() -> Self {
        HeadingGrammar {
            chapter: Regex::new(r"^\s*第[零〇一二三四五六七八九十百千0-9]+章").expect("static pattern"),
            markdown: true,
        }
    }
}

impl HeadingGrammar {
    pub fn new(chapter_pattern: &str, markdown: bool) -> Result<HeadingGrammar, SegmentError> {
        Ok(HeadingGrammar { chapter: Regex::new(chapter_pattern)?, markdown })
    }

    fn level(&self, line: &str) -> Option<(usize, String)> {
        if self.markdown {
            let hashes = line.chars().take_while(|c| *c == '#').count();
            if (1..=6).contains(&hashes) && line[hashes..].starts_with([' ', '\t']) {
                return Some((hashes, line[hashes..].trim().to_string()));
            }
        }
        self.chapter.is_match(line).then(|| (1, line.trim().to_string()))
    }
}

/// Drops page furniture before segmentation: lines matching any rule, and
/// short lines repeated often enough to be running heads.
#[derive(Debug, Clone)]
pub struct LineFilter {
    rules: Vec<Regex>,
    running_head_repeats: Option<usize>,
}

const RUNNING_HEAD_MAX_CHARS: usize = 40;

impl Default for LineFilter {
    fn default() -> Self {
        LineFilter {
            rules: vec![Regex::new(r"^\s*(?:[-—–]\s*)?(?:第\s*\d+\s*页|(?i:page)\s*\d+|\d+)(?:\s*[-—–])?\s*$").expect("static pattern")],
            running_head_repeats: Some(3),
        }
    }
}

impl LineFilter {
    pub fn none() -> LineFilter {
        LineFilter { rules: Vec::new(), running_head_repeats: None }
    }

    /// One regex per line; blank lines and lines starting with `#` are
    /// skipped. The generic rules stay active.
    pub fn from_rules(text: &str) -> Result<LineFilter, regex::Error> {
        let mut filter = LineFilter::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            filter.rules.push(Regex::new(line)?);
        }
        Ok(filter)
    }

    pub fn load(path: &Path) -> Result<LineFilter, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        LineFilter::from_rules(&text).map_err(|e| IoError::invalid(path, e.to_string()))
    }

    pub fn apply(&self, text: &str, grammar: &HeadingGrammar) -> String {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        if self.running_head_repeats.is_some() {
            for line in text.lines() {
                let t = line.trim();
                if !t.is_empty() && t.chars().count() <= RUNNING_HEAD_MAX_CHARS && grammar.level(line).is_none() {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let repeats = self.running_head_repeats.unwrap_or(usize::MAX);
        text.split_inclusive('\n')
            .filter(|raw| {
                let line = raw.trim_end_matches(['\n', '\r']);
                let t = line.trim();
                if self.rules.iter().any(|r| r.is_match(line)) {
                    return false;
                }
                !counts.get(t).is_some_and(|n| *n >= repeats)
            })
            .collect()
    }
}

struct Chapter<'a> {
    path: Vec<String>,
    body: &'a str,
}

fn chapters<'a>(book: &'a str, grammar: &HeadingGrammar) -> Vec<Chapter<'a>> {
    let mut out = Vec::new();
    let mut path: Vec<(usize, String)> = Vec::new();
    let mut body_start = 0;
    let mut offset = 0;
    for raw in book.split_inclusive('\n') {
        let line = raw.trim_end_matches(['\n', '\r']);
        if let Some((level, title)) = grammar.level(line) {
            out.push(Chapter { path: path.iter().map(|(_, t)| t.clone()).collect(), body: &book[body_start..offset] });
            path.retain(|(l, _)| *l < level);
            path.push((level, title));
            body_start = offset + raw.len();
        }
        offset += raw.len();
    }
    out.push(Chapter { path: path.into_iter().map(|(_, t)| t).collect(), body: &book[body_start..] });
    out.retain(|c| !c.body.trim().is_empty());
    out
}

/// The text segmentation covers: every chapter body with content, in
/// order, headings excluded.
pub fn body_text(book: &str, grammar: &HeadingGrammar) -> String {
    chapters(book, grammar).into_iter().map(|c| c.body).collect()
}

pub fn segment_textbook(
    book_id: &str,
    book: &str,
    grammar: &HeadingGrammar,
    max_chars: usize,
    min_chars: usize,
) -> Result<Vec<TextSegment>, SegmentError> {
    if min_chars == 0 || max_chars <= min_chars {
        return Err(SegmentError::BadWindow { max: max_chars, min: min_chars });
    }
    let chapters = chapters(book, grammar);
    if chapters.is_empty() {
        return Err(SegmentError::EmptyBook);
    }
    let mut out = Vec::new();
    for chapter in chapters {
        for text in merge_short(split_long(chapter.body, max_chars), min_chars, max_chars) {
            out.push(TextSegment {
                book_id: book_id.to_string(),
                chapter_path: chapter.path.clone(),
                char_count: text.chars().count(),
                text,
            });
        }
    }
    Ok(out)
}

fn is_sentence_end(c: char) -> bool {
    matches!(c, '。' | '！' | '？' | '；' | '.' | '!' | '?' | '\n')
}

/// Cuts at the last sentence end within `max` characters, or hard-cuts
/// when there is none.
fn split_long(body: &str, max: usize) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut rest = body;
    while rest.chars().count() > max {
        let mut cut = None;
        let mut limit_byte = rest.len();
        for (n, (i, c)) in rest.char_indices().enumerate() {
            if n == max {
                limit_byte = i;
                break;
            }
            // trailing spaces stay with the sentence they follow
            if is_sentence_end(c) || (c.is_whitespace() && cut == Some(i)) {
                cut = Some(i + c.len_utf8());
            }
        }
        let at = cut.unwrap_or(limit_byte);
        pieces.push(&rest[..at]);
        rest = &rest[at..];
    }
    if !rest.is_empty() {
        pieces.push(rest);
    }
    pieces
}

/// Short pieces absorb their successor while the result fits; a short
/// tail folds back into its predecessor when that fits.
fn merge_short(pieces: Vec<&str>, min: usize, max: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut acc = String::new();
    for piece in pieces {
        if acc.is_empty() {
            acc.push_str(piece);
            continue;
        }
        let acc_len = acc.chars().count();
        if acc_len < min && acc_len + piece.chars().count() <= max {
            acc.push_str(piece);
        } else {
            out.push(std::mem::replace(&mut acc, piece.to_string()));
        }
    }
    if !acc.is_empty() {
        let acc_len = acc.chars().count();
        match out.last_mut() {
            Some(prev) if acc_len < min && prev.chars().count() + acc_len <= max => prev.push_str(&acc),
            _ => out.push(acc),
        }
    }
    out
}
