use serde_json::json;

use cotloop_core::ingest::{RawItem, RawOption, SourceKind};
use cotloop_core::io;
use cotloop_core::model::{Origin, QaDataset, Question};
use cotloop_core::synthetic;

use crate::error::CliError;
use crate::{FixtureArgs, Output};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Kind {
    /// Training corpus without exam metadata.
    Corpus,
    /// Exam set with years, a hand-crafted sitting and units.
    Exam,
    /// Raw harvested items with planted duplicates and malformed rows.
    Raw,
}

fn raw_item(q: &Question) -> RawItem {
    RawItem {
        stem: q.stem.clone(),
        options: q.options.iter().map(|o| RawOption::Labeled { label: o.label.to_string(), text: o.text.clone() }).collect(),
        answer: q.answer_key.as_str().to_string(),
        source_uri: format!("fixture:{}", q.id),
        source_kind: match q.origin {
            Origin::RealExam => SourceKind::RealExam,
            Origin::TextbookQa => SourceKind::TextbookQa,
            Origin::MockExam | Origin::HandCrafted => SourceKind::MockExam,
        },
        subject: Some(q.subject),
        year: q.year,
        unit: q.unit,
        format: Some(q.format),
    }
}

/// `n` clean items, then a near copy of every tenth and a keyless copy of
/// every fifteenth.
pub fn raw_items(n: usize, seed: u64) -> Vec<RawItem> {
    let qs = synthetic::corpus(n, seed);
    let mut out: Vec<RawItem> = qs.iter().map(raw_item).collect();
    for q in qs.iter().step_by(10) {
        let mut dup = raw_item(q);
        dup.stem = format!("{} ", q.stem.trim_end_matches('?'));
        dup.source_uri.push_str("#copy");
        out.push(dup);
    }
    for q in qs.iter().step_by(15) {
        let mut bad = raw_item(q);
        bad.answer = "Z".into();
        bad.source_uri.push_str("#bad");
        out.push(bad);
    }
    out
}

pub fn run(args: &FixtureArgs) -> Result<Output, CliError> {
    if args.n == 0 {
        return Err(CliError::Config("--n must be positive".into()));
    }
    let version = args
        .version
        .clone()
        .or_else(|| args.out.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .unwrap_or_else(|| "fixture".into());
    let count = match args.kind {
        Kind::Raw => {
            let items = raw_items(args.n, args.seed);
            io::write_jsonl_file(&args.out, &items)?;
            items.len()
        }
        Kind::Corpus | Kind::Exam => {
            let items =
                if args.kind == Kind::Corpus { synthetic::corpus(args.n, args.seed) } else { synthetic::exam(args.n, args.seed) };
            let ds = QaDataset::new(version.clone(), items).map_err(|e| CliError::Other(e.to_string()))?;
            ds.save(&args.out)?;
            ds.len()
        }
    };
    Ok(Output {
        text: format!("wrote {count} items to {}\n", args.out.display()),
        json: json!({"kind": format!("{:?}", args.kind).to_lowercase(), "count": count, "out": args.out, "version": version}),
    })
}
