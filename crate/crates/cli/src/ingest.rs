use std::path::{Path, PathBuf};

use serde_json::json;
use tracing::{info, warn};

use cotloop_core::backend::{build_backend, BackendConfig};
use cotloop_core::engine::PromptTemplate;
use cotloop_core::ingest::{
    dedup, filter_malformed, segment_textbook, synthesize_qa, triage_by_model, HeadingGrammar, LineFilter, RawItem,
    SynthError, SynthParams, SynthTemplate, TriageParams,
};
use cotloop_core::io;
use cotloop_core::model::{Format, QaDataset, Question};

use crate::config::CliConfig;
use crate::error::CliError;
use crate::pipeline::{check_credential, model_name, snapshot};
use crate::Output;

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn read_raw(paths: &[PathBuf]) -> Result<Vec<RawItem>, CliError> {
    let mut items = Vec::new();
    for p in paths {
        items.extend(io::read_jsonl_file::<RawItem>(p)?);
    }
    Ok(items)
}

fn ingest_backend(cfg: &CliConfig) -> Result<&BackendConfig, CliError> {
    cfg.ingest
        .backend
        .as_ref()
        .or(cfg.generator.as_ref())
        .ok_or_else(|| CliError::Config("synthesis and triage need [ingest.backend] or [generator]".into()))
}

/// Segments each textbook and asks the backend for questions per segment.
/// Segments the model returns nothing usable for are skipped.
fn synthesize(cfg: &CliConfig, known: &[Question]) -> Result<(Vec<Question>, usize), CliError> {
    let ic = &cfg.ingest;
    let bcfg = ingest_backend(cfg)?;
    check_credential(bcfg)?;
    let backend = build_backend(bcfg, Some(cotloop_core::backend::KeyIndex::new(known.to_vec())))?;
    let model = model_name(bcfg);
    let grammar = match &ic.chapter_pattern {
        Some(p) => HeadingGrammar::new(p, true).map_err(|e| CliError::Config(e.to_string()))?,
        None => HeadingGrammar::default(),
    };
    let filter = match &ic.line_filter {
        Some(p) => LineFilter::load(p)?,
        None => LineFilter::none(),
    };
    let template = match &ic.synth_template {
        Some(p) => SynthTemplate::load(p)?,
        None => SynthTemplate::default(),
    };
    let formats = [Format::McqSingle];
    let mut out = Vec::new();
    let mut skipped = 0;
    for path in &ic.textbooks {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        let book_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("book").to_string();
        let body = filter.apply(&text, &grammar);
        let segments = segment_textbook(&book_id, &body, &grammar, ic.segment_max_chars, ic.segment_min_chars)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for seg in &segments {
            let params = SynthParams {
                model: &model,
                template: &template,
                n_items: ic.synth_items,
                formats: &formats,
                policy: &ic.filter,
                seed: cfg.engine.seed,
            };
            match synthesize_qa(seg, backend.as_ref(), &params) {
                Ok(o) => out.extend(o.questions),
                Err(SynthError::NoParsableItems) => skipped += 1,
                Err(SynthError::Backend(e)) => return Err(e.into()),
                Err(e @ SynthError::MissingPlaceholder(_)) => return Err(CliError::Config(e.to_string())),
            }
        }
        info!(book = %book_id, segments = segments.len(), "synthesized");
    }
    Ok((out, skipped))
}

pub fn run(cfg: &CliConfig) -> Result<Output, CliError> {
    let ic = &cfg.ingest;
    if ic.raw.is_empty() && ic.textbooks.is_empty() {
        return Err(CliError::Config("nothing to ingest: give --raw or --textbook files".into()));
    }
    let raw = read_raw(&ic.raw)?;
    let n_raw = raw.len();
    let filtered = filter_malformed(raw, &ic.filter);
    let mut items = filtered.accepted;
    let (synthesized, skipped_segments) = if ic.textbooks.is_empty() { (Vec::new(), 0) } else { synthesize(cfg, &items)? };
    let n_synth = synthesized.len();
    items.extend(synthesized);

    let deduped = dedup(items, ic.dedup_threshold);
    let mut kept = deduped.kept;
    let mut flagged = Vec::new();
    if ic.triage_trials > 0 {
        let bcfg = ingest_backend(cfg)?;
        check_credential(bcfg)?;
        let backend = build_backend(bcfg, Some(cotloop_core::backend::KeyIndex::new(kept.clone())))?;
        let template = PromptTemplate::default();
        let model = model_name(bcfg);
        let triage = triage_by_model(
            &kept,
            backend.as_ref(),
            &TriageParams {
                model: &model,
                n_trials: ic.triage_trials,
                confidence_threshold: ic.triage_threshold,
                template: &template,
                seed: cfg.engine.seed,
                concurrency: cfg.engine.concurrency,
            },
        )?;
        kept = triage.high_confidence.iter().map(|r| r.question.clone()).collect();
        flagged = triage.flagged;
    }
    if kept.is_empty() {
        return Err(CliError::Other("no items survived ingestion".into()));
    }
    let dataset = QaDataset::new(ic.version.clone(), kept).map_err(|e| CliError::Other(e.to_string()))?;
    dataset.save(&ic.out)?;

    let rejects: Vec<_> = filtered.rejected.iter().map(|(item, reason)| json!({"reason": reason, "item": item})).collect();
    io::write_jsonl_file(&sibling(&ic.out, ".rejects.jsonl"), &rejects)?;
    io::write_jsonl_file(&sibling(&ic.out, ".dropped.jsonl"), &deduped.dropped)?;
    io::write_jsonl_file(&sibling(&ic.out, ".flagged.jsonl"), &flagged)?;
    let out_dir = ic.out.parent().unwrap_or(Path::new("."));
    snapshot(cfg, out_dir, "ingest")?;
    if skipped_segments > 0 {
        warn!(skipped_segments, "segments produced no usable questions");
    }

    let summary = json!({
        "raw": n_raw,
        "rejected": filtered.rejected.len(),
        "synthesized": n_synth,
        "duplicates_dropped": deduped.dropped.len(),
        "flagged": flagged.len(),
        "kept": dataset.len(),
        "version": dataset.version,
        "manifest_hash": dataset.manifest_hash,
        "out": ic.out,
    });
    let text = format!(
        "{n_raw} raw items: {} rejected, {n_synth} synthesized, {} duplicates dropped, {} flagged for review\n\
         {} items written to {} (version {}, {})\n",
        filtered.rejected.len(),
        deduped.dropped.len(),
        flagged.len(),
        dataset.len(),
        ic.out.display(),
        dataset.version,
        dataset.manifest_hash
    );
    Ok(Output { text, json: summary })
}
