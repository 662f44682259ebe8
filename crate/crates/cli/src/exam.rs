use std::path::{Path, PathBuf};

use serde_json::json;

use cotloop_core::backend::{build_backend, BackendConfig, KeyIndex};
use cotloop_core::engine::PromptTemplate;
use cotloop_core::eval::{leakage_gap, render_report, render_reports, run_exam, score, sitting_keys, ExamParams, ExamReport, Grouping, ReportFormat};
use cotloop_core::io;
use cotloop_core::model::QaDataset;

use crate::config::CliConfig;
use crate::error::CliError;
use crate::pipeline::{check_credential, model_name, snapshot};
use crate::{EvaluateArgs, Output, ReportArgs};

/// File-name-safe form of a model id.
fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn gap_of(report: &ExamReport) -> Option<String> {
    if report.grouping != Grouping::Sitting {
        return None;
    }
    let (old, new) = sitting_keys(report);
    leakage_gap(report, &old, &new).ok().map(|g| g.to_string())
}

pub fn evaluate(cfg: &CliConfig, args: &EvaluateArgs) -> Result<Output, CliError> {
    let bcfg: BackendConfig = match &args.backend {
        Some(p) => BackendConfig::load(p)?,
        None => cfg.evaluate.backend.clone().ok_or_else(|| CliError::Config("no --backend and no [evaluate.backend]".into()))?,
    };
    bcfg.validate()?;
    check_credential(&bcfg)?;
    if !args.dataset.exists() {
        return Err(CliError::Config(format!("exam set {} does not exist", args.dataset.display())));
    }
    let dataset = QaDataset::load(&args.dataset)?;
    let model = args.model.clone().unwrap_or_else(|| model_name(&bcfg));
    let backend = build_backend(&bcfg, Some(KeyIndex::new(dataset.items.clone())))?;
    let template = match &cfg.evaluate.template {
        Some(p) => PromptTemplate::load(p)?,
        None => PromptTemplate::exam(),
    };
    let dir = args.out.clone().unwrap_or_else(|| cfg.store.join("evals")).join(slug(&model));
    let stem = format!("{}.{}", slug(&dataset.version), format!("{:?}", cfg.evaluate.mode).to_lowercase());
    let transcript = dir.join(format!("{stem}.transcript.jsonl"));
    let params = ExamParams {
        model: &model,
        mode: cfg.evaluate.mode,
        template: &template,
        concurrency: cfg.evaluate.concurrency.max(1),
        transcript: Some(&transcript),
    };
    let run = run_exam(&dataset, backend.as_ref(), &params)?;
    let report = score(&run, &dataset, cfg.evaluate.grouping)?;
    let report_path = dir.join(format!("{stem}.report.json"));
    io::write_json_file(&report_path, &report)?;
    snapshot(cfg, &dir, &format!("evaluate-{stem}"))?;
    let gap = gap_of(&report);
    let mut text = render_report(&report, ReportFormat::Markdown);
    text.push_str(&format!(
        "\n{} correct, {} incorrect, {} unanswered of {}\n",
        report.correct, report.incorrect, report.unanswered, report.total
    ));
    if let Some(g) = &gap {
        text.push_str(&format!("leakage gap (years minus HC): {g}\n"));
    }
    text.push_str(&format!("report {}\ntranscript {}\n", report_path.display(), transcript.display()));
    Ok(Output {
        text,
        json: json!({"report": report, "leakage_gap": gap, "report_path": report_path, "transcript": transcript}),
    })
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
            collect(&entry.path(), out)?;
        }
    } else if path.to_string_lossy().ends_with(".report.json") {
        out.push(path.to_path_buf());
    }
    Ok(())
}

pub fn report(cfg: &CliConfig, args: &ReportArgs) -> Result<Output, CliError> {
    let inputs = if args.inputs.is_empty() { vec![cfg.store.join("evals")] } else { args.inputs.clone() };
    let mut files = Vec::new();
    for i in &inputs {
        if !i.exists() {
            return Err(CliError::Config(format!("{} does not exist", i.display())));
        }
        if i.is_file() {
            files.push(i.clone());
        } else {
            collect(i, &mut files)?;
        }
    }
    files.sort();
    let reports: Vec<ExamReport> = files.iter().map(|f| io::read_json_file(f)).collect::<Result<_, _>>()?;
    let gaps: Vec<_> = reports.iter().map(|r| json!({"model": r.model, "dataset_version": r.dataset_version, "leakage_gap": gap_of(r)})).collect();
    Ok(Output {
        text: render_reports(&reports, args.format),
        json: json!({"reports": reports, "gaps": gaps}),
    })
}
