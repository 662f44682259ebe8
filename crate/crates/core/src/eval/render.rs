use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::score::{ExamReport, Score, SubsetKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Markdown,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}; use markdown, json or csv")),
        }
    }
}

/// One rendered row: a model and its scores by column label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub dataset_version: String,
    pub scores: std::collections::BTreeMap<String, Score>,
    pub overall: Score,
    pub overall_simple: Score,
}

fn columns(reports: &[ExamReport]) -> Vec<SubsetKey> {
    let keys: BTreeSet<SubsetKey> = reports.iter().flat_map(|r| r.subsets.iter().map(|s| s.key)).collect();
    keys.into_iter().collect()
}

fn cell(report: &ExamReport, key: &SubsetKey) -> String {
    report.subset(key).map_or_else(|| "-".to_string(), |s| s.score.to_string())
}

/// Renders reports as one table, a row per model. Columns run years
/// ascending, then HC, then Overall.
pub fn render_reports(reports: &[ExamReport], format: ReportFormat) -> String {
    let cols = columns(reports);
    match format {
        ReportFormat::Markdown => {
            let mut out = String::from("| Model |");
            for c in &cols {
                out.push_str(&format!(" {} |", c.label()));
            }
            out.push_str(" Overall |\n|---|");
            out.push_str(&"---:|".repeat(cols.len() + 1));
            out.push('\n');
            for r in reports {
                out.push_str(&format!("| {} |", r.model.replace('|', "\\|")));
                for c in &cols {
                    out.push_str(&format!(" {} |", cell(r, c)));
                }
                out.push_str(&format!(" {} |\n", r.overall_weighted));
            }
            out
        }
        ReportFormat::Json => {
            let rows: Vec<ReportRow> = reports
                .iter()
                .map(|r| ReportRow {
                    model: r.model.clone(),
                    dataset_version: r.dataset_version.clone(),
                    scores: r.subsets.iter().map(|s| (s.label.clone(), s.score)).collect(),
                    overall: r.overall_weighted,
                    overall_simple: r.overall_simple,
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&rows).expect("rows serialize");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["model".to_string()];
            header.extend(cols.iter().map(SubsetKey::label));
            header.push("overall".into());
            w.write_record(&header).expect("in-memory write");
            for r in reports {
                let mut rec = vec![r.model.clone()];
                rec.extend(cols.iter().map(|c| report_cell_csv(r, c)));
                rec.push(r.overall_weighted.to_string());
                w.write_record(&rec).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
    }
}

fn report_cell_csv(report: &ExamReport, key: &SubsetKey) -> String {
    report.subset(key).map(|s| s.score.to_string()).unwrap_or_default()
}

pub fn render_report(report: &ExamReport, format: ReportFormat) -> String {
    render_reports(std::slice::from_ref(report), format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Grouping;
    use std::collections::BTreeMap;

    fn two_subsets() -> ExamReport {
        ExamReport::from_counts("m", "v1", Grouping::Sitting, [(SubsetKey::year(2021), 45, 50), (SubsetKey::hand_crafted(), 7, 10)]).unwrap()
    }

    #[test]
    fn markdown_columns() {
        let md = render_report(&two_subsets(), ReportFormat::Markdown);
        let header = md.lines().next().unwrap();
        assert_eq!(header, "| Model | 2021 | HC | Overall |");
        let data_cols = header.matches('|').count() - 2;
        assert_eq!(data_cols, 3);
        assert_eq!(md.lines().nth(2).unwrap(), "| m | 90.00 | 70.00 | 86.67 |");
    }

    #[test]
    fn json_and_csv_agree() {
        let r = two_subsets();
        let rows: Vec<ReportRow> = serde_json::from_str(&render_report(&r, ReportFormat::Json)).unwrap();
        let csv_text = render_report(&r, ReportFormat::Csv);
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        let headers = reader.headers().unwrap().clone();
        let rec = reader.records().next().unwrap().unwrap();
        let mut from_csv = BTreeMap::new();
        for (h, v) in headers.iter().zip(rec.iter()).skip(1) {
            from_csv.insert(h.to_string(), Score::parse(v).unwrap());
        }
        let overall = from_csv.remove("overall").unwrap();
        assert_eq!(rec.get(0), Some(rows[0].model.as_str()));
        assert_eq!(from_csv, rows[0].scores);
        assert_eq!(overall, rows[0].overall);
    }

    #[test]
    fn missing_cells() {
        let a = two_subsets();
        let b = ExamReport::from_counts("n", "v1", Grouping::Sitting, [(SubsetKey::year(2019), 1, 2)]).unwrap();
        let md = render_reports(&[a, b], ReportFormat::Markdown);
        assert_eq!(md.lines().next().unwrap(), "| Model | 2019 | 2021 | HC | Overall |");
        assert_eq!(md.lines().nth(3).unwrap(), "| n | 50.00 | - | - | 50.00 |");
    }

    #[test]
    fn formats_parse() {
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
