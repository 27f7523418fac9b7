use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AblationTable, EvalError, MetricReport, Percent, SweepTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?} (csv or json)")),
        }
    }
}

fn yn(b: bool) -> &'static str {
    if b {
        "Y"
    } else {
        "N"
    }
}

fn opt(p: Option<Percent>) -> String {
    p.map(|p| p.to_string()).unwrap_or_default()
}

pub fn ablation_csv(table: &AblationTable) -> String {
    let mut out = String::from("pool,retrieval,feedback,ma,exe,acc,re\n");
    for row in &table.rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            yn(row.config.pool),
            yn(row.config.retrieval),
            yn(row.config.feedback),
            r.matchability,
            r.executability,
            r.accuracy,
            opt(r.readability)
        );
    }
    out
}

pub fn ablation_json(table: &AblationTable) -> String {
    let rows: Vec<_> = table
        .rows
        .iter()
        .map(|row| {
            let errors: Vec<_> = row
                .outcomes
                .iter()
                .filter_map(|o| o.error.as_ref().map(|e| json!({"task_id": o.task_id, "error": e})))
                .collect();
            json!({
                "pool": row.config.pool,
                "retrieval": row.config.retrieval,
                "feedback": row.config.feedback,
                "max_debug_iterations": row.config.max_debug_iterations,
                "ma": row.report.matchability,
                "exe": row.report.executability,
                "acc": row.report.accuracy,
                "re": row.report.readability,
                "errors": errors,
            })
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("report serializes") + "\n"
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from("setting,exe,acc\n");
    for row in &table.rows {
        let _ = writeln!(out, "{},{},{}", row.label, row.executability, row.accuracy);
    }
    out
}

pub fn sweep_json(table: &SweepTable) -> String {
    let rows: Vec<_> = table
        .rows
        .iter()
        .map(|row| {
            json!({
                "setting": row.label,
                "k": row.k,
                "exe": row.executability,
                "acc": row.accuracy,
                "successes": row.successes(),
            })
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("report serializes") + "\n"
}

fn signed(tenths: i64) -> String {
    let sign = if tenths < 0 { "-" } else { "+" };
    let a = tenths.unsigned_abs();
    format!("{sign}{}.{}", a / 10, a % 10)
}

/// Side-by-side of a full-pipeline report and a baseline, with explicit
/// deltas.
pub fn comparison_text(label: &str, report: &MetricReport, baseline_label: &str, baseline: &MetricReport) -> String {
    let d = report.delta_from(baseline);
    let mut out = format!("metric,{label},{baseline_label},delta ({label} - {baseline_label})\n");
    let _ = writeln!(out, "ma,{},{},{}", report.matchability, baseline.matchability, signed(d.matchability));
    let _ = writeln!(out, "exe,{},{},{}", report.executability, baseline.executability, signed(d.executability));
    let _ = writeln!(out, "acc,{},{},{}", report.accuracy, baseline.accuracy, signed(d.accuracy));
    let _ = writeln!(
        out,
        "re,{},{},{}",
        opt(report.readability),
        opt(baseline.readability),
        d.readability.map(signed).unwrap_or_default()
    );
    out
}

/// Either table, for `emit_report`.
#[derive(Debug, Clone, Copy)]
pub enum ReportTable<'a> {
    Ablation(&'a AblationTable),
    Sweep(&'a SweepTable),
}

impl ReportTable<'_> {
    pub fn is_empty(&self) -> bool {
        match self {
            ReportTable::Ablation(t) => t.rows.is_empty(),
            ReportTable::Sweep(t) => t.rows.is_empty(),
        }
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match (self, format) {
            (ReportTable::Ablation(t), ReportFormat::Csv) => ablation_csv(t),
            (ReportTable::Ablation(t), ReportFormat::Json) => ablation_json(t),
            (ReportTable::Sweep(t), ReportFormat::Csv) => sweep_csv(t),
            (ReportTable::Sweep(t), ReportFormat::Json) => sweep_json(t),
        }
    }
}

pub fn emit_report(table: ReportTable<'_>, format: ReportFormat, path: &Path) -> Result<(), EvalError> {
    if table.is_empty() {
        return Err(EvalError::Corpus("refusing to write an empty report".into()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|source| EvalError::Io { path: parent.display().to_string(), source })?;
    }
    std::fs::write(path, table.render(format))
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_deltas() {
        assert_eq!(signed(346), "+34.6");
        assert_eq!(signed(-5), "-0.5");
        assert_eq!(signed(0), "+0.0");
    }
}
