//! Evaluation reports: the JSON artifact and its plain-text table view.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::asr::ScenarioStats;
use crate::eval::runner::RunMode;

/// Everything a benchmark run produces besides the transcript log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// sha256 over the serialized run configuration (plus the sweep tag
    /// for ablation runs); two runs with equal digests are comparable.
    pub config_digest: String,
    pub mode: RunMode,
    /// The model that was attacked.
    pub model_identity: String,
    /// For transfer runs, the white-box model the image was optimized on.
    pub source_model_identity: Option<String>,
    pub per_scenario: BTreeMap<String, ScenarioStats>,
    pub overall: ScenarioStats,
    pub transcript_path: Option<String>,
}

/// Renders the per-scenario table, one row per scenario code plus an
/// overall row.
pub fn render_report_table(report: &EvaluationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("model:  {}\n", report.model_identity));
    if let Some(source) = &report.source_model_identity {
        out.push_str(&format!("source: {source}\n"));
    }
    out.push_str(&format!(
        "mode:   {}\nconfig: {}\n",
        serde_json::to_value(report.mode)
            .map(|v| v.as_str().unwrap_or_default().to_string())
            .unwrap_or_default(),
        report.config_digest
    ));
    if let Some(path) = &report.transcript_path {
        out.push_str(&format!("log:    {path}\n"));
    }
    out.push_str("\nscenario  attempts  successes    asr%\n");
    out.push_str("--------  --------  ---------  ------\n");
    for (code, stats) in &report.per_scenario {
        out.push_str(&format!(
            "{code:<8}  {:>8}  {:>9}  {:>6.2}\n",
            stats.attempts, stats.successes, stats.asr_percent
        ));
    }
    out.push_str(&format!(
        "{:<8}  {:>8}  {:>9}  {:>6.2}\n",
        "overall", report.overall.attempts, report.overall.successes, report.overall.asr_percent
    ));
    out
}

pub fn save_report(report: &EvaluationReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EvaluationReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
