//! Markdown and JSON experiment reports.
//!
//! Markdown layout:
//!
//! * systems table with columns `system | λ | metric | score | segments | failed`;
//! * optional sweep section naming the CSV file and the best λ;
//! * optional targeted-accuracy table with columns `phenomenon | correct | total | accuracy (%)`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AccuracyTable;
use crate::tuning::SweepSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub system: String,
    /// Weight on the translation scorer; `None` for single-model systems.
    pub lambda: Option<f64>,
    pub metric_name: String,
    pub score: f64,
    pub n_segments: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub systems: Vec<SystemRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSummary>,
    /// Path of the sweep CSV, as written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracyTable>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::from("# Results\n\n");
        md.push_str("| system | λ | metric | score | segments | failed |\n");
        md.push_str("|---|---|---|---|---|---|\n");
        for r in &self.systems {
            let lambda = r.lambda.map_or_else(|| "-".to_string(), |l| l.to_string());
            let _ = writeln!(md, "| {} | {} | {} | {:.2} | {} | {} |", r.system, lambda, r.metric_name, r.score, r.n_segments, r.failed);
        }
        if let Some(s) = &self.sweep {
            md.push_str("\n## λ sweep\n\n");
            let _ = writeln!(md, "Metric: {}. Best λ: {}.", s.metric_name, s.best_lambda);
            if let Some(csv) = &self.sweep_csv {
                let _ = writeln!(md, "Curve data: `{csv}`.");
            }
        }
        if let Some(t) = &self.accuracy {
            md.push_str("\n## Targeted-word accuracy\n\n");
            md.push_str("| phenomenon | correct | total | accuracy (%) |\n");
            md.push_str("|---|---|---|---|\n");
            for r in &t.rows {
                let _ = writeln!(md, "| {} | {} | {} | {:.1} |", r.phenomenon, r.correct, r.total, r.percent);
            }
        }
        md
    }
}

/// Writes `<stem>.md` and `<stem>.json` and returns both paths.
pub fn emit_report(report: &Report, stem: impl AsRef<Path>) -> std::io::Result<(PathBuf, PathBuf)> {
    let stem = stem.as_ref();
    let md = stem.with_extension("md");
    let json = stem.with_extension("json");
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&md, report.to_markdown())?;
    fs::write(&json, report.to_json())?;
    Ok((md, json))
}
