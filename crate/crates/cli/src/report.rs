//! Experiment reports (JSON + CSV) and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use clwb_core::composer::CalibrationParams;
use clwb_core::oodlab::OdinParams;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const REPORT_VERSION: u32 = 1;

/// Writes via a temporary sibling and a rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub code: String,
    pub checkpoint_format: u16,
    pub report: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            code: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: crate::checkpoint::FORMAT_VERSION,
            report: REPORT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingPoint {
    /// Number of tasks learned (1-based).
    pub t: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub mean_h_wp: f64,
    pub mean_h_tp: f64,
    pub mean_h_cil: f64,
    /// WP temperature and TP variant the entropies were computed with.
    pub wp_nu: f64,
    pub tp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub versions: Versions,
    pub config: ExperimentConfig,
    pub checkpoint: String,
    pub method: String,
    pub backbone: String,
    pub scorer: String,
    pub route: String,
    pub odin: Option<OdinParams>,
    pub calibration: Option<CalibrationParams>,
    pub test_samples: usize,
    pub til_per_task: Vec<f64>,
    pub til: f64,
    pub cil: f64,
    pub auc_per_task: Vec<f64>,
    pub avg_auc: f64,
    pub forgetting: Vec<ForgettingPoint>,
    pub entropy: EntropySummary,
    pub notes: Vec<String>,
}

pub const CSV_HEADER: &str = "method,backbone,loss,scorer,route,avg_auc,cil,til";

impl ExperimentReport {
    pub fn csv_row(&self) -> String {
        let loss = serde_json::to_value(self.config.train.loss).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:.1},{:.1},{:.1}",
            self.method,
            self.backbone,
            loss,
            self.scorer,
            self.route,
            100.0 * self.avg_auc,
            self.cil,
            self.til
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Writes `<stem>.json` and `<stem>.csv` in `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), CliError> {
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        write_atomic(&json, self.to_json().as_bytes())?;
        write_atomic(&csv, format!("{CSV_HEADER}\n{}\n", self.csv_row()).as_bytes())?;
        Ok((json, csv))
    }
}

/// Reads every `*.report.json` in `dir`, sorted by file name.
pub fn collect_reports(dir: &Path) -> Result<Vec<(String, ExperimentReport)>, CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".report.json")))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(io)?;
            let r: ExperimentReport =
                serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", p.display())))?;
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), r))
        })
        .collect()
}

/// One row per report, rows as methods and AUC/CIL/TIL as columns.
pub fn summary_csv(reports: &[(String, ExperimentReport)]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for (_, r) in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}
