//! Per-run logs: a long-format CSV and a versioned JSON summary.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Split names used in the CSV `split` column.
pub const EVAL_SPLITS: [&str; 5] = ["train_opt", "train_ls", "train_gr", "inter_train", "test"];
/// Running mean of mini-batch losses during one inter-train epoch.
pub const EPOCH_SPLIT: &str = "epoch_train";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub params: usize,
    pub candidates: usize,
    pub flops_cum: u64,
    pub wall_s: f64,
}

/// What happened at one growth step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    /// Hidden nodes before growing.
    pub hidden_nodes: usize,
    /// Human-readable selected expansion, `None` when saturated.
    pub selected: Option<String>,
    pub gamma: Option<f64>,
    pub est_loss_gr: Option<f64>,
    pub bottleneck_node: Option<usize>,
    pub psi: Option<f64>,
    pub candidates: usize,
    pub candidate_flops: u64,
    pub params: usize,
    pub saturated: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub steps: Vec<StepSummary>,
}

impl RunMetrics {
    /// Last evaluation row of `split`.
    pub fn last(&self, split: &str) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }

    /// Parameter count at the end of every step, baseline included.
    pub fn params_per_step(&self) -> Vec<usize> {
        let mut out: BTreeMap<usize, usize> = BTreeMap::new();
        for r in &self.rows {
            out.insert(r.step, r.params);
        }
        out.into_values().collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(["step", "epoch", "split", "loss", "accuracy", "params", "candidates", "flops_cum", "wall_s"])?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn emit_metrics(run: &RunMetrics, path: &Path) -> Result<()> {
    fs::write(path, run.to_csv()?)?;
    Ok(())
}

/// JSON summary of one run; the effective configuration is echoed verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub label: String,
    pub config: serde_json::Value,
    pub final_params: usize,
    /// Test accuracy for classification, test loss otherwise.
    pub final_test_metric: f64,
    pub final_test_loss: f64,
    pub final_train_gr_loss: f64,
    pub flops_total: u64,
    pub flops_candidate_evaluation: u64,
    pub flops_by_phase: BTreeMap<String, u64>,
    pub wall_s: f64,
    pub steps: Vec<StepSummary>,
}

pub fn emit_plotdata(summary: &RunSummary, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn parse_summary(text: &str) -> Result<RunSummary> {
    let probe: serde_json::Value = serde_json::from_str(text)?;
    let version = probe
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Document("missing schema_version".into()))? as u32;
    if version != SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_value(probe)?)
}

pub fn load_summary(path: &Path) -> Result<RunSummary> {
    parse_summary(&fs::read_to_string(path)?)
}
