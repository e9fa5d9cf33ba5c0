//! Accuracy, confusion counts and the results table.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{write_json, Task};
use crate::error::{Error, Result};

/// Confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub accuracy: f64,
    pub count: usize,
    pub confusion: Confusion,
}

impl SplitMetrics {
    pub fn from_predictions(predictions: &[u32], labels: &[u32]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptySplit);
        }
        if predictions.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p == 1, l == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(Self {
            accuracy: (c.tp + c.tn) as f64 / labels.len() as f64,
            count: labels.len(),
            confusion: c,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub model: String,
    pub task: Task,
    pub train: SplitMetrics,
    pub validation: SplitMetrics,
    pub test: SplitMetrics,
    /// Echo of the settings that produced these numbers.
    pub config: serde_json::Value,
}

impl Metrics {
    pub fn load(path: &Path) -> Result<Self> {
        crate::data::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Canonical row order; other model names follow alphabetically.
pub const MODEL_ORDER: [&str; 4] = ["common_class", "naive_bayes", "base_lm", "domain_lm"];

pub const REPORT_HEADER: &str = "| Model | Train Accuracy | Validation Accuracy | Test Accuracy |";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub task: Task,
    pub rows: Vec<ReportRow>,
    pub metrics: Vec<Metrics>,
}

fn rank(model: &str) -> (usize, &str) {
    (MODEL_ORDER.iter().position(|m| *m == model).unwrap_or(MODEL_ORDER.len()), model)
}

impl ReportTable {
    pub fn new(metrics: &[Metrics], task: Task) -> Result<Self> {
        if metrics.is_empty() {
            return Err(Error::InvalidInput("report needs at least one metrics entry".into()));
        }
        let mut seen = BTreeSet::new();
        for m in metrics {
            if m.task != task {
                return Err(Error::InvalidInput(format!(
                    "metrics for {} are task {}, report is task {}",
                    m.model,
                    m.task.tag(),
                    task.tag()
                )));
            }
            if !seen.insert(m.model.as_str()) {
                return Err(Error::Duplicate(format!("model {}", m.model)));
            }
            for s in [&m.train, &m.validation, &m.test] {
                if !(0.0..=1.0).contains(&s.accuracy) {
                    return Err(Error::InvalidInput(format!("accuracy {} outside [0,1]", s.accuracy)));
                }
            }
        }
        let mut metrics = metrics.to_vec();
        metrics.sort_by(|a, b| rank(&a.model).cmp(&rank(&b.model)));
        let rows = metrics
            .iter()
            .map(|m| ReportRow {
                model: m.model.clone(),
                train: m.train.accuracy,
                validation: m.validation.accuracy,
                test: m.test.accuracy,
            })
            .collect();
        Ok(Self { task, rows, metrics })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(REPORT_HEADER);
        out.push('\n');
        out.push_str("|---|---|---|---|\n");
        for r in &self.rows {
            out.push_str(&format!("| {} | {:.4} | {:.4} | {:.4} |\n", r.model, r.train, r.validation, r.test));
        }
        out
    }
}

/// Writes `report_{task}.json` and `report_{task}.md` into `out_dir`.
pub fn emit_report(metrics: &[Metrics], task: Task, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let table = ReportTable::new(metrics, task)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let json = out_dir.join(format!("report_{}.json", task.tag()));
    let md = out_dir.join(format!("report_{}.md", task.tag()));
    write_json(&json, &table)?;
    fs::write(&md, table.to_markdown()).map_err(|e| Error::io(format!("writing {}", md.display()), e))?;
    Ok((json, md))
}
