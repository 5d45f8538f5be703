//! Readers for human-judgment JSONL and external metric CSV files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One judged candidate caption. `id` defaults to the zero-based line index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    #[serde(default)]
    pub id: Option<String>,
    pub image_id: String,
    pub candidate: String,
    pub human_score: f64,
    #[serde(default)]
    pub metric_scores: BTreeMap<String, f64>,
}

impl Judgment {
    pub fn id(&self) -> &str {
        self.id.as_deref().unwrap_or_default()
    }
}

pub fn parse_judgments(reader: impl BufRead) -> Result<Vec<Judgment>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("judgments line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut j: Judgment = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("judgments line {}: {e}", lineno + 1)))?;
        if !j.human_score.is_finite() || j.metric_scores.values().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("judgments line {}: non-finite score", lineno + 1)));
        }
        j.id.get_or_insert_with(|| lineno.to_string());
        out.push(j);
    }
    let mut seen = std::collections::HashSet::new();
    for j in &out {
        if !seen.insert(j.id()) {
            return Err(Error::DuplicateId(j.id().to_string()));
        }
    }
    Ok(out)
}

pub fn read_judgments(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_judgments(BufReader::new(f))
}

#[derive(Debug, Deserialize)]
struct MetricRow {
    id: String,
    metric_name: String,
    value: f64,
}

/// Metric name to (judgment id to value).
pub type MetricColumns = BTreeMap<String, BTreeMap<String, f64>>;

pub fn parse_metric_csv(reader: impl std::io::Read) -> Result<MetricColumns> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = MetricColumns::new();
    for (i, row) in rdr.deserialize::<MetricRow>().enumerate() {
        let row = row.map_err(|e| Error::Format(format!("metric csv row {}: {e}", i + 1)))?;
        if !row.value.is_finite() {
            return Err(Error::Format(format!("metric csv row {}: non-finite value", i + 1)));
        }
        let col = out.entry(row.metric_name.clone()).or_default();
        if col.insert(row.id.clone(), row.value).is_some() {
            return Err(Error::DuplicateId(format!("{} / {}", row.metric_name, row.id)));
        }
    }
    Ok(out)
}

pub fn read_metric_csv(path: impl AsRef<Path>) -> Result<MetricColumns> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_metric_csv(f)
}

/// Merges CSV metric columns into the judgments' `metric_scores`.
pub fn attach_metrics(judgments: &mut [Judgment], columns: &MetricColumns) -> Result<()> {
    for (metric, values) in columns {
        for j in judgments.iter_mut() {
            let v = values
                .get(j.id())
                .ok_or_else(|| Error::UnknownId(format!("metric {metric} has no value for judgment {}", j.id())))?;
            j.metric_scores.insert(metric.clone(), *v);
        }
    }
    Ok(())
}

/// Human scores and one metric column, aligned by judgment.
pub fn metric_column(judgments: &[Judgment], metric: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut human = Vec::with_capacity(judgments.len());
    let mut scores = Vec::with_capacity(judgments.len());
    for j in judgments {
        let v = j
            .metric_scores
            .get(metric)
            .ok_or_else(|| Error::UnknownId(format!("judgment {} has no {metric} score", j.id())))?;
        human.push(j.human_score);
        scores.push(*v);
    }
    Ok((human, scores))
}
