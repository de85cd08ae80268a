//! JSON metrics reports.
//!
//! Reports hold only values that are a function of the config and the data,
//! so repeated runs produce identical bytes. Wall-clock timings go to
//! `logs/` instead.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{Alignment, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub entities: [usize; 2],
    pub relation_triples: [usize; 2],
    pub attribute_triples: [usize; 2],
    pub duplicate_relation_triples: [usize; 2],
    pub duplicate_attribute_triples: [usize; 2],
    pub seeds: usize,
    pub train: usize,
    pub test: usize,
}

impl DatasetSummary {
    pub fn new(dataset: &Dataset, train: usize, test: usize) -> Self {
        let r = &dataset.load_reports;
        Self {
            entities: [r[0].entities, r[1].entities],
            relation_triples: [r[0].relation_triples, r[1].relation_triples],
            attribute_triples: [r[0].attribute_triples, r[1].attribute_triples],
            duplicate_relation_triples: [r[0].duplicate_relation_triples, r[1].duplicate_relation_triples],
            duplicate_attribute_triples: [r[0].duplicate_attribute_triples, r[1].duplicate_attribute_triples],
            seeds: dataset.pair.seeds.len(),
            train,
            test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsEntry {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub tau: f64,
    pub fusion: String,
    pub ablation: String,
    pub hits: Vec<HitsEntry>,
    pub mrr: f64,
}

impl MetricsRow {
    pub fn new(alignment: &Alignment, config: &RunConfig) -> Self {
        Self {
            tau: alignment.tau,
            fusion: config.fusion.tag().to_string(),
            ablation: config.ablation.tag().to_string(),
            hits: alignment
                .hits
                .iter()
                .map(|h| HitsEntry { k: h.k, value: h.value })
                .collect(),
            mrr: alignment.mrr,
        }
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|h| h.k == k).map(|h| h.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub command: String,
    pub config: RunConfig,
    pub dataset: DatasetSummary,
    pub rows: Vec<MetricsRow>,
    /// Per-epoch structural loss from `train-struct`, when available.
    pub structural_loss: Vec<f64>,
    /// Per-epoch semantic loss from `train-sem`, when available.
    pub semantic_loss: Vec<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn save_curve(path: &Path, values: &[f64]) -> Result<()> {
    let mut s = serde_json::to_string(values)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a loss curve; a missing file gives an empty curve.
pub fn load_curve(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = crate::io::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
