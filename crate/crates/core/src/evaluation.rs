//! Micro-averaged scoring that ignores `no_relation`, selection precision
//! against the sealed labels, and per-iteration reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::SealedTruth;
use crate::error::{Error, Result};
use crate::selection::PromotedBatch;

pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted_positive: usize,
    pub gold_positive: usize,
    pub correct_positive: usize,
}

impl ScoreReport {
    pub fn from_counts(predicted_positive: usize, gold_positive: usize, correct_positive: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct_positive, predicted_positive);
        let recall = ratio(correct_positive, gold_positive);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ScoreReport {
            precision,
            recall,
            f1,
            predicted_positive,
            gold_positive,
            correct_positive,
        }
    }
}

/// Micro P/R/F1 where correct `no_relation` predictions earn nothing.
pub fn score(gold: &[usize], pred: &[usize], no_relation: usize) -> Result<ScoreReport> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut predicted = 0;
    let mut actual = 0;
    let mut correct = 0;
    for (&g, &p) in gold.iter().zip(pred) {
        if p != no_relation {
            predicted += 1;
        }
        if g != no_relation {
            actual += 1;
            if p == g {
                correct += 1;
            }
        }
    }
    Ok(ScoreReport::from_counts(predicted, actual, correct))
}

/// Share of promoted items whose label matches the sealed truth; `None` for an empty batch.
pub fn selection_precision(batch: &PromotedBatch, truth: &SealedTruth) -> Result<Option<f64>> {
    if batch.items.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for item in &batch.items {
        let gold = truth
            .get(&item.id)
            .ok_or_else(|| Error::MissingGold(item.id.clone()))?;
        if gold == item.label {
            correct += 1;
        }
    }
    Ok(Some(correct as f64 / batch.items.len() as f64))
}

/// One row per loop iteration; iteration 0 is the pretrained state.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `|L_U|` after this iteration's promotion.
    pub n_pseudo: usize,
    pub sel_precision: Option<f64>,
    pub dev: ScoreReport,
    pub test: ScoreReport,
}

/// The flat CSV form of an iteration record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub seed: u64,
    pub iteration: usize,
    pub n_pseudo: usize,
    pub sel_precision: Option<f64>,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
    pub test_p: f64,
    pub test_r: f64,
    pub test_f1: f64,
}

impl ReportRow {
    pub fn new(run_id: &str, seed: u64, r: &IterationRecord) -> Self {
        ReportRow {
            run_id: run_id.to_owned(),
            seed,
            iteration: r.iteration,
            n_pseudo: r.n_pseudo,
            sel_precision: r.sel_precision,
            dev_p: r.dev.precision,
            dev_r: r.dev.recall,
            dev_f1: r.dev.f1,
            test_p: r.test.precision,
            test_r: r.test.recall,
            test_f1: r.test.f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample (n − 1) standard deviation; one value has deviation 0.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(MeanStd { mean, std })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub run_id: String,
    pub seeds: Vec<u64>,
    /// Metrics of each seed's last iteration.
    pub final_metrics: BTreeMap<String, MeanStd>,
    /// Per-seed mean promoted precision over the iterations that promoted anything.
    pub sel_precision: Option<MeanStd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
}

impl Summary {
    pub fn group(&self, run_id: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.run_id == run_id)
    }
}

/// Groups rows by run id, then by seed, keeping first-seen order.
pub fn summarize(rows: &[ReportRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::Report("no records to summarize".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut by_run: BTreeMap<&str, BTreeMap<u64, Vec<&ReportRow>>> = BTreeMap::new();
    for r in rows {
        if !by_run.contains_key(r.run_id.as_str()) {
            order.push(&r.run_id);
        }
        by_run.entry(&r.run_id).or_default().entry(r.seed).or_default().push(r);
    }
    let groups = order
        .into_iter()
        .map(|run_id| {
            let seeds = &by_run[run_id];
            let finals: Vec<&ReportRow> = seeds
                .values()
                .map(|rs| *rs.iter().max_by_key(|r| r.iteration).expect("non-empty"))
                .collect();
            let metric = |f: fn(&ReportRow) -> f64| {
                mean_std(&finals.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("non-empty")
            };
            let mut final_metrics = BTreeMap::new();
            final_metrics.insert("dev_p".into(), metric(|r| r.dev_p));
            final_metrics.insert("dev_r".into(), metric(|r| r.dev_r));
            final_metrics.insert("dev_f1".into(), metric(|r| r.dev_f1));
            final_metrics.insert("test_p".into(), metric(|r| r.test_p));
            final_metrics.insert("test_r".into(), metric(|r| r.test_r));
            final_metrics.insert("test_f1".into(), metric(|r| r.test_f1));
            final_metrics.insert("n_pseudo".into(), metric(|r| r.n_pseudo as f64));
            let per_seed_precision: Vec<f64> = seeds
                .values()
                .filter_map(|rs| {
                    let p: Vec<f64> = rs.iter().filter_map(|r| r.sel_precision).collect();
                    mean_std(&p).map(|m| m.mean)
                })
                .collect();
            GroupSummary {
                run_id: run_id.to_owned(),
                seeds: seeds.keys().copied().collect(),
                final_metrics,
                sel_precision: mean_std(&per_seed_precision),
            }
        })
        .collect();
    Ok(Summary { groups })
}

pub fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Report(format!("{}: {e}", path.display()))))
        .collect()
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Report(format!("{}: {other:?}", path.display())),
    }
}

/// Writes the per-iteration table and the summary JSON into `dir`.
pub fn emit_report(rows: &[ReportRow], dir: &Path) -> Result<Summary> {
    let summary = summarize(rows)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rows(&dir.join(ITERATIONS_FILE), rows)?;
    let json = serde_json::to_string_pretty(&summary)?;
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
