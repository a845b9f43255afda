//! Patch-to-scan, whole-scan and total retrieval accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::SearchRow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanCounts {
    pub n_correct: usize,
    pub n_total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of all queries whose best match comes from the right scan.
    pub eta_p: f64,
    /// Mean over scans of the per-scan correct fraction.
    pub eta_w: f64,
    pub eta_total: f64,
    pub per_scan: BTreeMap<String, ScanCounts>,
    pub n_queries: usize,
}

/// Scores top-1 predictions (`query -> predicted scan`) against `query -> true scan`.
pub fn evaluate(top1: &BTreeMap<String, String>, truth: &BTreeMap<String, String>) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Empty("no labelled queries to evaluate".into()));
    }
    if let Some(q) = top1.keys().find(|q| !truth.contains_key(*q)) {
        return Err(Error::UnknownId(format!("query {q} has no truth label")));
    }
    let mut per_scan: BTreeMap<String, ScanCounts> = BTreeMap::new();
    for (query, scan) in truth {
        let predicted = top1
            .get(query)
            .ok_or_else(|| Error::UnknownId(format!("query {query} has no retrieval result")))?;
        let c = per_scan.entry(scan.clone()).or_insert(ScanCounts {
            n_correct: 0,
            n_total: 0,
        });
        c.n_total += 1;
        if predicted == scan {
            c.n_correct += 1;
        }
    }
    let correct: usize = per_scan.values().map(|c| c.n_correct).sum();
    let total: usize = per_scan.values().map(|c| c.n_total).sum();
    let eta_p = correct as f64 / total as f64;
    let eta_w = per_scan
        .values()
        .map(|c| c.n_correct as f64 / c.n_total as f64)
        .sum::<f64>()
        / per_scan.len() as f64;
    Ok(EvalReport {
        eta_p,
        eta_w,
        eta_total: eta_p * eta_w,
        per_scan,
        n_queries: total,
    })
}

/// Best match per query from search rows.
pub fn top1_from_rows(rows: &[SearchRow]) -> BTreeMap<String, String> {
    rows.iter()
        .filter(|r| r.rank == 1)
        .map(|r| (r.query_id.clone(), r.scan_id.clone()))
        .collect()
}

#[derive(Debug, Deserialize)]
struct TruthRow {
    query_id: String,
    scan_id: String,
}

/// Reads `query_id,scan_id` rows.
pub fn read_truth_csv(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<TruthRow>() {
        let row = row?;
        if out.insert(row.query_id.clone(), row.scan_id).is_some() {
            return Err(Error::DuplicateId(row.query_id));
        }
    }
    Ok(out)
}

pub fn write_truth_csv(truth: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["query_id", "scan_id"])?;
    for (q, s) in truth {
        w.write_record([q, s])?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub fraction: f64,
    pub method: String,
    pub feature: String,
    pub report: EvalReport,
}

/// Long-format CSV `fraction,method,feature,eta_p,eta_w,eta_total` with accuracies in
/// percent (two decimals), sorted by (feature, method, fraction).
pub fn sweep_report(entries: &[SweepEntry]) -> Result<String> {
    let mut keys = BTreeSet::new();
    for e in entries {
        if !keys.insert((e.feature.clone(), e.method.clone(), e.fraction.to_bits())) {
            return Err(Error::DuplicateId(format!(
                "sweep row ({}, {}, {})",
                e.fraction, e.method, e.feature
            )));
        }
    }
    let mut sorted: Vec<&SweepEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        a.feature
            .cmp(&b.feature)
            .then(a.method.cmp(&b.method))
            .then(a.fraction.total_cmp(&b.fraction))
    });
    let mut out = String::from("fraction,method,feature,eta_p,eta_w,eta_total\n");
    for e in sorted {
        writeln!(
            out,
            "{:.2},{},{},{:.2},{:.2},{:.2}",
            e.fraction,
            e.method,
            e.feature,
            100.0 * e.report.eta_p,
            100.0 * e.report.eta_w,
            100.0 * e.report.eta_total
        )
        .expect("writing to a String");
    }
    Ok(out)
}
