//! Ingestion of the six-column school test-score table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use dcsmc::models::HierarchicalBinomial;

use crate::error::{CliError, Result};

pub const COLUMNS: [&str; 6] = ["county", "district", "school", "year", "trials", "successes"];
/// District whose schools are excluded from the analysis.
pub const EXCLUDED_DISTRICT: &str = "75";
/// Years excluded from the analysis.
pub const EXCLUDED_YEARS: [u32; 2] = [2010, 2011];
pub const ROOT_LABEL: &str = "root";

/// One row of the dataset. The path county, district, school, year is the
/// path from the root to the row's leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierDatasetRecord {
    pub county: String,
    pub district: String,
    pub school: String,
    pub year: u32,
    pub trials: u64,
    pub successes: u64,
}

/// What ingestion kept and dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub dropped_district: usize,
    pub dropped_year: usize,
    pub counties: usize,
    pub districts: usize,
    pub schools: usize,
    pub leaves: usize,
    /// Sum of trials over the rows kept.
    pub total_trials: u64,
}

/// Reads every row, checking the header and each field.
pub fn read_records(path: &Path) -> Result<Vec<HierDatasetRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path.display(), io),
            other => CliError::Protocol(format!("{other:?}")),
        })?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if header != COLUMNS {
        return Err(CliError::MalformedRow { line: 1, reason: format!("header must be {}", COLUMNS.join("\t")) });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::MalformedRow { line, reason: e.to_string() }
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |reason: String| CliError::MalformedRow { line, reason };
        let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let number = |i: usize| -> Result<u64> {
            field(i).parse::<u64>().map_err(|_| bad(format!("{} `{}` is not a count", COLUMNS[i], field(i))))
        };
        let rec = HierDatasetRecord {
            county: field(0).to_string(),
            district: field(1).to_string(),
            school: field(2).to_string(),
            year: u32::try_from(number(3)?).map_err(|_| bad(format!("year `{}` out of range", field(3))))?,
            trials: number(4)?,
            successes: number(5)?,
        };
        if rec.county.is_empty() || rec.district.is_empty() || rec.school.is_empty() {
            return Err(bad("empty county, district or school".into()));
        }
        if [&rec.county, &rec.district, &rec.school].iter().any(|s| s.contains('/')) {
            return Err(bad("labels may not contain `/`".into()));
        }
        if rec.successes > rec.trials {
            return Err(bad(format!("{} successes exceed {} trials", rec.successes, rec.trials)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Builds the county, district, school, year tree from the kept rows.
/// Repeated school-year rows are pooled into one leaf.
pub fn build_model(records: &[HierDatasetRecord]) -> Result<(HierarchicalBinomial, IngestReport)> {
    let mut report = IngestReport {
        rows_read: records.len(),
        dropped_district: 0,
        dropped_year: 0,
        counties: 0,
        districts: 0,
        schools: 0,
        leaves: 0,
        total_trials: 0,
    };
    let mut leaves: BTreeMap<[String; 4], (u64, u64)> = BTreeMap::new();
    for r in records {
        if r.district == EXCLUDED_DISTRICT {
            report.dropped_district += 1;
            continue;
        }
        if EXCLUDED_YEARS.contains(&r.year) {
            report.dropped_year += 1;
            continue;
        }
        report.total_trials += r.trials;
        let key = [r.county.clone(), r.district.clone(), r.school.clone(), r.year.to_string()];
        let e = leaves.entry(key).or_insert((0, 0));
        e.0 += r.successes;
        e.1 += r.trials;
    }
    let distinct = |depth: usize| {
        let mut seen: Vec<&[String]> = leaves.keys().map(|k| &k[..depth]).collect();
        seen.dedup();
        seen.len()
    };
    report.counties = distinct(1);
    report.districts = distinct(2);
    report.schools = distinct(3);
    report.leaves = leaves.len();
    let paths: Vec<(Vec<String>, u64, u64)> = leaves.into_iter().map(|(k, (m, t))| (k.to_vec(), m, t)).collect();
    let model = HierarchicalBinomial::from_paths(ROOT_LABEL, &paths)?;
    Ok((model, report))
}

/// Reads, filters and builds the hierarchical model from a dataset file.
pub fn ingest_dataset(path: &Path) -> Result<(HierarchicalBinomial, IngestReport)> {
    build_model(&read_records(path)?)
}
