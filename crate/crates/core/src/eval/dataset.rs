//! JSONL dataset ingestion.
//!
//! One object per line: `{"id": "...", "scenario": "IA", "query": "..."}`.
//! Lines that repeat an earlier (scenario, query) pair are dropped and
//! counted; everything else that is malformed is an error naming the line.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::scenario::Scenario;

/// One benchmark query: the intent string plus its safety scenario label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub scenario: Scenario,
    pub query: String,
}

/// Loaded records plus ingestion bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<QueryRecord>,
    /// How many lines repeated an earlier (scenario, query) pair.
    pub duplicates_dropped: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    scenario: String,
    query: String,
}

/// Reads and validates a JSONL dataset. Blank lines are skipped; ids must
/// be unique; unknown scenario codes, empty queries, and JSON errors all
/// report their 1-based line number.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let fail = |line: usize, reason: String| Error::Dataset {
        path: path.display().to_string(),
        line,
        reason,
    };

    let mut records = Vec::new();
    let mut seen_pairs: HashSet<(Scenario, String)> = HashSet::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut duplicates_dropped = 0;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| fail(line_no, format!("invalid JSON object: {e}")))?;
        let scenario = Scenario::from_code(&raw.scenario)
            .map_err(|_| fail(line_no, format!("unknown scenario code {:?}", raw.scenario)))?;
        if raw.query.trim().is_empty() {
            return Err(fail(line_no, "empty query".to_string()));
        }
        if !seen_pairs.insert((scenario, raw.query.clone())) {
            duplicates_dropped += 1;
            continue;
        }
        if !seen_ids.insert(raw.id.clone()) {
            return Err(fail(line_no, format!("duplicate record id {:?}", raw.id)));
        }
        records.push(QueryRecord {
            id: raw.id,
            scenario,
            query: raw.query,
        });
    }

    if duplicates_dropped > 0 {
        log::warn!(
            "{}: dropped {duplicates_dropped} duplicate (scenario, query) line(s)",
            path.display()
        );
    }
    Ok(Dataset {
        records,
        duplicates_dropped,
    })
}

/// Writes records as JSONL, the inverse of [`load_dataset`].
pub fn save_dataset(records: &[QueryRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
