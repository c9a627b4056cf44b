//! Append-only JSONL persistence for attack transcripts.
//!
//! One JSON object per line, flushed after every record so an interrupted
//! run leaves a readable log of everything finished so far.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::attack::AttackTranscript;

/// One line of the transcript log: the transcript plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    /// Dataset record id this attack belongs to.
    pub record_id: String,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    pub target_identity: String,
    pub attacker_identity: String,
    pub judge_identity: String,
    pub transcript: AttackTranscript,
}

/// Milliseconds since the UNIX epoch; the clock the log timestamps use.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Serialized appender. Opens the file once, appends one line per record,
/// and flushes eagerly.
pub struct TranscriptWriter {
    out: BufWriter<File>,
}

impl TranscriptWriter {
    /// Opens (creating if needed) the log at `path` in append mode.
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path.as_ref())?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn write_record(&mut self, record: &TranscriptRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a whole transcript log. Parse failures carry the line number.
pub fn read_transcripts(path: impl AsRef<Path>) -> Result<Vec<TranscriptRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TranscriptRecord = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            path: path.display().to_string(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
