//! FeedbackRecord and its JSONL persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{SubSentenceSpan, TokenStream};
use crate::world::inject::InjectionLog;

use super::labels::SegmentLabels;
use super::verify::{FactVerdict, VerdictSource};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Checkpoint id of the policy (or captioner) that produced the response.
    pub policy: String,
    pub extractor: String,
    pub verifier: VerdictSource,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub schema_version: u32,
    pub scene_id: String,
    pub prompt: String,
    pub scene_observation: String,
    pub response: String,
    pub stream: TokenStream,
    pub spans: Vec<SubSentenceSpan>,
    /// Facts with their verdicts, one list per sub-sentence.
    pub verdicts: Vec<Vec<FactVerdict>>,
    pub labels: SegmentLabels,
    pub provenance: Provenance,
    /// Ground truth when the response came from an injecting captioner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection: Option<InjectionLog>,
}

impl FeedbackRecord {
    pub fn validate(&self) -> Result<()> {
        let n = self.spans.len();
        if self.verdicts.len() != n || self.labels.len() != n {
            return Err(Error::Validation(format!(
                "record {}: {} spans, {} verdict lists, {} labels",
                self.scene_id,
                n,
                self.verdicts.len(),
                self.labels.len()
            )));
        }
        let mut prev: Option<usize> = None;
        for s in &self.spans {
            let in_region = self.stream.response.contains(&s.token_start)
                && self.stream.response.contains(&s.token_end)
                && s.token_start <= s.token_end
                && s.last_token_index == s.token_end;
            if !in_region || prev.is_some_and(|p| p >= s.last_token_index) {
                return Err(Error::Validation(format!(
                    "record {}: span {} has invalid token indices",
                    self.scene_id, s.index
                )));
            }
            prev = Some(s.last_token_index);
        }
        if self.stream.ids.len() != self.stream.terms.len() {
            return Err(Error::Validation(format!(
                "record {}: stream ids and terms differ in length",
                self.scene_id
            )));
        }
        Ok(())
    }

    /// Last-token index of every sub-sentence.
    pub fn indices(&self) -> Vec<usize> {
        self.spans.iter().map(|s| s.last_token_index).collect()
    }
}

pub fn write_records(records: &[FeedbackRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<FeedbackRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let format_err = |detail: String| Error::Format {
            path: path.to_path_buf(),
            line: lineno,
            detail,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| format_err(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| format_err("missing schema_version".into()))?;
        if version != RECORD_SCHEMA_VERSION as u64 {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                found: version as u32,
                expected: RECORD_SCHEMA_VERSION,
            });
        }
        let record: FeedbackRecord =
            serde_json::from_value(value).map_err(|e| format_err(e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}
