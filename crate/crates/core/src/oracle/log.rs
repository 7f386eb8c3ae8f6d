use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ProbePhase;
use crate::llm_backend::{CompletionParams, TemplateName};

/// One line of `queries.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub template_name: TemplateName,
    pub prompt: String,
    pub params: Option<CompletionParams>,
    pub reply: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    /// Concept names the query is about, in template order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<ProbePhase>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QueryRecord {
    pub fn new(template_name: TemplateName, prompt: String, reply: String) -> Self {
        QueryRecord {
            template_name,
            prompt,
            params: None,
            reply,
            prompt_tokens: 0,
            completion_tokens: 0,
            latency_ms: 0,
            args: Vec::new(),
            phase: None,
            cached: false,
            error: None,
        }
    }
}

/// Append-only log of oracle traffic, kept in memory and optionally
/// mirrored to a JSON-lines file.
#[derive(Debug, Default)]
pub struct QueryLog {
    records: Mutex<Vec<QueryRecord>>,
    sink: Mutex<Option<BufWriter<File>>>,
}

impl QueryLog {
    pub fn new() -> Self {
        QueryLog::default()
    }

    /// Mirrors every future record to `path`, appending to existing content.
    pub fn attach_file(&self, path: &Path) -> io::Result<()> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        *self.sink.lock().expect("query log sink poisoned") = Some(BufWriter::new(file));
        Ok(())
    }

    pub fn record(&self, record: QueryRecord) {
        if let Some(sink) = self.sink.lock().expect("query log sink poisoned").as_mut() {
            let line = serde_json::to_string(&record).expect("query record serializes");
            if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                ::log::warn!("failed to write query log: {e}");
            }
        }
        self.records.lock().expect("query log poisoned").push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("query log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<QueryRecord> {
        self.records.lock().expect("query log poisoned").clone()
    }
}
