//! Append-only, hash-chained trace log.
//!
//! # Format
//!
//! One record per line, UTF-8, `\n`-terminated. Each line is the canonical JSON serialization of a
//! [`TraceRecord`]: object keys sorted by byte order at every depth, no insignificant whitespace,
//! numbers as `serde_json` prints them (integers without a fraction, floats in shortest
//! round-trip form). Instants are RFC 3339 UTC strings with nine fractional digits.
//!
//! `record_hash` is the lowercase hex SHA-256 of the canonical serialization of the record with the
//! `record_hash` key removed (so it covers `prev_hash`). `prev_hash` of the first record is
//! [`GENESIS_HASH`]; every later record carries the `record_hash` of its predecessor. `seq` starts
//! at 0 and increases by one per record; `trace_id` is `TR-` followed by `seq` zero-padded to ten
//! digits.
//!
//! There is no update or delete operation.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{instant_serde, Clock};
use crate::context::ContextChange;
use crate::intent::{IntentDescriptor, Outcome, Parameters, TriggerKind};

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";
pub const DIGEST_ALGORITHM: &str = "sha256";

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("STORAGE_FAILURE: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesRetrieved {
    pub ruleset_version: u64,
    pub rule_ids: Vec<String>,
}

/// One deliberation round of one loop execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub run_id: String,
    pub round_index: u32,
    pub agent_id: String,
    pub workflow_id: String,
    pub intent: IntentDescriptor,
    /// Intent this round's intent was revised from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_intent_id: Option<String>,
    pub rules_retrieved: RulesRetrieved,
    pub rules_cited: Vec<String>,
    pub reasoning: String,
    pub decision: Outcome,
    pub deliberator: String,
    pub prompt_template_version: String,
    pub context_snapshot_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_parameters: Option<Parameters>,
    /// Deliberator failure or contract violation that forced a fail-closed escalation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum RecordBody {
    PagrlRound(RoundTrace),
    ContextMutation {
        actor: String,
        change: ContextChange,
        context_version: u64,
    },
    RulesActivated {
        actor: String,
        ruleset_version: u64,
        rule_count: usize,
    },
    EscalationEnqueued {
        escalation_id: String,
        intent_id: String,
        agent_id: String,
        triggering_rule_ids: Vec<String>,
        trigger_kind: TriggerKind,
    },
    EscalationResolved {
        escalation_id: String,
        status: String,
        operator: String,
        note: String,
        token_rule_ids: Vec<String>,
    },
    EscalationExpired {
        escalation_id: String,
    },
    TokensConsumed {
        intent_id: String,
        rule_ids: Vec<String>,
    },
}

impl RecordBody {
    pub fn kind(&self) -> &'static str {
        match self {
            RecordBody::PagrlRound(_) => "pagrl_round",
            RecordBody::ContextMutation { .. } => "context_mutation",
            RecordBody::RulesActivated { .. } => "rules_activated",
            RecordBody::EscalationEnqueued { .. } => "escalation_enqueued",
            RecordBody::EscalationResolved { .. } => "escalation_resolved",
            RecordBody::EscalationExpired { .. } => "escalation_expired",
            RecordBody::TokensConsumed { .. } => "tokens_consumed",
        }
    }

    pub fn as_round(&self) -> Option<&RoundTrace> {
        match self {
            RecordBody::PagrlRound(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub trace_id: String,
    #[serde(with = "instant_serde")]
    pub timestamp: DateTime<Utc>,
    pub body: RecordBody,
    pub prev_hash: String,
    pub record_hash: String,
}

impl TraceRecord {
    pub fn round(&self) -> Option<&RoundTrace> {
        self.body.as_round()
    }

    /// Digest this record should carry, recomputed from its other fields.
    pub fn compute_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("trace record serializes");
        if let Value::Object(map) = &mut value {
            map.remove("record_hash");
        }
        hex::encode(Sha256::digest(canonical_json(&value).as_bytes()))
    }

    pub fn to_canonical_line(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("trace record serializes"))
    }
}

/// Canonical JSON: keys sorted at every depth, no whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        other => out.push_str(&serde_json::to_string(other).expect("scalar serializes")),
    }
}

/// Names of required fields that are missing or empty. An empty result means the record is
/// complete.
pub fn validate_record(record: &TraceRecord) -> Vec<&'static str> {
    let mut missing = Vec::new();
    if record.trace_id.is_empty() {
        missing.push("trace_id");
    }
    if record.prev_hash.len() != 64 {
        missing.push("prev_hash");
    }
    if record.record_hash.len() != 64 {
        missing.push("record_hash");
    }
    if let RecordBody::PagrlRound(r) = &record.body {
        let checks: [(&'static str, bool); 9] = [
            ("run_id", r.run_id.is_empty()),
            ("agent_id", r.agent_id.is_empty()),
            ("workflow_id", r.workflow_id.is_empty()),
            ("intent", r.intent.intent_id.is_empty() || r.intent.description.is_empty()),
            ("intent.action_class", r.intent.action_class.is_empty()),
            ("rules_retrieved", r.rules_retrieved.ruleset_version == 0),
            ("reasoning", r.reasoning.trim().is_empty()),
            ("deliberator", r.deliberator.is_empty()),
            ("prompt_template_version", r.prompt_template_version.is_empty()),
        ];
        missing.extend(checks.iter().filter(|(_, bad)| *bad).map(|(n, _)| *n));
        if r.round_index == 0 {
            missing.push("round_index");
        }
    }
    missing
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Durability {
    /// Flush to the OS on every append.
    Flush,
    /// Flush and `fdatasync` on every append.
    #[default]
    Sync,
}

#[derive(Debug)]
enum Storage {
    Memory(Vec<String>),
    File {
        path: PathBuf,
        file: File,
        durability: Durability,
    },
}

impl Storage {
    fn append(&mut self, line: &str) -> std::io::Result<()> {
        match self {
            Storage::Memory(lines) => {
                lines.push(line.to_string());
                Ok(())
            }
            Storage::File {
                file, durability, ..
            } => {
                let mut buf = Vec::with_capacity(line.len() + 1);
                buf.extend_from_slice(line.as_bytes());
                buf.push(b'\n');
                file.write_all(&buf)?;
                file.flush()?;
                if *durability == Durability::Sync {
                    file.sync_data()?;
                }
                Ok(())
            }
        }
    }

    fn read_lines(&self) -> std::io::Result<Vec<String>> {
        match self {
            Storage::Memory(lines) => Ok(lines.clone()),
            Storage::File { path, .. } => read_lines(path),
        }
    }
}

fn read_lines(path: &Path) -> std::io::Result<Vec<String>> {
    let f = File::open(path)?;
    BufReader::new(f)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.is_empty()))
        .collect()
}

#[derive(Debug)]
struct State {
    storage: Storage,
    records: Vec<Arc<TraceRecord>>,
    last_hash: String,
    next_seq: u64,
}

/// Position of a cursor for paginated queries: records strictly after it are returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCursor {
    pub timestamp: String,
    pub trace_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceFilter {
    pub agent_id: Option<String>,
    pub workflow_id: Option<String>,
    pub decision: Option<Outcome>,
    /// Matches rounds that cite this rule.
    pub rule_id: Option<String>,
    /// Record kind, e.g. `pagrl_round`.
    pub kind: Option<String>,
    #[serde(with = "instant_serde::option")]
    pub since: Option<DateTime<Utc>>,
    #[serde(with = "instant_serde::option")]
    pub until: Option<DateTime<Utc>>,
    pub after: Option<TraceCursor>,
    pub limit: Option<usize>,
}

impl TraceFilter {
    fn round_only(&self) -> bool {
        self.agent_id.is_some()
            || self.workflow_id.is_some()
            || self.decision.is_some()
            || self.rule_id.is_some()
    }

    pub fn matches(&self, record: &TraceRecord) -> bool {
        if let Some(kind) = &self.kind {
            if record.body.kind() != kind {
                return false;
            }
        }
        if self.since.is_some_and(|t| record.timestamp < t)
            || self.until.is_some_and(|t| record.timestamp > t)
        {
            return false;
        }
        if !self.round_only() {
            return true;
        }
        let Some(r) = record.round() else {
            return false;
        };
        self.agent_id.as_ref().is_none_or(|a| &r.agent_id == a)
            && self.workflow_id.as_ref().is_none_or(|w| &r.workflow_id == w)
            && self.decision.is_none_or(|d| r.decision == d)
            && self.rule_id.as_ref().is_none_or(|id| r.rules_cited.contains(id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePage {
    pub records: Vec<TraceRecord>,
    pub next_cursor: Option<TraceCursor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainMismatch {
    /// Zero-based line position in storage.
    pub position: usize,
    /// `seq` the record at that position claims, when it parses.
    pub seq: Option<u64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub ok: bool,
    pub checked: usize,
    pub first_mismatch: Option<ChainMismatch>,
}

#[derive(Debug)]
pub struct AuditLog {
    state: RwLock<State>,
    clock: Arc<dyn Clock>,
    fail_appends: AtomicBool,
}

impl AuditLog {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            state: RwLock::new(State {
                storage: Storage::Memory(Vec::new()),
                records: Vec::new(),
                last_hash: GENESIS_HASH.to_string(),
                next_seq: 0,
            }),
            clock,
            fail_appends: AtomicBool::new(false),
        }
    }

    /// Opens (or creates) a log file and rebuilds the in-memory index from it. Lines that do not
    /// parse are skipped here and reported by [`AuditLog::verify_chain`].
    pub fn open(
        path: impl AsRef<Path>,
        durability: Durability,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut records = Vec::new();
        for (pos, line) in read_lines(&path)?.into_iter().enumerate() {
            match serde_json::from_str::<TraceRecord>(&line) {
                Ok(r) => records.push(Arc::new(r)),
                Err(err) => tracing::warn!(position = pos, %err, "unparseable trace line"),
            }
        }
        let (last_hash, next_seq) = match records.last() {
            Some(r) => (r.record_hash.clone(), r.seq + 1),
            None => (GENESIS_HASH.to_string(), 0),
        };
        Ok(Self {
            state: RwLock::new(State {
                storage: Storage::File {
                    path,
                    file,
                    durability,
                },
                records,
                last_hash,
                next_seq,
            }),
            clock,
            fail_appends: AtomicBool::new(false),
        })
    }

    /// Appends a record, assigning id, timestamp and chain hashes. The record is durable (per the
    /// configured [`Durability`]) before this returns.
    pub fn append(&self, body: RecordBody) -> Result<TraceRecord, AuditError> {
        let mut state = self.state.write().expect("audit lock");
        if self.fail_appends.load(Ordering::SeqCst) {
            return Err(AuditError::Storage(std::io::Error::other("injected storage failure")));
        }
        let seq = state.next_seq;
        let mut record = TraceRecord {
            seq,
            trace_id: format!("TR-{seq:010}"),
            timestamp: self.clock.now(),
            body,
            prev_hash: state.last_hash.clone(),
            record_hash: String::new(),
        };
        record.record_hash = record.compute_hash();
        state.storage.append(&record.to_canonical_line())?;
        state.last_hash = record.record_hash.clone();
        state.next_seq += 1;
        state.records.push(Arc::new(record.clone()));
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("audit lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.state
            .read()
            .expect("audit lock")
            .records
            .iter()
            .map(|r| (**r).clone())
            .collect()
    }

    pub fn query(&self, filter: &TraceFilter) -> TracePage {
        let state = self.state.read().expect("audit lock");
        let mut hits: Vec<&Arc<TraceRecord>> =
            state.records.iter().filter(|r| filter.matches(r)).collect();
        hits.sort_by(|a, b| (a.timestamp, &a.trace_id).cmp(&(b.timestamp, &b.trace_id)));
        if let Some(after) = &filter.after {
            hits.retain(|r| {
                (crate::clock::format_instant(r.timestamp), r.trace_id.as_str())
                    > (after.timestamp.clone(), after.trace_id.as_str())
            });
        }
        let limit = filter.limit.unwrap_or(usize::MAX);
        let next_cursor = (hits.len() > limit).then(|| {
            let last = hits[limit - 1];
            TraceCursor {
                timestamp: crate::clock::format_instant(last.timestamp),
                trace_id: last.trace_id.clone(),
            }
        });
        TracePage {
            records: hits.into_iter().take(limit).map(|r| (**r).clone()).collect(),
            next_cursor,
        }
    }

    /// Raw stored lines, exactly as persisted.
    pub fn export_lines(&self) -> Result<Vec<String>, AuditError> {
        Ok(self.state.read().expect("audit lock").storage.read_lines()?)
    }

    /// Recomputes the chain over stored lines in `range` (all lines when `None`).
    pub fn verify_chain(&self, range: Option<Range<usize>>) -> Result<VerificationReport, AuditError> {
        let state = self.state.read().expect("audit lock");
        let lines = state.storage.read_lines()?;
        let mut report = verify_lines(&lines, range.clone());
        if report.ok && range.is_none() && lines.len() < state.records.len() {
            report.ok = false;
            report.first_mismatch = Some(ChainMismatch {
                position: lines.len(),
                seq: None,
                reason: format!(
                    "storage holds {} records but {} were appended",
                    lines.len(),
                    state.records.len()
                ),
            });
        }
        Ok(report)
    }

    pub fn path(&self) -> Option<PathBuf> {
        match &self.state.read().expect("audit lock").storage {
            Storage::File { path, .. } => Some(path.clone()),
            Storage::Memory(_) => None,
        }
    }

    /// Makes every later append fail with a storage error, for failure-path tests.
    #[doc(hidden)]
    pub fn inject_append_failure(&self, fail: bool) {
        self.fail_appends.store(fail, Ordering::SeqCst);
    }

    /// Direct access to in-memory storage, for corruption harnesses. No-op for file storage.
    #[doc(hidden)]
    pub fn tamper_in_memory(&self, f: impl FnOnce(&mut Vec<String>)) {
        if let Storage::Memory(lines) = &mut self.state.write().expect("audit lock").storage {
            f(lines);
        }
    }
}

/// Chain verification over raw lines. Exposed for offline tools (`traces verify`).
pub fn verify_lines(lines: &[String], range: Option<Range<usize>>) -> VerificationReport {
    let range = range.unwrap_or(0..lines.len());
    let end = range.end.min(lines.len());
    let start = range.start.min(end);
    let mismatch = |position: usize, seq: Option<u64>, reason: String| VerificationReport {
        ok: false,
        checked: position - start,
        first_mismatch: Some(ChainMismatch {
            position,
            seq,
            reason,
        }),
    };
    let (mut prev_hash, mut expected_seq) = if start == 0 {
        (GENESIS_HASH.to_string(), 0u64)
    } else {
        match serde_json::from_str::<TraceRecord>(&lines[start - 1]) {
            Ok(r) => (r.record_hash, r.seq + 1),
            Err(e) => return mismatch(start - 1, None, format!("unparseable record: {e}")),
        }
    };
    for (position, line) in lines.iter().enumerate().take(end).skip(start) {
        let record: TraceRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return mismatch(position, None, format!("unparseable record: {e}")),
        };
        if record.seq != expected_seq {
            return mismatch(
                position,
                Some(record.seq),
                format!("sequence break: expected seq {expected_seq}"),
            );
        }
        if record.prev_hash != prev_hash {
            return mismatch(position, Some(record.seq), "prev_hash does not match predecessor".into());
        }
        if record.compute_hash() != record.record_hash {
            return mismatch(position, Some(record.seq), "record_hash does not match contents".into());
        }
        // Parsing is lenient (e.g. RFC 3339 accepts a lowercase `t`), so a line that decodes to
        // the same record but is not byte-identical to its canonical form was still altered.
        if record.to_canonical_line() != *line {
            return mismatch(position, Some(record.seq), "record is not in canonical form".into());
        }
        prev_hash = record.record_hash;
        expected_seq += 1;
    }
    VerificationReport {
        ok: true,
        checked: end - start,
        first_mismatch: None,
    }
}
