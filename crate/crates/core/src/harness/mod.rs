//! Suite execution, result logs, report tables and the human-study service.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{check_response, CheckOutcome, Status, TaskKind, TestInstance};
use crate::gateway::Gateway;
use crate::translator::TemplateSet;

pub mod report;
pub mod selftest;
pub mod server;
pub mod study;

pub use report::{format_cell, Cell, Report, ReportRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Log { path: PathBuf, line: usize, message: String },
    #[error("instance {id}: {message}")]
    Check { id: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    /// Stable error tag, e.g. `auth`, `rate_limited`, `timeout`.
    pub kind: String,
    pub message: String,
}

/// One line of the result log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance_id: String,
    pub kind: TaskKind,
    pub endpoint: String,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default)]
    pub cached: bool,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<CheckOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    pub wall_ms: u64,
}

impl EvalRecord {
    pub fn status(&self) -> Option<Status> {
        self.outcome.as_ref().map(|o| o.status)
    }
}

/// Append-only JSON-lines log with a single writer.
#[derive(Clone, Debug)]
pub struct RecordLog {
    path: PathBuf,
}

impl RecordLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RecordLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// All complete records. A torn final line from an interrupted write is skipped.
    pub fn read(&self) -> Result<Vec<EvalRecord>, HarnessError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.path)(e)),
        };
        let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>().map_err(io_err(&self.path))?;
        let mut out = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => out.push(r),
                Err(_) if i + 1 == lines.len() => break,
                Err(e) => {
                    return Err(HarnessError::Log { path: self.path.clone(), line: i + 1, message: e.to_string() })
                }
            }
        }
        Ok(out)
    }

    fn open(&self) -> Result<LogWriter, HarnessError> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        // Drop a torn last line left by an interrupted write.
        if let Ok(bytes) = std::fs::read(&self.path) {
            if !bytes.is_empty() && !bytes.ends_with(b"\n") {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                let f = OpenOptions::new().write(true).open(&self.path).map_err(io_err(&self.path))?;
                f.set_len(keep as u64).map_err(io_err(&self.path))?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io_err(&self.path))?;
        Ok(LogWriter { file, path: self.path.clone() })
    }

    pub fn append(&self, record: &EvalRecord) -> Result<(), HarnessError> {
        self.open()?.write(record)
    }
}

struct LogWriter {
    file: File,
    path: PathBuf,
}

impl LogWriter {
    fn write(&mut self, record: &EvalRecord) -> Result<(), HarnessError> {
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub correct: u64,
    pub incorrect: u64,
    pub ignored: u64,
    /// Endpoint failures; not part of `total`.
    pub failed: u64,
}

impl KindCounts {
    pub fn total(&self) -> u64 {
        self.correct + self.incorrect + self.ignored
    }

    pub fn percentage(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * self.correct as f64 / t as f64,
        }
    }

    pub fn cell(&self) -> Cell {
        Cell { correct: self.correct, total: self.total() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTable {
    pub endpoint: String,
    pub rows: BTreeMap<TaskKind, KindCounts>,
    /// Instances whose latest record is an endpoint failure.
    pub failures: Vec<String>,
}

impl EvalTable {
    /// Aggregates the latest record per instance for `endpoint`.
    pub fn from_records(endpoint: &str, records: &[EvalRecord]) -> Self {
        let mut latest: BTreeMap<&str, &EvalRecord> = BTreeMap::new();
        for r in records.iter().filter(|r| r.endpoint == endpoint) {
            latest.insert(&r.instance_id, r);
        }
        let mut table = EvalTable { endpoint: endpoint.to_string(), ..Default::default() };
        for (id, r) in latest {
            let row = table.rows.entry(r.kind).or_default();
            match r.status() {
                Some(Status::Correct) => row.correct += 1,
                Some(Status::Incorrect) => row.incorrect += 1,
                Some(Status::Ignored) => row.ignored += 1,
                None => {
                    row.failed += 1;
                    table.failures.push(id.to_string());
                }
            }
        }
        table
    }

    pub fn row(&self, kind: TaskKind) -> KindCounts {
        self.rows.get(&kind).copied().unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub table: EvalTable,
    /// Instances evaluated in this invocation (the rest were already logged).
    pub evaluated: usize,
    pub skipped: usize,
}

/// Evaluates every instance not yet successfully logged for this endpoint,
/// fanning out over `workers` threads; the calling thread is the only log
/// writer.
pub fn run_suite(
    instances: &[TestInstance],
    gateway: &Gateway,
    templates: &TemplateSet,
    log: &RecordLog,
    workers: usize,
) -> Result<RunSummary, HarnessError> {
    let endpoint = gateway.endpoint().descriptor();
    let done: BTreeSet<String> = log
        .read()?
        .into_iter()
        .filter(|r| r.endpoint == endpoint && r.outcome.is_some())
        .map(|r| r.instance_id)
        .collect();
    let pending: Vec<&TestInstance> = instances.iter().filter(|i| !done.contains(&i.id)).collect();
    gateway.register(instances);

    let mut writer = log.open()?;
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Result<EvalRecord, HarnessError>>();
    let mut first_error = None;
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(pending.len().max(1)) {
            let tx = tx.clone();
            let (next, pending, endpoint) = (&next, &pending, &endpoint);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(inst) = pending.get(i) else { break };
                let rec = evaluate(inst, gateway, templates, endpoint);
                if tx.send(rec).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for rec in rx {
            let written = rec.and_then(|r| writer.write(&r));
            if let Err(e) = written {
                first_error.get_or_insert(e);
                next.store(usize::MAX / 2, Ordering::SeqCst);
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    let table = EvalTable::from_records(&endpoint, &log.read()?);
    Ok(RunSummary { table, evaluated: pending.len(), skipped: instances.len() - pending.len() })
}

fn evaluate(inst: &TestInstance, gateway: &Gateway, templates: &TemplateSet, endpoint: &str) -> Result<EvalRecord, HarnessError> {
    let start = Instant::now();
    let stop = vec![inst.end_tag.clone()];
    let mut rec = EvalRecord {
        instance_id: inst.id.clone(),
        kind: inst.kind,
        endpoint: endpoint.to_string(),
        prompt_hash: crate::gateway::sha256_hex(&inst.prompt),
        completion: None,
        cached: false,
        latency_ms: 0,
        outcome: None,
        failure: None,
        wall_ms: 0,
    };
    match gateway.complete(&inst.prompt, &stop) {
        Ok(c) => {
            let outcome = check_response(inst, &c.completion, templates)
                .map_err(|e| HarnessError::Check { id: inst.id.clone(), message: e.to_string() })?;
            rec.completion = Some(c.completion);
            rec.cached = c.cached;
            rec.latency_ms = c.latency_ms;
            rec.outcome = Some(outcome);
        }
        Err(e) => rec.failure = Some(Failure { kind: e.kind().to_string(), message: e.to_string() }),
    }
    rec.wall_ms = start.elapsed().as_millis() as u64;
    Ok(rec)
}
