//! Mock-model acceptance sweep.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::{run_suite, EvalTable, HarnessError, KindCounts, RecordLog};
use crate::curriculum::{Curriculum, CurriculumConfig, CurriculumError, Status, TaskKind};
use crate::gateway::{EndpointKind, Gateway, GatewayError, ModelEndpoint};
use crate::translator::TemplateSet;

#[derive(Debug, thiserror::Error)]
pub enum SelftestError {
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("scratch directory: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestCheck {
    pub model: String,
    pub kind: TaskKind,
    pub expected: Status,
    pub counts: KindCounts,
    pub passed: bool,
}

impl SelftestCheck {
    pub fn line(&self) -> String {
        let hit = match self.expected {
            Status::Correct => self.counts.correct,
            Status::Incorrect => self.counts.incorrect,
            Status::Ignored => self.counts.ignored,
        };
        let pct = super::format_cell(hit, self.counts.total());
        let label = match self.expected {
            Status::Correct => "correct",
            Status::Incorrect => "incorrect",
            Status::Ignored => "ignored",
        };
        format!(
            "{} {:<6} {:<22} {label}={pct}",
            if self.passed { "PASS" } else { "FAIL" },
            self.model,
            self.kind.slug(),
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestReport {
    pub count: usize,
    pub seed: u64,
    pub checks: Vec<SelftestCheck>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Which (model, task) pairs must be 100% of the expected status.
pub fn expectations() -> Vec<(EndpointKind, TaskKind, Status)> {
    let mut out = Vec::new();
    for k in TaskKind::ALL {
        out.push((EndpointKind::MockOracle, k, Status::Correct));
    }
    for k in [TaskKind::GoalShuffle, TaskKind::GoalFullToPartial, TaskKind::GoalPartialToFull] {
        out.push((EndpointKind::MockEcho, k, Status::Correct));
    }
    out.push((EndpointKind::MockPrefix, TaskKind::PlanReuse, Status::Correct));
    for k in TaskKind::ALL {
        out.push((EndpointKind::MockSilent, k, Status::Ignored));
    }
    out
}

fn model_name(kind: EndpointKind) -> &'static str {
    match kind {
        EndpointKind::MockOracle => "oracle",
        EndpointKind::MockEcho => "echo",
        EndpointKind::MockPrefix => "prefix",
        EndpointKind::MockSilent => "silent",
        EndpointKind::Remote => "remote",
    }
}

/// Runs `count` instances per task through each mock model and checks the
/// expectation table.
pub fn run_selftest(count: usize, seed: u64, workers: usize) -> Result<SelftestReport, SelftestError> {
    let start = Instant::now();
    let templates = Arc::new(TemplateSet::blocksworld());
    let instances = Curriculum::new(&templates, CurriculumConfig::default())?.generate_suite(&TaskKind::ALL, count, seed)?;
    let scratch = tempfile::tempdir()?;
    let expect = expectations();

    let mut checks = Vec::with_capacity(expect.len());
    let mut models: Vec<EndpointKind> = expect.iter().map(|e| e.0).collect();
    models.dedup();
    for model in models {
        let kinds: Vec<TaskKind> = expect.iter().filter(|e| e.0 == model).map(|e| e.1).collect();
        let subset: Vec<_> = instances.iter().filter(|i| kinds.contains(&i.kind)).cloned().collect();
        let gateway = Gateway::new(ModelEndpoint::mock(model), templates.clone())?;
        let log = RecordLog::new(scratch.path().join(format!("{}.jsonl", model_name(model))));
        let table: EvalTable = run_suite(&subset, &gateway, &templates, &log, workers)?.table;
        for &(_, kind, expected) in expect.iter().filter(|e| e.0 == model) {
            let counts = table.row(kind);
            let hit = match expected {
                Status::Correct => counts.correct,
                Status::Incorrect => counts.incorrect,
                Status::Ignored => counts.ignored,
            };
            let passed = counts.failed == 0 && counts.total() == count as u64 && hit == count as u64;
            checks.push(SelftestCheck { model: model_name(model).to_string(), kind, expected, counts, passed });
        }
    }
    Ok(SelftestReport { count, seed, checks, elapsed: start.elapsed() })
}
