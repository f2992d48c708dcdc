//! Step-by-step plan checking with diagnostic verdicts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::pddl::{Atom, Domain, Plan, Problem, State};
use crate::planner::{Planner, SearchError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictKind {
    Valid,
    /// `step` is 1-based.
    PreconditionFailure { step: usize, action: String, missing: BTreeSet<Atom> },
    GoalUnsatisfied { missing: BTreeSet<Atom> },
    NotOptimal { plan_cost: u64, optimal_cost: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub kind: VerdictKind,
    /// States visited: the initial state, then one per executed step.
    pub trace: Vec<State>,
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        self.kind == VerdictKind::Valid
    }

    pub fn final_state(&self) -> &State {
        self.trace.last().expect("trace always holds the initial state")
    }
}

/// Executes `plan` from the problem's initial state and judges the final state.
///
/// Reaching the goal midway does not count; only the state after the last
/// step is compared against the goal.
pub fn validate(problem: &Problem, plan: &Plan) -> Verdict {
    let mut trace = vec![problem.init.clone()];
    for (i, action) in plan.steps().iter().enumerate() {
        let current = trace.last().expect("non-empty");
        match current.apply(action) {
            Ok(next) => trace.push(next),
            Err(e) => {
                return Verdict {
                    kind: VerdictKind::PreconditionFailure { step: i + 1, action: e.action, missing: e.missing },
                    trace,
                }
            }
        }
    }
    let missing = trace.last().expect("non-empty").missing(&problem.goal);
    let kind = if missing.is_empty() { VerdictKind::Valid } else { VerdictKind::GoalUnsatisfied { missing } };
    Verdict { kind, trace }
}

/// Like [`validate`], additionally requiring `plan` to cost exactly `optimal_cost`.
pub fn validate_against_cost(problem: &Problem, plan: &Plan, optimal_cost: u64) -> Verdict {
    let mut verdict = validate(problem, plan);
    if verdict.is_valid() && plan.total_cost() != optimal_cost {
        verdict.kind = VerdictKind::NotOptimal { plan_cost: plan.total_cost(), optimal_cost };
    }
    verdict
}

/// Like [`validate`], computing the optimum with `planner`. A valid plan
/// proves solvability, so the search only fails on resource limits.
pub fn validate_optimal(
    planner: &Planner,
    domain: &Domain,
    problem: &Problem,
    plan: &Plan,
) -> Result<Verdict, SearchError> {
    let verdict = validate(problem, plan);
    if !verdict.is_valid() {
        return Ok(verdict);
    }
    let optimum = planner
        .optimal_cost(domain, problem)?
        .expect("a valid plan exists, so the problem is solvable");
    Ok(validate_against_cost(problem, plan, optimum))
}
