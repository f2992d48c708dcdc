//! STRIPS-subset PDDL: types, parsing, grounding and execution.
//!
//! Every value here is immutable once built. States are closed-world sets of
//! ground atoms; applying an action removes its delete list and then adds its
//! add list, so an atom that appears in both ends up true.

mod parse;
mod render;
pub mod sexpr;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_domain, parse_problem};
use sexpr::Pos;

/// Errors raised while reading PDDL sources.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PddlError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("undeclared predicate `{name}` at {line}:{col}")]
    UndeclaredPredicate { name: String, line: usize, col: usize },
    #[error("predicate `{name}` expects {expected} argument(s), found {found} at {line}:{col}")]
    ArityMismatch { name: String, expected: usize, found: usize, line: usize, col: usize },
    #[error("unsupported PDDL feature `{feature}` at {line}:{col}")]
    Unsupported { feature: String, line: usize, col: usize },
    #[error("variable `{var}` is not a parameter of action `{action}`")]
    UnboundVariable { action: String, var: String },
    #[error("duplicate {what} `{name}`")]
    Duplicate { what: &'static str, name: String },
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("problem is for domain `{found}`, expected `{expected}`")]
    DomainMismatch { expected: String, found: String },
}

impl PddlError {
    pub(crate) fn syntax(pos: Pos, message: impl Into<String>) -> Self {
        PddlError::Syntax { line: pos.line, col: pos.col, message: message.into() }
    }

    pub(crate) fn unsupported(pos: Pos, feature: impl Into<String>) -> Self {
        PddlError::Unsupported { feature: feature.into(), line: pos.line, col: pos.col }
    }
}

/// Errors raised when instantiating an action schema.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroundingError {
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action `{action}` takes {expected} argument(s), got {found}")]
    WrongArgCount { action: String, expected: usize, found: usize },
    #[error("parameter `{param}` of `{action}` is unbound")]
    PartialBinding { action: String, param: String },
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("object `{object}` bound to more than one parameter of `{action}`")]
    RepeatedObject { action: String, object: String },
}

/// An action's preconditions did not hold.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("action {action} not applicable; missing {}", fmt_atoms(.missing))]
pub struct NotApplicable {
    pub action: String,
    pub missing: BTreeSet<Atom>,
}

/// First failing step of a plan execution. `step` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("step {step} ({action}) not applicable; missing {}", fmt_atoms(.missing))]
pub struct StepFailure {
    pub step: usize,
    pub action: String,
    pub missing: BTreeSet<Atom>,
}

pub(crate) fn fmt_atoms<'a>(atoms: impl IntoIterator<Item = &'a Atom>) -> String {
    atoms.into_iter().map(Atom::to_string).collect::<Vec<_>>().join(" ")
}

/// A predicate applied to arguments. Arguments starting with `?` are variables.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl Atom {
    pub fn new<S: Into<String>>(predicate: impl Into<String>, args: impl IntoIterator<Item = S>) -> Self {
        Atom { predicate: predicate.into(), args: args.into_iter().map(Into::into).collect() }
    }

    pub fn is_ground(&self) -> bool {
        !self.args.iter().any(|a| is_variable(a))
    }

    /// Substitutes variables through `binding`; unbound variables are kept.
    pub fn substitute(&self, binding: &BTreeMap<String, String>) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self
                .args
                .iter()
                .map(|a| binding.get(a).cloned().unwrap_or_else(|| a.clone()))
                .collect(),
        }
    }
}

pub fn is_variable(name: &str) -> bool {
    name.starts_with('?')
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

impl FromStr for Atom {
    type Err = PddlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let sexp = sexpr::parse_one(s)?;
        let items = sexp
            .as_list()
            .ok_or_else(|| PddlError::syntax(sexp.pos(), "expected a parenthesised atom"))?;
        let mut symbols = Vec::with_capacity(items.len());
        for item in items {
            symbols.push(
                item.as_symbol()
                    .ok_or_else(|| PddlError::syntax(item.pos(), "nested list inside atom"))?
                    .to_string(),
            );
        }
        if symbols.is_empty() {
            return Err(PddlError::syntax(sexp.pos(), "empty atom"));
        }
        let predicate = symbols.remove(0);
        Ok(Atom { predicate, args: symbols })
    }
}

impl Serialize for Atom {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Atom {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub params: Vec<String>,
}

impl PredicateDecl {
    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

/// A lifted operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<String>,
    pub precond: BTreeSet<Atom>,
    pub add: BTreeSet<Atom>,
    pub del: BTreeSet<Atom>,
    pub cost: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Domain {
    pub name: String,
    pub requirements: Vec<String>,
    pub predicates: Vec<PredicateDecl>,
    pub schemas: Vec<ActionSchema>,
}

impl Domain {
    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn schema(&self, name: &str) -> Option<&ActionSchema> {
        self.schemas.iter().find(|s| s.name == name)
    }

    pub fn has_costs(&self) -> bool {
        self.requirements.iter().any(|r| r == ":action-costs")
    }

    /// Grounds the named schema with positional arguments.
    pub fn ground(
        &self,
        action: &str,
        args: &[String],
        objects: &BTreeSet<String>,
    ) -> Result<GroundAction, GroundingError> {
        let schema = self
            .schema(action)
            .ok_or_else(|| GroundingError::UnknownAction(action.to_string()))?;
        if schema.params.len() != args.len() {
            return Err(GroundingError::WrongArgCount {
                action: action.to_string(),
                expected: schema.params.len(),
                found: args.len(),
            });
        }
        let binding = schema.params.iter().cloned().zip(args.iter().cloned()).collect();
        ground_action(schema, &binding, objects)
    }

    /// Every legal grounding over `objects`, sorted by action name then arguments.
    pub fn ground_all(&self, objects: &BTreeSet<String>) -> Vec<GroundAction> {
        let objs: Vec<&String> = objects.iter().collect();
        let mut out = Vec::new();
        for schema in &self.schemas {
            let mut args = Vec::with_capacity(schema.params.len());
            let mut used = vec![false; objs.len()];
            permutations(&objs, schema.params.len(), &mut args, &mut used, &mut |args| {
                let binding = schema.params.iter().cloned().zip(args.iter().cloned()).collect();
                if let Ok(g) = ground_action(schema, &binding, objects) {
                    out.push(g);
                }
            });
        }
        out.sort_by(|a, b| (&a.name, &a.args).cmp(&(&b.name, &b.args)));
        out
    }

    /// Resolves a plan written one `(action arg ...)` per line, VAL style.
    pub fn parse_plan(&self, text: &str, objects: &BTreeSet<String>) -> Result<Plan, PlanFileError> {
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(';').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            // Tolerate "0: (a x) [1]" timestamps and durations emitted by some planners.
            let line = match (line.find('('), line.rfind(')')) {
                (Some(start), Some(end)) if start < end => &line[start..=end],
                _ => line,
            };
            let call: Atom = line
                .parse()
                .map_err(|e| PlanFileError::Syntax { line: i + 1, source: e })?;
            let g = self
                .ground(&call.predicate, &call.args, objects)
                .map_err(|e| PlanFileError::Grounding { line: i + 1, source: e })?;
            steps.push(g);
        }
        Ok(Plan::new(steps))
    }
}

#[derive(Debug, Error)]
pub enum PlanFileError {
    #[error("plan line {line}: {source}")]
    Syntax { line: usize, source: PddlError },
    #[error("plan line {line}: {source}")]
    Grounding { line: usize, source: GroundingError },
}

fn permutations<'a>(
    objs: &[&'a String],
    k: usize,
    acc: &mut Vec<String>,
    used: &mut [bool],
    emit: &mut dyn FnMut(&[String]),
) {
    if acc.len() == k {
        emit(acc);
        return;
    }
    for i in 0..objs.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        acc.push(objs[i].clone());
        permutations(objs, k, acc, used, emit);
        acc.pop();
        used[i] = false;
    }
}

/// Instantiates `schema` under `binding`.
///
/// The binding must cover every parameter with a known object, and distinct
/// parameters must receive distinct objects (no block stacked on itself).
pub fn ground_action(
    schema: &ActionSchema,
    binding: &BTreeMap<String, String>,
    objects: &BTreeSet<String>,
) -> Result<GroundAction, GroundingError> {
    let mut args = Vec::with_capacity(schema.params.len());
    let mut seen = BTreeSet::new();
    for p in &schema.params {
        let obj = binding.get(p).ok_or_else(|| GroundingError::PartialBinding {
            action: schema.name.clone(),
            param: p.clone(),
        })?;
        if !objects.contains(obj) {
            return Err(GroundingError::UnknownObject(obj.clone()));
        }
        if !seen.insert(obj.clone()) {
            return Err(GroundingError::RepeatedObject {
                action: schema.name.clone(),
                object: obj.clone(),
            });
        }
        args.push(obj.clone());
    }
    let sub = |set: &BTreeSet<Atom>| set.iter().map(|a| a.substitute(binding)).collect::<BTreeSet<_>>();
    Ok(GroundAction {
        name: schema.name.clone(),
        args,
        precond: sub(&schema.precond),
        add: sub(&schema.add),
        del: sub(&schema.del),
        cost: schema.cost,
    })
}

/// A schema instantiated with concrete objects.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroundAction {
    pub name: String,
    pub args: Vec<String>,
    pub precond: BTreeSet<Atom>,
    pub add: BTreeSet<Atom>,
    pub del: BTreeSet<Atom>,
    pub cost: u32,
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.name)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

/// A closed-world set of ground atoms.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(BTreeSet<Atom>);

impl State {
    pub fn new(atoms: impl IntoIterator<Item = Atom>) -> Self {
        State(atoms.into_iter().collect())
    }

    pub fn atoms(&self) -> &BTreeSet<Atom> {
        &self.0
    }

    pub fn into_atoms(self) -> BTreeSet<Atom> {
        self.0
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.0.contains(atom)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn missing<'a>(&self, atoms: impl IntoIterator<Item = &'a Atom>) -> BTreeSet<Atom> {
        atoms.into_iter().filter(|a| !self.0.contains(*a)).cloned().collect()
    }

    pub fn applicable(&self, action: &GroundAction) -> bool {
        action.precond.iter().all(|a| self.0.contains(a))
    }

    /// `(self \ del) ∪ add`, or the missing preconditions.
    pub fn apply(&self, action: &GroundAction) -> Result<State, NotApplicable> {
        let missing = self.missing(&action.precond);
        if !missing.is_empty() {
            return Err(NotApplicable { action: action.to_string(), missing });
        }
        let mut next = self.0.clone();
        for d in &action.del {
            next.remove(d);
        }
        next.extend(action.add.iter().cloned());
        Ok(State(next))
    }

    /// Left fold of [`State::apply`] over the plan.
    pub fn execute(&self, plan: &Plan) -> Result<State, StepFailure> {
        plan.steps().iter().enumerate().try_fold(self.clone(), |s, (i, a)| {
            s.apply(a).map_err(|e| StepFailure { step: i + 1, action: e.action, missing: e.missing })
        })
    }

    pub fn satisfies<'a>(&self, goal: impl IntoIterator<Item = &'a Atom>) -> bool {
        goal.into_iter().all(|a| self.0.contains(a))
    }
}

impl FromIterator<Atom> for State {
    fn from_iter<T: IntoIterator<Item = Atom>>(iter: T) -> Self {
        State(iter.into_iter().collect())
    }
}

/// `goal ⊆ state`.
pub fn goal_satisfied(state: &State, goal: &[Atom]) -> bool {
    state.satisfies(goal)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Problem {
    pub name: String,
    pub domain_name: String,
    pub objects: BTreeSet<String>,
    pub init: State,
    /// Goal atoms in presentation order; judged as a set.
    pub goal: Vec<Atom>,
    /// Whether the source requested `(:metric minimize (total-cost))`.
    pub metric: bool,
}

impl Problem {
    pub fn with_goal(&self, goal: Vec<Atom>) -> Problem {
        Problem { goal, ..self.clone() }
    }

    pub fn with_init(&self, init: State) -> Problem {
        Problem { init, ..self.clone() }
    }

    pub fn goal_set(&self) -> BTreeSet<Atom> {
        self.goal.iter().cloned().collect()
    }
}

/// An ordered sequence of ground actions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Plan {
    steps: Vec<GroundAction>,
}

impl Plan {
    pub fn new(steps: Vec<GroundAction>) -> Self {
        Plan { steps }
    }

    pub fn empty() -> Self {
        Plan::default()
    }

    pub fn steps(&self) -> &[GroundAction] {
        &self.steps
    }

    pub fn into_steps(self) -> Vec<GroundAction> {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_cost(&self) -> u64 {
        self.steps.iter().map(|s| u64::from(s.cost)).sum()
    }

    pub fn prefix(&self, len: usize) -> Plan {
        Plan { steps: self.steps[..len.min(self.steps.len())].to_vec() }
    }

    pub fn concat(&self, other: &Plan) -> Plan {
        let mut steps = self.steps.clone();
        steps.extend(other.steps.iter().cloned());
        Plan { steps }
    }

    /// Steps as `(name arg ...)` strings.
    pub fn to_lines(&self) -> Vec<String> {
        self.steps.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}
