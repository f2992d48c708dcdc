//! Two-phase human plan-writing sessions: free text first, then the same plan
//! mapped onto grounded actions and judged automatically.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pddl::{Domain, Plan, Problem};
use crate::planner::{Planner, SearchError};
use crate::translator::{TemplateError, TemplateSet};
use crate::validator::{validate_against_cost, VerdictKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    ExampleView,
    ExamplePhase1,
    ExamplePhase2,
    ActualPhase1,
    ActualPhase2,
    Done,
}

impl Phase {
    fn next(self) -> Phase {
        match self {
            Phase::ExampleView => Phase::ExamplePhase1,
            Phase::ExamplePhase1 => Phase::ExamplePhase2,
            Phase::ExamplePhase2 => Phase::ActualPhase1,
            Phase::ActualPhase1 => Phase::ActualPhase2,
            Phase::ActualPhase2 | Phase::Done => Phase::Done,
        }
    }

    fn on_example(self) -> bool {
        self <= Phase::ExamplePhase2
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session is in phase {actual:?}; this call needs {expected}")]
    Phase { expected: String, actual: Phase },
    #[error("`{0}` is not one of the listed actions")]
    MalformedAction(String),
    #[error("the study has no instances")]
    NoInstances,
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("instance `{0}` has no plan")]
    Unsolvable(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub valid: bool,
    pub optimal: bool,
    pub plan_cost: u64,
    pub optimal_cost: u64,
    pub verdict: VerdictKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudySession {
    pub id: String,
    pub participant: String,
    pub phase: Phase,
    pub example_id: String,
    pub instance_id: String,
    #[serde(default)]
    pub example_free_text: Option<String>,
    #[serde(default)]
    pub example_plan: Vec<String>,
    #[serde(default)]
    pub example_judgement: Option<Judgement>,
    #[serde(default)]
    pub free_text_plan: Option<String>,
    #[serde(default)]
    pub translated_plan: Vec<String>,
    #[serde(default)]
    pub judgement: Option<Judgement>,
    /// True iff the actual plan is valid.
    pub bonus: bool,
}

/// A problem shown to participants, with everything needed to judge it.
#[derive(Clone, Debug)]
pub struct StudyInstance {
    pub id: String,
    pub domain: Domain,
    pub problem: Problem,
    pub gold: Plan,
    pub description: String,
}

impl StudyInstance {
    pub fn new(id: &str, domain: &Domain, problem: Problem, templates: &TemplateSet, planner: &Planner) -> Result<Self, StudyError> {
        let gold = planner
            .solve(domain, &problem)?
            .plan()
            .cloned()
            .ok_or_else(|| StudyError::Unsolvable(id.to_string()))?;
        let description = templates.describe_problem(&problem, &problem.init)?;
        Ok(StudyInstance { id: id.to_string(), domain: domain.clone(), problem, gold, description })
    }

    fn judge(&self, plan: &Plan) -> Judgement {
        let optimal_cost = self.gold.total_cost();
        let verdict = validate_against_cost(&self.problem, plan, optimal_cost).kind;
        let valid = matches!(verdict, VerdictKind::Valid | VerdictKind::NotOptimal { .. });
        Judgement { valid, optimal: verdict == VerdictKind::Valid, plan_cost: plan.total_cost(), optimal_cost, verdict }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceView {
    pub instance_id: String,
    pub role: String,
    pub phase: Phase,
    pub domain_description: String,
    pub problem_description: String,
    /// Only shown for the example instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_solution: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOption {
    /// Grounded action id, e.g. `(pickup red)`.
    pub id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sessions: usize,
    pub completed: usize,
    pub valid: usize,
    pub optimal: usize,
    /// valid / completed.
    pub valid_fraction: f64,
    /// optimal / valid.
    pub optimal_given_valid_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub session: String,
    pub participant: String,
    pub instance_id: String,
    pub role: String,
    pub text: String,
}

struct Assigner {
    rng: ChaCha8Rng,
    queue: Vec<usize>,
    n: usize,
}

impl Assigner {
    /// Uniform without replacement; reshuffles once every instance is used.
    fn next(&mut self) -> usize {
        if self.queue.is_empty() {
            self.queue = (0..self.n).collect();
            self.queue.shuffle(&mut self.rng);
        }
        self.queue.pop().expect("n > 0")
    }
}

/// Session state for the study service. Each session has its own lock.
pub struct StudyStore {
    templates: Arc<TemplateSet>,
    preamble: String,
    example: StudyInstance,
    instances: Vec<StudyInstance>,
    sessions: Mutex<HashMap<String, Arc<Mutex<StudySession>>>>,
    assigner: Mutex<Assigner>,
    ids: Mutex<ChaCha8Rng>,
}

impl StudyStore {
    pub fn new(templates: Arc<TemplateSet>, example: StudyInstance, instances: Vec<StudyInstance>, seed: u64) -> Result<Self, StudyError> {
        if instances.is_empty() {
            return Err(StudyError::NoInstances);
        }
        let preamble = templates.preamble(&example.domain);
        let n = instances.len();
        Ok(StudyStore {
            templates,
            preamble,
            example,
            instances,
            sessions: Mutex::new(HashMap::new()),
            assigner: Mutex::new(Assigner { rng: ChaCha8Rng::seed_from_u64(seed), queue: Vec::new(), n }),
            ids: Mutex::new(ChaCha8Rng::seed_from_u64(seed ^ 0x5e55_1011)),
        })
    }

    pub fn instances(&self) -> &[StudyInstance] {
        &self.instances
    }

    pub fn example(&self) -> &StudyInstance {
        &self.example
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<StudySession>>, StudyError> {
        self.sessions.lock().unwrap().get(id).cloned().ok_or_else(|| StudyError::UnknownSession(id.to_string()))
    }

    fn instance_of(&self, s: &StudySession) -> &StudyInstance {
        if s.phase.on_example() {
            &self.example
        } else {
            self.instances.iter().find(|i| i.id == s.instance_id).expect("assigned from this store")
        }
    }

    pub fn create_session(&self, participant: &str) -> StudySession {
        let idx = self.assigner.lock().unwrap().next();
        let id = format!("{:016x}", self.ids.lock().unwrap().gen::<u64>());
        let s = StudySession {
            id: id.clone(),
            participant: participant.to_string(),
            phase: Phase::ExampleView,
            example_id: self.example.id.clone(),
            instance_id: self.instances[idx].id.clone(),
            example_free_text: None,
            example_plan: Vec::new(),
            example_judgement: None,
            free_text_plan: None,
            translated_plan: Vec::new(),
            judgement: None,
            bonus: false,
        };
        self.sessions.lock().unwrap().insert(id, Arc::new(Mutex::new(s.clone())));
        s
    }

    pub fn get_session(&self, id: &str) -> Result<StudySession, StudyError> {
        Ok(self.session(id)?.lock().unwrap().clone())
    }

    /// Leaves the example view and opens phase 1 of the example.
    pub fn begin(&self, id: &str) -> Result<StudySession, StudyError> {
        let s = self.session(id)?;
        let mut s = s.lock().unwrap();
        expect(&s, &[Phase::ExampleView], "example-view")?;
        s.phase = s.phase.next();
        Ok(s.clone())
    }

    pub fn instance_view(&self, id: &str) -> Result<InstanceView, StudyError> {
        let s = self.get_session(id)?;
        if s.phase == Phase::Done {
            return Err(StudyError::Phase { expected: "an unfinished session".into(), actual: s.phase });
        }
        let inst = self.instance_of(&s);
        let example = s.phase.on_example();
        Ok(InstanceView {
            instance_id: inst.id.clone(),
            role: if example { "example" } else { "actual" }.into(),
            phase: s.phase,
            domain_description: self.preamble.clone(),
            problem_description: inst.description.clone(),
            example_solution: if example { Some(self.templates.render_plan(&inst.gold)?) } else { None },
        })
    }

    pub fn list_actions(&self, id: &str) -> Result<Vec<ActionOption>, StudyError> {
        let s = self.get_session(id)?;
        let inst = self.instance_of(&s);
        inst.domain
            .ground_all(&inst.problem.objects)
            .into_iter()
            .map(|a| Ok(ActionOption { id: a.to_string(), text: self.templates.render_action(&a.name, &a.args)? }))
            .collect()
    }

    /// Stores the free-text plan verbatim for manual review.
    pub fn submit_phase1(&self, id: &str, text: &str) -> Result<StudySession, StudyError> {
        let s = self.session(id)?;
        let mut s = s.lock().unwrap();
        expect(&s, &[Phase::ExamplePhase1, Phase::ActualPhase1], "a phase-1 step")?;
        if s.phase == Phase::ExamplePhase1 {
            s.example_free_text = Some(text.to_string());
        } else {
            s.free_text_plan = Some(text.to_string());
        }
        s.phase = s.phase.next();
        Ok(s.clone())
    }

    /// Judges the plan given as grounded action ids from [`Self::list_actions`].
    pub fn submit_phase2(&self, id: &str, actions: &[String]) -> Result<Judgement, StudyError> {
        let s = self.session(id)?;
        let mut s = s.lock().unwrap();
        expect(&s, &[Phase::ExamplePhase2, Phase::ActualPhase2], "a phase-2 step")?;
        let inst = self.instance_of(&s);
        let plan = resolve(inst, actions)?;
        let j = inst.judge(&plan);
        if s.phase == Phase::ExamplePhase2 {
            s.example_plan = actions.to_vec();
            s.example_judgement = Some(j.clone());
        } else {
            s.translated_plan = actions.to_vec();
            s.bonus = j.valid;
            s.judgement = Some(j.clone());
        }
        s.phase = s.phase.next();
        Ok(j)
    }

    pub fn result(&self, id: &str) -> Result<StudySession, StudyError> {
        let s = self.get_session(id)?;
        if s.phase != Phase::Done {
            return Err(StudyError::Phase { expected: "done".into(), actual: s.phase });
        }
        Ok(s)
    }

    pub fn aggregate(&self) -> Aggregate {
        let sessions: Vec<StudySession> = self.sessions.lock().unwrap().values().map(|s| s.lock().unwrap().clone()).collect();
        let judged: Vec<&Judgement> = sessions.iter().filter_map(|s| s.judgement.as_ref()).collect();
        let valid = judged.iter().filter(|j| j.valid).count();
        let optimal = judged.iter().filter(|j| j.valid && j.optimal).count();
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Aggregate {
            sessions: sessions.len(),
            completed: judged.len(),
            valid,
            optimal,
            valid_fraction: frac(valid, judged.len()),
            optimal_given_valid_fraction: frac(optimal, valid),
        }
    }

    /// Phase-1 free text of every session, for manual review.
    pub fn audit(&self) -> Vec<AuditEntry> {
        let mut out = Vec::new();
        for s in self.sessions.lock().unwrap().values() {
            let s = s.lock().unwrap();
            for (role, inst, text) in [("example", &s.example_id, &s.example_free_text), ("actual", &s.instance_id, &s.free_text_plan)] {
                if let Some(text) = text {
                    out.push(AuditEntry {
                        session: s.id.clone(),
                        participant: s.participant.clone(),
                        instance_id: inst.clone(),
                        role: role.into(),
                        text: text.clone(),
                    });
                }
            }
        }
        out.sort_by(|a, b| (&a.session, &a.role).cmp(&(&b.session, &b.role)));
        out
    }
}

fn expect(s: &StudySession, allowed: &[Phase], what: &str) -> Result<(), StudyError> {
    if allowed.contains(&s.phase) {
        Ok(())
    } else {
        Err(StudyError::Phase { expected: what.to_string(), actual: s.phase })
    }
}

fn resolve(inst: &StudyInstance, ids: &[String]) -> Result<Plan, StudyError> {
    let mut steps = Vec::with_capacity(ids.len());
    for id in ids {
        let call: crate::pddl::Atom = id.parse().map_err(|_| StudyError::MalformedAction(id.clone()))?;
        let g = inst
            .domain
            .ground(&call.predicate, &call.args, &inst.problem.objects)
            .map_err(|_| StudyError::MalformedAction(id.clone()))?;
        steps.push(g);
    }
    Ok(Plan::new(steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocksworld::{blocks_domain, make_problem, TowerLayout};

    fn layout(towers: &[&[&str]]) -> TowerLayout {
        TowerLayout::new(towers.iter().map(|t| t.iter().map(|s| s.to_string()).collect()).collect(), None)
    }

    fn store() -> StudyStore {
        let t = Arc::new(TemplateSet::blocksworld());
        let d = blocks_domain(None);
        let planner = Planner::default();
        let goal = layout(&[&["c", "b", "a"]]).support_atoms();
        let p = |name: &str| make_problem(name, &layout(&[&["a"], &["b"], &["c"]]), goal.clone(), false);
        let example = StudyInstance::new("example", &d, p("ex"), &t, &planner).unwrap();
        let actual = StudyInstance::new("actual-0", &d, p("q"), &t, &planner).unwrap();
        StudyStore::new(t, example, vec![actual], 1).unwrap()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    const GOLD: [&str; 4] = ["(pickup b)", "(stack b c)", "(pickup a)", "(stack a b)"];

    fn finish_example(st: &StudyStore, id: &str) {
        st.begin(id).unwrap();
        st.submit_phase1(id, "move b onto c then a onto b").unwrap();
        st.submit_phase2(id, &ids(&GOLD)).unwrap();
    }

    #[test]
    fn gold_plan_earns_everything() {
        let st = store();
        let s = st.create_session("p1");
        assert!(st.instance_view(&s.id).unwrap().example_solution.is_some());
        finish_example(&st, &s.id);
        let view = st.instance_view(&s.id).unwrap();
        assert_eq!(view.role, "actual");
        assert!(view.example_solution.is_none());
        st.submit_phase1(&s.id, "same as before").unwrap();
        let j = st.submit_phase2(&s.id, &ids(&GOLD)).unwrap();
        assert!(j.valid && j.optimal);
        let r = st.result(&s.id).unwrap();
        assert!(r.bonus);
        assert_eq!(r.phase, Phase::Done);
    }

    #[test]
    fn valid_detour_is_not_optimal_but_earns_bonus() {
        let st = store();
        let s = st.create_session("p2");
        finish_example(&st, &s.id);
        st.submit_phase1(&s.id, "...").unwrap();
        let plan = ids(&["(pickup a)", "(putdown a)", "(pickup b)", "(stack b c)", "(pickup a)", "(stack a b)"]);
        let j = st.submit_phase2(&s.id, &plan).unwrap();
        assert!(j.valid);
        assert!(!j.optimal);
        assert!(st.result(&s.id).unwrap().bonus);
    }

    #[test]
    fn invalid_plan_gets_no_bonus() {
        let st = store();
        let s = st.create_session("p3");
        finish_example(&st, &s.id);
        st.submit_phase1(&s.id, "...").unwrap();
        let j = st.submit_phase2(&s.id, &ids(&["(stack a b)"])).unwrap();
        assert!(!j.valid && !j.optimal);
        assert!(!st.result(&s.id).unwrap().bonus);
    }

    #[test]
    fn phases_are_enforced() {
        let st = store();
        let s = st.create_session("p4");
        assert!(matches!(st.submit_phase1(&s.id, "x"), Err(StudyError::Phase { .. })));
        st.begin(&s.id).unwrap();
        assert!(matches!(st.submit_phase2(&s.id, &ids(&GOLD)), Err(StudyError::Phase { .. })));
        assert!(matches!(st.begin(&s.id), Err(StudyError::Phase { .. })));
        assert!(matches!(st.result(&s.id), Err(StudyError::Phase { .. })));
        st.submit_phase1(&s.id, "x").unwrap();
        assert!(matches!(st.submit_phase2(&s.id, &ids(&["(fly a)"])), Err(StudyError::MalformedAction(_))));
        assert!(matches!(st.submit_phase2(&s.id, &ids(&["pickup"])), Err(StudyError::MalformedAction(_))));
        assert_eq!(st.get_session(&s.id).unwrap().phase, Phase::ExamplePhase2);
        assert!(matches!(st.get_session("nope"), Err(StudyError::UnknownSession(_))));
    }

    #[test]
    fn aggregate_fractions() {
        let st = store();
        for (i, plan) in [&GOLD[..], &GOLD[..], &["(stack a b)"][..]].iter().enumerate() {
            let s = st.create_session(&format!("p{i}"));
            finish_example(&st, &s.id);
            st.submit_phase1(&s.id, "text").unwrap();
            st.submit_phase2(&s.id, &ids(plan)).unwrap();
        }
        st.create_session("unfinished");
        let a = st.aggregate();
        assert_eq!((a.sessions, a.completed, a.valid, a.optimal), (4, 3, 2, 2));
        assert!((a.valid_fraction - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.optimal_given_valid_fraction, 1.0);
        assert_eq!(st.audit().len(), 6);
    }

    #[test]
    fn actions_listed_for_current_instance() {
        let st = store();
        let s = st.create_session("p");
        let acts = st.list_actions(&s.id).unwrap();
        assert_eq!(acts.len(), 3 + 3 + 6 + 6);
        assert!(acts.iter().any(|a| a.id == "(pickup a)" && a.text == "pick up the a block"));
    }
}
