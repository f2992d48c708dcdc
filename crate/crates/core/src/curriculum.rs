//! Test-case constructors and completion checkers.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocksworld::{
    blocks_domain_pddl, generate_problem, make_problem, BlocksConfig, CostProfile, GenerateError, LayoutSampler,
    TowerLayout, UniformPartition, DEFAULT_COLORS, DOMAIN_NAME,
};
use crate::pddl::{parse_domain, parse_problem, Atom, Domain, GroundAction, PddlError, Plan, Problem, State};
use crate::planner::{Planner, PlannerConfig, SearchError};
use crate::translator::{render_prompt, Shot, TemplateError, TemplateSet, Unparseable};
use crate::validator::{validate, validate_against_cost, VerdictKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PlanGeneration,
    OptimalPlanning,
    PlanExecutionReasoning,
    GoalShuffle,
    GoalFullToPartial,
    GoalPartialToFull,
    PlanReuse,
    Replanning,
    PlanGeneralization,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::PlanGeneration,
        TaskKind::OptimalPlanning,
        TaskKind::PlanExecutionReasoning,
        TaskKind::GoalShuffle,
        TaskKind::GoalFullToPartial,
        TaskKind::GoalPartialToFull,
        TaskKind::PlanReuse,
        TaskKind::Replanning,
        TaskKind::PlanGeneralization,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            TaskKind::PlanGeneration => "plan_generation",
            TaskKind::OptimalPlanning => "optimal_planning",
            TaskKind::PlanExecutionReasoning => "plan_execution_reasoning",
            TaskKind::GoalShuffle => "goal_shuffle",
            TaskKind::GoalFullToPartial => "goal_full_to_partial",
            TaskKind::GoalPartialToFull => "goal_partial_to_full",
            TaskKind::PlanReuse => "plan_reuse",
            TaskKind::Replanning => "replanning",
            TaskKind::PlanGeneralization => "plan_generalization",
        }
    }

    /// Row label used in reports.
    pub fn title(self) -> &'static str {
        match self {
            TaskKind::PlanGeneration => "Plan Generation",
            TaskKind::OptimalPlanning => "Optimal Planning",
            TaskKind::PlanExecutionReasoning => "Plan Execution Reasoning",
            TaskKind::GoalShuffle => "Goal Reformulation (Shuffling goal predicates)",
            TaskKind::GoalFullToPartial => "Goal Reformulation (Full -> Partial)",
            TaskKind::GoalPartialToFull => "Goal Reformulation (Partial -> Full)",
            TaskKind::PlanReuse => "Plan Reuse",
            TaskKind::Replanning => "Replanning",
            TaskKind::PlanGeneralization => "Plan Generalization",
        }
    }

    fn index(self) -> u64 {
        TaskKind::ALL.iter().position(|k| *k == self).unwrap() as u64
    }

    /// Whether completions are plans (as opposed to state descriptions).
    pub fn expects_plan(self) -> bool {
        self != TaskKind::PlanExecutionReasoning
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_lowercase().replace('-', "_");
        TaskKind::ALL
            .into_iter()
            .find(|k| k.slug() == norm)
            .ok_or_else(|| format!("unknown task kind `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("payload: {0}")]
    Payload(#[from] PddlError),
    #[error("problem `{0}` has no plan")]
    Unsolvable(String),
    #[error("no usable {kind} instance after {attempts} attempts")]
    Exhausted { kind: TaskKind, attempts: usize },
    #[error("{0}")]
    Precondition(String),
    #[error("outside the program's class: {0}")]
    OutOfClass(String),
}

/// The perturbation applied in a replanning instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplanEvent {
    pub prefix_len: usize,
    pub held: String,
    pub onto: String,
    pub state_before: State,
}

/// Ground truth needed to judge a completion without regenerating anything.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    /// Domain PDDL the completion is judged in.
    pub domain: String,
    /// Query problem PDDL; its init is the state the answer starts from.
    pub problem: String,
    /// Planner certificate: a valid plan for the query problem.
    pub gold_plan: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_cost: Option<u64>,
    /// Action sequence to reason about (execution task).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_state: Option<State>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_prefix: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<ReplanEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Payload {
    pub fn domain(&self) -> Result<Domain, PddlError> {
        parse_domain(&self.domain)
    }

    pub fn problem(&self, domain: &Domain) -> Result<Problem, PddlError> {
        parse_problem(&self.problem, domain)
    }

    fn lines_to_plan(&self, lines: &[String], domain: &Domain, problem: &Problem) -> Result<Plan, CurriculumError> {
        domain
            .parse_plan(&lines.join("\n"), &problem.objects)
            .map_err(|e| CurriculumError::Precondition(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestInstance {
    pub version: u32,
    pub id: String,
    pub kind: TaskKind,
    pub seed: u64,
    pub prompt: String,
    /// Terminator the completion must contain.
    pub end_tag: String,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub min_blocks: usize,
    pub max_blocks: usize,
    /// Worked examples per prompt for tasks whose example is not tied to the query.
    pub shots: usize,
    /// Longest action sequence in execution-reasoning questions.
    pub max_exec_steps: usize,
    pub cost_profile: CostProfile,
    pub color_pool: Vec<String>,
    pub planner: PlannerConfig,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            min_blocks: 3,
            max_blocks: 5,
            shots: 1,
            max_exec_steps: 4,
            cost_profile: CostProfile::default_costed(),
            color_pool: DEFAULT_COLORS.iter().map(|s| s.to_string()).collect(),
            planner: PlannerConfig::default(),
        }
    }
}

const MAX_ATTEMPTS: usize = 64;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds test instances with a fixed template set and configuration.
pub struct Curriculum<'a> {
    pub templates: &'a TemplateSet,
    pub config: CurriculumConfig,
    planner: Planner,
    domain: Domain,
    costed_domain: Domain,
}

struct Solved {
    problem: Problem,
    plan: Plan,
}

impl<'a> Curriculum<'a> {
    pub fn new(templates: &'a TemplateSet, config: CurriculumConfig) -> Result<Self, CurriculumError> {
        let domain = parse_domain(&blocks_domain_pddl(None))?;
        let costed_domain = parse_domain(&blocks_domain_pddl(Some(&config.cost_profile)))?;
        templates.check_domain(&domain)?;
        Ok(Curriculum { templates, planner: Planner::new(config.planner.clone()), config, domain, costed_domain })
    }

    pub fn domain(&self, costed: bool) -> &Domain {
        if costed {
            &self.costed_domain
        } else {
            &self.domain
        }
    }

    fn domain_text(&self, costed: bool) -> String {
        blocks_domain_pddl(costed.then_some(&self.config.cost_profile))
    }

    fn solve(&self, domain: &Domain, problem: &Problem) -> Result<Plan, CurriculumError> {
        let r = self.planner.solve(domain, problem)?;
        r.plan().cloned().ok_or_else(|| CurriculumError::Unsolvable(problem.name.clone()))
    }

    fn random_problem(&self, rng: &mut ChaCha8Rng, costed: bool) -> Result<Problem, CurriculumError> {
        let n = rng.gen_range(self.config.min_blocks..=self.config.max_blocks);
        let mut cfg = BlocksConfig::new(n, rng.gen());
        cfg.color_pool = self.config.color_pool.clone();
        if costed {
            cfg.cost_profile = Some(self.config.cost_profile.clone());
        }
        Ok(generate_problem(&cfg)?)
    }

    fn solved(&self, rng: &mut ChaCha8Rng, costed: bool) -> Result<Solved, CurriculumError> {
        let problem = self.random_problem(rng, costed)?;
        let plan = self.solve(self.domain(costed), &problem)?;
        Ok(Solved { problem, plan })
    }

    fn statement(&self, problem: &Problem, request: &str) -> Result<String, CurriculumError> {
        Ok(format!("{}\n{request}", self.templates.describe_problem(problem, &problem.init)?))
    }

    fn plan_shot(&self, problem: &Problem, plan: &Plan, request: &str) -> Result<Shot, CurriculumError> {
        Ok(Shot { statement: self.statement(problem, request)?, answer: self.templates.render_plan(plan)? })
    }

    fn action_lines(&self, steps: &[GroundAction]) -> Result<String, CurriculumError> {
        let lines = steps
            .iter()
            .map(|s| Ok(format!("{}.", self.templates.render_action(&s.name, &s.args)?)))
            .collect::<Result<Vec<_>, TemplateError>>()?;
        Ok(lines.join("\n"))
    }

    fn instance(
        &self,
        kind: TaskKind,
        seed: u64,
        id: String,
        prompt: String,
        payload: Payload,
    ) -> TestInstance {
        let end_tag = if kind.expects_plan() { self.templates.plan_end_tag() } else { self.templates.state_end_tag() };
        TestInstance { version: SCHEMA_VERSION, id, kind, seed, prompt, end_tag: end_tag.to_string(), payload }
    }

    fn plan_payload(&self, costed: bool, problem: &Problem, gold: &Plan) -> Payload {
        Payload {
            domain: self.domain_text(costed),
            problem: problem.to_pddl(),
            gold_plan: gold.to_lines(),
            optimal_cost: Some(gold.total_cost()),
            ..Payload::default()
        }
    }

    fn plan_header(&self) -> &str {
        &self.templates.file().plan_header
    }

    /// Few-shot plan generation: solved examples, then the query.
    pub fn make_plan_generation(&self, query: &Problem, examples: &[(Problem, Plan)]) -> Result<(String, Payload), CurriculumError> {
        let t = self.templates.file();
        let shots = examples
            .iter()
            .map(|(p, plan)| self.plan_shot(p, plan, &t.plan_request))
            .collect::<Result<Vec<_>, _>>()?;
        let gold = self.solve(&self.domain, query)?;
        let prompt = render_prompt(
            &self.templates.preamble(&self.domain),
            &shots,
            &self.statement(query, &t.plan_request)?,
            self.plan_header(),
        );
        Ok((prompt, self.plan_payload(false, query, &gold)))
    }

    /// Like plan generation over the cost-augmented domain; every statement
    /// asks for the cheapest plan.
    pub fn make_optimal_planning(&self, query: &Problem, examples: &[(Problem, Plan)]) -> Result<(String, Payload), CurriculumError> {
        let t = self.templates.file();
        let shots = examples
            .iter()
            .map(|(p, plan)| self.plan_shot(p, plan, &t.cost_request))
            .collect::<Result<Vec<_>, _>>()?;
        let gold = self.solve(&self.costed_domain, query)?;
        let prompt = render_prompt(
            &self.templates.preamble(&self.costed_domain),
            &shots,
            &self.statement(query, &t.cost_request)?,
            self.plan_header(),
        );
        Ok((prompt, self.plan_payload(true, query, &gold)))
    }

    fn execution_statement(&self, init: &State, actions: &[GroundAction]) -> Result<String, CurriculumError> {
        let t = self.templates.file();
        Ok(format!(
            "As initial conditions I have that, {}\n{}\n{}\n{}",
            self.templates.render_state(init)?,
            t.execution_intro,
            self.action_lines(actions)?,
            t.state_request
        ))
    }

    /// Asks for the state reached by executing `actions` from the problem's
    /// initial state.
    pub fn make_execution_reasoning(
        &self,
        query: &Problem,
        actions: &Plan,
        examples: &[(Problem, Plan)],
    ) -> Result<(String, Payload), CurriculumError> {
        let expected = query
            .init
            .execute(actions)
            .map_err(|e| CurriculumError::Precondition(format!("action sequence is not executable: {e}")))?;
        let mut shots = Vec::new();
        for (p, seq) in examples {
            let end = p
                .init
                .execute(seq)
                .map_err(|e| CurriculumError::Precondition(format!("example sequence is not executable: {e}")))?;
            shots.push(Shot {
                statement: self.execution_statement(&p.init, seq.steps())?,
                answer: self.templates.render_state_answer(&end)?,
            });
        }
        let prompt = render_prompt(
            &self.templates.preamble(&self.domain),
            &shots,
            &self.execution_statement(&query.init, actions.steps())?,
            &self.templates.file().state_header,
        );
        let payload = Payload {
            domain: self.domain_text(false),
            problem: query.to_pddl(),
            actions: Some(actions.to_lines()),
            expected_state: Some(expected),
            ..Payload::default()
        };
        Ok((prompt, payload))
    }

    /// The example and the query share init and goal; the query lists the
    /// goal atoms in a different order.
    pub fn make_goal_shuffle(&self, problem: &Problem, gold: &Plan, rng: &mut impl Rng) -> Result<(String, Payload), CurriculumError> {
        if problem.goal.len() < 2 {
            return Err(CurriculumError::Precondition("goal shuffle needs at least two goal atoms".into()));
        }
        let mut goal = problem.goal.clone();
        while goal == problem.goal {
            goal.shuffle(rng);
        }
        let query = problem.with_goal(goal);
        self.paired(problem, gold, &query, "query goal is a permutation of the example goal")
    }

    /// The query keeps a strict nonempty subset of the example's goal that
    /// does not already hold initially.
    pub fn make_full_to_partial(&self, problem: &Problem, gold: &Plan, rng: &mut impl Rng) -> Result<(String, Payload), CurriculumError> {
        let n = problem.goal.len();
        if n < 2 {
            return Err(CurriculumError::Precondition("full goal must have at least two atoms".into()));
        }
        let unmet: Vec<usize> = (0..n).filter(|&i| !problem.init.contains(&problem.goal[i])).collect();
        let anchor = *unmet.choose(rng).ok_or_else(|| CurriculumError::Precondition("goal already holds".into()))?;
        let k = rng.gen_range(1..n);
        let mut keep: BTreeSet<usize> = (0..n).filter(|&i| i != anchor).choose_multiple(rng, k - 1).into_iter().collect();
        keep.insert(anchor);
        let goal = keep.into_iter().map(|i| problem.goal[i].clone()).collect();
        self.paired(problem, gold, &problem.with_goal(goal), "query goal is a strict subset of the example goal")
    }

    /// The example shows a partial goal next to the plan for the full goal;
    /// the query states the full goal.
    pub fn make_partial_to_full(&self, problem: &Problem, gold: &Plan, rng: &mut impl Rng) -> Result<(String, Payload), CurriculumError> {
        let n = problem.goal.len();
        if n < 2 {
            return Err(CurriculumError::Precondition("full goal must have at least two atoms".into()));
        }
        let k = rng.gen_range(1..n);
        let mut keep: Vec<usize> = (0..n).choose_multiple(rng, k);
        keep.sort();
        let partial = problem.with_goal(keep.into_iter().map(|i| problem.goal[i].clone()).collect());
        let t = self.templates.file();
        let shot = self.plan_shot(&partial, gold, &t.plan_request)?;
        let prompt = render_prompt(
            &self.templates.preamble(&self.domain),
            &[shot],
            &self.statement(problem, &t.plan_request)?,
            self.plan_header(),
        );
        let mut payload = self.plan_payload(false, problem, gold);
        payload.notes.push("example shows a partial goal with the plan computed for the full goal".into());
        Ok((prompt, payload))
    }

    fn paired(&self, example: &Problem, gold: &Plan, query: &Problem, note: &str) -> Result<(String, Payload), CurriculumError> {
        let t = self.templates.file();
        let shot = self.plan_shot(example, gold, &t.plan_request)?;
        let prompt = render_prompt(
            &self.templates.preamble(&self.domain),
            &[shot],
            &self.statement(query, &t.plan_request)?,
            self.plan_header(),
        );
        let query_gold = self.solve(&self.domain, query)?;
        let mut payload = self.plan_payload(false, query, &query_gold);
        payload.notes.push(note.into());
        Ok((prompt, payload))
    }

    /// The query goal is the set of atoms that first become true after the
    /// first `prefix_len` steps of the example plan.
    pub fn make_plan_reuse(&self, problem: &Problem, gold: &Plan, prefix_len: usize) -> Result<(String, Payload), CurriculumError> {
        if prefix_len == 0 || prefix_len >= gold.len() {
            return Err(CurriculumError::Precondition(format!(
                "prefix length {prefix_len} outside 1..{}",
                gold.len()
            )));
        }
        let goal = fresh_atoms(problem, gold, prefix_len);
        if goal.is_empty() {
            return Err(CurriculumError::Precondition(format!("no atom first holds after step {prefix_len}")));
        }
        let query = problem.with_goal(goal);
        let (prompt, mut payload) = self.paired(problem, gold, &query, "query goal first holds at the end of the reference prefix")?;
        payload.reference_prefix = Some(gold.prefix(prefix_len).to_lines());
        Ok((prompt, payload))
    }

    /// Executes a prefix ending with a held block, then puts that block on a
    /// random clear block and empties the hand. The query asks for a plan
    /// from the changed state.
    pub fn make_replanning(
        &self,
        problem: &Problem,
        gold: &Plan,
        examples: &[(Problem, Plan)],
        rng: &mut impl Rng,
    ) -> Result<(String, Payload), CurriculumError> {
        let states = trace(problem, gold)?;
        let goal = problem.goal_set();
        let mut candidates: Vec<(usize, String, String)> = Vec::new();
        for (k, s) in states.iter().enumerate().skip(1) {
            let Some(held) = s.atoms().iter().find(|a| a.predicate == "holding").map(|a| a.args[0].clone()) else {
                continue;
            };
            for a in s.atoms().iter().filter(|a| a.predicate == "clear" && a.args[0] != held) {
                if !perturb(s, &held, &a.args[0]).satisfies(&goal) {
                    candidates.push((k, held.clone(), a.args[0].clone()));
                }
            }
        }
        let (k, held, onto) = candidates
            .choose(rng)
            .cloned()
            .ok_or_else(|| CurriculumError::Precondition("no prefix leaves a block in hand with a clear target off the goal".into()))?;
        let before = states[k].clone();
        let changed = perturb(&before, &held, &onto);
        let query = problem.with_init(changed.clone());
        let new_plan = self.solve(&self.domain, &query)?;

        let t = self.templates.file();
        let mut shots = Vec::new();
        for (p, plan) in examples {
            shots.push(self.plan_shot(p, plan, &t.plan_request)?);
        }
        let event = self
            .templates
            .render_goal(&[Atom::new("on", [held.as_str(), onto.as_str()]), Atom::new("arm-empty", Vec::<String>::new())])?;
        let narration = t
            .event_narration
            .replace("{event}", &event)
            .replace("{state}", &self.templates.render_state(&changed)?);
        let statement = format!(
            "{}\n{}\n{}\n{}\n{}",
            self.templates.describe_problem(problem, &problem.init)?,
            t.prefix_intro,
            self.action_lines(&gold.steps()[..k])?,
            narration,
            t.replan_request
        );
        let prompt = render_prompt(&self.templates.preamble(&self.domain), &shots, &statement, self.plan_header());
        let mut payload = self.plan_payload(false, &query, &new_plan);
        payload.event = Some(ReplanEvent { prefix_len: k, held, onto, state_before: before });
        payload.reference_prefix = Some(gold.prefix(k).to_lines());
        Ok((prompt, payload))
    }

    /// Examples and query are single-tower problems; example plans are
    /// traces of [`generalized_program`].
    pub fn make_plan_generalization(&self, query: &Problem, examples: &[Problem]) -> Result<(String, Payload), CurriculumError> {
        let t = self.templates.file();
        let mut shots = Vec::new();
        for p in examples {
            let plan = generalized_program(&self.domain, p)?;
            shots.push(self.plan_shot(p, &plan, &t.plan_request)?);
        }
        let trace = generalized_program(&self.domain, query)?;
        let prompt = render_prompt(
            &self.templates.preamble(&self.domain),
            &shots,
            &self.statement(query, &t.plan_request)?,
            self.plan_header(),
        );
        let mut payload = self.plan_payload(false, query, &trace);
        payload.optimal_cost = None;
        payload.notes.push("example plans are traces of the unstack-all-then-build program".into());
        Ok((prompt, payload))
    }

    fn random_walk(&self, problem: &Problem, rng: &mut impl Rng) -> Plan {
        let len = rng.gen_range(1..=self.config.max_exec_steps.max(1));
        let all = self.domain.ground_all(&problem.objects);
        let mut state = problem.init.clone();
        let mut steps = Vec::new();
        for _ in 0..len {
            let Some(a) = all.iter().filter(|a| state.applicable(a)).choose(rng) else { break };
            state = state.apply(a).expect("applicable");
            steps.push(a.clone());
        }
        Plan::new(steps)
    }

    /// A random single-tower problem over all blocks.
    pub fn tower_problem(&self, rng: &mut ChaCha8Rng) -> Result<Problem, CurriculumError> {
        let n = rng.gen_range(self.config.min_blocks..=self.config.max_blocks);
        let pool: BTreeSet<&String> = self.config.color_pool.iter().collect();
        if pool.len() < n {
            return Err(GenerateError::PoolTooSmall { blocks: n, pool: pool.len() }.into());
        }
        let mut blocks: Vec<String> = pool.into_iter().cloned().choose_multiple(rng, n);
        blocks.sort();
        let init = UniformPartition.sample(&blocks, rng);
        let init_state = init.to_state().expect("sampled layouts are well formed");
        for _ in 0..MAX_ATTEMPTS {
            let mut tower = blocks.clone();
            tower.shuffle(rng);
            let goal = TowerLayout::new(vec![tower], None).support_atoms();
            if !init_state.satisfies(&goal) {
                let name = format!("{DOMAIN_NAME}-tower-{:016x}", rng.gen::<u64>());
                return Ok(make_problem(&name, &init, goal, false));
            }
        }
        Err(CurriculumError::Exhausted { kind: TaskKind::PlanGeneralization, attempts: MAX_ATTEMPTS })
    }

    /// Deterministic in `(kind, seed)`.
    pub fn build(&self, kind: TaskKind, seed: u64, id: String) -> Result<TestInstance, CurriculumError> {
        for attempt in 0..MAX_ATTEMPTS as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, kind.index(), attempt));
            match self.try_build(kind, &mut rng) {
                Ok((prompt, payload)) => return Ok(self.instance(kind, seed, id, prompt, payload)),
                Err(CurriculumError::Precondition(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(CurriculumError::Exhausted { kind, attempts: MAX_ATTEMPTS })
    }

    fn examples(&self, rng: &mut ChaCha8Rng, costed: bool) -> Result<Vec<(Problem, Plan)>, CurriculumError> {
        (0..self.config.shots)
            .map(|_| self.solved(rng, costed).map(|s| (s.problem, s.plan)))
            .collect()
    }

    fn try_build(&self, kind: TaskKind, rng: &mut ChaCha8Rng) -> Result<(String, Payload), CurriculumError> {
        match kind {
            TaskKind::PlanGeneration => {
                let examples = self.examples(rng, false)?;
                let query = self.random_problem(rng, false)?;
                self.make_plan_generation(&query, &examples)
            }
            TaskKind::OptimalPlanning => {
                let examples = self.examples(rng, true)?;
                let query = self.random_problem(rng, true)?;
                self.make_optimal_planning(&query, &examples)
            }
            TaskKind::PlanExecutionReasoning => {
                let mut examples = Vec::new();
                for _ in 0..self.config.shots {
                    let p = self.random_problem(rng, false)?;
                    let walk = self.random_walk(&p, rng);
                    examples.push((p, walk));
                }
                let query = self.random_problem(rng, false)?;
                let walk = self.random_walk(&query, rng);
                self.make_execution_reasoning(&query, &walk, &examples)
            }
            TaskKind::GoalShuffle => {
                let s = self.solved(rng, false)?;
                self.make_goal_shuffle(&s.problem, &s.plan, rng)
            }
            TaskKind::GoalFullToPartial => {
                let s = self.solved(rng, false)?;
                self.make_full_to_partial(&s.problem, &s.plan, rng)
            }
            TaskKind::GoalPartialToFull => {
                let s = self.solved(rng, false)?;
                self.make_partial_to_full(&s.problem, &s.plan, rng)
            }
            TaskKind::PlanReuse => {
                let s = self.solved(rng, false)?;
                if s.plan.len() < 2 {
                    return Err(CurriculumError::Precondition("plan too short to take a prefix".into()));
                }
                let mut lens: Vec<usize> = (1..s.plan.len()).collect();
                lens.shuffle(rng);
                let k = lens
                    .into_iter()
                    .find(|&k| !fresh_atoms(&s.problem, &s.plan, k).is_empty())
                    .ok_or_else(|| CurriculumError::Precondition("no prefix adds a fresh atom".into()))?;
                self.make_plan_reuse(&s.problem, &s.plan, k)
            }
            TaskKind::Replanning => {
                let examples = self.examples(rng, false)?;
                let s = self.solved(rng, false)?;
                self.make_replanning(&s.problem, &s.plan, &examples, rng)
            }
            TaskKind::PlanGeneralization => {
                let examples = (0..self.config.shots).map(|_| self.tower_problem(rng)).collect::<Result<Vec<_>, _>>()?;
                let query = self.tower_problem(rng)?;
                self.make_plan_generalization(&query, &examples)
            }
        }
    }

    /// `n` instances of each kind; instance `i` of a kind is seeded from
    /// `(seed, kind, i)`.
    pub fn generate_suite(&self, kinds: &[TaskKind], n: usize, seed: u64) -> Result<Vec<TestInstance>, CurriculumError> {
        let mut out = Vec::with_capacity(kinds.len() * n);
        for &kind in kinds {
            for i in 0..n {
                let s = mix_seed(seed, 1000 + kind.index(), i as u64);
                out.push(self.build(kind, s, format!("{}-{:04}", kind.slug(), i))?);
            }
        }
        Ok(out)
    }
}

fn trace(problem: &Problem, plan: &Plan) -> Result<Vec<State>, CurriculumError> {
    let mut states = vec![problem.init.clone()];
    for a in plan.steps() {
        let next = states
            .last()
            .unwrap()
            .apply(a)
            .map_err(|e| CurriculumError::Precondition(format!("gold plan is not executable: {e}")))?;
        states.push(next);
    }
    Ok(states)
}

/// Atoms true after `k` steps that held in no earlier state, sorted.
pub fn fresh_atoms(problem: &Problem, plan: &Plan, k: usize) -> Vec<Atom> {
    let Ok(states) = trace(problem, &plan.prefix(k)) else { return Vec::new() };
    let seen: BTreeSet<&Atom> = states[..states.len() - 1].iter().flat_map(|s| s.atoms()).collect();
    states.last().unwrap().atoms().iter().filter(|a| !seen.contains(a)).cloned().collect()
}

/// The replanning event: `held` lands on the clear block `onto` and the hand
/// empties.
pub fn perturb(state: &State, held: &str, onto: &str) -> State {
    let mut atoms = state.atoms().clone();
    atoms.remove(&Atom::new("holding", [held]));
    atoms.remove(&Atom::new("clear", [onto]));
    atoms.insert(Atom::new("on", [held, onto]));
    atoms.insert(Atom::new("clear", [held]));
    atoms.insert(Atom::new("arm-empty", Vec::<String>::new()));
    State::new(atoms)
}

/// Goal tower bottom to top, if the goal is exactly the support relation of
/// one tower holding every object.
pub fn goal_tower(problem: &Problem) -> Option<Vec<String>> {
    let goal = problem.goal_set();
    let bottoms: Vec<&Atom> = goal.iter().filter(|a| a.predicate == "on-table").collect();
    let [bottom] = bottoms.as_slice() else { return None };
    let mut tower = vec![bottom.args[0].clone()];
    while tower.len() < problem.objects.len() {
        let top = tower.last().unwrap();
        let above = goal.iter().find(|a| a.predicate == "on" && &a.args[1] == top)?;
        tower.push(above.args[0].clone());
    }
    let expected: BTreeSet<Atom> = TowerLayout::new(vec![tower.clone()], None).support_atoms().into_iter().collect();
    (expected == goal && tower.iter().cloned().collect::<BTreeSet<_>>() == problem.objects).then_some(tower)
}

/// The fixed program for single-tower goals:
///
/// ```text
/// while some block is on another block:
///     unstack the top block of the first such tower; put it down
/// for each goal block above the bottom, bottom to top:
///     pick it up; stack it on the block below it
/// ```
pub fn generalized_program(domain: &Domain, problem: &Problem) -> Result<Plan, CurriculumError> {
    let tower = goal_tower(problem).ok_or_else(|| CurriculumError::OutOfClass("goal is not a single tower of all blocks".into()))?;
    let mut layout = TowerLayout::from_state(&problem.init, &problem.objects)
        .filter(|l| l.holding.is_none())
        .ok_or_else(|| CurriculumError::OutOfClass("initial state is not an arm-empty tower layout".into()))?;
    let objs = &problem.objects;
    let ground = |name: &str, args: &[&String]| {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        domain.ground(name, &args, objs).map_err(|e| CurriculumError::OutOfClass(e.to_string()))
    };
    let mut steps = Vec::new();
    while let Some(t) = layout.towers.iter_mut().find(|t| t.len() > 1) {
        let top = t.pop().unwrap();
        let below = t.last().unwrap().clone();
        steps.push(ground("unstack", &[&top, &below])?);
        steps.push(ground("putdown", &[&top])?);
        layout.towers.push(vec![top]);
    }
    for pair in tower.windows(2) {
        steps.push(ground("pickup", &[&pair[1]])?);
        steps.push(ground("stack", &[&pair[1], &pair[0]])?);
    }
    Ok(Plan::new(steps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Correct,
    Incorrect,
    Ignored,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDiff {
    pub missing: BTreeSet<Atom>,
    pub extra: BTreeSet<Atom>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_diff: Option<StateDiff>,
    /// Parsed steps as `(name arg ...)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<Unparseable>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unrecognized: Vec<String>,
}

impl CheckOutcome {
    fn ignored(parse_error: Unparseable) -> Self {
        CheckOutcome {
            status: Status::Ignored,
            verdict: None,
            state_diff: None,
            parsed: None,
            parse_error: Some(parse_error),
            unrecognized: Vec::new(),
        }
    }
}

/// Judges a completion against the instance's payload.
pub fn check_response(
    instance: &TestInstance,
    completion: &str,
    templates: &TemplateSet,
) -> Result<CheckOutcome, CurriculumError> {
    let domain = instance.payload.domain()?;
    let problem = instance.payload.problem(&domain)?;
    if !instance.kind.expects_plan() {
        if !completion.contains(templates.state_end_tag()) {
            return Ok(CheckOutcome::ignored(Unparseable::MissingEndTag));
        }
        let answer = templates.parse_state_answer(completion, &problem.objects);
        let expected = instance
            .payload
            .expected_state
            .as_ref()
            .ok_or_else(|| CurriculumError::Precondition("payload lacks the expected state".into()))?;
        let diff = StateDiff {
            missing: expected.atoms().difference(&answer.atoms).cloned().collect(),
            extra: answer.atoms.difference(expected.atoms()).cloned().collect(),
        };
        let ok = diff.missing.is_empty() && diff.extra.is_empty();
        return Ok(CheckOutcome {
            status: if ok { Status::Correct } else { Status::Incorrect },
            verdict: None,
            state_diff: Some(diff),
            parsed: Some(answer.atoms.iter().map(Atom::to_string).collect()),
            parse_error: None,
            unrecognized: answer.unrecognized,
        });
    }
    let parsed = templates.parse_plan(completion, &domain, &problem.objects);
    let plan = match parsed.result {
        Ok(plan) => plan,
        Err(e) => return Ok(CheckOutcome::ignored(e)),
    };
    let verdict = match (instance.kind, instance.payload.optimal_cost) {
        (TaskKind::OptimalPlanning, Some(cost)) => validate_against_cost(&problem, &plan, cost),
        (TaskKind::OptimalPlanning, None) => {
            return Err(CurriculumError::Precondition("payload lacks the optimal cost".into()))
        }
        _ => validate(&problem, &plan),
    };
    Ok(CheckOutcome {
        status: if verdict.is_valid() { Status::Correct } else { Status::Incorrect },
        verdict: Some(verdict.kind),
        state_diff: None,
        parsed: Some(plan.to_lines()),
        parse_error: None,
        unrecognized: Vec::new(),
    })
}

/// Gold plan for the payload's query, parsed back into actions.
pub fn payload_gold(instance: &TestInstance) -> Result<(Domain, Problem, Plan), CurriculumError> {
    let domain = instance.payload.domain()?;
    let problem = instance.payload.problem(&domain)?;
    let plan = instance.payload.lines_to_plan(&instance.payload.gold_plan, &domain, &problem)?;
    Ok((domain, problem, plan))
}
