//! Optimal forward state-space search.
//!
//! Problems are grounded once into a bitset representation, then searched with
//! A* ordered by `(g + h, insertion order)`. The default heuristic is zero,
//! which makes this uniform-cost search (plain BFS on unit-cost domains).
//! Successors are generated in `(action name, args)` order, so gold plans are
//! reproducible run to run.

use std::cmp::Reverse;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pddl::{Atom, Domain, GroundAction, Plan, Problem, State, StepFailure};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub max_expanded: u64,
    pub time_limit: Duration,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig { max_expanded: 1_000_000, time_limit: Duration::from_secs(60) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    Nodes,
    Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("search hit its {limit:?} limit after {expanded} expansions")]
    ResourceLimit { limit: Limit, expanded: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptimalityError {
    #[error("plan is not executable: {0}")]
    NotExecutable(StepFailure),
    #[error("plan does not reach the goal")]
    GoalUnmet,
    #[error("no plan exists for this problem")]
    Unsolvable,
    #[error(transparent)]
    Search(#[from] SearchError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Solved(Plan),
    Unsolvable,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub outcome: Outcome,
    pub expanded: u64,
    pub generated: u64,
    pub elapsed: Duration,
}

impl SearchResult {
    pub fn plan(&self) -> Option<&Plan> {
        match &self.outcome {
            Outcome::Solved(p) => Some(p),
            Outcome::Unsolvable => None,
        }
    }
}

/// Fixed-width set of atom indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitState(Box<[u64]>);

impl BitState {
    fn zeros(bits: usize) -> Self {
        BitState(vec![0; bits.div_ceil(64).max(1)].into_boxed_slice())
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i / 64] & (1 << (i % 64)) != 0
    }

    fn contains_all(&self, other: &BitState) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(s, o)| s & o == *o)
    }

    fn step(&self, add: &BitState, del: &BitState) -> BitState {
        BitState(
            self.0
                .iter()
                .zip(add.0.iter().zip(del.0.iter()))
                .map(|(s, (a, d))| (s & !d) | a)
                .collect(),
        )
    }
}

struct CompiledAction {
    pre: BitState,
    add: BitState,
    del: BitState,
    cost: u64,
}

/// A problem grounded over its objects, with atoms interned to bit positions.
pub struct GroundedTask {
    atoms: Vec<Atom>,
    index: HashMap<Atom, usize>,
    actions: Vec<GroundAction>,
    compiled: Vec<CompiledAction>,
    init: BitState,
    goal: BitState,
}

impl GroundedTask {
    pub fn new(domain: &Domain, problem: &Problem) -> Self {
        let actions = domain.ground_all(&problem.objects);
        let mut atoms: Vec<Atom> = Vec::new();
        let mut index = HashMap::new();
        let mut intern = |a: &Atom| {
            if !index.contains_key(a) {
                index.insert(a.clone(), atoms.len());
                atoms.push(a.clone());
            }
        };
        problem.init.atoms().iter().chain(&problem.goal).for_each(&mut intern);
        for g in &actions {
            g.precond.iter().chain(&g.add).chain(&g.del).for_each(&mut intern);
        }
        let n = atoms.len();
        let bits = |set: &mut dyn Iterator<Item = &Atom>| {
            let mut b = BitState::zeros(n);
            for a in set {
                b.set(index[a]);
            }
            b
        };
        let compiled = actions
            .iter()
            .map(|g| CompiledAction {
                pre: bits(&mut g.precond.iter()),
                add: bits(&mut g.add.iter()),
                del: bits(&mut g.del.iter()),
                cost: u64::from(g.cost),
            })
            .collect();
        let init = bits(&mut problem.init.atoms().iter());
        let goal = bits(&mut problem.goal.iter());
        GroundedTask { atoms, index, actions, compiled, init, goal }
    }

    pub fn atom_index(&self, atom: &Atom) -> Option<usize> {
        self.index.get(atom).copied()
    }

    pub fn actions(&self) -> &[GroundAction] {
        &self.actions
    }

    pub fn decode(&self, s: &BitState) -> State {
        self.atoms.iter().enumerate().filter(|(i, _)| s.get(*i)).map(|(_, a)| a.clone()).collect()
    }

    pub fn is_goal(&self, s: &BitState) -> bool {
        s.contains_all(&self.goal)
    }
}

/// Extension point for informed search. Estimates must be admissible and
/// consistent for the returned plans to stay optimal.
pub trait Heuristic: Send + Sync {
    fn estimate(&self, task: &GroundedTask, state: &BitState) -> u64;
}

pub struct ZeroHeuristic;

impl Heuristic for ZeroHeuristic {
    fn estimate(&self, _: &GroundedTask, _: &BitState) -> u64 {
        0
    }
}

pub struct Planner {
    config: PlannerConfig,
    heuristic: Box<dyn Heuristic>,
}

impl Default for Planner {
    fn default() -> Self {
        Planner::new(PlannerConfig::default())
    }
}

struct Node {
    state: BitState,
    parent: usize,
    action: usize,
    g: u64,
}

const ROOT: usize = usize::MAX;

impl Planner {
    pub fn new(config: PlannerConfig) -> Self {
        Planner { config, heuristic: Box::new(ZeroHeuristic) }
    }

    pub fn with_heuristic(mut self, h: impl Heuristic + 'static) -> Self {
        self.heuristic = Box::new(h);
        self
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn solve(&self, domain: &Domain, problem: &Problem) -> Result<SearchResult, SearchError> {
        let task = GroundedTask::new(domain, problem);
        self.solve_task(&task)
    }

    pub fn solve_task(&self, task: &GroundedTask) -> Result<SearchResult, SearchError> {
        let start = Instant::now();
        let mut nodes = vec![Node { state: task.init.clone(), parent: ROOT, action: ROOT, g: 0 }];
        let mut best: HashMap<BitState, u64> = HashMap::new();
        best.insert(task.init.clone(), 0);
        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        heap.push(Reverse((self.heuristic.estimate(task, &task.init), seq, 0usize)));
        let (mut expanded, mut generated) = (0u64, 1u64);

        while let Some(Reverse((_, _, id))) = heap.pop() {
            let g = nodes[id].g;
            if best.get(&nodes[id].state).is_some_and(|&b| b < g) {
                continue;
            }
            if task.is_goal(&nodes[id].state) {
                return Ok(SearchResult {
                    outcome: Outcome::Solved(extract(task, &nodes, id)),
                    expanded,
                    generated,
                    elapsed: start.elapsed(),
                });
            }
            if expanded >= self.config.max_expanded {
                return Err(SearchError::ResourceLimit { limit: Limit::Nodes, expanded });
            }
            if expanded % 1024 == 0 && start.elapsed() > self.config.time_limit {
                return Err(SearchError::ResourceLimit { limit: Limit::Time, expanded });
            }
            expanded += 1;
            for (ai, a) in task.compiled.iter().enumerate() {
                if !nodes[id].state.contains_all(&a.pre) {
                    continue;
                }
                let next = nodes[id].state.step(&a.add, &a.del);
                let g2 = g + a.cost;
                match best.entry(next.clone()) {
                    Entry::Occupied(mut e) => {
                        if *e.get() <= g2 {
                            continue;
                        }
                        e.insert(g2);
                    }
                    Entry::Vacant(e) => {
                        e.insert(g2);
                    }
                }
                let h = self.heuristic.estimate(task, &next);
                nodes.push(Node { state: next, parent: id, action: ai, g: g2 });
                generated += 1;
                seq += 1;
                heap.push(Reverse((g2 + h, seq, nodes.len() - 1)));
            }
        }
        Ok(SearchResult { outcome: Outcome::Unsolvable, expanded, generated, elapsed: start.elapsed() })
    }

    /// Optimal plan cost, or `None` when the reachable space holds no goal state.
    pub fn optimal_cost(&self, domain: &Domain, problem: &Problem) -> Result<Option<u64>, SearchError> {
        Ok(self.solve(domain, problem)?.plan().map(Plan::total_cost))
    }

    /// Whether a valid plan is cost-minimal. Invalid plans are reported as errors.
    pub fn is_optimal(&self, domain: &Domain, problem: &Problem, plan: &Plan) -> Result<bool, OptimalityError> {
        let end = problem.init.execute(plan).map_err(OptimalityError::NotExecutable)?;
        if !end.satisfies(&problem.goal) {
            return Err(OptimalityError::GoalUnmet);
        }
        let best = self.optimal_cost(domain, problem)?.ok_or(OptimalityError::Unsolvable)?;
        Ok(plan.total_cost() == best)
    }
}

fn extract(task: &GroundedTask, nodes: &[Node], mut id: usize) -> Plan {
    let mut steps = Vec::new();
    while nodes[id].parent != ROOT {
        steps.push(task.actions[nodes[id].action].clone());
        id = nodes[id].parent;
    }
    steps.reverse();
    Plan::new(steps)
}

/// [`Planner::solve`] with default limits.
pub fn solve_optimal(domain: &Domain, problem: &Problem) -> Result<SearchResult, SearchError> {
    Planner::default().solve(domain, problem)
}

/// [`Planner::optimal_cost`] with default limits.
pub fn optimal_cost(domain: &Domain, problem: &Problem) -> Result<Option<u64>, SearchError> {
    Planner::default().optimal_cost(domain, problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocksworld::{blocks_domain, CostProfile, TowerLayout};
    use std::collections::BTreeSet;

    fn problem(towers: &[&[&str]], goal: &[&str]) -> Problem {
        let layout = TowerLayout::new(
            towers.iter().map(|t| t.iter().map(|s| s.to_string()).collect()).collect(),
            None,
        );
        let objects: BTreeSet<String> = towers.iter().flat_map(|t| t.iter().map(|s| s.to_string())).collect();
        Problem {
            name: "t".into(),
            domain_name: "blocksworld".into(),
            objects,
            init: layout.to_state().unwrap(),
            goal: goal.iter().map(|g| g.parse().unwrap()).collect(),
            metric: false,
        }
    }

    /// Cheapest plan over every action sequence of length ≤ `depth`,
    /// enumerated without any duplicate detection.
    fn brute_force(domain: &Domain, p: &Problem, depth: usize) -> Option<u64> {
        let actions = domain.ground_all(&p.objects);
        fn go(s: &State, p: &Problem, actions: &[GroundAction], depth: usize, cost: u64, best: &mut Option<u64>) {
            if s.satisfies(&p.goal) {
                *best = Some(best.map_or(cost, |b| b.min(cost)));
            }
            if depth == 0 {
                return;
            }
            for a in actions {
                if let Ok(next) = s.apply(a) {
                    go(&next, p, actions, depth - 1, cost + u64::from(a.cost), best);
                }
            }
        }
        let mut best = None;
        go(&p.init, p, &actions, depth, 0, &mut best);
        best
    }

    #[test]
    fn unstack_and_restack_costs_four() {
        let d = blocks_domain(None);
        let p = problem(&[&["b", "a"], &["c"]], &["(on b c)"]);
        let r = solve_optimal(&d, &p).unwrap();
        let plan = r.plan().unwrap();
        assert_eq!(plan.total_cost(), 4);
        assert_eq!(brute_force(&d, &p, 4), Some(4));
        assert_eq!(plan.to_lines(), ["(unstack a b)", "(putdown a)", "(pickup b)", "(stack b c)"]);
        assert!(r.expanded <= r.generated);
    }

    #[test]
    fn satisfied_goal_gives_empty_plan() {
        let d = blocks_domain(None);
        let p = problem(&[&["b", "a"]], &["(on a b)"]);
        let r = solve_optimal(&d, &p).unwrap();
        assert_eq!(r.plan().unwrap(), &Plan::empty());
        assert_eq!(optimal_cost(&d, &p).unwrap(), Some(0));
    }

    #[test]
    fn three_block_tower_from_table() {
        let d = blocks_domain(None);
        let p = problem(&[&["a"], &["b"], &["c"]], &["(on a b)", "(on b c)"]);
        assert_eq!(optimal_cost(&d, &p).unwrap(), Some(4));
        assert_eq!(brute_force(&d, &p, 4), Some(4));
    }

    #[test]
    fn two_block_swap() {
        let d = blocks_domain(None);
        let p = problem(&[&["b", "a"]], &["(on b a)"]);
        assert_eq!(optimal_cost(&d, &p).unwrap(), Some(4));
        assert_eq!(brute_force(&d, &p, 4), Some(4));
    }

    #[test]
    fn cost_profile_reweights() {
        let profile = CostProfile::from_pairs([("pickup", 2), ("putdown", 1), ("stack", 1), ("unstack", 1)]);
        let d = blocks_domain(Some(&profile));
        let p = problem(&[&["b", "a"]], &["(on b a)"]);
        let c = optimal_cost(&d, &p).unwrap();
        assert_eq!(c, Some(5));
        assert_eq!(brute_force(&d, &p, 4), c);
    }

    #[test]
    fn unit_cost_profile_matches_unit_domain() {
        let unit = CostProfile::uniform(1);
        let p = problem(&[&["c", "a"], &["b"]], &["(on c b)", "(on b a)"]);
        assert_eq!(
            optimal_cost(&blocks_domain(Some(&unit)), &p).unwrap(),
            optimal_cost(&blocks_domain(None), &p).unwrap()
        );
    }

    #[test]
    fn is_optimal_examples() {
        let d = blocks_domain(None);
        let planner = Planner::default();
        let p = problem(&[&["b", "a"], &["c"]], &["(on b c)"]);
        let gold = planner.solve(&d, &p).unwrap().plan().unwrap().clone();
        assert!(planner.is_optimal(&d, &p, &gold).unwrap());

        let mut padded = gold.clone().into_steps();
        let objs = &p.objects;
        padded.push(d.ground("pickup", &["a".into()], objs).unwrap());
        padded.push(d.ground("putdown", &["a".into()], objs).unwrap());
        assert!(!planner.is_optimal(&d, &p, &Plan::new(padded)).unwrap());

        assert_eq!(planner.is_optimal(&d, &p, &Plan::empty()), Err(OptimalityError::GoalUnmet));
    }

    #[test]
    fn unsolvable_and_limits() {
        let d = blocks_domain(None);
        let mut p = problem(&[&["a"], &["b"]], &["(on a b)"]);
        p.goal.push("(on b a)".parse().unwrap());
        let r = solve_optimal(&d, &p).unwrap();
        assert_eq!(r.outcome, Outcome::Unsolvable);

        let tiny = Planner::new(PlannerConfig { max_expanded: 1, ..Default::default() });
        let p = problem(&[&["a"], &["b"], &["c"]], &["(on a b)", "(on b c)"]);
        assert!(matches!(tiny.solve(&d, &p), Err(SearchError::ResourceLimit { limit: Limit::Nodes, .. })));
        let instant = Planner::new(PlannerConfig { time_limit: Duration::ZERO, ..Default::default() });
        assert!(matches!(instant.solve(&d, &p), Err(SearchError::ResourceLimit { limit: Limit::Time, .. })));
    }

    #[test]
    fn deterministic_plans() {
        let d = blocks_domain(None);
        let p = problem(&[&["c", "a"], &["d", "b"]], &["(on a b)", "(on b c)", "(on c d)"]);
        let first = solve_optimal(&d, &p).unwrap().plan().cloned();
        for _ in 0..3 {
            assert_eq!(solve_optimal(&d, &p).unwrap().plan().cloned(), first);
        }
    }
}
