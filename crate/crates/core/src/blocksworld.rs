//! Blocksworld: the four-action domain, tower layouts and the random problem
//! generator.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pddl::{parse_domain, Atom, Domain, Problem, State};

/// Default palette; blocks are named by colour so every instance reads like a
/// tabletop scene.
pub const DEFAULT_COLORS: [&str; 20] = [
    "red", "blue", "orange", "yellow", "white", "magenta", "black", "cyan", "green", "violet",
    "silver", "gold", "purple", "brown", "pink", "gray", "maroon", "olive", "teal", "navy",
];

pub const DOMAIN_NAME: &str = "blocksworld";

/// Per-action cost table. Actions without an entry cost 1.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostProfile(BTreeMap<String, u32>);

impl CostProfile {
    pub fn uniform(cost: u32) -> Self {
        Self::from_pairs(["pickup", "putdown", "stack", "unstack"].map(|a| (a, cost)))
    }

    /// Default profile for the cost-optimal task: moving a block onto or off
    /// another block costs twice as much as handling it at the table.
    pub fn default_costed() -> Self {
        Self::from_pairs([("pickup", 1), ("putdown", 1), ("stack", 2), ("unstack", 2)])
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, u32)>) -> Self {
        CostProfile(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    pub fn get(&self, action: &str) -> u32 {
        self.0.get(action).copied().unwrap_or(1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// The blocksworld domain as PDDL text; `costs` switches on `:action-costs`.
pub fn blocks_domain_pddl(costs: Option<&CostProfile>) -> String {
    let (req, functions) = match costs {
        Some(_) => (":strips :action-costs", "\n  (:functions (total-cost) - number)"),
        None => (":strips", ""),
    };
    let cost = |a: &str| match costs {
        Some(c) => format!(" (increase (total-cost) {})", c.get(a)),
        None => String::new(),
    };
    format!(
        "(define (domain {DOMAIN_NAME})
  (:requirements {req})
  (:predicates (on ?x ?y) (on-table ?x) (clear ?x) (holding ?x) (arm-empty)){functions}
  (:action pickup
    :parameters (?ob)
    :precondition (and (clear ?ob) (on-table ?ob) (arm-empty))
    :effect (and (holding ?ob) (not (clear ?ob)) (not (on-table ?ob)) (not (arm-empty)){}))
  (:action putdown
    :parameters (?ob)
    :precondition (holding ?ob)
    :effect (and (clear ?ob) (arm-empty) (on-table ?ob) (not (holding ?ob)){}))
  (:action stack
    :parameters (?ob ?underob)
    :precondition (and (clear ?underob) (holding ?ob))
    :effect (and (arm-empty) (clear ?ob) (on ?ob ?underob) (not (clear ?underob)) (not (holding ?ob)){}))
  (:action unstack
    :parameters (?ob ?underob)
    :precondition (and (on ?ob ?underob) (clear ?ob) (arm-empty))
    :effect (and (holding ?ob) (clear ?underob) (not (on ?ob ?underob)) (not (clear ?ob)) (not (arm-empty)){})))
",
        cost("pickup"),
        cost("putdown"),
        cost("stack"),
        cost("unstack"),
    )
}

pub fn blocks_domain(costs: Option<&CostProfile>) -> Domain {
    parse_domain(&blocks_domain_pddl(costs)).expect("built-in blocksworld domain parses")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("block `{0}` appears more than once")]
    DuplicateBlock(String),
    #[error("empty tower")]
    EmptyTower,
}

/// Towers listed bottom to top, plus the block in the hand, if any.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerLayout {
    pub towers: Vec<Vec<String>>,
    pub holding: Option<String>,
}

impl TowerLayout {
    /// Builds a layout with towers sorted by their bottom block.
    pub fn new(mut towers: Vec<Vec<String>>, holding: Option<String>) -> Self {
        towers.sort();
        TowerLayout { towers, holding }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &String> {
        self.towers.iter().flatten().chain(self.holding.iter())
    }

    pub fn to_state(&self) -> Result<State, LayoutError> {
        layout_to_state(self)
    }

    /// The support relation of every placed block: `on-table` for tower
    /// bottoms and `on` for every stacked block, bottom-up per tower.
    pub fn support_atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        for t in &self.towers {
            if let Some(bottom) = t.first() {
                out.push(Atom::new("on-table", [bottom.as_str()]));
            }
            for w in t.windows(2) {
                out.push(Atom::new("on", [w[1].as_str(), w[0].as_str()]));
            }
        }
        out
    }

    /// Inverse of [`layout_to_state`]: `None` when the state is not a layout
    /// over exactly `objects`.
    pub fn from_state(state: &State, objects: &BTreeSet<String>) -> Option<TowerLayout> {
        let mut below: BTreeMap<&str, &str> = BTreeMap::new();
        let mut above: BTreeMap<&str, &str> = BTreeMap::new();
        let mut on_table = BTreeSet::new();
        let mut holding = None;
        for atom in state.atoms() {
            if atom.args.iter().any(|a| !objects.contains(a)) {
                return None;
            }
            match (atom.predicate.as_str(), atom.args.as_slice()) {
                ("on", [x, y]) => {
                    if below.insert(x.as_str(), y.as_str()).is_some() || above.insert(y.as_str(), x.as_str()).is_some() {
                        return None;
                    }
                }
                ("on-table", [x]) => {
                    on_table.insert(x.as_str());
                }
                ("holding", [x]) => {
                    if holding.replace(x.clone()).is_some() {
                        return None;
                    }
                }
                ("clear", [_]) | ("arm-empty", []) => {}
                _ => return None,
            }
        }
        let mut towers = Vec::new();
        let mut seen = 0;
        for bottom in &on_table {
            let mut tower = vec![bottom.to_string()];
            let mut cur = *bottom;
            while let Some(next) = above.get(cur) {
                tower.push(next.to_string());
                cur = next;
                if tower.len() > objects.len() {
                    return None;
                }
            }
            seen += tower.len();
            towers.push(tower);
        }
        let layout = TowerLayout::new(towers, holding);
        // Cycles, floating blocks, blocks in two places and stray clear /
        // arm-empty atoms all show up as a mismatch here.
        if seen + usize::from(layout.holding.is_some()) != objects.len() {
            return None;
        }
        match layout.to_state() {
            Ok(s) if &s == state => Some(layout),
            _ => None,
        }
    }
}

pub fn layout_to_state(layout: &TowerLayout) -> Result<State, LayoutError> {
    let mut seen = BTreeSet::new();
    for b in layout.blocks() {
        if !seen.insert(b) {
            return Err(LayoutError::DuplicateBlock(b.clone()));
        }
    }
    let mut atoms = Vec::new();
    for t in &layout.towers {
        let top = t.last().ok_or(LayoutError::EmptyTower)?;
        atoms.push(Atom::new("clear", [top.as_str()]));
    }
    atoms.extend(layout.support_atoms());
    match &layout.holding {
        Some(h) => atoms.push(Atom::new("holding", [h.as_str()])),
        None => atoms.push(Atom::new("arm-empty", Vec::<String>::new())),
    }
    Ok(State::new(atoms))
}

/// True iff `state` is exactly the encoding of some layout over `objects`.
pub fn is_consistent(state: &State, objects: &BTreeSet<String>) -> bool {
    TowerLayout::from_state(state, objects).is_some()
}

/// Strategy for drawing random arm-empty layouts.
pub trait LayoutSampler {
    fn sample(&self, blocks: &[String], rng: &mut dyn rand::RngCore) -> TowerLayout;
}

/// Uniform over set partitions of the blocks into towers, then a uniform
/// ordering within each tower.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformPartition;

fn bell_numbers(n: usize) -> Vec<u128> {
    // Bell triangle.
    let mut bell = vec![1u128];
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = vec![*row.last().unwrap()];
        for v in &row {
            let last = *next.last().unwrap();
            next.push(last + v);
        }
        bell.push(next[0]);
        row = next;
    }
    bell
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

impl LayoutSampler for UniformPartition {
    fn sample(&self, blocks: &[String], rng: &mut dyn rand::RngCore) -> TowerLayout {
        let bell = bell_numbers(blocks.len());
        let mut rest: Vec<String> = blocks.to_vec();
        let mut towers = Vec::new();
        while !rest.is_empty() {
            let m = rest.len();
            // The first remaining block shares its tower with k-1 others:
            // P(k) = C(m-1, k-1) * B(m-k) / B(m).
            let mut draw = rng.gen_range(0..bell[m]);
            let mut k = 1;
            loop {
                let weight = binomial(m - 1, k - 1) * bell[m - k];
                if draw < weight {
                    break;
                }
                draw -= weight;
                k += 1;
            }
            let first = rest.remove(0);
            rest.shuffle(rng);
            let mut tower: Vec<String> = rest.drain(..k - 1).collect();
            tower.push(first);
            tower.shuffle(rng);
            towers.push(tower);
            rest.sort();
        }
        TowerLayout::new(towers, None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    /// Support relation of every block in the target layout.
    Full,
    /// A random nonempty subset of the full goal.
    Partial,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlocksConfig {
    pub num_blocks: usize,
    pub color_pool: Vec<String>,
    pub rng_seed: u64,
    pub goal_mode: GoalMode,
    pub cost_profile: Option<CostProfile>,
}

impl BlocksConfig {
    pub fn new(num_blocks: usize, rng_seed: u64) -> Self {
        BlocksConfig {
            num_blocks,
            color_pool: DEFAULT_COLORS.iter().map(|s| s.to_string()).collect(),
            rng_seed,
            goal_mode: GoalMode::Full,
            cost_profile: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("need at least 2 blocks, got {0}")]
    TooFewBlocks(usize),
    #[error("{blocks} blocks requested but the colour pool has {pool} distinct names")]
    PoolTooSmall { blocks: usize, pool: usize },
    #[error("no non-trivial goal found after {0} draws")]
    Exhausted(usize),
}

const MAX_DRAWS: usize = 1000;

/// A blocksworld problem over `objects` with the given initial layout and goal.
pub fn make_problem(name: &str, init: &TowerLayout, goal: Vec<Atom>, costed: bool) -> Problem {
    Problem {
        name: name.to_string(),
        domain_name: DOMAIN_NAME.to_string(),
        objects: init.blocks().cloned().collect(),
        init: init.to_state().expect("sampled layouts are well formed"),
        goal,
        metric: costed,
    }
}

pub fn generate_problem(config: &BlocksConfig) -> Result<Problem, GenerateError> {
    generate_problem_with(config, &UniformPartition)
}

/// Deterministic in `config`: the same config always yields the same problem.
pub fn generate_problem_with(config: &BlocksConfig, sampler: &dyn LayoutSampler) -> Result<Problem, GenerateError> {
    let n = config.num_blocks;
    if n < 2 {
        return Err(GenerateError::TooFewBlocks(n));
    }
    let pool: BTreeSet<&String> = config.color_pool.iter().collect();
    if pool.len() < n {
        return Err(GenerateError::PoolTooSmall { blocks: n, pool: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let unique: Vec<&String> = pool.into_iter().collect();
    let mut blocks: Vec<String> = unique.choose_multiple(&mut rng, n).map(|s| s.to_string()).collect();
    blocks.sort();
    let init = sampler.sample(&blocks, &mut rng);
    let init_state = init.to_state().expect("sampled layouts are well formed");
    for _ in 0..MAX_DRAWS {
        let target = sampler.sample(&blocks, &mut rng);
        let full = target.support_atoms();
        let mut goal = match config.goal_mode {
            GoalMode::Full => full,
            GoalMode::Partial => {
                let k = rng.gen_range(1..=full.len());
                full.choose_multiple(&mut rng, k).cloned().collect()
            }
        };
        goal.sort();
        if !init_state.satisfies(&goal) {
            let name = format!("{DOMAIN_NAME}-{:016x}", config.rng_seed);
            return Ok(make_problem(&name, &init, goal, config.cost_profile.is_some()));
        }
    }
    Err(GenerateError::Exhausted(MAX_DRAWS))
}
