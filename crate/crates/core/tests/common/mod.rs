//! Independent blocksworld model used as a test oracle. Shares nothing with
//! the library beyond the `Atom`/`Problem`/`Plan` data types.
#![allow(dead_code)]

use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::cmp::Reverse;

use planbench::pddl::{Atom, Plan, Problem};

/// Position of every block: `Some(j)` on block j, `None` on the table.
/// The held block's entry is ignored.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct World {
    pub below: Vec<Option<usize>>,
    pub held: Option<usize>,
}

pub struct Model {
    pub names: Vec<String>,
}

impl Model {
    pub fn new(problem: &Problem) -> Self {
        Model { names: problem.objects.iter().cloned().collect() }
    }

    fn idx(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn is_clear(w: &World, b: usize) -> bool {
        w.held != Some(b) && !(0..w.below.len()).any(|x| w.held != Some(x) && w.below[x] == Some(b))
    }

    /// Reads a state; `None` unless it is a physically consistent layout
    /// whose `clear` and `arm-empty` atoms match the block positions.
    pub fn read(&self, atoms: &BTreeSet<Atom>) -> Option<World> {
        let n = self.names.len();
        let mut place: Vec<Option<Option<usize>>> = vec![None; n];
        let mut held = None;
        let mut placed = vec![0usize; n];
        let mut clear = BTreeSet::new();
        let mut arm_empty = false;
        for a in atoms {
            match (a.predicate.as_str(), a.args.as_slice()) {
                ("on", [x, y]) => {
                    let (x, y) = (self.idx(x)?, self.idx(y)?);
                    if x == y {
                        return None;
                    }
                    place[x] = Some(Some(y));
                    placed[x] += 1;
                }
                ("on-table", [x]) => {
                    let x = self.idx(x)?;
                    place[x] = Some(None);
                    placed[x] += 1;
                }
                ("holding", [x]) => {
                    let x = self.idx(x)?;
                    if held.replace(x).is_some() {
                        return None;
                    }
                    placed[x] += 1;
                }
                ("clear", [x]) => {
                    clear.insert(self.idx(x)?);
                }
                ("arm-empty", []) => arm_empty = true,
                _ => return None,
            }
        }
        if placed.iter().any(|&c| c != 1) || arm_empty == held.is_some() {
            return None;
        }
        let below: Vec<Option<usize>> = (0..n).map(|i| place[i].unwrap_or(None)).collect();
        let w = World { below, held };
        for b in 0..n {
            if w.held == Some(b) {
                continue;
            }
            // two blocks on the same block, or resting on the held block
            let on_top = (0..n).filter(|&x| w.held != Some(x) && w.below[x] == Some(b)).count();
            if on_top > 1 {
                return None;
            }
            if let Some(h) = w.held {
                if w.below[b] == Some(h) {
                    return None;
                }
            }
            // cycles
            let mut cur = b;
            for _ in 0..=n {
                match w.below[cur] {
                    Some(next) => cur = next,
                    None => break,
                }
            }
            if w.below[cur].is_some() {
                return None;
            }
        }
        for b in 0..n {
            if Self::is_clear(&w, b) != clear.contains(&b) {
                return None;
            }
        }
        Some(w)
    }

    pub fn atoms(&self, w: &World) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        for b in 0..self.names.len() {
            let name = self.names[b].as_str();
            if w.held == Some(b) {
                out.insert(Atom::new("holding", [name]));
                continue;
            }
            match w.below[b] {
                Some(y) => out.insert(Atom::new("on", [name, self.names[y].as_str()])),
                None => out.insert(Atom::new("on-table", [name])),
            };
            if Self::is_clear(w, b) {
                out.insert(Atom::new("clear", [name]));
            }
        }
        if w.held.is_none() {
            out.insert(Atom::new("arm-empty", Vec::<String>::new()));
        }
        out
    }

    pub fn apply(&self, w: &World, name: &str, args: &[String]) -> Option<World> {
        let ix: Vec<usize> = args.iter().map(|a| self.idx(a)).collect::<Option<_>>()?;
        let mut next = w.clone();
        match (name, ix.as_slice()) {
            ("pickup", &[x]) if w.held.is_none() && w.below[x].is_none() && Self::is_clear(w, x) => next.held = Some(x),
            ("putdown", &[x]) if w.held == Some(x) => {
                next.held = None;
                next.below[x] = None;
            }
            ("stack", &[x, y]) if x != y && w.held == Some(x) && Self::is_clear(w, y) => {
                next.held = None;
                next.below[x] = Some(y);
            }
            ("unstack", &[x, y]) if w.held.is_none() && w.below[x] == Some(y) && Self::is_clear(w, x) => next.held = Some(x),
            _ => return None,
        }
        Some(next)
    }

    pub fn successors(&self, w: &World) -> Vec<(&'static str, Vec<String>, World)> {
        let n = self.names.len();
        let mut out = Vec::new();
        let mut try_push = |name: &'static str, args: Vec<String>| {
            if let Some(s) = self.apply(w, name, &args) {
                out.push((name, args, s));
            }
        };
        for x in 0..n {
            try_push("pickup", vec![self.names[x].clone()]);
            try_push("putdown", vec![self.names[x].clone()]);
            for y in 0..n {
                try_push("stack", vec![self.names[x].clone(), self.names[y].clone()]);
                try_push("unstack", vec![self.names[x].clone(), self.names[y].clone()]);
            }
        }
        out
    }

    pub fn satisfies(&self, w: &World, goal: &[Atom]) -> bool {
        let atoms = self.atoms(w);
        goal.iter().all(|g| atoms.contains(g))
    }

    /// Runs `plan` by name and arguments only; `Err(step)` is the 1-based
    /// step whose preconditions fail.
    pub fn simulate(&self, init: &World, plan: &Plan) -> Result<World, usize> {
        let mut w = init.clone();
        for (i, s) in plan.steps().iter().enumerate() {
            w = self.apply(&w, &s.name, &s.args).ok_or(i + 1)?;
        }
        Ok(w)
    }
}

/// Unit-cost breadth-first search.
pub fn bfs_len(problem: &Problem) -> Option<u64> {
    let m = Model::new(problem);
    let start = m.read(problem.init.atoms())?;
    let mut seen = HashMap::from([(start.clone(), 0u64)]);
    let mut queue = VecDeque::from([start]);
    while let Some(w) = queue.pop_front() {
        let d = seen[&w];
        if m.satisfies(&w, &problem.goal) {
            return Some(d);
        }
        for (_, _, s) in m.successors(&w) {
            if !seen.contains_key(&s) {
                seen.insert(s.clone(), d + 1);
                queue.push_back(s);
            }
        }
    }
    None
}

/// Exhaustive uniform-cost search with per-action costs by name.
pub fn min_cost(problem: &Problem, cost: impl Fn(&str) -> u64) -> Option<u64> {
    let m = Model::new(problem);
    let start = m.read(problem.init.atoms())?;
    let mut best: HashMap<World, u64> = HashMap::from([(start.clone(), 0)]);
    let mut ids: Vec<World> = vec![start];
    let mut heap = BinaryHeap::from([Reverse((0u64, 0usize))]);
    while let Some(Reverse((g, i))) = heap.pop() {
        let w = ids[i].clone();
        if best[&w] < g {
            continue;
        }
        if m.satisfies(&w, &problem.goal) {
            return Some(g);
        }
        for (name, _, s) in m.successors(&w) {
            let ng = g + cost(name);
            if best.get(&s).is_none_or(|&old| ng < old) {
                best.insert(s.clone(), ng);
                ids.push(s);
                heap.push(Reverse((ng, ids.len() - 1)));
            }
        }
    }
    None
}

/// Every arrangement of `names` into towers with the hand empty, as lists
/// of towers listed bottom-up.
pub fn all_layouts(names: &[String]) -> Vec<Vec<Vec<String>>> {
    fn go(rest: &[String], acc: Vec<Vec<String>>, out: &mut Vec<Vec<Vec<String>>>) {
        let Some((first, tail)) = rest.split_first() else {
            out.push(acc);
            return;
        };
        // start a new tower
        let mut fresh = acc.clone();
        fresh.push(vec![first.clone()]);
        go(tail, fresh, out);
        // or insert into any existing tower at any height
        for t in 0..acc.len() {
            for pos in 0..=acc[t].len() {
                let mut next = acc.clone();
                next[t].insert(pos, first.clone());
                go(tail, next, out);
            }
        }
    }
    let mut out = Vec::new();
    go(names, Vec::new(), &mut out);
    out
}

pub fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

/// Support atoms of a single tower listed bottom-up.
pub fn tower_goal(tower: &[String]) -> Vec<Atom> {
    let mut goal = vec![Atom::new("on-table", [tower[0].as_str()])];
    for w in tower.windows(2) {
        goal.push(Atom::new("on", [w[1].as_str(), w[0].as_str()]));
    }
    goal
}

/// Full state atoms of a hand-empty layout.
pub fn layout_atoms(towers: &[Vec<String>]) -> BTreeSet<Atom> {
    let mut out = BTreeSet::from([Atom::new("arm-empty", Vec::<String>::new())]);
    for t in towers {
        out.extend(tower_goal(t));
        out.insert(Atom::new("clear", [t.last().unwrap().as_str()]));
    }
    out
}
