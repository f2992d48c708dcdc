//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{all_layouts, bfs_len, layout_atoms, min_cost, permutations, tower_goal, Model, World};
use planbench::blocksworld::{blocks_domain, generate_problem, BlocksConfig, CostProfile, GoalMode};
use planbench::curriculum::{generalized_program, payload_gold, Curriculum, CurriculumConfig, TaskKind};
use planbench::harness::format_cell;
use planbench::pddl::{goal_satisfied, Atom, Domain, Plan, Problem, State};
use planbench::planner::solve_optimal;
use planbench::translator::TemplateSet;
use planbench::validator::validate;

const BIN: &str = env!("CARGO_BIN_EXE_planbench");

type Check = fn() -> Result<String, String>;

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("planner optimality vs breadth-first oracle", planner_optimality),
        ("validator/executor agreement", validator_agreement),
        ("translator round-trips", translator_round_trips),
        ("mock-model matrix via selftest", selftest_matrix),
        ("replanning perturbation invariants", replanning_invariants),
        ("generalized program traces", generalized_program_traces),
        ("report arithmetic on the reference fixture", report_arithmetic),
        ("generate + prompt determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn names(n: usize) -> Vec<String> {
    ["red", "blue", "green", "amber", "cyan", "lime", "navy", "plum", "rose", "teal"][..n].iter().map(|s| s.to_string()).collect()
}

fn problem(objects: &[String], init: BTreeSet<Atom>, goal: Vec<Atom>, metric: bool) -> Problem {
    Problem {
        name: "p".into(),
        domain_name: "blocksworld".into(),
        objects: objects.iter().cloned().collect(),
        init: State::new(init),
        goal,
        metric,
    }
}

fn oracle_valid(problem: &Problem, plan: &Plan) -> bool {
    let m = Model::new(problem);
    let w = m.read(problem.init.atoms()).expect("consistent init");
    m.simulate(&w, plan).is_ok_and(|end| m.satisfies(&end, &problem.goal))
}

fn planner_optimality() -> Result<String, String> {
    let start = Instant::now();
    let unit = blocks_domain(None);
    let profile = CostProfile::default_costed();
    let costed = blocks_domain(Some(&profile));
    let check = |domain: &Domain, p: &Problem, expected: Option<u64>, what: &str| -> Result<(), String> {
        let r = solve_optimal(domain, p).map_err(|e| format!("{what}: {e}"))?;
        let got = r.plan().map(|plan| plan.total_cost());
        ensure(got == expected, || format!("{what}: planner {got:?}, oracle {expected:?}\n{}", p.to_pddl()))?;
        if let Some(plan) = r.plan() {
            ensure(oracle_valid(p, plan), || format!("{what}: returned plan fails the oracle simulator"))?;
        }
        Ok(())
    };

    let mut sweep = 0;
    for n in 1..=4 {
        let objs = names(n);
        let goals = permutations(&objs);
        for layout in all_layouts(&objs) {
            for tower in &goals {
                let p = problem(&objs, layout_atoms(&layout), tower_goal(tower), false);
                check(&unit, &p, bfs_len(&p), "sweep")?;
                sweep += 1;
            }
        }
    }

    let mut random = 0;
    for seed in 0..200u64 {
        let mut cfg = BlocksConfig::new(3 + (seed % 3) as usize, 9000 + seed);
        if seed % 2 == 1 {
            cfg.goal_mode = GoalMode::Partial;
        }
        let p = generate_problem(&cfg).map_err(|e| e.to_string())?;
        check(&unit, &p, bfs_len(&p), "random unit-cost")?;
        let pc = Problem { metric: true, ..p };
        check(&costed, &pc, min_cost(&pc, |a| u64::from(profile.get(a))), "random costed")?;
        random += 1;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {:.1}s (limit 60s)", elapsed.as_secs_f64()))?;
    Ok(format!("{sweep} exhaustive tower problems and {random} random problems (unit and costed) match; {:.1}s < 60s", elapsed.as_secs_f64()))
}

/// Deletes or swaps steps, or prepends a pickup/putdown detour that keeps
/// the plan valid.
fn corrupt(domain: &Domain, p: &Problem, plan: &Plan, rng: &mut ChaCha8Rng) -> Plan {
    let mut steps = plan.steps().to_vec();
    let loose: Vec<&String> = p
        .objects
        .iter()
        .filter(|b| p.init.contains(&Atom::new("on-table", [b.as_str()])) && p.init.contains(&Atom::new("clear", [b.as_str()])))
        .collect();
    match rng.gen_range(0..4) {
        0 if !loose.is_empty() => {
            let b = loose.choose(rng).unwrap();
            let detour = domain.parse_plan(&format!("(pickup {b})\n(putdown {b})"), &p.objects).unwrap();
            return Plan::new(detour.steps().iter().chain(&steps).cloned().collect());
        }
        1 if steps.len() >= 2 => {
            let i = rng.gen_range(0..steps.len());
            let j = (i + rng.gen_range(1..steps.len())) % steps.len();
            steps.swap(i, j);
        }
        _ => {
            steps.remove(rng.gen_range(0..steps.len()));
        }
    }
    Plan::new(steps)
}

fn validator_agreement() -> Result<String, String> {
    let unit = blocks_domain(None);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut gold, mut corrupted, mut rejected) = (0, 0, 0);
    let mut seed = 0u64;
    while gold + corrupted < 1200 {
        seed += 1;
        let mut cfg = BlocksConfig::new(rng.gen_range(3..=5), seed);
        if rng.gen_bool(0.3) {
            cfg.goal_mode = GoalMode::Partial;
        }
        let p = generate_problem(&cfg).map_err(|e| e.to_string())?;
        let plan = solve_optimal(&unit, &p).map_err(|e| e.to_string())?.plan().cloned().ok_or("unsolvable")?;
        let (candidate, is_gold) = if seed % 2 == 0 { (plan, true) } else { (corrupt(&unit, &p, &plan, &mut rng), false) };
        let verdict = validate(&p, &candidate);
        let executor = p.init.execute(&candidate).is_ok_and(|end| goal_satisfied(&end, &p.goal));
        let oracle = oracle_valid(&p, &candidate);
        ensure(verdict.is_valid() == executor && executor == oracle, || {
            format!("disagreement: validator {} executor {executor} oracle {oracle} on seed {seed}", verdict.is_valid())
        })?;
        if is_gold {
            ensure(verdict.is_valid(), || format!("gold plan rejected on seed {seed}"))?;
            gold += 1;
        } else {
            corrupted += 1;
            rejected += usize::from(!verdict.is_valid());
        }
    }
    ensure(rejected > corrupted / 2 && rejected < corrupted, || format!("{rejected}/{corrupted} corrupted plans invalid; want a mix"))?;
    Ok(format!("{} plans ({gold} gold, {corrupted} corrupted of which {rejected} invalid), 100% agreement", gold + corrupted))
}

fn random_walk(p: &Problem, rng: &mut ChaCha8Rng, len: usize) -> (World, Vec<String>) {
    let m = Model::new(p);
    let mut w = m.read(p.init.atoms()).expect("consistent");
    let mut lines = Vec::new();
    for _ in 0..len {
        let succ = m.successors(&w);
        let (name, args, next) = succ.choose(rng).expect("blocksworld always has a move").clone();
        lines.push(format!("({name} {})", args.join(" ")));
        w = next;
    }
    (w, lines)
}

fn translator_round_trips() -> Result<String, String> {
    let t = TemplateSet::blocksworld();
    let unit = blocks_domain(None);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut states, mut plans) = (0, 0);
    for seed in 0..1000u64 {
        let p = generate_problem(&BlocksConfig::new(rng.gen_range(2..=8), seed)).map_err(|e| e.to_string())?;
        let m = Model::new(&p);
        let len = rng.gen_range(0..12);
        let (w, lines) = random_walk(&p, &mut rng, len);

        let state = State::new(m.atoms(&w));
        let text = t.render_state_answer(&state).map_err(|e| e.to_string())?;
        let back = t.parse_state_answer(&text, &p.objects);
        ensure(&back.atoms == state.atoms() && back.unrecognized.is_empty(), || format!("state round-trip failed:\n{text}"))?;
        states += 1;

        let plan = unit.parse_plan(&lines.join("\n"), &p.objects).map_err(|e| e.to_string())?;
        let text = t.render_plan(&plan).map_err(|e| e.to_string())?;
        let parsed = t.parse_plan(&text, &unit, &p.objects);
        ensure(parsed.result.as_ref().ok() == Some(&plan), || format!("plan round-trip failed:\n{text}\n{:?}", parsed.result))?;
        plans += 1;
    }
    Ok(format!("{states} states and {plans} plans, 100% identity"))
}

fn selftest_matrix() -> Result<String, String> {
    let start = Instant::now();
    let out = Command::new(BIN).args(["selftest", "--count", "100", "--seed", "7"]).output().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    ensure(out.status.success(), || format!("exit {:?}\n{stdout}{}", out.status.code(), String::from_utf8_lossy(&out.stderr)))?;
    let lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")).collect();
    let expected: Vec<(&str, &str, &str)> = TaskKind::ALL
        .iter()
        .map(|k| ("oracle", k.slug(), "correct=100/100 (100%)"))
        .chain(["goal_shuffle", "goal_full_to_partial", "goal_partial_to_full"].map(|k| ("echo", k, "correct=100/100 (100%)")))
        .chain([("prefix", "plan_reuse", "correct=100/100 (100%)")])
        .chain(TaskKind::ALL.iter().map(|k| ("silent", k.slug(), "ignored=100/100 (100%)")))
        .collect();
    ensure(lines.len() == expected.len(), || format!("{} result lines, expected {}", lines.len(), expected.len()))?;
    for (model, task, cell) in &expected {
        ensure(
            lines.iter().any(|l| {
                let f: Vec<&str> = l.split_whitespace().collect();
                f.len() == 5 && f[0] == "PASS" && f[1] == *model && f[2] == *task && format!("{} {}", f[3], f[4]) == *cell
            }),
            || format!("missing `PASS {model} {task} {cell}`"),
        )?;
    }
    ensure(elapsed < Duration::from_secs(300), || format!("took {:.1}s (limit 300s)", elapsed.as_secs_f64()))?;
    Ok(format!(
        "oracle 9/9 tasks, echo 3/3 reformulations, prefix plan reuse, oracle replanning from the changed state, silent 9/9 ignored; {:.1}s < 300s",
        elapsed.as_secs_f64()
    ))
}

fn replanning_invariants() -> Result<String, String> {
    let t = TemplateSet::blocksworld();
    let c = Curriculum::new(&t, CurriculumConfig::default()).map_err(|e| e.to_string())?;
    let suite = c.generate_suite(&[TaskKind::Replanning], 1000, 2024).map_err(|e| e.to_string())?;
    let mut violations = Vec::new();
    for inst in &suite {
        let ev = inst.payload.event.clone().ok_or("missing event")?;
        let (_, q, gold) = payload_gold(inst).map_err(|e| e.to_string())?;
        let m = Model::new(&q);
        let mut fail = |what: &str| violations.push(format!("{}: {what}", inst.id));
        let Some(changed) = m.read(q.init.atoms()) else {
            fail("changed state inconsistent");
            continue;
        };
        if changed.held.is_some() {
            fail("hand not empty after the event");
        }
        match m.read(ev.state_before.atoms()) {
            Some(before) if before.held.is_some() && m.names[before.held.unwrap()] == ev.held => {}
            _ => fail("state before the event does not hold the moved block"),
        }
        if !ev.state_before.contains(&Atom::new("clear", [ev.onto.as_str()])) {
            fail("target block was not clear");
        }
        let mut expect: BTreeSet<Atom> = ev.state_before.atoms().clone();
        expect.remove(&Atom::new("holding", [ev.held.as_str()]));
        expect.remove(&Atom::new("clear", [ev.onto.as_str()]));
        expect.insert(Atom::new("on", [ev.held.as_str(), ev.onto.as_str()]));
        expect.insert(Atom::new("clear", [ev.held.as_str()]));
        expect.insert(Atom::new("arm-empty", Vec::<String>::new()));
        if &expect != q.init.atoms() {
            fail("changed state is not the held block stacked on the target");
        }
        if bfs_len(&q).is_none() || !oracle_valid(&q, &gold) {
            fail("changed instance not solvable by its gold plan");
        }
    }
    ensure(violations.is_empty(), || format!("{} violations: {:?}", violations.len(), &violations[..violations.len().min(5)]))?;
    Ok(format!("{} instances, 0 violations", suite.len()))
}

fn generalized_program_traces() -> Result<String, String> {
    let unit = blocks_domain(None);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut valid = 0;
    for seed in 0..100u64 {
        let n = rng.gen_range(3..=7);
        let base = generate_problem(&BlocksConfig::new(n, 300 + seed)).map_err(|e| e.to_string())?;
        let mut tower: Vec<String> = base.objects.iter().cloned().collect();
        tower.shuffle(&mut rng);
        let p = base.with_goal(tower_goal(&tower));
        let trace = generalized_program(&unit, &p).map_err(|e| e.to_string())?;
        ensure(validate(&p, &trace).is_valid() && oracle_valid(&p, &trace), || format!("invalid trace on seed {seed}"))?;
        valid += 1;
    }
    for n in 2..=10 {
        let objs = names(n);
        let layout: Vec<Vec<String>> = objs.iter().map(|b| vec![b.clone()]).collect();
        let mut tower = objs.clone();
        tower.shuffle(&mut rng);
        let p = problem(&objs, layout_atoms(&layout), tower_goal(&tower), false);
        let trace = generalized_program(&unit, &p).map_err(|e| e.to_string())?;
        ensure(trace.len() == 2 * (n - 1), || format!("n={n}: {} actions, expected {}", trace.len(), 2 * (n - 1)))?;
        ensure(validate(&p, &trace).is_valid() && oracle_valid(&p, &trace), || format!("n={n}: invalid trace"))?;
        if n <= 6 {
            ensure(bfs_len(&p) == Some(2 * (n as u64 - 1)), || format!("n={n}: oracle disagrees with 2(n-1)"))?;
        }
    }
    Ok(format!("{valid}/100 in-class traces valid; all-on-table towers n=2..=10 take exactly 2(n-1) actions"))
}

/// Cells of the published results table, row by row.
const REFERENCE_CELLS: [[&str; 3]; 8] = [
    ["3/500 (0.6%)", "25/500 (5%)", "1/200 (0.5%)"],
    ["1/500 (0.2%)", "16/500 (3.2%)", "0/100 (0%)"],
    ["28/500 (5.6%)", "24/500 (4.8%)", "3/100 (3%)"],
    ["33/500 (6.6%)", "49/500 (9.8%)", "11/100 (11%)"],
    ["0/500 (0%)", "72/500 (14.4%)", "0/100 (0%)"],
    ["387/500 (77.4%)", "384/500 (76.8%)", "21/100 (21%)"],
    ["346/500 (69.2%)", "380/500 (76%)", "9/100 (9%)"],
    ["110/500 (22%)", "301/500 (60.2%)", "5/100 (5%)"],
];

fn report_arithmetic() -> Result<String, String> {
    for (c, t, s) in [(3, 500, "3/500 (0.6%)"), (387, 500, "387/500 (77.4%)"), (0, 100, "0/100 (0%)")] {
        ensure(format_cell(c, t) == s, || format!("format_cell({c}, {t}) = {}", format_cell(c, t)))?;
    }
    let out = Command::new(BIN).args(["report", "--fixture"]).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("report exit {:?}", out.status.code()))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = text.lines().skip(2).collect();
    ensure(rows.len() == REFERENCE_CELLS.len(), || format!("{} rows, expected {}", rows.len(), REFERENCE_CELLS.len()))?;
    for (row, cells) in rows.iter().zip(REFERENCE_CELLS) {
        let mut rest = *row;
        for cell in cells {
            let at = rest.find(&format!("  {cell}")).ok_or_else(|| format!("`{cell}` missing or out of order in `{row}`"))?;
            rest = &rest[at + cell.len()..];
        }
    }
    Ok("3/500 (0.6%), 387/500 (77.4%), 0/100 (0%) and all 24 reference cells reprinted verbatim".into())
}

fn snapshot(dir: &Path) -> Files {
    let mut files: Files = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

type Files = Vec<(String, Vec<u8>)>;

fn generate_and_prompt(dir: &Path, seed: &str) -> Result<(Vec<u8>, Files), String> {
    let manifest = dir.join("manifest.jsonl");
    let prompts = dir.join("prompts");
    for args in [
        vec!["generate", "--count", "10", "--seed", seed, "--out", manifest.to_str().unwrap()],
        vec!["prompt", "--manifest", manifest.to_str().unwrap(), "--out", prompts.to_str().unwrap()],
    ] {
        let out = Command::new(BIN).args(&args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
    }
    Ok((std::fs::read(&manifest).map_err(|e| e.to_string())?, snapshot(&prompts)))
}

fn determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = generate_and_prompt(&tmp.path().join("a"), "123")?;
    let b = generate_and_prompt(&tmp.path().join("b"), "123")?;
    let c = generate_and_prompt(&tmp.path().join("c"), "124")?;
    ensure(a.1.len() == 90, || format!("{} prompt files, expected 90", a.1.len()))?;
    ensure(a.0 == b.0, || "manifests differ".into())?;
    ensure(a.1 == b.1, || "prompt files differ".into())?;
    ensure(a.0 != c.0, || "a different seed produced the same manifest".into())?;
    Ok(format!("manifest ({} bytes) and {} prompt files byte-identical across runs", a.0.len(), a.1.len()))
}
