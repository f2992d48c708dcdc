use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_planbench");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["generate"]).status.code(), Some(1));
    assert_eq!(run(&["run", "--out", "x", "--kinds", "juggling"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn gold_artifacts_check_and_bad_files_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("m.jsonl");
    let pddl = tmp.path().join("pddl");
    let out = run(&["generate", "--count", "4", "--seed", "11", "--out", p(&manifest), "--pddl-dir", p(&pddl)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut checked = 0;
    for dir in std::fs::read_dir(&pddl).unwrap() {
        let d = dir.unwrap().path();
        let (dom, prob, plan) = (d.join("domain.pddl"), d.join("problem.pddl"), d.join("gold.plan"));
        let out = run(&["check", "--domain", p(&dom), "--problem", p(&prob), "--plan", p(&plan)]);
        assert_eq!(out.status.code(), Some(0), "{}: {}", d.display(), String::from_utf8_lossy(&out.stdout));
        checked += 1;
    }
    assert_eq!(checked, 36);

    let d = pddl.join("plan_generation-0000");
    let (dom, prob) = (d.join("domain.pddl"), d.join("problem.pddl"));
    let bad = tmp.path().join("bad.plan");
    let gold = std::fs::read_to_string(d.join("gold.plan")).unwrap();
    std::fs::write(&bad, gold.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
    let out = run(&["check", "--domain", p(&dom), "--problem", p(&prob), "--plan", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("precondition_failure") || String::from_utf8_lossy(&out.stdout).contains("goal_unsatisfied"));

    let out = run(&["check", "--domain", "/nonexistent", "--problem", "x", "--plan", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent"));
}

#[test]
fn check_accepts_natural_language_plans() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("m.jsonl");
    let pddl = tmp.path().join("pddl");
    run(&["generate", "--count", "1", "--kinds", "plan_generation", "--out", p(&manifest), "--pddl-dir", p(&pddl)]);
    let d = pddl.join("plan_generation-0000");
    let gold = std::fs::read_to_string(d.join("gold.plan")).unwrap();
    let mut text = String::new();
    for line in gold.lines() {
        let f: Vec<&str> = line.trim_matches(['(', ')']).split_whitespace().collect();
        text.push_str(&match f.as_slice() {
            ["pickup", a] => format!("pick up the {a} block\n"),
            ["putdown", a] => format!("put down the {a} block\n"),
            ["stack", a, b] => format!("stack the {a} block on top of the {b} block\n"),
            ["unstack", a, b] => format!("unstack the {a} block from on top of the {b} block\n"),
            other => panic!("{other:?}"),
        });
    }
    text.push_str("[PLAN END]\n");
    let nl = tmp.path().join("answer.txt");
    std::fs::write(&nl, text).unwrap();
    let (dom, prob) = (d.join("domain.pddl"), d.join("problem.pddl"));
    let out = run(&["check", "--text", "--optimal", "--domain", p(&dom), "--problem", p(&prob), "--plan", p(&nl)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_resumes_and_rerenders_report_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let args = ["run", "--out", p(&dir), "--count", "3", "--seed", "5", "--endpoint", "echo", "--kinds", "goal_shuffle,plan_generation"];
    let first = run(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8_lossy(&first.stdout).to_string();
    assert!(stdout.contains("3/3 (100%)"));
    assert!(stdout.contains("0/3 (0%)"));
    for f in ["config.json", "manifest.jsonl", "results.jsonl", "report.txt"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["endpoint"]["temperature"], 0.0);
    assert_eq!(config["endpoint"]["max_tokens"], 400);
    assert_eq!(config["count"], 3);

    let second = run(&args);
    assert!(second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("evaluated 0, skipped 6"));
    assert_eq!(std::fs::read_to_string(dir.join("results.jsonl")).unwrap().lines().count(), 6);

    let report = run(&["report", "--run", p(&dir)]);
    assert_eq!(report.stdout, std::fs::read(dir.join("report.txt")).unwrap());
    let csv = run(&["report", "--run", p(&dir), "--format", "csv"]);
    assert!(String::from_utf8_lossy(&csv.stdout).starts_with("task,column,correct,total,percent,cell\n"));

    let other = run(&["run", "--out", p(&dir), "--count", "4", "--endpoint", "echo"]);
    assert_eq!(other.status.code(), Some(2));

    let from_config = run(&["run", "--out", p(&dir), "--config", p(&dir.join("config.json"))]);
    assert!(from_config.status.success(), "{}", String::from_utf8_lossy(&from_config.stderr));
}

#[test]
fn unreachable_endpoint_exits_3_and_logs_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = run(&[
        "run", "--out", p(&dir), "--count", "2", "--kinds", "plan_generation", "--endpoint", "remote",
        "--base-url", "http://127.0.0.1:9", "--model", "m", "--max-attempts", "1", "--timeout-secs", "2",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.join("results.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().all(|l| l.contains("\"failure\"")));

    let missing = run(&["run", "--out", p(&tmp.path().join("r2")), "--endpoint", "remote"]);
    assert_eq!(missing.status.code(), Some(1));
}
