use std::net::SocketAddr;
use std::sync::{mpsc, Arc};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use planbench::blocksworld::{blocks_domain, generate_problem, BlocksConfig};
use planbench::harness::server::serve_blocking;
use planbench::harness::study::{StudyInstance, StudyStore};
use planbench::pddl::{Atom, Problem};
use planbench::planner::Planner;
use planbench::translator::TemplateSet;

struct Live {
    base: String,
    http: Client,
    store: Arc<StudyStore>,
}

impl Live {
    fn start() -> Live {
        let t = Arc::new(TemplateSet::blocksworld());
        let d = blocks_domain(None);
        let planner = Planner::default();
        let inst = |id: &str, seed: u64| {
            let p = generate_problem(&BlocksConfig::new(4, seed)).unwrap();
            StudyInstance::new(id, &d, p, &t, &planner).unwrap()
        };
        let example = inst("example", 100);
        let actual = (0..3).map(|i| inst(&format!("study-{i}"), 200 + i)).collect();
        let store = Arc::new(StudyStore::new(t, example, actual, 3).unwrap());
        let (tx, rx) = mpsc::channel();
        let served = store.clone();
        std::thread::spawn(move || {
            serve_blocking(served, SocketAddr::from(([127, 0, 0, 1], 0)), move |a| tx.send(a).unwrap()).unwrap();
        });
        let addr = rx.recv().unwrap();
        Live { base: format!("http://{addr}"), http: Client::new(), store }
    }

    fn get(&self, path: &str, session: &str) -> (StatusCode, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).query(&[("session", session)]).send().unwrap();
        (r.status(), r.json().unwrap())
    }

    fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().unwrap();
        (r.status(), r.json().unwrap())
    }

    fn gold(&self, instance_id: &str) -> Vec<String> {
        let inst = if instance_id == "example" {
            self.store.example()
        } else {
            self.store.instances().iter().find(|i| i.id == instance_id).unwrap()
        };
        inst.gold.to_lines()
    }

    fn problem(&self, instance_id: &str) -> Problem {
        self.store.instances().iter().find(|i| i.id == instance_id).unwrap().problem.clone()
    }

    /// Runs the example and phase 1 of the actual instance; returns
    /// (session id, actual instance id).
    fn through_example(&self, who: &str) -> (String, String) {
        let (st, s) = self.post("/session", json!({ "participant": who }));
        assert_eq!(st, StatusCode::CREATED);
        let id = s["id"].as_str().unwrap().to_string();
        assert_eq!(s["phase"], "example-view");

        let (st, _) = self.post("/phase1", json!({ "session": id, "text": "too early" }));
        assert_eq!(st, StatusCode::CONFLICT);

        let (st, view) = self.get("/instance", &id);
        assert_eq!(st, StatusCode::OK);
        assert_eq!(view["role"], "example");
        assert!(view["example_solution"].as_str().unwrap().ends_with("[PLAN END]"));

        assert_eq!(self.post("/begin", json!({ "session": id })).0, StatusCode::OK);
        assert_eq!(self.post("/phase1", json!({ "session": id, "text": "my idea" })).0, StatusCode::OK);
        let (st, j) = self.post("/phase2", json!({ "session": id, "actions": self.gold("example") }));
        assert_eq!(st, StatusCode::OK);
        assert_eq!(j["valid"], true);

        let (_, view) = self.get("/instance", &id);
        assert_eq!(view["role"], "actual");
        assert!(view.get("example_solution").is_none());
        let actual = view["instance_id"].as_str().unwrap().to_string();
        assert_eq!(self.post("/phase1", json!({ "session": id, "text": "free text plan" })).0, StatusCode::OK);
        (id, actual)
    }
}

/// A two-step no-op prepended to the gold plan.
fn detour(p: &Problem) -> Vec<String> {
    let top = p.objects.iter().find(|b| p.init.contains(&Atom::new("clear", [b.as_str()]))).unwrap();
    match p.objects.iter().find(|u| p.init.contains(&Atom::new("on", [top.as_str(), u.as_str()]))) {
        Some(under) => vec![format!("(unstack {top} {under})"), format!("(stack {top} {under})")],
        None => vec![format!("(pickup {top})"), format!("(putdown {top})")],
    }
}

#[test]
fn study_flow_over_http() {
    let live = Live::start();

    let (gold_id, gold_inst) = live.through_example("p1");
    let (st, actions) = live.get("/actions", &gold_id);
    assert_eq!(st, StatusCode::OK);
    let offered: Vec<&str> = actions.as_array().unwrap().iter().map(|a| a["id"].as_str().unwrap()).collect();
    let gold = live.gold(&gold_inst);
    assert!(gold.iter().all(|g| offered.contains(&g.as_str())));
    let (st, j) = live.post("/phase2", json!({ "session": gold_id, "actions": gold }));
    assert_eq!(st, StatusCode::OK);
    assert_eq!((j["valid"].as_bool(), j["optimal"].as_bool()), (Some(true), Some(true)));
    let (st, r) = live.get("/result", &gold_id);
    assert_eq!(st, StatusCode::OK);
    assert_eq!(r["bonus"], true);
    assert_eq!(r["phase"], "done");

    let (long_id, long_inst) = live.through_example("p2");
    let mut longer = detour(&live.problem(&long_inst));
    longer.extend(live.gold(&long_inst));
    let (_, j) = live.post("/phase2", json!({ "session": long_id, "actions": longer }));
    assert_eq!((j["valid"].as_bool(), j["optimal"].as_bool()), (Some(true), Some(false)));
    assert_eq!(live.get("/result", &long_id).1["bonus"], true);

    let (bad_id, _) = live.through_example("p3");
    let (st, _) = live.post("/phase2", json!({ "session": bad_id, "actions": ["(fly red)"] }));
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, j) = live.post("/phase2", json!({ "session": bad_id, "actions": [] }));
    assert_eq!(j["valid"], false);
    assert_eq!(live.get("/result", &bad_id).1["bonus"], false);

    let (_, open) = live.post("/session", json!({ "participant": "p4" }));
    assert_eq!(live.get("/result", open["id"].as_str().unwrap()).0, StatusCode::CONFLICT);

    let (st, agg) = live.get("/aggregate", "");
    assert_eq!(st, StatusCode::OK);
    assert_eq!(agg["sessions"], 4);
    assert_eq!(agg["completed"], 3);
    assert_eq!(agg["valid"], 2);
    assert_eq!(agg["optimal"], 1);
    assert!((agg["valid_fraction"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((agg["optimal_given_valid_fraction"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    let (_, audit) = live.get("/audit", "");
    assert_eq!(audit.as_array().unwrap().len(), 6);

    let (st, err) = live.get("/instance", "nope");
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert!(err["error"].as_str().unwrap().contains("nope"));
}
