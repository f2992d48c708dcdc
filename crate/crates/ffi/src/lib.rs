//! C interface to the planbench core.
//!
//! Every function returns a [`PbStatus`]; on failure a message is available
//! from [`pb_last_error_message`] on the same thread. Strings handed out by
//! the library are NUL-terminated UTF-8 and must be released with
//! [`pb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use planbench::blocksworld::{generate_problem, BlocksConfig, GoalMode};
use planbench::pddl::{parse_domain, parse_problem, Domain, Plan, Problem};
use planbench::planner::{Outcome, Planner};
use planbench::translator::TemplateSet;
use planbench::validator::validate;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    Unsolvable = 4,
    SearchLimit = 5,
    InvalidPlan = 6,
    GenerateError = 7,
    Unparseable = 8,
    Panic = 9,
}

/// A parsed domain and problem.
pub struct PbTask {
    domain: Domain,
    problem: Problem,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let m = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = m);
}

struct Fail(PbStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PbStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PbStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(PbStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(PbStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn task_ref<'a>(t: *const PbTask) -> Result<&'a PbTask, Fail> {
    t.as_ref().ok_or_else(|| Fail(PbStatus::NullArgument, "task is null".into()))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(PbStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|_| Fail(PbStatus::Panic, "string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn plan_text(plan: &Plan) -> String {
    plan.to_lines().iter().map(|l| format!("{l}\n")).collect()
}

/// Parses PDDL domain and problem text. On success `*out` owns a task that
/// must be released with `pb_task_free`.
///
/// # Safety
/// `domain` and `problem` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_task_from_pddl(domain: *const c_char, problem: *const c_char, out: *mut *mut PbTask) -> PbStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(PbStatus::NullArgument, "output pointer is null".into()));
        }
        *out = ptr::null_mut();
        let d = parse_domain(text(domain, "domain")?).map_err(|e| Fail(PbStatus::ParseError, format!("domain: {e}")))?;
        let p = parse_problem(text(problem, "problem")?, &d).map_err(|e| Fail(PbStatus::ParseError, format!("problem: {e}")))?;
        *out = Box::into_raw(Box::new(PbTask { domain: d, problem: p }));
        Ok(())
    })
}

/// # Safety
/// `task` must be null or a pointer from `pb_task_from_pddl` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pb_task_free(task: *mut PbTask) {
    if !task.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(task))));
    }
}

/// Finds a minimum-cost plan. `*plan_out` receives one `(action arg ...)`
/// per line; `cost_out` may be null.
///
/// # Safety
/// `task` must be a live task; `plan_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_task_solve(task: *const PbTask, plan_out: *mut *mut c_char, cost_out: *mut u64) -> PbStatus {
    guard(|| {
        let t = task_ref(task)?;
        let result = Planner::default()
            .solve(&t.domain, &t.problem)
            .map_err(|e| Fail(PbStatus::SearchLimit, e.to_string()))?;
        match result.outcome {
            Outcome::Solved(plan) => {
                if !cost_out.is_null() {
                    *cost_out = plan.total_cost();
                }
                put_string(plan_out, plan_text(&plan))
            }
            Outcome::Unsolvable => Err(Fail(PbStatus::Unsolvable, "goal is unreachable".into())),
        }
    })
}

/// Validates a plan given as `(action arg ...)` lines. Returns `Ok` for a
/// valid plan and `InvalidPlan` otherwise; in both cases `*verdict_out`
/// (if not null) receives the verdict as JSON.
///
/// # Safety
/// `task` must be a live task; `plan` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pb_task_validate(task: *const PbTask, plan: *const c_char, verdict_out: *mut *mut c_char) -> PbStatus {
    guard(|| {
        let t = task_ref(task)?;
        let plan = t
            .domain
            .parse_plan(text(plan, "plan")?, &t.problem.objects)
            .map_err(|e| Fail(PbStatus::ParseError, e.to_string()))?;
        let verdict = validate(&t.problem, &plan);
        if !verdict_out.is_null() {
            put_string(verdict_out, serde_json::to_string(&verdict.kind).expect("verdicts serialize"))?;
        }
        if verdict.is_valid() {
            Ok(())
        } else {
            Err(Fail(PbStatus::InvalidPlan, serde_json::to_string(&verdict.kind).expect("verdicts serialize")))
        }
    })
}

/// Writes a random blocksworld problem as PDDL. Deterministic in all arguments.
///
/// # Safety
/// `problem_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_blocks_generate(num_blocks: u32, seed: u64, partial_goal: bool, problem_out: *mut *mut c_char) -> PbStatus {
    guard(|| {
        let mut config = BlocksConfig::new(num_blocks as usize, seed);
        if partial_goal {
            config.goal_mode = GoalMode::Partial;
        }
        let p = generate_problem(&config).map_err(|e| Fail(PbStatus::GenerateError, e.to_string()))?;
        put_string(problem_out, p.to_pddl())
    })
}

/// Parses a natural-language model completion (bundled blocksworld
/// templates) into `(action arg ...)` lines for `task`'s objects.
///
/// # Safety
/// `task` must be a live task; `completion` a NUL-terminated string;
/// `plan_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_parse_completion(task: *const PbTask, completion: *const c_char, plan_out: *mut *mut c_char) -> PbStatus {
    guard(|| {
        let t = task_ref(task)?;
        let templates = TemplateSet::blocksworld();
        let parsed = templates.parse_plan(text(completion, "completion")?, &t.domain, &t.problem.objects);
        let plan = parsed.result.map_err(|e| Fail(PbStatus::Unparseable, e.to_string()))?;
        put_string(plan_out, plan_text(&plan))
    })
}

/// Message for the last failing call on this thread; empty after a success.
/// Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn pb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
