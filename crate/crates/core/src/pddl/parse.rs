use std::collections::BTreeSet;

use super::sexpr::{parse_one, Pos, Sexp};
use super::{is_variable, ActionSchema, Atom, Domain, PddlError, PredicateDecl, Problem, State};

const SUPPORTED_REQUIREMENTS: &[&str] = &[":strips", ":action-costs"];

fn expect_list<'a>(s: &'a Sexp, what: &str) -> Result<&'a [Sexp], PddlError> {
    s.as_list()
        .ok_or_else(|| PddlError::syntax(s.pos(), format!("expected {what}")))
}

fn expect_symbol<'a>(s: &'a Sexp, what: &str) -> Result<&'a str, PddlError> {
    s.as_symbol()
        .ok_or_else(|| PddlError::syntax(s.pos(), format!("expected {what}")))
}

/// Splits `(define (KIND name) sections...)` into its name and sections.
fn split_define<'a>(root: &'a Sexp, kind: &str) -> Result<(&'a str, &'a [Sexp]), PddlError> {
    let items = expect_list(root, "(define ...)")?;
    match items.first().and_then(Sexp::as_symbol) {
        Some("define") => {}
        _ => return Err(PddlError::syntax(root.pos(), "expected (define ...)")),
    }
    let header = items
        .get(1)
        .ok_or_else(|| PddlError::syntax(root.pos(), format!("missing ({kind} <name>)")))?;
    let header_items = expect_list(header, &format!("({kind} <name>)"))?;
    match (header_items.first().and_then(Sexp::as_symbol), header_items.get(1)) {
        (Some(k), Some(name)) if k == kind && header_items.len() == 2 => {
            Ok((expect_symbol(name, "a name")?, &items[2..]))
        }
        _ => Err(PddlError::syntax(header.pos(), format!("expected ({kind} <name>)"))),
    }
}

/// Parses a STRIPS domain (optionally with fixed per-action `total-cost` increases).
pub fn parse_domain(text: &str) -> Result<Domain, PddlError> {
    let root = parse_one(text)?;
    let (name, sections) = split_define(&root, "domain")?;
    let mut domain = Domain {
        name: name.to_string(),
        requirements: Vec::new(),
        predicates: Vec::new(),
        schemas: Vec::new(),
    };
    let mut actions = Vec::new();
    for section in sections {
        let items = expect_list(section, "a domain section")?;
        let head = items.first().and_then(Sexp::as_symbol).unwrap_or("");
        match head {
            ":requirements" => {
                for r in &items[1..] {
                    let req = expect_symbol(r, "a requirement flag")?;
                    if !SUPPORTED_REQUIREMENTS.contains(&req) {
                        return Err(PddlError::unsupported(r.pos(), req));
                    }
                    domain.requirements.push(req.to_string());
                }
            }
            ":predicates" => {
                for p in &items[1..] {
                    let decl = parse_predicate_decl(p)?;
                    if domain.predicate(&decl.name).is_some() {
                        return Err(PddlError::Duplicate { what: "predicate", name: decl.name });
                    }
                    domain.predicates.push(decl);
                }
            }
            ":functions" => parse_functions(&items[1..])?,
            ":action" => actions.push(section),
            ":types" => return Err(PddlError::unsupported(section.pos(), ":typing")),
            ":constants" => return Err(PddlError::unsupported(section.pos(), ":constants")),
            ":derived" => return Err(PddlError::unsupported(section.pos(), ":derived-predicates")),
            ":durative-action" => {
                return Err(PddlError::unsupported(section.pos(), ":durative-actions"))
            }
            other => {
                return Err(PddlError::syntax(section.pos(), format!("unknown domain section `{other}`")))
            }
        }
    }
    for a in actions {
        let schema = parse_action(a, &domain)?;
        if domain.schema(&schema.name).is_some() {
            return Err(PddlError::Duplicate { what: "action", name: schema.name });
        }
        domain.schemas.push(schema);
    }
    Ok(domain)
}

fn parse_predicate_decl(p: &Sexp) -> Result<PredicateDecl, PddlError> {
    let items = expect_list(p, "a predicate declaration")?;
    let name = expect_symbol(
        items.first().ok_or_else(|| PddlError::syntax(p.pos(), "empty predicate declaration"))?,
        "a predicate name",
    )?;
    let mut params = Vec::new();
    for v in &items[1..] {
        let v = expect_symbol(v, "a parameter")?;
        if v == "-" {
            return Err(PddlError::unsupported(p.pos(), ":typing"));
        }
        if !is_variable(v) {
            return Err(PddlError::syntax(p.pos(), format!("parameter `{v}` must start with `?`")));
        }
        params.push(v.to_string());
    }
    Ok(PredicateDecl { name: name.to_string(), params })
}

/// Only the `(total-cost)` function used by fixed action costs is accepted.
fn parse_functions(items: &[Sexp]) -> Result<(), PddlError> {
    let mut i = 0;
    while i < items.len() {
        match items[i].as_list() {
            Some(f) if f.len() == 1 && f[0].as_symbol() == Some("total-cost") => {}
            _ => return Err(PddlError::unsupported(items[i].pos(), ":numeric-fluents")),
        }
        // Optional "- number" annotation.
        if items.get(i + 1).and_then(Sexp::as_symbol) == Some("-") {
            match items.get(i + 2).and_then(Sexp::as_symbol) {
                Some("number") => i += 2,
                _ => return Err(PddlError::unsupported(items[i].pos(), ":numeric-fluents")),
            }
        }
        i += 1;
    }
    Ok(())
}

fn parse_action(section: &Sexp, domain: &Domain) -> Result<ActionSchema, PddlError> {
    let items = expect_list(section, "an action")?;
    let name = expect_symbol(
        items.get(1).ok_or_else(|| PddlError::syntax(section.pos(), "action without a name"))?,
        "an action name",
    )?
    .to_string();
    let mut schema = ActionSchema {
        name: name.clone(),
        params: Vec::new(),
        precond: BTreeSet::new(),
        add: BTreeSet::new(),
        del: BTreeSet::new(),
        cost: 1,
    };
    let mut i = 2;
    while i < items.len() {
        let key = expect_symbol(&items[i], "an action keyword")?;
        let value = items
            .get(i + 1)
            .ok_or_else(|| PddlError::syntax(items[i].pos(), format!("missing value for `{key}`")))?;
        match key {
            ":parameters" => {
                for p in expect_list(value, "a parameter list")? {
                    let p = expect_symbol(p, "a parameter")?;
                    if p == "-" {
                        return Err(PddlError::unsupported(value.pos(), ":typing"));
                    }
                    if !is_variable(p) {
                        return Err(PddlError::syntax(value.pos(), format!("parameter `{p}` must start with `?`")));
                    }
                    if schema.params.iter().any(|q| q == p) {
                        return Err(PddlError::Duplicate { what: "parameter", name: p.to_string() });
                    }
                    schema.params.push(p.to_string());
                }
            }
            ":precondition" => {
                for lit in conjuncts(value)? {
                    if lit.head() == Some("not") {
                        return Err(PddlError::unsupported(lit.pos(), ":negative-preconditions"));
                    }
                    schema.precond.insert(parse_atom(lit, domain)?);
                }
            }
            ":effect" => {
                for lit in conjuncts(value)? {
                    match lit.head() {
                        Some("not") => {
                            let inner = expect_list(lit, "(not <atom>)")?;
                            if inner.len() != 2 {
                                return Err(PddlError::syntax(lit.pos(), "malformed (not ...)"));
                            }
                            schema.del.insert(parse_atom(&inner[1], domain)?);
                        }
                        Some("increase") => schema.cost = parse_cost(lit)?,
                        _ => {
                            schema.add.insert(parse_atom(lit, domain)?);
                        }
                    }
                }
            }
            other => return Err(PddlError::syntax(items[i].pos(), format!("unknown action keyword `{other}`"))),
        }
        i += 2;
    }
    for atom in schema.precond.iter().chain(&schema.add).chain(&schema.del) {
        for arg in &atom.args {
            if !is_variable(arg) {
                return Err(PddlError::Unsupported {
                    feature: ":constants".into(),
                    line: section.pos().line,
                    col: section.pos().col,
                });
            }
            if !schema.params.contains(arg) {
                return Err(PddlError::UnboundVariable { action: name.clone(), var: arg.clone() });
            }
        }
    }
    Ok(schema)
}

fn parse_cost(lit: &Sexp) -> Result<u32, PddlError> {
    let items = expect_list(lit, "(increase (total-cost) N)")?;
    let is_total_cost = items
        .get(1)
        .and_then(Sexp::as_list)
        .map(|f| f.len() == 1 && f[0].as_symbol() == Some("total-cost"))
        .unwrap_or(false);
    if items.len() != 3 || !is_total_cost {
        return Err(PddlError::unsupported(lit.pos(), ":numeric-fluents"));
    }
    let n = items[2]
        .as_symbol()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| PddlError::unsupported(items[2].pos(), "non-constant action cost"))?;
    if n == 0 {
        return Err(PddlError::syntax(items[2].pos(), "action cost must be positive"));
    }
    Ok(n)
}

/// Flattens `(and ...)`, a single literal, or `()` into literals, rejecting
/// anything outside the STRIPS fragment by name.
fn conjuncts(s: &Sexp) -> Result<Vec<&Sexp>, PddlError> {
    let items = expect_list(s, "a formula")?;
    match s.head() {
        None if items.is_empty() => Ok(Vec::new()),
        Some("and") => {
            let mut out = Vec::new();
            for c in &items[1..] {
                out.extend(conjuncts(c)?);
            }
            Ok(out)
        }
        Some("when") => Err(PddlError::unsupported(s.pos(), ":conditional-effects")),
        Some("forall") => Err(PddlError::unsupported(s.pos(), ":universal-preconditions")),
        Some("exists") => Err(PddlError::unsupported(s.pos(), ":existential-preconditions")),
        Some("or") | Some("imply") => Err(PddlError::unsupported(s.pos(), ":disjunctive-preconditions")),
        Some("=") => Err(PddlError::unsupported(s.pos(), ":equality")),
        Some(_) => Ok(vec![s]),
        None => Err(PddlError::syntax(s.pos(), "expected a formula")),
    }
}

fn parse_atom(s: &Sexp, domain: &Domain) -> Result<Atom, PddlError> {
    let items = expect_list(s, "an atom")?;
    let pos: Pos = s.pos();
    let pred = items
        .first()
        .and_then(Sexp::as_symbol)
        .ok_or_else(|| PddlError::syntax(pos, "expected an atom"))?;
    let decl = domain.predicate(pred).ok_or_else(|| PddlError::UndeclaredPredicate {
        name: pred.to_string(),
        line: pos.line,
        col: pos.col,
    })?;
    let mut args = Vec::with_capacity(items.len() - 1);
    for a in &items[1..] {
        args.push(expect_symbol(a, "an argument")?.to_string());
    }
    if args.len() != decl.arity() {
        return Err(PddlError::ArityMismatch {
            name: pred.to_string(),
            expected: decl.arity(),
            found: args.len(),
            line: pos.line,
            col: pos.col,
        });
    }
    Ok(Atom { predicate: pred.to_string(), args })
}

/// Parses a problem file against its domain.
pub fn parse_problem(text: &str, domain: &Domain) -> Result<Problem, PddlError> {
    let root = parse_one(text)?;
    let (name, sections) = split_define(&root, "problem")?;
    let mut problem = Problem {
        name: name.to_string(),
        domain_name: domain.name.clone(),
        objects: BTreeSet::new(),
        init: State::default(),
        goal: Vec::new(),
        metric: false,
    };
    let mut init = BTreeSet::new();
    for section in sections {
        let items = expect_list(section, "a problem section")?;
        match section.head().unwrap_or("") {
            ":domain" => {
                let d = items
                    .get(1)
                    .and_then(Sexp::as_symbol)
                    .ok_or_else(|| PddlError::syntax(section.pos(), "expected (:domain <name>)"))?;
                if d != domain.name {
                    return Err(PddlError::DomainMismatch { expected: domain.name.clone(), found: d.to_string() });
                }
            }
            ":objects" => {
                for o in &items[1..] {
                    let o = expect_symbol(o, "an object name")?;
                    if o == "-" {
                        return Err(PddlError::unsupported(section.pos(), ":typing"));
                    }
                    problem.objects.insert(o.to_string());
                }
            }
            ":init" => {
                for lit in &items[1..] {
                    if lit.head() == Some("=") {
                        // (= (total-cost) 0) initialisation accompanying action costs.
                        continue;
                    }
                    init.insert(parse_atom(lit, domain)?);
                }
            }
            ":goal" => {
                let g = items
                    .get(1)
                    .ok_or_else(|| PddlError::syntax(section.pos(), "empty goal"))?;
                for lit in conjuncts(g)? {
                    if lit.head() == Some("not") {
                        return Err(PddlError::unsupported(lit.pos(), ":negative-preconditions"));
                    }
                    let atom = parse_atom(lit, domain)?;
                    if !problem.goal.contains(&atom) {
                        problem.goal.push(atom);
                    }
                }
            }
            ":metric" => {
                let ok = items.len() == 3
                    && items[1].as_symbol() == Some("minimize")
                    && items[2].as_list().map(|f| f.len() == 1 && f[0].as_symbol() == Some("total-cost")) == Some(true);
                if !ok {
                    return Err(PddlError::unsupported(section.pos(), ":numeric-fluents"));
                }
                problem.metric = true;
            }
            other => {
                return Err(PddlError::syntax(section.pos(), format!("unknown problem section `{other}`")))
            }
        }
    }
    for atom in init.iter().chain(&problem.goal) {
        for arg in &atom.args {
            if !problem.objects.contains(arg) {
                return Err(PddlError::UnknownObject(arg.clone()));
            }
        }
    }
    problem.init = State::new(init);
    Ok(problem)
}
