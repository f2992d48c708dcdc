//! Natural-language rendering of states, goals and plans, and parsing of
//! model completions back into plans and states.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pddl::{Atom, Domain, Plan, Problem, State};

pub const DEFAULT_TEMPLATES: &str = include_str!("../templates/blocksworld.toml");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("no template for predicate `{0}`")]
    MissingPredicate(String),
    #[error("no template for action `{0}`")]
    MissingAction(String),
    #[error("duplicate template for `{0}`")]
    Duplicate(String),
    #[error("template for `{name}` has {found} slots, expected {expected}")]
    Arity { name: String, expected: usize, found: usize },
    #[error("template `{name}`: {message}")]
    BadSlot { name: String, message: String },
    #[error("end tag must be non-empty")]
    EmptyTag,
    #[error("end tag `{tag}` occurs inside the template for `{name}`")]
    TagInTemplate { tag: String, name: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateTemplate {
    pub name: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTemplate {
    pub name: String,
    pub text: String,
    /// Gerund phrase used when listing action costs.
    #[serde(default)]
    pub label: Option<String>,
    /// Verbs accepted by the fallback parser.
    #[serde(default)]
    pub synonyms: Vec<String>,
}

fn default_plan_header() -> String {
    "[PLAN]".into()
}

fn default_state_header() -> String {
    "[STATE]".into()
}

/// On-disk template format (TOML).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateFile {
    pub plan_end_tag: String,
    pub state_end_tag: String,
    #[serde(default = "default_plan_header")]
    pub plan_header: String,
    #[serde(default = "default_state_header")]
    pub state_header: String,
    pub plan_request: String,
    pub cost_request: String,
    pub state_request: String,
    pub replan_request: String,
    /// Introduces an action sequence whose outcome is asked for.
    pub execution_intro: String,
    /// Introduces the executed part of an interrupted plan.
    pub prefix_intro: String,
    /// `{event}` and `{state}` are replaced by the perturbation and the new state.
    pub event_narration: String,
    pub domain_preamble: String,
    /// `{costs}` is replaced by the per-action cost list.
    pub cost_statement: String,
    #[serde(rename = "predicate", default)]
    pub predicates: Vec<PredicateTemplate>,
    #[serde(rename = "action", default)]
    pub actions: Vec<ActionTemplate>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Lit(String),
    Slot(usize),
}

#[derive(Clone, Debug)]
struct Compiled {
    pieces: Vec<Piece>,
    arity: usize,
    pattern: Regex,
    /// Capture group for each slot index.
    groups: Vec<usize>,
}

fn compile(name: &str, text: &str) -> Result<Compiled, TemplateError> {
    let bad = |message: &str| TemplateError::BadSlot { name: name.to_string(), message: message.to_string() };
    let mut pieces = Vec::new();
    let mut lit = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '{' {
            lit.push(c);
            continue;
        }
        let mut digits = String::new();
        loop {
            match chars.next() {
                Some('}') => break,
                Some(d) if d.is_ascii_digit() => digits.push(d),
                _ => return Err(bad("unterminated or non-numeric slot")),
            }
        }
        let idx: usize = digits.parse().map_err(|_| bad("empty slot"))?;
        if !lit.is_empty() {
            pieces.push(Piece::Lit(std::mem::take(&mut lit)));
        }
        pieces.push(Piece::Slot(idx));
    }
    if !lit.is_empty() {
        pieces.push(Piece::Lit(lit));
    }

    let slots: Vec<usize> = pieces
        .iter()
        .filter_map(|p| match p {
            Piece::Slot(i) => Some(*i),
            Piece::Lit(_) => None,
        })
        .collect();
    let arity = slots.len();
    let distinct: BTreeSet<usize> = slots.iter().copied().collect();
    if distinct.len() != arity || distinct.iter().any(|&i| i >= arity) {
        return Err(bad("slots must be {0}..{n-1}, each used once"));
    }

    let mut re = String::from("^");
    let mut groups = vec![0; arity];
    let mut group = 0;
    for p in &pieces {
        match p {
            // Matched lines are lowercased with single spaces; see `normalize_line`.
            Piece::Lit(s) => {
                let mut lit = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
                if s.starts_with(char::is_whitespace) {
                    lit.insert(0, ' ');
                }
                if s.ends_with(char::is_whitespace) && !lit.ends_with(' ') {
                    lit.push(' ');
                }
                re.push_str(&regex::escape(&lit));
            }
            Piece::Slot(i) => {
                group += 1;
                groups[*i] = group;
                re.push_str(r"([^\s.,;:]+)");
            }
        }
    }
    re.push('$');
    let pattern = Regex::new(&re).map_err(|e| bad(&e.to_string()))?;
    Ok(Compiled { pieces, arity, pattern, groups })
}

impl Compiled {
    fn fill(&self, args: &[String]) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Lit(s) => out.push_str(s),
                Piece::Slot(i) => out.push_str(&args[*i]),
            }
        }
        out
    }

    fn capture(&self, line: &str) -> Option<Vec<String>> {
        let caps = self.pattern.captures(line)?;
        Some(self.groups.iter().map(|&g| caps[g].to_string()).collect())
    }
}

/// A validated template file with precompiled matchers.
#[derive(Clone, Debug)]
pub struct TemplateSet {
    file: TemplateFile,
    predicates: Vec<Compiled>,
    actions: Vec<Compiled>,
    pred_index: HashMap<String, usize>,
    action_index: HashMap<String, usize>,
}

impl TemplateSet {
    pub fn new(file: TemplateFile) -> Result<Self, TemplateError> {
        for tag in [&file.plan_end_tag, &file.state_end_tag] {
            if tag.trim().is_empty() {
                return Err(TemplateError::EmptyTag);
            }
        }
        let mut pred_index = HashMap::new();
        let mut predicates = Vec::new();
        for (i, t) in file.predicates.iter().enumerate() {
            if pred_index.insert(t.name.to_lowercase(), i).is_some() {
                return Err(TemplateError::Duplicate(t.name.clone()));
            }
            predicates.push(compile(&t.name, &t.text)?);
        }
        let mut action_index = HashMap::new();
        let mut actions = Vec::new();
        for (i, t) in file.actions.iter().enumerate() {
            if action_index.insert(t.name.to_lowercase(), i).is_some() {
                return Err(TemplateError::Duplicate(t.name.clone()));
            }
            for tag in [&file.plan_end_tag, &file.state_end_tag] {
                if t.text.contains(tag.as_str()) {
                    return Err(TemplateError::TagInTemplate { tag: tag.clone(), name: t.name.clone() });
                }
            }
            actions.push(compile(&t.name, &t.text)?);
        }
        Ok(TemplateSet { file, predicates, actions, pred_index, action_index })
    }

    pub fn from_toml(text: &str) -> Result<Self, TemplateError> {
        Self::new(toml::from_str(text)?)
    }

    /// The bundled blocksworld wording.
    pub fn blocksworld() -> Self {
        Self::from_toml(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }

    pub fn file(&self) -> &TemplateFile {
        &self.file
    }

    pub fn plan_end_tag(&self) -> &str {
        &self.file.plan_end_tag
    }

    pub fn state_end_tag(&self) -> &str {
        &self.file.state_end_tag
    }

    /// Checks that every predicate and schema of `domain` has a template of
    /// matching arity.
    pub fn check_domain(&self, domain: &Domain) -> Result<(), TemplateError> {
        for p in &domain.predicates {
            let i = *self.pred_index.get(&p.name).ok_or_else(|| TemplateError::MissingPredicate(p.name.clone()))?;
            if self.predicates[i].arity != p.arity() {
                return Err(TemplateError::Arity {
                    name: p.name.clone(),
                    expected: p.arity(),
                    found: self.predicates[i].arity,
                });
            }
        }
        for s in &domain.schemas {
            let i = *self.action_index.get(&s.name).ok_or_else(|| TemplateError::MissingAction(s.name.clone()))?;
            if self.actions[i].arity != s.params.len() {
                return Err(TemplateError::Arity {
                    name: s.name.clone(),
                    expected: s.params.len(),
                    found: self.actions[i].arity,
                });
            }
        }
        Ok(())
    }

    fn predicate(&self, name: &str) -> Result<(usize, &Compiled), TemplateError> {
        let i = *self.pred_index.get(name).ok_or_else(|| TemplateError::MissingPredicate(name.to_string()))?;
        Ok((i, &self.predicates[i]))
    }

    fn action(&self, name: &str) -> Result<&Compiled, TemplateError> {
        let i = *self.action_index.get(name).ok_or_else(|| TemplateError::MissingAction(name.to_string()))?;
        Ok(&self.actions[i])
    }

    pub fn render_atom(&self, atom: &Atom) -> Result<String, TemplateError> {
        let (_, c) = self.predicate(&atom.predicate)?;
        if c.arity != atom.args.len() {
            return Err(TemplateError::Arity { name: atom.predicate.clone(), expected: atom.args.len(), found: c.arity });
        }
        Ok(c.fill(&atom.args))
    }

    /// One sentence per atom, ordered by template declaration, then arguments.
    pub fn render_state(&self, state: &State) -> Result<String, TemplateError> {
        let mut keyed = Vec::with_capacity(state.len());
        for a in state.atoms() {
            let (i, _) = self.predicate(&a.predicate)?;
            keyed.push(((i, &a.args), self.render_atom(a)?));
        }
        keyed.sort();
        Ok(keyed.into_iter().map(|(_, s)| s + ".").collect::<Vec<_>>().join(" "))
    }

    /// Goal atoms in presentation order, joined by "and".
    pub fn render_goal(&self, goal: &[Atom]) -> Result<String, TemplateError> {
        let parts = goal.iter().map(|a| self.render_atom(a)).collect::<Result<Vec<_>, _>>()?;
        Ok(parts.join(" and "))
    }

    pub fn render_action(&self, name: &str, args: &[String]) -> Result<String, TemplateError> {
        let c = self.action(name)?;
        if c.arity != args.len() {
            return Err(TemplateError::Arity { name: name.to_string(), expected: args.len(), found: c.arity });
        }
        Ok(c.fill(args))
    }

    /// One imperative sentence per line, then the plan-end tag on its own line.
    pub fn render_plan(&self, plan: &Plan) -> Result<String, TemplateError> {
        let mut out = String::new();
        for s in plan.steps() {
            out.push_str(&self.render_action(&s.name, &s.args)?);
            out.push_str(".\n");
        }
        out.push_str(&self.file.plan_end_tag);
        Ok(out)
    }

    /// A state answer terminated by the state-end tag.
    pub fn render_state_answer(&self, state: &State) -> Result<String, TemplateError> {
        let body = self.render_state(state)?;
        Ok(if body.is_empty() { self.file.state_end_tag.clone() } else { format!("{body}\n{}", self.file.state_end_tag) })
    }

    /// Rules text, plus the cost list when the domain charges for actions.
    pub fn preamble(&self, domain: &Domain) -> String {
        let mut out = self.file.domain_preamble.trim().to_string();
        if domain.has_costs() {
            let costs: Vec<String> = domain
                .schemas
                .iter()
                .map(|s| {
                    let label = self
                        .action_index
                        .get(&s.name)
                        .and_then(|&i| self.file.actions[i].label.clone())
                        .unwrap_or_else(|| s.name.clone());
                    format!("{label} costs {}", s.cost)
                })
                .collect();
            out.push_str("\n\n");
            out.push_str(&self.file.cost_statement.replace("{costs}", &costs.join(", ")));
        }
        out
    }

    /// "As initial conditions I have that, ... My goal is to have that ..."
    pub fn describe_problem(&self, problem: &Problem, init: &State) -> Result<String, TemplateError> {
        let mut out = String::new();
        let state = self.render_state(init)?;
        let _ = writeln!(out, "As initial conditions I have that, {state}");
        let _ = write!(out, "My goal is to have that {}.", self.render_goal(&problem.goal)?);
        Ok(out)
    }

    /// Splits `text` at the first plan-end tag and parses one action per line.
    pub fn parse_plan(&self, text: &str, domain: &Domain, objects: &BTreeSet<String>) -> ParsedPlan {
        let raw = text.to_string();
        let Some(end) = text.find(self.file.plan_end_tag.as_str()) else {
            return ParsedPlan { raw, result: Err(Unparseable::MissingEndTag), methods: Vec::new() };
        };
        let mut steps = Vec::new();
        let mut methods = Vec::new();
        for (i, line) in text[..end].lines().enumerate() {
            let norm = normalize_line(line);
            if norm.is_empty() {
                continue;
            }
            let (name, args, method) = match self.match_template(&norm, objects) {
                Some((name, args)) => (name, args, ParseMethod::Template),
                None => match self.match_verb_noun(&norm, domain, objects) {
                    Ok((name, args)) => (name, args, ParseMethod::VerbNoun),
                    Err(reason) => {
                        let err = Unparseable::Line { line: i + 1, text: line.trim().to_string(), reason };
                        return ParsedPlan { raw, result: Err(err), methods };
                    }
                },
            };
            match domain.ground(&name, &args, objects) {
                Ok(g) => {
                    steps.push(g);
                    methods.push(method);
                }
                Err(e) => {
                    let err = Unparseable::Line { line: i + 1, text: line.trim().to_string(), reason: e.to_string() };
                    return ParsedPlan { raw, result: Err(err), methods };
                }
            }
        }
        ParsedPlan { raw, result: Ok(Plan::new(steps)), methods }
    }

    fn match_template(&self, line: &str, objects: &BTreeSet<String>) -> Option<(String, Vec<String>)> {
        self.file.actions.iter().zip(&self.actions).find_map(|(t, c)| {
            let args = c.capture(line)?;
            args.iter().all(|a| objects.contains(a)).then(|| (t.name.to_lowercase(), args))
        })
    }

    /// The first known verb selects candidate schemas; object mentions, in
    /// order, become the arguments; arity must single out one schema.
    fn match_verb_noun(
        &self,
        line: &str,
        domain: &Domain,
        objects: &BTreeSet<String>,
    ) -> Result<(String, Vec<String>), String> {
        let words: Vec<&str> = line
            .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_'))
            .filter(|w| !w.is_empty())
            .collect();
        let verb_of = |w: &str| -> Vec<&ActionTemplate> {
            self.file
                .actions
                .iter()
                .filter(|t| t.name.eq_ignore_ascii_case(w) || t.synonyms.iter().any(|s| s.eq_ignore_ascii_case(w)))
                .collect()
        };
        let Some(candidates) = words.iter().map(|w| verb_of(w)).find(|c| !c.is_empty()) else {
            return Err("no known verb".into());
        };
        let nouns: Vec<String> = words.iter().filter(|w| objects.contains(**w)).map(|w| w.to_string()).collect();
        let fitting: Vec<&ActionTemplate> = candidates
            .into_iter()
            .filter(|t| domain.schema(&t.name.to_lowercase()).is_some_and(|s| s.params.len() == nouns.len()))
            .collect();
        match fitting.as_slice() {
            [one] => Ok((one.name.to_lowercase(), nouns)),
            [] => Err(format!("no action takes {} objects", nouns.len())),
            _ => Err("ambiguous verb".into()),
        }
    }

    /// Recognized atoms of a state description, plus the sentences that
    /// matched no predicate template. Text after the state-end tag is ignored.
    pub fn parse_state_answer(&self, text: &str, objects: &BTreeSet<String>) -> StateAnswer {
        let body = match text.find(self.file.state_end_tag.as_str()) {
            Some(end) => &text[..end],
            None => text,
        };
        let mut answer = StateAnswer::default();
        for sentence in body.split(['.', '\n']) {
            let norm = normalize_line(sentence);
            if norm.is_empty() {
                continue;
            }
            let hit = self.file.predicates.iter().zip(&self.predicates).find_map(|(t, c)| {
                let args = c.capture(&norm)?;
                args.iter().all(|a| objects.contains(a)).then(|| Atom::new(t.name.to_lowercase(), args))
            });
            match hit {
                Some(atom) => {
                    answer.atoms.insert(atom);
                }
                None => answer.unrecognized.push(sentence.trim().to_string()),
            }
        }
        answer
    }
}

/// Lowercases, drops list markers and trailing punctuation, collapses spaces.
fn normalize_line(line: &str) -> String {
    let mut s = line.trim().to_lowercase();
    loop {
        let before = s.len();
        let t = s.trim_start_matches(['-', '*', '•', '>']).trim_start();
        let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        let t = if digits > 0 && t[digits..].starts_with(['.', ')', ':']) { t[digits + 1..].trim_start() } else { t };
        s = t.to_string();
        if s.len() == before {
            break;
        }
    }
    let s = s.trim_end_matches(['.', ',', ';', '!', ' ']);
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMethod {
    Template,
    VerbNoun,
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Unparseable {
    #[error("plan-end tag missing")]
    MissingEndTag,
    #[error("line {line} `{text}`: {reason}")]
    Line { line: usize, text: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedPlan {
    pub raw: String,
    pub result: Result<Plan, Unparseable>,
    /// How each parsed step was recognized.
    pub methods: Vec<ParseMethod>,
}

impl ParsedPlan {
    pub fn plan(&self) -> Option<&Plan> {
        self.result.as_ref().ok()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAnswer {
    pub atoms: BTreeSet<Atom>,
    pub unrecognized: Vec<String>,
}

/// A worked example inside a prompt: statement followed by its answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub statement: String,
    pub answer: String,
}

/// Preamble, each example as statement/header/answer, then the query
/// statement and a bare header for the model to continue.
pub fn render_prompt(preamble: &str, shots: &[Shot], query: &str, header: &str) -> String {
    let mut out = String::new();
    out.push_str(preamble.trim_end());
    out.push_str("\n\n");
    for s in shots {
        let _ = write!(out, "[STATEMENT]\n{}\n\n{header}\n{}\n\n", s.statement.trim_end(), s.answer.trim_end());
    }
    let _ = write!(out, "[STATEMENT]\n{}\n\n{header}\n", query.trim_end());
    out
}
