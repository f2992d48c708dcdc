use std::collections::BTreeSet;
use std::fmt::{self, Write};

use super::{Atom, Domain, Problem};

fn conj(atoms: impl IntoIterator<Item = String>) -> String {
    let parts: Vec<String> = atoms.into_iter().collect();
    match parts.len() {
        0 => "()".to_string(),
        _ => format!("(and {})", parts.join(" ")),
    }
}

fn atoms(set: &BTreeSet<Atom>) -> impl Iterator<Item = String> + '_ {
    set.iter().map(Atom::to_string)
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "(define (domain {})", self.name)?;
        if !self.requirements.is_empty() {
            writeln!(f, "  (:requirements {})", self.requirements.join(" "))?;
        }
        if !self.predicates.is_empty() {
            f.write_str("  (:predicates")?;
            for p in &self.predicates {
                write!(f, " ({}", p.name)?;
                for v in &p.params {
                    write!(f, " {v}")?;
                }
                f.write_str(")")?;
            }
            f.write_str(")\n")?;
        }
        if self.has_costs() {
            writeln!(f, "  (:functions (total-cost) - number)")?;
        }
        for s in &self.schemas {
            writeln!(f, "  (:action {}", s.name)?;
            writeln!(f, "    :parameters ({})", s.params.join(" "))?;
            writeln!(f, "    :precondition {}", conj(atoms(&s.precond)))?;
            let mut effects: Vec<String> = atoms(&s.add).collect();
            effects.extend(s.del.iter().map(|a| format!("(not {a})")));
            if self.has_costs() {
                effects.push(format!("(increase (total-cost) {})", s.cost));
            }
            writeln!(f, "    :effect {})", conj(effects))?;
        }
        f.write_str(")\n")
    }
}

impl Problem {
    /// Standard PDDL problem text. Goal atoms keep their presentation order.
    pub fn to_pddl(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "(define (problem {})", self.name);
        let _ = writeln!(out, "  (:domain {})", self.domain_name);
        let objs: Vec<&str> = self.objects.iter().map(String::as_str).collect();
        let _ = writeln!(out, "  (:objects {})", objs.join(" "));
        out.push_str("  (:init");
        if self.metric {
            out.push_str("\n    (= (total-cost) 0)");
        }
        for a in self.init.atoms() {
            let _ = write!(out, "\n    {a}");
        }
        out.push_str(")\n");
        let goal: Vec<String> = self.goal.iter().map(Atom::to_string).collect();
        let _ = writeln!(out, "  (:goal {})", conj(goal));
        if self.metric {
            out.push_str("  (:metric minimize (total-cost))\n");
        }
        out.push_str(")\n");
        out
    }
}
