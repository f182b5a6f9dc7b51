//! STRIPS PDDL with typing and negative preconditions: parsing, printing and
//! grounding into the reachable graph of predicate states.

mod ground;
mod parse;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ground::{ground, GroundedAction, PredicateState, TaskGraph};
pub use parse::{parse_domain, parse_problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PddlError {
    #[error("{at}: unexpected character `{ch}`")]
    Lexical { ch: char, at: Location },
    #[error("{at}: {message}")]
    Syntax { message: String, at: Location },
    #[error("{at}: unknown keyword `{keyword}`")]
    UnknownKeyword { keyword: String, at: Location },
    #[error("{at}: undeclared predicate `{name}`")]
    UndeclaredPredicate { name: String, at: Location },
    #[error("{at}: predicate `{name}` takes {expected} arguments, got {got}")]
    ArityMismatch {
        name: String,
        expected: usize,
        got: usize,
        at: Location,
    },
    #[error("{at}: undeclared type `{name}`")]
    UndeclaredType { name: String, at: Location },
    #[error("{at}: undeclared object `{name}`")]
    UndeclaredObject { name: String, at: Location },
    #[error("{at}: variable `{name}` is not a parameter of the action")]
    UnboundVariable { name: String, at: Location },
    #[error("{at}: `{object}` has type `{actual}` but `{expected}` is required")]
    TypeMismatch {
        object: String,
        expected: String,
        actual: String,
        at: Location,
    },
    #[error("{at}: duplicate {what} `{name}`")]
    Duplicate {
        what: &'static str,
        name: String,
        at: Location,
    },
    #[error("reachable state space exceeds {limit} states")]
    StateSpaceOverflow { limit: usize },
    #[error("goal is unreachable from the initial state ({explored} states explored)")]
    GoalUnreachable { explored: usize },
}

pub const ROOT_TYPE: &str = "object";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedName {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeDecl {
    pub name: String,
    pub parent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateDecl {
    pub name: String,
    pub params: Vec<TypedName>,
}

/// A predicate applied to variables (`?x`) or constants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub atom: Atom,
    pub positive: bool,
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            write!(f, "{}", self.atom)
        } else {
            write!(f, "(not {})", self.atom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSchema {
    pub name: String,
    pub parameters: Vec<TypedName>,
    pub precondition: Vec<Literal>,
    /// Positive literals are add effects, negative ones delete effects.
    pub effect: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub requirements: Vec<String>,
    pub types: Vec<TypeDecl>,
    pub constants: Vec<TypedName>,
    pub predicates: Vec<PredicateDecl>,
    pub actions: Vec<ActionSchema>,
}

impl Domain {
    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn has_type(&self, name: &str) -> bool {
        name == ROOT_TYPE || self.types.iter().any(|t| t.name == name)
    }

    /// True when `ty` equals `ancestor` or inherits from it.
    pub fn is_subtype(&self, ty: &str, ancestor: &str) -> bool {
        let mut cur = ty;
        for _ in 0..=self.types.len() {
            if cur == ancestor {
                return true;
            }
            match self.types.iter().find(|t| t.name == cur) {
                Some(t) => cur = &t.parent,
                None => return ancestor == ROOT_TYPE,
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub name: String,
    pub domain: String,
    pub objects: Vec<TypedName>,
    pub init: BTreeSet<Atom>,
    pub goal: Vec<Literal>,
    /// Predicates assumed true everywhere during grounding.
    pub feasible: Vec<String>,
}

fn write_typed(f: &mut fmt::Formatter<'_>, names: &[TypedName]) -> fmt::Result {
    let mut i = 0;
    while i < names.len() {
        let ty = &names[i].ty;
        let mut j = i;
        while j < names.len() && &names[j].ty == ty {
            if j > i {
                write!(f, " ")?;
            }
            write!(f, "{}", names[j].name)?;
            j += 1;
        }
        write!(f, " - {ty}")?;
        if j < names.len() {
            write!(f, " ")?;
        }
        i = j;
    }
    Ok(())
}

fn write_conjunction(f: &mut fmt::Formatter<'_>, lits: &[Literal]) -> fmt::Result {
    write!(f, "(and")?;
    for l in lits {
        write!(f, " {l}")?;
    }
    write!(f, ")")
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "(define (domain {})", self.name)?;
        if !self.requirements.is_empty() {
            writeln!(f, "  (:requirements {})", self.requirements.join(" "))?;
        }
        if !self.types.is_empty() {
            write!(f, "  (:types")?;
            for t in &self.types {
                write!(f, " {} - {}", t.name, t.parent)?;
            }
            writeln!(f, ")")?;
        }
        if !self.constants.is_empty() {
            write!(f, "  (:constants ")?;
            write_typed(f, &self.constants)?;
            writeln!(f, ")")?;
        }
        if !self.predicates.is_empty() {
            writeln!(f, "  (:predicates")?;
            for p in &self.predicates {
                write!(f, "    ({}", p.name)?;
                if !p.params.is_empty() {
                    write!(f, " ")?;
                    write_typed(f, &p.params)?;
                }
                writeln!(f, ")")?;
            }
            writeln!(f, "  )")?;
        }
        for a in &self.actions {
            writeln!(f, "  (:action {}", a.name)?;
            write!(f, "    :parameters (")?;
            write_typed(f, &a.parameters)?;
            writeln!(f, ")")?;
            write!(f, "    :precondition ")?;
            write_conjunction(f, &a.precondition)?;
            write!(f, "\n    :effect ")?;
            write_conjunction(f, &a.effect)?;
            writeln!(f, ")")?;
        }
        writeln!(f, ")")
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "(define (problem {})", self.name)?;
        writeln!(f, "  (:domain {})", self.domain)?;
        if !self.objects.is_empty() {
            write!(f, "  (:objects ")?;
            write_typed(f, &self.objects)?;
            writeln!(f, ")")?;
        }
        write!(f, "  (:init")?;
        for a in &self.init {
            write!(f, " {a}")?;
        }
        writeln!(f, ")")?;
        write!(f, "  (:goal ")?;
        write_conjunction(f, &self.goal)?;
        writeln!(f, ")")?;
        if !self.feasible.is_empty() {
            writeln!(f, "  (:feasible {})", self.feasible.join(" "))?;
        }
        writeln!(f, ")")
    }
}
