use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{ActionSchema, Atom, Domain, Literal, PddlError, Problem};

/// A canonical (sorted) set of true ground atoms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PredicateState(BTreeSet<Atom>);

impl PredicateState {
    pub fn new(atoms: impl IntoIterator<Item = Atom>) -> Self {
        Self(atoms.into_iter().collect())
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.0.iter()
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.0.contains(atom)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, add: &[Atom], del: &[Atom]) -> PredicateState {
        let mut next = self.0.clone();
        for d in del {
            next.remove(d);
        }
        next.extend(add.iter().cloned());
        PredicateState(next)
    }
}

impl std::fmt::Display for PredicateState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for a in &self.0 {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl Serialize for PredicateState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|a| a.to_string()))
    }
}

impl<'de> Deserialize<'de> for PredicateState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let items: Vec<String> = Vec::deserialize(d)?;
        items
            .iter()
            .map(|s| {
                let inner = s
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| serde::de::Error::custom(format!("malformed atom `{s}`")))?;
                let mut parts = inner.split_whitespace().map(str::to_string);
                let predicate = parts
                    .next()
                    .ok_or_else(|| serde::de::Error::custom("empty atom"))?;
                Ok(Atom {
                    predicate,
                    args: parts.collect(),
                })
            })
            .collect::<Result<BTreeSet<_>, _>>()
            .map(PredicateState)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedAction {
    pub schema: String,
    pub args: Vec<String>,
    pub source: usize,
    pub target: usize,
    /// Skill class used to look up the learned model.
    pub skill: String,
}

impl GroundedAction {
    pub fn label(&self) -> String {
        let mut s = format!("({}", self.schema);
        for a in &self.args {
            s.push(' ');
            s.push_str(a);
        }
        s.push(')');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub states: Vec<PredicateState>,
    pub edges: Vec<GroundedAction>,
    pub initial: usize,
    pub goals: Vec<usize>,
    /// Edge ids leaving each state, in lexicographic action order.
    pub outgoing: Vec<Vec<usize>>,
}

impl TaskGraph {
    pub fn actions_from(&self, state: usize) -> &[usize] {
        &self.outgoing[state]
    }

    pub fn successor(&self, edge: usize) -> usize {
        self.edges[edge].target
    }

    pub fn is_goal(&self, state: usize) -> bool {
        self.goals.binary_search(&state).is_ok()
    }

    /// All edge paths from the initial state that end in a goal state,
    /// never passing through a goal earlier, with at most `max_len` edges.
    pub fn goal_paths(&self, max_len: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.collect_paths(self.initial, max_len, &mut path, &mut out);
        out
    }

    fn collect_paths(&self, w: usize, budget: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if self.is_goal(w) {
            out.push(path.clone());
            return;
        }
        if budget == 0 {
            return;
        }
        for &e in self.actions_from(w) {
            if path.iter().any(|p| self.edges[*p].source == self.edges[e].target) {
                continue;
            }
            path.push(e);
            self.collect_paths(self.edges[e].target, budget - 1, path, out);
            path.pop();
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    /// Graphviz text with one node per state and one labeled edge per action.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph task {\n  rankdir=LR;\n");
        for (i, st) in self.states.iter().enumerate() {
            let label: Vec<String> = st.atoms().map(|a| a.to_string()).collect();
            let shape = if self.is_goal(i) {
                "doublecircle"
            } else if i == self.initial {
                "box"
            } else {
                "ellipse"
            };
            let _ = writeln!(s, "  w{i} [shape={shape}, label=\"w{i}\\n{}\"];", label.join("\\n"));
        }
        for e in &self.edges {
            let _ = writeln!(s, "  w{} -> w{} [label=\"{}\"];", e.source, e.target, e.label());
        }
        s.push_str("}\n");
        s
    }
}

struct Grounding {
    schema: String,
    args: Vec<String>,
    pre_pos: Vec<Atom>,
    pre_neg: Vec<Atom>,
    add: Vec<Atom>,
    del: Vec<Atom>,
}

fn substitute(atom: &Atom, binding: &BTreeMap<&str, &str>) -> Atom {
    Atom {
        predicate: atom.predicate.clone(),
        args: atom
            .args
            .iter()
            .map(|a| binding.get(a.as_str()).map_or_else(|| a.clone(), |v| v.to_string()))
            .collect(),
    }
}

fn split(lits: &[Literal], binding: &BTreeMap<&str, &str>, feasible: &BTreeSet<&str>) -> (Vec<Atom>, Vec<Atom>, bool) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut contradicts = false;
    for l in lits {
        let atom = substitute(&l.atom, binding);
        if feasible.contains(atom.predicate.as_str()) {
            contradicts |= !l.positive;
            continue;
        }
        if l.positive {
            pos.push(atom);
        } else {
            neg.push(atom);
        }
    }
    (pos, neg, contradicts)
}

/// All type-respecting bindings of each schema, schemas by name and bindings
/// in lexicographic object order.
fn groundings(dom: &Domain, prob: &Problem) -> Vec<Grounding> {
    let mut objects: Vec<(&str, &str)> = dom
        .constants
        .iter()
        .chain(&prob.objects)
        .map(|o| (o.name.as_str(), o.ty.as_str()))
        .collect();
    objects.sort();
    let feasible: BTreeSet<&str> = prob.feasible.iter().map(String::as_str).collect();
    let mut schemas: Vec<&ActionSchema> = dom.actions.iter().collect();
    schemas.sort_by(|a, b| a.name.cmp(&b.name));
    let mut out = Vec::new();
    for schema in schemas {
        let domains: Vec<Vec<&str>> = schema
            .parameters
            .iter()
            .map(|p| {
                objects
                    .iter()
                    .filter(|(_, ty)| dom.is_subtype(ty, &p.ty))
                    .map(|(n, _)| *n)
                    .collect()
            })
            .collect();
        if domains.iter().any(Vec::is_empty) {
            continue;
        }
        let mut idx = vec![0usize; domains.len()];
        'bindings: loop {
            let args: Vec<&str> = idx.iter().zip(&domains).map(|(i, d)| d[*i]).collect();
            let binding: BTreeMap<&str, &str> = schema
                .parameters
                .iter()
                .map(|p| p.name.as_str())
                .zip(args.iter().copied())
                .collect();
            let (pre_pos, pre_neg, impossible) = split(&schema.precondition, &binding, &feasible);
            let (add, del, _) = split(&schema.effect, &binding, &feasible);
            if !impossible {
                out.push(Grounding {
                    schema: schema.name.clone(),
                    args: args.iter().map(|s| s.to_string()).collect(),
                    pre_pos,
                    pre_neg,
                    add,
                    del,
                });
            }
            // Odometer increment, last parameter fastest.
            let mut k = idx.len();
            loop {
                if k == 0 {
                    break 'bindings;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < domains[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
    out
}

fn satisfies(state: &PredicateState, goal: &[Literal], feasible: &BTreeSet<&str>) -> bool {
    goal.iter().all(|l| {
        if feasible.contains(l.atom.predicate.as_str()) {
            l.positive
        } else {
            state.contains(&l.atom) == l.positive
        }
    })
}

/// Breadth-first closure of the states reachable from `init`.
pub fn ground(dom: &Domain, prob: &Problem, max_states: usize) -> Result<TaskGraph, PddlError> {
    let feasible: BTreeSet<&str> = prob.feasible.iter().map(String::as_str).collect();
    let actions = groundings(dom, prob);
    let init = PredicateState::new(
        prob.init
            .iter()
            .filter(|a| !feasible.contains(a.predicate.as_str()))
            .cloned(),
    );
    let mut index: BTreeMap<PredicateState, usize> = BTreeMap::new();
    let mut states = vec![init.clone()];
    index.insert(init, 0);
    let mut edges = Vec::new();
    let mut outgoing: Vec<Vec<usize>> = vec![vec![]];
    let mut queue = VecDeque::from([0usize]);
    if max_states == 0 {
        return Err(PddlError::StateSpaceOverflow { limit: 0 });
    }
    while let Some(w) = queue.pop_front() {
        for g in &actions {
            let s = &states[w];
            if !g.pre_pos.iter().all(|a| s.contains(a)) || g.pre_neg.iter().any(|a| s.contains(a)) {
                continue;
            }
            let next = s.apply(&g.add, &g.del);
            let target = match index.get(&next) {
                Some(&t) => t,
                None => {
                    if states.len() >= max_states {
                        return Err(PddlError::StateSpaceOverflow { limit: max_states });
                    }
                    let t = states.len();
                    index.insert(next.clone(), t);
                    states.push(next);
                    outgoing.push(vec![]);
                    queue.push_back(t);
                    t
                }
            };
            outgoing[w].push(edges.len());
            edges.push(GroundedAction {
                schema: g.schema.clone(),
                args: g.args.clone(),
                source: w,
                target,
                skill: g.schema.clone(),
            });
        }
    }
    let goals: Vec<usize> = (0..states.len())
        .filter(|&i| satisfies(&states[i], &prob.goal, &feasible))
        .collect();
    if goals.is_empty() {
        return Err(PddlError::GoalUnreachable { explored: states.len() });
    }
    Ok(TaskGraph {
        states,
        edges,
        initial: 0,
        goals,
        outgoing,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{parse_domain, parse_problem};
    use super::*;

    const SWITCH: &str = "(define (domain sw) (:predicates (on) (off))
        (:action flip-on :parameters () :precondition (off) :effect (and (on) (not (off))))
        (:action flip-off :parameters () :precondition (on) :effect (and (off) (not (on)))))";

    #[test]
    fn init_already_goal() {
        let d = parse_domain(SWITCH).unwrap();
        let p = parse_problem("(define (problem p) (:domain sw) (:init (on)) (:goal (on)))", &d).unwrap();
        let g = ground(&d, &p, 10).unwrap();
        assert!(g.is_goal(g.initial));
        assert_eq!(g.goal_paths(5), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn empty_goal_marks_initial() {
        let d = parse_domain(SWITCH).unwrap();
        let p = parse_problem("(define (problem p) (:domain sw) (:init (off)))", &d).unwrap();
        assert!(p.goal.is_empty());
        let g = ground(&d, &p, 10).unwrap();
        assert!(g.is_goal(g.initial));
    }

    #[test]
    fn unsatisfiable_goal() {
        let d = parse_domain(SWITCH).unwrap();
        let p = parse_problem("(define (problem p) (:domain sw) (:init (off)) (:goal (and (on) (off))))", &d).unwrap();
        assert_eq!(ground(&d, &p, 10), Err(PddlError::GoalUnreachable { explored: 2 }));
    }

    #[test]
    fn overflow() {
        let d = parse_domain(SWITCH).unwrap();
        let p = parse_problem("(define (problem p) (:domain sw) (:init (off)) (:goal (on)))", &d).unwrap();
        assert_eq!(ground(&d, &p, 1), Err(PddlError::StateSpaceOverflow { limit: 1 }));
        let g = ground(&d, &p, 2).unwrap();
        assert_eq!(g.states.len(), 2);
        assert_eq!(g.edges.len(), 2);
    }

    #[test]
    fn feasibility_predicates_hold_everywhere() {
        let d = parse_domain(
            "(define (domain f) (:predicates (reachable) (done))
             (:action go :parameters () :precondition (and (reachable) (not (done))) :effect (done)))",
        )
        .unwrap();
        let p = parse_problem("(define (problem p) (:domain f) (:goal (done)) (:feasible reachable))", &d).unwrap();
        let g = ground(&d, &p, 10).unwrap();
        assert_eq!(g.states.len(), 2);
        assert!(g.states.iter().all(|s| !s.atoms().any(|a| a.predicate == "reachable")));
    }

    #[test]
    fn state_json_round_trip() {
        let s = PredicateState::new([
            Atom {
                predicate: "at".into(),
                args: vec!["a".into(), "b".into()],
            },
            Atom {
                predicate: "free".into(),
                args: vec![],
            },
        ]);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"["(at a b)","(free)"]"#);
        assert_eq!(serde_json::from_str::<PredicateState>(&text).unwrap(), s);
    }
}
