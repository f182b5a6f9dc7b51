use std::collections::{BTreeMap, BTreeSet, VecDeque};

use imitplan::assembly;
use imitplan::pddl::{ground, parse_domain, parse_problem, TaskGraph};

const BLOCKS_DOMAIN: &str = "
(define (domain blocks)
  (:requirements :strips :typing)
  (:types block)
  (:predicates (on ?x - block ?y - block) (ontable ?x - block) (clear ?x - block)
               (handempty) (holding ?x - block))
  (:action pick-up
    :parameters (?x - block)
    :precondition (and (clear ?x) (ontable ?x) (handempty))
    :effect (and (not (ontable ?x)) (not (clear ?x)) (not (handempty)) (holding ?x)))
  (:action put-down
    :parameters (?x - block)
    :precondition (holding ?x)
    :effect (and (not (holding ?x)) (clear ?x) (handempty) (ontable ?x)))
  (:action stack
    :parameters (?x - block ?y - block)
    :precondition (and (holding ?x) (clear ?y))
    :effect (and (not (holding ?x)) (not (clear ?y)) (clear ?x) (handempty) (on ?x ?y)))
  (:action unstack
    :parameters (?x - block ?y - block)
    :precondition (and (on ?x ?y) (clear ?x) (handempty))
    :effect (and (holding ?x) (clear ?y) (not (clear ?x)) (not (handempty)) (not (on ?x ?y)))))
";

fn blocks_problem(n: usize) -> String {
    let names: Vec<String> = (0..n).map(|i| format!("b{i}")).collect();
    let init: Vec<String> = names
        .iter()
        .flat_map(|b| [format!("(ontable {b})"), format!("(clear {b})")])
        .collect();
    format!(
        "(define (problem tower) (:domain blocks) (:objects {} - block) (:init (handempty) {}) (:goal (and (on b0 b1))))",
        names.join(" "),
        init.join(" ")
    )
}

/// Independent model: a state is the set of towers (bottom first) plus the held block.
type World = (BTreeSet<Vec<usize>>, Option<usize>);

fn successors(w: &World) -> Vec<World> {
    let (towers, held) = w;
    let mut out = Vec::new();
    match held {
        None => {
            for t in towers {
                let mut rest = towers.clone();
                rest.remove(t);
                let mut t2 = t.clone();
                let top = t2.pop().unwrap();
                if !t2.is_empty() {
                    rest.insert(t2);
                }
                out.push((rest, Some(top)));
            }
        }
        Some(b) => {
            let mut down = towers.clone();
            down.insert(vec![*b]);
            out.push((down, None));
            for t in towers {
                let mut rest = towers.clone();
                rest.remove(t);
                let mut t2 = t.clone();
                t2.push(*b);
                rest.insert(t2);
                out.push((rest, None));
            }
        }
    }
    out
}

fn brute_force(n: usize) -> (usize, usize, usize) {
    let start: World = ((0..n).map(|b| vec![b]).collect(), None);
    let mut seen = BTreeSet::from([start.clone()]);
    let mut queue = VecDeque::from([start]);
    let mut edges = 0;
    while let Some(w) = queue.pop_front() {
        for s in successors(&w) {
            edges += 1;
            if seen.insert(s.clone()) {
                queue.push_back(s);
            }
        }
    }
    let goals = seen
        .iter()
        .filter(|(towers, _)| towers.iter().any(|t| t.windows(2).any(|p| p[0] == 1 && p[1] == 0)))
        .count();
    (seen.len(), edges, goals)
}

fn blocks_graph(n: usize) -> TaskGraph {
    let d = parse_domain(BLOCKS_DOMAIN).unwrap();
    let p = parse_problem(&blocks_problem(n), &d).unwrap();
    ground(&d, &p, 100_000).unwrap()
}

#[test]
fn blocks_world_matches_brute_force_enumeration() {
    for n in 2..=4 {
        let g = blocks_graph(n);
        let (states, edges, goals) = brute_force(n);
        assert_eq!(g.states.len(), states, "states for {n} blocks");
        assert_eq!(g.edges.len(), edges, "edges for {n} blocks");
        assert_eq!(g.goals.len(), goals, "goals for {n} blocks");
    }
    assert_eq!(blocks_graph(3).states.len(), 22);
}

#[test]
fn assembly_graph_shape() {
    let d = assembly::domain().unwrap();
    let g = ground(&d, &assembly::problem(&d).unwrap(), 1000).unwrap();
    // 1 start, 3 approached, 3 held, 6 aligned, 6 placed, and one released state per node.
    assert_eq!(g.states.len(), 21);
    assert_eq!(g.goals.len(), 2);
    let root: Vec<String> = g.actions_from(g.initial).iter().map(|e| g.edges[*e].label()).collect();
    assert_eq!(root.len(), 3);
    assert!(root.iter().all(|l| l.starts_with("(approach link1")));
    let paths = g.goal_paths(10);
    assert_eq!(paths.len(), 6);
    assert!(paths.iter().all(|p| p.len() == 5));
}

#[test]
fn grounding_is_deterministic_and_serializable() {
    let d = assembly::domain().unwrap();
    let p = assembly::problem(&d).unwrap();
    let a = ground(&d, &p, 1000).unwrap();
    let b = ground(&d, &p, 1000).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
    let back: TaskGraph = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn edges_connect_states_by_their_effects() {
    let g = blocks_graph(3);
    let mut out_degree: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, e) in g.edges.iter().enumerate() {
        assert!(g.outgoing[e.source].contains(&i));
        assert_ne!(e.source, e.target);
        *out_degree.entry(e.source).or_default() += 1;
    }
    for (s, out) in g.outgoing.iter().enumerate() {
        assert_eq!(out.len(), out_degree.get(&s).copied().unwrap_or(0));
    }
}

#[test]
fn state_budget_is_enforced() {
    let d = parse_domain(BLOCKS_DOMAIN).unwrap();
    let p = parse_problem(&blocks_problem(4), &d).unwrap();
    assert!(ground(&d, &p, 10).is_err());
}
