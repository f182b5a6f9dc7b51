//! Building planning problems for the assembly task from a fitted expert, and
//! running the full planner or one of its ablations on a scene.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demos::{Demonstration, ExpertModel, Segment};
use crate::features::trace;
use crate::pddl::{Domain, TaskGraph};
use crate::sim::{RobotState, Scene};
use crate::task::{ActionModel, ActionSpec};
use crate::treeplan::{plan, plan_receding, PlanProblem, PlanResult, PlannerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Tree search over all symbolic options with full lookahead.
    Full,
    /// All options, one action of lookahead.
    NoLookahead,
    /// A single randomly chosen symbolic plan, full lookahead along it.
    NoOptions,
    /// A single randomly chosen symbolic plan, each action optimized on its own.
    Baseline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::NoLookahead, Mode::NoOptions, Mode::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoLookahead => "no-lookahead",
            Mode::NoOptions => "no-options",
            Mode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected full, no-lookahead, no-options or baseline)"))
    }
}

/// Planner settings shared by all modes. `horizon` in `planner` is used by the
/// full and no-options modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub planner: PlannerConfig,
    /// Executed actions whose per-step mean log density falls more than this
    /// below the weakest demonstrated segment count as failures.
    #[serde(default)]
    pub likelihood_slack: Option<f64>,
    /// Re-optimize from the reached state after every executed action. When
    /// off, the whole sequence is extracted from a single planning pass.
    #[serde(default = "yes")]
    pub replan: bool,
}

fn yes() -> bool {
    true
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            likelihood_slack: None,
            replan: true,
        }
    }
}

/// Allowed-action restriction: every outgoing edge, or only the edges of one path.
pub fn build_problem<'a>(
    scene: &'a Scene,
    domain: &Domain,
    graph: &'a TaskGraph,
    expert: &'a ExpertModel,
    path: Option<&[usize]>,
    likelihood_slack: Option<f64>,
) -> PlanProblem<'a> {
    let start = scene.initial_state();
    let mut models: Vec<Option<Box<dyn crate::cem::SampleModel + 'a>>> = Vec::with_capacity(graph.edges.len());
    let mut initial = Vec::with_capacity(graph.edges.len());
    let mut thresholds = Vec::with_capacity(graph.edges.len());
    for e in &graph.edges {
        let spec = ActionSpec::from_action(domain, e);
        let skill = expert.skill(&e.skill);
        match (spec, skill) {
            (Some(spec), Some(skill)) => {
                initial.push(expert.initial_surrogate(&spec, scene, &start));
                thresholds.push(likelihood_slack.map_or(f64::NEG_INFINITY, |d| skill.weakest_segment - d));
                models.push(Some(Box::new(ActionModel::new(scene, spec, &skill.density, expert.dmp.clone()))));
            }
            _ => {
                initial.push(None);
                thresholds.push(f64::NEG_INFINITY);
                models.push(None);
            }
        }
    }
    let actions: Vec<Vec<usize>> = graph
        .outgoing
        .iter()
        .map(|out| {
            out.iter()
                .copied()
                .filter(|a| models[*a].is_some() && initial[*a].is_some())
                .filter(|a| path.is_none_or(|p| p.contains(a)))
                .collect()
        })
        .collect();
    let prior = actions
        .iter()
        .enumerate()
        .map(|(w, acts)| {
            let labels: Vec<String> = acts.iter().map(|a| graph.edges[*a].label()).collect();
            expert.prior.distribution(&graph.states[w], &labels)
        })
        .collect();
    PlanProblem {
        graph,
        models,
        initial,
        actions,
        prior,
        thresholds,
    }
}

/// Uniformly chosen symbolic plan from the initial state to a goal.
pub fn random_goal_path<R: Rng + ?Sized>(graph: &TaskGraph, rng: &mut R) -> Option<Vec<usize>> {
    graph.goal_paths(graph.states.len()).choose(rng).cloned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub mode: Mode,
    pub result: PlanResult,
    /// `None` when nothing was placed.
    pub placement_error: Option<PlacementError>,
}

impl Trial {
    pub fn succeeded(&self) -> bool {
        self.result.succeeded()
    }

    pub fn labels(&self) -> Vec<String> {
        self.result.actions.iter().map(|a| a.label.clone()).collect()
    }
}

/// Runs one mode on one scene. The single-plan modes follow `path` when given,
/// otherwise a path drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn run_mode<R: Rng + ?Sized>(
    mode: Mode,
    scene: &Scene,
    domain: &Domain,
    graph: &TaskGraph,
    expert: &ExpertModel,
    cfg: &PipelineConfig,
    path: Option<&[usize]>,
    rng: &mut R,
) -> Trial {
    let start = scene.initial_state();
    let path = match mode {
        Mode::NoOptions | Mode::Baseline => path.map(<[usize]>::to_vec).or_else(|| random_goal_path(graph, rng)),
        _ => None,
    };
    let problem = build_problem(scene, domain, graph, expert, path.as_deref(), cfg.likelihood_slack);
    let mut pc = cfg.planner.clone();
    match mode {
        Mode::Full | Mode::NoOptions => {}
        Mode::NoLookahead => pc.horizon = 1,
        Mode::Baseline => pc.horizon = 0,
    }
    let result = if cfg.replan {
        plan_receding(&problem, &start, &pc, rng)
    } else {
        plan(&problem, &start, &pc, rng)
    };
    let placement_error = placement_error(scene, domain, graph, &result, &start);
    Trial {
        mode,
        result,
        placement_error,
    }
}

/// Offset of the placed link from its ideal mated position, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementError {
    pub dx: f64,
    pub dy: f64,
    pub distance: f64,
}

/// Where the link ended up versus where the executed place action should have put it.
pub fn placement_error(scene: &Scene, domain: &Domain, graph: &TaskGraph, result: &PlanResult, start: &RobotState) -> Option<PlacementError> {
    let place = result
        .actions
        .iter()
        .filter_map(|a| ActionSpec::from_action(domain, &graph.edges[a.edge]))
        .find(|s| s.skill == "place")?;
    let link = place.objects.first()?;
    let node = place.objects.get(1)?;
    let face = place.constants.first()?;
    let end = result.actions.last().map_or(start, |a| &a.end);
    let actual = scene.object_pose(end, link).ok()?;
    let ideal = crate::assembly::mated_link_pose(scene, end, node, face).ok()?;
    let d = actual.position() - ideal.position();
    Some(PlacementError {
        dx: d.x,
        dy: d.y,
        distance: d.norm(),
    })
}

/// Converts an executed plan into a demonstration usable for refitting.
pub fn execution_to_demo(id: &str, scene: &Scene, domain: &Domain, graph: &TaskGraph, result: &PlanResult) -> Option<Demonstration> {
    let mut segments = Vec::with_capacity(result.actions.len());
    for a in &result.actions {
        let edge = &graph.edges[a.edge];
        let spec = ActionSpec::from_action(domain, edge)?;
        let tr = trace(&spec.schema(), &spec.object_refs(), &a.trajectory, scene).ok()?;
        segments.push(Segment {
            skill: spec.skill.clone(),
            label: spec.label.clone(),
            objects: spec.objects.clone(),
            constants: spec.constants.clone(),
            before: graph.states[edge.source].clone(),
            after: graph.states[edge.target].clone(),
            trajectory: a.trajectory.clone(),
            trace: tr,
        });
    }
    Some(Demonstration {
        id: id.into(),
        scene: scene.clone(),
        segments,
    })
}
