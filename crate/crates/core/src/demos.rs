//! Scripted demonstrations, the learned expert model, and augmentation with
//! successful executions.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly;
use crate::cem::Surrogate;
use crate::density::{fit_gmm_weighted, kmeans_init, DensityError, Gaussian, Gmm, WeightedSamples};
use crate::dmp::{first_violation, fit_weights, min_jerk, DmpConfig, Trajectory, TrajectoryParams, TrajectoryStep};
use crate::features::{trace, FeatureError, FeatureSchema, FeatureTrace};
use crate::pddl::{Domain, PredicateState, TaskGraph};
use crate::sim::{wrap_angle, Control, PlanarPose, RobotState, Scene, SimError, Validity};
use crate::task::ActionSpec;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("waypoint for `{action}` is infeasible: {source}")]
    Waypoint { action: String, source: SimError },
    #[error("scripted motion for `{action}` is invalid at step {step}: {validity:?}")]
    InvalidMotion { action: String, step: usize, validity: Validity },
    #[error("scripted grasp for `{action}` failed")]
    GraspFailed { action: String },
    #[error("edge {0} is not part of the task graph")]
    UnknownEdge(usize),
    #[error("no demonstrations for skill `{0}`")]
    MissingSkill(String),
    #[error("selection refers to unknown execution {0}")]
    UnknownExecution(usize),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("demonstration file: {0}")]
    Io(#[from] std::io::Error),
    #[error("demonstration file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub skill: String,
    pub label: String,
    pub objects: Vec<String>,
    pub constants: Vec<String>,
    pub before: PredicateState,
    pub after: PredicateState,
    pub trajectory: Trajectory,
    pub trace: FeatureTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub scene: Scene,
    pub segments: Vec<Segment>,
}

impl Demonstration {
    pub fn load(path: &Path) -> Result<Self, DemoError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DemoError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Whether consecutive segments share their predicate states.
    pub fn is_chained(&self) -> bool {
        self.segments.windows(2).all(|w| w[0].after == w[1].before)
    }
}

/// All `*.json` demonstrations in a directory, in file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<Demonstration>, DemoError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Demonstration::load(p)).collect()
}

/// Joint-space minimum-jerk motion over the DMP time grid.
pub fn min_jerk_motion(start: &RobotState, goal: &[f64], cfg: &DmpConfig, gripper: &crate::dmp::GripperProfile) -> Trajectory {
    let n = cfg.steps();
    let t_total = cfg.duration;
    let delta: Vec<f64> = goal.iter().zip(&start.joints).map(|(g, q)| g - q).collect();
    let steps = (0..=n)
        .map(|i| {
            let u = i as f64 / n as f64;
            let s = min_jerk(u);
            let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u) / t_total;
            let mut state = start.clone();
            state.joints = start.joints.iter().zip(&delta).map(|(q, d)| q + d * s).collect();
            state.velocities = delta.iter().map(|d| d * ds).collect();
            TrajectoryStep {
                t: i as f64 * cfg.dt,
                control: Control {
                    joint_velocities: state.velocities.clone(),
                    gripper: gripper.at(u),
                },
                state,
            }
        })
        .collect();
    Trajectory { steps }
}

/// Executes the scripted waypoint program along `path` (edge ids of `graph`).
/// Free-space waypoints are perturbed in the plane by `noise` (m, std).
pub fn script_demo<R: Rng + ?Sized>(
    id: &str,
    scene: &Scene,
    domain: &Domain,
    graph: &TaskGraph,
    path: &[usize],
    cfg: &DmpConfig,
    noise: f64,
    rng: &mut R,
) -> Result<Demonstration, DemoError> {
    let jitter = Normal::new(0.0, noise.max(0.0)).expect("finite std");
    let mut state = scene.initial_state();
    let mut segments = Vec::with_capacity(path.len());
    for &e in path {
        let edge = graph.edges.get(e).ok_or(DemoError::UnknownEdge(e))?;
        let spec = ActionSpec::from_action(domain, edge).ok_or(DemoError::UnknownEdge(e))?;
        let fail = |source| DemoError::Waypoint {
            action: spec.label.clone(),
            source,
        };
        let start = spec.prepare(scene, &state).ok_or_else(|| DemoError::GraspFailed {
            action: spec.label.clone(),
        })?;
        let face = spec.constants.first().map_or("", String::as_str);
        let mut target = assembly::skill_target(scene, &start, &spec.skill, &spec.objects, face).map_err(fail)?;
        if noise > 0.0 && assembly::is_free_space(&spec.skill) {
            target.x += jitter.sample(rng);
            target.y += jitter.sample(rng);
        }
        let goal = scene.arm.inverse_kinematics(&target, &start.joints).map_err(fail)?;
        let tau = min_jerk_motion(&start, &goal, cfg, &spec.gripper);
        if let Some((step, validity)) = first_violation(&tau, scene) {
            return Err(DemoError::InvalidMotion {
                action: spec.label.clone(),
                step,
                validity,
            });
        }
        let end = spec
            .finish(scene, tau.final_state().expect("non-empty motion"))
            .ok_or_else(|| DemoError::GraspFailed {
                action: spec.label.clone(),
            })?;
        let tr = trace(&spec.schema(), &spec.object_refs(), &tau, scene)?;
        segments.push(Segment {
            skill: spec.skill.clone(),
            label: spec.label.clone(),
            objects: spec.objects.clone(),
            constants: spec.constants.clone(),
            before: graph.states[edge.source].clone(),
            after: graph.states[edge.target].clone(),
            trajectory: tau,
            trace: tr,
        });
        state = end;
    }
    Ok(Demonstration {
        id: id.into(),
        scene: scene.clone(),
        segments,
    })
}

/// Empirical action frequencies per predicate state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ActionPrior {
    /// State key to action label to count.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    /// User-provided distributions that replace the counts at a state.
    #[serde(default)]
    pub overrides: BTreeMap<String, BTreeMap<String, f64>>,
    pub floor: f64,
}

impl ActionPrior {
    pub fn from_demos(demos: &[Demonstration], floor: f64) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for d in demos {
            for s in &d.segments {
                *counts
                    .entry(s.before.to_string())
                    .or_default()
                    .entry(s.label.clone())
                    .or_default() += 1;
            }
        }
        Self {
            counts,
            overrides: BTreeMap::new(),
            floor,
        }
    }

    /// Empirical `count / N_w` over `labels`, before smoothing.
    pub fn raw(&self, state: &PredicateState, labels: &[String]) -> Option<Vec<f64>> {
        let key = state.to_string();
        if let Some(o) = self.overrides.get(&key) {
            return Some(labels.iter().map(|l| o.get(l).copied().unwrap_or(0.0)).collect());
        }
        let c = self.counts.get(&key)?;
        let total: usize = c.values().sum();
        (total > 0).then(|| labels.iter().map(|l| *c.get(l).unwrap_or(&0) as f64 / total as f64).collect())
    }

    /// Smoothed distribution over `labels`: floor at `floor`, renormalize.
    /// States without demonstrations get a uniform distribution.
    pub fn distribution(&self, state: &PredicateState, labels: &[String]) -> Vec<f64> {
        if labels.is_empty() {
            return vec![];
        }
        let raw = match self.raw(state, labels) {
            Some(r) if r.iter().sum::<f64>() > 0.0 => r,
            _ => {
                warn!("no demonstrations from state `{state}`; using a uniform action prior");
                vec![1.0; labels.len()]
            }
        };
        let floored: Vec<f64> = raw.iter().map(|p| p.max(self.floor)).collect();
        let total: f64 = floored.iter().sum();
        floored.into_iter().map(|p| p / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillModel {
    pub schema: FeatureSchema,
    pub density: Gmm,
    /// Mean per-point training log-likelihood.
    pub training_log_likelihood: f64,
    /// Lowest per-step mean log density over the training segments.
    pub weakest_segment: f64,
}

/// Demonstrated mean parameters for a skill and constant binding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nominal {
    pub weights: Vec<Vec<f64>>,
    /// End-effector goal in the frame of the goal reference object.
    pub goal: PlanarPose,
    pub count: usize,
}

/// Standard deviations of the initial sampling distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub weight: f64,
    pub position: f64,
    pub heading: f64,
}

impl Default for Spread {
    fn default() -> Self {
        Self {
            weight: 1.0,
            position: 0.03,
            heading: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub components: usize,
    pub floor: f64,
    pub em_iters: usize,
    pub prior_floor: f64,
    pub ridge: f64,
    pub seed: u64,
    pub dmp: DmpConfig,
    #[serde(default)]
    pub spread: Spread,
    /// State key to action label to probability.
    #[serde(default)]
    pub prior_override: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            components: 3,
            floor: 1e-4,
            em_iters: 100,
            prior_floor: 1e-4,
            ridge: 1e-6,
            seed: 0,
            dmp: DmpConfig::default(),
            spread: Spread::default(),
            prior_override: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertModel {
    pub skills: BTreeMap<String, SkillModel>,
    pub nominals: BTreeMap<String, Nominal>,
    pub prior: ActionPrior,
    pub dmp: DmpConfig,
    pub spread: Spread,
    /// Demonstration ids used for fitting, then one line per augmentation round.
    pub provenance: Vec<String>,
}

impl ExpertModel {
    pub fn load(path: &Path) -> Result<Self, DemoError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DemoError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn skill(&self, name: &str) -> Option<&SkillModel> {
        self.skills.get(name)
    }

    /// Initial sampling distribution for an action: demonstrated mean weights,
    /// demonstrated goal re-expressed at the reference object's pose in `state`,
    /// broad diagonal covariance.
    pub fn initial_surrogate(&self, spec: &ActionSpec, scene: &Scene, state: &RobotState) -> Option<Surrogate> {
        let nominal = self.nominals.get(&spec.nominal_key())?;
        let reference = scene.object_pose(state, spec.goal_reference()?).ok()?;
        let xi = TrajectoryParams {
            weights: nominal.weights.clone(),
            goal: reference.compose(&nominal.goal),
        };
        let mean = xi.to_vector();
        let nw = mean.len() - 3;
        let var: Vec<f64> = (0..mean.len())
            .map(|i| match i {
                i if i < nw => self.spread.weight.powi(2),
                i if i < nw + 2 => self.spread.position.powi(2),
                _ => self.spread.heading.powi(2),
            })
            .collect();
        let g = Gaussian::new(DVector::from_vec(mean), DMatrix::from_diagonal(&DVector::from_vec(var))).ok()?;
        Some(Surrogate::Gaussian { density: g })
    }
}

fn segment_goal(seg: &Segment, scene: &Scene) -> Option<PlanarPose> {
    let end = seg.trajectory.final_state()?;
    let reference = scene.object_pose(end, seg.objects.last()?).ok()?;
    Some(reference.relative(&scene.arm.end_effector(&end.joints)))
}

pub fn fit_expert(demos: &[Demonstration], domain: &Domain, cfg: &ExpertConfig) -> Result<ExpertModel, DemoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pools: BTreeMap<String, (FeatureSchema, Vec<Vec<f64>>, Vec<(usize, usize)>)> = BTreeMap::new();
    let mut nominal_acc: BTreeMap<String, (Vec<Vec<f64>>, f64, f64, f64, f64, usize)> = BTreeMap::new();
    for d in demos {
        for seg in &d.segments {
            let roles: Vec<String> = domain
                .action(&seg.skill)
                .map(|a| {
                    a.parameters
                        .iter()
                        .filter(|p| !domain.constants.iter().any(|c| c.ty == p.ty))
                        .map(|p| p.name.trim_start_matches('?').to_string())
                        .collect()
                })
                .unwrap_or_default();
            let entry = pools
                .entry(seg.skill.clone())
                .or_insert_with(|| (FeatureSchema::new(seg.skill.clone(), roles), vec![], vec![]));
            let from = entry.1.len();
            entry.1.extend(seg.trace.vectors.iter().cloned());
            entry.2.push((from, entry.1.len()));

            let joints: Vec<Vec<f64>> = seg.trajectory.steps.iter().map(|s| s.state.joints.clone()).collect();
            let w = fit_weights(&joints, &cfg.dmp, cfg.ridge);
            let goal = segment_goal(seg, &d.scene).unwrap_or_default();
            let key = std::iter::once(seg.skill.as_str())
                .chain(seg.constants.iter().map(String::as_str))
                .collect::<Vec<_>>()
                .join(" ");
            let acc = nominal_acc
                .entry(key)
                .or_insert_with(|| (vec![vec![0.0; w[0].len()]; w.len()], 0.0, 0.0, 0.0, 0.0, 0));
            for (row, wr) in acc.0.iter_mut().zip(&w) {
                for (a, b) in row.iter_mut().zip(wr) {
                    *a += b;
                }
            }
            acc.1 += goal.x;
            acc.2 += goal.y;
            acc.3 += goal.theta.cos();
            acc.4 += goal.theta.sin();
            acc.5 += 1;
        }
    }
    let mut skills = BTreeMap::new();
    for (skill, (schema, points, ranges)) in pools {
        if points.is_empty() {
            return Err(DemoError::MissingSkill(skill));
        }
        let k = cfg.components.min(points.len()).max(1);
        let ws = WeightedSamples::uniform(points);
        let init = kmeans_init(&ws, k, cfg.floor, &mut rng)?;
        let fit = fit_gmm_weighted(&ws, k, &init, cfg.em_iters, cfg.floor)?;
        let density = fit.gmm;
        let per_point: Vec<f64> = ws.samples.iter().map(|x| density.log_pdf(x).unwrap_or(f64::NEG_INFINITY)).collect();
        let training_log_likelihood = per_point.iter().sum::<f64>() / per_point.len() as f64;
        let weakest_segment = ranges
            .iter()
            .map(|&(a, b)| crate::density::log_sum_exp(&per_point[a..b]) - ((b - a) as f64).ln())
            .fold(f64::INFINITY, f64::min);
        skills.insert(
            skill,
            SkillModel {
                schema,
                density,
                training_log_likelihood,
                weakest_segment,
            },
        );
    }
    let nominals = nominal_acc
        .into_iter()
        .map(|(key, (w, x, y, c, s, n))| {
            let nf = n as f64;
            (
                key,
                Nominal {
                    weights: w.into_iter().map(|r| r.into_iter().map(|v| v / nf).collect()).collect(),
                    goal: PlanarPose::new(x / nf, y / nf, wrap_angle(s.atan2(c))),
                    count: n,
                },
            )
        })
        .collect();
    let mut prior = ActionPrior::from_demos(demos, cfg.prior_floor);
    prior.overrides = cfg.prior_override.clone();
    Ok(ExpertModel {
        skills,
        nominals,
        prior,
        dmp: cfg.dmp.clone(),
        spread: cfg.spread.clone(),
        provenance: demos.iter().map(|d| d.id.clone()).collect(),
    })
}

/// Appends the selected executions to the training pool and refits. An empty
/// selection returns the current model unchanged.
pub fn augment(
    model: &ExpertModel,
    pool: &mut Vec<Demonstration>,
    executions: &[Demonstration],
    selection: &[usize],
    domain: &Domain,
    cfg: &ExpertConfig,
) -> Result<ExpertModel, DemoError> {
    if let Some(&bad) = selection.iter().find(|&&i| i >= executions.len()) {
        return Err(DemoError::UnknownExecution(bad));
    }
    if selection.is_empty() {
        return Ok(model.clone());
    }
    pool.extend(selection.iter().map(|&i| executions[i].clone()));
    let mut next = fit_expert(pool, domain, cfg)?;
    let ids: Vec<&str> = selection.iter().map(|&i| executions[i].id.as_str()).collect();
    next.provenance = model.provenance.clone();
    next.provenance.push(format!("augmented with {}", ids.join(", ")));
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::ground;

    struct Fixture {
        domain: Domain,
        graph: TaskGraph,
        scene: Scene,
    }

    fn fixture() -> Fixture {
        let domain = assembly::domain().unwrap();
        let graph = ground(&domain, &assembly::problem(&domain).unwrap(), 1000).unwrap();
        Fixture {
            domain,
            graph,
            scene: assembly::canonical_scene(),
        }
    }

    fn path_for(f: &Fixture, face: &str, node: &str) -> Vec<usize> {
        f.graph
            .goal_paths(8)
            .into_iter()
            .find(|p| {
                let labels: Vec<String> = p.iter().map(|e| f.graph.edges[*e].label()).collect();
                labels[0].contains(face) && labels[2].contains(node)
            })
            .unwrap()
    }

    #[test]
    fn every_face_and_node_is_scriptable() {
        let f = fixture();
        for face in assembly::FACES {
            for node in ["node1", "node2"] {
                let p = path_for(&f, face, node);
                let d = script_demo("d", &f.scene, &f.domain, &f.graph, &p, &DmpConfig::default(), 0.0, &mut ChaCha8Rng::seed_from_u64(0));
                let d = d.unwrap_or_else(|e| panic!("{face} {node}: {e}"));
                assert!(d.is_chained());
                assert_eq!(d.segments.len(), 5);
            }
        }
    }
}
