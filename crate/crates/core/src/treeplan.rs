//! Recursive sampling over the symbolic action tree: samples are allocated
//! across actions by a per-state action distribution, expert likelihoods are
//! propagated back as action and state values, and both the action
//! distributions and per-action trajectory distributions are refined.

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cem::{has_converged, keep_best, sample_valid, update, weigh, CemConfig, SampleModel, StartSet, Surrogate};
use crate::density::{log_sum_exp, normalize_log_weights};
use crate::dmp::Trajectory;
use crate::pddl::TaskGraph;
use crate::sim::RobotState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub cem: CemConfig,
    pub horizon: usize,
    /// Lower bound applied to action probabilities before renormalizing.
    pub policy_floor: f64,
    /// Valid samples needed before an action's trajectory distribution is refit.
    pub min_update_samples: usize,
    /// Keep per-node value records and surrogate snapshots.
    #[serde(default)]
    pub record: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            cem: CemConfig::default(),
            horizon: 5,
            policy_floor: 1e-4,
            min_update_samples: 8,
            record: false,
        }
    }
}

/// Everything the planner needs about one task instance. Indexed by edge id
/// (`models`, `initial`, `thresholds`) or by state id (`actions`, `prior`).
pub struct PlanProblem<'a> {
    pub graph: &'a TaskGraph,
    pub models: Vec<Option<Box<dyn SampleModel + 'a>>>,
    pub initial: Vec<Option<Surrogate>>,
    /// Allowed actions per state.
    pub actions: Vec<Vec<usize>>,
    /// Expert action probabilities aligned with `actions`.
    pub prior: Vec<Vec<f64>>,
    /// Minimum acceptable per-step mean log density of an executed trajectory.
    pub thresholds: Vec<f64>,
}

impl PlanProblem<'_> {
    pub fn validate(&self) -> Result<(), String> {
        let (n_s, n_e) = (self.graph.states.len(), self.graph.edges.len());
        if self.models.len() != n_e || self.initial.len() != n_e || self.thresholds.len() != n_e {
            return Err("per-edge tables do not match the graph".into());
        }
        if self.actions.len() != n_s || self.prior.len() != n_s {
            return Err("per-state tables do not match the graph".into());
        }
        for (w, (acts, p)) in self.actions.iter().zip(&self.prior).enumerate() {
            if acts.len() != p.len() {
                return Err(format!("prior at state {w} has the wrong length"));
            }
            if let Some(&a) = acts.iter().find(|&&a| self.models[a].is_none() || self.initial[a].is_none()) {
                return Err(format!("action {} has no model", self.graph.edges[a].label()));
            }
        }
        Ok(())
    }
}

/// Per-state value bookkeeping for one node evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub iteration: usize,
    pub state: usize,
    pub actions: Vec<usize>,
    pub prior: Vec<f64>,
    /// `log Q(w, s, a)` per action, per start.
    pub log_q: Vec<Vec<f64>>,
    /// `log V(w, s)` per start.
    pub log_v: Vec<f64>,
    pub policy_after: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub allocated: usize,
    pub valid_rollouts: usize,
    pub rejections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerState {
    pub policy: Vec<Vec<f64>>,
    pub surrogates: Vec<Option<Surrogate>>,
}

/// Largest-remainder rounding of `pi * m`, with at least one sample for every
/// action whose probability exceeds `floor`.
pub fn allocate(pi: &[f64], m: usize, floor: f64) -> Vec<usize> {
    let raw: Vec<f64> = pi.iter().map(|p| p * m as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(m.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    for (c, p) in counts.iter_mut().zip(pi) {
        if *p > floor && *c == 0 {
            *c = 1;
        }
    }
    counts
}

/// Blend `pi` toward `target` by `alpha`, floor every entry, renormalize.
pub fn blend_policy(pi: &[f64], target: &[f64], alpha: f64, floor: f64) -> Vec<f64> {
    let mixed: Vec<f64> = pi
        .iter()
        .zip(target)
        .map(|(p, t)| ((1.0 - alpha) * p + alpha * t).max(floor))
        .collect();
    let total: f64 = mixed.iter().sum();
    mixed.into_iter().map(|p| p / total).collect()
}

/// `log V = log sum_a p_d(a) Q(a)`.
pub fn state_value(prior: &[f64], log_q: &[f64]) -> f64 {
    let terms: Vec<f64> = prior.iter().zip(log_q).map(|(p, q)| p.ln() + q).collect();
    log_sum_exp(&terms)
}

struct ActionValue {
    per_start: Vec<f64>,
    log_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedAction {
    pub edge: usize,
    pub label: String,
    pub xi: Vec<f64>,
    pub trajectory: Trajectory,
    pub end: RobotState,
    pub log_likelihood: f64,
    /// Per-step mean expert log density.
    pub mean_log_density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub actions: Vec<PlannedAction>,
    pub failure: Option<String>,
}

pub struct Planner<'p, 'a> {
    pub problem: &'p PlanProblem<'a>,
    pub cfg: PlannerConfig,
    pub state: PlannerState,
    pub counters: Counters,
    pub records: Vec<NodeRecord>,
    /// Surrogates after each iteration when recording.
    pub snapshots: Vec<Vec<Option<Surrogate>>>,
    iteration: usize,
}

impl<'p, 'a> Planner<'p, 'a> {
    pub fn new(problem: &'p PlanProblem<'a>, cfg: PlannerConfig) -> Self {
        let policy = problem
            .actions
            .iter()
            .map(|a| vec![1.0 / a.len().max(1) as f64; a.len()])
            .collect();
        Self {
            state: PlannerState {
                policy,
                surrogates: problem.initial.clone(),
            },
            problem,
            cfg,
            counters: Counters::default(),
            records: Vec::new(),
            snapshots: Vec::new(),
            iteration: 0,
        }
    }

    fn is_goal(&self, w: usize) -> bool {
        self.problem.graph.is_goal(w)
    }

    /// Runs planning iterations from `root` until the root value converges.
    /// Returns `log V(root, start)` after each iteration.
    pub fn optimize<R: Rng + ?Sized>(&mut self, root: usize, start: &RobotState, rng: &mut R) -> Vec<f64> {
        let starts = StartSet::single(start.clone());
        let mut history = Vec::new();
        let mut previous = f64::NEG_INFINITY;
        if self.is_goal(root) {
            return history;
        }
        for _ in 0..self.cfg.cem.max_iter.max(1) {
            let v = self.node_value(root, &starts, self.cfg.horizon, self.cfg.cem.samples, rng)[0];
            debug!("iteration {}: log V = {v}", self.iteration);
            history.push(v);
            if self.cfg.record {
                self.snapshots.push(self.state.surrogates.clone());
            }
            self.iteration += 1;
            if has_converged(previous, v, self.cfg.cem.tolerance) {
                break;
            }
            previous = v;
        }
        history
    }

    fn node_value<R: Rng + ?Sized>(&mut self, w: usize, starts: &StartSet, h: usize, m: usize, rng: &mut R) -> Vec<f64> {
        let acts = self.problem.actions[w].clone();
        let prior = self.problem.prior[w].clone();
        let counts = allocate(&self.state.policy[w], m, self.cfg.policy_floor);
        self.counters.allocated += counts.iter().sum::<usize>();
        let mut log_q = Vec::with_capacity(acts.len());
        let mut means = Vec::with_capacity(acts.len());
        for (&a, &c) in acts.iter().zip(&counts) {
            if c == 0 {
                log_q.push(vec![f64::NEG_INFINITY; starts.len()]);
                means.push(f64::NEG_INFINITY);
                continue;
            }
            let r = self.sample_action(a, starts, h, c, rng);
            log_q.push(r.per_start);
            means.push(r.log_mean);
        }
        let log_v: Vec<f64> = (0..starts.len())
            .map(|s| {
                let q: Vec<f64> = log_q.iter().map(|q| q[s]).collect();
                state_value(&prior, &q)
            })
            .collect();
        let scored: Vec<f64> = prior.iter().zip(&means).map(|(p, q)| p.ln() + q).collect();
        if let Some(target) = normalize_log_weights(&scored) {
            self.state.policy[w] = blend_policy(&self.state.policy[w], &target, self.cfg.cem.step, self.cfg.policy_floor);
        }
        if self.cfg.record {
            self.records.push(NodeRecord {
                iteration: self.iteration,
                state: w,
                actions: acts,
                prior,
                log_q,
                log_v: log_v.clone(),
                policy_after: self.state.policy[w].clone(),
            });
        }
        log_v
    }

    fn sample_action<R: Rng + ?Sized>(&mut self, a: usize, starts: &StartSet, h: usize, m: usize, rng: &mut R) -> ActionValue {
        let model = self.problem.models[a].as_deref().expect("validated problem");
        let v = self.state.surrogates[a].clone().expect("validated problem");
        let dead = ActionValue {
            per_start: vec![f64::NEG_INFINITY; starts.len()],
            log_mean: f64::NEG_INFINITY,
        };
        let Ok(batch) = sample_valid(model, &v, m, starts, &self.cfg.cem, rng) else {
            return dead;
        };
        self.counters.valid_rollouts += batch.samples.len();
        self.counters.rejections += batch.rejections;
        if batch.exhausted {
            self.widen(a);
        }
        if batch.samples.is_empty() {
            return dead;
        }
        let own: Vec<f64> = batch.samples.iter().map(|s| s.log_likelihood).collect();
        let mut log_z = own.clone();
        if h > 0 {
            let next = self.problem.graph.successor(a);
            if !self.is_goal(next) {
                if self.problem.actions[next].is_empty() {
                    log_z.iter_mut().for_each(|z| *z = f64::NEG_INFINITY);
                } else {
                    let zbar = normalize_log_weights(&own).unwrap_or_else(|| vec![1.0 / own.len() as f64; own.len()]);
                    let start_w = normalize_log_weights(&starts.log_weights).expect("proper start set");
                    let child = StartSet {
                        states: batch.samples.iter().map(|s| s.rollout.end.clone()).collect(),
                        log_weights: batch
                            .samples
                            .iter()
                            .zip(&zbar)
                            .map(|(s, z)| start_w[s.start].ln() + z.ln())
                            .collect(),
                    };
                    let child_v = self.node_value(next, &child, h - 1, m, rng);
                    for (z, cv) in log_z.iter_mut().zip(&child_v) {
                        *z += cv;
                    }
                }
            }
        }
        let finite = log_z.iter().filter(|z| z.is_finite()).count();
        if finite >= self.cfg.min_update_samples.min(m) {
            let xis = batch.samples.iter().map(|s| s.xi.clone()).collect();
            if let Ok((ws, _)) = weigh(xis, &log_z) {
                if let Ok(next_v) = update(&v, &ws, self.cfg.cem.step, self.cfg.cem.floor) {
                    self.state.surrogates[a] = Some(next_v);
                }
            }
        }
        let mut per_start = vec![f64::NEG_INFINITY; starts.len()];
        for (s, slot) in per_start.iter_mut().enumerate() {
            let z: Vec<f64> = batch
                .samples
                .iter()
                .zip(&log_z)
                .filter(|(smp, _)| smp.start == s)
                .map(|(_, z)| *z)
                .collect();
            if !z.is_empty() {
                *slot = log_sum_exp(&z) - (z.len() as f64).ln();
            }
        }
        ActionValue {
            per_start,
            log_mean: log_sum_exp(&log_z) - (log_z.len() as f64).ln(),
        }
    }

    /// Moves an action's distribution back toward its initial one after the
    /// rejection budget ran out, so a collapsed distribution can recover.
    fn widen(&mut self, a: usize) {
        let (Some(v), Some(v0)) = (&self.state.surrogates[a], &self.problem.initial[a]) else {
            return;
        };
        if let Ok(w) = v.blend(v0, self.cfg.cem.step) {
            self.state.surrogates[a] = Some(w);
        }
    }

    /// Most probable action sequence from `root`, each action rolled out from the
    /// previous end state with its final trajectory distribution (its initial one
    /// if that yields nothing valid); the best valid sample is kept. Stops at a
    /// goal state or after `max_actions`.
    pub fn extract<R: Rng + ?Sized>(&self, root: usize, start: &RobotState, max_actions: usize, rng: &mut R) -> Extraction {
        let mut actions = Vec::new();
        let mut w = root;
        let mut s = start.clone();
        while !self.is_goal(w) && actions.len() < max_actions {
            let acts = &self.problem.actions[w];
            let Some(k) = argmax(&self.state.policy[w]) else {
                return Extraction {
                    actions,
                    failure: Some(format!("dead end at state {w}")),
                };
            };
            let a = acts[k];
            let label = self.problem.graph.edges[a].label();
            let model = self.problem.models[a].as_deref().expect("validated problem");
            let v = self.state.surrogates[a].as_ref().expect("validated problem");
            let next = self.problem.graph.successor(a);
            let mut best = None;
            let mut chosen = None;
            let here = StartSet::single(s.clone());
            for v in [Some(v), self.problem.initial[a].as_ref()].into_iter().flatten() {
                let Ok(mut batch) = sample_valid(model, v, self.cfg.cem.samples, &here, &self.cfg.cem, rng) else {
                    continue;
                };
                keep_best(&mut best, &batch.samples);
                if self.cfg.horizon == 0 {
                    if best.is_some() {
                        break;
                    }
                    continue;
                }
                // With lookahead, commit only to an end state the next actions can continue from.
                batch.samples.sort_by(|x, y| y.log_likelihood.total_cmp(&x.log_likelihood));
                chosen = batch.samples.into_iter().find(|c| self.viable(next, &c.rollout.end, self.cfg.horizon, rng));
                if chosen.is_some() {
                    break;
                }
            }
            let best = chosen.or(best);
            let Some(b) = best else {
                return Extraction {
                    actions,
                    failure: Some(format!("no valid trajectory for {label}")),
                };
            };
            let steps = b.rollout.trajectory.steps.len().max(1) as f64;
            let mean_log_density = b.log_likelihood - steps.ln();
            if mean_log_density < self.problem.thresholds[a] {
                return Extraction {
                    actions,
                    failure: Some(format!("expert likelihood of {label} too low ({mean_log_density:.2})")),
                };
            }
            s = b.rollout.end.clone();
            w = next;
            actions.push(PlannedAction {
                edge: a,
                label,
                xi: b.xi,
                trajectory: b.rollout.trajectory,
                end: b.rollout.end,
                log_likelihood: b.log_likelihood,
                mean_log_density,
            });
        }
        let failure = (!self.is_goal(w) && actions.len() < max_actions).then(|| format!("stopped before a goal at state {w}"));
        Extraction { actions, failure }
    }
}

impl Planner<'_, '_> {
    /// Whether a valid trajectory chain of up to `depth` preferred actions
    /// starts from `s` in state `w`. Greedy: each level keeps its first valid rollout.
    fn viable<R: Rng + ?Sized>(&self, w: usize, s: &RobotState, depth: usize, rng: &mut R) -> bool {
        if depth == 0 || self.is_goal(w) {
            return true;
        }
        let Some(k) = argmax(&self.state.policy[w]) else {
            return false;
        };
        let a = self.problem.actions[w][k];
        let model = self.problem.models[a].as_deref().expect("validated problem");
        let here = StartSet::single(s.clone());
        for v in [self.state.surrogates[a].as_ref(), self.problem.initial[a].as_ref()].into_iter().flatten() {
            if let Ok(batch) = sample_valid(model, v, 1, &here, &self.cfg.cem, rng) {
                if let Some(first) = batch.samples.first() {
                    return self.viable(self.problem.graph.successor(a), &first.rollout.end, depth - 1, rng);
                }
            }
        }
        false
    }
}

fn argmax(v: &[f64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, x)| match best {
            Some((_, bx)) if bx >= *x => best,
            _ => Some((i, *x)),
        })
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub actions: Vec<PlannedAction>,
    pub value_history: Vec<f64>,
    pub failure: Option<String>,
    pub counters: Counters,
}

impl PlanResult {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Plans once from the graph's initial state and extracts a full action sequence.
pub fn plan<R: Rng + ?Sized>(problem: &PlanProblem<'_>, start: &RobotState, cfg: &PlannerConfig, rng: &mut R) -> PlanResult {
    if let Err(e) = problem.validate() {
        return PlanResult {
            actions: vec![],
            value_history: vec![],
            failure: Some(e),
            counters: Counters::default(),
        };
    }
    let root = problem.graph.initial;
    let mut planner = Planner::new(problem, cfg.clone());
    let value_history = planner.optimize(root, start, rng);
    let ex = planner.extract(root, start, problem.graph.states.len(), rng);
    PlanResult {
        actions: ex.actions,
        value_history,
        failure: ex.failure,
        counters: planner.counters,
    }
}

/// Replans after every executed action, keeping the learned distributions.
pub fn plan_receding<R: Rng + ?Sized>(problem: &PlanProblem<'_>, start: &RobotState, cfg: &PlannerConfig, rng: &mut R) -> PlanResult {
    if let Err(e) = problem.validate() {
        return PlanResult {
            actions: vec![],
            value_history: vec![],
            failure: Some(e),
            counters: Counters::default(),
        };
    }
    let mut planner = Planner::new(problem, cfg.clone());
    let mut w = problem.graph.initial;
    let mut s = start.clone();
    let mut actions = Vec::new();
    let mut value_history = Vec::new();
    let mut failure = None;
    while !problem.graph.is_goal(w) {
        if actions.len() > problem.graph.states.len() {
            failure = Some("no progress toward a goal".to_string());
            break;
        }
        value_history.extend(planner.optimize(w, &s, rng));
        let mut ex = planner.extract(w, &s, 1, rng);
        if let Some(f) = ex.failure {
            failure = Some(f);
            break;
        }
        let Some(step) = ex.actions.pop() else {
            failure = Some(format!("no action from state {w}"));
            break;
        };
        w = problem.graph.successor(step.edge);
        s = step.end.clone();
        actions.push(step);
    }
    PlanResult {
        actions,
        value_history,
        failure,
        counters: planner.counters,
    }
}
