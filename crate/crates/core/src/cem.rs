//! Cross-entropy optimization of a trajectory-parameter distribution toward
//! high expert likelihood, restricted to valid trajectories by rejection.

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{
    fit_gaussian_weighted, fit_gmm_weighted, log_sum_exp, normalize_log_weights, Component, DensityError, Gaussian, Gmm,
    WeightedSamples, DEFAULT_FLOOR,
};
use crate::dmp::Trajectory;
use crate::sim::RobotState;

pub type PlanRng = ChaCha8Rng;

const MIXTURE_EM_ITERS: usize = 20;

#[derive(Debug, Error)]
pub enum CemError {
    #[error("rejection budget exhausted: {valid} of {wanted} valid samples after {draws} draws")]
    RejectionBudget { wanted: usize, valid: usize, draws: usize },
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty start set")]
    NoStarts,
}

/// Sampling distribution over flattened trajectory parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Surrogate {
    Gaussian { density: Gaussian },
    Mixture { density: Gmm },
}

impl Surrogate {
    pub fn dim(&self) -> usize {
        match self {
            Surrogate::Gaussian { density } => density.dim(),
            Surrogate::Mixture { density } => density.dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Surrogate::Gaussian { density } => density.sample(rng),
            Surrogate::Mixture { density } => density.sample(rng),
        }
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64, DensityError> {
        match self {
            Surrogate::Gaussian { density } => density.log_pdf(x),
            Surrogate::Mixture { density } => density.log_pdf(x),
        }
    }

    /// Weighted maximum-likelihood refit of the same family.
    pub fn refit(&self, ws: &WeightedSamples, floor: f64) -> Result<Surrogate, DensityError> {
        Ok(match self {
            Surrogate::Gaussian { .. } => Surrogate::Gaussian {
                density: fit_gaussian_weighted(ws, floor)?,
            },
            Surrogate::Mixture { density } => Surrogate::Mixture {
                density: fit_gmm_weighted(ws, density.len(), density, MIXTURE_EM_ITERS, floor)?.gmm,
            },
        })
    }

    /// `(1 - alpha) * self + alpha * target`; mixtures blend component-wise by index.
    pub fn blend(&self, target: &Surrogate, alpha: f64) -> Result<Surrogate, DensityError> {
        if alpha == 1.0 {
            return Ok(target.clone());
        }
        match (self, target) {
            (Surrogate::Gaussian { density: a }, Surrogate::Gaussian { density: b }) => Ok(Surrogate::Gaussian {
                density: a.blend(b, alpha)?,
            }),
            (Surrogate::Mixture { density: a }, Surrogate::Mixture { density: b }) if a.len() == b.len() => {
                let comps = a
                    .components()
                    .iter()
                    .zip(b.components())
                    .map(|(ca, cb)| {
                        Ok(Component {
                            weight: (1.0 - alpha) * ca.weight + alpha * cb.weight,
                            gaussian: ca.gaussian.blend(&cb.gaussian, alpha)?,
                        })
                    })
                    .collect::<Result<Vec<_>, DensityError>>()?;
                Ok(Surrogate::Mixture { density: Gmm::new(comps)? })
            }
            _ => Err(DensityError::InvalidMixture("blend of mismatched surrogates".into())),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            Surrogate::Gaussian { density } => density.mean().iter().copied().collect(),
            Surrogate::Mixture { density } => {
                let mut m = vec![0.0; density.dim()];
                for c in density.components() {
                    for (mi, x) in m.iter_mut().zip(c.gaussian.mean().iter()) {
                        *mi += c.weight * x;
                    }
                }
                m
            }
        }
    }
}

/// How the per-iteration likelihood summary is formed from per-sample `log z_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceMetric {
    /// `mean_j log z_j`, with each `z_j` averaged over trajectory steps.
    MeanLogLikelihood,
    /// `log mean_j z_j`.
    #[default]
    LogMeanLikelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub samples: usize,
    pub step: f64,
    pub max_iter: usize,
    /// Relative change of the likelihood summary that counts as converged.
    pub tolerance: f64,
    /// Draws allowed per iteration, as a multiple of `samples`.
    pub rejection_factor: usize,
    pub floor: f64,
    #[serde(default)]
    pub metric: ConvergenceMetric,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            step: 0.5,
            max_iter: 15,
            tolerance: 1e-3,
            rejection_factor: 50,
            floor: DEFAULT_FLOOR,
            metric: ConvergenceMetric::default(),
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<(), CemError> {
        if self.samples < 2 {
            return Err(CemError::Config("at least 2 samples per iteration".into()));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(CemError::Config(format!("step {} outside (0, 1]", self.step)));
        }
        if !(self.floor >= 0.0) || !(self.tolerance >= 0.0) {
            return Err(CemError::Config("negative floor or tolerance".into()));
        }
        Ok(())
    }

    pub fn budget(&self, wanted: usize) -> usize {
        wanted * self.rejection_factor.max(1)
    }
}

/// Result of simulating one parameter vector from one start state.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    /// State after the trajectory with any grasp or release applied.
    pub end: RobotState,
}

/// What the optimizer needs from an action: simulation with constraint
/// checking, and per-step expert log densities.
pub trait SampleModel {
    fn dim(&self) -> usize;
    /// `None` when the sample is rejected (invalid trajectory, unreachable goal or failed event).
    fn simulate(&self, xi: &[f64], start: &RobotState) -> Option<Rollout>;
    fn score(&self, rollout: &Rollout) -> Vec<f64>;
}

/// `log sum_i p_d(x_i)` over the steps of one trajectory.
pub fn trajectory_log_likelihood(step_log_densities: &[f64]) -> f64 {
    log_sum_exp(step_log_densities)
}

/// Candidate start states with unnormalized log probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct StartSet {
    pub states: Vec<RobotState>,
    pub log_weights: Vec<f64>,
}

impl StartSet {
    pub fn single(s: RobotState) -> Self {
        Self {
            states: vec![s],
            log_weights: vec![0.0],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Draws a start index proportionally to the weights. A single start consumes no randomness.
    pub fn draw<R: Rng + ?Sized>(&self, cumulative: &[f64], rng: &mut R) -> usize {
        if self.states.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        cumulative.partition_point(|c| *c <= u).min(self.states.len() - 1)
    }

    fn cumulative(&self) -> Option<Vec<f64>> {
        let w = normalize_log_weights(&self.log_weights)?;
        let mut acc = 0.0;
        Some(
            w.iter()
                .map(|x| {
                    acc += x;
                    acc
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub xi: Vec<f64>,
    pub start: usize,
    pub rollout: Rollout,
    /// `log z_j` from the expert alone.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<Sample>,
    pub rejections: usize,
    /// True when the draw budget ran out before enough valid samples were found.
    pub exhausted: bool,
}

/// Draws until `wanted` valid samples are collected or `cfg.budget(wanted)` draws are spent.
pub fn sample_valid<M: SampleModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    v: &Surrogate,
    wanted: usize,
    starts: &StartSet,
    cfg: &CemConfig,
    rng: &mut R,
) -> Result<SampleBatch, CemError> {
    if starts.is_empty() {
        return Err(CemError::NoStarts);
    }
    let cumulative = starts.cumulative().ok_or(CemError::NoStarts)?;
    let budget = cfg.budget(wanted);
    let mut samples = Vec::with_capacity(wanted);
    let mut draws = 0;
    while samples.len() < wanted && draws < budget {
        draws += 1;
        let start = starts.draw(&cumulative, rng);
        let xi = v.sample(rng);
        if let Some(rollout) = model.simulate(&xi, &starts.states[start]) {
            let log_likelihood = trajectory_log_likelihood(&model.score(&rollout));
            samples.push(Sample {
                xi,
                start,
                rollout,
                log_likelihood,
            });
        }
    }
    Ok(SampleBatch {
        rejections: draws - samples.len(),
        exhausted: samples.len() < wanted,
        samples,
    })
}

/// Normalized weights from `log z_j`. Returns the weights and whether the
/// uniform fallback was used because every weight underflowed.
pub fn weigh(xis: Vec<Vec<f64>>, log_z: &[f64]) -> Result<(WeightedSamples, bool), DensityError> {
    match WeightedSamples::from_log_weights(xis.clone(), log_z.to_vec()) {
        Ok(ws) => Ok((ws, false)),
        Err(DensityError::ZeroWeights) => {
            warn!("all sample weights underflowed; using uniform weights");
            Ok((WeightedSamples::uniform(xis), true))
        }
        Err(e) => Err(e),
    }
}

pub fn update(v: &Surrogate, ws: &WeightedSamples, alpha: f64, floor: f64) -> Result<Surrogate, DensityError> {
    v.blend(&v.refit(ws, floor)?, alpha)
}

pub fn summarize(metric: ConvergenceMetric, log_z: &[f64], steps: usize) -> f64 {
    let n = log_z.len() as f64;
    match metric {
        ConvergenceMetric::MeanLogLikelihood => log_z.iter().sum::<f64>() / n - (steps.max(1) as f64).ln(),
        ConvergenceMetric::LogMeanLikelihood => log_sum_exp(log_z) - n.ln(),
    }
}

/// Relative-change convergence test shared with the task planner.
pub fn has_converged(previous: f64, current: f64, tolerance: f64) -> bool {
    if !previous.is_finite() || !current.is_finite() {
        return false;
    }
    (current - previous).abs() <= tolerance * previous.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemIterationReport {
    pub iteration: usize,
    pub mean_log_likelihood: f64,
    pub effective_sample_size: f64,
    pub rejections: usize,
    pub degenerate: bool,
    pub surrogate: Surrogate,
}

impl CemIterationReport {
    pub fn csv_header() -> &'static str {
        "iteration,mean_log_likelihood,effective_sample_size,rejections,degenerate"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iteration, self.mean_log_likelihood, self.effective_sample_size, self.rejections, self.degenerate
        )
    }
}

#[derive(Debug, Clone)]
pub struct CemResult {
    pub surrogate: Surrogate,
    pub best: Option<Sample>,
    pub reports: Vec<CemIterationReport>,
    pub converged: bool,
}

fn steps_of(batch: &SampleBatch) -> usize {
    batch.samples.first().map_or(1, |s| s.rollout.trajectory.steps.len())
}

pub fn optimize<M: SampleModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    v0: &Surrogate,
    starts: &StartSet,
    cfg: &CemConfig,
    rng: &mut R,
) -> Result<CemResult, CemError> {
    cfg.validate()?;
    if v0.dim() != model.dim() {
        return Err(DensityError::DimensionMismatch {
            expected: model.dim(),
            got: v0.dim(),
        }
        .into());
    }
    let mut v = v0.clone();
    let mut best: Option<Sample> = None;
    let mut reports = Vec::new();
    let mut previous = f64::NEG_INFINITY;
    let mut converged = false;
    let rounds = cfg.max_iter.max(1);
    for iteration in 0..rounds {
        let batch = sample_valid(model, &v, cfg.samples, starts, cfg, rng)?;
        if batch.exhausted {
            return Err(CemError::RejectionBudget {
                wanted: cfg.samples,
                valid: batch.samples.len(),
                draws: cfg.budget(cfg.samples),
            });
        }
        let log_z: Vec<f64> = batch.samples.iter().map(|s| s.log_likelihood).collect();
        keep_best(&mut best, &batch.samples);
        if cfg.max_iter == 0 {
            break;
        }
        let steps = steps_of(&batch);
        let xis = batch.samples.into_iter().map(|s| s.xi).collect();
        let (ws, degenerate) = weigh(xis, &log_z)?;
        let summary = summarize(cfg.metric, &log_z, steps);
        v = update(&v, &ws, cfg.step, cfg.floor)?;
        reports.push(CemIterationReport {
            iteration,
            mean_log_likelihood: summary,
            effective_sample_size: ws.effective_sample_size(),
            rejections: batch.rejections,
            degenerate,
            surrogate: v.clone(),
        });
        if has_converged(previous, summary, cfg.tolerance) {
            converged = true;
            break;
        }
        previous = summary;
    }
    Ok(CemResult {
        surrogate: v,
        best,
        reports,
        converged,
    })
}

pub(crate) fn keep_best(best: &mut Option<Sample>, samples: &[Sample]) {
    for s in samples {
        if best.as_ref().is_none_or(|b| s.log_likelihood > b.log_likelihood) {
            *best = Some(s.clone());
        }
    }
}
