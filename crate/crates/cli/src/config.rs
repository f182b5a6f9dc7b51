//! Run configuration, read from a JSON file and overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use imitplan::cem::CemConfig;
use imitplan::demos::ExpertConfig;
use imitplan::pipeline::{Mode, PipelineConfig};
use imitplan::treeplan::PlannerConfig;

use crate::scenes::SceneGenConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Domain and problem files; the bundled assembly task when absent.
    pub domain: Option<PathBuf>,
    pub problem: Option<PathBuf>,
    /// Scene file; the canonical scene when absent.
    pub scene: Option<PathBuf>,
    pub demos: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub samples: usize,
    pub step: f64,
    pub horizon: usize,
    pub max_iter: usize,
    /// Planner convergence threshold on log V; 0 runs every iteration.
    pub tolerance: f64,
    pub rejection_factor: usize,
    pub policy_floor: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Modes run by `experiment`.
    pub modes: Vec<Mode>,
    pub likelihood_slack: Option<f64>,
    /// Re-optimize after every executed action.
    pub replan: bool,
    pub expert: ExpertConfig,
    pub scenes: SceneGenConfig,
    /// Scripted demonstrations recorded per goal path by `demo`.
    pub demos_per_path: usize,
    /// Waypoint noise of scripted demonstrations (m).
    pub demo_noise: f64,
    /// Successful trials added back to the model after an experiment; 0 disables.
    pub augment: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            samples: 200,
            step: 0.5,
            horizon: 5,
            max_iter: 15,
            tolerance: 0.0,
            rejection_factor: 50,
            policy_floor: 1e-4,
            seed: 0,
            mode: Mode::Full,
            modes: Mode::ALL.to_vec(),
            likelihood_slack: None,
            replan: true,
            expert: ExpertConfig::default(),
            scenes: SceneGenConfig::default(),
            demos_per_path: 2,
            demo_noise: 0.01,
            augment: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            bail!("samples must be at least 2, got {}", self.samples);
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            bail!("step must lie in (0, 1], got {}", self.step);
        }
        if !(self.tolerance >= 0.0) || self.rejection_factor == 0 {
            bail!("tolerance must be nonnegative and rejection_factor positive");
        }
        if !(self.policy_floor > 0.0 && self.policy_floor < 1.0) {
            bail!("policy_floor must lie in (0, 1)");
        }
        if self.expert.components == 0 {
            bail!("expert.components must be at least 1");
        }
        let p = &self.paths;
        for f in [&p.domain, &p.problem, &p.scene, &p.model].into_iter().flatten() {
            if !f.is_file() {
                bail!("file {} does not exist", f.display());
            }
        }
        if let Some(d) = &p.demos {
            if !d.is_dir() {
                bail!("demonstration directory {} does not exist", d.display());
            }
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn cem(&self) -> CemConfig {
        CemConfig {
            samples: self.samples,
            step: self.step,
            max_iter: self.max_iter,
            tolerance: self.tolerance,
            rejection_factor: self.rejection_factor,
            ..CemConfig::default()
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            planner: PlannerConfig {
                cem: self.cem(),
                horizon: self.horizon,
                policy_floor: self.policy_floor,
                ..PlannerConfig::default()
            },
            likelihood_slack: self.likelihood_slack,
            replan: self.replan,
        }
    }
}
