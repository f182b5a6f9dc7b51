//! Experiment harness: each mode on each generated scene, failure counts and
//! placement-error statistics, and an optional augmentation round.

use std::fmt::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use imitplan::demos::{augment, Demonstration, DemoError, ExpertConfig, ExpertModel};
use imitplan::pddl::{Domain, TaskGraph};
use imitplan::pipeline::{execution_to_demo, random_goal_path, run_mode, Mode, PipelineConfig, PlacementError, Trial};

use crate::scenes::GeneratedScene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scene: String,
    pub mode: Mode,
    pub failed: bool,
    pub reason: Option<String>,
    pub error: Option<PlacementError>,
    pub actions: Vec<String>,
    pub value_history: Vec<f64>,
    pub rollouts: usize,
    pub wall_time: f64,
}

impl TrialRecord {
    pub fn from_trial(scene: &str, trial: &Trial, wall_time: f64) -> Self {
        let failed = !trial.succeeded();
        Self {
            scene: scene.into(),
            mode: trial.mode,
            failed,
            reason: trial.result.failure.clone(),
            error: if failed { None } else { trial.placement_error },
            actions: trial.labels(),
            value_history: trial.result.value_history.clone(),
            rollouts: trial.result.counters.valid_rollouts,
            wall_time,
        }
    }

    pub const CSV_HEADER: &'static str = "scene,mode,failed,error,error_x,error_y,actions,final_log_value,iterations,rollouts,wall_time";

    /// CSV row; `include_time` is off for reproducibility comparisons.
    pub fn csv_row(&self, include_time: bool) -> String {
        let (e, ex, ey) = self
            .error
            .map_or((String::new(), String::new(), String::new()), |e| {
                (format!("{:.6}", e.distance), format!("{:.6}", e.dx), format!("{:.6}", e.dy))
            });
        let v = self.value_history.last().map_or(String::new(), |v| format!("{v:.6}"));
        let t = if include_time { format!("{:.3}", self.wall_time) } else { String::new() };
        format!(
            "{},{},{},{e},{ex},{ey},\"{}\",{v},{},{},{t}",
            self.scene,
            self.mode.name(),
            self.failed,
            self.actions.join(" "),
            self.value_history.len(),
            self.rollouts
        )
    }
}

pub fn records_csv(records: &[TrialRecord], include_time: bool) -> String {
    let mut s = String::from(TrialRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row(include_time));
        s.push('\n');
    }
    s
}

/// Everything a suite run produces; `trials` keeps the executed plans for augmentation.
pub struct SuiteRun {
    pub records: Vec<TrialRecord>,
    pub trials: Vec<(String, Trial)>,
}

fn trial_seed(seed: u64, scene: usize, mode: Mode) -> u64 {
    let m = Mode::ALL.iter().position(|x| *x == mode).unwrap_or(0) as u64;
    seed ^ (scene as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (m + 1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Runs every mode on every scene. The single-plan modes of one scene share a
/// symbolic path drawn from the scene's own stream.
pub fn run_suite(
    scenes: &[GeneratedScene],
    modes: &[Mode],
    domain: &Domain,
    graph: &TaskGraph,
    expert: &ExpertModel,
    cfg: &PipelineConfig,
    seed: u64,
) -> SuiteRun {
    let mut records = Vec::new();
    let mut trials = Vec::new();
    for (i, gs) in scenes.iter().enumerate() {
        let path = random_goal_path(graph, &mut ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0xA24B_AED4_963E_E407)));
        for &mode in modes {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, i, mode));
            let t = Instant::now();
            let trial = run_mode(mode, &gs.scene, domain, graph, expert, cfg, path.as_deref(), &mut rng);
            let rec = TrialRecord::from_trial(&gs.id, &trial, t.elapsed().as_secs_f64());
            log::info!("{} {}: {}", gs.id, mode.name(), rec.reason.as_deref().unwrap_or("ok"));
            records.push(rec);
            trials.push((gs.id.clone(), trial));
        }
    }
    SuiteRun { records, trials }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub trials: usize,
    pub failures: usize,
    pub median_error: Option<f64>,
    pub median_error_x: Option<f64>,
    pub median_error_y: Option<f64>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

pub fn summarize(records: &[TrialRecord], modes: &[Mode]) -> Vec<ModeSummary> {
    modes
        .iter()
        .map(|&mode| {
            let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.mode == mode).collect();
            let errs: Vec<PlacementError> = rs.iter().filter_map(|r| r.error).collect();
            let mut d: Vec<f64> = errs.iter().map(|e| e.distance).collect();
            let mut x: Vec<f64> = errs.iter().map(|e| e.dx.abs()).collect();
            let mut y: Vec<f64> = errs.iter().map(|e| e.dy.abs()).collect();
            ModeSummary {
                mode,
                trials: rs.len(),
                failures: rs.iter().filter(|r| r.failed).count(),
                median_error: median(&mut d),
                median_error_x: median(&mut x),
                median_error_y: median(&mut y),
            }
        })
        .collect()
}

pub fn summary_table(summary: &[ModeSummary], workspace_diameter: f64) -> String {
    let mut s = String::from("mode            trials  failures  median_error_m  median_error_pct\n");
    for m in summary {
        let (e, pct) = m
            .median_error
            .map_or(("-".to_string(), "-".to_string()), |e| (format!("{e:.4}"), format!("{:.2}", 100.0 * e / workspace_diameter)));
        let _ = writeln!(s, "{:<15} {:>6}  {:>8}  {:>14}  {:>16}", m.mode.name(), m.trials, m.failures, e, pct);
    }
    s
}

/// The `k` successful full-mode executions with the smallest placement error.
pub fn select_for_augmentation(run: &SuiteRun, k: usize) -> Vec<usize> {
    let mut ok: Vec<(usize, f64)> = run
        .trials
        .iter()
        .enumerate()
        .filter(|(_, (_, t))| t.mode == Mode::Full && t.succeeded())
        .filter_map(|(i, (_, t))| t.placement_error.map(|e| (i, e.distance)))
        .collect();
    ok.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ok.into_iter().take(k).map(|(i, _)| i).collect()
}

/// Converts the selected executions to demonstrations and refits.
#[allow(clippy::too_many_arguments)]
pub fn augment_from_run(
    run: &SuiteRun,
    selection: &[usize],
    scenes: &[GeneratedScene],
    pool: &mut Vec<Demonstration>,
    model: &ExpertModel,
    domain: &Domain,
    graph: &TaskGraph,
    cfg: &ExpertConfig,
) -> Result<ExpertModel, DemoError> {
    let mut executions = Vec::with_capacity(selection.len());
    let mut picked = Vec::with_capacity(selection.len());
    for &i in selection {
        let (scene_id, trial) = run.trials.get(i).ok_or(DemoError::UnknownExecution(i))?;
        let scene = &scenes
            .iter()
            .find(|s| &s.id == scene_id)
            .ok_or(DemoError::UnknownExecution(i))?
            .scene;
        let demo = execution_to_demo(&format!("auto-{scene_id}-{}", trial.mode.name()), scene, domain, graph, &trial.result)
            .ok_or(DemoError::UnknownExecution(i))?;
        picked.push(executions.len());
        executions.push(demo);
    }
    augment(model, pool, &executions, &picked, domain, cfg)
}
