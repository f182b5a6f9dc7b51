//! Command-line driver for learning skills from scripted demonstrations,
//! planning assembly tasks, and running the ablation experiments.
//!
//! Exit codes: 0 on success, 1 when planning fails, 2 on usage or input errors.

pub mod config;
pub mod experiment;
pub mod render;
pub mod scenes;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use imitplan::assembly;
use imitplan::cem::{optimize, StartSet};
use imitplan::demos::{augment, fit_expert, load_dir, script_demo, Demonstration, ExpertModel};
use imitplan::pddl::{self, Domain, TaskGraph};
use imitplan::pipeline::{build_problem, execution_to_demo, run_mode, Mode};
use imitplan::sim::Scene;
use imitplan::treeplan::PlanResult;

use config::RunConfig;
use experiment::{augment_from_run, records_csv, run_suite, select_for_augmentation, summarize, summary_table};
use render::{ActionRecord, PlanRecord};

#[derive(Debug, Parser)]
#[command(name = "imitplan", version, about = "Plan assembly tasks from demonstrated skills")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Inputs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub demos: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record scripted demonstrations of every goal path.
    Demo {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        per_path: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fit the expert model to a demonstration directory.
    Learn {
        #[command(flatten)]
        inputs: Inputs,
        /// Mixture components per skill.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Plan the task in one scene.
    Plan {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Run modes over generated scenes and summarize failures and placement errors.
    Experiment {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        scenes: Option<usize>,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<Mode>>,
        /// Successful trials added to the model before a second run.
        #[arg(long)]
        augment: Option<usize>,
    },
    /// Draw scene, demonstration or plan files as SVG.
    Render {
        files: Vec<PathBuf>,
        /// Also draw per-iteration sample fans for this action label.
        #[arg(long)]
        fan: Option<String>,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Add selected executions from plan files to the model.
    Augment {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, num_args = 1.., required = true)]
        executions: Vec<PathBuf>,
        /// Indices into `executions`.
        #[arg(long, value_delimiter = ',')]
        select: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    PlanFailed,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::PlanFailed => 1,
        }
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(s) => s.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

struct Task {
    domain: Domain,
    graph: TaskGraph,
}

fn load_task(cfg: &RunConfig) -> Result<Task> {
    let domain = match &cfg.paths.domain {
        Some(p) => pddl::parse_domain(&std::fs::read_to_string(p)?)?,
        None => assembly::domain()?,
    };
    let problem = match &cfg.paths.problem {
        Some(p) => pddl::parse_problem(&std::fs::read_to_string(p)?, &domain)?,
        None => assembly::problem(&domain)?,
    };
    let graph = pddl::ground(&domain, &problem, 10_000)?;
    Ok(Task { domain, graph })
}

fn load_scene(cfg: &RunConfig) -> Result<Scene> {
    match &cfg.paths.scene {
        Some(p) => Scene::load(p).with_context(|| format!("loading scene {}", p.display())),
        None => Ok(assembly::canonical_scene()),
    }
}

fn load_demos(cfg: &RunConfig) -> Result<Vec<Demonstration>> {
    let dir = cfg.paths.demos.as_ref().ok_or_else(|| anyhow!("no demonstration directory given (--demos)"))?;
    if !dir.is_dir() {
        bail!("demonstration directory {} does not exist", dir.display());
    }
    let demos = load_dir(dir)?;
    if demos.is_empty() {
        bail!("no demonstrations in {}", dir.display());
    }
    Ok(demos)
}

fn load_model(cfg: &RunConfig) -> Result<ExpertModel> {
    let p = cfg.paths.model.as_ref().ok_or_else(|| anyhow!("no model file given (--model)"))?;
    ExpertModel::load(p).with_context(|| format!("loading model {}", p.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn apply_inputs(cfg: &mut RunConfig, inputs: &Inputs) {
    if let Some(s) = &inputs.scene {
        cfg.paths.scene = Some(s.clone());
    }
    if let Some(m) = &inputs.model {
        cfg.paths.model = Some(m.clone());
    }
    if let Some(d) = &inputs.demos {
        cfg.paths.demos = Some(d.clone());
    }
}

pub fn execute(cli: Cli) -> Result<Status> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.out = Some(o.clone());
    }
    match cli.command {
        Command::Demo { inputs, per_path, noise } => {
            apply_inputs(&mut cfg, &inputs);
            if let Some(n) = per_path {
                cfg.demos_per_path = n;
            }
            if let Some(n) = noise {
                cfg.demo_noise = n;
            }
            cmd_demo(&cfg)
        }
        Command::Learn { inputs, k } => {
            apply_inputs(&mut cfg, &inputs);
            if let Some(k) = k {
                cfg.expert.components = k;
            }
            cmd_learn(&cfg)
        }
        Command::Plan { inputs, mode } => {
            apply_inputs(&mut cfg, &inputs);
            if let Some(m) = mode {
                cfg.mode = m;
            }
            cmd_plan(&cfg)
        }
        Command::Experiment {
            inputs,
            scenes,
            modes,
            augment,
        } => {
            apply_inputs(&mut cfg, &inputs);
            if let Some(n) = scenes {
                cfg.scenes.count = n;
            }
            if let Some(m) = modes {
                cfg.modes = m;
            }
            if let Some(k) = augment {
                cfg.augment = k;
            }
            cmd_experiment(&cfg)
        }
        Command::Render { files, fan, inputs } => {
            apply_inputs(&mut cfg, &inputs);
            cmd_render(&cfg, &files, fan.as_deref())
        }
        Command::Augment {
            inputs,
            executions,
            select,
        } => {
            apply_inputs(&mut cfg, &inputs);
            cmd_augment(&cfg, &executions, &select)
        }
    }
}

/// `demos_per_path` noisy scripted runs of every goal path, in file-name order.
/// Paths that cannot be scripted in `scene` are skipped with a warning.
pub fn scripted_demos(scene: &Scene, domain: &Domain, graph: &TaskGraph, cfg: &RunConfig) -> Vec<Demonstration> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for (i, path) in graph.goal_paths(graph.states.len()).iter().enumerate() {
        for k in 0..cfg.demos_per_path {
            let id = format!("demo{i:02}-{k}");
            match script_demo(&id, scene, domain, graph, path, &cfg.expert.dmp, cfg.demo_noise, &mut rng) {
                Ok(d) => out.push(d),
                Err(e) => log::warn!("skipping {id}: {e}"),
            }
        }
    }
    out
}

pub fn cmd_demo(cfg: &RunConfig) -> Result<Status> {
    // The demonstration directory is an output here.
    let mut check = cfg.clone();
    check.paths.demos = None;
    check.validate()?;
    let task = load_task(cfg)?;
    let scene = load_scene(cfg)?;
    let dir = cfg.paths.demos.clone().unwrap_or_else(|| cfg.out_dir().join("demos"));
    std::fs::create_dir_all(&dir)?;
    let demos = scripted_demos(&scene, &task.domain, &task.graph, cfg);
    for d in &demos {
        d.save(&dir.join(format!("{}.json", d.id)))?;
    }
    let written = demos.len();
    if written == 0 {
        bail!("no scripted demonstration succeeded in this scene");
    }
    println!("wrote {written} demonstrations to {}", dir.display());
    Ok(Status::Success)
}

/// Per-skill fit statistics written next to the model.
#[derive(Debug, serde::Serialize)]
struct FitReport {
    components: usize,
    demonstrations: usize,
    skills: Vec<(String, f64, f64)>,
}

pub fn cmd_learn(cfg: &RunConfig) -> Result<Status> {
    cfg.validate()?;
    let task = load_task(cfg)?;
    let demos = load_demos(cfg)?;
    let model = fit_expert(&demos, &task.domain, &cfg.expert)?;
    let out = cfg.out_dir();
    let model_path = cfg.paths.model.clone().unwrap_or_else(|| out.join("model.json"));
    std::fs::create_dir_all(&out)?;
    model.save(&model_path)?;
    let report = FitReport {
        components: cfg.expert.components,
        demonstrations: demos.len(),
        skills: model
            .skills
            .iter()
            .map(|(k, s)| (k.clone(), s.training_log_likelihood, s.weakest_segment))
            .collect(),
    };
    write(&out.join("fit_report.json"), &serde_json::to_string_pretty(&report)?)?;
    for (k, ll, _) in &report.skills {
        println!("{k:<10} mean training log-likelihood {ll:.3}");
    }
    Ok(Status::Success)
}

/// Model from `--model`, or fitted on the fly from `--demos`.
fn model_or_fit(cfg: &RunConfig, task: &Task) -> Result<ExpertModel> {
    match (&cfg.paths.model, &cfg.paths.demos) {
        (Some(_), _) => load_model(cfg),
        (None, Some(_)) => Ok(fit_expert(&load_demos(cfg)?, &task.domain, &cfg.expert)?),
        (None, None) => bail!("planning needs --model or --demos"),
    }
}

pub fn plan_record(scene: &Scene, task_graph: &TaskGraph, mode: Mode, seed: u64, result: &PlanResult, error: Option<imitplan::pipeline::PlacementError>) -> PlanRecord {
    PlanRecord {
        scene: scene.clone(),
        mode,
        seed,
        actions: result
            .actions
            .iter()
            .map(|a| ActionRecord {
                edge: a.edge,
                label: a.label.clone(),
                skill: task_graph.edges[a.edge].skill.clone(),
                xi: a.xi.clone(),
                log_likelihood: a.log_likelihood,
                trajectory: a.trajectory.clone(),
            })
            .collect(),
        value_history: result.value_history.clone(),
        failure: result.failure.clone(),
        error: if result.succeeded() { error } else { None },
    }
}

pub fn cmd_plan(cfg: &RunConfig) -> Result<Status> {
    cfg.validate()?;
    let task = load_task(cfg)?;
    let scene = load_scene(cfg)?;
    let model = model_or_fit(cfg, &task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let trial = run_mode(cfg.mode, &scene, &task.domain, &task.graph, &model, &cfg.pipeline(), None, &mut rng);
    let rec = plan_record(&scene, &task.graph, cfg.mode, cfg.seed, &trial.result, trial.placement_error);
    let out = cfg.out_dir();
    write(&out.join("plan.json"), &serde_json::to_string_pretty(&rec)?)?;
    for (i, a) in rec.actions.iter().enumerate() {
        write(&out.join(format!("trajectory_{i}_{}.csv", a.skill)), &a.trajectory.to_csv())?;
    }
    write(&out.join("plan.svg"), &render::plan_svg(&rec))?;
    match &rec.failure {
        None => {
            println!("plan: {}", trial.labels().join(" "));
            if let Some(e) = rec.error {
                println!("placement error {:.4} m", e.distance);
            }
            Ok(Status::Success)
        }
        Some(f) => {
            println!("planning failed: {f}");
            Ok(Status::PlanFailed)
        }
    }
}

pub fn cmd_experiment(cfg: &RunConfig) -> Result<Status> {
    cfg.validate()?;
    let task = load_task(cfg)?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out)?;
    let mut pool = if cfg.paths.demos.is_some() { load_demos(cfg)? } else { vec![] };
    if cfg.augment > 0 && pool.is_empty() {
        bail!("augmentation needs the demonstration pool (--demos)");
    }
    let model = match &cfg.paths.model {
        Some(_) => load_model(cfg)?,
        None if !pool.is_empty() => fit_expert(&pool, &task.domain, &cfg.expert)?,
        None => bail!("experiment needs --model or --demos"),
    };
    let scenes = if cfg.scenes.count == 0 {
        vec![]
    } else {
        scenes::generate(&cfg.scenes, cfg.seed, &task.domain, &task.graph, &cfg.expert.dmp)
    };
    for s in &scenes {
        s.scene.save(&out.join(format!("{}.json", s.id)))?;
    }
    let diameter = assembly::default_bounds().diagonal();
    let pc = cfg.pipeline();
    let run = run_suite(&scenes, &cfg.modes, &task.domain, &task.graph, &model, &pc, cfg.seed);
    write(&out.join("trials.csv"), &records_csv(&run.records, true))?;
    let summary = summarize(&run.records, &cfg.modes);
    let table = summary_table(&summary, diameter);
    write(&out.join("summary.txt"), &table)?;
    write(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    print!("{table}");
    if cfg.augment > 0 {
        let selection = select_for_augmentation(&run, cfg.augment);
        let augmented = augment_from_run(&run, &selection, &scenes, &mut pool, &model, &task.domain, &task.graph, &cfg.expert)?;
        augmented.save(&out.join("model_augmented.json"))?;
        let rerun = run_suite(&scenes, &cfg.modes, &task.domain, &task.graph, &augmented, &pc, cfg.seed);
        write(&out.join("trials_augmented.csv"), &records_csv(&rerun.records, true))?;
        let summary = summarize(&rerun.records, &cfg.modes);
        let table = summary_table(&summary, diameter);
        write(&out.join("summary_augmented.txt"), &table)?;
        write(&out.join("summary_augmented.json"), &serde_json::to_string_pretty(&summary)?)?;
        println!("after adding {} executions:", selection.len());
        print!("{table}");
    }
    Ok(Status::Success)
}

enum Drawable {
    Plan(PlanRecord),
    Demo(Demonstration),
    Scene(Scene),
}

fn read_drawable(path: &Path) -> Result<Drawable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(p) = serde_json::from_str::<PlanRecord>(&text) {
        return Ok(Drawable::Plan(p));
    }
    if let Ok(d) = serde_json::from_str::<Demonstration>(&text) {
        return Ok(Drawable::Demo(d));
    }
    match serde_json::from_str::<Scene>(&text) {
        Ok(s) => {
            s.validate()?;
            Ok(Drawable::Scene(s))
        }
        Err(e) => bail!("{} is not a plan, demonstration or scene file: {e}", path.display()),
    }
}

pub fn cmd_render(cfg: &RunConfig, files: &[PathBuf], fan: Option<&str>) -> Result<Status> {
    if files.is_empty() && fan.is_none() {
        bail!("nothing to render");
    }
    let out = cfg.out_dir();
    for f in files {
        let svg = match read_drawable(f)? {
            Drawable::Plan(p) => render::plan_svg(&p),
            Drawable::Demo(d) => render::demo_svg(&d),
            Drawable::Scene(s) => render::scene_svg(&s),
        };
        let name = f.file_stem().map_or("render".into(), |s| s.to_string_lossy().into_owned());
        write(&out.join(format!("{name}.svg")), &svg)?;
    }
    if let Some(label) = fan {
        let task = load_task(cfg)?;
        let scene = load_scene(cfg)?;
        let model = model_or_fit(cfg, &task)?;
        let edge = task
            .graph
            .edges
            .iter()
            .position(|e| e.source == task.graph.initial && e.label() == label)
            .ok_or_else(|| anyhow!("`{label}` is not an action from the initial state"))?;
        let problem = build_problem(&scene, &task.domain, &task.graph, &model, None, None);
        let m = problem.models[edge].as_deref().ok_or_else(|| anyhow!("no skill model for `{label}`"))?;
        let v0 = problem.initial[edge].as_ref().ok_or_else(|| anyhow!("no nominal parameters for `{label}`"))?;
        let start = scene.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let result = optimize(m, v0, &StartSet::single(start.clone()), &cfg.cem(), &mut rng)?;
        write(&out.join("fan.svg"), &render::fan_svg(&scene, m, &start, &result.reports, 10, &mut rng))?;
    }
    Ok(Status::Success)
}

pub fn cmd_augment(cfg: &RunConfig, executions: &[PathBuf], select: &[usize]) -> Result<Status> {
    cfg.validate()?;
    let task = load_task(cfg)?;
    let model = load_model(cfg)?;
    let mut pool = load_demos(cfg)?;
    let mut demos = Vec::with_capacity(executions.len());
    for (i, p) in executions.iter().enumerate() {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let rec: PlanRecord = serde_json::from_str(&text).with_context(|| format!("parsing plan {}", p.display()))?;
        let result = PlanResult {
            actions: rec
                .actions
                .iter()
                .map(|a| imitplan::treeplan::PlannedAction {
                    edge: a.edge,
                    label: a.label.clone(),
                    xi: a.xi.clone(),
                    end: a.trajectory.final_state().cloned().unwrap_or_else(|| rec.scene.initial_state()),
                    mean_log_density: a.log_likelihood - (a.trajectory.steps.len().max(1) as f64).ln(),
                    log_likelihood: a.log_likelihood,
                    trajectory: a.trajectory.clone(),
                })
                .collect(),
            value_history: rec.value_history.clone(),
            failure: rec.failure.clone(),
            counters: Default::default(),
        };
        if result.actions.iter().any(|a| a.edge >= task.graph.edges.len()) {
            bail!("{} refers to actions outside this task", p.display());
        }
        let demo = execution_to_demo(&format!("exec{i}"), &rec.scene, &task.domain, &task.graph, &result)
            .ok_or_else(|| anyhow!("{} cannot be converted to a demonstration", p.display()))?;
        demos.push(demo);
    }
    let next = augment(&model, &mut pool, &demos, select, &task.domain, &cfg.expert)?;
    let path = cfg.out_dir().join("model.json");
    std::fs::create_dir_all(cfg.out_dir())?;
    next.save(&path)?;
    println!("wrote {}", path.display());
    Ok(Status::Success)
}
