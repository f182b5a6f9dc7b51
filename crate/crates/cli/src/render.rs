//! SVG drawings of scenes, demonstrations, plans and per-iteration sample fans.

use serde::{Deserialize, Serialize};

use imitplan::cem::{CemIterationReport, SampleModel};
use imitplan::demos::Demonstration;
use imitplan::dmp::Trajectory;
use imitplan::pipeline::PlacementError;
use imitplan::sim::svg::SvgCanvas;
use imitplan::sim::{RobotState, Scene, Vec2};
use rand::Rng;

const PIXELS_PER_METER: f64 = 500.0;

pub fn skill_color(skill: &str) -> &'static str {
    match skill {
        "approach" => "#d62728",
        "grasp" => "#9467bd",
        "align" => "#2ca02c",
        "place" => "#1f77b4",
        "release" => "#ff7f0e",
        _ => "#7f7f7f",
    }
}

/// One executed action of a plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub edge: usize,
    pub label: String,
    pub skill: String,
    pub xi: Vec<f64>,
    pub log_likelihood: f64,
    pub trajectory: Trajectory,
}

/// Contents of a plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub scene: Scene,
    pub mode: imitplan::pipeline::Mode,
    pub seed: u64,
    pub actions: Vec<ActionRecord>,
    pub value_history: Vec<f64>,
    pub failure: Option<String>,
    pub error: Option<PlacementError>,
}

fn ee_path(scene: &Scene, tau: &Trajectory) -> Vec<Vec2> {
    tau.steps
        .iter()
        .map(|s| scene.arm.end_effector(&s.state.joints).position())
        .collect()
}

fn draw_motions<'t>(canvas: &mut SvgCanvas, scene: &Scene, motions: impl Iterator<Item = (&'t str, &'t str, &'t Trajectory)>) {
    for (skill, label, tau) in motions {
        canvas.begin_group(&format!("action-{skill}"));
        canvas.comment(label);
        canvas.polyline(&ee_path(scene, tau), skill_color(skill), 2.0, 0.9);
        if let Some(end) = tau.final_state() {
            canvas.arm(scene, &end.joints, skill_color(skill), 0.25);
        }
        canvas.end_group();
    }
}

pub fn scene_svg(scene: &Scene) -> String {
    let mut c = SvgCanvas::new(scene.bounds, PIXELS_PER_METER);
    c.scene(scene, &scene.initial_state());
    c.finish()
}

pub fn plan_svg(plan: &PlanRecord) -> String {
    let scene = &plan.scene;
    let mut c = SvgCanvas::new(scene.bounds, PIXELS_PER_METER);
    c.scene(scene, &scene.initial_state());
    draw_motions(
        &mut c,
        scene,
        plan.actions.iter().map(|a| (a.skill.as_str(), a.label.as_str(), &a.trajectory)),
    );
    if let Some(f) = &plan.failure {
        c.text(&Vec2::new(scene.bounds.min_x + 0.02, scene.bounds.max_y - 0.04), &format!("failed: {f}"));
    }
    c.finish()
}

pub fn demo_svg(demo: &Demonstration) -> String {
    let scene = &demo.scene;
    let mut c = SvgCanvas::new(scene.bounds, PIXELS_PER_METER);
    c.scene(scene, &scene.initial_state());
    draw_motions(
        &mut c,
        scene,
        demo.segments.iter().map(|s| (s.skill.as_str(), s.label.as_str(), &s.trajectory)),
    );
    c.finish()
}

/// End-effector paths of `per_iteration` samples from each iteration's
/// sampling distribution, lighter for early iterations.
pub fn fan_svg<R: Rng + ?Sized>(
    scene: &Scene,
    model: &dyn SampleModel,
    start: &RobotState,
    reports: &[CemIterationReport],
    per_iteration: usize,
    rng: &mut R,
) -> String {
    let mut c = SvgCanvas::new(scene.bounds, PIXELS_PER_METER);
    c.scene(scene, start);
    let n = reports.len().max(1) as f64;
    for r in reports {
        c.begin_group(&format!("iteration-{}", r.iteration));
        let shade = (200.0 * (1.0 - (r.iteration as f64 + 1.0) / n)) as u8;
        let color = format!("#{shade:02x}{shade:02x}ff");
        for _ in 0..per_iteration {
            let xi = r.surrogate.sample(rng);
            if let Some(roll) = model.simulate(&xi, start) {
                c.polyline(&ee_path(scene, &roll.trajectory), &color, 1.0, 0.6);
            }
        }
        c.end_group();
    }
    c.finish()
}
