use std::path::{Path, PathBuf};

use imitplan::assembly::canonical_scene;
use imitplan::sim::{Obstacle, ObstacleShape};
use imitplan_cli::run;

const QUICK: &str = r#"{"samples": 30, "max_iter": 2, "demos_per_path": 1, "scenes": {"count": 2}}"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// Quick config, scripted demonstrations and a fitted model.
    fn new() -> Self {
        let ws = Workspace { dir: tempfile::tempdir().unwrap() };
        std::fs::write(ws.path("quick.json"), QUICK).unwrap();
        assert_eq!(ws.run(&["demo", "--demos", &ws.arg("demos")]), 0);
        assert_eq!(ws.run(&["learn", "--demos", &ws.arg("demos"), "--out", &ws.arg("fit")]), 0);
        ws
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn arg(&self, p: &str) -> String {
        self.path(p).to_string_lossy().into_owned()
    }

    fn run(&self, args: &[&str]) -> i32 {
        let mut all = vec!["imitplan".to_string(), "--config".into(), self.arg("quick.json")];
        all.extend(args.iter().map(|s| s.to_string()));
        run(all)
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Drops the trailing wall-time column.
fn without_time(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn usage_and_input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere").to_string_lossy().into_owned();
    assert_eq!(run(["imitplan", "learn", "--demos", &missing]), 2);
    assert_eq!(run(["imitplan", "plan", "--frobnicate"]), 2);
    assert_eq!(run(["imitplan", "plan"]), 2, "planning without a model or demonstrations");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"samples": 1}"#).unwrap();
    assert_eq!(run(["imitplan", "--config", &bad.to_string_lossy(), "plan"]), 2);
    assert_eq!(run(["imitplan", "render"]), 2);
}

#[test]
fn learning_writes_a_model_and_respects_the_component_count() {
    let ws = Workspace::new();
    let model: serde_json::Value = serde_json::from_str(&read(&ws.path("fit/model.json"))).unwrap();
    let report: serde_json::Value = serde_json::from_str(&read(&ws.path("fit/fit_report.json"))).unwrap();
    assert_eq!(report["demonstrations"], 6);
    let count = |m: &serde_json::Value| m["skills"]["place"]["density"]["components"].as_array().unwrap().len();
    assert_eq!(count(&model), 3);
    assert_eq!(ws.run(&["learn", "--demos", &ws.arg("demos"), "--k", "1", "--out", &ws.arg("k1")]), 0);
    let single: serde_json::Value = serde_json::from_str(&read(&ws.path("k1/model.json"))).unwrap();
    assert_eq!(count(&single), 1);
}

#[test]
fn blocked_scene_reports_a_planning_failure() {
    let ws = Workspace::new();
    let mut scene = canonical_scene();
    // A wall the arm must cross to reach anything.
    scene.obstacles.push(Obstacle {
        name: "wall".into(),
        shape: ObstacleShape::Rect {
            min_x: -0.9,
            min_y: 0.43,
            max_x: 0.9,
            max_y: 0.47,
        },
    });
    scene.save(&ws.path("walled.json")).unwrap();
    let code = ws.run(&["plan", "--scene", &ws.arg("walled.json"), "--model", &ws.arg("fit/model.json"), "--out", &ws.arg("walled")]);
    assert_eq!(code, 1);
    let plan: serde_json::Value = serde_json::from_str(&read(&ws.path("walled/plan.json"))).unwrap();
    assert!(plan["failure"].is_string());
    assert!(plan["error"].is_null());
}

#[test]
fn plans_render_and_feed_augmentation() {
    let ws = Workspace::new();
    let code = ws.run(&["plan", "--model", &ws.arg("fit/model.json"), "--out", &ws.arg("p"), "--seed", "3"]);
    assert!(code == 0 || code == 1);
    let plan = read(&ws.path("p/plan.json"));
    assert!(read(&ws.path("p/plan.svg")).starts_with("<svg"));
    let value: serde_json::Value = serde_json::from_str(&plan).unwrap();
    let actions = value["actions"].as_array().unwrap();
    for (i, a) in actions.iter().enumerate() {
        let csv = read(&ws.path(&format!("p/trajectory_{i}_{}.csv", a["skill"].as_str().unwrap())));
        assert!(csv.lines().count() > 10);
    }

    let demo = std::fs::read_dir(ws.path("demos")).unwrap().next().unwrap().unwrap().path();
    let scene = ws.path("scene.json");
    canonical_scene().save(&scene).unwrap();
    for f in [&ws.path("p/plan.json"), &demo, &scene] {
        assert_eq!(ws.run(&["render", &f.to_string_lossy(), "--out", &ws.arg("r")]), 0);
        let stem = f.file_stem().unwrap().to_string_lossy().into_owned();
        assert!(read(&ws.path(&format!("r/{stem}.svg"))).contains("</svg>"));
    }
    assert_eq!(ws.run(&["render", &ws.arg("quick.json")]), 2);

    let aug = ws.run(&[
        "augment",
        "--model",
        &ws.arg("fit/model.json"),
        "--demos",
        &ws.arg("demos"),
        "--executions",
        &ws.arg("p/plan.json"),
        "--select",
        "5",
        "--out",
        &ws.arg("a"),
    ]);
    assert_eq!(aug, 2, "selection index out of range");
}

#[test]
fn seeded_experiments_are_reproducible() {
    let ws = Workspace::new();
    let model = ws.arg("fit/model.json");
    for out in ["x1", "x2"] {
        let code = ws.run(&["experiment", "--model", &model, "--modes", "full,baseline", "--seed", "11", "--out", &ws.arg(out)]);
        assert_eq!(code, 0);
    }
    let a = read(&ws.path("x1/trials.csv"));
    let b = read(&ws.path("x2/trials.csv"));
    assert_eq!(a.lines().count(), 1 + 2 * 2);
    assert_eq!(without_time(&a), without_time(&b));
    assert_eq!(read(&ws.path("x1/scene00.json")), read(&ws.path("x2/scene00.json")));
}

#[test]
fn an_empty_suite_gives_a_header_only_table() {
    let ws = Workspace::new();
    let code = ws.run(&["experiment", "--model", &ws.arg("fit/model.json"), "--scenes", "0", "--out", &ws.arg("e")]);
    assert_eq!(code, 0);
    assert_eq!(read(&ws.path("e/trials.csv")).lines().count(), 1);
    let summary = read(&ws.path("e/summary.txt"));
    assert!(summary.lines().next().unwrap().starts_with("mode"));
}
