use imitplan::assembly;
use imitplan::sim::{ArmModel, Obstacle, ObstacleShape, PlanarPose, RobotState, Scene, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arm() -> ArmModel {
    assembly::default_arm()
}

#[test]
fn inverse_kinematics_round_trips_forward_kinematics() {
    let arm = arm();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut solved = 0;
    for _ in 0..1000 {
        let q: Vec<f64> = arm.joint_limits.iter().map(|(lo, hi)| rng.random_range(*lo..*hi)).collect();
        let target = arm.end_effector(&q);
        let seed: Vec<f64> = q.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let sol = arm.inverse_kinematics(&target, &seed).expect("reachable by construction");
        assert!(arm.within_limits(&sol));
        let (d, a) = arm.end_effector(&sol).distance_to(&target);
        assert!(d < 1e-6 && a < 1e-6, "pose error {d} {a}");
        solved += 1;
    }
    assert_eq!(solved, 1000);
}

#[test]
fn unreachable_targets_are_reported() {
    let arm = arm();
    let far = PlanarPose::new(arm.reach() + 0.1, 0.0, 0.0);
    assert!(arm.inverse_kinematics(&far, &[0.0; 3]).is_err());
}

/// Independent check: densely sampled points along each link, compared with
/// each circular obstacle by point distance.
fn dense_collides(scene: &Scene, q: &[f64]) -> bool {
    let fk = scene.arm.forward_kinematics(q);
    let hit = fk.segments().enumerate().any(|(i, (a, b))| {
        let r = scene.arm.link_radii[i];
        (0..=400).any(|k| {
            let p = a + (b - a) * (k as f64 / 400.0);
            scene.obstacles.iter().any(|o| match o.shape {
                ObstacleShape::Circle { x, y, radius } => (p - Vec2::new(x, y)).norm() < radius + r,
                _ => false,
            })
        })
    });
    hit
}

#[test]
fn capsule_collisions_agree_with_dense_sampling() {
    let mut scene = assembly::canonical_scene();
    scene.objects.clear();
    scene.bounds = imitplan::sim::Bounds {
        min_x: -2.0,
        min_y: -2.0,
        max_x: 2.0,
        max_y: 2.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut disagreements = 0;
    let mut hits = 0;
    for trial in 0..1000 {
        scene.obstacles = vec![Obstacle {
            name: "o".into(),
            shape: ObstacleShape::Circle {
                x: rng.random_range(-1.0..1.0),
                y: rng.random_range(-1.0..1.0),
                radius: rng.random_range(0.02..0.2),
            },
        }];
        let q: Vec<f64> = scene.arm.joint_limits.iter().map(|(lo, hi)| rng.random_range(*lo..*hi)).collect();
        let exact = !scene.check_valid(&RobotState::at_rest(q.clone())).is_valid();
        let dense = dense_collides(&scene, &q);
        hits += exact as usize;
        // Dense sampling can only under-report: a sampled hit implies a true hit.
        if dense && !exact {
            panic!("trial {trial}: sampled collision missed by the exact check");
        }
        if exact && !dense {
            disagreements += 1;
        }
    }
    assert!(hits > 50, "test should exercise collisions, got {hits}");
    assert!(disagreements <= 5, "{disagreements} grazing contacts missed by sampling");
}

#[test]
fn grasp_then_release_keeps_object_in_place() {
    let scene = assembly::canonical_scene();
    let s = scene.initial_state();
    let g = assembly::grasp_pose(&scene, &s, "link1", "front").unwrap();
    let q = scene.arm.inverse_kinematics(&g, &s.joints).unwrap();
    let at = RobotState::at_rest(q);
    let held = scene.apply_grasp(&at, "link1", Some("front")).unwrap();
    let before = scene.object_pose(&held, "link1").unwrap();
    let (released, warning) = scene.apply_release(&held, "link1");
    assert!(warning.is_none());
    let after = scene.object_pose(&released, "link1").unwrap();
    let (d, a) = before.distance_to(&after);
    assert!(d < 1e-12 && a < 1e-12);
    let original = scene.object("link1").unwrap().pose;
    assert!(original.distance_to(&after).0 < 1e-6);
}
