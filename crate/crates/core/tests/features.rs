use imitplan::assembly::{canonical_scene, grasp_pose};
use imitplan::features::{extract, FeatureSchema};
use imitplan::sim::{Control, RobotState};

#[test]
fn carried_object_is_measured_against_the_target_after_grasping() {
    let scene = canonical_scene();
    let home = scene.initial_state();
    let schema = FeatureSchema::new("place", vec!["?l".into(), "?n".into()]);
    let u = Control {
        joint_velocities: vec![0.0; 3],
        gripper: 1.0,
    };
    for face in ["front", "left", "right"] {
        let target = grasp_pose(&scene, &home, "link1", face).unwrap();
        let q = scene.arm.inverse_kinematics(&target, &[1.5, 0.5, 0.5]).unwrap();
        let at = RobotState::at_rest(q);
        let held = scene.apply_grasp(&at, "link1", Some(face)).unwrap();
        let f = extract(&schema, &["link1", "node2"], 0.3, &held, &u, &scene).unwrap();

        // Independent transform: link and node poses straight from the scene description.
        let link = &scene.object("link1").unwrap().pose;
        let node = &scene.object("node2").unwrap().pose;
        let (s, c) = node.theta.sin_cos();
        let (dx, dy) = (link.x - node.x, link.y - node.y);
        let (px, py) = (c * dx + s * dy, -s * dx + c * dy);
        let half = (link.theta - node.theta) * 0.5;
        assert!((f[1] - 0.3).abs() < 1e-12);
        assert!((f[2] - px).abs() < 1e-9 && (f[3] - py).abs() < 1e-9, "{face}: {:?} vs {px},{py}", &f[2..4]);
        assert!((f[7] - half.sin()).abs() < 1e-9 && (f[8] - half.cos()).abs() < 1e-9);

        // Before the grasp the same schema measures the bare end effector.
        let free = extract(&schema, &["link1", "node2"], 0.3, &at, &u, &scene).unwrap();
        let ee = scene.arm.end_effector(&at.joints);
        let (ex, ey) = (ee.x - node.x, ee.y - node.y);
        assert!((free[2] - (c * ex + s * ey)).abs() < 1e-9);
        assert!((free[3] - (-s * ex + c * ey)).abs() < 1e-9);
    }
}
