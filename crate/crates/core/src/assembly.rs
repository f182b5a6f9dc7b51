//! The link-and-node assembly task: bundled domain, scene parts and the
//! waypoint geometry used by scripted demonstrations.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use crate::pddl::{self, Domain, PddlError, Problem};
use crate::sim::{ArmModel, Bounds, Footprint, NamedFrame, ObjectCategory, PlanarPose, RobotState, Scene, SceneObject, SimError};

pub const DOMAIN: &str = include_str!("../data/domain.pddl");
pub const PROBLEM: &str = include_str!("../data/problem.pddl");

pub const FACES: [&str; 3] = ["front", "left", "right"];
pub const LINK_HALF_X: f64 = 0.06;
pub const LINK_HALF_Y: f64 = 0.02;
pub const NODE_RADIUS: f64 = 0.035;
/// Gap between the gripper origin and the link surface when grasping.
pub const STANDOFF: f64 = 0.04;
/// Offset of the side grasps from the link center.
pub const GRASP_SPREAD: f64 = 0.03;
pub const MATE_OFFSET: f64 = 0.1;
pub const PRE_GRASP: f64 = 0.08;
pub const PRE_MATE: f64 = 0.06;
pub const RETRACT: f64 = 0.08;

pub fn domain() -> Result<Domain, PddlError> {
    pddl::parse_domain(DOMAIN)
}

pub fn problem(dom: &Domain) -> Result<Problem, PddlError> {
    pddl::parse_problem(PROBLEM, dom)
}

pub fn default_arm() -> ArmModel {
    ArmModel {
        base: PlanarPose::identity(),
        link_lengths: vec![0.45, 0.45, 0.2],
        link_radii: vec![0.03, 0.025, 0.02],
        joint_limits: vec![(-0.6, 3.74), (-2.8, 2.8), (-2.8, 2.8)],
    }
}

pub fn default_bounds() -> Bounds {
    Bounds {
        min_x: -0.9,
        min_y: -0.2,
        max_x: 0.9,
        max_y: 1.0,
    }
}

pub const HOME: [f64; 3] = [2.8, -2.5, 0.0];

pub fn link(name: &str, pose: PlanarPose) -> SceneObject {
    SceneObject {
        name: name.into(),
        category: ObjectCategory::Link,
        pose,
        footprint: Footprint::Box {
            half_x: LINK_HALF_X,
            half_y: LINK_HALF_Y,
        },
        grasp_frames: vec![
            aimed("front", 0.0, FRAC_PI_2),
            aimed("left", -GRASP_SPREAD, FRAC_PI_4),
            aimed("right", GRASP_SPREAD, 3.0 * FRAC_PI_4),
        ],
        mate_sites: vec![],
    }
}

/// Gripper pose `STANDOFF` below the link's lower edge at `x`, pointing along `heading`.
fn aimed(name: &str, x: f64, heading: f64) -> NamedFrame {
    let (s, c) = heading.sin_cos();
    frame(name, PlanarPose::new(x - STANDOFF * c, -LINK_HALF_Y - STANDOFF * s, heading))
}

pub fn node(name: &str, pose: PlanarPose) -> SceneObject {
    let below = PlanarPose::new(0.0, -MATE_OFFSET, 0.0);
    SceneObject {
        name: name.into(),
        category: ObjectCategory::Node,
        pose,
        footprint: Footprint::Circle { radius: NODE_RADIUS },
        grasp_frames: vec![],
        mate_sites: FACES.iter().map(|f| frame(f, below)).collect(),
    }
}

fn frame(name: &str, pose: PlanarPose) -> NamedFrame {
    NamedFrame { name: name.into(), pose }
}

/// Link in front of the arm, one node beyond it on each side.
pub fn canonical_scene() -> Scene {
    Scene {
        arm: default_arm(),
        home: HOME.to_vec(),
        objects: vec![
            link("link1", PlanarPose::new(0.0, 0.55, 0.0)),
            node("node1", PlanarPose::new(-0.35, 0.85, 0.0)),
            node("node2", PlanarPose::new(0.35, 0.85, 0.0)),
        ],
        obstacles: vec![],
        bounds: default_bounds(),
        grasp_tolerance: 0.02,
        grasp_angle_tolerance: 0.35,
    }
}

fn backoff(p: &PlanarPose, d: f64) -> PlanarPose {
    p.compose(&PlanarPose::new(-d, 0.0, 0.0))
}

fn grasp_frame(scene: &Scene, link: &str, face: &str) -> Result<PlanarPose, SimError> {
    scene
        .object(link)?
        .grasp_frame(face)
        .map(|f| f.pose)
        .ok_or_else(|| SimError::InvalidScene(format!("`{link}` has no grasp frame `{face}`")))
}

fn mate_site(scene: &Scene, node: &str, face: &str) -> Result<PlanarPose, SimError> {
    scene
        .object(node)?
        .mate_sites
        .iter()
        .find(|f| f.name == face)
        .map(|f| f.pose)
        .ok_or_else(|| SimError::InvalidScene(format!("`{node}` has no mate site `{face}`")))
}

/// World end-effector pose that grasps `link` by `face`.
pub fn grasp_pose(scene: &Scene, s: &RobotState, link: &str, face: &str) -> Result<PlanarPose, SimError> {
    Ok(scene.object_pose(s, link)?.compose(&grasp_frame(scene, link, face)?))
}

pub fn pre_grasp_pose(scene: &Scene, s: &RobotState, link: &str, face: &str) -> Result<PlanarPose, SimError> {
    Ok(backoff(&grasp_pose(scene, s, link, face)?, PRE_GRASP))
}

/// Ideal world pose of a link mated to `node` after being grasped by `face`.
pub fn mated_link_pose(scene: &Scene, s: &RobotState, node: &str, face: &str) -> Result<PlanarPose, SimError> {
    Ok(scene.object_pose(s, node)?.compose(&mate_site(scene, node, face)?))
}

pub fn mate_pose(scene: &Scene, s: &RobotState, link: &str, node: &str, face: &str) -> Result<PlanarPose, SimError> {
    Ok(mated_link_pose(scene, s, node, face)?.compose(&grasp_frame(scene, link, face)?))
}

/// Link held `PRE_MATE` further out along the node-to-site direction.
pub fn pre_mate_pose(scene: &Scene, s: &RobotState, link: &str, node: &str, face: &str) -> Result<PlanarPose, SimError> {
    let site = mate_site(scene, node, face)?;
    let r = site.position().norm().max(1e-9);
    let k = (r + PRE_MATE) / r;
    let out = PlanarPose::new(site.x * k, site.y * k, site.theta);
    Ok(scene
        .object_pose(s, node)?
        .compose(&out)
        .compose(&grasp_frame(scene, link, face)?))
}

pub fn retract_pose(scene: &Scene, s: &RobotState, link: &str, node: &str, face: &str) -> Result<PlanarPose, SimError> {
    Ok(backoff(&mate_pose(scene, s, link, node, face)?, RETRACT))
}

/// Scripted end-effector target for a skill, given its bound objects
/// (link first, then node when present) and the grasp face.
pub fn skill_target(scene: &Scene, s: &RobotState, skill: &str, objects: &[String], face: &str) -> Result<PlanarPose, SimError> {
    let link = objects.first().ok_or_else(|| SimError::InvalidScene(format!("`{skill}` binds no objects")))?;
    let node = || {
        objects
            .get(1)
            .ok_or_else(|| SimError::InvalidScene(format!("`{skill}` binds no node")))
    };
    match skill {
        "approach" => pre_grasp_pose(scene, s, link, face),
        "grasp" => grasp_pose(scene, s, link, face),
        "align" => pre_mate_pose(scene, s, link, node()?, face),
        "place" => mate_pose(scene, s, link, node()?, face),
        "release" => retract_pose(scene, s, link, node()?, face),
        other => Err(SimError::InvalidScene(format!("no scripted target for skill `{other}`"))),
    }
}

/// Whether a skill ends in free space (its target can be perturbed in demonstrations).
pub fn is_free_space(skill: &str) -> bool {
    matches!(skill, "approach" | "align" | "release")
}
