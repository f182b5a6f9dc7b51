//! Kinematic planar world: an N-link arm, objects it can pick and place, and
//! static obstacles.

mod arm;
pub mod geometry;
pub mod svg;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arm::{ArmModel, ForwardKinematics};
pub use geometry::{wrap_angle, PlanarPose, Shape, Vec2};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("target at distance {distance:.4} m is outside the arm reach {reach:.4} m")]
    Unreachable { distance: f64, reach: f64 },
    #[error("no joint-limit-respecting inverse kinematics solution")]
    NoIkSolution,
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("object `{object}` has no grasp frame within tolerance (nearest `{frame}` at {distance:.4} m)")]
    GraspOutOfTolerance {
        object: String,
        frame: String,
        distance: f64,
    },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectCategory {
    Link,
    Node,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Footprint {
    Circle { radius: f64 },
    Box { half_x: f64, half_y: f64 },
}

impl Footprint {
    pub fn shape_at(&self, pose: &PlanarPose) -> Shape {
        match *self {
            Footprint::Circle { radius } => Shape::circle(pose.position(), radius),
            Footprint::Box { half_x, half_y } => Shape::oriented_box(pose, half_x, half_y),
        }
    }

    fn is_positive(&self) -> bool {
        match *self {
            Footprint::Circle { radius } => radius > 0.0,
            Footprint::Box { half_x, half_y } => half_x > 0.0 && half_y > 0.0,
        }
    }
}

/// A named pose in the owning object's frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFrame {
    pub name: String,
    pub pose: PlanarPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub category: ObjectCategory,
    pub pose: PlanarPose,
    pub footprint: Footprint,
    /// End-effector poses (object frame) from which the object can be grasped.
    #[serde(default)]
    pub grasp_frames: Vec<NamedFrame>,
    /// Poses (object frame) where a carried object's frame sits when mated here.
    #[serde(default)]
    pub mate_sites: Vec<NamedFrame>,
}

impl SceneObject {
    pub fn grasp_frame(&self, name: &str) -> Option<&NamedFrame> {
        self.grasp_frames.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObstacleShape {
    Circle { x: f64, y: f64, radius: f64 },
    /// Axis-aligned rectangle.
    Rect { min_x: f64, min_y: f64, max_x: f64, max_y: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub name: String,
    pub shape: ObstacleShape,
}

impl Obstacle {
    pub fn shape(&self) -> Shape {
        match self.shape {
            ObstacleShape::Circle { x, y, radius } => Shape::circle(Vec2::new(x, y), radius),
            ObstacleShape::Rect {
                min_x,
                min_y,
                max_x,
                max_y,
            } => Shape::aabb(Vec2::new(min_x, min_y), Vec2::new(max_x, max_y)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn diagonal(&self) -> f64 {
        (self.max_x - self.min_x).hypot(self.max_y - self.min_y)
    }
}

fn default_grasp_tolerance() -> f64 {
    0.02
}

fn default_grasp_angle_tolerance() -> f64 {
    0.35
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub arm: ArmModel,
    /// Joint configuration the robot starts from.
    pub home: Vec<f64>,
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub bounds: Bounds,
    #[serde(default = "default_grasp_tolerance")]
    pub grasp_tolerance: f64,
    #[serde(default = "default_grasp_angle_tolerance")]
    pub grasp_angle_tolerance: f64,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SimError> {
        self.arm.validate()?;
        if self.home.len() != self.arm.dof() {
            return Err(SimError::InvalidScene("home configuration has wrong length".into()));
        }
        let mut names = BTreeSet::new();
        for o in &self.objects {
            if !names.insert(o.name.as_str()) {
                return Err(SimError::InvalidScene(format!("duplicate object `{}`", o.name)));
            }
            if !o.footprint.is_positive() {
                return Err(SimError::InvalidScene(format!("object `{}` has empty footprint", o.name)));
            }
        }
        for ob in &self.obstacles {
            let ok = match ob.shape {
                ObstacleShape::Circle { radius, .. } => radius > 0.0,
                ObstacleShape::Rect {
                    min_x,
                    min_y,
                    max_x,
                    max_y,
                } => max_x > min_x && max_y > min_y,
            };
            if !ok {
                return Err(SimError::InvalidScene(format!("obstacle `{}` has empty extent", ob.name)));
            }
        }
        if !(self.bounds.max_x > self.bounds.min_x && self.bounds.max_y > self.bounds.min_y) {
            return Err(SimError::InvalidScene("workspace bounds are empty".into()));
        }
        Ok(())
    }

    pub fn object(&self, name: &str) -> Result<&SceneObject, SimError> {
        self.objects
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| SimError::UnknownObject(name.to_string()))
    }

    pub fn load(path: &Path) -> Result<Scene, SimError> {
        let scene: Scene = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn initial_state(&self) -> RobotState {
        RobotState::at_rest(self.home.clone())
    }

    /// World pose of an object, accounting for grasps and earlier placements.
    pub fn object_pose(&self, state: &RobotState, name: &str) -> Result<PlanarPose, SimError> {
        if let Some(att) = state.attached.as_ref().filter(|a| a.object == name) {
            return Ok(self.arm.end_effector(&state.joints).compose(&att.offset));
        }
        if let Some(p) = state.placed.get(name) {
            return Ok(*p);
        }
        Ok(self.object(name)?.pose)
    }

    /// Validity of a single robot state: joint limits, workspace bounds, and
    /// collisions of arm links and any carried object with the rest of the world.
    pub fn check_valid(&self, state: &RobotState) -> Validity {
        for (j, (v, (lo, hi))) in state.joints.iter().zip(&self.arm.joint_limits).enumerate() {
            if !(*v >= *lo && *v <= *hi) {
                return Validity::JointLimit { joint: j, value: *v };
            }
        }
        let fk = self.arm.forward_kinematics(&state.joints);
        let ee = fk.end_effector;
        if !self.bounds.contains(&ee.position()) {
            return Validity::Collision {
                part: "end-effector".into(),
                entity: "workspace-bounds".into(),
            };
        }
        let held = state.attached.as_ref().map(|a| a.object.as_str());
        let mut statics: Vec<(&str, Shape)> = Vec::with_capacity(self.obstacles.len() + self.objects.len());
        for ob in &self.obstacles {
            statics.push((ob.name.as_str(), ob.shape()));
        }
        for o in &self.objects {
            if Some(o.name.as_str()) == held {
                continue;
            }
            let pose = state.placed.get(&o.name).copied().unwrap_or(o.pose);
            statics.push((o.name.as_str(), o.footprint.shape_at(&pose)));
        }
        for (i, (a, b)) in fk.segments().enumerate() {
            let capsule = Shape::capsule(a, b, self.arm.link_radii[i]);
            if let Some((name, _)) = statics.iter().find(|(_, s)| capsule.intersects(s)) {
                return Validity::Collision {
                    part: format!("link{i}"),
                    entity: name.to_string(),
                };
            }
        }
        if let Some(att) = &state.attached {
            let Ok(obj) = self.object(&att.object) else {
                return Validity::Collision {
                    part: att.object.clone(),
                    entity: "unknown-object".into(),
                };
            };
            let pose = ee.compose(&att.offset);
            if !self.bounds.contains(&pose.position()) {
                return Validity::Collision {
                    part: att.object.clone(),
                    entity: "workspace-bounds".into(),
                };
            }
            let footprint = obj.footprint.shape_at(&pose);
            if let Some((name, _)) = statics.iter().find(|(_, s)| footprint.intersects(s)) {
                return Validity::Collision {
                    part: att.object.clone(),
                    entity: name.to_string(),
                };
            }
        }
        Validity::Valid
    }

    /// Attaches `object` if the end effector sits within tolerance of one of
    /// its grasp frames (or of the named frame when `frame` is given).
    pub fn apply_grasp(&self, state: &RobotState, object: &str, frame: Option<&str>) -> Result<RobotState, SimError> {
        let obj = self.object(object)?;
        let obj_pose = self.object_pose(state, object)?;
        let ee = self.arm.end_effector(&state.joints);
        let mut best: Option<(&NamedFrame, f64, f64)> = None;
        for f in obj.grasp_frames.iter().filter(|f| frame.is_none_or(|n| n == f.name)) {
            let (d, a) = ee.distance_to(&obj_pose.compose(&f.pose));
            if best.is_none_or(|(_, bd, _)| d < bd) {
                best = Some((f, d, a));
            }
        }
        let Some((f, d, a)) = best else {
            return Err(SimError::GraspOutOfTolerance {
                object: object.into(),
                frame: frame.unwrap_or("<none>").into(),
                distance: f64::INFINITY,
            });
        };
        if d > self.grasp_tolerance || a > self.grasp_angle_tolerance {
            return Err(SimError::GraspOutOfTolerance {
                object: object.into(),
                frame: f.name.clone(),
                distance: d,
            });
        }
        let mut next = state.clone();
        next.placed.remove(object);
        next.attached = Some(Attachment {
            object: object.into(),
            frame: f.name.clone(),
            offset: ee.relative(&obj_pose),
        });
        Ok(next)
    }

    /// Detaches the carried object, leaving it where it currently is.
    /// Releasing with nothing held (or a different object held) returns the
    /// state unchanged together with a warning.
    pub fn apply_release(&self, state: &RobotState, object: &str) -> (RobotState, Option<String>) {
        match &state.attached {
            Some(att) if att.object == object => {
                let pose = self.arm.end_effector(&state.joints).compose(&att.offset);
                let mut next = state.clone();
                next.attached = None;
                next.placed.insert(object.to_string(), pose);
                (next, None)
            }
            Some(att) => (
                state.clone(),
                Some(format!("release of `{object}` while holding `{}`", att.object)),
            ),
            None => (state.clone(), Some(format!("release of `{object}` with nothing held"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub object: String,
    /// Grasp frame name used when attaching.
    pub frame: String,
    /// Object pose in the end-effector frame.
    pub offset: PlanarPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub joints: Vec<f64>,
    pub velocities: Vec<f64>,
    #[serde(default)]
    pub attached: Option<Attachment>,
    /// Objects released somewhere other than their scene pose.
    #[serde(default)]
    pub placed: BTreeMap<String, PlanarPose>,
}

impl RobotState {
    pub fn at_rest(joints: Vec<f64>) -> Self {
        let n = joints.len();
        Self {
            joints,
            velocities: vec![0.0; n],
            attached: None,
            placed: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub joint_velocities: Vec<f64>,
    /// 0 = open, 1 = closed.
    pub gripper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Validity {
    Valid,
    Collision { part: String, entity: String },
    JointLimit { joint: usize, value: f64 },
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}
