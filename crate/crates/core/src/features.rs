//! Object-relative feature vectors along trajectories.
//!
//! Each vector is `[gripper, (t, p_x, p_y, p_z, r_x, r_y, r_z, r_w, |p|, v_x, v_y, v_z, |v|) per reference]`
//! where `p` is the manipulation frame expressed in the reference object's
//! frame, `r` the matching unit quaternion and `v = dp/dt`.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmp::Trajectory;
use crate::sim::{Control, PlanarPose, RobotState, Scene, SimError, Vec2};

pub const BLOCK: usize = 13;
const BLOCK_NAMES: [&str; BLOCK] = [
    "t", "p_x", "p_y", "p_z", "r_x", "r_y", "r_z", "r_w", "p_norm", "v_x", "v_y", "v_z", "v_norm",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("expected {expected} bound objects, got {got}")]
    Binding { expected: usize, got: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("empty trajectory")]
    EmptyTrajectory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub skill: String,
    /// Object roles taken from the action parameters, in parameter order.
    pub roles: Vec<String>,
    pub dimension: usize,
    pub names: Vec<String>,
}

impl FeatureSchema {
    /// With a single role the end effector is measured against it; with
    /// several, the first role is the manipulated object and each remaining
    /// role is a reference.
    pub fn new(skill: impl Into<String>, roles: Vec<String>) -> Self {
        let mut names = vec!["gripper".to_string()];
        let refs = Self::reference_range(roles.len());
        for r in &roles[refs] {
            names.extend(BLOCK_NAMES.iter().map(|n| format!("{n}@{r}")));
        }
        Self {
            skill: skill.into(),
            dimension: names.len(),
            names,
            roles,
        }
    }

    fn reference_range(n: usize) -> std::ops::Range<usize> {
        if n >= 2 {
            1..n
        } else {
            0..n
        }
    }

    pub fn references(&self) -> std::ops::Range<usize> {
        Self::reference_range(self.roles.len())
    }

    pub fn is_consistent(&self) -> bool {
        self.dimension == 1 + BLOCK * self.references().len() && self.names.len() == self.dimension
    }
}

/// Pose of the manipulation frame: the carried object if there is one, else the end effector.
pub fn manipulation_frame(scene: &Scene, s: &RobotState) -> PlanarPose {
    let ee = scene.arm.end_effector(&s.joints);
    match &s.attached {
        Some(att) => ee.compose(&att.offset),
        None => ee,
    }
}

/// World-frame linear velocity of the manipulation frame origin from joint velocities.
fn frame_velocity(scene: &Scene, s: &RobotState) -> Vec2 {
    let fk = scene.arm.forward_kinematics(&s.joints);
    let origin = manipulation_frame(scene, s).position();
    fk.joints
        .iter()
        .zip(&s.velocities)
        .map(|(j, qd)| {
            let r = origin - j;
            Vec2::new(-r.y, r.x) * *qd
        })
        .sum()
}

fn write_block(out: &mut Vec<f64>, t: f64, rel: &PlanarPose, vel: &Vec2) {
    let half = rel.theta * 0.5;
    let (mut rz, mut rw) = (half.sin(), half.cos());
    if rw < 0.0 {
        rz = -rz;
        rw = -rw;
    }
    out.extend_from_slice(&[
        t,
        rel.x,
        rel.y,
        0.0,
        0.0,
        0.0,
        rz,
        rw,
        rel.x.hypot(rel.y),
        vel.x,
        vel.y,
        0.0,
        vel.x.hypot(vel.y),
    ]);
}

fn reference_poses(schema: &FeatureSchema, objects: &[&str], scene: &Scene, s: &RobotState) -> Result<Vec<PlanarPose>, FeatureError> {
    if objects.len() != schema.roles.len() {
        return Err(FeatureError::Binding {
            expected: schema.roles.len(),
            got: objects.len(),
        });
    }
    schema
        .references()
        .map(|i| scene.object_pose(s, objects[i]).map_err(FeatureError::from))
        .collect()
}

/// Feature vector at a single state; velocity comes from the joint velocities in `s`.
pub fn extract(
    schema: &FeatureSchema,
    objects: &[&str],
    t: f64,
    s: &RobotState,
    u: &Control,
    scene: &Scene,
) -> Result<Vec<f64>, FeatureError> {
    let refs = reference_poses(schema, objects, scene, s)?;
    let frame = manipulation_frame(scene, s);
    let v_world = frame_velocity(scene, s);
    let mut out = Vec::with_capacity(schema.dimension);
    out.push(u.gripper);
    for r in &refs {
        write_block(&mut out, t, &r.relative(&frame), &r.inverse_rotate_vector(&v_world));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrace {
    pub times: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl FeatureTrace {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn to_csv(&self, schema: &FeatureSchema) -> String {
        let mut s = format!("time,{}\n", schema.names.join(","));
        for (t, v) in self.times.iter().zip(&self.vectors) {
            let _ = write!(s, "{t}");
            for x in v {
                let _ = write!(s, ",{x}");
            }
            s.push('\n');
        }
        s
    }
}

fn central_difference(p: &[Vec2], times: &[f64], i: usize) -> Vec2 {
    let n = p.len();
    if n < 2 {
        return Vec2::zeros();
    }
    let (a, b) = match i {
        0 => (0, 1),
        i if i == n - 1 => (n - 2, n - 1),
        i => (i - 1, i + 1),
    };
    (p[b] - p[a]) / (times[b] - times[a])
}

/// Features at every step; `t` is normalized to `[0, 1]` over the trajectory and
/// velocities are central differences of the relative position (one-sided at the ends).
pub fn trace(schema: &FeatureSchema, objects: &[&str], tau: &Trajectory, scene: &Scene) -> Result<FeatureTrace, FeatureError> {
    let steps = &tau.steps;
    if steps.is_empty() {
        return Err(FeatureError::EmptyTrajectory);
    }
    let times: Vec<f64> = steps.iter().map(|s| s.t).collect();
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let nrefs = schema.references().len();
    let mut rel: Vec<Vec<PlanarPose>> = vec![Vec::with_capacity(steps.len()); nrefs];
    for st in steps {
        let refs = reference_poses(schema, objects, scene, &st.state)?;
        let frame = manipulation_frame(scene, &st.state);
        for (k, r) in refs.iter().enumerate() {
            rel[k].push(r.relative(&frame));
        }
    }
    let positions: Vec<Vec<Vec2>> = rel
        .iter()
        .map(|r| r.iter().map(PlanarPose::position).collect())
        .collect();
    let vectors = (0..steps.len())
        .map(|i| {
            let t = if span > 0.0 { (times[i] - t0) / span } else { 0.0 };
            let mut out = Vec::with_capacity(schema.dimension);
            out.push(steps[i].control.gripper);
            for k in 0..nrefs {
                write_block(&mut out, t, &rel[k][i], &central_difference(&positions[k], &times, i));
            }
            out
        })
        .collect();
    Ok(FeatureTrace { times, vectors })
}
