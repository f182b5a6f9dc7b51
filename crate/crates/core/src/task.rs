//! Binding grounded symbolic actions to continuous skills: which objects a
//! skill is measured against, what the gripper does, and the sampling model
//! the optimizer uses.

use serde::{Deserialize, Serialize};

use crate::cem::{Rollout, SampleModel};
use crate::density::Gmm;
use crate::dmp::{first_violation, rollout, DmpConfig, GripperProfile, TrajectoryParams};
use crate::features::{trace, FeatureSchema};
use crate::pddl::{Domain, GroundedAction};
use crate::sim::{PlanarPose, RobotState, Scene};

/// Predicate whose addition or deletion marks a grasp or a release.
pub const HAND_PREDICATE: &str = "hand-occupied";

const GRIPPER_RAMP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Event {
    None,
    /// Attach at the end of the trajectory.
    Grasp { object: String, frame: Option<String> },
    /// Detach before the trajectory starts.
    Release { object: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub skill: String,
    pub label: String,
    /// Parameter names bound to problem objects, in parameter order.
    pub roles: Vec<String>,
    pub objects: Vec<String>,
    /// Arguments bound to domain constants.
    pub constants: Vec<String>,
    pub event: Event,
    pub gripper: GripperProfile,
}

impl ActionSpec {
    pub fn from_action(domain: &Domain, action: &GroundedAction) -> Option<Self> {
        let schema = domain.action(&action.schema)?;
        let is_const = |a: &str| domain.constants.iter().any(|c| c.name == a);
        let mut roles = Vec::new();
        let mut objects = Vec::new();
        let mut constants = Vec::new();
        for (p, a) in schema.parameters.iter().zip(&action.args) {
            if is_const(a) {
                constants.push(a.clone());
            } else {
                roles.push(p.name.trim_start_matches('?').to_string());
                objects.push(a.clone());
            }
        }
        let touches_hand = |positive: bool| {
            schema
                .effect
                .iter()
                .any(|l| l.positive == positive && l.atom.predicate == HAND_PREDICATE)
        };
        let holds = schema
            .precondition
            .iter()
            .any(|l| l.positive && l.atom.predicate == HAND_PREDICATE);
        let object = objects.first().cloned().unwrap_or_default();
        let (event, gripper) = if touches_hand(true) {
            (
                Event::Grasp {
                    object,
                    frame: constants.first().cloned(),
                },
                GripperProfile::Ramp {
                    from: 0.0,
                    to: 1.0,
                    start: 1.0 - GRIPPER_RAMP,
                    end: 1.0,
                },
            )
        } else if touches_hand(false) {
            (
                Event::Release { object },
                GripperProfile::Ramp {
                    from: 1.0,
                    to: 0.0,
                    start: 0.0,
                    end: GRIPPER_RAMP,
                },
            )
        } else {
            let value = if holds { 1.0 } else { 0.0 };
            (Event::None, GripperProfile::Constant { value })
        };
        Some(Self {
            skill: action.skill.clone(),
            label: action.label(),
            roles,
            objects,
            constants,
            event,
            gripper,
        })
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(self.skill.clone(), self.roles.clone())
    }

    /// Key under which demonstrated nominal parameters are stored.
    pub fn nominal_key(&self) -> String {
        std::iter::once(self.skill.as_str())
            .chain(self.constants.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Object whose frame the end-effector goal is expressed in.
    pub fn goal_reference(&self) -> Option<&str> {
        self.objects.last().map(String::as_str)
    }

    pub fn object_refs(&self) -> Vec<&str> {
        self.objects.iter().map(String::as_str).collect()
    }

    /// Start state with a start-of-action release applied.
    pub fn prepare(&self, scene: &Scene, start: &RobotState) -> Option<RobotState> {
        match &self.event {
            Event::Release { object } => match scene.apply_release(start, object) {
                (s, None) => Some(s),
                (_, Some(_)) => None,
            },
            _ => Some(start.clone()),
        }
    }

    /// End state with an end-of-action grasp applied; `None` if the grasp fails.
    pub fn finish(&self, scene: &Scene, end: &RobotState) -> Option<RobotState> {
        let mut s = match &self.event {
            Event::Grasp { object, frame } => scene.apply_grasp(end, object, frame.as_deref()).ok()?,
            _ => end.clone(),
        };
        s.velocities.iter_mut().for_each(|v| *v = 0.0);
        Some(s)
    }
}

/// Sampling model for one grounded action in one scene.
pub struct ActionModel<'a> {
    pub scene: &'a Scene,
    pub spec: ActionSpec,
    pub schema: FeatureSchema,
    pub expert: &'a Gmm,
    pub dmp: DmpConfig,
}

impl<'a> ActionModel<'a> {
    pub fn new(scene: &'a Scene, spec: ActionSpec, expert: &'a Gmm, dmp: DmpConfig) -> Self {
        Self {
            scene,
            schema: spec.schema(),
            spec,
            expert,
            dmp,
        }
    }

    pub fn joints(&self) -> usize {
        self.scene.arm.dof()
    }

    pub fn params(&self, xi: &[f64]) -> Option<TrajectoryParams> {
        TrajectoryParams::from_vector(xi, self.joints(), self.dmp.basis).ok()
    }

    /// World pose of a goal given relative to the goal reference object.
    pub fn goal_in_world(&self, s: &RobotState, relative: &PlanarPose) -> Option<PlanarPose> {
        let r = self.spec.goal_reference()?;
        Some(self.scene.object_pose(s, r).ok()?.compose(relative))
    }
}

impl SampleModel for ActionModel<'_> {
    fn dim(&self) -> usize {
        TrajectoryParams::vector_len(self.joints(), self.dmp.basis)
    }

    fn simulate(&self, xi: &[f64], start: &RobotState) -> Option<Rollout> {
        let xi = self.params(xi)?;
        let start = self.spec.prepare(self.scene, start)?;
        let tau = rollout(&xi, &start, self.scene, &self.dmp, &self.spec.gripper, None).ok()?;
        if first_violation(&tau, self.scene).is_some() {
            return None;
        }
        let end = self.spec.finish(self.scene, tau.final_state()?)?;
        Some(Rollout { trajectory: tau, end })
    }

    fn score(&self, r: &Rollout) -> Vec<f64> {
        let objects = self.spec.object_refs();
        match trace(&self.schema, &objects, &r.trajectory, self.scene) {
            Ok(tr) => tr
                .vectors
                .iter()
                .map(|x| self.expert.log_pdf(x).unwrap_or(f64::NEG_INFINITY))
                .collect(),
            Err(_) => vec![f64::NEG_INFINITY],
        }
    }
}
