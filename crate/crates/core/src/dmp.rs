//! Discrete movement primitives in joint space with an end-effector goal.

use std::fmt::Write;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{wrap_angle, Control, PlanarPose, RobotState, Scene, SimError, Validity};

#[derive(Debug, Error)]
pub enum DmpError {
    #[error("parameter vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("goal has no inverse kinematics solution: {0}")]
    Goal(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmpConfig {
    pub basis: usize,
    pub spring: f64,
    pub damping: f64,
    pub dt: f64,
    pub duration: f64,
    /// Canonical system `tau * dx/dt = -phase_decay * x`.
    pub phase_decay: f64,
    /// Extra integration time after `duration`, with the phase still decaying.
    pub settle: f64,
}

impl Default for DmpConfig {
    fn default() -> Self {
        Self::critically_damped(5, 100.0, 0.02, 2.0)
    }
}

impl DmpConfig {
    pub fn critically_damped(basis: usize, spring: f64, dt: f64, duration: f64) -> Self {
        Self {
            basis,
            spring,
            damping: 2.0 * spring.sqrt(),
            dt,
            duration,
            phase_decay: 100f64.ln(),
            settle: 0.0,
        }
    }

    /// Steps in the phase window.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Steps including the settling tail.
    pub fn total_steps(&self) -> usize {
        self.steps() + (self.settle.max(0.0) / self.dt).round() as usize
    }

    /// Basis centers spread evenly in time, so exponentially in phase (decreasing).
    pub fn centers(&self) -> Vec<f64> {
        let b = self.basis;
        (0..b)
            .map(|i| {
                let frac = if b > 1 { i as f64 / (b - 1) as f64 } else { 0.0 };
                (-self.phase_decay * frac).exp()
            })
            .collect()
    }

    /// Widths chosen so neighbouring basis functions cross at about half height.
    pub fn widths(&self) -> Vec<f64> {
        let c = self.centers();
        (0..c.len())
            .map(|i| {
                let gap = if c.len() == 1 {
                    0.5
                } else if i + 1 < c.len() {
                    c[i] - c[i + 1]
                } else {
                    c[i - 1] - c[i]
                };
                1.0 / (gap * gap)
            })
            .collect()
    }

    /// Phase at normalized time `s` in `[0, 1]`.
    pub fn phase(&self, s: f64) -> f64 {
        (-self.phase_decay * s).exp()
    }

    /// Normalized basis activations times the phase: the forcing regressors.
    pub fn regressors(&self, x: f64, centers: &[f64], widths: &[f64]) -> Vec<f64> {
        let psi: Vec<f64> = centers
            .iter()
            .zip(widths)
            .map(|(c, h)| (-h * (x - c) * (x - c)).exp())
            .collect();
        let total: f64 = psi.iter().sum::<f64>().max(1e-300);
        psi.into_iter().map(|p| p * x / total).collect()
    }

    pub fn is_critically_damped(&self) -> bool {
        (self.damping * self.damping - 4.0 * self.spring).abs() <= 1e-9 * self.spring.max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    /// `joints x basis` forcing weights.
    pub weights: Vec<Vec<f64>>,
    pub goal: PlanarPose,
}

impl TrajectoryParams {
    pub fn zeros(joints: usize, basis: usize, goal: PlanarPose) -> Self {
        Self {
            weights: vec![vec![0.0; basis]; joints],
            goal,
        }
    }

    pub fn vector_len(joints: usize, basis: usize) -> usize {
        joints * basis + 3
    }

    /// Row-major weights followed by goal `(x, y, theta)`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.weights.iter().flatten().copied().collect();
        v.extend_from_slice(&[self.goal.x, self.goal.y, self.goal.theta]);
        v
    }

    pub fn from_vector(v: &[f64], joints: usize, basis: usize) -> Result<Self, DmpError> {
        let expected = Self::vector_len(joints, basis);
        if v.len() != expected {
            return Err(DmpError::DimensionMismatch { expected, got: v.len() });
        }
        let weights = v[..joints * basis].chunks(basis).map(<[f64]>::to_vec).collect();
        let g = &v[joints * basis..];
        Ok(Self {
            weights,
            goal: PlanarPose::new(g[0], g[1], wrap_angle(g[2])),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: f64,
    pub state: RobotState,
    pub control: Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<&RobotState> {
        self.steps.last().map(|s| &s.state)
    }

    pub fn to_csv(&self) -> String {
        let n = self.steps.first().map_or(0, |s| s.state.joints.len());
        let mut s = String::from("t");
        for j in 0..n {
            let _ = write!(s, ",q{j}");
        }
        for j in 0..n {
            let _ = write!(s, ",u{j}");
        }
        s.push_str(",gripper\n");
        for st in &self.steps {
            let _ = write!(s, "{}", st.t);
            for q in &st.state.joints {
                let _ = write!(s, ",{q}");
            }
            for u in &st.control.joint_velocities {
                let _ = write!(s, ",{u}");
            }
            let _ = writeln!(s, ",{}", st.control.gripper);
        }
        s
    }
}

/// Gripper command over normalized action time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GripperProfile {
    Constant { value: f64 },
    /// Smooth transition from `from` to `to` between normalized times `start` and `end`.
    Ramp { from: f64, to: f64, start: f64, end: f64 },
}

impl GripperProfile {
    pub fn at(&self, s: f64) -> f64 {
        match *self {
            GripperProfile::Constant { value } => value,
            GripperProfile::Ramp { from, to, start, end } => {
                let u = ((s - start) / (end - start)).clamp(0.0, 1.0);
                from + (to - from) * min_jerk(u)
            }
        }
    }
}

/// Minimum-jerk blend `10u^3 - 15u^4 + 6u^5`.
pub fn min_jerk(u: f64) -> f64 {
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

/// Integrates one transformation system per joint toward the IK solution of
/// `xi.goal`, seeded at the start joints. Controls are the commanded joint
/// velocities (plus Gaussian noise of the given std when `noise` is set); joint positions
/// integrate the controls and are never clamped.
pub fn rollout(
    xi: &TrajectoryParams,
    start: &RobotState,
    scene: &Scene,
    cfg: &DmpConfig,
    gripper: &GripperProfile,
    noise: Option<(f64, &mut dyn RngCore)>,
) -> Result<Trajectory, DmpError> {
    let goal = scene.arm.inverse_kinematics(&xi.goal, &start.joints)?;
    Ok(rollout_to_joints(xi, &goal, start, cfg, gripper, noise))
}

pub fn rollout_to_joints(
    xi: &TrajectoryParams,
    goal: &[f64],
    start: &RobotState,
    cfg: &DmpConfig,
    gripper: &GripperProfile,
    mut noise: Option<(f64, &mut dyn RngCore)>,
) -> Trajectory {
    let n = cfg.steps();
    let tau = cfg.duration;
    let centers = cfg.centers();
    let widths = cfg.widths();
    let normal = noise
        .as_ref()
        .and_then(|(std, _)| Normal::new(0.0, *std).ok());
    let y0 = start.joints.clone();
    let mut q = start.joints.clone();
    let mut z: Vec<f64> = start
        .velocities
        .iter()
        .map(|v| v * tau)
        .chain(std::iter::repeat(0.0))
        .take(q.len())
        .collect();
    let total = cfg.total_steps();
    let mut steps = Vec::with_capacity(total + 1);
    for i in 0..=total {
        let s_norm = i as f64 / n.max(1) as f64;
        let phi = cfg.regressors(cfg.phase(s_norm), &centers, &widths);
        let mut u = vec![0.0; q.len()];
        for j in 0..q.len() {
            let w = &xi.weights[j];
            let f: f64 = phi.iter().zip(w).map(|(p, wk)| p * wk).sum::<f64>() * (goal[j] - y0[j]);
            let zd = (cfg.spring * (goal[j] - q[j]) - cfg.damping * z[j] + cfg.spring * f) / tau;
            z[j] += zd * cfg.dt;
            u[j] = z[j] / tau;
            if let (Some(d), Some((_, rng))) = (&normal, noise.as_mut()) {
                u[j] += d.sample(rng);
            }
        }
        let mut state = start.clone();
        state.joints = q.clone();
        state.velocities = u.clone();
        steps.push(TrajectoryStep {
            t: i as f64 * cfg.dt,
            state,
            control: Control {
                joint_velocities: u.clone(),
                gripper: gripper.at(s_norm.min(1.0)),
            },
        });
        for j in 0..q.len() {
            q[j] += u[j] * cfg.dt;
        }
    }
    Trajectory { steps }
}

/// First invalid step of a trajectory, if any.
pub fn first_violation(tau: &Trajectory, scene: &Scene) -> Option<(usize, Validity)> {
    tau.steps
        .iter()
        .enumerate()
        .find_map(|(i, s)| match scene.check_valid(&s.state) {
            Validity::Valid => None,
            v => Some((i, v)),
        })
}

pub fn is_valid(tau: &Trajectory, scene: &Scene) -> bool {
    first_violation(tau, scene).is_none()
}

/// Least-squares forcing weights reproducing a demonstrated joint path.
///
/// Inverts the transformation system on the sampled positions (velocities and
/// accelerations by finite differences) and solves a ridge-regularized normal
/// equation per joint.
pub fn fit_weights(joints: &[Vec<f64>], cfg: &DmpConfig, ridge: f64) -> Vec<Vec<f64>> {
    let n = joints.len();
    let dof = joints.first().map_or(0, Vec::len);
    let tau = cfg.duration;
    let dt = cfg.dt;
    let centers = cfg.centers();
    let widths = cfg.widths();
    let b = cfg.basis;
    let goal = &joints[n - 1];
    let y0 = &joints[0];
    let vel: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..dof)
                .map(|j| {
                    if i == 0 {
                        0.0
                    } else {
                        (joints[i][j] - joints[i - 1][j]) / dt
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(dof);
    for j in 0..dof {
        let scale = goal[j] - y0[j];
        let mut ata = nalgebra::DMatrix::<f64>::zeros(b, b);
        let mut atb = nalgebra::DVector::<f64>::zeros(b);
        if scale.abs() > 1e-9 {
            for i in 0..n.saturating_sub(1) {
                let z = vel[i][j] * tau;
                let zn = vel[i + 1][j] * tau;
                let zd = (zn - z) / dt;
                // tau * zd = K (g - y) - D z + K f
                let f = (tau * zd - cfg.spring * (goal[j] - joints[i][j]) + cfg.damping * z) / cfg.spring;
                let x = cfg.phase(i as f64 / (n - 1) as f64);
                let phi: Vec<f64> = cfg.regressors(x, &centers, &widths).iter().map(|p| p * scale).collect();
                for r in 0..b {
                    atb[r] += phi[r] * f;
                    for c in 0..b {
                        ata[(r, c)] += phi[r] * phi[c];
                    }
                }
            }
        }
        for r in 0..b {
            ata[(r, r)] += ridge;
        }
        let w = ata
            .cholesky()
            .map(|c| c.solve(&atb))
            .unwrap_or_else(|| nalgebra::DVector::zeros(b));
        out.push(w.iter().copied().collect());
    }
    out
}
