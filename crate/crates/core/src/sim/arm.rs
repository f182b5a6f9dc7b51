//! Serial planar arm: forward kinematics and damped-least-squares inverse kinematics.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{wrap_angle, PlanarPose, Vec2};
use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub base: PlanarPose,
    pub link_lengths: Vec<f64>,
    pub link_radii: Vec<f64>,
    /// `(lo, hi)` per joint, radians.
    pub joint_limits: Vec<(f64, f64)>,
}

impl Default for ArmModel {
    fn default() -> Self {
        Self {
            base: PlanarPose::identity(),
            link_lengths: vec![0.5, 0.4, 0.22],
            link_radii: vec![0.03, 0.025, 0.02],
            joint_limits: vec![(-0.6, 3.74), (-2.8, 2.8), (-2.8, 2.8)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardKinematics {
    pub end_effector: PlanarPose,
    /// Joint positions in the world, base first, end effector last (`N + 1` points).
    pub joints: Vec<Vec2>,
}

impl ForwardKinematics {
    pub fn segments(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        self.joints.windows(2).map(|w| (w[0], w[1]))
    }
}

const IK_RESTARTS: usize = 16;
const IK_ITERS: usize = 200;
const IK_TOL: f64 = 1e-10;

impl ArmModel {
    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.dof();
        if n == 0 || self.link_radii.len() != n || self.joint_limits.len() != n {
            return Err(SimError::InvalidScene(format!(
                "arm needs matching lengths/radii/limits, got {}/{}/{}",
                n,
                self.link_radii.len(),
                self.joint_limits.len()
            )));
        }
        if self.link_lengths.iter().chain(&self.link_radii).any(|v| !(*v > 0.0)) {
            return Err(SimError::InvalidScene("arm lengths and radii must be positive".into()));
        }
        if let Some(j) = self.joint_limits.iter().position(|(lo, hi)| !(lo < hi)) {
            return Err(SimError::InvalidScene(format!("joint {j} limits are not ordered")));
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> ForwardKinematics {
        debug_assert_eq!(q.len(), self.dof());
        let mut joints = Vec::with_capacity(q.len() + 1);
        let mut pos = self.base.position();
        let mut heading = self.base.theta;
        joints.push(pos);
        for (len, qi) in self.link_lengths.iter().zip(q) {
            heading += qi;
            pos += Vec2::new(heading.cos(), heading.sin()) * *len;
            joints.push(pos);
        }
        ForwardKinematics {
            end_effector: PlanarPose::new(pos.x, pos.y, heading),
            joints,
        }
    }

    pub fn end_effector(&self, q: &[f64]) -> PlanarPose {
        self.forward_kinematics(q).end_effector
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Solves for joint positions placing the end effector at `target`.
    ///
    /// Iterates damped least squares from `seed`; if that does not converge to a
    /// limit-respecting solution, retries from a fixed sequence of random seeds.
    pub fn inverse_kinematics(&self, target: &PlanarPose, seed: &[f64]) -> Result<Vec<f64>, SimError> {
        let dist = (target.position() - self.base.position()).norm();
        if dist > self.reach() + 1e-12 {
            return Err(SimError::Unreachable {
                distance: dist,
                reach: self.reach(),
            });
        }
        if let Some(q) = self.dls(target, seed) {
            return Ok(q);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x1c0ffee);
        for _ in 0..IK_RESTARTS {
            let start: Vec<f64> = self
                .joint_limits
                .iter()
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect();
            if let Some(q) = self.dls(target, &start) {
                return Ok(q);
            }
        }
        Err(SimError::NoIkSolution)
    }

    fn pose_error(&self, target: &PlanarPose, q: &[f64]) -> Vector3<f64> {
        let ee = self.end_effector(q);
        Vector3::new(
            target.x - ee.x,
            target.y - ee.y,
            wrap_angle(target.theta - ee.theta),
        )
    }

    fn jacobian_rows(&self, q: &[f64]) -> Vec<Vector3<f64>> {
        // Column j: d(x, y, theta)/dq_j.
        let fk = self.forward_kinematics(q);
        let tip = fk.end_effector.position();
        (0..q.len())
            .map(|j| {
                let r = tip - fk.joints[j];
                Vector3::new(-r.y, r.x, 1.0)
            })
            .collect()
    }

    fn dls(&self, target: &PlanarPose, seed: &[f64]) -> Option<Vec<f64>> {
        let mut q = seed.to_vec();
        let mut err = self.pose_error(target, &q);
        let mut lambda = 1e-2;
        for _ in 0..IK_ITERS {
            if err.norm() < IK_TOL {
                break;
            }
            let cols = self.jacobian_rows(&q);
            let mut jjt = Matrix3::zeros();
            for c in &cols {
                jjt += c * c.transpose();
            }
            let damped = jjt + Matrix3::identity() * lambda * lambda;
            let y = damped.try_inverse()? * err;
            let step: Vec<f64> = cols.iter().map(|c| c.dot(&y)).collect();
            let trial: Vec<f64> = q.iter().zip(&step).map(|(a, d)| a + d).collect();
            let trial_err = self.pose_error(target, &trial);
            if trial_err.norm() < err.norm() {
                q = trial;
                err = trial_err;
                lambda = (lambda * 0.3).max(1e-9);
            } else {
                lambda *= 4.0;
                if lambda > 1e3 {
                    break;
                }
            }
        }
        if err.norm() > 1e-8 {
            return None;
        }
        // Shift each joint by whole turns toward its limit window.
        for (v, (lo, hi)) in q.iter_mut().zip(&self.joint_limits) {
            let mid = 0.5 * (lo + hi);
            *v = mid + wrap_angle(*v - mid);
        }
        self.within_limits(&q).then_some(q)
    }
}
