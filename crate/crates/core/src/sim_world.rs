//! Ground-truth kinematics for a group of nonholonomic 4-DoF robots.
//!
//! A global frame exists only here, for sensor synthesis and scoring. Each
//! robot also carries its odometry-frame pose, which starts at zero and is
//! advanced by the same body-frame displacement as the world pose.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{Angle, PlanarRotation, Pose4, Rotation3Z};

/// Below this yaw rate a step is integrated as a straight segment.
pub const OMEGA_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub v_h: f64,
    pub v_z: f64,
    pub w: f64,
}

impl VelocityCommand {
    pub const ZERO: VelocityCommand = VelocityCommand { v_h: 0.0, v_z: 0.0, w: 0.0 };

    pub fn new(v_h: f64, v_z: f64, w: f64) -> Self {
        VelocityCommand { v_h, v_z, w }
    }

    pub fn is_finite(&self) -> bool {
        self.v_h.is_finite() && self.v_z.is_finite() && self.w.is_finite()
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.v_h, self.v_z, self.w)
    }

    /// Clamps each component to `[-limit, limit]`. Returns `true` when any
    /// component was changed.
    pub fn saturate(&mut self, limits: &Saturation) -> bool {
        let before = *self;
        self.v_h = self.v_h.clamp(-limits.v_h, limits.v_h);
        self.v_z = self.v_z.clamp(-limits.v_z, limits.v_z);
        self.w = self.w.clamp(-limits.w, limits.w);
        before != *self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Saturation {
    pub v_h: f64,
    pub v_z: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotTruth {
    pub id: usize,
    /// World pose at t0. Defines the robot's odometry frame.
    pub origin: Pose4,
    pub world_pose: Pose4,
    /// Cumulative displacement and heading change in the odometry frame.
    pub odom_pose: Pose4,
}

impl RobotTruth {
    pub fn new(id: usize, world_pose: Pose4) -> Self {
        RobotTruth { id, origin: world_pose, world_pose, odom_pose: Pose4::default() }
    }

    /// Advances the robot by one step of unicycle kinematics.
    pub fn step(&self, cmd: &VelocityCommand, dt: f64) -> RobotTruth {
        debug_assert!(dt > 0.0);
        let body = body_displacement(cmd.v_h, cmd.w, dt);
        let dz = cmd.v_z * dt;
        let dyaw = cmd.w * dt;
        RobotTruth {
            id: self.id,
            origin: self.origin,
            world_pose: advance(&self.world_pose, &body, dz, dyaw),
            odom_pose: advance(&self.odom_pose, &body, dz, dyaw),
        }
    }

    pub fn odom_position(&self) -> Vector3<f64> {
        self.odom_pose.position()
    }
}

/// Horizontal displacement over `dt` expressed in the body frame at the start
/// of the step.
fn body_displacement(v: f64, w: f64, dt: f64) -> Vector2<f64> {
    if w.abs() > OMEGA_EPS {
        let half = 0.5 * w * dt;
        let (s_half, c_half) = half.sin_cos();
        // sin(w dt) = 2 sin cos, 1 - cos(w dt) = 2 sin^2
        let k = 2.0 * v / w * s_half;
        Vector2::new(k * c_half, k * s_half)
    } else {
        Vector2::new(v * dt, 0.0)
    }
}

fn advance(pose: &Pose4, body: &Vector2<f64>, dz: f64, dyaw: f64) -> Pose4 {
    let d = PlanarRotation::from_angle(pose.yaw.0).rotate(body);
    Pose4 {
        x: pose.x + d.x,
        y: pose.y + d.y,
        z: pose.z + dz,
        yaw: Angle(pose.yaw.0 + dyaw),
    }
}

/// Ground-truth relative position `p^{O_a}_{ab} = p_a - p_b` expressed in
/// `a`'s odometry frame, and the heading of `b` relative to `a`.
pub fn relative_truth(a: &RobotTruth, b: &RobotTruth) -> (Vector3<f64>, Angle) {
    let frame = Rotation3Z::from_angle(a.origin.yaw.0);
    let p = frame.transpose().rotate(&(a.world_pose.position() - b.world_pose.position()));
    (p, b.world_pose.yaw - a.world_pose.yaw)
}

/// Initial relative position in `a`'s odometry frame and the yaw of `b`'s
/// odometry frame as seen from `a`'s.
pub fn initial_relative(a: &RobotTruth, b: &RobotTruth) -> (Vector3<f64>, Angle) {
    let frame = Rotation3Z::from_angle(a.origin.yaw.0);
    let p0 = frame.transpose().rotate(&(a.origin.position() - b.origin.position()));
    (p0, b.origin.yaw - a.origin.yaw)
}

/// Relative position recomputed from the initial transform plus both robots'
/// odometry, without touching world coordinates after t0.
pub fn relative_from_odometry(a: &RobotTruth, b: &RobotTruth) -> Vector3<f64> {
    let (p0, theta0) = initial_relative(a, b);
    p0 + a.odom_position() - Rotation3Z::from_angle(theta0.0).rotate(&b.odom_position())
}

/// The full set of robots advanced in lock step.
#[derive(Debug, Clone)]
pub struct World {
    pub robots: Vec<RobotTruth>,
    pub tick: u64,
    pub dt: f64,
    pub substeps: u32,
}

impl World {
    pub fn new(initial: &[Pose4], dt: f64) -> Self {
        World {
            robots: initial.iter().enumerate().map(|(i, p)| RobotTruth::new(i, *p)).collect(),
            tick: 0,
            dt,
            substeps: 1,
        }
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn step(&mut self, cmds: &[VelocityCommand]) {
        assert_eq!(cmds.len(), self.robots.len());
        let h = self.dt / self.substeps.max(1) as f64;
        for (robot, cmd) in self.robots.iter_mut().zip(cmds) {
            for _ in 0..self.substeps.max(1) {
                *robot = robot.step(cmd, h);
            }
        }
        self.tick += 1;
    }
}
