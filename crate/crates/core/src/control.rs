//! Two-stage formation controller.
//!
//! Stage 1 drives every robot around a helix so the pairwise estimators see
//! enough excitation. Once every robot's estimators are excited, stage 2
//! tracks a fixed offset in the leader's odometry frame.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coop_localization::LeaderRealtime;
use crate::geometry::{Angle, Rotation3Z};
use crate::sim_world::{RobotTruth, VelocityCommand};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("gain {name} = {value} must be positive")]
    InvalidGain { name: &'static str, value: f64 },
    #[error("formation offset of robot {0} is invalid (leader offset must be zero, all finite)")]
    InvalidFormation(usize),
    #[error("stage 1 still running at tick {tick}; robots {pending:?} not sufficiently excited")]
    ExcitationTimeout { tick: u64, pending: Vec<usize> },
}

/// Desired offsets of every robot in the leader's odometry frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationSpec {
    offsets: Vec<Vector3<f64>>,
}

impl FormationSpec {
    pub fn new(offsets: Vec<Vector3<f64>>) -> Result<Self, ControlError> {
        for (i, o) in offsets.iter().enumerate() {
            if !o.iter().all(|x| x.is_finite()) || (i == 0 && *o != Vector3::zeros()) {
                return Err(ControlError::InvalidFormation(i));
            }
        }
        Ok(FormationSpec { offsets })
    }

    pub fn offset(&self, robot: usize) -> &Vector3<f64> {
        &self.offsets[robot]
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Position error in the follower's body frame plus the trig pair of the
/// heading error relative to the leader.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackingError {
    pub e_p: Vector3<f64>,
    pub e_c: f64,
    pub e_s: f64,
}

impl TrackingError {
    pub fn norm(&self) -> f64 {
        (self.e_p.norm_squared() + self.e_c * self.e_c + self.e_s * self.e_s).sqrt()
    }

    pub fn position_norm(&self) -> f64 {
        self.e_p.norm()
    }

    /// Heading error in radians recovered from the trig pair.
    pub fn heading(&self) -> f64 {
        self.e_s.atan2(1.0 - self.e_c)
    }

    pub fn difference(&self, other: &TrackingError) -> TrackingError {
        TrackingError { e_p: self.e_p - other.e_p, e_c: self.e_c - other.e_c, e_s: self.e_s - other.e_s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlGains {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        ControlGains { k1: 1.0, k2: 0.5, k3: 0.4, k4: 0.2 }
    }
}

impl ControlGains {
    /// All gains must be positive, except `k4` which may be zero for planar
    /// robots where there is no vertical error to regulate.
    pub fn validate(&self, planar: bool) -> Result<(), ControlError> {
        let check = |name, value: f64, allow_zero: bool| {
            let ok = value.is_finite() && (value > 0.0 || (allow_zero && value == 0.0));
            if ok {
                Ok(())
            } else {
                Err(ControlError::InvalidGain { name, value })
            }
        };
        check("k1", self.k1, false)?;
        check("k2", self.k2, false)?;
        check("k3", self.k3, false)?;
        check("k4", self.k4, planar)
    }
}

/// Helix used during stage 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationParams {
    pub radius: f64,
    pub c_v: f64,
    pub c_w: f64,
}

pub fn stage1_command(p: &ExcitationParams, t: f64) -> VelocityCommand {
    VelocityCommand::new(p.radius * p.c_w, p.c_v * (p.c_v * t).sin(), p.c_w)
}

pub fn stage2_command(leader: &VelocityCommand, e: &TrackingError, gains: &ControlGains) -> VelocityCommand {
    VelocityCommand::new(
        leader.v_h - gains.k1 * e.e_p.x + gains.k2 * leader.w * e.e_p.y,
        leader.v_z - gains.k4 * e.e_p.z,
        leader.w - gains.k3 * e.e_s,
    )
}

/// Tracking error from ground truth.
pub fn tracking_error_truth(robot: &RobotTruth, leader: &RobotTruth, p_star: &Vector3<f64>) -> TrackingError {
    let leader_frame = Rotation3Z::from_angle(leader.origin.yaw.0);
    let p = leader_frame.transpose().rotate(&(robot.world_pose.position() - leader.world_pose.position()));
    let body_from_leader_frame = Rotation3Z::from_angle(robot.world_pose.yaw.0 - leader.origin.yaw.0).transpose();
    let rel_yaw = robot.world_pose.yaw.0 - leader.world_pose.yaw.0;
    TrackingError { e_p: body_from_leader_frame.rotate(&(p - p_star)), e_c: 1.0 - rel_yaw.cos(), e_s: rel_yaw.sin() }
}

/// Tracking error from the robot's own estimates. `q0_rot` is the estimated
/// rotation from the leader's odometry frame to the robot's, `own_yaw` the
/// robot's odometry heading.
pub fn tracking_error_estimated(
    rt: &LeaderRealtime,
    q0_rot: &Rotation3Z,
    own_yaw: Angle,
    p_star: &Vector3<f64>,
) -> TrackingError {
    let p = q0_rot.transpose().rotate(&rt.q);
    let body_from_leader_frame = Rotation3Z::from_angle(own_yaw.0).transpose().compose(q0_rot);
    TrackingError { e_p: body_from_leader_frame.rotate(&(p - p_star)), e_c: 1.0 - rt.cos, e_s: rt.sin }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Excitation,
    Formation,
}

/// Per-robot stage-1 completion with a global barrier.
#[derive(Debug, Clone)]
pub struct StageTracker {
    ended: Vec<Option<u64>>,
    stage2_from: Option<u64>,
    threshold: f64,
    timeout_tick: Option<u64>,
}

impl StageTracker {
    pub fn new(robots: usize, threshold: f64, timeout_tick: Option<u64>) -> Self {
        StageTracker { ended: vec![None; robots], stage2_from: None, threshold, timeout_tick }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Tick at which each robot finished stage 1.
    pub fn ended(&self) -> &[Option<u64>] {
        &self.ended
    }

    /// First tick of stage 2, once known.
    pub fn stage2_from(&self) -> Option<u64> {
        self.stage2_from
    }

    pub fn stage_at(&self, tick: u64) -> Stage {
        match self.stage2_from {
            Some(t) if tick >= t => Stage::Formation,
            _ => Stage::Excitation,
        }
    }

    /// Feeds the excitation ratios observed at `tick`; `ratios[i]` lists one
    /// entry per pruned neighbour of robot `i` (`None` while a record is
    /// empty). A robot with no neighbours is done immediately. Returns the
    /// stage to use for the next tick.
    pub fn observe(&mut self, tick: u64, ratios: &[Vec<Option<f64>>]) -> Result<Stage, ControlError> {
        for (i, r) in ratios.iter().enumerate() {
            if self.ended[i].is_none() && r.iter().all(|x| x.is_some_and(|v| v >= self.threshold)) {
                self.ended[i] = Some(tick);
            }
        }
        if self.stage2_from.is_none() && self.ended.iter().all(Option::is_some) {
            self.stage2_from = Some(tick + 1);
        }
        if self.stage2_from.is_none() {
            if let Some(limit) = self.timeout_tick {
                if tick >= limit {
                    let pending = (0..self.ended.len()).filter(|&i| self.ended[i].is_none()).collect();
                    return Err(ControlError::ExcitationTimeout { tick, pending });
                }
            }
        }
        Ok(self.stage_at(tick + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose4;
    use proptest::prelude::*;

    #[test]
    fn stage1_paper_values() {
        let c = stage1_command(&ExcitationParams { radius: 2.0, c_v: 0.2, c_w: 0.1 }, 0.0);
        assert!((c.v_h - 0.2).abs() < 1e-15 && c.w == 0.1 && c.v_z == 0.0);
        let flat = ExcitationParams { radius: 0.3, c_v: 0.0, c_w: 0.5 };
        for k in 0..50 {
            assert_eq!(stage1_command(&flat, 0.37 * k as f64).v_z, 0.0);
        }
    }

    #[test]
    fn stage2_zero_error_and_sign() {
        let lead = VelocityCommand::new(0.3, 0.05, 0.2);
        let g = ControlGains::default();
        assert_eq!(stage2_command(&lead, &TrackingError::default(), &g), lead);
        let ahead = TrackingError { e_p: Vector3::new(0.1, 0.0, 0.0), ..Default::default() };
        assert!(stage2_command(&lead, &ahead, &g).v_h < lead.v_h);
    }

    #[test]
    fn gains_validation() {
        assert!(ControlGains::default().validate(false).is_ok());
        let planar = ControlGains { k1: 1.0, k2: 1.0, k3: 0.5, k4: 0.0 };
        assert!(planar.validate(true).is_ok());
        assert!(planar.validate(false).is_err());
        assert!(ControlGains { k1: -1.0, ..planar }.validate(true).is_err());
    }

    #[test]
    fn formation_requires_zero_leader_offset() {
        assert!(FormationSpec::new(vec![Vector3::zeros(), Vector3::new(0.5, -0.5, 0.0)]).is_ok());
        assert_eq!(
            FormationSpec::new(vec![Vector3::new(0.1, 0.0, 0.0)]),
            Err(ControlError::InvalidFormation(0))
        );
    }

    #[test]
    fn at_target_is_zero_error() {
        let leader = RobotTruth::new(0, Pose4::new(1.0, 2.0, 0.0, 0.7));
        let p_star = Vector3::new(0.5, -0.5, 0.2);
        let world = Rotation3Z::from_angle(0.7).rotate(&p_star) + Vector3::new(1.0, 2.0, 0.0);
        let robot = RobotTruth::new(1, Pose4::new(world.x, world.y, world.z, 0.7));
        let e = tracking_error_truth(&robot, &leader, &p_star);
        assert!(e.norm() < 1e-14, "{e:?}");
    }

    #[test]
    fn stage_barrier() {
        let mut st = StageTracker::new(3, 0.1, Some(100));
        let below = vec![vec![], vec![Some(0.5)], vec![Some(0.05)]];
        assert_eq!(st.observe(4, &below).unwrap(), Stage::Excitation);
        let above = vec![vec![], vec![Some(0.5)], vec![Some(0.2)]];
        assert_eq!(st.observe(5, &above).unwrap(), Stage::Formation);
        assert_eq!(st.stage2_from(), Some(6));
        assert_eq!(st.stage_at(5), Stage::Excitation);
        assert_eq!(st.ended(), &[Some(4), Some(4), Some(5)]);

        let mut st = StageTracker::new(2, 0.1, Some(10));
        let err = st.observe(10, &[vec![], vec![None]]).unwrap_err();
        assert_eq!(err, ControlError::ExcitationTimeout { tick: 10, pending: vec![1] });
    }

    proptest! {
        #[test]
        fn truth_matches_world_frame_chase(
            lx in -5.0..5.0f64, ly in -5.0..5.0f64, lyaw0 in -3.0..3.0f64, lyaw in -3.0..3.0f64,
            rx in -5.0..5.0f64, ry in -5.0..5.0f64, rz in -1.0..1.0f64, ryaw in -3.0..3.0f64,
            sx in -1.0..1.0f64, sy in -1.0..1.0f64,
        ) {
            let mut leader = RobotTruth::new(0, Pose4::new(0.0, 0.0, 0.0, lyaw0));
            leader.world_pose = Pose4::new(lx, ly, 0.0, lyaw);
            let mut robot = RobotTruth::new(1, Pose4::new(0.0, 0.0, 0.0, 0.0));
            robot.world_pose = Pose4::new(rx, ry, rz, ryaw);
            let p_star = Vector3::new(sx, sy, 0.0);
            let e = tracking_error_truth(&robot, &leader, &p_star);

            // target in the world, then world error rotated into the body
            let (c0, s0) = (lyaw0.cos(), lyaw0.sin());
            let target = Vector3::new(lx + c0 * sx - s0 * sy, ly + s0 * sx + c0 * sy, 0.0);
            let dw = Vector3::new(rx, ry, rz) - target;
            let (c, s) = (ryaw.cos(), ryaw.sin());
            let body = Vector3::new(c * dw.x + s * dw.y, -s * dw.x + c * dw.y, dw.z);
            prop_assert!((e.e_p - body).norm() < 1e-10);
            prop_assert!((e.e_c - (1.0 - (ryaw - lyaw).cos())).abs() < 1e-12);
            prop_assert!(((1.0 - e.e_c).powi(2) + e.e_s.powi(2) - 1.0).abs() < 1e-12);
        }
    }
}
