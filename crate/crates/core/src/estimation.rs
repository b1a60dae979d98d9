//! Concurrent-learning estimator for the pairwise parameter vector and the
//! relative pose recovered from it.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Angle, GeometryError, PlanarRotation, Rotation3Z};
use crate::regression::{DataRecord, ParamMask, RecordOutcome, RecordPolicy, RegressorSample, Vector7};
use crate::sensing::OdomBroadcast;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("broadcast from robot {sender} is {lag} ticks old (horizon {horizon})")]
    StaleBroadcast { sender: usize, lag: u64, horizon: u64 },
}

/// Step-size rule for the update.
///
/// `Nominal` uses `λmin(S) / (λmax(U) + λmax(S)²)`; `Squared` uses
/// `λmin(S) / (λmax(U) + λmax(S))²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearningRate {
    #[default]
    Nominal,
    Squared,
}

impl LearningRate {
    pub fn eta(self, lambda_min_s: f64, lambda_max_s: f64, lambda_max_u: f64) -> f64 {
        let denom = match self {
            LearningRate::Nominal => lambda_max_u + lambda_max_s * lambda_max_s,
            LearningRate::Squared => (lambda_max_u + lambda_max_s).powi(2),
        };
        if denom > 0.0 {
            lambda_min_s / denom
        } else {
            0.0
        }
    }
}

/// What one update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStep {
    pub eta: f64,
    pub innovation: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_max_u: f64,
}

#[derive(Debug, Clone)]
pub struct ThetaEstimate {
    pub theta_hat: Vector7,
    pub data: DataRecord,
    pub rate: LearningRate,
}

impl ThetaEstimate {
    /// Starts from `Θ̂ = 0`.
    pub fn new(policy: RecordPolicy, mask: ParamMask, rate: LearningRate) -> Self {
        ThetaEstimate { theta_hat: Vector7::zeros(), data: DataRecord::new(policy, mask), rate }
    }

    pub fn innovation(&self, s: &RegressorSample) -> f64 {
        self.theta_hat.dot(&s.phi) - s.y
    }

    /// Records `current` and then applies one update.
    pub fn ingest(&mut self, current: RegressorSample) -> (RecordOutcome, UpdateStep) {
        let outcome = self.data.record(current);
        (outcome, self.cl_update(&current))
    }

    /// One concurrent-learning step: replays the recorded innovations plus
    /// the current one. A no-op while the record is empty or rank deficient.
    pub fn cl_update(&mut self, current: &RegressorSample) -> UpdateStep {
        let lambda_min = self.data.lambda_min();
        let lambda_max = self.data.lambda_max();
        let lambda_max_u = current.phi.norm_squared();
        let eta = if self.data.is_empty() { 0.0 } else { self.rate.eta(lambda_min, lambda_max, lambda_max_u) };
        let innovation = self.innovation(current);
        if eta > 0.0 {
            let mut grad = current.phi * innovation;
            for m in self.data.history() {
                grad += m.phi * self.innovation(m);
            }
            self.theta_hat -= grad * eta;
        }
        UpdateStep { eta, innovation, lambda_min, lambda_max, lambda_max_u }
    }

    pub fn reconstruct_pose(&self) -> Result<RelativePoseEstimate, GeometryError> {
        let planar = PlanarRotation::norm_project(self.theta_hat[5], self.theta_hat[6])?;
        Ok(RelativePoseEstimate {
            p0_hat: self.theta_hat.fixed_rows::<3>(0).into_owned(),
            r0_hat: Rotation3Z::from_planar(planar),
        })
    }
}

/// Estimated initial transform between two odometry frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePoseEstimate {
    pub p0_hat: Vector3<f64>,
    pub r0_hat: Rotation3Z,
}

/// Relative position of `i` with respect to `j` in `i`'s odometry frame and
/// the heading of `j` relative to `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealtimeRelative {
    pub p: Vector3<f64>,
    pub theta: Angle,
}

impl RelativePoseEstimate {
    pub fn theta0(&self) -> Angle {
        Angle(self.r0_hat.angle())
    }

    /// Propagates the initial transform with both robots' odometry.
    pub fn realtime(
        &self,
        own_pos: &Vector3<f64>,
        own_yaw: Angle,
        neighbor: &OdomBroadcast,
        now_tick: u64,
        horizon: u64,
    ) -> Result<RealtimeRelative, EstimationError> {
        let lag = now_tick.saturating_sub(neighbor.tick);
        if lag > horizon {
            return Err(EstimationError::StaleBroadcast { sender: neighbor.sender, lag, horizon });
        }
        Ok(RealtimeRelative {
            p: self.p0_hat + own_pos - self.r0_hat.rotate(&neighbor.cum_pos),
            theta: self.theta0() + neighbor.cum_yaw - own_yaw,
        })
    }
}
