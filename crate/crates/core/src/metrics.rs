//! Post-processing of run logs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim_world::VelocityCommand;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MetricsError {
    #[error("error never settled below {ratio} of the reference magnitude")]
    NotConverged { ratio: f64 },
    #[error("reference magnitude must be positive, got {0}")]
    InvalidMagnitude(f64),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

pub const DEFAULT_CONVERGENCE_RATIO: f64 = 0.05;

/// Integrated command deviation from the leader, left Riemann sum.
pub fn smoothness(robot: &[VelocityCommand], leader: &[VelocityCommand], dt: f64) -> Result<f64, MetricsError> {
    if robot.len() != leader.len() {
        return Err(MetricsError::LengthMismatch(robot.len(), leader.len()));
    }
    Ok(robot.iter().zip(leader).map(|(a, b)| (a.as_vector() - b.as_vector()).norm() * dt).sum())
}

/// Time after which `error / magnitude` stays below `ratio` for the rest of
/// the series. Entry `k` is taken at `k * dt`.
pub fn convergence_time(errors: &[f64], magnitude: f64, ratio: f64, dt: f64) -> Result<f64, MetricsError> {
    convergence_tick(errors, magnitude, ratio).map(|k| k as f64 * dt)
}

pub fn convergence_tick(errors: &[f64], magnitude: f64, ratio: f64) -> Result<usize, MetricsError> {
    if !(magnitude > 0.0) {
        return Err(MetricsError::InvalidMagnitude(magnitude));
    }
    match errors.iter().rposition(|e| !(e / magnitude < ratio)) {
        None => Ok(0),
        Some(k) if k + 1 == errors.len() => Err(MetricsError::NotConverged { ratio }),
        Some(k) => Ok(k + 1),
    }
}

/// Same sustained criterion against an absolute threshold.
pub fn settling_tick(errors: &[f64], threshold: f64) -> Option<usize> {
    convergence_tick(errors, 1.0, threshold).ok()
}

/// One screened range sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierEvent {
    pub tick: u64,
    pub robot: usize,
    pub neighbor: usize,
    pub d: f64,
    pub votes: usize,
    pub size: usize,
    pub rejected: bool,
    pub injected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionStats {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl DetectionStats {
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a OutlierEvent>) -> Self {
        let mut s = DetectionStats::default();
        for e in events {
            match (e.injected, e.rejected) {
                (true, true) => s.true_positive += 1,
                (true, false) => s.false_negative += 1,
                (false, true) => s.false_positive += 1,
                (false, false) => s.true_negative += 1,
            }
        }
        s
    }

    pub fn merge(&mut self, other: &DetectionStats) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.true_negative += other.true_negative;
        self.false_negative += other.false_negative;
    }

    /// Detected outliers over injected outliers; `None` without injections.
    pub fn success_rate(&self) -> Option<f64> {
        let injected = self.true_positive + self.false_negative;
        (injected > 0).then(|| self.true_positive as f64 / injected as f64)
    }

    /// Rejected inliers over all inliers; zero without inliers.
    pub fn false_positive_rate(&self) -> f64 {
        let inliers = self.false_positive + self.true_negative;
        if inliers == 0 {
            0.0
        } else {
            self.false_positive as f64 / inliers as f64
        }
    }
}

/// Per-tick error series of one run plus derived scalars.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub dt: f64,
    /// `|Θ̂ − Θ|` per ordered pair, in pair order.
    pub theta_error: Vec<Vec<f64>>,
    /// Leader-relative position error `|q̂_i − q_i|` per follower.
    pub leader_position_error: Vec<Vec<f64>>,
    /// `|ê_i − e_i|` per follower.
    pub estimation_error: Vec<Vec<f64>>,
    /// `|e_i|` per follower.
    pub tracking_error: Vec<Vec<f64>>,
    pub smoothness: Vec<f64>,
    pub detection: DetectionStats,
}
