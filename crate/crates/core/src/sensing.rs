//! Synthetic UWB ranging and inertial odometry.
//!
//! Every noise source draws from its own ChaCha stream keyed by
//! `(master seed, stream id)`, so adding a robot or a link never shifts the
//! numbers seen by existing streams.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::Angle;
use crate::sim_world::RobotTruth;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub sigma_range: f64,
    /// Per-step standard deviation of each odometry displacement axis.
    pub sigma_odom_pos: f64,
    /// Per-step standard deviation of the odometry heading increment.
    pub sigma_odom_yaw: f64,
    pub outlier_prob: f64,
    pub sigma_outlier: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::NOISE_FREE
    }
}

impl NoiseModel {
    pub const NOISE_FREE: NoiseModel = NoiseModel {
        sigma_range: 0.0,
        sigma_odom_pos: 0.0,
        sigma_odom_yaw: 0.0,
        outlier_prob: 0.0,
        sigma_outlier: 3.0,
    };

    pub fn validate(&self) -> Result<(), String> {
        let sigmas = [self.sigma_range, self.sigma_odom_pos, self.sigma_odom_yaw, self.sigma_outlier];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err("noise standard deviations must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.outlier_prob) {
            return Err(format!("outlier_prob {} outside [0, 1]", self.outlier_prob));
        }
        Ok(())
    }
}

/// Identifies an independent random stream within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    Range { from: usize, to: usize },
    Odometry { robot: usize },
    Scenario,
}

impl StreamId {
    fn key(self) -> u64 {
        match self {
            StreamId::Range { from, to } => (1 << 48) | ((from as u64) << 24) | to as u64,
            StreamId::Odometry { robot } => (2 << 48) | robot as u64,
            StreamId::Scenario => 3 << 48,
        }
    }
}

pub fn stream_rng(master_seed: u64, stream: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.key());
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSample {
    pub d: f64,
    /// Whether the sample was replaced by an injected outlier.
    pub injected_outlier: bool,
}

/// Draws one range measurement. Always consumes the same number of random
/// values regardless of the noise settings.
pub fn measure_range<R: Rng + ?Sized>(
    truth_i: &RobotTruth,
    truth_j: &RobotTruth,
    noise: &NoiseModel,
    rng: &mut R,
) -> RangeSample {
    let d_true = (truth_i.world_pose.position() - truth_j.world_pose.position()).norm();
    let coin: f64 = rng.random();
    let n_nominal: f64 = rng.sample(StandardNormal);
    let n_outlier: f64 = rng.sample(StandardNormal);
    let injected_outlier = coin < noise.outlier_prob;
    let d = if injected_outlier {
        d_true + noise.sigma_outlier * n_outlier
    } else {
        d_true + noise.sigma_range * n_nominal
    };
    RangeSample { d: d.max(0.0), injected_outlier }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OdomDelta {
    pub pos: Vector3<f64>,
    pub yaw: Angle,
}

/// Additive per-step odometry error.
pub fn odom_noise<R: Rng + ?Sized>(noise: &NoiseModel, rng: &mut R) -> OdomDelta {
    let n: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    OdomDelta {
        pos: Vector3::new(n[0], n[1], n[2]) * noise.sigma_odom_pos,
        yaw: Angle(n[3] * noise.sigma_odom_yaw),
    }
}

/// Measured displacement of one robot between two consecutive ticks, in its
/// own odometry frame.
pub fn measure_odom<R: Rng + ?Sized>(
    prev: &RobotTruth,
    next: &RobotTruth,
    noise: &NoiseModel,
    rng: &mut R,
) -> OdomDelta {
    let err = odom_noise(noise, rng);
    OdomDelta {
        pos: next.odom_position() - prev.odom_position() + err.pos,
        yaw: next.odom_pose.yaw - prev.odom_pose.yaw + err.yaw,
    }
}

/// Dead-reckoned cumulative odometry of one robot.
///
/// The reading is kept as ground truth plus the accumulated random walk, which
/// equals the running sum of measured increments and is exact when the noise
/// is zero.
#[derive(Debug, Clone)]
pub struct OdomIntegrator {
    drift_pos: Vector3<f64>,
    drift_yaw: f64,
    planar: bool,
    cum_pos: Vector3<f64>,
    cum_yaw: Angle,
}

impl OdomIntegrator {
    pub fn new(planar: bool) -> Self {
        OdomIntegrator {
            drift_pos: Vector3::zeros(),
            drift_yaw: 0.0,
            planar,
            cum_pos: Vector3::zeros(),
            cum_yaw: Angle::ZERO,
        }
    }

    /// Incorporates the step that ended in `next`.
    pub fn advance<R: Rng + ?Sized>(&mut self, next: &RobotTruth, noise: &NoiseModel, rng: &mut R) {
        let err = odom_noise(noise, rng);
        self.drift_pos += err.pos;
        self.drift_yaw += err.yaw.0;
        let mut p = next.odom_position() + self.drift_pos;
        if self.planar {
            p.z = 0.0;
        }
        self.cum_pos = p;
        self.cum_yaw = Angle(next.odom_pose.yaw.0 + self.drift_yaw);
    }

    pub fn position(&self) -> Vector3<f64> {
        self.cum_pos
    }

    pub fn yaw(&self) -> Angle {
        self.cum_yaw
    }

    pub fn broadcast(&self, sender: usize, tick: u64) -> OdomBroadcast {
        OdomBroadcast { sender, tick, cum_pos: self.cum_pos, cum_yaw: self.cum_yaw }
    }
}

/// A robot's cumulative odometry as shared with its neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomBroadcast {
    pub sender: usize,
    pub tick: u64,
    pub cum_pos: Vector3<f64>,
    pub cum_yaw: Angle,
}

/// One synchronized range and odometry sample for an ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementTriplet {
    pub d: f64,
    pub z_i: Vector3<f64>,
    pub z_j: Vector3<f64>,
    pub tick: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose4;
    use crate::sim_world::VelocityCommand;

    fn pair(dist: f64) -> (RobotTruth, RobotTruth) {
        (
            RobotTruth::new(0, Pose4::new(0.0, 0.0, 0.0, 0.3)),
            RobotTruth::new(1, Pose4::new(dist * 0.6, dist * 0.8, 0.0, -1.0)),
        )
    }

    fn std_dev(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn noise_free_range_is_exact() {
        let (a, b) = pair(1.0);
        let mut rng = stream_rng(7, StreamId::Range { from: 0, to: 1 });
        let s = measure_range(&a, &b, &NoiseModel::NOISE_FREE, &mut rng);
        assert!((s.d - 1.0).abs() < 1e-15);
        assert!(!s.injected_outlier);
    }

    #[test]
    fn range_noise_statistics() {
        let (a, b) = pair(10.0);
        let noise = NoiseModel { sigma_range: 0.05, ..NoiseModel::NOISE_FREE };
        let mut rng = stream_rng(11, StreamId::Range { from: 0, to: 1 });
        let xs: Vec<f64> = (0..10_000).map(|_| measure_range(&a, &b, &noise, &mut rng).d).collect();
        let (mean, sd) = std_dev(&xs);
        assert!((mean - 10.0).abs() < 0.005, "mean {mean}");
        assert!((0.045..=0.055).contains(&sd), "sd {sd}");
    }

    #[test]
    fn outlier_statistics() {
        let (a, b) = pair(50.0);
        let noise = NoiseModel { sigma_range: 0.05, outlier_prob: 1.0, sigma_outlier: 3.0, ..NoiseModel::NOISE_FREE };
        let mut rng = stream_rng(12, StreamId::Range { from: 0, to: 1 });
        let samples: Vec<_> = (0..10_000).map(|_| measure_range(&a, &b, &noise, &mut rng)).collect();
        assert!(samples.iter().all(|s| s.injected_outlier));
        let xs: Vec<f64> = samples.iter().map(|s| s.d).collect();
        let (_, sd) = std_dev(&xs);
        assert!((sd - 3.0).abs() < 0.3, "sd {sd}");
    }

    #[test]
    fn range_never_negative() {
        let (a, b) = pair(0.01);
        let noise = NoiseModel { sigma_range: 1.0, ..NoiseModel::NOISE_FREE };
        let mut rng = stream_rng(1, StreamId::Range { from: 0, to: 1 });
        assert!((0..1000).all(|_| measure_range(&a, &b, &noise, &mut rng).d >= 0.0));
    }

    #[test]
    fn odom_zero_noise_is_exact_delta() {
        let a = RobotTruth::new(0, Pose4::new(1.0, 2.0, 0.0, 0.4));
        let b = a.step(&VelocityCommand::new(0.5, 0.1, 0.2), 0.1);
        let mut rng = stream_rng(3, StreamId::Odometry { robot: 0 });
        let d = measure_odom(&a, &b, &NoiseModel::NOISE_FREE, &mut rng);
        assert_eq!(d.pos, b.odom_position() - a.odom_position());
        assert_eq!(d.yaw, b.odom_pose.yaw - a.odom_pose.yaw);
    }

    #[test]
    fn odom_random_walk_drift() {
        let noise = NoiseModel { sigma_odom_pos: 0.01, ..NoiseModel::NOISE_FREE };
        let still = RobotTruth::new(0, Pose4::default());
        // 400 independent walks of 10^4 steps each
        let mut finals = Vec::new();
        for seed in 0..400 {
            let mut rng = stream_rng(seed, StreamId::Odometry { robot: 0 });
            let mut odo = OdomIntegrator::new(false);
            for _ in 0..10_000 {
                odo.advance(&still, &noise, &mut rng);
            }
            finals.push(odo.position().x);
        }
        let (_, sd) = std_dev(&finals);
        assert!((sd - 1.0).abs() < 0.15, "drift sd {sd}");
    }

    #[test]
    fn integrator_exact_without_noise() {
        let mut r = RobotTruth::new(0, Pose4::new(0.0, 0.0, 0.0, 1.0));
        let mut odo = OdomIntegrator::new(false);
        let mut rng = stream_rng(0, StreamId::Odometry { robot: 0 });
        for k in 0..500 {
            r = r.step(&VelocityCommand::new(0.4, 0.05, 0.3 + 0.001 * k as f64), 0.05);
            odo.advance(&r, &NoiseModel::NOISE_FREE, &mut rng);
            assert_eq!(odo.position(), r.odom_position());
            assert_eq!(odo.yaw(), r.odom_pose.yaw);
        }
    }

    #[test]
    fn streams_are_deterministic_and_independent() {
        let draw = |seed, stream| {
            let mut rng = stream_rng(seed, stream);
            (0..5).map(|_| rng.random::<u64>()).collect::<Vec<_>>()
        };
        let s = StreamId::Range { from: 2, to: 1 };
        assert_eq!(draw(42, s), draw(42, s));
        assert_ne!(draw(42, s), draw(42, StreamId::Range { from: 1, to: 2 }));
        assert_ne!(draw(42, s), draw(43, s));
    }
}
