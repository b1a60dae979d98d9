//! Linear-in-parameters measurement equation for one ordered robot pair.
//!
//! Two range measurements and the odometry accumulated between them satisfy
//! `y = Θᵀ Φ`, where
//!
//! ```text
//! Θ = [p0ᵀ, (R(θ0)ᵀ p0_h)ᵀ, cos θ0, sin θ0]
//! Ψ = [u_i,hᵀ, u_i,z - u_j,z, -u_j,hᵀ, -a, -b],  Φ = Ψ / |Ψ|
//! ```
//!
//! `p0` is the initial relative position of `i` with respect to `j` in `i`'s
//! odometry frame and `θ0` the yaw of `j`'s odometry frame seen from `i`'s.

use nalgebra::{SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::symmetric_eigenvalues;
use crate::geometry::{cross2, Angle, PlanarRotation};
use crate::sim_world::{initial_relative, RobotTruth, VelocityCommand, World};

pub type Vector7 = SVector<f64, 7>;
pub type Matrix7 = SMatrix<f64, 7, 7>;

/// Regressor norms below this are skipped.
pub const PSI_EPS: f64 = 1e-8;

/// Default cap on the number of recorded samples.
pub const DEFAULT_HIST_CAP: usize = 64;

/// Index of the vertical relative-position parameter.
pub const Z_INDEX: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum RegressionError {
    #[error("regressor norm {psi_norm:e} below threshold; sample carries no information")]
    Rejected { psi_norm: f64 },
    #[error("data record is empty")]
    EmptyRecord,
}

/// Which parameters are estimated. Planar robots never excite the vertical
/// offset, so it is left out of the excitation analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamMask {
    #[default]
    Spatial,
    Planar,
}

impl ParamMask {
    pub fn is_active(self, index: usize) -> bool {
        !(self == ParamMask::Planar && index == Z_INDEX)
    }

    /// Eigenvalues of `s` restricted to the active parameters, ascending.
    pub fn eigenvalues(self, s: &Matrix7) -> Vec<f64> {
        match self {
            ParamMask::Spatial => symmetric_eigenvalues(s).iter().copied().collect(),
            ParamMask::Planar => {
                let idx = [0, 1, 3, 4, 5, 6];
                let sub = SMatrix::<f64, 6, 6>::from_fn(|r, c| s[(idx[r], idx[c])]);
                symmetric_eigenvalues(&sub).iter().copied().collect()
            }
        }
    }

    /// Smallest and largest eigenvalue of `s` restricted to the active
    /// parameters.
    pub fn extreme_eigenvalues(self, s: &Matrix7) -> (f64, f64) {
        let e = self.eigenvalues(s);
        (e[0], e[e.len() - 1])
    }
}

/// Cumulative odometry at the earlier sample and the displacement to the
/// later one, both in the robot's own odometry frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomSegment {
    pub cum: Vector3<f64>,
    pub delta: Vector3<f64>,
}

impl OdomSegment {
    pub fn new(cum: Vector3<f64>, delta: Vector3<f64>) -> Self {
        OdomSegment { cum, delta }
    }

    pub fn between(start: Vector3<f64>, end: Vector3<f64>) -> Self {
        OdomSegment { cum: start, delta: end - start }
    }
}

/// Unnormalized regressor `Ψ` and observation `ȳ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRegressor {
    pub psi: Vector7,
    pub y_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorSample {
    pub phi: Vector7,
    pub y: f64,
    pub tick: u64,
}

/// Assembles `Ψ` and `ȳ` from two ranges and both robots' odometry over the
/// same interval.
pub fn regressor_terms(d_start: f64, d_end: f64, own: &OdomSegment, nbr: &OdomSegment) -> RawRegressor {
    let (u_i, p_i) = (own.delta, own.cum);
    let (u_j, p_j) = (nbr.delta, nbr.cum);
    let (u_ih, p_ih): (Vector2<f64>, Vector2<f64>) = (u_i.xy(), p_i.xy());
    let (u_jh, p_jh): (Vector2<f64>, Vector2<f64>) = (u_j.xy(), p_j.xy());

    let a = u_ih.dot(&p_jh) + p_ih.dot(&u_jh) + u_ih.dot(&u_jh);
    let b = cross2(&p_jh, &u_ih) + cross2(&u_jh, &p_ih) + cross2(&u_jh, &u_ih);

    let psi = Vector7::from([u_ih.x, u_ih.y, u_i.z - u_j.z, -u_jh.x, -u_jh.y, -a, -b]);
    let y_bar = 0.5 * (d_end * d_end - d_start * d_start - u_i.norm_squared() - u_j.norm_squared())
        - u_i.dot(&p_i)
        - u_j.dot(&p_j)
        + u_i.z * p_j.z
        + p_i.z * u_j.z
        + u_i.z * u_j.z;
    RawRegressor { psi, y_bar }
}

/// Builds the normalized sample, or rejects it when the regressor vanishes.
pub fn build_sample(
    d_start: f64,
    d_end: f64,
    own: &OdomSegment,
    nbr: &OdomSegment,
    tick: u64,
) -> Result<RegressorSample, RegressionError> {
    let raw = regressor_terms(d_start, d_end, own, nbr);
    let psi_norm = raw.psi.norm();
    if !(psi_norm >= PSI_EPS) {
        return Err(RegressionError::Rejected { psi_norm });
    }
    Ok(RegressorSample { phi: raw.psi / psi_norm, y: raw.y_bar / psi_norm, tick })
}

/// True parameter vector of a pair, assembled from ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaTrue {
    pub p0: Vector3<f64>,
    pub q0_h: Vector2<f64>,
    pub c0: f64,
    pub s0: f64,
}

impl ThetaTrue {
    pub fn new(p0: Vector3<f64>, theta0: Angle) -> Self {
        let q0_h = PlanarRotation::from_angle(theta0.0).transpose().rotate(&p0.xy());
        ThetaTrue { p0, q0_h, c0: theta0.cos(), s0: theta0.sin() }
    }

    pub fn from_truth(i: &RobotTruth, j: &RobotTruth) -> Self {
        let (p0, theta0) = initial_relative(i, j);
        ThetaTrue::new(p0, theta0)
    }

    pub fn planar(mut self) -> Self {
        self.p0.z = 0.0;
        self
    }

    pub fn as_vector(&self) -> Vector7 {
        Vector7::from([self.p0.x, self.p0.y, self.p0.z, self.q0_h.x, self.q0_h.y, self.c0, self.s0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordPolicy {
    pub hist_cap: usize,
}

impl Default for RecordPolicy {
    fn default() -> Self {
        RecordPolicy { hist_cap: DEFAULT_HIST_CAP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Appended,
    Replaced(usize),
    Discarded,
}

/// Recorded samples and their information matrix `S = Σ φ φᵀ`.
#[derive(Debug, Clone)]
pub struct DataRecord {
    history: Vec<RegressorSample>,
    s: Matrix7,
    lambda_min: f64,
    lambda_max: f64,
    policy: RecordPolicy,
    mask: ParamMask,
}

impl DataRecord {
    pub fn new(policy: RecordPolicy, mask: ParamMask) -> Self {
        DataRecord {
            history: Vec::with_capacity(policy.hist_cap),
            s: Matrix7::zeros(),
            lambda_min: 0.0,
            lambda_max: 0.0,
            policy,
            mask,
        }
    }

    pub fn history(&self) -> &[RegressorSample] {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn s(&self) -> &Matrix7 {
        &self.s
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn mask(&self) -> ParamMask {
        self.mask
    }

    /// Adds a sample. Below the cap every sample is kept; at the cap the
    /// sample set (history plus candidate) drops whichever member leaves the
    /// most informative record, which may be the candidate itself.
    /// Informativeness is `λ_min`; while that is still zero, ties are broken
    /// by a regularized log-determinant so a rank-deficient record keeps
    /// gaining directions.
    pub fn record(&mut self, sample: RegressorSample) -> RecordOutcome {
        if self.history.len() < self.policy.hist_cap.max(1) {
            self.s += sample.phi * sample.phi.transpose();
            self.history.push(sample);
            self.refresh();
            return RecordOutcome::Appended;
        }
        let augmented = self.s + sample.phi * sample.phi.transpose();
        let mut best: Option<usize> = None;
        let mut best_score = Informativeness::of(&self.mask.eigenvalues(&self.s));
        for (m, old) in self.history.iter().enumerate() {
            let candidate = augmented - old.phi * old.phi.transpose();
            let score = Informativeness::of(&self.mask.eigenvalues(&candidate));
            if score.beats(&best_score) {
                best_score = score;
                best = Some(m);
            }
        }
        match best {
            Some(m) => {
                self.history[m] = sample;
                self.s = self.rebuild_s();
                self.refresh();
                RecordOutcome::Replaced(m)
            }
            None => RecordOutcome::Discarded,
        }
    }

    /// `S` recomputed from scratch over the stored history.
    pub fn rebuild_s(&self) -> Matrix7 {
        self.history.iter().fold(Matrix7::zeros(), |acc, h| acc + h.phi * h.phi.transpose())
    }

    fn refresh(&mut self) {
        let (lo, hi) = self.mask.extreme_eigenvalues(&self.s);
        self.lambda_min = lo.max(0.0);
        self.lambda_max = hi.max(0.0);
    }

    /// `λ_min(S) / λ_max(S)`, in `[0, 1]`.
    pub fn excitation_ratio(&self) -> Result<f64, RegressionError> {
        if self.history.is_empty() || self.lambda_max <= 0.0 {
            return Err(RegressionError::EmptyRecord);
        }
        Ok((self.lambda_min / self.lambda_max).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy)]
struct Informativeness {
    lambda_min: f64,
    log_det: f64,
}

impl Informativeness {
    const LAMBDA_TOL: f64 = 1e-12;
    const RIDGE: f64 = 1e-9;

    fn of(eigs: &[f64]) -> Self {
        Informativeness {
            lambda_min: eigs[0].max(0.0),
            log_det: eigs.iter().map(|e| (e.max(0.0) + Self::RIDGE).ln()).sum(),
        }
    }

    fn beats(&self, other: &Self) -> bool {
        if (self.lambda_min - other.lambda_min).abs() > Self::LAMBDA_TOL {
            self.lambda_min > other.lambda_min
        } else {
            self.log_det > other.log_det + 1e-9
        }
    }
}

/// Scripted two-robot motions used to probe observability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionProfile {
    /// Robot `i` never moves; `j` circles in the horizontal plane.
    ReferenceStationary,
    /// Robot `j` never moves; `i` circles with a vertical oscillation.
    NeighborStationary,
    /// Both robots execute the same command sequence.
    IdenticalVelocity,
    /// Both robots move along straight lines at constant velocity.
    ConstantVelocities,
    /// Distinct circles with vertical oscillation on both robots.
    Circular,
}

/// Rank structure of the information matrix accumulated over a probe.
#[derive(Debug, Clone)]
pub struct RankDiagnosis {
    pub s: Matrix7,
    /// Parameters whose row and column of `S` are identically zero.
    pub zero_rows: Vec<usize>,
    pub rank: usize,
    pub position_rank: usize,
    pub lambda_min: f64,
    pub samples: usize,
}

impl RankDiagnosis {
    /// Zero-based parameter indices that cannot be recovered from the data.
    pub fn unobservable(&self) -> &[usize] {
        &self.zero_rows
    }
}

fn numerical_rank<const N: usize>(m: &SMatrix<f64, N, N>) -> usize {
    let e = symmetric_eigenvalues(m);
    let top = e[N - 1].abs().max(1e-300);
    e.iter().filter(|x| **x > 1e-10 * top).count()
}

/// Runs a noise-free scripted pair motion and reports which blocks of the
/// full (uncapped) information matrix vanish.
pub fn observability_probe(profile: MotionProfile, ticks: usize) -> RankDiagnosis {
    use crate::geometry::Pose4;
    let dt = 0.05;
    let mut world = World::new(&[Pose4::new(0.0, 0.0, 0.0, 0.4), Pose4::new(3.0, -2.0, 0.5, -1.1)], dt);
    // Vertical oscillation frequencies are kept incommensurate with the yaw
    // rates; otherwise u_z is a linear function of the planar odometry.
    let circle = |r: f64, w: f64, cv: f64, t: f64| VelocityCommand::new(r * w, cv * (1.7 * t + w).sin(), w);
    let command = |t: f64| -> [VelocityCommand; 2] {
        match profile {
            MotionProfile::ReferenceStationary => [VelocityCommand::ZERO, circle(3.0, 0.3, 0.0, t)],
            MotionProfile::NeighborStationary => [circle(2.0, 0.1, 0.2, t), VelocityCommand::ZERO],
            MotionProfile::IdenticalVelocity => {
                let c = circle(2.0, 0.2, 0.3, t);
                [c, c]
            }
            MotionProfile::ConstantVelocities => {
                [VelocityCommand::new(0.3, 0.05, 0.0), VelocityCommand::new(0.5, -0.02, 0.0)]
            }
            MotionProfile::Circular => [circle(2.0, 0.1, 0.2, t), circle(3.0, 0.3, 0.3, 2.0 * t)],
        }
    };
    let mut s = Matrix7::zeros();
    let mut samples = 0;
    let dist = |w: &World| (w.robots[0].world_pose.position() - w.robots[1].world_pose.position()).norm();
    for _ in 0..ticks {
        let before = world.robots.clone();
        let d0 = dist(&world);
        world.step(&command(world.time()));
        let d1 = dist(&world);
        let own = OdomSegment::between(before[0].odom_position(), world.robots[0].odom_position());
        let nbr = OdomSegment::between(before[1].odom_position(), world.robots[1].odom_position());
        if let Ok(sample) = build_sample(d0, d1, &own, &nbr, world.tick) {
            s += sample.phi * sample.phi.transpose();
            samples += 1;
        }
    }
    let zero_rows = (0..7).filter(|&r| (0..7).all(|c| s[(r, c)].abs() < 1e-12)).collect();
    let pos = s.fixed_view::<3, 3>(0, 0).into_owned();
    let e = symmetric_eigenvalues(&s);
    RankDiagnosis {
        zero_rows,
        rank: if samples == 0 { 0 } else { numerical_rank(&s) },
        position_rank: if samples == 0 { 0 } else { numerical_rank(&pos) },
        lambda_min: e[0],
        s,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose4;

    fn unit_sample(k: usize) -> RegressorSample {
        let mut phi = Vector7::zeros();
        phi[k] = 1.0;
        RegressorSample { phi, y: 0.0, tick: k as u64 }
    }

    #[test]
    fn stationary_pair_is_rejected() {
        let still = OdomSegment::new(Vector3::new(1.0, 2.0, 0.0), Vector3::zeros());
        let r = build_sample(2.0, 2.0, &still, &OdomSegment::new(Vector3::zeros(), Vector3::zeros()), 0);
        assert!(matches!(r, Err(RegressionError::Rejected { .. })));
    }

    #[test]
    fn hand_built_single_step() {
        // i at the origin heading 0 moves 0.1 along x; j sits at (1, 0)
        // heading pi/2. Distances 1 -> 0.9, every odometry term but u_i is 0,
        // so Ψ = [0.1, 0, ...], ȳ = (0.81 - 1 - 0.01) / 2 = -0.1.
        let own = OdomSegment::new(Vector3::zeros(), Vector3::new(0.1, 0.0, 0.0));
        let nbr = OdomSegment::new(Vector3::zeros(), Vector3::zeros());
        let raw = regressor_terms(1.0, 0.9, &own, &nbr);
        let mut psi = Vector7::zeros();
        psi[0] = 0.1;
        assert!((raw.psi - psi).norm() < 1e-15);
        assert!((raw.y_bar + 0.1).abs() < 1e-12);
        let s = build_sample(1.0, 0.9, &own, &nbr, 1).unwrap();
        assert!((s.phi[0] - 1.0).abs() < 1e-15);
        assert!((s.y + 1.0).abs() < 1e-11);

        let i = RobotTruth::new(0, Pose4::new(0.0, 0.0, 0.0, 0.0));
        let j = RobotTruth::new(1, Pose4::new(1.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let theta = ThetaTrue::from_truth(&i, &j).as_vector();
        assert!((theta.dot(&s.phi) - s.y).abs() < 1e-12);
    }

    #[test]
    fn hand_built_rotated_neighbour() {
        // i starts at the origin heading 0, already displaced to (0.5, 0, 0)
        // in its odometry. j started at (2, 1) heading pi/2 and has moved
        // (0.2, 0, 0) in its own frame, i.e. +0.2 along world y. Over the step
        // i moves (0, 0.1, 0) and j moves (0.1, 0, 0) in its frame.
        // World: i (0.5, 0) -> (0.5, 0.1); j (2, 1.2) -> (2, 1.3).
        let d0 = (1.5f64.powi(2) + 1.2f64.powi(2)).sqrt();
        let d1 = (1.5f64.powi(2) + 1.2f64.powi(2)).sqrt();
        let own = OdomSegment::new(Vector3::new(0.5, 0.0, 0.0), Vector3::new(0.0, 0.1, 0.0));
        let nbr = OdomSegment::new(Vector3::new(0.2, 0.0, 0.0), Vector3::new(0.1, 0.0, 0.0));
        let raw = regressor_terms(d0, d1, &own, &nbr);
        // a = u_ih·p_jh + p_ih·u_jh + u_ih·u_jh = 0 + 0.05 + 0
        // b = p_jh×u_ih + u_jh×p_ih + u_jh×u_ih = 0.02 + 0 + 0.01
        let expect_psi = Vector7::from([0.0, 0.1, 0.0, -0.1, 0.0, -0.05, -0.03]);
        assert!((raw.psi - expect_psi).norm() < 1e-15, "{:?}", raw.psi);
        // ȳ = (d1² - d0² - 0.01 - 0.01)/2 - u_i·p_i - u_j·p_j = -0.01 - 0 - 0.02
        assert!((raw.y_bar + 0.03).abs() < 1e-12, "{}", raw.y_bar);
        // Θ: p0 = (-2, -1, 0), θ0 = pi/2, q0 = R(-pi/2) p0 = (-1, 2), c = 0, s = 1
        let theta = Vector7::from([-2.0, -1.0, 0.0, -1.0, 2.0, 0.0, 1.0]);
        assert!((theta.dot(&raw.psi) - raw.y_bar).abs() < 1e-12);
    }

    #[test]
    fn record_single_sample() {
        let mut rec = DataRecord::new(RecordPolicy::default(), ParamMask::Spatial);
        assert_eq!(rec.excitation_ratio(), Err(RegressionError::EmptyRecord));
        rec.record(unit_sample(3));
        assert!((rec.lambda_max() - 1.0).abs() < 1e-12);
        assert_eq!(rec.lambda_min(), 0.0);
        assert_eq!(rec.excitation_ratio().unwrap(), 0.0);
    }

    #[test]
    fn record_unit_basis_is_full_rank() {
        let mut rec = DataRecord::new(RecordPolicy::default(), ParamMask::Spatial);
        for k in 0..7 {
            rec.record(unit_sample(k));
        }
        assert!(rec.lambda_min() > 0.0);
        assert!((rec.excitation_ratio().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn planar_mask_ignores_vertical_parameter() {
        let mut rec = DataRecord::new(RecordPolicy::default(), ParamMask::Planar);
        for k in [0, 1, 3, 4, 5, 6] {
            rec.record(unit_sample(k));
        }
        assert!((rec.excitation_ratio().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capped_record_keeps_most_informative() {
        let mut rec = DataRecord::new(RecordPolicy { hist_cap: 7 }, ParamMask::Spatial);
        for _ in 0..7 {
            rec.record(unit_sample(0));
        }
        assert_eq!(rec.lambda_min(), 0.0);
        for k in 1..7 {
            assert!(matches!(rec.record(unit_sample(k)), RecordOutcome::Replaced(_)));
        }
        assert_eq!(rec.len(), 7);
        assert!((rec.lambda_min() - 1.0).abs() < 1e-12);
        // a duplicate direction can no longer help
        assert_eq!(rec.record(unit_sample(2)), RecordOutcome::Discarded);
        assert!((rec.rebuild_s() - rec.s()).norm() < 1e-12);
    }

    #[test]
    fn probe_reference_stationary() {
        let d = observability_probe(MotionProfile::ReferenceStationary, 100);
        assert_eq!(d.unobservable(), &[0, 1, 2, 5, 6]);
    }

    #[test]
    fn probe_neighbor_stationary() {
        // every yaw-dependent entry (the rotated position and the trig pair)
        // multiplies j's motion
        let d = observability_probe(MotionProfile::NeighborStationary, 100);
        assert_eq!(d.unobservable(), &[3, 4, 5, 6]);
    }

    #[test]
    fn probe_identical_velocity() {
        // equal odometry also cancels every cross product in b
        let d = observability_probe(MotionProfile::IdenticalVelocity, 100);
        assert_eq!(d.unobservable(), &[2, 6]);
    }

    #[test]
    fn probe_constant_velocities() {
        let d = observability_probe(MotionProfile::ConstantVelocities, 100);
        assert!(d.position_rank <= 1, "position rank {}", d.position_rank);
    }

    #[test]
    fn probe_circular_full_rank() {
        let d = observability_probe(MotionProfile::Circular, 400);
        assert!(d.zero_rows.is_empty());
        assert_eq!(d.rank, 7);
        assert!(d.lambda_min > 1e-6, "lambda_min {}", d.lambda_min);
    }
}
