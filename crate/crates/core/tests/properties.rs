//! Property tests over the estimation pipeline, cooperative composition and
//! outlier screen, with independent oracles.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SMatrix, Vector3};
use proptest::prelude::*;

use swarmloc::control::{stage1_command, ExcitationParams};
use swarmloc::coop_localization::{leader_initial_estimate, LeaderPoseEstimate, NeighborLink};
use swarmloc::estimation::{LearningRate, RelativePoseEstimate, ThetaEstimate};
use swarmloc::geometry::{Pose4, Rotation3Z};
use swarmloc::outlier_detection::JudgeQueue;
use swarmloc::regression::{build_sample, OdomSegment, ParamMask, RecordPolicy, RegressorSample, Vector7};
use swarmloc::sensing::MeasurementTriplet;
use swarmloc::sim_world::{VelocityCommand, World};

type Matrix7 = SMatrix<f64, 7, 7>;

fn rz(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Parameters of the ordered pair `(a, b)` from the initial world poses.
fn theta_oracle(a: &Pose4, b: &Pose4) -> Vector7 {
    let p = rz(a.yaw.0).transpose() * (a.position() - b.position());
    let th = b.yaw.0 - a.yaw.0;
    let (s, c) = th.sin_cos();
    Vector7::from([p.x, p.y, p.z, c * p.x + s * p.y, -s * p.x + c * p.y, c, s])
}

fn pose() -> impl Strategy<Value = Pose4> {
    (-5.0..5.0f64, -5.0..5.0f64, -1.0..1.0f64, -PI..PI).prop_map(|(x, y, z, yaw)| Pose4::new(x, y, z, yaw))
}

/// Helix excitation command for one robot: (radius, c_v, c_w).
fn helix() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.5..3.0f64, 0.1..0.6f64, prop_oneof![-0.6..-0.1f64, 0.1..0.6f64])
}

fn simulate_pair(
    a: Pose4,
    b: Pose4,
    ha: (f64, f64, f64),
    hb: (f64, f64, f64),
    ticks: usize,
) -> Vec<RegressorSample> {
    let mut world = World::new(&[a, b], 0.05);
    let cmd = |h: (f64, f64, f64), t: f64| stage1_command(&ExcitationParams { radius: h.0, c_v: h.1, c_w: h.2 }, t);
    let dist = |w: &World| (w.robots[0].world_pose.position() - w.robots[1].world_pose.position()).norm();
    let mut out = Vec::new();
    for _ in 0..ticks {
        let before = world.robots.clone();
        let d0 = dist(&world);
        let t = world.time();
        world.step(&[cmd(ha, t), cmd(hb, t)]);
        let own = OdomSegment::between(before[0].odom_position(), world.robots[0].odom_position());
        let nbr = OdomSegment::between(before[1].odom_position(), world.robots[1].odom_position());
        if let Ok(s) = build_sample(d0, dist(&world), &own, &nbr, world.tick) {
            out.push(s);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn samples_are_normalized_and_consistent(a in pose(), b in pose(), ha in helix(), hb in helix()) {
        let theta = theta_oracle(&a, &b);
        // redundancy: the rotated horizontal offset is determined by p0 and θ0
        let (c, s) = (theta[5], theta[6]);
        prop_assert!((theta[3] - (c * theta[0] + s * theta[1])).abs() < 1e-12);
        prop_assert!((c * c + s * s - 1.0).abs() < 1e-12);
        for smp in simulate_pair(a, b, ha, hb, 300) {
            prop_assert!((smp.phi.norm() - 1.0).abs() < 1e-10);
            prop_assert!((smp.y - theta.dot(&smp.phi)).abs() < 1e-9, "residual {}", smp.y - theta.dot(&smp.phi));
        }
    }

    #[test]
    fn record_matrix_is_consistent(a in pose(), b in pose(), ha in helix(), hb in helix(), cap in 7usize..40) {
        let mut est = ThetaEstimate::new(RecordPolicy { hist_cap: cap }, ParamMask::Spatial, LearningRate::Nominal);
        for smp in simulate_pair(a, b, ha, hb, 200) {
            est.data.record(smp);
            prop_assert!(est.data.len() <= cap);
        }
        let s = *est.data.s();
        let direct: Matrix7 = est.data.history().iter().map(|m| m.phi * m.phi.transpose()).sum();
        prop_assert!((s - direct).norm() < 1e-9);
        prop_assert!((est.data.rebuild_s() - s).norm() < 1e-9);
        prop_assert!((s - s.transpose()).norm() < 1e-12);
        let e = s.symmetric_eigen().eigenvalues;
        prop_assert!(e.min() > -1e-9);
        prop_assert!(est.data.lambda_min() <= est.data.lambda_max());
        prop_assert!(est.data.lambda_max() <= est.data.len() as f64 + 1e-9);
    }

    #[test]
    fn parameter_error_never_grows(a in pose(), b in pose(), ha in helix(), hb in helix(), squared in any::<bool>()) {
        let theta = theta_oracle(&a, &b);
        let rate = if squared { LearningRate::Squared } else { LearningRate::Nominal };
        let mut est = ThetaEstimate::new(RecordPolicy::default(), ParamMask::Spatial, rate);
        let mut prev = (est.theta_hat - theta).norm();
        for smp in simulate_pair(a, b, ha, hb, 400) {
            est.ingest(smp);
            let now = (est.theta_hat - theta).norm();
            prop_assert!(now <= prev + 1e-9, "{prev} -> {now}");
            prev = now;
        }
    }

    #[test]
    fn estimate_is_invariant_to_world_frame(
        a in pose(), b in pose(), ha in helix(), hb in helix(),
        shift in (-20.0..20.0f64, -20.0..20.0f64, -3.0..3.0f64), rot in -PI..PI,
    ) {
        let moved = |p: &Pose4| {
            let q = rz(rot) * p.position() + Vector3::new(shift.0, shift.1, shift.2);
            Pose4::new(q.x, q.y, q.z, p.yaw.0 + rot)
        };
        let run = |a: Pose4, b: Pose4| {
            let mut est = ThetaEstimate::new(RecordPolicy::default(), ParamMask::Spatial, LearningRate::Nominal);
            for smp in simulate_pair(a, b, ha, hb, 150) {
                est.ingest(smp);
            }
            est.theta_hat
        };
        let (x, y) = (run(a, b), run(moved(&a), moved(&b)));
        prop_assert!((x - y).norm() < 1e-7 * (1.0 + x.norm()), "{x:?} vs {y:?}");
    }

    #[test]
    fn stage1_commands_are_bounded(h in helix(), t in 0.0..1000.0f64) {
        let c = stage1_command(&ExcitationParams { radius: h.0, c_v: h.1, c_w: h.2 }, t);
        prop_assert!((c.v_h.abs() - (h.0 * h.2).abs()).abs() < 1e-12);
        prop_assert!(c.v_z.abs() <= h.1.abs());
        prop_assert_eq!(c.w, h.2);
    }

    #[test]
    fn composition_error_is_bounded(
        parents in proptest::collection::vec((pose(), -0.05..0.05f64, -0.05..0.05f64, -0.05..0.05f64), 1..4),
        child in pose(), leader in pose(), eps in 1e-4..0.05f64, delta in 1e-4..0.05f64,
    ) {
        // Each parent j contributes a pairwise estimate with position error
        // below eps and heading error below eps, and its own leader estimate
        // with position error below delta. With q_i = p_ij + R_ij q_j the
        // child error is bounded by eps + delta + eps |q_j| per parent, and
        // averaging keeps the largest bound.
        let rel = |a: &Pose4, b: &Pose4| (rz(a.yaw.0).transpose() * (a.position() - b.position()), b.yaw.0 - a.yaw.0);
        let mut links = Vec::new();
        let mut bound: f64 = 0.0;
        for (k, (pj, ex, ey, eth)) in parents.iter().enumerate() {
            let (p, th) = rel(&child, pj);
            let (q, phi) = rel(pj, &leader);
            let dir = Vector3::new(ex.signum(), ey.signum(), 1.0).normalize();
            links.push(NeighborLink {
                neighbor: k + 1,
                pairwise: RelativePoseEstimate { p0_hat: p + dir * eps * 0.99, r0_hat: Rotation3Z::from_angle(th + eth.signum() * eps * 0.99) },
                upstream: Some(LeaderPoseEstimate {
                    q0_hat: q + Vector3::new(-dir.y, dir.x, dir.z).normalize() * delta * 0.99,
                    q0_rot: Rotation3Z::from_angle(phi),
                    fresh: 0,
                }),
            });
            bound = bound.max(eps + delta + eps * q.norm());
        }
        let est = leader_initial_estimate(9, &links, 0).unwrap();
        let (q_true, _) = rel(&child, &leader);
        let err = (est.q0_hat - q_true).norm();
        prop_assert!(err <= bound + 1e-12, "error {err} bound {bound}");
        let (c, s) = (est.q0_rot.planar.cos(), est.q0_rot.planar.sin());
        prop_assert!((c * c + s * s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn judge_queue_respects_capacity(
        cap in 1usize..30,
        seq in proptest::collection::vec((0.0..10.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..80),
    ) {
        let mut q = JudgeQueue::new(cap, 0.5);
        for (k, (d, x, y)) in seq.into_iter().enumerate() {
            let s = q.screen(MeasurementTriplet { d, z_i: Vector3::new(x, 0.0, 0.0), z_j: Vector3::new(0.0, y, 0.0), tick: k as u64 });
            prop_assert!(s.votes <= s.size);
            prop_assert!(q.len() <= cap);
        }
    }

    #[test]
    fn noise_free_ranges_are_never_flagged(a in pose(), b in pose(), ha in helix(), hb in helix()) {
        let mut world = World::new(&[a, b], 0.05);
        let mut q = JudgeQueue::new(20, 0.5);
        let cmd = |h: (f64, f64, f64), t: f64| stage1_command(&ExcitationParams { radius: h.0, c_v: h.1, c_w: h.2 }, t);
        for _ in 0..300 {
            let d = (world.robots[0].world_pose.position() - world.robots[1].world_pose.position()).norm();
            let s = q.screen(MeasurementTriplet {
                d,
                z_i: world.robots[0].odom_position(),
                z_j: world.robots[1].odom_position(),
                tick: world.tick,
            });
            prop_assert_eq!(s.votes, 0);
            let t = world.time();
            world.step(&[cmd(ha, t), cmd(hb, t)]);
        }
    }
}

#[test]
fn odometry_starts_at_zero_and_stays_without_motion() {
    let mut world = World::new(&[Pose4::new(1.0, 2.0, 3.0, 0.5)], 0.1);
    assert_eq!(world.robots[0].odom_position(), Vector3::zeros());
    for _ in 0..10 {
        world.step(&[VelocityCommand::new(0.0, 0.0, 0.0)]);
    }
    assert_eq!(world.robots[0].odom_position(), Vector3::zeros());
}
