use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Scenario, ScenarioConfig};
use super::HarnessError;
use crate::control::{
    stage1_command, stage2_command, tracking_error_estimated, tracking_error_truth, Stage, StageTracker,
    TrackingError,
};
use crate::coop_localization::{leader_realtime_estimate, CoopLocalizer, LEADER};
use crate::estimation::{RelativePoseEstimate, ThetaEstimate};
use crate::metrics::{self, DetectionStats, OutlierEvent, RunMetrics};
use crate::outlier_detection::{JudgeQueue, Verdict};
use crate::regression::{build_sample, OdomSegment, RecordOutcome, ThetaTrue, Vector7};
use crate::sensing::{measure_range, stream_rng, MeasurementTriplet, OdomBroadcast, OdomIntegrator, StreamId};
use crate::sim_world::{initial_relative, VelocityCommand, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep per-tick log rows (off for sweeps).
    pub logs: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { logs: true }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRow {
    pub tick: u64,
    pub robot: usize,
    pub neighbor: usize,
    pub theta_error: f64,
    pub relative_theta_error: f64,
    pub excitation_ratio: f64,
    pub p0_x: f64,
    pub p0_y: f64,
    pub p0_z: f64,
    pub theta0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LeaderRow {
    pub tick: u64,
    pub robot: usize,
    pub q0_x: f64,
    pub q0_y: f64,
    pub q0_z: f64,
    pub q0_yaw: f64,
    pub leader_error: f64,
    pub tracking_error: f64,
    pub estimation_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommandRow {
    pub tick: u64,
    pub robot: usize,
    pub stage: Stage,
    pub v_h: f64,
    pub v_z: f64,
    pub w: f64,
    /// Previous command reused because no usable estimate was available.
    pub held: bool,
    pub saturated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleRow {
    pub tick: u64,
    pub robot: usize,
    pub neighbor: usize,
    pub phi_0: f64,
    pub phi_1: f64,
    pub phi_2: f64,
    pub phi_3: f64,
    pub phi_4: f64,
    pub phi_5: f64,
    pub phi_6: f64,
    pub y: f64,
    /// `y − Θᵀφ` with the true parameters.
    pub truth_residual: f64,
    pub outcome: &'static str,
    pub eta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `|Θ̂ − Θ|²` before and after the update.
    pub v_before: f64,
    pub v_after: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunLogs {
    pub estimates: Vec<EstimateRow>,
    pub leader: Vec<LeaderRow>,
    pub commands: Vec<CommandRow>,
    pub samples: Vec<SampleRow>,
    pub outliers: Vec<OutlierEvent>,
}

/// Final state of one ordered pair.
#[derive(Debug, Clone)]
pub struct PairFinal {
    pub robot: usize,
    pub neighbor: usize,
    pub estimate: ThetaEstimate,
    pub theta_true: Vector7,
    pub accepted: usize,
    pub rejected_outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scope: String,
    pub metric: String,
    pub value: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub scenario: Scenario,
    pub stage2_from: Option<u64>,
    pub stage1_end: Vec<Option<u64>>,
    pub metrics: RunMetrics,
    /// Commanded velocities per robot per tick.
    pub commands: Vec<Vec<VelocityCommand>>,
    pub pairs: Vec<PairFinal>,
    pub logs: RunLogs,
    pub summary: Vec<SummaryRow>,
}

struct PairState {
    robot: usize,
    neighbor: usize,
    estimate: ThetaEstimate,
    queue: JudgeQueue,
    prev: Option<MeasurementTriplet>,
    rng: ChaCha8Rng,
    theta_true: Vector7,
    pose: Option<RelativePoseEstimate>,
    /// Latched once the excitation ratio first reaches the threshold; the
    /// pose is published to the cooperative layer only from then on.
    excited: bool,
    accepted: usize,
    rejected_outliers: usize,
}

pub fn run(config: &ScenarioConfig, seed: u64) -> Result<RunOutput, HarnessError> {
    run_with(config, seed, RunOptions::default())
}

pub fn run_with(config: &ScenarioConfig, seed: u64, opts: RunOptions) -> Result<RunOutput, HarnessError> {
    let sc = config.realize(seed)?;
    simulate(sc, seed, opts)
}

fn non_finite(tick: u64, what: impl Into<String>) -> HarnessError {
    HarnessError::NonFinite { tick, what: what.into() }
}

/// The tick loop: sense, screen, estimate, localize, pick the stage, command,
/// step the world.
pub fn simulate(sc: Scenario, seed: u64, opts: RunOptions) -> Result<RunOutput, HarnessError> {
    let n = sc.poses.len();
    let dt = sc.dt;
    let mut world = World::new(&sc.poses, dt);
    let mut odom: Vec<OdomIntegrator> = (0..n).map(|_| OdomIntegrator::new(sc.planar)).collect();
    let mut odom_rng: Vec<ChaCha8Rng> = (0..n).map(|i| stream_rng(seed, StreamId::Odometry { robot: i })).collect();

    let edges = sc.graph.edges();
    let mut pair_index = BTreeMap::new();
    let mut pairs: Vec<PairState> = edges
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            pair_index.insert((i, j), k);
            PairState {
                robot: i,
                neighbor: j,
                estimate: ThetaEstimate::new(sc.policy(), sc.mask(), sc.estimator.learning_rate),
                queue: JudgeQueue::new(sc.screening.capacity, sc.screening.threshold),
                prev: None,
                rng: stream_rng(seed, StreamId::Range { from: i, to: j }),
                theta_true: ThetaTrue::from_truth(&world.robots[i], &world.robots[j]).as_vector(),
                pose: None,
                excited: false,
                accepted: 0,
                rejected_outliers: 0,
            }
        })
        .collect();

    let mut coop = CoopLocalizer::new(sc.graph.clone());
    let pe = sc.mode.pe_baseline;
    let timeout = sc.estimator.stage1_timeout.map(|s| (s / dt).round() as u64);
    let mut tracker = StageTracker::new(n, sc.estimator.excitation_threshold, timeout);
    let leader_truth0 = world.robots[LEADER];
    let q_true: Vec<_> = (0..n).map(|i| initial_relative(&world.robots[i], &leader_truth0).0).collect();

    let mut logs = RunLogs::default();
    let mut m = RunMetrics {
        dt,
        theta_error: vec![Vec::new(); pairs.len()],
        leader_position_error: vec![Vec::new(); n],
        estimation_error: vec![Vec::new(); n],
        tracking_error: vec![Vec::new(); n],
        ..Default::default()
    };
    let mut commands: Vec<Vec<VelocityCommand>> = vec![Vec::with_capacity(sc.ticks as usize); n];
    let mut last_cmd = vec![VelocityCommand::ZERO; n];
    let mut leader_bcast: OdomBroadcast = odom[LEADER].broadcast(LEADER, 0);
    let mut settle_series: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut outlier_events = Vec::new();

    for tick in 0..sc.ticks {
        let t = tick as f64 * dt;

        // sense, screen, estimate
        for p in pairs.iter_mut() {
            let (i, j) = (p.robot, p.neighbor);
            let range = measure_range(&world.robots[i], &world.robots[j], &sc.noise, &mut p.rng);
            let trip = MeasurementTriplet { d: range.d, z_i: odom[i].position(), z_j: odom[j].position(), tick };
            let screening = sc.screening.enabled.then(|| p.queue.screen(trip));
            let rejected = screening.is_some_and(|s| s.verdict == Verdict::Outlier);
            outlier_events.push(OutlierEvent {
                tick,
                robot: i,
                neighbor: j,
                d: range.d,
                votes: screening.map_or(0, |s| s.votes),
                size: screening.map_or(0, |s| s.size),
                rejected,
                injected: range.injected_outlier,
            });
            if rejected {
                p.rejected_outliers += 1;
                continue;
            }
            if let Some(prev) = p.prev {
                let own = OdomSegment::between(prev.z_i, trip.z_i);
                let nbr = OdomSegment::between(prev.z_j, trip.z_j);
                if let Ok(sample) = build_sample(prev.d, trip.d, &own, &nbr, tick) {
                    let v_before = (p.estimate.theta_hat - p.theta_true).norm_squared();
                    let (outcome, step) = p.estimate.ingest(sample);
                    if !p.estimate.theta_hat.iter().all(|x| x.is_finite()) {
                        return Err(non_finite(tick, format!("estimate of pair ({i}, {j})")));
                    }
                    p.accepted += 1;
                    if opts.logs {
                        let v_after = (p.estimate.theta_hat - p.theta_true).norm_squared();
                        let f = &sample.phi;
                        logs.samples.push(SampleRow {
                            tick,
                            robot: i,
                            neighbor: j,
                            phi_0: f[0],
                            phi_1: f[1],
                            phi_2: f[2],
                            phi_3: f[3],
                            phi_4: f[4],
                            phi_5: f[5],
                            phi_6: f[6],
                            y: sample.y,
                            truth_residual: sample.y - p.theta_true.dot(f),
                            outcome: match outcome {
                                RecordOutcome::Appended => "appended",
                                RecordOutcome::Replaced(_) => "replaced",
                                RecordOutcome::Discarded => "discarded",
                            },
                            eta: step.eta,
                            lambda_min: step.lambda_min,
                            lambda_max: step.lambda_max,
                            v_before,
                            v_after,
                        });
                    }
                }
            }
            p.prev = Some(trip);
            // The persistent-excitation baseline has no excitation monitor.
            p.excited |= pe.is_some()
                || p.estimate.data.excitation_ratio().is_ok_and(|r| r >= sc.estimator.excitation_threshold);
            if p.excited {
                if let Ok(pose) = p.estimate.reconstruct_pose() {
                    p.pose = Some(pose);
                }
            }
        }

        // cooperative localization
        coop.update(tick, |i, j| pair_index.get(&(i, j)).and_then(|&k| pairs[k].pose));
        if tick % sc.estimator.leader_broadcast_interval == 0 {
            leader_bcast = odom[LEADER].broadcast(LEADER, tick);
        }

        // stage
        let stage = if pe.is_some() { Stage::Formation } else { tracker.stage_at(tick) };
        if pe.is_none() {
            let ratios: Vec<Vec<Option<f64>>> = (0..n)
                .map(|i| {
                    sc.graph
                        .neighbors(i)
                        .iter()
                        .map(|&j| pairs[pair_index[&(i, j)]].estimate.data.excitation_ratio().ok())
                        .collect()
                })
                .collect();
            tracker.observe(tick, &ratios)?;
        }

        // commands
        let leader_cmd = match stage {
            Stage::Excitation => stage1_command(&sc.excitation[LEADER], t),
            Stage::Formation => sc.leader,
        };
        let mut cmds = vec![VelocityCommand::ZERO; n];
        for i in 0..n {
            let truth_err = (i != LEADER)
                .then(|| tracking_error_truth(&world.robots[i], &world.robots[LEADER], sc.formation.offset(i)));
            let est_err: Option<TrackingError> = (i != LEADER)
                .then(|| {
                    let e = coop.estimate(i)?;
                    let rt = leader_realtime_estimate(
                        e,
                        &odom[i].position(),
                        odom[i].yaw(),
                        &leader_bcast,
                        tick,
                        sc.estimator.broadcast_horizon,
                    )
                    .ok()?;
                    Some(tracking_error_estimated(&rt, &e.q0_rot, odom[i].yaw(), sc.formation.offset(i)))
                })
                .flatten();

            let mut held = false;
            let mut cmd = if i == LEADER {
                leader_cmd
            } else {
                match stage {
                    Stage::Excitation => stage1_command(&sc.excitation[i], t),
                    Stage::Formation => {
                        let feedback = if sc.mode.truth_feedback { truth_err } else { est_err };
                        match feedback {
                            Some(e) => stage2_command(&leader_cmd, &e, &sc.gains[i]),
                            None if pe.is_some() => leader_cmd,
                            None => {
                                held = true;
                                last_cmd[i]
                            }
                        }
                    }
                }
            };
            if let (Some(pe), true) = (pe, i != LEADER) {
                let phase = 2.0 * PI * (pe.frequency * t + i as f64 / n as f64);
                cmd.v_h += pe.amplitude * phase.sin();
                cmd.w += pe.amplitude * phase.cos();
            }
            let saturated = sc.mode.saturation.is_some_and(|s| cmd.saturate(&s));
            if !cmd.is_finite() {
                return Err(non_finite(tick, format!("command of robot {i}")));
            }
            cmds[i] = cmd;
            last_cmd[i] = cmd;
            commands[i].push(cmd);

            // per-robot metrics
            let leader_err = coop.estimate(i).map_or(if i == LEADER { 0.0 } else { f64::NAN }, |e| (e.q0_hat - q_true[i]).norm());
            let te = truth_err.unwrap_or_default();
            let ee = match (est_err, truth_err) {
                (Some(a), Some(b)) => a.difference(&b).norm(),
                (_, None) => 0.0,
                _ => f64::NAN,
            };
            m.leader_position_error[i].push(leader_err);
            m.tracking_error[i].push(te.norm());
            m.estimation_error[i].push(ee);
            settle_series[i].push(te.position_norm().max(te.heading().abs()));
            if opts.logs {
                logs.commands.push(CommandRow {
                    tick,
                    robot: i,
                    stage,
                    v_h: cmd.v_h,
                    v_z: cmd.v_z,
                    w: cmd.w,
                    held,
                    saturated,
                });
                if i != LEADER {
                    let e = coop.estimate(i);
                    logs.leader.push(LeaderRow {
                        tick,
                        robot: i,
                        q0_x: e.map_or(f64::NAN, |e| e.q0_hat.x),
                        q0_y: e.map_or(f64::NAN, |e| e.q0_hat.y),
                        q0_z: e.map_or(f64::NAN, |e| e.q0_hat.z),
                        q0_yaw: e.map_or(f64::NAN, |e| e.q0_rot.angle()),
                        leader_error: leader_err,
                        tracking_error: te.norm(),
                        estimation_error: ee,
                    });
                }
            }
        }

        for (k, p) in pairs.iter().enumerate() {
            let err = (p.estimate.theta_hat - p.theta_true).norm();
            m.theta_error[k].push(err);
            if opts.logs {
                logs.estimates.push(EstimateRow {
                    tick,
                    robot: p.robot,
                    neighbor: p.neighbor,
                    theta_error: err,
                    relative_theta_error: err / p.theta_true.norm(),
                    excitation_ratio: p.estimate.data.excitation_ratio().unwrap_or(0.0),
                    p0_x: p.estimate.theta_hat[0],
                    p0_y: p.estimate.theta_hat[1],
                    p0_z: p.estimate.theta_hat[2],
                    theta0: p.pose.map_or(f64::NAN, |q| q.theta0().0),
                });
            }
        }

        // physics and odometry
        world.step(&cmds);
        for (i, o) in odom.iter_mut().enumerate() {
            o.advance(&world.robots[i], &sc.noise, &mut odom_rng[i]);
            if !world.robots[i].world_pose.is_finite() {
                return Err(non_finite(tick, format!("pose of robot {i}")));
            }
        }
    }

    m.detection = DetectionStats::from_events(&outlier_events);
    m.smoothness = (0..n)
        .map(|i| metrics::smoothness(&commands[i], &commands[LEADER], dt).unwrap_or(f64::NAN))
        .collect();
    if opts.logs {
        logs.outliers = outlier_events;
    }

    let pairs: Vec<PairFinal> = pairs
        .into_iter()
        .map(|p| PairFinal {
            robot: p.robot,
            neighbor: p.neighbor,
            estimate: p.estimate,
            theta_true: p.theta_true,
            accepted: p.accepted,
            rejected_outliers: p.rejected_outliers,
        })
        .collect();
    let mut out = RunOutput {
        seed,
        stage2_from: if pe.is_some() { Some(0) } else { tracker.stage2_from() },
        stage1_end: tracker.ended().to_vec(),
        scenario: sc,
        metrics: m,
        commands,
        pairs,
        logs,
        summary: Vec::new(),
    };
    out.summary = summarize(&out, &q_true, &settle_series);
    Ok(out)
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt)
}

fn last(series: &[f64]) -> f64 {
    series.last().copied().unwrap_or(f64::NAN)
}

/// Scalar results of a run as `(scope, metric, value)` rows.
fn summarize(out: &RunOutput, q_true: &[nalgebra::Vector3<f64>], settle: &[Vec<f64>]) -> Vec<SummaryRow> {
    let sc = &out.scenario;
    let m = &out.metrics;
    let dt = sc.dt;
    let ratio = sc.acceptance.convergence_ratio;
    let tol = sc.acceptance.tracking_tolerance;
    let n = sc.poses.len();
    let mut rows = Vec::new();
    let mut push = |scope: &str, metric: &str, value: String| {
        rows.push(SummaryRow { scope: scope.into(), metric: metric.into(), value })
    };

    let mut pass = true;
    let mut rel_final = Vec::new();
    for (k, p) in out.pairs.iter().enumerate() {
        let scope = format!("pair_{}_{}", p.robot, p.neighbor);
        let mag = p.theta_true.norm();
        let conv = metrics::convergence_time(&m.theta_error[k], mag, ratio, dt).ok();
        let rel = last(&m.theta_error[k]) / mag;
        rel_final.push(rel);
        push(&scope, "theta_convergence_time", fmt_opt(conv));
        push(&scope, "final_relative_theta_error", fmt(rel));
        push(&scope, "final_excitation_ratio", fmt(p.estimate.data.excitation_ratio().unwrap_or(0.0)));
        push(&scope, "samples_accepted", p.accepted.to_string());
        push(&scope, "outliers_rejected", p.rejected_outliers.to_string());
    }

    let stage2_tick = out.stage2_from.map(|t| t as usize);
    let mut leader_final = Vec::new();
    let mut tracking_final: Vec<f64> = Vec::new();
    for i in 1..n {
        let scope = format!("robot_{i}");
        let conv = metrics::convergence_time(&m.leader_position_error[i], q_true[i].norm(), ratio, dt).ok();
        let settle_t = stage2_tick.and_then(|s0| {
            let tail = settle[i].get(s0..)?;
            metrics::settling_tick(tail, tol).map(|k| (s0 + k) as f64 * dt)
        });
        let final_leader = last(&m.leader_position_error[i]);
        let final_track = last(&settle[i]);
        leader_final.push(final_leader);
        tracking_final.push(final_track);
        push(&scope, "layer", sc.graph.layer(i).to_string());
        push(&scope, "stage1_end_time", fmt_opt(out.stage1_end[i].map(|t| t as f64 * dt)));
        push(&scope, "leader_convergence_time", fmt_opt(conv));
        push(&scope, "final_leader_error", fmt(final_leader));
        push(&scope, "tracking_settle_time", fmt_opt(settle_t));
        push(&scope, "final_tracking_error", fmt(final_track));
        push(&scope, "smoothness", fmt(m.smoothness[i]));
        pass &= conv.is_some();
        if sc.acceptance.require_tracking {
            pass &= settle_t.is_some();
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    push("run", "seed", out.seed.to_string());
    push("run", "ticks", sc.ticks.to_string());
    push("run", "stage2_start_time", fmt_opt(out.stage2_from.map(|t| t as f64 * dt)));
    push("run", "mean_final_relative_theta_error", fmt(mean(&rel_final)));
    push("run", "mean_final_leader_error", fmt(mean(&leader_final)));
    push("run", "max_final_tracking_error", fmt(tracking_final.iter().copied().fold(0.0, f64::max)));
    push("run", "mean_smoothness", fmt(mean(&m.smoothness[1..])));
    push("run", "detection_success_rate", fmt_opt(m.detection.success_rate()));
    push("run", "detection_false_positive_rate", fmt(m.detection.false_positive_rate()));
    push("run", "pass", u8::from(pass).to_string());
    rows
}

impl RunOutput {
    pub fn summary_value(&self, scope: &str, metric: &str) -> Option<&str> {
        self.summary.iter().find(|r| r.scope == scope && r.metric == metric).map(|r| r.value.as_str())
    }

    pub fn summary_f64(&self, scope: &str, metric: &str) -> Option<f64> {
        self.summary_value(scope, metric)?.parse().ok()
    }

    pub fn passed(&self) -> bool {
        self.summary_value("run", "pass") == Some("1")
    }

    /// Mean relative parameter error over all pairs at the last tick.
    pub fn final_theta_error(&self) -> f64 {
        self.summary_f64("run", "mean_final_relative_theta_error").unwrap_or(f64::NAN)
    }

    /// Integrated command deviation of a follower from the leader over the
    /// ticks `from..`.
    pub fn smoothness_from(&self, robot: usize, from: usize) -> f64 {
        let a = &self.commands[robot][from.min(self.commands[robot].len())..];
        let b = &self.commands[LEADER][from.min(self.commands[LEADER].len())..];
        metrics::smoothness(a, b, self.scenario.dt).unwrap_or(f64::NAN)
    }
}
