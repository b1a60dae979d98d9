//! Leader-relative localization over a layered interaction graph.
//!
//! Robot 0 is the leader. A robot in layer 1 ranges to the leader directly and
//! copies its pairwise estimate. A robot in a deeper layer composes each
//! neighbour's pairwise estimate with that neighbour's own leader estimate and
//! averages the results.

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Angle, PlanarRotation, Rotation3Z};
use crate::estimation::{EstimationError, RelativePoseEstimate};
use crate::sensing::OdomBroadcast;

pub const LEADER: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoopError {
    #[error("edge ({from}, {to}) references a robot outside 0..{count}")]
    InvalidNode { from: usize, to: usize, count: usize },
    #[error("self loop on robot {0}")]
    SelfLoop(usize),
    #[error("robots {0:?} cannot reach the leader")]
    UnreachableNode(Vec<usize>),
    #[error("robot {robot} has no usable estimate from neighbour {neighbor}")]
    MissingNeighborEstimate { robot: usize, neighbor: usize },
    #[error("robot {0} has no neighbours to compose from")]
    NoNeighbors(usize),
}

/// Directed ranging graph after layering. An edge `i -> j` means `i`
/// measures `j`; only edges into the next-shallower layer are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyGraph {
    count: usize,
    layers: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
    pruned: Vec<(usize, usize)>,
}

impl TopologyGraph {
    /// Hop-count layering from the leader followed by pruning of every edge
    /// that does not point one layer closer to the leader.
    pub fn assign_layers(count: usize, edges: &[(usize, usize)]) -> Result<Self, CoopError> {
        let mut reverse = vec![Vec::new(); count];
        for &(from, to) in edges {
            if from >= count || to >= count {
                return Err(CoopError::InvalidNode { from, to, count });
            }
            if from == to {
                return Err(CoopError::SelfLoop(from));
            }
            reverse[to].push(from);
        }
        let mut layers = vec![usize::MAX; count];
        let mut queue = VecDeque::new();
        if count > 0 {
            layers[LEADER] = 0;
            queue.push_back(LEADER);
        }
        while let Some(node) = queue.pop_front() {
            for &src in &reverse[node] {
                if layers[src] == usize::MAX {
                    layers[src] = layers[node] + 1;
                    queue.push_back(src);
                }
            }
        }
        let unreachable: Vec<usize> = (0..count).filter(|&i| layers[i] == usize::MAX).collect();
        if !unreachable.is_empty() {
            return Err(CoopError::UnreachableNode(unreachable));
        }

        let mut neighbors = vec![Vec::new(); count];
        let mut pruned = Vec::new();
        for &(from, to) in edges {
            if layers[to] < layers[from] {
                neighbors[from].push(to);
            } else {
                pruned.push((from, to));
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        pruned.sort_unstable();
        pruned.dedup();
        Ok(TopologyGraph { count, layers, neighbors, pruned })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn layer(&self, robot: usize) -> usize {
        self.layers[robot]
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.iter().copied().max().unwrap_or(0)
    }

    /// Neighbours kept after pruning, in ascending order.
    pub fn neighbors(&self, robot: usize) -> &[usize] {
        &self.neighbors[robot]
    }

    /// Edges dropped by the layering.
    pub fn pruned_edges(&self) -> &[(usize, usize)] {
        &self.pruned
    }

    /// Kept edges `(i, j)` in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.count).flat_map(|i| self.neighbors[i].iter().map(move |&j| (i, j))).collect()
    }

    /// Followers grouped by layer, shallowest first.
    pub fn by_layer(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.depth() + 1];
        for (i, &l) in self.layers.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Initial pose of the leader relative to a robot, in that robot's odometry
/// frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderPoseEstimate {
    pub q0_hat: Vector3<f64>,
    pub q0_rot: Rotation3Z,
    /// Tick of the last successful update.
    pub fresh: u64,
}

/// One neighbour's contribution. `upstream` is `None` when the neighbour is
/// the leader itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborLink {
    pub neighbor: usize,
    pub pairwise: RelativePoseEstimate,
    pub upstream: Option<LeaderPoseEstimate>,
}

/// Composes the leader estimate of one robot from its neighbours.
pub fn leader_initial_estimate(
    robot: usize,
    links: &[NeighborLink],
    tick: u64,
) -> Result<LeaderPoseEstimate, CoopError> {
    if let [only] = links {
        if only.upstream.is_none() {
            return Ok(LeaderPoseEstimate {
                q0_hat: only.pairwise.p0_hat,
                q0_rot: only.pairwise.r0_hat,
                fresh: tick,
            });
        }
    }
    if links.is_empty() {
        return Err(CoopError::NoNeighbors(robot));
    }
    let n = links.len() as f64;
    let mut q = Vector3::zeros();
    let (mut c, mut s) = (0.0, 0.0);
    for link in links {
        let (q_j, rot_j) = match &link.upstream {
            Some(up) => (up.q0_hat, up.q0_rot),
            None => (Vector3::zeros(), Rotation3Z::IDENTITY),
        };
        q += link.pairwise.p0_hat + link.pairwise.r0_hat.rotate(&q_j);
        let r = link.pairwise.r0_hat.compose(&rot_j);
        c += r.planar.cos();
        s += r.planar.sin();
    }
    let rot = PlanarRotation::norm_project(c / n, s / n)
        .map_err(|_| CoopError::MissingNeighborEstimate { robot, neighbor: links[0].neighbor })?;
    Ok(LeaderPoseEstimate { q0_hat: q / n, q0_rot: Rotation3Z::from_planar(rot), fresh: tick })
}

/// Real-time leader-relative position and the trig pair of the leader-relative
/// heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderRealtime {
    /// Position of the robot relative to the leader, in the robot's odometry
    /// frame.
    pub q: Vector3<f64>,
    /// Cosine of the robot's heading relative to the leader's.
    pub cos: f64,
    /// Sine of the robot's heading relative to the leader's.
    pub sin: f64,
}

pub fn leader_realtime_estimate(
    est: &LeaderPoseEstimate,
    own_pos: &Vector3<f64>,
    own_yaw: Angle,
    leader: &OdomBroadcast,
    now_tick: u64,
    horizon: u64,
) -> Result<LeaderRealtime, EstimationError> {
    let lag = now_tick.saturating_sub(leader.tick);
    if lag > horizon {
        return Err(EstimationError::StaleBroadcast { sender: leader.sender, lag, horizon });
    }
    let q = est.q0_hat + own_pos - est.q0_rot.rotate(&leader.cum_pos);
    let (c0, s0) = (est.q0_rot.planar.cos(), est.q0_rot.planar.sin());
    let dphi = own_yaw.0 - leader.cum_yaw.0;
    let (sd, cd) = dphi.sin_cos();
    Ok(LeaderRealtime { q, cos: c0 * cd + s0 * sd, sin: c0 * sd - s0 * cd })
}

/// Maintains every robot's leader estimate over a fixed topology.
#[derive(Debug, Clone)]
pub struct CoopLocalizer {
    graph: TopologyGraph,
    estimates: Vec<Option<LeaderPoseEstimate>>,
}

impl CoopLocalizer {
    pub fn new(graph: TopologyGraph) -> Self {
        let n = graph.len();
        CoopLocalizer { graph, estimates: vec![None; n] }
    }

    pub fn graph(&self) -> &TopologyGraph {
        &self.graph
    }

    pub fn estimate(&self, robot: usize) -> Option<&LeaderPoseEstimate> {
        self.estimates[robot].as_ref()
    }

    /// Refreshes all followers layer by layer, so deeper robots see the values
    /// their parents computed in the same call. Robots whose inputs are not
    /// yet available keep their previous estimate; their errors are returned.
    pub fn update<F>(&mut self, tick: u64, mut pairwise: F) -> Vec<CoopError>
    where
        F: FnMut(usize, usize) -> Option<RelativePoseEstimate>,
    {
        let mut errors = Vec::new();
        for layer in self.graph.by_layer().into_iter().skip(1) {
            for robot in layer {
                match self.links(robot, &mut pairwise) {
                    Ok(links) => match leader_initial_estimate(robot, &links, tick) {
                        Ok(e) => self.estimates[robot] = Some(e),
                        Err(e) => errors.push(e),
                    },
                    Err(e) => errors.push(e),
                }
            }
        }
        errors
    }

    fn links<F>(&self, robot: usize, pairwise: &mut F) -> Result<Vec<NeighborLink>, CoopError>
    where
        F: FnMut(usize, usize) -> Option<RelativePoseEstimate>,
    {
        self.graph
            .neighbors(robot)
            .iter()
            .map(|&j| {
                let missing = CoopError::MissingNeighborEstimate { robot, neighbor: j };
                let est = pairwise(robot, j).ok_or_else(|| missing.clone())?;
                let upstream = if j == LEADER { None } else { Some(self.estimates[j].ok_or(missing)?) };
                Ok(NeighborLink { neighbor: j, pairwise: est, upstream })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_topology() {
        let g = TopologyGraph::assign_layers(4, &[(1, 0), (2, 0), (3, 0)]).unwrap();
        assert_eq!(g.layers(), &[0, 1, 1, 1]);
        assert_eq!(g.depth(), 1);
    }

    #[test]
    fn chain_topology() {
        let g = TopologyGraph::assign_layers(3, &[(2, 1), (1, 0)]).unwrap();
        assert_eq!(g.layers(), &[0, 1, 2]);
        assert_eq!(g.neighbors(2), &[1]);
    }

    #[test]
    fn example_dag_layers_and_pruning() {
        // 0 <- {1, 2}; {3, 5} -> 2; 4 -> {1, 3}; plus 2 -> 3 and 3 -> 5 loops
        let edges = [(1, 0), (2, 0), (3, 2), (5, 2), (4, 1), (4, 3), (2, 3), (3, 5)];
        let g = TopologyGraph::assign_layers(6, &edges).unwrap();
        assert_eq!(g.layers(), &[0, 1, 1, 2, 2, 2]);
        assert_eq!(g.neighbors(4), &[1]);
        assert_eq!(g.pruned_edges(), &[(2, 3), (3, 5), (4, 3)]);
        for (i, j) in g.edges() {
            assert_eq!(g.layer(j) + 1, g.layer(i));
        }
    }

    #[test]
    fn unreachable_and_invalid() {
        assert_eq!(
            TopologyGraph::assign_layers(3, &[(1, 0)]),
            Err(CoopError::UnreachableNode(vec![2]))
        );
        assert!(matches!(TopologyGraph::assign_layers(2, &[(1, 5)]), Err(CoopError::InvalidNode { .. })));
        assert_eq!(TopologyGraph::assign_layers(2, &[(1, 1)]), Err(CoopError::SelfLoop(1)));
    }

    fn est(p: [f64; 3], th: f64) -> RelativePoseEstimate {
        RelativePoseEstimate { p0_hat: Vector3::from(p), r0_hat: Rotation3Z::from_angle(th) }
    }

    #[test]
    fn layer_one_copies_pairwise() {
        let pw = est([1.0, 2.0, 0.5], 0.7);
        let out = leader_initial_estimate(1, &[NeighborLink { neighbor: 0, pairwise: pw, upstream: None }], 4).unwrap();
        assert_eq!(out.q0_hat, pw.p0_hat);
        assert_eq!(out.q0_rot, pw.r0_hat);
        assert_eq!(out.fresh, 4);
    }

    #[test]
    fn single_neighbour_composition() {
        let pw = est([1.0, 0.0, 0.0], std::f64::consts::FRAC_PI_2);
        let up = LeaderPoseEstimate { q0_hat: Vector3::new(2.0, 0.0, 1.0), q0_rot: Rotation3Z::from_angle(0.3), fresh: 0 };
        let out = leader_initial_estimate(2, &[NeighborLink { neighbor: 1, pairwise: pw, upstream: Some(up) }], 0).unwrap();
        assert!((out.q0_hat - Vector3::new(1.0, 2.0, 1.0)).norm() < 1e-12);
        assert!((out.q0_rot.angle() - (std::f64::consts::FRAC_PI_2 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn realtime_at_t0_and_constant_without_motion() {
        let e = LeaderPoseEstimate { q0_hat: Vector3::new(1.0, -2.0, 0.3), q0_rot: Rotation3Z::from_angle(0.9), fresh: 0 };
        let b = |tick| OdomBroadcast { sender: 0, tick, cum_pos: Vector3::zeros(), cum_yaw: Angle::ZERO };
        let r0 = leader_realtime_estimate(&e, &Vector3::zeros(), Angle::ZERO, &b(0), 0, 0).unwrap();
        assert_eq!(r0.q, e.q0_hat);
        assert!((r0.cos - 0.9f64.cos()).abs() < 1e-15);
        assert!((r0.sin + 0.9f64.sin()).abs() < 1e-15);
        let r1 = leader_realtime_estimate(&e, &Vector3::zeros(), Angle::ZERO, &b(50), 50, 0).unwrap();
        assert_eq!(r0, r1);
        assert!(leader_realtime_estimate(&e, &Vector3::zeros(), Angle::ZERO, &b(0), 3, 2).is_err());
    }

    #[test]
    fn localizer_reports_missing_inputs() {
        let g = TopologyGraph::assign_layers(3, &[(1, 0), (2, 1)]).unwrap();
        let mut loc = CoopLocalizer::new(g);
        let errs = loc.update(0, |i, _| if i == 2 { Some(est([1.0, 0.0, 0.0], 0.0)) } else { None });
        assert_eq!(errs.len(), 2);
        assert!(loc.estimate(1).is_none() && loc.estimate(2).is_none());
        let errs = loc.update(1, |_, _| Some(est([1.0, 0.0, 0.0], 0.0)));
        assert!(errs.is_empty());
        assert!((loc.estimate(2).unwrap().q0_hat - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-15);
    }
}
