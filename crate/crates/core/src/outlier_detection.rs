//! Triangle-inequality screening of range measurements.
//!
//! Between two sample times the range can change by at most the sum of the
//! distances both robots travelled. Each accepted triplet in the queue votes
//! on whether a new triplet breaks that bound.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::sensing::MeasurementTriplet;

pub const DEFAULT_CAPACITY: usize = 20;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Slack added to the travelled distance so exact equality (robots at rest,
/// collinear motion) does not count as a violation.
pub const TRIANGLE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Inlier,
    Outlier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Screening {
    pub verdict: Verdict,
    pub votes: usize,
    pub size: usize,
}

impl Screening {
    pub fn ratio(&self) -> f64 {
        if self.size == 0 {
            0.0
        } else {
            self.votes as f64 / self.size as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeQueue {
    entries: VecDeque<MeasurementTriplet>,
    capacity: usize,
    threshold: f64,
}

impl Default for JudgeQueue {
    fn default() -> Self {
        JudgeQueue::new(DEFAULT_CAPACITY, DEFAULT_THRESHOLD)
    }
}

impl JudgeQueue {
    pub fn new(capacity: usize, threshold: f64) -> Self {
        let capacity = capacity.max(1);
        JudgeQueue { entries: VecDeque::with_capacity(capacity), capacity, threshold }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn entries(&self) -> impl Iterator<Item = &MeasurementTriplet> {
        self.entries.iter()
    }

    /// Number of queued triplets the candidate is inconsistent with.
    pub fn votes(&self, candidate: &MeasurementTriplet) -> usize {
        self.entries.iter().filter(|m| violates(candidate, m)).count()
    }

    /// Screens `candidate`; inliers are enqueued, evicting the oldest entry
    /// at capacity. An empty queue accepts anything.
    pub fn screen(&mut self, candidate: MeasurementTriplet) -> Screening {
        let votes = self.votes(&candidate);
        let size = self.entries.len();
        let mut result = Screening { verdict: Verdict::Inlier, votes, size };
        if size > 0 && result.ratio() > self.threshold {
            result.verdict = Verdict::Outlier;
            return result;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(candidate);
        result
    }
}

/// `|d_k − d_m| ≥ |z_i[k] − z_i[m]| + |z_j[k] − z_j[m]|`, up to the slack.
pub fn violates(k: &MeasurementTriplet, m: &MeasurementTriplet) -> bool {
    let travelled = (k.z_i - m.z_i).norm() + (k.z_j - m.z_j).norm();
    (k.d - m.d).abs() >= travelled + TRIANGLE_SLACK
}
