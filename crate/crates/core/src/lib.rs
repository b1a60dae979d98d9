//! Relative localization and formation control for robot swarms from
//! inter-robot ranging and odometry.

pub mod coop_localization;
pub mod eigen;
pub mod estimation;
pub mod geometry;
pub mod regression;
pub mod sensing;
pub mod sim_world;
pub mod control;
pub mod metrics;
pub mod outlier_detection;
pub mod harness;
