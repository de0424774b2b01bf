//! Multi-person tracking: constant-velocity Kalman filtering, gated
//! Hungarian association on Euclidean distance, and counter-based track
//! lifecycle.

pub mod assignment;
pub mod kalman;
mod tracker;

pub use assignment::{hungarian, solve_assignment, AssociationResult, Match};
pub use kalman::{kalman_predict, kalman_update, KalmanState};
pub use tracker::{
    build_cost_matrix, lifecycle_step, Track, TrackEstimate, TrackId, TrackStatus, Tracker,
    TrackerConfig,
};
