use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::assignment::{solve_assignment, AssociationResult, Match};
use super::kalman::{kalman_predict, kalman_update, KalmanState};
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::geometry::{transform_to_frame, Frame, PointXY, Pose2D};

pub type TrackId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Candidate,
    Initiated,
    Terminated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    pub state: KalmanState,
    pub status: TrackStatus,
    pub hit_counter: u32,
    pub miss_streak: u32,
    pub last_update: f64,
    pub initiated_at: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    pub c_init: u32,
    pub c_del: u32,
    pub gate_distance: f64,
    pub process_noise_accel: f64,
    pub measurement_noise: f64,
    /// Velocity standard deviation given to a freshly spawned candidate.
    pub initial_velocity_std: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            c_init: 10,
            c_del: 15,
            gate_distance: 1.0,
            process_noise_accel: 2.0,
            measurement_noise: 0.1,
            initial_velocity_std: 1.5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_init < 1 {
            return Err(Error::config("tracker.c_init", "must be >= 1"));
        }
        if self.c_del < 1 {
            return Err(Error::config("tracker.c_del", "must be >= 1"));
        }
        if !(self.gate_distance > 0.0) {
            return Err(Error::config("tracker.gate_distance", "must be positive"));
        }
        if !(self.process_noise_accel >= 0.0) {
            return Err(Error::config(
                "tracker.process_noise_accel",
                "must be non-negative",
            ));
        }
        if !(self.measurement_noise > 0.0) {
            return Err(Error::config(
                "tracker.measurement_noise",
                "must be positive",
            ));
        }
        if !(self.initial_velocity_std >= 0.0) {
            return Err(Error::config(
                "tracker.initial_velocity_std",
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Immutable view of an initiated track handed to downstream stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEstimate {
    pub id: TrackId,
    pub position: PointXY,
    pub velocity: [f64; 2],
    pub timestamp: f64,
}

impl TrackEstimate {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Euclidean distances between track positions (rows) and detection
/// positions (columns). All points must share one frame.
pub fn build_cost_matrix(tracks: &[PointXY], detections: &[PointXY]) -> Result<DMatrix<f64>> {
    let frame = tracks.first().or(detections.first()).map(|p| p.frame);
    if let Some(frame) = frame {
        if let Some(bad) = tracks.iter().chain(detections).find(|p| p.frame != frame) {
            return Err(Error::FrameMismatch {
                expected: frame.to_string(),
                found: bad.frame.to_string(),
            });
        }
    }
    Ok(DMatrix::from_fn(tracks.len(), detections.len(), |i, j| {
        tracks[i].distance(&detections[j])
    }))
}

/// Applies one association round to the track set.
///
/// `association.matches[..].track` and `unmatched_tracks` hold track ids;
/// detection indices refer to `detections`. Returns the live set (candidates
/// and initiated tracks, including newly spawned candidates) and the tracks
/// that terminated in this step.
pub fn lifecycle_step(
    tracks: Vec<Track>,
    association: &AssociationResult,
    detections: &[PointXY],
    cfg: &TrackerConfig,
    next_id: &mut TrackId,
    timestamp: f64,
) -> (Vec<Track>, Vec<Track>) {
    let mut live = Vec::with_capacity(tracks.len() + association.unmatched_detections.len());
    let mut terminated = Vec::new();

    for mut track in tracks {
        let matched = association
            .matches
            .iter()
            .find(|m| m.track as TrackId == track.id);
        match matched {
            Some(m) => {
                track.state = kalman_update(
                    &track.state,
                    &detections[m.detection],
                    cfg.measurement_noise,
                );
                track.hit_counter = (track.hit_counter + 1).min(cfg.c_init);
                track.miss_streak = 0;
                track.last_update = timestamp;
                if track.status == TrackStatus::Candidate && track.hit_counter >= cfg.c_init {
                    track.status = TrackStatus::Initiated;
                    track.initiated_at = Some(timestamp);
                }
            }
            None => {
                track.hit_counter = track.hit_counter.saturating_sub(1);
                track.miss_streak += 1;
            }
        }
        if track.miss_streak > cfg.c_del {
            track.status = TrackStatus::Terminated;
            terminated.push(track);
        } else {
            live.push(track);
        }
    }

    for &j in &association.unmatched_detections {
        let z = detections[j];
        let mut track = Track {
            id: *next_id,
            state: KalmanState::at_rest(z.x, z.y, cfg.measurement_noise, cfg.initial_velocity_std),
            status: TrackStatus::Candidate,
            hit_counter: 1,
            miss_streak: 0,
            last_update: timestamp,
            initiated_at: None,
        };
        if cfg.c_init <= 1 {
            track.status = TrackStatus::Initiated;
            track.initiated_at = Some(timestamp);
        }
        *next_id += 1;
        live.push(track);
    }
    (live, terminated)
}

/// SORT-style tracker running in the odometry frame.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: TrackId,
    last_time: Option<f64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            last_time: None,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// All live tracks, candidates included.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Runs one tracker step on sensor-frame detections taken at `timestamp`
    /// with the sensor at `robot_pose_in_odom`. Returns initiated tracks.
    ///
    /// Initiated tracks are associated first; candidates then compete for the
    /// leftover detections. A timestamp earlier than the previous call is
    /// rejected and leaves the tracker untouched.
    pub fn update(
        &mut self,
        detections: &[Detection],
        robot_pose_in_odom: &Pose2D,
        timestamp: f64,
    ) -> Result<Vec<TrackEstimate>> {
        if let Some(last) = self.last_time {
            if timestamp < last {
                return Err(Error::TimeRegression {
                    last,
                    got: timestamp,
                });
            }
        }
        let points: Vec<PointXY> = detections
            .iter()
            .map(|d| match d.position.frame {
                Frame::Sensor => transform_to_frame(&d.position, robot_pose_in_odom),
                Frame::Odom => d.position,
            })
            .collect();

        let dt = self.last_time.map_or(0.0, |last| timestamp - last);
        let mut predicted = Vec::with_capacity(self.tracks.len());
        for track in &self.tracks {
            let mut t = track.clone();
            t.state = kalman_predict(&t.state, dt, self.cfg.process_noise_accel)?;
            predicted.push(t);
        }

        let association = self.associate(&predicted, &points)?;
        let (live, _terminated) = lifecycle_step(
            predicted,
            &association,
            &points,
            &self.cfg,
            &mut self.next_id,
            timestamp,
        );
        self.tracks = live;
        self.last_time = Some(timestamp);
        Ok(self.initiated(timestamp))
    }

    fn associate(&self, tracks: &[Track], points: &[PointXY]) -> Result<AssociationResult> {
        let mut result = AssociationResult::default();
        let mut remaining: Vec<usize> = (0..points.len()).collect();
        for status in [TrackStatus::Initiated, TrackStatus::Candidate] {
            let group: Vec<&Track> = tracks.iter().filter(|t| t.status == status).collect();
            let positions: Vec<PointXY> = group
                .iter()
                .map(|t| {
                    let (x, y) = t.state.position();
                    PointXY::odom(x, y)
                })
                .collect();
            let dets: Vec<PointXY> = remaining.iter().map(|&j| points[j]).collect();
            let cost = build_cost_matrix(&positions, &dets)?;
            let pass = solve_assignment(&cost, self.cfg.gate_distance);
            for m in pass.matches {
                result.matches.push(Match {
                    track: group[m.track].id as usize,
                    detection: remaining[m.detection],
                    distance: m.distance,
                });
            }
            result
                .unmatched_tracks
                .extend(pass.unmatched_tracks.iter().map(|&i| group[i].id as usize));
            remaining = pass
                .unmatched_detections
                .iter()
                .map(|&j| remaining[j])
                .collect();
        }
        result.unmatched_detections = remaining;
        Ok(result)
    }

    fn initiated(&self, timestamp: f64) -> Vec<TrackEstimate> {
        self.tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Initiated)
            .map(|t| {
                let (x, y) = t.state.position();
                let (vx, vy) = t.state.velocity();
                TrackEstimate {
                    id: t.id,
                    position: PointXY::odom(x, y),
                    velocity: [vx, vy],
                    timestamp,
                }
            })
            .collect()
    }
}
