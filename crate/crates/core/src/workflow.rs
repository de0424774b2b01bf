//! Offline processing chain and the scenario experiments built on it.

use serde::{Deserialize, Serialize};

use crate::config::{AppConfig, Preset};
use crate::detection::{
    filter_by_confidence, ClusterDetector, DetectionFrame, Detector, DetectorConfig,
};
use crate::error::Result;
use crate::evaluation::{evaluate_sequence, EvalConfig, HypothesisFrame, MotReport};
use crate::geometry::{LidarScan, PointXY, Pose2D};
use crate::pipeline::{export_dynamic_obstacles, CollisionCheck, DynamicObstacle};
use crate::simulator::{
    beams_on_agent, simulate, Arena, ScenarioConfig, ScenarioKind, ScriptedAgent, SimOutput,
};
use crate::tracking::{TrackEstimate, Tracker, TrackerConfig};

/// Runs `detector` over every scan and keeps detections at or above the
/// configured confidence threshold.
pub fn detect_scans(
    scans: &[LidarScan],
    detector: &mut dyn Detector,
    cfg: &DetectorConfig,
) -> Vec<DetectionFrame> {
    scans
        .iter()
        .map(|scan| DetectionFrame {
            timestamp: scan.timestamp,
            odom_pose: scan.odom_pose,
            detections: filter_by_confidence(&detector.detect(scan, cfg), cfg.confidence_threshold),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub timestamp: f64,
    pub tracks: Vec<TrackEstimate>,
}

impl TrackFrame {
    pub fn hypothesis(&self) -> HypothesisFrame {
        HypothesisFrame {
            timestamp: self.timestamp,
            tracks: self.tracks.iter().map(|t| (t.id, t.position)).collect(),
        }
    }
}

/// Feeds detection frames through a fresh tracker in timestamp order.
pub fn track_frames(frames: &[DetectionFrame], cfg: &TrackerConfig) -> Result<Vec<TrackFrame>> {
    cfg.validate()?;
    let mut tracker = Tracker::new(*cfg);
    frames
        .iter()
        .map(|f| {
            Ok(TrackFrame {
                timestamp: f.timestamp,
                tracks: tracker.update(&f.detections, &f.odom_pose, f.timestamp)?,
            })
        })
        .collect()
}

pub fn hypotheses(tracks: &[TrackFrame]) -> Vec<HypothesisFrame> {
    tracks.iter().map(TrackFrame::hypothesis).collect()
}

/// Detection, tracking and scoring of one simulated run.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub sim: SimOutput,
    pub detections: Vec<DetectionFrame>,
    pub tracks: Vec<TrackFrame>,
    pub report: MotReport,
}

pub fn run_pipeline_offline(sim: SimOutput, cfg: &AppConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let mut detector = ClusterDetector::new(cfg.cluster);
    let detections = detect_scans(&sim.scans, &mut detector, &cfg.detector);
    let tracks = track_frames(&detections, &cfg.tracker)?;
    let eval = EvalConfig {
        threshold: cfg.evaluation.threshold,
        fov: sim
            .scans
            .first()
            .map(|s| s.params().field_of_view())
            .unwrap_or(EvalConfig::default().fov),
        ..EvalConfig::default()
    };
    let report = evaluate_sequence(&sim.ground_truth, &hypotheses(&tracks), &eval)?;
    Ok(ExperimentRun {
        sim,
        detections,
        tracks,
        report,
    })
}

/// Simulates `scenario` and scores it under `cfg`.
pub fn run_experiment(scenario: &ScenarioConfig, cfg: &AppConfig) -> Result<ExperimentRun> {
    run_pipeline_offline(simulate(scenario)?, cfg)
}

/// One row of the scenario × preset results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: ScenarioKind,
    pub preset: Preset,
    pub report: MotReport,
}

/// Runs every preset on each scenario kind with a shared seed and duration.
/// Scans are simulated once per scenario and reused across presets.
pub fn run_benchmark(
    kinds: &[ScenarioKind],
    presets: &[Preset],
    seed: u64,
    duration: f64,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &kind in kinds {
        let scenario = ScenarioConfig {
            duration,
            ..ScenarioConfig::new(kind, seed)
        };
        let sim = simulate(&scenario)?;
        for &preset in presets {
            let run = run_pipeline_offline(sim.clone(), &AppConfig::from_preset(preset))?;
            rows.push(BenchRow {
                scenario: kind,
                preset,
                report: run.report,
            });
        }
    }
    Ok(rows)
}

/// Stationary robot at the origin facing +x. One person walks at 1 m/s
/// across the view, starting hidden behind a wall and stepping out past its
/// near end.
pub fn emergence_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        kind: ScenarioKind::Custom,
        arena: Arena::centered(12.0, 12.0),
        duration: 5.0,
        robot_start: Pose2D::new(0.0, 0.0, 0.0, 0.0),
        clutter: Some(Vec::new()),
        occluder_walls: vec![[[2.0, 0.3], [2.0, 2.5]]],
        scripted_agents: vec![ScriptedAgent {
            waypoints: vec![[3.0, 2.0], [3.0, -3.0]],
            speed: 1.0,
            start_time: 0.0,
        }],
        ..ScenarioConfig::new(ScenarioKind::Custom, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitiationTiming {
    /// First scan with at least the required number of beams on the person.
    pub first_visible: f64,
    /// First frame with an initiated track within the match threshold.
    pub initiated: Option<f64>,
}

impl InitiationTiming {
    pub fn latency(&self) -> Option<f64> {
        self.initiated.map(|t| t - self.first_visible)
    }
}

/// Measures when a track first follows `person` relative to the first scan
/// in which `min_beams` beams hit them.
pub fn initiation_timing(
    run: &ExperimentRun,
    person: u64,
    min_beams: usize,
    threshold: f64,
) -> Option<InitiationTiming> {
    let first = run
        .sim
        .labels
        .iter()
        .position(|labels| beams_on_agent(labels, person) >= min_beams)?;
    let first_visible = run.sim.scans[first].timestamp;
    let gt = |t: f64| {
        run.sim
            .ground_truth
            .iter()
            .find(|g| (g.timestamp - t).abs() < 1e-9)
            .and_then(|g| {
                g.persons
                    .iter()
                    .find(|(id, _)| *id == person)
                    .map(|(_, p)| *p)
            })
    };
    let initiated = run.tracks.iter().find_map(|frame| {
        let truth = gt(frame.timestamp)?;
        frame
            .tracks
            .iter()
            .any(|t| t.position.distance(&truth) <= threshold)
            .then_some(frame.timestamp)
    });
    Some(InitiationTiming {
        first_visible,
        initiated,
    })
}

/// First alarm times of the constant-velocity and static checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmTimes {
    pub forecast: Option<f64>,
    pub static_assumption: Option<f64>,
}

impl AlarmTimes {
    pub fn lead(&self) -> Option<f64> {
        Some(self.static_assumption? - self.forecast?)
    }
}

/// Head-on approach in closed form: robot from the origin along +x at
/// `robot_speed`, person from `(gap, 0)` along -x at `person_speed`. Both
/// checks run every `dt` seconds on the exact kinematic state.
pub fn head_on_alarms(
    gap: f64,
    robot_speed: f64,
    person_speed: f64,
    check: &CollisionCheck,
    dt: f64,
) -> AlarmTimes {
    let mut out = AlarmTimes {
        forecast: None,
        static_assumption: None,
    };
    let steps = ((gap / (robot_speed + person_speed)) / dt).ceil() as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let robot = PointXY::odom(robot_speed * t, 0.0);
        let ob = DynamicObstacle {
            id: 1,
            position: PointXY::odom(gap - person_speed * t, 0.0),
            velocity: [-person_speed, 0.0],
            timestamp: t,
        };
        if out.forecast.is_none() && check.alarm(&robot, [robot_speed, 0.0], &ob) {
            out.forecast = Some(t);
        }
        if out.static_assumption.is_none() && check.static_alarm(&robot, [robot_speed, 0.0], &ob) {
            out.static_assumption = Some(t);
        }
    }
    out
}

/// Robot driving +x at 0.5 m/s. A person hidden behind a wall steps into
/// the robot's lane 3 m ahead and walks straight at it at 1 m/s.
pub fn head_on_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        kind: ScenarioKind::Custom,
        arena: Arena::centered(12.0, 12.0),
        duration: 4.0,
        robot_start: Pose2D::new(0.0, 0.0, 0.0, 0.0),
        robot_twist: (0.5, 0.0),
        clutter: Some(Vec::new()),
        occluder_walls: vec![[[2.6, 0.55], [2.6, 3.0]]],
        scripted_agents: vec![ScriptedAgent {
            waypoints: vec![[3.5, 1.2], [3.5, 0.0], [-3.0, 0.0]],
            speed: 1.0,
            start_time: 0.0,
        }],
        ..ScenarioConfig::new(ScenarioKind::Custom, seed)
    }
}

/// Alarm times from tracked obstacles: every track frame is checked with
/// the tracked velocity and with the velocity zeroed.
pub fn tracked_alarms(
    run: &ExperimentRun,
    robot_twist: (f64, f64),
    check: &CollisionCheck,
    velocity_gate: f64,
) -> AlarmTimes {
    let mut out = AlarmTimes {
        forecast: None,
        static_assumption: None,
    };
    for (frame, scan) in run.tracks.iter().zip(&run.sim.scans) {
        let pose = scan.odom_pose;
        let robot = PointXY::odom(pose.x, pose.y);
        let v = [
            robot_twist.0 * pose.theta.cos(),
            robot_twist.0 * pose.theta.sin(),
        ];
        for ob in export_dynamic_obstacles(&frame.tracks, velocity_gate) {
            if out.forecast.is_none() && check.alarm(&robot, v, &ob) {
                out.forecast = Some(frame.timestamp);
            }
        }
        for t in &frame.tracks {
            let ob = DynamicObstacle {
                id: t.id,
                position: t.position,
                velocity: t.velocity,
                timestamp: t.timestamp,
            };
            if out.static_assumption.is_none() && check.static_alarm(&robot, v, &ob) {
                out.static_assumption = Some(frame.timestamp);
            }
        }
    }
    out
}
