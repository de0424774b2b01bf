//! Two-stage runtime: detection and tracking on separate threads, plus the
//! tracker-to-planner export (dynamic obstacles, forecasts, closest approach).
//!
//! ```text
//! source ──► input queue ──► detector thread ──► hand-off ──► tracker (caller thread) ──► sink
//!            (drop-oldest)                       (bounded)
//! ```
//!
//! While the tracker works on frame `i`, the detector is already on frame
//! `i + 1`, so throughput is bound by the slower stage rather than the sum.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, TryRecvError};
use serde::{Deserialize, Serialize};

use crate::detection::{filter_by_confidence, Detection, Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::geometry::{LidarScan, PointXY, Pose2D};
use crate::tracking::{TrackEstimate, TrackId, Tracker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Discard the oldest queued scan to make room (live sensors).
    DropOldest,
    /// Make the source wait (offline replay).
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    Pipelined,
    /// Detection and tracking back to back on one thread.
    Serial,
}

/// How the tracker waits for the next detector hand-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoffWait {
    /// Yield-poll the channel. Keeps hand-off latency well under a
    /// millisecond at the cost of a busy tracker thread.
    Poll,
    /// Sleep until woken. Frees the core; wake-up can take milliseconds.
    Park,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub scan_rate: f64,
    pub velocity_gate: f64,
    pub robot_speed_max: f64,
    pub queue_capacity: usize,
    pub overflow: OverflowPolicy,
    pub mode: ExecutionMode,
    pub handoff: HandoffWait,
    /// Release scans on the sensor clock instead of as fast as possible.
    pub paced: bool,
    /// Artificial per-frame stage delays in milliseconds, for benchmarking.
    pub detector_delay_ms: f64,
    pub tracker_delay_ms: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scan_rate: 20.0,
            velocity_gate: 0.05,
            robot_speed_max: 0.5,
            queue_capacity: 2,
            overflow: OverflowPolicy::DropOldest,
            mode: ExecutionMode::Pipelined,
            handoff: HandoffWait::Poll,
            paced: true,
            detector_delay_ms: 0.0,
            tracker_delay_ms: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scan_rate > 0.0) {
            return Err(Error::config("pipeline.scan_rate", "must be positive"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::config("pipeline.queue_capacity", "must be >= 1"));
        }
        if !(self.velocity_gate >= 0.0) {
            return Err(Error::config("pipeline.velocity_gate", "must be >= 0"));
        }
        if !(self.robot_speed_max >= 0.0) {
            return Err(Error::config("pipeline.robot_speed_max", "must be >= 0"));
        }
        if !(self.detector_delay_ms >= 0.0) || !(self.tracker_delay_ms >= 0.0) {
            return Err(Error::config(
                "pipeline.detector_delay_ms",
                "delays must be >= 0",
            ));
        }
        Ok(())
    }

    fn period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.scan_rate)
    }
}

/// Wall-clock cost of one frame, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub seq: u64,
    pub timestamp: f64,
    pub t_det: f64,
    pub t_track: f64,
    /// From detector start to tracker end, hand-off included.
    pub t_lat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorstAvg {
    pub worst: f64,
    pub avg: f64,
}

impl WorstAvg {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut worst, mut sum, mut n) = (0.0_f64, 0.0, 0usize);
        for v in values {
            worst = worst.max(v);
            sum += v;
            n += 1;
        }
        Self {
            worst,
            avg: if n == 0 { 0.0 } else { sum / n as f64 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub frames: usize,
    /// Nominal scan period.
    pub t_scan: f64,
    pub t_det: WorstAvg,
    pub t_track: WorstAvg,
    pub t_lat: WorstAvg,
}

/// Worst and mean per stage over processed frames.
pub fn collect_timings(frames: &[FrameTiming], scan_rate: f64) -> Result<StageTimings> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument(
            "no processed frames to aggregate".into(),
        ));
    }
    Ok(StageTimings {
        frames: frames.len(),
        t_scan: 1000.0 / scan_rate,
        t_det: WorstAvg::of(frames.iter().map(|f| f.t_det)),
        t_track: WorstAvg::of(frames.iter().map(|f| f.t_track)),
        t_lat: WorstAvg::of(frames.iter().map(|f| f.t_lat)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicObstacle {
    pub id: TrackId,
    pub position: PointXY,
    pub velocity: [f64; 2],
    pub timestamp: f64,
}

impl DynamicObstacle {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Tracks moving at `gate` m/s or faster.
pub fn export_dynamic_obstacles(tracks: &[TrackEstimate], gate: f64) -> Vec<DynamicObstacle> {
    tracks
        .iter()
        .filter(|t| t.speed() >= gate)
        .map(|t| DynamicObstacle {
            id: t.id,
            position: t.position,
            velocity: t.velocity,
            timestamp: t.timestamp,
        })
        .collect()
}

/// Constant-velocity extrapolation `horizon` seconds ahead.
pub fn forecast_position(ob: &DynamicObstacle, horizon: f64) -> Result<PointXY> {
    if !(horizon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be >= 0, got {horizon}"
        )));
    }
    Ok(PointXY::new(
        ob.position.x + ob.velocity[0] * horizon,
        ob.position.y + ob.velocity[1] * horizon,
        ob.position.frame,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosestApproach {
    pub t_star: f64,
    pub d_min: f64,
}

/// Time and distance of closest approach between the robot and an obstacle,
/// both moving at constant velocity, over `t >= 0`.
pub fn time_to_closest_approach(
    robot: &PointXY,
    robot_velocity: [f64; 2],
    ob: &DynamicObstacle,
) -> ClosestApproach {
    let dp = (ob.position.x - robot.x, ob.position.y - robot.y);
    let dv = (
        ob.velocity[0] - robot_velocity[0],
        ob.velocity[1] - robot_velocity[1],
    );
    let vv = dv.0 * dv.0 + dv.1 * dv.1;
    let t_star = if vv > 0.0 {
        (-(dp.0 * dv.0 + dp.1 * dv.1) / vv).max(0.0)
    } else {
        0.0
    };
    ClosestApproach {
        t_star,
        d_min: (dp.0 + dv.0 * t_star).hypot(dp.1 + dv.1 * t_star),
    }
}

/// Collision alarm: closest approach nearer than `safety_radius` within
/// `horizon` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionCheck {
    pub horizon: f64,
    pub safety_radius: f64,
}

impl Default for CollisionCheck {
    fn default() -> Self {
        Self {
            horizon: 2.0,
            safety_radius: 0.5,
        }
    }
}

impl CollisionCheck {
    pub fn alarm(&self, robot: &PointXY, robot_velocity: [f64; 2], ob: &DynamicObstacle) -> bool {
        let ca = time_to_closest_approach(robot, robot_velocity, ob);
        ca.t_star <= self.horizon && ca.d_min < self.safety_radius
    }

    /// The same check with the obstacle's velocity ignored.
    pub fn static_alarm(
        &self,
        robot: &PointXY,
        robot_velocity: [f64; 2],
        ob: &DynamicObstacle,
    ) -> bool {
        let still = DynamicObstacle {
            velocity: [0.0, 0.0],
            ..*ob
        };
        self.alarm(robot, robot_velocity, &still)
    }
}

/// Everything the tracker stage emits for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub seq: u64,
    pub timestamp: f64,
    pub odom_pose: Pose2D,
    pub detections: Vec<Detection>,
    pub tracks: Vec<TrackEstimate>,
    pub obstacles: Vec<DynamicObstacle>,
    pub timing: FrameTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: ExecutionMode,
    pub frames_in: u64,
    pub frames_processed: u64,
    pub dropped: u64,
    pub timings: Option<StageTimings>,
    /// Completed frames per second, first to last completion.
    pub throughput_hz: Option<f64>,
    #[serde(skip)]
    pub frames: Vec<FrameTiming>,
    pub error: Option<String>,
}

/// Bounded FIFO between the source and the detector.
struct InputQueue<T> {
    state: Mutex<QueueState<T>>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
    policy: OverflowPolicy,
}

struct QueueState<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: u64,
}

impl<T> InputQueue<T> {
    fn new(capacity: usize, policy: OverflowPolicy) -> Self {
        Self {
            state: Mutex::new(QueueState {
                items: VecDeque::with_capacity(capacity),
                closed: false,
                dropped: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
            capacity,
            policy,
        }
    }

    fn push(&self, item: T) {
        let mut st = self.state.lock().unwrap();
        if st.items.len() >= self.capacity {
            match self.policy {
                OverflowPolicy::DropOldest => {
                    st.items.pop_front();
                    st.dropped += 1;
                }
                OverflowPolicy::Block => {
                    while st.items.len() >= self.capacity && !st.closed {
                        st = self.not_full.wait(st).unwrap();
                    }
                }
            }
        }
        st.items.push_back(item);
        self.not_empty.notify_one();
    }

    fn pop(&self) -> Option<T> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(item) = st.items.pop_front() {
                self.not_full.notify_one();
                return Some(item);
            }
            if st.closed {
                return None;
            }
            st = self.not_empty.wait(st).unwrap();
        }
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    fn dropped(&self) -> u64 {
        self.state.lock().unwrap().dropped
    }
}

struct Queued {
    seq: u64,
    scan: LidarScan,
}

struct Detected {
    seq: u64,
    timestamp: f64,
    odom_pose: Pose2D,
    detections: Vec<Detection>,
    started: Instant,
    t_det: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn delay(ms: f64) {
    if ms > 0.0 {
        thread::sleep(Duration::from_secs_f64(ms / 1000.0));
    }
}

fn detect_stage(
    item: Queued,
    detector: &mut dyn Detector,
    det_cfg: &DetectorConfig,
    cfg: &PipelineConfig,
) -> Detected {
    let started = Instant::now();
    let raw = detector.detect(&item.scan, det_cfg);
    let detections = filter_by_confidence(&raw, det_cfg.confidence_threshold);
    delay(cfg.detector_delay_ms);
    Detected {
        seq: item.seq,
        timestamp: item.scan.timestamp,
        odom_pose: item.scan.odom_pose,
        detections,
        started,
        t_det: ms(started.elapsed()),
    }
}

fn track_stage(d: Detected, tracker: &mut Tracker, cfg: &PipelineConfig) -> Result<FrameOutput> {
    let t0 = Instant::now();
    let tracks = tracker.update(&d.detections, &d.odom_pose, d.timestamp)?;
    let obstacles = export_dynamic_obstacles(&tracks, cfg.velocity_gate);
    delay(cfg.tracker_delay_ms);
    let end = Instant::now();
    Ok(FrameOutput {
        seq: d.seq,
        timestamp: d.timestamp,
        odom_pose: d.odom_pose,
        detections: d.detections,
        tracks,
        obstacles,
        timing: FrameTiming {
            seq: d.seq,
            timestamp: d.timestamp,
            t_det: d.t_det,
            t_track: ms(end - t0),
            t_lat: ms(end - d.started),
        },
    })
}

fn receive<T>(rx: &Receiver<T>, wait: HandoffWait) -> Option<T> {
    match wait {
        HandoffWait::Park => rx.recv().ok(),
        HandoffWait::Poll => loop {
            match rx.try_recv() {
                Ok(v) => return Some(v),
                Err(TryRecvError::Empty) => thread::yield_now(),
                Err(TryRecvError::Disconnected) => return None,
            }
        },
    }
}

/// Feeds `source` into the queue, on the sensor clock when paced.
fn feed<I>(source: I, queue: &InputQueue<Queued>, cfg: &PipelineConfig) -> (u64, Option<String>)
where
    I: IntoIterator<Item = Result<LidarScan>>,
{
    let start = Instant::now();
    let period = cfg.period();
    let mut count = 0u64;
    let mut error = None;
    for item in source {
        if cfg.paced {
            let due = start + period.mul_f64(count as f64);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        match item {
            Ok(scan) => {
                queue.push(Queued { seq: count, scan });
                count += 1;
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    queue.close();
    (count, error)
}

/// Runs detection and tracking over `source`, handing every frame to `sink`
/// in scan order. A source or tracker error stops the run; frames already
/// accepted are drained first and the summary carries the error.
pub fn run_pipeline<I, S>(
    source: I,
    detector: Box<dyn Detector>,
    det_cfg: &DetectorConfig,
    mut tracker: Tracker,
    cfg: &PipelineConfig,
    mut sink: S,
) -> Result<RunSummary>
where
    I: IntoIterator<Item = Result<LidarScan>> + Send,
    S: FnMut(&FrameOutput),
{
    cfg.validate()?;
    det_cfg.validate()?;
    let queue = InputQueue::new(cfg.queue_capacity, cfg.overflow);
    let mut detector = detector;
    let mut frames = Vec::new();
    let mut completions = Vec::new();
    let mut error = None;

    let frames_in = thread::scope(|s| {
        let feeder = s.spawn(|| feed(source, &queue, cfg));
        match cfg.mode {
            ExecutionMode::Pipelined => {
                let (tx, rx) = bounded::<Detected>(1);
                let queue_ref = &queue;
                s.spawn(move || {
                    while let Some(item) = queue_ref.pop() {
                        let out = detect_stage(item, detector.as_mut(), det_cfg, cfg);
                        if tx.send(out).is_err() {
                            break;
                        }
                    }
                });
                while let Some(d) = receive(&rx, cfg.handoff) {
                    if error.is_some() {
                        continue;
                    }
                    match track_stage(d, &mut tracker, cfg) {
                        Ok(out) => {
                            completions.push(Instant::now());
                            frames.push(out.timing);
                            sink(&out);
                        }
                        Err(e) => {
                            error = Some(e.to_string());
                            queue.close();
                        }
                    }
                }
            }
            ExecutionMode::Serial => {
                while let Some(item) = queue.pop() {
                    let d = detect_stage(item, detector.as_mut(), det_cfg, cfg);
                    match track_stage(d, &mut tracker, cfg) {
                        Ok(out) => {
                            completions.push(Instant::now());
                            frames.push(out.timing);
                            sink(&out);
                        }
                        Err(e) => {
                            error = Some(e.to_string());
                            queue.close();
                            break;
                        }
                    }
                }
            }
        }
        let (count, source_error) = feeder.join().expect("source thread panicked");
        if error.is_none() {
            error = source_error;
        }
        count
    });

    let throughput_hz = match (completions.first(), completions.last()) {
        (Some(a), Some(b)) if completions.len() > 1 && b > a => {
            Some((completions.len() - 1) as f64 / (*b - *a).as_secs_f64())
        }
        _ => None,
    };
    Ok(RunSummary {
        mode: cfg.mode,
        frames_in,
        frames_processed: frames.len() as u64,
        dropped: queue.dropped(),
        timings: collect_timings(&frames, cfg.scan_rate).ok(),
        throughput_hz,
        frames,
        error,
    })
}
