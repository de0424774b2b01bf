//! Scenario simulator.
//!
//! Persons are circles walking inside a rectangular arena; the robot is a
//! unicycle carrying the scanner at its origin with the blind wedge facing
//! backwards. Scans are produced by ray casting against persons, clutter and
//! walls (nearest hit wins, so occlusion falls out naturally), with truncated
//! Gaussian range noise and independent per-beam dropout. Ground truth is
//! emitted on its own 100 Hz clock.
//!
//! All randomness is drawn from generators seeded by `ScenarioConfig::seed`;
//! motion and sensor noise use separate streams.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::overlay_toml;
use crate::error::{Error, Result};
use crate::evaluation::GroundTruthFrame;
use crate::geometry::{normalize_angle, LidarScan, PointXY, Pose2D, ScanParams, NO_RETURN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Stationary robot.
    Sr,
    /// Robot moves but keeps the persons in view.
    Mr1,
    /// Robot moves at random; persons leave and re-enter the view.
    Mr2,
    /// Scripted persons and a constant robot twist.
    Custom,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(Self::Sr),
            "mr1" => Ok(Self::Mr1),
            "mr2" => Ok(Self::Mr2),
            "custom" => Ok(Self::Custom),
            other => Err(Error::config(
                "scenario.kind",
                format!("unknown kind `{other}`"),
            )),
        }
    }
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Sr => "sr",
            Self::Mr1 => "mr1",
            Self::Mr2 => "mr2",
            Self::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Arena {
    pub fn centered(width: f64, height: f64) -> Self {
        Self {
            min: [-width / 2.0, -height / 2.0],
            max: [width / 2.0, height / 2.0],
        }
    }

    pub fn contains(&self, p: [f64; 2], margin: f64) -> bool {
        p[0] >= self.min[0] + margin
            && p[0] <= self.max[0] - margin
            && p[1] >= self.min[1] + margin
            && p[1] <= self.max[1] - margin
    }
}

impl Default for Arena {
    fn default() -> Self {
        Self::centered(4.0, 4.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum StaticShape {
    Circle { center: [f64; 2], radius: f64 },
    Segment { a: [f64; 2], b: [f64; 2] },
}

/// A person following a polyline at constant speed, starting at `start_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedAgent {
    pub waypoints: Vec<[f64; 2]>,
    pub speed: f64,
    #[serde(default)]
    pub start_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub arena: Arena,
    pub duration: f64,
    pub n_persons: usize,
    /// Walking speed range `[min, max]`.
    pub person_speed: [f64; 2],
    pub person_radius: f64,
    pub min_separation: f64,
    /// Persons are kept at least this far from the robot origin.
    pub robot_clearance: f64,
    pub robot_linear_max: f64,
    pub robot_angular_max: f64,
    pub robot_start: Pose2D,
    /// `None` places the default clutter from the seed.
    pub clutter: Option<Vec<StaticShape>>,
    pub occluder_walls: Vec<[[f64; 2]; 2]>,
    pub seed: u64,
    pub noise_std: f64,
    pub dropout_prob: f64,
    pub scan: ScanParams,
    pub scan_rate: f64,
    pub ground_truth_rate: f64,
    /// Persons used by `Custom` scenarios.
    pub scripted_agents: Vec<ScriptedAgent>,
    /// `(v, ω)` for `Custom` scenarios.
    pub robot_twist: (f64, f64),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Sr,
            arena: Arena::default(),
            duration: 120.0,
            n_persons: 3,
            person_speed: [0.4, 1.2],
            person_radius: 0.3,
            min_separation: 0.9,
            robot_clearance: 1.0,
            robot_linear_max: 0.5,
            robot_angular_max: 1.5,
            robot_start: Pose2D::new(-1.9, 0.0, 0.0, 0.0),
            clutter: None,
            occluder_walls: Vec::new(),
            seed: 0,
            noise_std: 0.01,
            dropout_prob: 0.005,
            scan: ScanParams::utm30lx(),
            scan_rate: 20.0,
            ground_truth_rate: 100.0,
            scripted_agents: Vec::new(),
            robot_twist: (0.0, 0.0),
        }
    }
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        let mut cfg = Self {
            kind,
            seed,
            ..Default::default()
        };
        if matches!(kind, ScenarioKind::Mr1 | ScenarioKind::Mr2) {
            cfg.robot_start = Pose2D::new(-1.2, 0.0, 0.0, 0.0);
        }
        cfg
    }

    /// Overlays a TOML scenario file on the defaults for its `kind` (or
    /// `default_kind`). A `seed` key in the file wins over `seed`.
    pub fn from_toml_str(text: &str, default_kind: ScenarioKind, seed: u64) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("scenario", e.message().to_string()))?;
        let kind = match table.get("kind") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::config("kind", "must be a string")),
            None => default_kind,
        };
        let cfg: Self = overlay_toml(&Self::new(kind, seed), text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::config("scenario.duration", "must be positive"));
        }
        if !(self.person_speed[0] >= 0.0 && self.person_speed[1] >= self.person_speed[0]) {
            return Err(Error::config(
                "scenario.person_speed",
                "need 0 <= min <= max",
            ));
        }
        if !(self.robot_linear_max >= 0.0) || !(self.robot_angular_max >= 0.0) {
            return Err(Error::config(
                "scenario.robot_linear_max",
                "speeds must be >= 0",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("scenario.dropout_prob", "must lie in [0, 1)"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("scenario.noise_std", "must be >= 0"));
        }
        if !(self.person_radius > 0.0) {
            return Err(Error::config("scenario.person_radius", "must be positive"));
        }
        if !(self.scan_rate > 0.0) || !(self.ground_truth_rate > 0.0) {
            return Err(Error::config(
                "scenario.scan_rate",
                "rates must be positive",
            ));
        }
        let ratio = self.ground_truth_rate / self.scan_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::config(
                "scenario.scan_rate",
                "ground-truth rate must be an integer multiple of the scan rate",
            ));
        }
        if !(self.arena.max[0] > self.arena.min[0] && self.arena.max[1] > self.arena.min[1]) {
            return Err(Error::config("scenario.arena", "must have positive extent"));
        }
        Ok(())
    }

    fn ticks_per_scan(&self) -> u64 {
        (self.ground_truth_rate / self.scan_rate).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentPolicy {
    /// Straight lines (bouncing off the arena) until half time, then a new
    /// random heading and speed at random intervals.
    StraightThenRandom {
        next_turn: f64,
    },
    Scripted {
        script: ScriptedAgent,
        leg: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub id: u64,
    pub radius: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub policy: AgentPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time: f64,
    pub tick: u64,
    pub robot: Pose2D,
    /// `(v, ω)`.
    pub twist: (f64, f64),
    pub agents: Vec<AgentModel>,
    pub statics: Vec<StaticShape>,
    next_robot_change: f64,
}

/// What a beam hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitLabel {
    Agent(u64),
    Static(usize),
}

/// A running simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ScenarioConfig,
    state: WorldState,
    motion_rng: ChaCha8Rng,
    sensor_rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Default)]
pub struct SimOutput {
    pub scans: Vec<LidarScan>,
    pub ground_truth: Vec<GroundTruthFrame>,
    /// Per scan, per beam: what the beam hit before noise and dropout.
    pub labels: Vec<Vec<Option<HitLabel>>>,
}

fn default_clutter(arena: &Arena, rng: &mut ChaCha8Rng) -> Vec<StaticShape> {
    // Chairs and tables just outside the walking area. Tables are kept clear
    // of chairs on the same side so neither chops the other into fragments.
    const CHAIR_OFFSET: f64 = 0.3;
    const TABLE_OFFSET: f64 = 0.45;
    const TABLE_LENGTH: f64 = 1.2;
    const CLEARANCE: f64 = 0.8;
    let [x0, y0] = arena.min;
    let [x1, y1] = arena.max;
    let side_len = |side: usize| {
        if side.is_multiple_of(2) {
            x1 - x0
        } else {
            y1 - y0
        }
    };
    let side_point = |side: usize, s: f64, offset: f64| -> [f64; 2] {
        match side {
            0 => [x0 + s, y1 + offset],
            1 => [x1 + offset, y0 + s],
            2 => [x0 + s, y0 - offset],
            _ => [x0 - offset, y0 + s],
        }
    };
    let mut shapes = Vec::new();
    let mut chairs = [0.0; 4];
    for (side, chair) in chairs.iter_mut().enumerate() {
        let len = side_len(side);
        *chair = rng.random_range(0.1 * len..0.9 * len);
        shapes.push(StaticShape::Circle {
            center: side_point(side, *chair, CHAIR_OFFSET),
            radius: 0.25,
        });
    }
    for side in [0, 2] {
        let len = side_len(side);
        let span = (len - TABLE_LENGTH).max(0.0);
        let mut start = rng.random_range(0.0..=span);
        for _ in 0..64 {
            let clear =
                chairs[side] < start - CLEARANCE || chairs[side] > start + TABLE_LENGTH + CLEARANCE;
            if clear {
                break;
            }
            start = rng.random_range(0.0..=span);
        }
        shapes.push(StaticShape::Segment {
            a: side_point(side, start, TABLE_OFFSET),
            b: side_point(side, start + TABLE_LENGTH.min(len), TABLE_OFFSET),
        });
    }
    shapes
}

/// Builds the initial world for `cfg`.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Simulation> {
    cfg.validate()?;
    let mut motion_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sensor_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);

    let mut statics = match &cfg.clutter {
        Some(c) => c.clone(),
        None => default_clutter(&cfg.arena, &mut motion_rng),
    };
    statics.extend(
        cfg.occluder_walls
            .iter()
            .map(|[a, b]| StaticShape::Segment { a: *a, b: *b }),
    );

    let robot = Pose2D {
        timestamp: 0.0,
        ..cfg.robot_start
    };
    let agents = match cfg.kind {
        ScenarioKind::Custom => cfg
            .scripted_agents
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let start = s.waypoints.first().copied().ok_or_else(|| {
                    Error::config("scenario.scripted_agents", "agent needs a waypoint")
                })?;
                Ok(AgentModel {
                    id: i as u64 + 1,
                    radius: cfg.person_radius,
                    position: start,
                    velocity: [0.0, 0.0],
                    policy: AgentPolicy::Scripted {
                        script: s.clone(),
                        leg: 0,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?,
        _ => place_agents(cfg, &robot, &mut motion_rng)?,
    };

    let mut sim = Simulation {
        cfg: cfg.clone(),
        state: WorldState {
            time: 0.0,
            tick: 0,
            robot,
            twist: (0.0, 0.0),
            agents,
            statics,
            next_robot_change: 0.0,
        },
        motion_rng,
        sensor_rng,
    };
    sim.update_robot_command();
    Ok(sim)
}

fn place_agents(
    cfg: &ScenarioConfig,
    robot: &Pose2D,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AgentModel>> {
    let margin = cfg.person_radius;
    let mut agents: Vec<AgentModel> = Vec::with_capacity(cfg.n_persons);
    let mut attempts = 0;
    while agents.len() < cfg.n_persons {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::config(
                "scenario.n_persons",
                "arena too crowded to place persons",
            ));
        }
        let p = [
            rng.random_range(cfg.arena.min[0] + margin..cfg.arena.max[0] - margin),
            rng.random_range(cfg.arena.min[1] + margin..cfg.arena.max[1] - margin),
        ];
        let clear_of_robot = (p[0] - robot.x).hypot(p[1] - robot.y) >= cfg.robot_clearance.max(1.0);
        let clear_of_others = agents.iter().all(|a| {
            (a.position[0] - p[0]).hypot(a.position[1] - p[1]) >= cfg.min_separation + 0.3
        });
        if !(clear_of_robot && clear_of_others) {
            continue;
        }
        let heading = rng.random_range(-PI..PI);
        let speed = rng.random_range(cfg.person_speed[0]..=cfg.person_speed[1]);
        agents.push(AgentModel {
            id: agents.len() as u64 + 1,
            radius: cfg.person_radius,
            position: p,
            velocity: [speed * heading.cos(), speed * heading.sin()],
            policy: AgentPolicy::StraightThenRandom {
                next_turn: cfg.duration / 2.0,
            },
        });
    }
    Ok(agents)
}

impl Simulation {
    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Physics step used by [`Simulation::run`].
    pub fn tick_dt(&self) -> f64 {
        1.0 / self.cfg.ground_truth_rate
    }

    fn update_robot_command(&mut self) {
        let (vmax, wmax) = (self.cfg.robot_linear_max, self.cfg.robot_angular_max);
        let state = &mut self.state;
        state.twist = match self.cfg.kind {
            ScenarioKind::Sr => (0.0, 0.0),
            ScenarioKind::Custom => (
                self.cfg.robot_twist.0.clamp(-vmax, vmax),
                self.cfg.robot_twist.1.clamp(-wmax, wmax),
            ),
            ScenarioKind::Mr1 => {
                // Face the persons' centroid and hold roughly 2 m from it.
                let n = state.agents.len().max(1) as f64;
                let (cx, cy) = state.agents.iter().fold((0.0, 0.0), |(x, y), a| {
                    (x + a.position[0] / n, y + a.position[1] / n)
                });
                let bearing = normalize_angle(
                    (cy - state.robot.y).atan2(cx - state.robot.x) - state.robot.theta,
                );
                let dist = (cx - state.robot.x).hypot(cy - state.robot.y);
                let w = (3.0 * bearing).clamp(-wmax, wmax);
                let v = if bearing.abs() < PI / 3.0 {
                    (0.8 * (dist - 2.0)).clamp(-vmax, vmax)
                } else {
                    0.0
                };
                (v, w)
            }
            ScenarioKind::Mr2 => {
                if state.time >= state.next_robot_change {
                    state.next_robot_change = state.time + self.motion_rng.random_range(1.0..3.0);
                    (
                        self.motion_rng.random_range(-vmax..=vmax),
                        self.motion_rng.random_range(-wmax..=wmax),
                    )
                } else {
                    state.twist
                }
            }
        };
    }

    /// Advances the world by `dt` seconds.
    pub fn step_world(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step must be positive, got {dt}"
            )));
        }
        self.update_robot_command();
        let cfg = &self.cfg;
        let state = &mut self.state;
        let t_next = state.time + dt;

        // Robot: unicycle, kept inside the arena (movable kinds only).
        let (v, w) = state.twist;
        let mid_heading = state.robot.theta + 0.5 * w * dt;
        let mut nx = state.robot.x + v * dt * mid_heading.cos();
        let mut ny = state.robot.y + v * dt * mid_heading.sin();
        if cfg.kind != ScenarioKind::Custom && !cfg.arena.contains([nx, ny], 0.1) {
            nx = state.robot.x;
            ny = state.robot.y;
            if cfg.kind == ScenarioKind::Mr2 {
                state.twist.0 = -state.twist.0;
            }
        }
        state.robot = Pose2D::new(nx, ny, state.robot.theta + w * dt, t_next);

        for agent in &mut state.agents {
            match &mut agent.policy {
                AgentPolicy::Scripted { script, leg } => {
                    advance_scripted(
                        &mut agent.position,
                        &mut agent.velocity,
                        script,
                        leg,
                        t_next,
                        dt,
                    );
                }
                AgentPolicy::StraightThenRandom { next_turn } => {
                    if t_next >= *next_turn {
                        let heading = self.motion_rng.random_range(-PI..PI);
                        let speed = self
                            .motion_rng
                            .random_range(cfg.person_speed[0]..=cfg.person_speed[1]);
                        agent.velocity = [speed * heading.cos(), speed * heading.sin()];
                        *next_turn = t_next + self.motion_rng.random_range(0.5..2.5);
                    }
                    agent.position[0] += agent.velocity[0] * dt;
                    agent.position[1] += agent.velocity[1] * dt;
                    reflect_in_arena(agent, &cfg.arena);
                }
            }
        }
        if cfg.kind != ScenarioKind::Custom {
            separate_agents(
                &mut state.agents,
                cfg.min_separation,
                cfg.robot_clearance,
                &state.robot,
                &cfg.arena,
            );
        }

        state.tick += 1;
        state.time = state.tick as f64 / cfg.ground_truth_rate;
        Ok(())
    }

    /// Ray-casts the current world.
    pub fn raycast_scan(&mut self) -> (LidarScan, Vec<Option<HitLabel>>) {
        let cfg = &self.cfg;
        let (ranges, labels) = cast_ranges(&self.state, &cfg.scan);
        let sigma = cfg.noise_std;
        let ranges = ranges
            .into_iter()
            .map(|r| {
                if r == NO_RETURN {
                    return NO_RETURN;
                }
                let noise = if sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut self.sensor_rng);
                    z.clamp(-3.0, 3.0) * sigma
                } else {
                    0.0
                };
                let dropped =
                    cfg.dropout_prob > 0.0 && self.sensor_rng.random::<f64>() < cfg.dropout_prob;
                if dropped {
                    NO_RETURN
                } else {
                    (r + noise).clamp(1e-3, cfg.scan.range_max)
                }
            })
            .collect();
        let scan = LidarScan {
            timestamp: self.state.time,
            ranges,
            angle_min: cfg.scan.angle_min,
            angle_increment: cfg.scan.angle_increment,
            range_max: cfg.scan.range_max,
            frame: crate::geometry::Frame::Sensor,
            odom_pose: Pose2D {
                timestamp: self.state.time,
                ..self.state.robot
            },
        };
        (scan, labels)
    }

    pub fn emit_ground_truth(&self) -> GroundTruthFrame {
        emit_ground_truth(&self.state)
    }

    /// Runs to `duration`, collecting scans at the scan rate and ground truth
    /// at the ground-truth rate. Both clocks start at t = 0.
    pub fn run(mut self) -> Result<SimOutput> {
        let ticks = (self.cfg.duration * self.cfg.ground_truth_rate).round() as u64;
        let per_scan = self.cfg.ticks_per_scan();
        let dt = self.tick_dt();
        let mut out = SimOutput::default();
        loop {
            out.ground_truth.push(self.emit_ground_truth());
            if self.state.tick.is_multiple_of(per_scan) {
                let (scan, labels) = self.raycast_scan();
                out.scans.push(scan);
                out.labels.push(labels);
            }
            if self.state.tick >= ticks {
                break;
            }
            self.step_world(dt)?;
        }
        Ok(out)
    }
}

fn advance_scripted(
    position: &mut [f64; 2],
    velocity: &mut [f64; 2],
    script: &ScriptedAgent,
    leg: &mut usize,
    t_next: f64,
    dt: f64,
) {
    if t_next <= script.start_time {
        *velocity = [0.0, 0.0];
        return;
    }
    let mut budget = script.speed * dt.min(t_next - script.start_time);
    let mut moved_dir = [0.0, 0.0];
    while budget > 0.0 && *leg + 1 < script.waypoints.len() {
        let target = script.waypoints[*leg + 1];
        let dx = target[0] - position[0];
        let dy = target[1] - position[1];
        let dist = dx.hypot(dy);
        if dist <= budget {
            *position = target;
            budget -= dist;
            *leg += 1;
        } else {
            position[0] += dx / dist * budget;
            position[1] += dy / dist * budget;
            budget = 0.0;
        }
        if dist > 0.0 {
            moved_dir = [dx / dist, dy / dist];
        }
    }
    *velocity = if *leg + 1 < script.waypoints.len() {
        [moved_dir[0] * script.speed, moved_dir[1] * script.speed]
    } else {
        [0.0, 0.0]
    };
}

fn reflect_in_arena(agent: &mut AgentModel, arena: &Arena) {
    for axis in 0..2 {
        let lo = arena.min[axis] + agent.radius;
        let hi = arena.max[axis] - agent.radius;
        if agent.position[axis] < lo {
            agent.position[axis] = 2.0 * lo - agent.position[axis];
            agent.velocity[axis] = agent.velocity[axis].abs();
        } else if agent.position[axis] > hi {
            agent.position[axis] = 2.0 * hi - agent.position[axis];
            agent.velocity[axis] = -agent.velocity[axis].abs();
        }
        agent.position[axis] = agent.position[axis].clamp(lo, hi);
    }
}

/// Pushes overlapping pairs apart to `min_sep` and swaps their approaching
/// velocity components, as in an elastic collision. Persons are also kept
/// clear of the robot body.
fn separate_agents(
    agents: &mut [AgentModel],
    min_sep: f64,
    clearance: f64,
    robot: &Pose2D,
    arena: &Arena,
) {
    for _ in 0..4 {
        let mut moved = false;
        for i in 0..agents.len() {
            for j in i + 1..agents.len() {
                let (left, right) = agents.split_at_mut(j);
                let a = &mut left[i];
                let b = &mut right[0];
                let dx = b.position[0] - a.position[0];
                let dy = b.position[1] - a.position[1];
                let d = dx.hypot(dy);
                if d >= min_sep {
                    continue;
                }
                moved = true;
                let (nx, ny) = if d > 1e-9 {
                    (dx / d, dy / d)
                } else {
                    (1.0, 0.0)
                };
                let push = (min_sep - d) / 2.0 + 1e-6;
                a.position[0] -= nx * push;
                a.position[1] -= ny * push;
                b.position[0] += nx * push;
                b.position[1] += ny * push;
                let va = a.velocity[0] * nx + a.velocity[1] * ny;
                let vb = b.velocity[0] * nx + b.velocity[1] * ny;
                if va > vb {
                    a.velocity[0] += (vb - va) * nx;
                    a.velocity[1] += (vb - va) * ny;
                    b.velocity[0] += (va - vb) * nx;
                    b.velocity[1] += (va - vb) * ny;
                }
            }
        }
        for a in agents.iter_mut() {
            let dx = a.position[0] - robot.x;
            let dy = a.position[1] - robot.y;
            let d = dx.hypot(dy);
            if d < clearance {
                moved = true;
                let (nx, ny) = if d > 1e-9 {
                    (dx / d, dy / d)
                } else {
                    (1.0, 0.0)
                };
                a.position[0] = robot.x + nx * clearance;
                a.position[1] = robot.y + ny * clearance;
                let vn = a.velocity[0] * nx + a.velocity[1] * ny;
                if vn < 0.0 {
                    a.velocity[0] -= 2.0 * vn * nx;
                    a.velocity[1] -= 2.0 * vn * ny;
                }
            }
            reflect_in_arena(a, arena);
        }
        if !moved {
            break;
        }
    }
}

/// Distance along the unit ray `(ox, oy) + t·(dx, dy)` to a circle, if hit
/// in front of the origin.
pub fn ray_circle(o: [f64; 2], d: [f64; 2], center: [f64; 2], radius: f64) -> Option<f64> {
    let fx = o[0] - center[0];
    let fy = o[1] - center[1];
    let b = fx * d[0] + fy * d[1];
    let c = fx * fx + fy * fy - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    let t1 = -b + sq;
    if t0 > 0.0 {
        Some(t0)
    } else if t1 > 0.0 {
        Some(t1)
    } else {
        None
    }
}

pub fn ray_segment(o: [f64; 2], d: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let ex = b[0] - a[0];
    let ey = b[1] - a[1];
    let denom = d[0] * ey - d[1] * ex;
    if denom.abs() < 1e-15 {
        return None;
    }
    let ax = a[0] - o[0];
    let ay = a[1] - o[1];
    let t = (ax * ey - ay * ex) / denom;
    let u = (ax * d[1] - ay * d[0]) / denom;
    (t > 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

fn cast_ranges(state: &WorldState, params: &ScanParams) -> (Vec<f64>, Vec<Option<HitLabel>>) {
    let o = [state.robot.x, state.robot.y];
    let mut ranges = Vec::with_capacity(params.beam_count);
    let mut labels = Vec::with_capacity(params.beam_count);
    for i in 0..params.beam_count {
        let angle = state.robot.theta + params.beam_angle(i);
        let d = [angle.cos(), angle.sin()];
        let mut best = f64::INFINITY;
        let mut label = None;
        for a in &state.agents {
            if let Some(t) = ray_circle(o, d, a.position, a.radius) {
                if t < best {
                    best = t;
                    label = Some(HitLabel::Agent(a.id));
                }
            }
        }
        for (k, s) in state.statics.iter().enumerate() {
            let hit = match *s {
                StaticShape::Circle { center, radius } => ray_circle(o, d, center, radius),
                StaticShape::Segment { a, b } => ray_segment(o, d, a, b),
            };
            if let Some(t) = hit {
                if t < best {
                    best = t;
                    label = Some(HitLabel::Static(k));
                }
            }
        }
        if best <= params.range_max {
            ranges.push(best);
            labels.push(label);
        } else {
            ranges.push(NO_RETURN);
            labels.push(None);
        }
    }
    (ranges, labels)
}

pub fn emit_ground_truth(state: &WorldState) -> GroundTruthFrame {
    GroundTruthFrame {
        timestamp: state.time,
        persons: state
            .agents
            .iter()
            .map(|a| (a.id, PointXY::odom(a.position[0], a.position[1])))
            .collect(),
        robot_pose: Pose2D {
            timestamp: state.time,
            ..state.robot
        },
    }
}

/// Convenience: generate and run in one call.
pub fn simulate(cfg: &ScenarioConfig) -> Result<SimOutput> {
    generate_scenario(cfg)?.run()
}

/// Number of beams in `labels` that hit agent `id`.
pub fn beams_on_agent(labels: &[Option<HitLabel>], id: u64) -> usize {
    labels
        .iter()
        .filter(|l| **l == Some(HitLabel::Agent(id)))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{cluster_detect, ClusterParams, DetectorConfig};
    use crate::geometry::polar_to_cartesian;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest, ProptestConfig};

    fn quiet(kind: ScenarioKind, seed: u64, duration: f64) -> ScenarioConfig {
        ScenarioConfig {
            duration,
            ..ScenarioConfig::new(kind, seed)
        }
    }

    fn lone_world(agents: Vec<AgentModel>, statics: Vec<StaticShape>) -> WorldState {
        WorldState {
            time: 0.0,
            tick: 0,
            robot: Pose2D::identity(),
            twist: (0.0, 0.0),
            agents,
            statics,
            next_robot_change: 0.0,
        }
    }

    fn agent(id: u64, p: [f64; 2], v: [f64; 2]) -> AgentModel {
        AgentModel {
            id,
            radius: 0.3,
            position: p,
            velocity: v,
            policy: AgentPolicy::StraightThenRandom {
                next_turn: f64::INFINITY,
            },
        }
    }

    fn lone_agent_scan(center: [f64; 2]) -> LidarScan {
        let world = lone_world(vec![agent(1, center, [0.0, 0.0])], vec![]);
        let params = ScanParams::utm30lx();
        let (ranges, _) = cast_ranges(&world, &params);
        LidarScan::new(0.0, &params, ranges, Pose2D::identity()).unwrap()
    }

    #[test]
    fn surrogate_detects_lone_agent() {
        let dets = cluster_detect(
            &lone_agent_scan([2.0, 0.0]),
            &DetectorConfig::default(),
            &ClusterParams::default(),
        );
        assert_eq!(dets.len(), 1);
        assert!(dets[0].position.distance(&PointXY::sensor(2.0, 0.0)) < 0.2);
        assert!(dets[0].confidence >= 0.85);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn detections_follow_translated_agent(
            range in 1.5..6.0f64, bearing in -2.0..2.0f64,
            dx in -0.5..0.5f64, dy in -0.5..0.5f64,
        ) {
            let a = [range * bearing.cos(), range * bearing.sin()];
            let b = [a[0] + dx, a[1] + dy];
            prop_assume!(b[0].hypot(b[1]) > 1.0 && b[1].atan2(b[0]).abs() < 2.2);
            let cfg = DetectorConfig::default();
            let params = ClusterParams::default();
            let da = cluster_detect(&lone_agent_scan(a), &cfg, &params);
            let db = cluster_detect(&lone_agent_scan(b), &cfg, &params);
            prop_assert_eq!(da.len(), 1);
            prop_assert_eq!(db.len(), 1);
            let moved = (db[0].position.x - da[0].position.x, db[0].position.y - da[0].position.y);
            prop_assert!((moved.0 - dx).hypot(moved.1 - dy) <= 0.05, "moved {:?} vs ({}, {})", moved, dx, dy);
        }
    }

    #[test]
    fn forward_beam_hits_circle_front() {
        let world = lone_world(vec![agent(1, [2.0, 0.0], [0.0, 0.0])], vec![]);
        let params = ScanParams::utm30lx();
        let (ranges, labels) = cast_ranges(&world, &params);
        // beam 540 points along +x
        assert_abs_diff_eq!(params.beam_angle(540), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ranges[540], 1.7, epsilon = 1e-12);
        assert_eq!(labels[540], Some(HitLabel::Agent(1)));
    }

    #[test]
    fn wall_occludes_agent() {
        let wall = StaticShape::Segment {
            a: [1.0, -1.0],
            b: [1.0, 1.0],
        };
        let world = lone_world(vec![agent(1, [3.0, 0.0], [0.0, 0.0])], vec![wall]);
        let (_, labels) = cast_ranges(&world, &ScanParams::utm30lx());
        assert_eq!(beams_on_agent(&labels, 1), 0);
    }

    #[test]
    fn raycast_matches_closed_form_oracle() {
        // Independent oracle: for each beam, solve the circle quadratic
        // directly in polar form r² - 2r(c·u) + |c|² - R² = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ScanParams::utm30lx();
        for _ in 0..100 {
            let centers: Vec<[f64; 2]> = (0..3)
                .map(|_| [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)])
                .filter(|c: &[f64; 2]| c[0].hypot(c[1]) > 0.5)
                .collect();
            let agents = centers
                .iter()
                .enumerate()
                .map(|(i, c)| agent(i as u64, *c, [0.0; 2]))
                .collect();
            let world = lone_world(agents, vec![]);
            let (ranges, _) = cast_ranges(&world, &params);
            for (i, r) in ranges.iter().enumerate() {
                let a = params.beam_angle(i);
                let u = [a.cos(), a.sin()];
                let oracle = centers
                    .iter()
                    .filter_map(|c| {
                        let cu = c[0] * u[0] + c[1] * u[1];
                        let disc = cu * cu - (c[0] * c[0] + c[1] * c[1] - 0.09);
                        (disc >= 0.0 && cu - disc.sqrt() > 0.0).then(|| cu - disc.sqrt())
                    })
                    .fold(NO_RETURN, f64::min);
                if oracle == NO_RETURN {
                    assert_eq!(*r, NO_RETURN);
                } else {
                    assert!((r - oracle).abs() < 1e-9, "beam {i}: {r} vs {oracle}");
                }
            }
        }
    }

    #[test]
    fn straight_motion_and_wall_reflection() {
        let cfg = ScenarioConfig {
            kind: ScenarioKind::Sr,
            n_persons: 0,
            clutter: Some(vec![]),
            ..Default::default()
        };
        let mut sim = generate_scenario(&cfg).unwrap();
        sim.state.agents = vec![agent(1, [0.0, 0.0], [1.0, 0.0])];
        sim.step_world(0.1).unwrap();
        assert_abs_diff_eq!(sim.state.agents[0].position[0], 0.1, epsilon = 1e-12);

        sim.state.agents = vec![agent(1, [1.69, 0.0], [1.0, 0.0])];
        sim.step_world(0.05).unwrap();
        assert!(sim.state.agents[0].velocity[0] < 0.0);
        assert!(sim.state.agents[0].position[0] <= 1.7);
    }

    #[test]
    fn colliding_agents_keep_their_distance() {
        let cfg = ScenarioConfig {
            n_persons: 0,
            clutter: Some(vec![]),
            ..Default::default()
        };
        let mut sim = generate_scenario(&cfg).unwrap();
        sim.state.agents = vec![
            agent(1, [-1.0, 0.5], [1.0, 0.0]),
            agent(2, [1.0, 0.5], [-1.0, 0.0]),
        ];
        for _ in 0..300 {
            sim.step_world(0.01).unwrap();
            let a = sim.state.agents[0].position;
            let b = sim.state.agents[1].position;
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) >= 0.45);
        }
    }

    #[test]
    fn sr_robot_never_moves() {
        let out = simulate(&quiet(ScenarioKind::Sr, 4, 5.0)).unwrap();
        let first = out.ground_truth[0].robot_pose;
        assert!(out.ground_truth.iter().all(|g| g.robot_pose.x == first.x
            && g.robot_pose.y == first.y
            && g.robot_pose.theta == first.theta));
    }

    #[test]
    fn mr1_twist_is_bounded() {
        let mut sim = generate_scenario(&quiet(ScenarioKind::Mr1, 9, 20.0)).unwrap();
        for _ in 0..2000 {
            sim.step_world(0.01).unwrap();
            let (v, w) = sim.state.twist;
            assert!(v.abs() <= 0.5 && w.abs() <= 1.5);
        }
    }

    #[test]
    fn mr2_twist_is_bounded_and_moves() {
        let mut sim = generate_scenario(&quiet(ScenarioKind::Mr2, 2, 20.0)).unwrap();
        let start = sim.state.robot;
        for _ in 0..2000 {
            sim.step_world(0.01).unwrap();
            let (v, w) = sim.state.twist;
            assert!(v.abs() <= 0.5 && w.abs() <= 1.5);
        }
        assert_ne!(sim.state.robot, start);
    }

    #[test]
    fn same_seed_same_streams() {
        let a = simulate(&quiet(ScenarioKind::Mr2, 17, 3.0)).unwrap();
        let b = simulate(&quiet(ScenarioKind::Mr2, 17, 3.0)).unwrap();
        assert_eq!(a.scans, b.scans);
        assert_eq!(a.ground_truth, b.ground_truth);
        let c = simulate(&quiet(ScenarioKind::Mr2, 18, 3.0)).unwrap();
        assert_ne!(a.scans, c.scans);
    }

    #[test]
    fn clocks_and_counts() {
        let out = simulate(&quiet(ScenarioKind::Sr, 1, 2.0)).unwrap();
        assert_eq!(out.ground_truth.len(), 201);
        assert_eq!(out.scans.len(), 41);
        for (k, g) in out.ground_truth.iter().enumerate() {
            assert_abs_diff_eq!(g.timestamp, k as f64 * 0.01, epsilon = 1e-12);
            assert_eq!(g.persons.len(), 3);
        }
        for s in &out.scans {
            assert_eq!(s.ranges.len(), 1080);
            s.validate().unwrap();
        }
    }

    #[test]
    fn scan_hits_lie_on_agent_surfaces() {
        let cfg = ScenarioConfig {
            noise_std: 0.0,
            dropout_prob: 0.0,
            ..quiet(ScenarioKind::Mr1, 5, 3.0)
        };
        let out = simulate(&cfg).unwrap();
        let per_scan = 5;
        for (k, scan) in out.scans.iter().enumerate() {
            let gt = &out.ground_truth[k * per_scan];
            assert_abs_diff_eq!(gt.timestamp, scan.timestamp, epsilon = 1e-12);
            for sp in polar_to_cartesian(scan) {
                if let Some(HitLabel::Agent(id)) = out.labels[k][sp.index] {
                    let world = crate::geometry::transform_to_frame(&sp.point, &scan.odom_pose);
                    let center = gt.persons.iter().find(|(p, _)| *p == id).unwrap().1;
                    assert!(world.distance(&center) <= 0.3 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn noise_stays_within_three_sigma() {
        let cfg = ScenarioConfig {
            noise_std: 0.05,
            dropout_prob: 0.0,
            ..quiet(ScenarioKind::Sr, 8, 1.0)
        };
        let mut noisy = generate_scenario(&cfg).unwrap();
        let exact = cast_ranges(&noisy.state, &cfg.scan).0;
        let (scan, _) = noisy.raycast_scan();
        for (r, e) in scan.ranges.iter().zip(exact) {
            if e != NO_RETURN {
                assert!(*r <= e + 3.0 * 0.05 + 1e-12);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!("xyz".parse::<ScenarioKind>().is_err());
        let bad = ScenarioConfig {
            dropout_prob: 1.0,
            ..Default::default()
        };
        assert!(generate_scenario(&bad).is_err());
        let bad = ScenarioConfig {
            duration: 0.0,
            ..Default::default()
        };
        assert!(generate_scenario(&bad).is_err());
    }

    #[test]
    fn scripted_agent_follows_waypoints() {
        let cfg = ScenarioConfig {
            kind: ScenarioKind::Custom,
            clutter: Some(vec![]),
            scripted_agents: vec![ScriptedAgent {
                waypoints: vec![[3.0, 1.0], [3.0, 0.0], [0.0, 0.0]],
                speed: 1.0,
                start_time: 0.5,
            }],
            duration: 3.0,
            ..Default::default()
        };
        let mut sim = generate_scenario(&cfg).unwrap();
        for _ in 0..50 {
            sim.step_world(0.01).unwrap();
        }
        assert_eq!(sim.state.agents[0].position, [3.0, 1.0]);
        for _ in 0..150 {
            sim.step_world(0.01).unwrap();
        }
        // 1.5 s of walking: 1 m down, 0.5 m along -x
        assert_abs_diff_eq!(sim.state.agents[0].position[0], 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sim.state.agents[0].position[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sim.state.agents[0].velocity[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn scenario_file_overlays_kind_defaults() {
        let text = "kind = \"custom\"\nduration = 4.0\nrobot_twist = [0.5, 0.0]\n\
                    clutter = [{ shape = \"segment\", a = [1.0, 0.5], b = [1.0, 2.0] }]\n";
        let cfg = ScenarioConfig::from_toml_str(text, ScenarioKind::Sr, 3).unwrap();
        assert_eq!(cfg.kind, ScenarioKind::Custom);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.duration, 4.0);
        assert_eq!(cfg.clutter.as_ref().map(Vec::len), Some(1));
        let err = ScenarioConfig::from_toml_str("durtion = 4.0", ScenarioKind::Sr, 0).unwrap_err();
        assert!(err.to_string().contains("durtion"), "{err}");
        let mr = ScenarioConfig::from_toml_str("kind = \"mr1\"", ScenarioKind::Sr, 0).unwrap();
        assert_eq!(mr, ScenarioConfig::new(ScenarioKind::Mr1, 0));
    }
}
