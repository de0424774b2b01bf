//! Scan geometry: range sweeps, planar poses and frame transforms.
//!
//! Every other module works in one of two frames. Detections come out of the
//! detector in the [`Frame::Sensor`] frame and are moved into the world-fixed
//! [`Frame::Odom`] frame before tracking, so that the robot's own motion does
//! not show up as target velocity.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel stored in [`LidarScan::ranges`] for beams with no return.
pub const NO_RETURN: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Sensor,
    Odom,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Sensor => f.write_str("sensor"),
            Frame::Odom => f.write_str("odom"),
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointXY {
    pub x: f64,
    pub y: f64,
    pub frame: Frame,
}

impl PointXY {
    pub const fn new(x: f64, y: f64, frame: Frame) -> Self {
        Self { x, y, frame }
    }

    pub const fn sensor(x: f64, y: f64) -> Self {
        Self::new(x, y, Frame::Sensor)
    }

    pub const fn odom(x: f64, y: f64) -> Self {
        Self::new(x, y, Frame::Odom)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn bearing(&self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Euclidean distance, ignoring frames.
    pub fn distance(&self, other: &PointXY) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Planar pose. Used both as a robot pose in the odometry frame and as the
/// rigid transform that maps points from a child frame into its parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    #[serde(default)]
    pub timestamp: f64,
}

impl Default for Pose2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64, timestamp: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
            timestamp,
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            timestamp: 0.0,
        }
    }

    /// Inverse rigid transform; the timestamp is carried over.
    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
            self.timestamp,
        )
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
            other.timestamp,
        )
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * x - s * y, self.y + s * x + c * y)
    }
}

/// Maps `p` through the rigid transform `pose_of_source_in_target`.
///
/// The output frame is [`Frame::Odom`] when the input is in the sensor frame
/// and is otherwise left untouched; callers that chain transforms between
/// other frames track the labels themselves.
pub fn transform_to_frame(p: &PointXY, pose_of_source_in_target: &Pose2D) -> PointXY {
    let (x, y) = pose_of_source_in_target.apply(p.x, p.y);
    let frame = match p.frame {
        Frame::Sensor => Frame::Odom,
        other => other,
    };
    PointXY { x, y, frame }
}

/// Inverse of [`transform_to_frame`]: odometry-frame point into the sensor frame.
pub fn transform_from_frame(p: &PointXY, pose_of_source_in_target: &Pose2D) -> PointXY {
    let (x, y) = pose_of_source_in_target.inverse().apply(p.x, p.y);
    let frame = match p.frame {
        Frame::Odom => Frame::Sensor,
        other => other,
    };
    PointXY { x, y, frame }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldOfView {
    pub angle_min: f64,
    pub angle_max: f64,
    pub range_max: f64,
}

impl FieldOfView {
    pub fn new(angle_min: f64, angle_max: f64, range_max: f64) -> Result<Self> {
        if !(angle_min < angle_max) || angle_max - angle_min > TAU {
            return Err(Error::InvalidArgument(format!(
                "field of view [{angle_min}, {angle_max}] must be non-empty and at most 2π wide"
            )));
        }
        if !(range_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "range_max must be positive, got {range_max}"
            )));
        }
        Ok(Self {
            angle_min,
            angle_max,
            range_max,
        })
    }

    /// 270° wedge centred on the forward axis, 30 m range.
    pub fn utm30lx() -> Self {
        ScanParams::utm30lx().field_of_view()
    }
}

/// Visibility test in the sensor frame. Both angular limits are inclusive.
pub fn in_fov(p: &PointXY, fov: &FieldOfView) -> bool {
    if p.norm() > fov.range_max {
        return false;
    }
    let bearing = p.bearing();
    // Bearing is reported in (-π, π]; also try the 2π-shifted copies so wedges
    // expressed outside that interval still work.
    [bearing, bearing - TAU, bearing + TAU]
        .iter()
        .any(|b| *b >= fov.angle_min && *b <= fov.angle_max)
}

/// Static description of a scanner's beam layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanParams {
    pub angle_min: f64,
    pub angle_increment: f64,
    pub beam_count: usize,
    pub range_max: f64,
}

impl ScanParams {
    /// Hokuyo UTM-30LX-EW at 0.25° over 270°: 1080 beams, first beam at -135°.
    pub fn utm30lx() -> Self {
        let fov = 270.0_f64.to_radians();
        let increment = 0.25_f64.to_radians();
        Self {
            angle_min: -fov / 2.0,
            angle_increment: increment,
            beam_count: (fov / increment).round() as usize,
            range_max: 30.0,
        }
    }

    pub fn beam_angle(&self, index: usize) -> f64 {
        self.angle_min + index as f64 * self.angle_increment
    }

    pub fn fov_span(&self) -> f64 {
        self.beam_count as f64 * self.angle_increment
    }

    /// Wedge spanned by the beam centres, inclusive of both end beams.
    pub fn field_of_view(&self) -> FieldOfView {
        FieldOfView {
            angle_min: self.angle_min,
            angle_max: self.angle_min + self.fov_span(),
            range_max: self.range_max,
        }
    }
}

impl Default for ScanParams {
    fn default() -> Self {
        Self::utm30lx()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub timestamp: f64,
    pub ranges: Vec<f64>,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    pub frame: Frame,
    /// Sensor pose in the odometry frame when the sweep was taken.
    pub odom_pose: Pose2D,
}

impl LidarScan {
    pub fn new(
        timestamp: f64,
        params: &ScanParams,
        ranges: Vec<f64>,
        odom_pose: Pose2D,
    ) -> Result<Self> {
        let scan = Self {
            timestamp,
            ranges,
            angle_min: params.angle_min,
            angle_increment: params.angle_increment,
            range_max: params.range_max,
            frame: Frame::Sensor,
            odom_pose,
        };
        scan.validate()?;
        Ok(scan)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.angle_increment > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "angle_increment must be positive, got {}",
                self.angle_increment
            )));
        }
        if !self.timestamp.is_finite() {
            return Err(Error::InvalidArgument(
                "scan timestamp must be finite".into(),
            ));
        }
        for (i, &r) in self.ranges.iter().enumerate() {
            let ok = r == NO_RETURN || (r > 0.0 && r <= self.range_max);
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "beam {i}: range {r} outside (0, {}]",
                    self.range_max
                )));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> ScanParams {
        ScanParams {
            angle_min: self.angle_min,
            angle_increment: self.angle_increment,
            beam_count: self.ranges.len(),
            range_max: self.range_max,
        }
    }

    pub fn beam_angle(&self, index: usize) -> f64 {
        self.angle_min + index as f64 * self.angle_increment
    }

    pub fn is_return(&self, index: usize) -> bool {
        self.ranges[index] != NO_RETURN
    }

    pub fn finite_count(&self) -> usize {
        self.ranges.iter().filter(|r| **r != NO_RETURN).count()
    }
}

/// A beam endpoint with the index of the beam that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub index: usize,
    pub point: PointXY,
}

/// Beam endpoints in the sensor frame; no-return beams are skipped.
pub fn polar_to_cartesian(scan: &LidarScan) -> Vec<ScanPoint> {
    scan.ranges
        .iter()
        .enumerate()
        .filter(|(_, r)| **r != NO_RETURN)
        .map(|(index, &r)| {
            let (s, c) = scan.beam_angle(index).sin_cos();
            ScanPoint {
                index,
                point: PointXY::new(r * c, r * s, scan.frame),
            }
        })
        .collect()
}

/// Pose at time `t` from a time-ordered trajectory. Position is linearly
/// interpolated; heading follows the shorter arc between the bracketing samples.
pub fn interpolate_pose(trajectory: &[Pose2D], t: f64) -> Result<Pose2D> {
    let (first, last) = match (trajectory.first(), trajectory.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            return Err(Error::InvalidArgument(
                "cannot interpolate an empty trajectory".into(),
            ))
        }
    };
    if !(t >= first.timestamp && t <= last.timestamp) {
        return Err(Error::OutOfRange {
            t,
            start: first.timestamp,
            end: last.timestamp,
        });
    }
    let upper = trajectory.partition_point(|p| p.timestamp < t);
    let hi = &trajectory[upper];
    if hi.timestamp == t || upper == 0 {
        return Ok(*hi);
    }
    let lo = &trajectory[upper - 1];
    let alpha = (t - lo.timestamp) / (hi.timestamp - lo.timestamp);
    let dtheta = normalize_angle(hi.theta - lo.theta);
    Ok(Pose2D::new(
        lo.x + alpha * (hi.x - lo.x),
        lo.y + alpha * (hi.y - lo.y),
        lo.theta + alpha * dtheta,
        t,
    ))
}
