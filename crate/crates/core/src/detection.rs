//! Person detection stage.
//!
//! The detector is pluggable through [`Detector`]. Two implementations ship
//! here: [`ClusterDetector`], a range-discontinuity blob detector that stands
//! in for a learned model, and [`ReplayDetector`], which hands back
//! detections recorded elsewhere so the tracker can be benchmarked against
//! an external detector.
//!
//! [`extract_cutouts`] produces the fixed-size, range-normalised windows a
//! learned 1D-convolutional detector consumes.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};

use crate::geometry::{LidarScan, PointXY, Pose2D, NO_RETURN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub position: PointXY,
    pub confidence: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cutout {
    pub center_index: usize,
    pub samples: Vec<f64>,
    pub center_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Beams between consecutive cutout centres.
    pub window_stride: usize,
    pub confidence_threshold: f64,
    /// Metric width of a cutout window.
    pub window_width: f64,
    pub cutout_samples: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_stride: 1,
            confidence_threshold: 0.85,
            window_width: 1.0,
            cutout_samples: 48,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_stride < 1 {
            return Err(Error::config("detector.window_stride", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::config(
                "detector.confidence_threshold",
                "must lie in [0, 1]",
            ));
        }
        if !(self.window_width > 0.0) {
            return Err(Error::config("detector.window_width", "must be positive"));
        }
        if self.cutout_samples < 2 {
            return Err(Error::config("detector.cutout_samples", "must be >= 2"));
        }
        Ok(())
    }
}

/// Angular half-width of a window of metric width `width` seen at `range`.
pub fn cutout_half_angle(width: f64, range: f64) -> f64 {
    (width / 2.0 / range).atan()
}

/// One cutout per `window_stride`-th beam with a return.
///
/// The window covers `±atan((window_width / 2) / r)` around the centre beam
/// and is linearly resampled to `cutout_samples` values, so the sample count
/// is independent of range and angular resolution. Beams without a return,
/// and positions past either end of the sweep, read as `range_max`.
pub fn extract_cutouts(scan: &LidarScan, cfg: &DetectorConfig) -> Vec<Cutout> {
    let n = scan.ranges.len();
    let inc = scan.angle_increment;
    let raw = |j: isize| -> f64 {
        if j < 0 || j as usize >= n {
            scan.range_max
        } else {
            let r = scan.ranges[j as usize];
            if r == NO_RETURN {
                scan.range_max
            } else {
                r
            }
        }
    };
    let stride = cfg.window_stride.max(1);
    let last = (cfg.cutout_samples - 1) as f64;

    (0..n)
        .step_by(stride)
        .filter(|&i| scan.ranges[i] != NO_RETURN)
        .map(|i| {
            let center_range = scan.ranges[i];
            let half = cutout_half_angle(cfg.window_width, center_range) / inc;
            let samples = (0..cfg.cutout_samples)
                .map(|k| {
                    let pos = i as f64 - half + 2.0 * half * k as f64 / last;
                    let lo = pos.floor();
                    let frac = pos - lo;
                    let lo = lo as isize;
                    if frac == 0.0 {
                        raw(lo)
                    } else {
                        raw(lo) * (1.0 - frac) + raw(lo + 1) * frac
                    }
                })
                .collect();
            Cutout {
                center_index: i,
                samples,
                center_range,
            }
        })
        .collect()
}

/// Keeps detections whose confidence is at least `threshold`, in order.
pub fn filter_by_confidence(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.confidence >= threshold)
        .copied()
        .collect()
}

/// A person detector. Implementations return sensor-frame detections with
/// confidences in `[0, 1]` and must honour `cfg.window_stride`.
pub trait Detector: Send {
    fn name(&self) -> &str;

    fn detect(&mut self, scan: &LidarScan, cfg: &DetectorConfig) -> Vec<Detection>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterParams {
    /// Adjacent-point gap that starts a new cluster.
    pub jump_threshold: f64,
    pub min_points: usize,
    pub max_cluster_span: f64,
    /// Distance the centroid is pushed away from the sensor to reach the
    /// body centre (the visible arc sits in front of it).
    pub radius_offset: f64,
    /// Width of the reference object used to normalise confidence.
    pub person_diameter: f64,
    /// Added to the range at the cluster's middle beams to estimate the
    /// range of the body centre.
    pub body_radius: f64,
    /// Hidden beams behind an occluder count when the occluder is at least
    /// this wide.
    pub min_occluder_width: f64,
    /// Behind narrower occluders they count only if the visible arc is at
    /// least this long and a fitted circle has a radius in `fit_radius`.
    pub fit_min_chord: f64,
    pub fit_radius: [f64; 2],
    /// Clusters with an arc of at least `fit_min_chord` whose fitted radius
    /// exceeds this are flat (wall or table edges) and rejected.
    pub max_fit_radius: f64,
    /// Detections closer than this are merged, keeping the most confident.
    pub merge_radius: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            jump_threshold: 0.2,
            min_points: 5,
            max_cluster_span: 0.8,
            // mean depth of a circular arc sampled uniformly in bearing
            radius_offset: 0.3 * FRAC_PI_4,
            person_diameter: 0.67,
            body_radius: 0.3,
            min_occluder_width: 0.8,
            fit_min_chord: 0.25,
            fit_radius: [0.27, 0.4],
            max_fit_radius: 0.6,
            merge_radius: 0.4,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.jump_threshold > 0.0) {
            return Err(Error::config("cluster.jump_threshold", "must be positive"));
        }
        if self.min_points < 1 {
            return Err(Error::config("cluster.min_points", "must be >= 1"));
        }
        if !(self.max_cluster_span > 0.0) {
            return Err(Error::config(
                "cluster.max_cluster_span",
                "must be positive",
            ));
        }
        if !(self.person_diameter > 0.0) {
            return Err(Error::config("cluster.person_diameter", "must be positive"));
        }
        if !(self.fit_radius[0] > 0.0 && self.fit_radius[1] >= self.fit_radius[0]) {
            return Err(Error::config("cluster.fit_radius", "need 0 < min <= max"));
        }
        if !(self.max_fit_radius > 0.0)
            || !(self.fit_min_chord >= 0.0)
            || !(self.min_occluder_width >= 0.0)
        {
            return Err(Error::config(
                "cluster.max_fit_radius",
                "shape limits must be positive",
            ));
        }
        if !(self.radius_offset >= 0.0) || !(self.merge_radius >= 0.0) || !(self.body_radius >= 0.0)
        {
            return Err(Error::config(
                "cluster.radius_offset",
                "offsets must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClusterDetector {
    pub params: ClusterParams,
}

impl ClusterDetector {
    pub fn new(params: ClusterParams) -> Self {
        Self { params }
    }
}

impl Detector for ClusterDetector {
    fn name(&self) -> &str {
        "cluster"
    }

    fn detect(&mut self, scan: &LidarScan, cfg: &DetectorConfig) -> Vec<Detection> {
        cluster_detect(scan, cfg, &self.params)
    }
}

struct Segment {
    /// Beam indices with a return, in scan order.
    beams: Vec<usize>,
}

fn beam_point(scan: &LidarScan, i: usize) -> (f64, f64) {
    let (s, c) = scan.beam_angle(i).sin_cos();
    (scan.ranges[i] * c, scan.ranges[i] * s)
}

fn segment_scan(scan: &LidarScan, jump_threshold: f64) -> Vec<Segment> {
    let mut segments: Vec<Segment> = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..scan.ranges.len() {
        if !scan.is_return(i) {
            continue;
        }
        let p = beam_point(scan, i);
        let split = match prev {
            Some(q) => (p.0 - q.0).hypot(p.1 - q.1) >= jump_threshold,
            None => true,
        };
        if split {
            segments.push(Segment { beams: vec![i] });
        } else if let Some(seg) = segments.last_mut() {
            seg.beams.push(i);
        }
        prev = Some(p);
    }
    segments
}

/// The object right beyond `edge` (walking by `step`) if it lies nearer to
/// the sensor than the cluster edge, i.e. beams that may hide part of the
/// cluster. Single-beam gaps are bridged. Returns its beam count and
/// metric extent.
fn occluded_run(scan: &LidarScan, edge: usize, step: isize, jump_threshold: f64) -> (usize, f64) {
    let edge_range = scan.ranges[edge];
    let mut j = edge as isize + step;
    let mut count = 0;
    let mut start: Option<(f64, f64)> = None;
    let mut prev: Option<(f64, f64)> = None;
    let mut gap = 0;
    while j >= 0 && (j as usize) < scan.ranges.len() {
        let r = scan.ranges[j as usize];
        // A single missing return inside the run is dropout, not its end.
        if r == NO_RETURN && gap == 0 && count > 0 {
            gap = 1;
            j += step;
            continue;
        }
        gap = 0;
        if r == NO_RETURN || r >= edge_range {
            break;
        }
        let p = beam_point(scan, j as usize);
        if prev.is_some_and(|q| (p.0 - q.0).hypot(p.1 - q.1) >= jump_threshold) {
            break;
        }
        start.get_or_insert(p);
        prev = Some(p);
        count += 1;
        j += step;
    }
    let extent = match (start, prev) {
        (Some(a), Some(b)) => (a.0 - b.0).hypot(a.1 - b.1),
        _ => 0.0,
    };
    (count, extent)
}

/// Jump-distance blob detector.
///
/// Returns are split into clusters wherever two consecutive returns are at
/// least `jump_threshold` apart. Clusters with at least `min_points` returns,
/// spatial extent no larger than `max_cluster_span`, a curved outline and at
/// least one cutout centre (a beam index divisible by `window_stride`)
/// produce a detection at the centroid pushed outward by `radius_offset`.
///
/// Confidence is the fraction of the beams a `person_diameter`-wide object
/// would subtend at the estimated body-centre range that actually hit the
/// cluster. Beams adjacent to the cluster that return nearer than its edge
/// are occluders, and the missing part of the object may hide behind them
/// instead of counting against the score. Narrow occluders only earn that
/// credit when the visible arc fits a body-sized circle, which keeps chairs
/// and table ends seen past a passing person from scoring as people.
pub fn cluster_detect(
    scan: &LidarScan,
    cfg: &DetectorConfig,
    params: &ClusterParams,
) -> Vec<Detection> {
    let stride = cfg.window_stride.max(1);
    let mut dets = Vec::new();

    for seg in segment_scan(scan, params.jump_threshold) {
        let hits = seg.beams.len();
        if hits < params.min_points {
            continue;
        }
        if !seg.beams.iter().any(|i| i % stride == 0) {
            continue;
        }
        let points: Vec<(f64, f64)> = seg.beams.iter().map(|&i| beam_point(scan, i)).collect();
        if spatial_extent(&points) > params.max_cluster_span || is_flat(&points, params) {
            continue;
        }

        let (sx, sy) = points
            .iter()
            .fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x, ay + y));
        let (cx, cy) = (sx / hits as f64, sy / hits as f64);
        let centroid_range = cx.hypot(cy);
        let scale = (centroid_range + params.radius_offset) / centroid_range;
        let center_range = middle_range(scan, &seg.beams) + params.body_radius;

        let first = seg.beams[0];
        let last = *seg.beams.last().unwrap();
        let expected = 2.0
            * (params.person_diameter / 2.0 / center_range)
                .min(1.0)
                .asin()
            / scan.angle_increment;
        let covered = (last - first + 1) as f64;
        let denominator = if covered >= expected {
            expected
        } else {
            let hidden = hidden_beams(scan, first, last, &points, params) as f64;
            covered + (expected - covered - hidden).max(0.0)
        };
        let confidence = (hits as f64 / denominator).clamp(0.0, 1.0);

        dets.push(Detection {
            position: PointXY::new(cx * scale, cy * scale, scan.frame),
            confidence,
            timestamp: scan.timestamp,
        });
    }
    merge_close(dets, params.merge_radius)
}

/// Beams beside the cluster behind which the rest of a person could hide.
/// Wide occluders always qualify; narrow ones (such as another person) only
/// when the visible arc is long and curved like a body.
fn hidden_beams(
    scan: &LidarScan,
    first: usize,
    last: usize,
    points: &[(f64, f64)],
    params: &ClusterParams,
) -> usize {
    let sides = [
        occluded_run(scan, first, -1, params.jump_threshold),
        occluded_run(scan, last, 1, params.jump_threshold),
    ];
    let mut body_like: Option<bool> = None;
    let mut hidden = 0;
    for (count, extent) in sides {
        if count == 0 {
            continue;
        }
        let credit = extent >= params.min_occluder_width
            || *body_like.get_or_insert_with(|| arc_is_body_like(points, params));
        if credit {
            hidden += count;
        }
    }
    hidden
}

fn is_flat(points: &[(f64, f64)], params: &ClusterParams) -> bool {
    let (a, b) = (points[0], points[points.len() - 1]);
    if (a.0 - b.0).hypot(a.1 - b.1) < params.fit_min_chord {
        return false;
    }
    fit_circle(points).is_none_or(|(_, r)| r > params.max_fit_radius)
}

fn arc_is_body_like(points: &[(f64, f64)], params: &ClusterParams) -> bool {
    let (a, b) = (points[0], points[points.len() - 1]);
    if (a.0 - b.0).hypot(a.1 - b.1) < params.fit_min_chord {
        return false;
    }
    fit_circle(points)
        .is_some_and(|(_, r)| (params.fit_radius[0]..=params.fit_radius[1]).contains(&r))
}

/// Least-squares circle through `points`: an algebraic fit refined by a few
/// Gauss-Newton steps on the geometric distance. Returns centre and radius.
pub fn fit_circle(points: &[(f64, f64)]) -> Option<((f64, f64), f64)> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for &(x, y) in points {
        let (u, v) = (x - mx, y - my);
        let row = Vector3::new(u, v, 1.0);
        ata += row * row.transpose();
        atb += row * -(u * u + v * v);
    }
    let sol = ata.lu().solve(&atb)?;
    let (mut a, mut b) = (-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = a * a + b * b - sol[2];
    if !(r2 > 0.0) {
        return None;
    }
    let mut r = r2.sqrt();
    for _ in 0..10 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for &(x, y) in points {
            let (u, v) = (x - mx, y - my);
            let d = (u - a).hypot(v - b);
            if d < 1e-12 {
                continue;
            }
            let j = Vector3::new(-(u - a) / d, -(v - b) / d, -1.0);
            let res = d - r;
            jtj += j * j.transpose();
            jtr += j * res;
        }
        let step = jtj.lu().solve(&(-jtr))?;
        a += step[0];
        b += step[1];
        r += step[2];
        if step.norm() < 1e-9 {
            break;
        }
    }
    (r.is_finite() && r > 0.0).then_some(((a + mx, b + my), r))
}

/// Median range of the (up to) three beams at the middle of the cluster.
fn middle_range(scan: &LidarScan, beams: &[usize]) -> f64 {
    let mid = beams.len() / 2;
    let lo = mid.saturating_sub(1);
    let hi = (mid + 2).min(beams.len());
    let mut r: Vec<f64> = beams[lo..hi].iter().map(|&i| scan.ranges[i]).collect();
    r.sort_by(f64::total_cmp);
    r[r.len() / 2]
}

fn spatial_extent(points: &[(f64, f64)]) -> f64 {
    let mut best = 0.0_f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a.0 - b.0).hypot(a.1 - b.1));
        }
    }
    best
}

/// Greedy suppression: the most confident detection claims everything
/// within `radius`. Output keeps scan order.
fn merge_close(dets: Vec<Detection>, radius: f64) -> Vec<Detection> {
    if radius <= 0.0 || dets.len() < 2 {
        return dets;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; dets.len()];
    let mut suppressed = vec![false; dets.len()];
    for &i in &order {
        if suppressed[i] {
            continue;
        }
        keep[i] = true;
        for j in 0..dets.len() {
            if j != i && dets[i].position.distance(&dets[j].position) < radius {
                suppressed[j] = true;
            }
        }
    }
    dets.into_iter()
        .zip(keep)
        .filter_map(|(d, k)| k.then_some(d))
        .collect()
}

/// Sensor-frame detections recorded for one scan, with the sensor pose.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionFrame {
    pub timestamp: f64,
    pub odom_pose: Pose2D,
    pub detections: Vec<Detection>,
}

/// Serves pre-recorded detections keyed by scan timestamp.
#[derive(Debug, Clone, Default)]
pub struct ReplayDetector {
    frames: Vec<DetectionFrame>,
    tolerance: f64,
}

impl ReplayDetector {
    pub fn new(mut frames: Vec<DetectionFrame>) -> Self {
        frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Self {
            frames,
            tolerance: 1e-9,
        }
    }

    fn lookup(&self, t: f64) -> Option<&DetectionFrame> {
        let idx = self
            .frames
            .partition_point(|f| f.timestamp < t - self.tolerance);
        self.frames
            .get(idx)
            .filter(|f| (f.timestamp - t).abs() <= self.tolerance)
    }
}

impl Detector for ReplayDetector {
    fn name(&self) -> &str {
        "replay"
    }

    fn detect(&mut self, scan: &LidarScan, _cfg: &DetectorConfig) -> Vec<Detection> {
        self.lookup(scan.timestamp)
            .map(|f| {
                f.detections
                    .iter()
                    .map(|d| Detection {
                        confidence: d.confidence.clamp(0.0, 1.0),
                        ..*d
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, Pose2D, ScanParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scan(ranges: Vec<f64>) -> LidarScan {
        let params = ScanParams {
            beam_count: ranges.len(),
            ..ScanParams::utm30lx()
        };
        LidarScan::new(0.0, &params, ranges, Pose2D::identity()).unwrap()
    }

    fn det(c: f64) -> Detection {
        Detection {
            position: PointXY::sensor(c, 0.0),
            confidence: c,
            timestamp: 0.0,
        }
    }

    #[test]
    fn stride_ten_gives_108_cutouts() {
        let cfg = DetectorConfig {
            window_stride: 10,
            ..Default::default()
        };
        assert_eq!(extract_cutouts(&scan(vec![4.0; 1080]), &cfg).len(), 108);
    }

    #[test]
    fn cutouts_have_fixed_length() {
        let cfg = DetectorConfig {
            window_stride: 7,
            ..Default::default()
        };
        let ranges: Vec<f64> = (0..1080).map(|i| 0.5 + (i % 97) as f64 * 0.2).collect();
        for c in extract_cutouts(&scan(ranges), &cfg) {
            assert_eq!(c.samples.len(), 48);
        }
    }

    #[test]
    fn cutout_span_at_five_metres() {
        // Closed form: 2·atan(0.5 / 5) of arc, at 0.25° per beam.
        let inc = 0.25_f64.to_radians();
        let span = 2.0 * cutout_half_angle(1.0, 5.0);
        assert_abs_diff_eq!(span.to_degrees(), 11.42, epsilon = 0.01);
        let beams = span / inc;
        assert!(beams > 45.0 && beams < 46.0);
        // Cross-check by counting beams whose angle falls in the window.
        let counted = (-100i32..=100)
            .filter(|k| (*k as f64 * inc).abs() <= span / 2.0)
            .count();
        assert!((45..=46).contains(&counted), "{counted}");
    }

    #[test]
    fn resampling_at_identical_knots_reproduces_raw_ranges() {
        // Choose the centre range so the window spans exactly 46 beam
        // intervals: 47 raw beams land exactly on 47 sample knots.
        let inc = 0.25_f64.to_radians();
        let r = 0.5 / (23.0 * inc).tan();
        let mut ranges = vec![NO_RETURN; 200];
        for (k, slot) in ranges.iter_mut().enumerate() {
            if (77..=123).contains(&k) {
                *slot = if k == 100 { r } else { 1.0 + k as f64 * 0.01 };
            }
        }
        let cfg = DetectorConfig {
            window_stride: 1,
            cutout_samples: 47,
            ..Default::default()
        };
        let cut = extract_cutouts(&scan(ranges.clone()), &cfg)
            .into_iter()
            .find(|c| c.center_index == 100)
            .unwrap();
        for (k, s) in cut.samples.iter().enumerate() {
            assert_abs_diff_eq!(*s, ranges[77 + k], epsilon = 1e-9);
        }
    }

    #[test]
    fn cutout_imputes_range_max_for_no_returns() {
        let mut ranges = vec![NO_RETURN; 41];
        ranges[20] = 2.0;
        let cfg = DetectorConfig::default();
        let cuts = extract_cutouts(&scan(ranges), &cfg);
        assert_eq!(cuts.len(), 1);
        assert_eq!(cuts[0].samples[0], 30.0);
        assert_eq!(cuts[0].samples[47], 30.0);
    }

    #[test]
    fn confidence_filter_examples() {
        let dets = vec![det(0.9), det(0.7), det(0.85)];
        let kept = filter_by_confidence(&dets, 0.85);
        assert_eq!(
            kept.iter().map(|d| d.confidence).collect::<Vec<_>>(),
            vec![0.9, 0.85]
        );
        assert_eq!(filter_by_confidence(&dets, 0.0), dets);
        assert!(filter_by_confidence(&[], 0.5).is_empty());
    }

    #[test]
    fn empty_scan_yields_nothing() {
        let s = scan(vec![NO_RETURN; 1080]);
        assert!(ClusterDetector::default()
            .detect(&s, &DetectorConfig::default())
            .is_empty());
        assert!(extract_cutouts(&s, &DetectorConfig::default()).is_empty());
    }

    fn blob_scan(groups: &[(usize, usize, f64)]) -> LidarScan {
        let mut ranges = vec![NO_RETURN; 1080];
        for &(start, len, r) in groups {
            for slot in &mut ranges[start..start + len] {
                *slot = r;
            }
        }
        scan(ranges)
    }

    #[test]
    fn two_groups_two_detections_at_centroids() {
        let s = blob_scan(&[(300, 20, 2.0), (700, 20, 3.0)]);
        let params = ClusterParams {
            radius_offset: 0.0,
            ..Default::default()
        };
        let dets = cluster_detect(&s, &DetectorConfig::default(), &params);
        assert_eq!(dets.len(), 2);
        for (det, (start, r)) in dets.iter().zip([(300usize, 2.0), (700, 3.0)]) {
            // Brute-force centroid of the group's endpoints.
            let (mut x, mut y) = (0.0, 0.0);
            for i in start..start + 20 {
                let a = s.beam_angle(i);
                x += r * a.cos();
                y += r * a.sin();
            }
            let oracle = PointXY::sensor(x / 20.0, y / 20.0);
            assert!(det.position.distance(&oracle) < 0.05);
        }
    }

    #[test]
    fn speck_below_min_points_is_dropped() {
        let s = blob_scan(&[(500, 2, 2.0)]);
        assert!(
            cluster_detect(&s, &DetectorConfig::default(), &ClusterParams::default()).is_empty()
        );
    }

    #[test]
    fn long_wall_is_rejected_by_span() {
        // A wall at x = 2 seen from y = -1.25 to y = 1.25.
        let params = ScanParams::utm30lx();
        let ranges: Vec<f64> = (0..1080)
            .map(|i| {
                let a = params.beam_angle(i);
                let r = 2.0 / a.cos();
                if a.cos() > 0.0 && (r * a.sin()).abs() <= 1.25 {
                    r
                } else {
                    NO_RETURN
                }
            })
            .collect();
        let dets = cluster_detect(
            &scan(ranges),
            &DetectorConfig::default(),
            &ClusterParams::default(),
        );
        assert!(dets.is_empty());
    }

    #[test]
    fn stride_skips_narrow_clusters_without_a_centre() {
        let s = blob_scan(&[(301, 6, 2.0)]);
        let strided = DetectorConfig {
            window_stride: 10,
            ..Default::default()
        };
        assert!(cluster_detect(&s, &strided, &ClusterParams::default()).is_empty());
        assert_eq!(
            cluster_detect(&s, &DetectorConfig::default(), &ClusterParams::default()).len(),
            1
        );
    }

    #[test]
    fn wide_occluder_beside_cluster_restores_confidence() {
        let lone = blob_scan(&[(500, 12, 3.0)]);
        // 150 beams at 1.5 m is a wall about 1 m wide
        let walled = blob_scan(&[(350, 150, 1.5), (500, 12, 3.0)]);
        let narrow = blob_scan(&[(480, 20, 1.5), (500, 12, 3.0)]);
        let cfg = DetectorConfig::default();
        let p = ClusterParams::default();
        let far = |scan: &LidarScan| {
            cluster_detect(scan, &cfg, &p)
                .into_iter()
                .find(|d| d.position.norm() > 2.5)
                .unwrap()
                .confidence
        };
        let c_lone = far(&lone);
        assert!(c_lone < 0.5, "{c_lone}");
        assert!(far(&walled) > 0.99);
        // a person-sized occluder and a short arc earn nothing
        assert_eq!(far(&narrow), c_lone);
    }

    #[test]
    fn flat_fragment_is_rejected() {
        // straight 0.5 m segment 2 m ahead, perpendicular to the +x axis
        let params = ScanParams::utm30lx();
        let ranges = (0..params.beam_count)
            .map(|i| {
                let a = params.beam_angle(i);
                let r = 2.0 / a.cos();
                if a.cos() > 0.0 && (r * a.sin()).abs() <= 0.25 {
                    r
                } else {
                    NO_RETURN
                }
            })
            .collect();
        let scan = LidarScan::new(0.0, &params, ranges, Pose2D::identity()).unwrap();
        assert!(
            cluster_detect(&scan, &DetectorConfig::default(), &ClusterParams::default()).is_empty()
        );
    }

    #[test]
    fn circle_fit_recovers_arc() {
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|k| {
                let a = 2.0 + k as f64 * 0.05;
                (1.0 + 0.3 * a.cos(), -2.0 + 0.3 * a.sin())
            })
            .collect();
        let ((cx, cy), r) = fit_circle(&pts).unwrap();
        assert_abs_diff_eq!(cx, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cy, -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r, 0.3, epsilon = 1e-9);
        assert!(fit_circle(&pts[..2]).is_none());
    }

    #[test]
    fn merge_keeps_most_confident() {
        let a = Detection {
            position: PointXY::sensor(1.0, 0.0),
            confidence: 0.6,
            timestamp: 0.0,
        };
        let b = Detection {
            position: PointXY::sensor(1.2, 0.0),
            confidence: 0.9,
            timestamp: 0.0,
        };
        let out = merge_close(vec![a, b], 0.4);
        assert_eq!(out, vec![b]);
    }

    #[test]
    fn replay_returns_recorded_frame() {
        let frame = DetectionFrame {
            timestamp: 0.05,
            odom_pose: Pose2D::identity(),
            detections: vec![det(0.9)],
        };
        let mut replay = ReplayDetector::new(vec![frame.clone()]);
        let mut s = scan(vec![1.0; 10]);
        s.timestamp = 0.05;
        assert_eq!(
            replay.detect(&s, &DetectorConfig::default()),
            frame.detections
        );
        s.timestamp = 0.1;
        assert!(replay.detect(&s, &DetectorConfig::default()).is_empty());
        assert_eq!(replay.name(), "replay");
    }

    #[test]
    fn config_validation_names_field() {
        let bad = DetectorConfig {
            confidence_threshold: 1.5,
            ..Default::default()
        };
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "detector.confidence_threshold"),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn cutout_count_matches_ceiling(stride in 1usize..40, n in 1usize..400) {
            let cfg = DetectorConfig { window_stride: stride, ..Default::default() };
            let cuts = extract_cutouts(&scan(vec![2.0; n]), &cfg);
            prop_assert_eq!(cuts.len(), n.div_ceil(stride));
            prop_assert!(cuts.iter().all(|c| c.samples.len() == cfg.cutout_samples));
        }

        #[test]
        fn filter_is_subsequence(confs in proptest::collection::vec(0.0..=1.0f64, 0..30), t in 0.0..=1.0f64) {
            let dets: Vec<_> = confs.iter().map(|&c| det(c)).collect();
            let kept = filter_by_confidence(&dets, t);
            let mut it = dets.iter();
            for k in &kept {
                prop_assert!(k.confidence >= t);
                prop_assert!(it.any(|d| d == k));
            }
            prop_assert_eq!(kept.len(), dets.iter().filter(|d| d.confidence >= t).count());
        }

        #[test]
        fn cluster_confidences_in_unit_interval(
            ranges in proptest::collection::vec(prop_oneof![Just(NO_RETURN), 0.2..8.0f64], 1080)
        ) {
            let s = scan(ranges);
            for d in cluster_detect(&s, &DetectorConfig::default(), &ClusterParams::default()) {
                prop_assert!((0.0..=1.0).contains(&d.confidence));
                prop_assert_eq!(d.position.frame, Frame::Sensor);
            }
        }
    }
}
