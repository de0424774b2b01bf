//! CLEAR MOT evaluation.
//!
//! Ground truth and hypotheses are compared frame by frame in the odometry
//! frame, after both have been restricted to what the scanner could see.
//! Correspondences persist across frames while they stay within the match
//! threshold; a person whose correspondent changes while continuously in view
//! scores an identity switch.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    in_fov, interpolate_pose, transform_from_frame, FieldOfView, PointXY, Pose2D,
};
use crate::tracking::{hungarian, TrackId};

pub type PersonId = u64;

/// Default ground-truth to estimate matching distance.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub timestamp: f64,
    pub persons: Vec<(PersonId, PointXY)>,
    pub robot_pose: Pose2D,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HypothesisFrame {
    pub timestamp: f64,
    pub tracks: Vec<(TrackId, PointXY)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotFrameCounts {
    pub g: usize,
    pub id_switches: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub matches: usize,
    pub distance_sum: f64,
}

/// Sums over a sequence of frames.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotTotals {
    pub g: usize,
    pub id_switches: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub matches: usize,
    pub distance_sum: f64,
}

impl MotTotals {
    pub fn add(&mut self, f: &MotFrameCounts) {
        self.g += f.g;
        self.id_switches += f.id_switches;
        self.misses += f.misses;
        self.false_positives += f.false_positives;
        self.matches += f.matches;
        self.distance_sum += f.distance_sum;
    }

    /// Matches that did not switch identity.
    pub fn valid(&self) -> usize {
        self.matches - self.id_switches
    }
}

/// `1 - (ΣID + ΣMiss + ΣFP) / Σg`. Not floored at zero.
pub fn mota(totals: &MotTotals) -> Result<f64> {
    if totals.g == 0 {
        return Err(Error::UndefinedScore(
            "MOTA needs at least one ground-truth object",
        ));
    }
    let errors = totals.id_switches + totals.misses + totals.false_positives;
    Ok(1.0 - errors as f64 / totals.g as f64)
}

/// Mean distance over matched pairs.
pub fn motp(totals: &MotTotals) -> Result<f64> {
    if totals.matches == 0 {
        return Err(Error::UndefinedScore("MOTP needs at least one match"));
    }
    Ok(totals.distance_sum / totals.matches as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    #[serde(skip)]
    pub frames: Vec<MotFrameCounts>,
    pub totals: MotTotals,
    pub valid: usize,
    pub mota: Option<f64>,
    pub motp: Option<f64>,
}

impl MotReport {
    pub fn from_frames(frames: Vec<MotFrameCounts>) -> Self {
        let mut totals = MotTotals::default();
        for f in &frames {
            totals.add(f);
        }
        Self {
            valid: totals.valid(),
            mota: mota(&totals).ok(),
            motp: motp(&totals).ok(),
            frames,
            totals,
        }
    }
}

/// Drops persons and tracks outside the scanner's view from `robot_pose`.
pub fn filter_by_fov_frame(
    gt: &GroundTruthFrame,
    hyp: &HypothesisFrame,
    fov: &FieldOfView,
) -> (GroundTruthFrame, HypothesisFrame) {
    let visible = |p: &PointXY| in_fov(&transform_from_frame(p, &gt.robot_pose), fov);
    let persons = gt
        .persons
        .iter()
        .filter(|(_, p)| visible(p))
        .copied()
        .collect();
    let tracks = hyp
        .tracks
        .iter()
        .filter(|(_, p)| visible(p))
        .copied()
        .collect();
    (
        GroundTruthFrame {
            persons,
            ..gt.clone()
        },
        HypothesisFrame {
            tracks,
            timestamp: hyp.timestamp,
        },
    )
}

/// Person → track correspondences carried between frames.
pub type Correspondence = BTreeMap<PersonId, TrackId>;

/// Matches one frame under the CLEAR MOT rules.
///
/// Prior pairs still within `threshold` are kept first. The rest are paired
/// by a minimum-distance assignment that maximises the number of pairs within
/// `threshold`. Persons and tracks are processed sorted by id so the result
/// does not depend on input order. Persons absent from `gt` lose their
/// stored correspondence; persons present but unmatched keep it.
pub fn match_frame(
    gt: &GroundTruthFrame,
    hyp: &HypothesisFrame,
    threshold: f64,
    prev: &Correspondence,
) -> (MotFrameCounts, Correspondence) {
    let mut persons = gt.persons.clone();
    persons.sort_by_key(|(id, _)| *id);
    let mut tracks = hyp.tracks.clone();
    tracks.sort_by_key(|(id, _)| *id);

    let mut person_used = vec![false; persons.len()];
    let mut track_used = vec![false; tracks.len()];
    let mut counts = MotFrameCounts {
        g: persons.len(),
        ..Default::default()
    };
    let mut next = Correspondence::new();

    for (pi, (pid, ppos)) in persons.iter().enumerate() {
        let Some(&tid) = prev.get(pid) else { continue };
        let Some(ti) = tracks.iter().position(|(id, _)| *id == tid) else {
            continue;
        };
        if track_used[ti] {
            continue;
        }
        let d = ppos.distance(&tracks[ti].1);
        if d <= threshold {
            person_used[pi] = true;
            track_used[ti] = true;
            counts.matches += 1;
            counts.distance_sum += d;
            next.insert(*pid, tid);
        }
    }

    let free_p: Vec<usize> = (0..persons.len()).filter(|&i| !person_used[i]).collect();
    let free_t: Vec<usize> = (0..tracks.len()).filter(|&j| !track_used[j]).collect();
    if !free_p.is_empty() && !free_t.is_empty() {
        // Out-of-threshold pairs cost more than any set of admissible pairs,
        // so the solver first maximises the number of admissible matches.
        let forbidden = threshold * (free_p.len() + free_t.len() + 1) as f64 + 1.0;
        let cost = DMatrix::from_fn(free_p.len(), free_t.len(), |i, j| {
            let d = persons[free_p[i]].1.distance(&tracks[free_t[j]].1);
            if d <= threshold {
                d
            } else {
                forbidden
            }
        });
        for (i, j) in hungarian(&cost).into_iter().enumerate() {
            let Some(j) = j else { continue };
            if cost[(i, j)] > threshold {
                continue;
            }
            let (pid, _) = persons[free_p[i]];
            let (tid, _) = tracks[free_t[j]];
            person_used[free_p[i]] = true;
            track_used[free_t[j]] = true;
            counts.matches += 1;
            counts.distance_sum += cost[(i, j)];
            if prev.get(&pid).is_some_and(|&old| old != tid) {
                counts.id_switches += 1;
            }
            next.insert(pid, tid);
        }
    }

    for (pi, (pid, _)) in persons.iter().enumerate() {
        if !person_used[pi] {
            if let Some(&old) = prev.get(pid) {
                next.insert(*pid, old);
            }
        }
    }

    counts.misses = counts.g - counts.matches;
    counts.false_positives = tracks.len() - counts.matches;
    (counts, next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub fov: FieldOfView,
    pub threshold: f64,
    /// Hypothesis frames this far outside the ground-truth span are clamped
    /// to its ends; further out they are skipped.
    pub time_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fov: FieldOfView::utm30lx(),
            threshold: DEFAULT_MATCH_THRESHOLD,
            time_tolerance: 1e-6,
        }
    }
}

/// Ground truth at time `t`, linearly interpolated between the bracketing
/// frames. Persons must appear in both bracketing frames to be reported.
pub fn interpolate_ground_truth(
    gt: &[GroundTruthFrame],
    robot: &[Pose2D],
    t: f64,
) -> Result<GroundTruthFrame> {
    let robot_pose = interpolate_pose(robot, t)?;
    let upper = gt.partition_point(|f| f.timestamp < t);
    let hi = &gt[upper];
    if hi.timestamp == t || upper == 0 {
        return Ok(GroundTruthFrame {
            timestamp: t,
            persons: hi.persons.clone(),
            robot_pose,
        });
    }
    let lo = &gt[upper - 1];
    let alpha = (t - lo.timestamp) / (hi.timestamp - lo.timestamp);
    let persons = lo
        .persons
        .iter()
        .filter_map(|(id, a)| {
            let (_, b) = hi.persons.iter().find(|(other, _)| other == id)?;
            Some((
                *id,
                PointXY::new(
                    a.x + alpha * (b.x - a.x),
                    a.y + alpha * (b.y - a.y),
                    a.frame,
                ),
            ))
        })
        .collect();
    Ok(GroundTruthFrame {
        timestamp: t,
        persons,
        robot_pose,
    })
}

/// Evaluates a hypothesis sequence against (typically denser) ground truth.
///
/// Each hypothesis frame is scored against ground truth interpolated to its
/// timestamp. With no hypothesis frames at all, every ground-truth frame is
/// scored as empty, so the report carries Σg and the matching misses.
pub fn evaluate_sequence(
    gt: &[GroundTruthFrame],
    hyp: &[HypothesisFrame],
    cfg: &EvalConfig,
) -> Result<MotReport> {
    if gt.is_empty() {
        return Ok(MotReport::from_frames(Vec::new()));
    }
    let robot: Vec<Pose2D> = gt
        .iter()
        .map(|f| Pose2D {
            timestamp: f.timestamp,
            ..f.robot_pose
        })
        .collect();
    let (start, end) = (gt[0].timestamp, gt[gt.len() - 1].timestamp);

    let empty_frames: Vec<HypothesisFrame>;
    let hyp = if hyp.is_empty() {
        empty_frames = gt
            .iter()
            .map(|f| HypothesisFrame {
                timestamp: f.timestamp,
                tracks: Vec::new(),
            })
            .collect();
        &empty_frames[..]
    } else {
        hyp
    };

    let mut frames = Vec::with_capacity(hyp.len());
    let mut corr = Correspondence::new();
    for h in hyp {
        let t = if h.timestamp < start && start - h.timestamp <= cfg.time_tolerance {
            start
        } else if h.timestamp > end && h.timestamp - end <= cfg.time_tolerance {
            end
        } else {
            h.timestamp
        };
        if t < start || t > end {
            continue;
        }
        let g = interpolate_ground_truth(gt, &robot, t)?;
        let (g, h) = filter_by_fov_frame(&g, h, &cfg.fov);
        let (counts, next) = match_frame(&g, &h, cfg.threshold, &corr);
        corr = next;
        frames.push(counts);
    }
    Ok(MotReport::from_frames(frames))
}
