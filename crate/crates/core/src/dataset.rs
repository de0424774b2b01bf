//! Line-delimited JSON datasets.
//!
//! The first line is a header, `{"format":"lidartrack-dataset","version":1}`.
//! Each later line is one record:
//!
//! ```text
//! {"kind":"scan","timestamp":0.050000000,"payload":{...}}
//! ```
//!
//! Timestamps are written with at least nine decimals. More are used only
//! when nine would not reproduce the value exactly. Other floats use the
//! shortest representation that parses back to the same bits. No-return
//! ranges are written as `null`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detection::{Detection, DetectionFrame};
use crate::error::{Error, Result};
use crate::evaluation::{GroundTruthFrame, PersonId};
use crate::geometry::{Frame, LidarScan, PointXY, Pose2D, NO_RETURN};
use crate::pipeline::DynamicObstacle;
use crate::tracking::TrackEstimate;
use crate::workflow::TrackFrame;

pub const FORMAT_NAME: &str = "lidartrack-dataset";
pub const FORMAT_VERSION: u32 = 1;

pub const SCANS_FILE: &str = "scans.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const OBSTACLES_FILE: &str = "obstacles.jsonl";
pub const SCENARIO_FILE: &str = "scenario.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleFrame {
    pub timestamp: f64,
    pub obstacles: Vec<DynamicObstacle>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetRecord {
    Scan(LidarScan),
    GroundTruth(GroundTruthFrame),
    Detection(DetectionFrame),
    Track(TrackFrame),
    Obstacle(ObstacleFrame),
}

impl DatasetRecord {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Scan(_) => "scan",
            Self::GroundTruth(_) => "ground_truth",
            Self::Detection(_) => "detection",
            Self::Track(_) => "track",
            Self::Obstacle(_) => "obstacle",
        }
    }

    pub fn timestamp(&self) -> f64 {
        match self {
            Self::Scan(s) => s.timestamp,
            Self::GroundTruth(g) => g.timestamp,
            Self::Detection(d) => d.timestamp,
            Self::Track(t) => t.timestamp,
            Self::Obstacle(o) => o.timestamp,
        }
    }

    fn payload_json(&self) -> Result<String> {
        Ok(match self {
            Self::Scan(s) => serde_json::to_string(&ScanPayload {
                angle_min: s.angle_min,
                angle_increment: s.angle_increment,
                range_max: s.range_max,
                frame: s.frame,
                odom_pose: s.odom_pose,
                ranges: s
                    .ranges
                    .iter()
                    .map(|&r| (r != NO_RETURN).then_some(r))
                    .collect(),
            })?,
            Self::GroundTruth(g) => serde_json::to_string(&GroundTruthPayload {
                robot_pose: g.robot_pose,
                persons: g.persons.clone(),
            })?,
            Self::Detection(d) => serde_json::to_string(&DetectionPayload {
                odom_pose: d.odom_pose,
                detections: d.detections.clone(),
            })?,
            Self::Track(t) => serde_json::to_string(&TrackPayload {
                tracks: t.tracks.clone(),
            })?,
            Self::Obstacle(o) => serde_json::to_string(&ObstaclePayload {
                obstacles: o.obstacles.clone(),
            })?,
        })
    }

    fn from_parts(kind: &str, timestamp: f64, payload: serde_json::Value) -> Result<Option<Self>> {
        fn de<T: DeserializeOwned>(v: serde_json::Value) -> Result<T> {
            Ok(serde_json::from_value(v)?)
        }
        Ok(Some(match kind {
            "scan" => {
                let p: ScanPayload = de(payload)?;
                let scan = LidarScan {
                    timestamp,
                    ranges: p
                        .ranges
                        .into_iter()
                        .map(|r| r.unwrap_or(NO_RETURN))
                        .collect(),
                    angle_min: p.angle_min,
                    angle_increment: p.angle_increment,
                    range_max: p.range_max,
                    frame: p.frame,
                    odom_pose: p.odom_pose,
                };
                scan.validate()?;
                Self::Scan(scan)
            }
            "ground_truth" => {
                let p: GroundTruthPayload = de(payload)?;
                Self::GroundTruth(GroundTruthFrame {
                    timestamp,
                    persons: p.persons,
                    robot_pose: p.robot_pose,
                })
            }
            "detection" => {
                let p: DetectionPayload = de(payload)?;
                Self::Detection(DetectionFrame {
                    timestamp,
                    odom_pose: p.odom_pose,
                    detections: p.detections,
                })
            }
            "track" => Self::Track(TrackFrame {
                timestamp,
                tracks: de::<TrackPayload>(payload)?.tracks,
            }),
            "obstacle" => Self::Obstacle(ObstacleFrame {
                timestamp,
                obstacles: de::<ObstaclePayload>(payload)?.obstacles,
            }),
            _ => return Ok(None),
        }))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanPayload {
    angle_min: f64,
    angle_increment: f64,
    range_max: f64,
    frame: Frame,
    odom_pose: Pose2D,
    ranges: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthPayload {
    robot_pose: Pose2D,
    persons: Vec<(PersonId, PointXY)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionPayload {
    odom_pose: Pose2D,
    detections: Vec<Detection>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackPayload {
    tracks: Vec<TrackEstimate>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstaclePayload {
    obstacles: Vec<DynamicObstacle>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    kind: String,
    timestamp: f64,
    payload: serde_json::Value,
}

/// Fixed nine-decimal form when it is exact, otherwise the shortest longer
/// fixed form that is.
pub fn format_timestamp(t: f64) -> String {
    for digits in 9..=24 {
        let s = format!("{t:.digits$}");
        if s.parse::<f64>().ok() == Some(t) {
            return s;
        }
    }
    format!("{t:e}")
}

/// Streams records to any writer, enforcing per-kind timestamp order.
pub struct DatasetWriter<W: Write> {
    out: W,
    last: HashMap<&'static str, f64>,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        serde_json::to_writer(
            &mut out,
            &Header {
                format: FORMAT_NAME.into(),
                version: FORMAT_VERSION,
            },
        )?;
        out.write_all(b"\n")?;
        Ok(Self {
            out,
            last: HashMap::new(),
        })
    }

    pub fn write(&mut self, record: &DatasetRecord) -> Result<()> {
        let t = record.timestamp();
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{} record has non-finite timestamp",
                record.kind()
            )));
        }
        if let Some(&last) = self.last.get(record.kind()) {
            if t < last {
                return Err(Error::TimeRegression { last, got: t });
            }
        }
        self.last.insert(record.kind(), t);
        writeln!(
            self.out,
            "{{\"kind\":\"{}\",\"timestamp\":{},\"payload\":{}}}",
            record.kind(),
            format_timestamp(t),
            record.payload_json()?
        )?;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// A file written under a temporary name and renamed into place on
/// [`commit`](Self::commit). Dropped without committing, it is removed.
pub struct OutputFile {
    target: PathBuf,
    partial: PathBuf,
    writer: Option<BufWriter<File>>,
}

impl OutputFile {
    pub fn create(target: &Path) -> Result<Self> {
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(".partial");
        let partial = target.with_file_name(name);
        let writer = BufWriter::new(File::create(&partial)?);
        Ok(Self {
            target: target.to_path_buf(),
            partial,
            writer: Some(writer),
        })
    }

    pub fn writer(&mut self) -> &mut BufWriter<File> {
        self.writer.as_mut().expect("output already committed")
    }

    pub fn commit(mut self) -> Result<()> {
        if let Some(mut w) = self.writer.take() {
            w.flush()?;
        }
        std::fs::rename(&self.partial, &self.target)?;
        Ok(())
    }
}

impl Drop for OutputFile {
    fn drop(&mut self) {
        if self.writer.take().is_some() {
            let _ = std::fs::remove_file(&self.partial);
        }
    }
}

pub fn write_dataset<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a DatasetRecord>,
) -> Result<()> {
    let mut file = OutputFile::create(path)?;
    let mut w = DatasetWriter::new(file.writer())?;
    for r in records {
        w.write(r)?;
    }
    w.into_inner()?;
    file.commit()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadMode {
    /// Malformed lines, a missing header and out-of-order records are errors.
    #[default]
    Strict,
    /// Malformed lines are skipped and counted.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReadWarnings {
    pub unknown_kind: usize,
    pub malformed: usize,
    pub out_of_order: usize,
}

impl ReadWarnings {
    pub fn total(&self) -> usize {
        self.unknown_kind + self.malformed + self.out_of_order
    }
}

/// Streaming reader yielding one record per data line.
pub struct DatasetReader<R: BufRead> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    mode: ReadMode,
    line_no: usize,
    seen_header: bool,
    seen_record: bool,
    last: HashMap<String, f64>,
    warnings: ReadWarnings,
    failed: bool,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path, mode: ReadMode) -> Result<Self> {
        Ok(Self::new(BufReader::new(File::open(path)?), path, mode))
    }
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(reader: R, path: &Path, mode: ReadMode) -> Self {
        Self {
            lines: reader.lines(),
            path: path.to_path_buf(),
            mode,
            line_no: 0,
            seen_header: false,
            seen_record: false,
            last: HashMap::new(),
            warnings: ReadWarnings::default(),
            failed: false,
        }
    }

    pub fn warnings(&self) -> ReadWarnings {
        self.warnings
    }

    fn parse_error(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line_no,
            reason: reason.into(),
        }
    }

    /// `Ok(None)` for lines that carry no record.
    fn parse_line(&mut self, line: &str) -> Result<Option<DatasetRecord>> {
        if line.trim().is_empty() {
            return Ok(None);
        }
        if !self.seen_header && !self.seen_record {
            if let Ok(h) = serde_json::from_str::<Header>(line) {
                self.seen_header = true;
                if h.format != FORMAT_NAME {
                    return Err(self.parse_error(format!("unexpected format `{}`", h.format)));
                }
                if h.version > FORMAT_VERSION {
                    return Err(self.parse_error(format!("unsupported version {}", h.version)));
                }
                return Ok(None);
            }
            if self.mode == ReadMode::Strict {
                return Err(self.parse_error("missing dataset header"));
            }
        }
        self.seen_record = true;
        let envelope: Envelope = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) => return self.malformed(e.to_string()),
        };
        let record =
            match DatasetRecord::from_parts(&envelope.kind, envelope.timestamp, envelope.payload) {
                Ok(Some(r)) => r,
                Ok(None) => {
                    self.warnings.unknown_kind += 1;
                    return Ok(None);
                }
                Err(e) => return self.malformed(e.to_string()),
            };
        let t = envelope.timestamp;
        if let Some(&last) = self.last.get(&envelope.kind) {
            if t < last {
                if self.mode == ReadMode::Strict {
                    return Err(self.parse_error(format!("{} at {t} after {last}", envelope.kind)));
                }
                self.warnings.out_of_order += 1;
            }
        }
        self.last.insert(envelope.kind, t);
        Ok(Some(record))
    }

    fn malformed(&mut self, reason: String) -> Result<Option<DatasetRecord>> {
        match self.mode {
            ReadMode::Strict => Err(self.parse_error(reason)),
            ReadMode::Lenient => {
                self.warnings.malformed += 1;
                Ok(None)
            }
        }
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<DatasetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            };
            self.line_no += 1;
            match self.parse_line(&line) {
                Ok(Some(r)) => return Some(Ok(r)),
                Ok(None) => continue,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub warnings: ReadWarnings,
}

impl Dataset {
    pub fn scans(&self) -> Vec<LidarScan> {
        self.records
            .iter()
            .filter_map(|r| match r {
                DatasetRecord::Scan(s) => Some(s.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthFrame> {
        self.records
            .iter()
            .filter_map(|r| match r {
                DatasetRecord::GroundTruth(g) => Some(g.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn detections(&self) -> Vec<DetectionFrame> {
        self.records
            .iter()
            .filter_map(|r| match r {
                DatasetRecord::Detection(d) => Some(d.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn tracks(&self) -> Vec<TrackFrame> {
        self.records
            .iter()
            .filter_map(|r| match r {
                DatasetRecord::Track(t) => Some(t.clone()),
                _ => None,
            })
            .collect()
    }
}

pub fn read_dataset(path: &Path, mode: ReadMode) -> Result<Dataset> {
    let mut reader = DatasetReader::open(path, mode)?;
    let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        records,
        warnings: reader.warnings(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScanParams;
    use crate::simulator::{simulate, ScenarioConfig, ScenarioKind};
    use proptest::prelude::*;

    fn roundtrip(records: &[DatasetRecord]) -> Vec<DatasetRecord> {
        let mut w = DatasetWriter::new(Vec::new()).unwrap();
        for r in records {
            w.write(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        DatasetReader::new(bytes.as_slice(), Path::new("mem"), ReadMode::Strict)
            .collect::<Result<Vec<_>>>()
            .unwrap()
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn simulated_stream_roundtrips_bit_exact() {
        let sim = simulate(&ScenarioConfig {
            duration: 5.0,
            ..ScenarioConfig::new(ScenarioKind::Mr2, 4)
        })
        .unwrap();
        let records: Vec<_> = sim
            .scans
            .iter()
            .take(100)
            .cloned()
            .map(DatasetRecord::Scan)
            .chain(
                sim.ground_truth
                    .iter()
                    .cloned()
                    .map(DatasetRecord::GroundTruth),
            )
            .collect();
        let back = roundtrip(&records);
        assert_eq!(back, records);
        for (a, b) in records.iter().zip(&back) {
            if let (DatasetRecord::Scan(a), DatasetRecord::Scan(b)) = (a, b) {
                assert_eq!(bits(&a.ranges), bits(&b.ranges));
                assert_eq!(a.timestamp.to_bits(), b.timestamp.to_bits());
            }
        }
    }

    #[test]
    fn timestamps_use_nine_decimals_when_exact() {
        assert_eq!(format_timestamp(0.05), "0.050000000");
        assert_eq!(format_timestamp(12.0), "12.000000000");
        let odd = 0.1 + 0.2;
        let s = format_timestamp(odd);
        assert!(s.len() > "0.300000000".len());
        assert_eq!(s.parse::<f64>().unwrap(), odd);
    }

    #[test]
    fn empty_input_is_an_empty_stream() {
        let r = DatasetReader::new(&b""[..], Path::new("empty"), ReadMode::Strict);
        assert_eq!(r.count(), 0);
    }

    fn thousand_line_file(corrupt_at: usize) -> String {
        let mut w = DatasetWriter::new(Vec::new()).unwrap();
        for k in 0..1000 {
            w.write(&DatasetRecord::Track(TrackFrame {
                timestamp: k as f64 * 0.05,
                tracks: vec![],
            }))
            .unwrap();
        }
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[corrupt_at] = "{\"kind\":\"track\",\"timestamp\":".into();
        lines.join("\n")
    }

    #[test]
    fn corrupt_line_is_named_in_strict_mode() {
        let text = thousand_line_file(500);
        let err = DatasetReader::new(text.as_bytes(), Path::new("d.jsonl"), ReadMode::Strict)
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 501, .. }), "{err}");
        assert!(err.to_string().starts_with("d.jsonl:501:"));

        let mut lenient =
            DatasetReader::new(text.as_bytes(), Path::new("d.jsonl"), ReadMode::Lenient);
        assert_eq!(lenient.by_ref().filter(|r| r.is_ok()).count(), 999);
        assert_eq!(lenient.warnings().malformed, 1);
    }

    #[test]
    fn unknown_kinds_are_skipped_and_counted() {
        let text = format!(
            "{{\"format\":\"{FORMAT_NAME}\",\"version\":1}}\n\
             {{\"kind\":\"imu\",\"timestamp\":0.0,\"payload\":{{}}}}\n\
             {{\"kind\":\"track\",\"timestamp\":0.0,\"payload\":{{\"tracks\":[]}}}}\n"
        );
        let mut r = DatasetReader::new(text.as_bytes(), Path::new("x"), ReadMode::Strict);
        assert_eq!(r.by_ref().count(), 1);
        assert_eq!(r.warnings().unknown_kind, 1);
    }

    #[test]
    fn header_is_checked() {
        let bad = "{\"format\":\"lidartrack-dataset\",\"version\":99}\n";
        assert!(
            DatasetReader::new(bad.as_bytes(), Path::new("x"), ReadMode::Lenient)
                .next()
                .unwrap()
                .is_err()
        );
        let headless = "{\"kind\":\"track\",\"timestamp\":0.0,\"payload\":{\"tracks\":[]}}\n";
        assert!(
            DatasetReader::new(headless.as_bytes(), Path::new("x"), ReadMode::Strict)
                .next()
                .unwrap()
                .is_err()
        );
        assert!(
            DatasetReader::new(headless.as_bytes(), Path::new("x"), ReadMode::Lenient)
                .next()
                .unwrap()
                .is_ok()
        );
    }

    #[test]
    fn per_kind_order_is_enforced() {
        let mut w = DatasetWriter::new(Vec::new()).unwrap();
        let track = |t| {
            DatasetRecord::Track(TrackFrame {
                timestamp: t,
                tracks: vec![],
            })
        };
        let gt = |t| {
            DatasetRecord::GroundTruth(GroundTruthFrame {
                timestamp: t,
                persons: vec![],
                robot_pose: Pose2D::identity(),
            })
        };
        w.write(&track(1.0)).unwrap();
        w.write(&gt(0.5)).unwrap();
        assert!(w.write(&track(0.9)).is_err());
    }

    #[test]
    fn output_file_is_removed_unless_committed() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out.jsonl");
        {
            let mut f = OutputFile::create(&target).unwrap();
            f.writer().write_all(b"half").unwrap();
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        write_dataset(&target, &[]).unwrap();
        assert!(target.exists());
        assert!(read_dataset(&target, ReadMode::Strict)
            .unwrap()
            .records
            .is_empty());
    }

    fn arb_point() -> impl Strategy<Value = PointXY> {
        (any::<f64>(), any::<f64>(), prop::bool::ANY).prop_filter_map("finite", |(x, y, odom)| {
            (x.is_finite() && y.is_finite())
                .then(|| PointXY::new(x, y, if odom { Frame::Odom } else { Frame::Sensor }))
        })
    }

    fn finite() -> impl Strategy<Value = f64> {
        any::<f64>().prop_filter("finite", |v| v.is_finite())
    }

    fn arb_pose() -> impl Strategy<Value = Pose2D> {
        (finite(), finite(), finite(), finite()).prop_map(|(x, y, th, t)| Pose2D::new(x, y, th, t))
    }

    fn arb_est() -> impl Strategy<Value = TrackEstimate> {
        (any::<u64>(), arb_point(), finite(), finite(), finite()).prop_map(
            |(id, position, vx, vy, t)| TrackEstimate {
                id,
                position,
                velocity: [vx, vy],
                timestamp: t,
            },
        )
    }

    fn arb_record() -> impl Strategy<Value = DatasetRecord> {
        let scan = (
            0.0..1e6f64,
            prop::collection::vec(prop::option::of(1e-3..30.0f64), 1..50),
            arb_pose(),
        )
            .prop_map(|(t, ranges, pose)| {
                let params = ScanParams::utm30lx();
                DatasetRecord::Scan(LidarScan {
                    timestamp: t,
                    ranges: ranges.into_iter().map(|r| r.unwrap_or(NO_RETURN)).collect(),
                    angle_min: params.angle_min,
                    angle_increment: params.angle_increment,
                    range_max: params.range_max,
                    frame: Frame::Sensor,
                    odom_pose: pose,
                })
            });
        let gt = (
            0.0..1e6f64,
            prop::collection::vec((any::<u64>(), arb_point()), 0..5),
            arb_pose(),
        )
            .prop_map(|(t, persons, robot_pose)| {
                DatasetRecord::GroundTruth(GroundTruthFrame {
                    timestamp: t,
                    persons,
                    robot_pose,
                })
            });
        let det = (
            0.0..1e6f64,
            prop::collection::vec((arb_point(), 0.0..=1.0f64, finite()), 0..5),
            arb_pose(),
        )
            .prop_map(|(t, d, odom_pose)| {
                DatasetRecord::Detection(DetectionFrame {
                    timestamp: t,
                    odom_pose,
                    detections: d
                        .into_iter()
                        .map(|(position, confidence, timestamp)| Detection {
                            position,
                            confidence,
                            timestamp,
                        })
                        .collect(),
                })
            });
        let track =
            (0.0..1e6f64, prop::collection::vec(arb_est(), 0..5)).prop_map(|(t, tracks)| {
                DatasetRecord::Track(TrackFrame {
                    timestamp: t,
                    tracks,
                })
            });
        let obstacle = (0.0..1e6f64, prop::collection::vec(arb_est(), 0..5)).prop_map(|(t, es)| {
            DatasetRecord::Obstacle(ObstacleFrame {
                timestamp: t,
                obstacles: es
                    .into_iter()
                    .map(|e| DynamicObstacle {
                        id: e.id,
                        position: e.position,
                        velocity: e.velocity,
                        timestamp: e.timestamp,
                    })
                    .collect(),
            })
        });
        prop_oneof![scan, gt, det, track, obstacle]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn every_record_kind_roundtrips(record in arb_record()) {
            let back = roundtrip(std::slice::from_ref(&record));
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0], &record);
            prop_assert_eq!(back[0].timestamp().to_bits(), record.timestamp().to_bits());
        }

        #[test]
        fn timestamp_text_is_exact(t in finite()) {
            let s = format_timestamp(t);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), t.to_bits());
        }
    }
}
