//! Versioned JSON report: MOT table, timing table and run metadata.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Preset;
use crate::dataset::OutputFile;
use crate::error::{Error, Result};
use crate::evaluation::{MotReport, MotTotals};
use crate::pipeline::{RunSummary, StageTimings};

pub const REPORT_FORMAT: &str = "lidartrack-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub tool_version: String,
    pub presets: Vec<Preset>,
    pub scenarios: Vec<String>,
    pub seeds: Vec<u64>,
    /// Simulated seconds per run.
    pub duration: Option<f64>,
    pub threshold: f64,
    pub velocity_gate: Option<f64>,
    pub input: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotRow {
    pub scenario: String,
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub totals: MotTotals,
    pub valid: usize,
    pub mota: Option<f64>,
    pub motp: Option<f64>,
}

impl MotRow {
    pub fn new(
        scenario: impl Into<String>,
        preset: Option<Preset>,
        seed: Option<u64>,
        report: &MotReport,
    ) -> Self {
        Self {
            scenario: scenario.into(),
            preset,
            seed,
            totals: report.totals,
            valid: report.valid,
            mota: report.mota,
            motp: report.motp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scenario: String,
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub frames_in: u64,
    pub frames_processed: u64,
    pub dropped: u64,
    pub throughput_hz: Option<f64>,
    pub timings: Option<StageTimings>,
}

impl TimingRow {
    pub fn new(
        scenario: impl Into<String>,
        preset: Option<Preset>,
        seed: Option<u64>,
        run: &RunSummary,
    ) -> Self {
        Self {
            scenario: scenario.into(),
            preset,
            seed,
            frames_in: run.frames_in,
            frames_processed: run.frames_processed,
            dropped: run.dropped,
            throughput_hz: run.throughput_hz,
            timings: run.timings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub metadata: RunMetadata,
    pub mot: Vec<MotRow>,
    pub timing: Vec<TimingRow>,
}

impl ReportFile {
    pub fn new(metadata: RunMetadata) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            metadata,
            mot: Vec::new(),
            timing: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut file = OutputFile::create(path)?;
        serde_json::to_writer_pretty(file.writer(), self)?;
        file.writer().write_all(b"\n")?;
        file.commit()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let report: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if report.format != REPORT_FORMAT || report.version > REPORT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "{}: unsupported report {} v{}",
                path.display(),
                report.format,
                report.version
            )));
        }
        Ok(report)
    }

    /// Plain-text MOT and timing tables.
    pub fn render_tables(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}%", v * 100.0));
        let mut s = String::new();
        if !self.mot.is_empty() {
            s.push_str(&format!(
                "{:<8} {:<9} {:>6} {:>7} {:>7} {:>7} {:>5} {:>8} {:>7}\n",
                "scenario", "preset", "seed", "valid", "miss", "fp", "id", "MOTA", "MOTP"
            ));
            for r in &self.mot {
                s.push_str(&format!(
                    "{:<8} {:<9} {:>6} {:>7} {:>7} {:>7} {:>5} {:>8} {:>7}\n",
                    r.scenario,
                    r.preset.map_or("-", |p| p.as_str()),
                    r.seed.map_or("-".into(), |v| v.to_string()),
                    r.valid,
                    r.totals.misses,
                    r.totals.false_positives,
                    r.totals.id_switches,
                    pct(r.mota),
                    r.motp.map_or("-".into(), |v| format!("{v:.3}")),
                ));
            }
        }
        if !self.timing.is_empty() {
            if !s.is_empty() {
                s.push('\n');
            }
            s.push_str(&format!(
                "{:<8} {:<9} {:>7} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}\n",
                "scenario",
                "preset",
                "frames",
                "dropped",
                "det_max",
                "det_avg",
                "trk_max",
                "trk_avg",
                "lat_max",
                "lat_avg",
                "hz"
            ));
            for r in &self.timing {
                let t = r.timings.unwrap_or_default();
                s.push_str(&format!(
                    "{:<8} {:<9} {:>7} {:>7} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>8}\n",
                    r.scenario,
                    r.preset.map_or("-", |p| p.as_str()),
                    r.frames_processed,
                    r.dropped,
                    t.t_det.worst,
                    t.t_det.avg,
                    t.t_track.worst,
                    t.t_track.avg,
                    t.t_lat.worst,
                    t.t_lat.avg,
                    r.throughput_hz.map_or("-".into(), |v| format!("{v:.2}")),
                ));
            }
        }
        s
    }
}
