use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lidartrack::config::{AppConfig, Preset, DATA_DIR_ENV};
use lidartrack::dataset::{
    read_dataset, Dataset, DatasetReader, DatasetRecord, DatasetWriter, ObstacleFrame, OutputFile,
    ReadMode, DETECTIONS_FILE, GROUND_TRUTH_FILE, OBSTACLES_FILE, SCANS_FILE, SCENARIO_FILE,
    TRACKS_FILE,
};
use lidartrack::detection::ClusterDetector;
use lidartrack::evaluation::{evaluate_sequence, EvalConfig, GroundTruthFrame};
use lidartrack::geometry::LidarScan;
use lidartrack::pipeline::{
    run_pipeline, ExecutionMode, FrameOutput, OverflowPolicy, PipelineConfig, RunSummary,
};
use lidartrack::report::{MotRow, ReportFile, RunMetadata, TimingRow};
use lidartrack::simulator::{simulate, ScenarioConfig, ScenarioKind};
use lidartrack::tracking::Tracker;
use lidartrack::workflow::{detect_scans, hypotheses, track_frames, TrackFrame};

#[derive(Parser)]
#[command(
    name = "lidartrack",
    version,
    about = "2D LiDAR person detection, tracking and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write scans and ground truth.
    Simulate(SimulateArgs),
    /// Run the detector over recorded scans.
    Detect(StageArgs),
    /// Track recorded detections.
    Track(StageArgs),
    /// Score recorded tracks against ground truth.
    Evaluate(EvaluateArgs),
    /// Detection and tracking through the two-stage runtime.
    Pipeline(PipelineArgs),
    /// Simulate, track and score presets over seeds and scenarios.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Base preset: config-1, config-2 or config-3.
    #[arg(long, default_value = "config-1")]
    preset: Preset,
    /// TOML file overriding preset fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<AppConfig> {
        match &self.config {
            Some(path) => AppConfig::load(path, self.preset)
                .with_context(|| format!("loading {}", path.display())),
            None => Ok(AppConfig::from_preset(self.preset)),
        }
    }
}

#[derive(Args)]
struct InputArgs {
    /// Dataset directory to read.
    #[arg(long = "in", env = DATA_DIR_ENV)]
    input: PathBuf,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
}

impl InputArgs {
    fn mode(&self) -> ReadMode {
        if self.strict {
            ReadMode::Strict
        } else {
            ReadMode::Lenient
        }
    }

    fn read(&self, file: &str) -> Result<Dataset> {
        let path = self.input.join(file);
        let data = read_dataset(&path, self.mode())
            .with_context(|| format!("reading {}", path.display()))?;
        warn_skipped(&path, &data);
        Ok(data)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "sr")]
    kind: ScenarioKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// TOML file overriding scenario fields.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = DATA_DIR_ENV)]
    out: PathBuf,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Match threshold in metres.
    #[arg(long, default_value_t = lidartrack::evaluation::DEFAULT_MATCH_THRESHOLD)]
    threshold: f64,
    /// Report path; defaults to `report.json` in the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Minimum speed (m/s) for a track to be exported as an obstacle.
    #[arg(long)]
    velocity_gate: Option<f64>,
    /// Replay on the scan clock and drop the oldest scans on overflow.
    #[arg(long)]
    realtime: bool,
    /// Run detection and tracking back to back on one thread.
    #[arg(long)]
    serial: bool,
    /// Extra sleep added to each detector call, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    detector_delay_ms: f64,
    /// Extra sleep added to each tracker call, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    tracker_delay_ms: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Presets to run; all three when omitted.
    #[arg(long = "preset")]
    presets: Vec<Preset>,
    /// Seeds to simulate.
    #[arg(long = "seed", default_values_t = [0u64])]
    seeds: Vec<u64>,
    /// Scenario kinds to simulate; sr, mr1 and mr2 when omitted.
    #[arg(long = "kind")]
    kinds: Vec<ScenarioKind>,
    /// Simulated seconds per run.
    #[arg(long, default_value_t = 120.0)]
    duration: f64,
    /// Use a recorded dataset instead of simulating.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Fail on the first malformed line of `--in` instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// TOML file overriding preset fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = lidartrack::evaluation::DEFAULT_MATCH_THRESHOLD)]
    threshold: f64,
    /// Include wall-clock stage timings (not reproducible across runs).
    #[arg(long)]
    with_timings: bool,
    /// Report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Track(a) => cmd_track(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn warn_skipped(path: &Path, data: &Dataset) {
    let w = data.warnings;
    if w.total() > 0 {
        eprintln!(
            "warning: {}: skipped {} unknown-kind and {} malformed records, {} out of order",
            path.display(),
            w.unknown_kind,
            w.malformed,
            w.out_of_order
        );
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes several datasets and renames them into place only once all succeed.
fn write_datasets(dir: &Path, files: Vec<(&str, Vec<DatasetRecord>)>) -> Result<()> {
    create_dir(dir)?;
    let mut pending = Vec::new();
    for (name, records) in files {
        let path = dir.join(name);
        let mut out =
            OutputFile::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = DatasetWriter::new(out.writer())?;
        for r in &records {
            w.write(r)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        w.into_inner()?;
        pending.push(out);
    }
    for out in pending {
        out.commit()?;
    }
    Ok(())
}

fn scenario_fov(dir: &Path) -> Result<EvalConfig> {
    let path = dir.join(SCENARIO_FILE);
    let mut eval = EvalConfig::default();
    if path.exists() {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let scenario = ScenarioConfig::from_json_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        eval.fov = scenario.scan.field_of_view();
    }
    Ok(eval)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut scenario = match &a.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ScenarioConfig::from_toml_str(&text, a.kind, a.seed)
                .with_context(|| format!("loading {}", path.display()))?
        }
        None => ScenarioConfig::new(a.kind, a.seed),
    };
    if let Some(d) = a.duration {
        scenario.duration = d;
    }
    let sim = simulate(&scenario)?;
    create_dir(&a.out)?;
    let meta_path = a.out.join(SCENARIO_FILE);
    let mut meta = OutputFile::create(&meta_path)?;
    std::io::Write::write_all(meta.writer(), scenario.to_json_string()?.as_bytes())?;
    write_datasets(
        &a.out,
        vec![
            (
                SCANS_FILE,
                sim.scans.iter().cloned().map(DatasetRecord::Scan).collect(),
            ),
            (
                GROUND_TRUTH_FILE,
                sim.ground_truth
                    .iter()
                    .cloned()
                    .map(DatasetRecord::GroundTruth)
                    .collect(),
            ),
        ],
    )?;
    meta.commit()?;
    println!(
        "simulated {} s of {} (seed {}): {} scans, {} ground-truth frames -> {}",
        scenario.duration,
        scenario.kind.as_str(),
        scenario.seed,
        sim.scans.len(),
        sim.ground_truth.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_detect(a: StageArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let scans = a.input.read(SCANS_FILE)?.scans();
    let mut detector = ClusterDetector::new(cfg.cluster);
    let frames = detect_scans(&scans, &mut detector, &cfg.detector);
    let total: usize = frames.iter().map(|f| f.detections.len()).sum();
    let out = a.out.unwrap_or(a.input.input);
    write_datasets(
        &out,
        vec![(
            DETECTIONS_FILE,
            frames.into_iter().map(DatasetRecord::Detection).collect(),
        )],
    )?;
    println!(
        "{} scans, {} detections -> {}",
        scans.len(),
        total,
        out.join(DETECTIONS_FILE).display()
    );
    Ok(())
}

fn cmd_track(a: StageArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let detections = a.input.read(DETECTIONS_FILE)?.detections();
    let tracks = track_frames(&detections, &cfg.tracker)?;
    let ids: std::collections::BTreeSet<_> = tracks
        .iter()
        .flat_map(|f| f.tracks.iter().map(|t| t.id))
        .collect();
    let out = a.out.unwrap_or(a.input.input);
    write_datasets(
        &out,
        vec![(
            TRACKS_FILE,
            tracks.iter().cloned().map(DatasetRecord::Track).collect(),
        )],
    )?;
    println!(
        "{} frames, {} tracks -> {}",
        tracks.len(),
        ids.len(),
        out.join(TRACKS_FILE).display()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let tracks = a.input.read(TRACKS_FILE)?.tracks();
    let gt = a.input.read(GROUND_TRUTH_FILE)?.ground_truth();
    let eval = EvalConfig {
        threshold: a.threshold,
        ..scenario_fov(&a.input.input)?
    };
    let mot = evaluate_sequence(&gt, &hypotheses(&tracks), &eval)?;
    let mut report = ReportFile::new(RunMetadata {
        command: "evaluate".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        threshold: a.threshold,
        input: Some(a.input.input.display().to_string()),
        ..Default::default()
    });
    report
        .mot
        .push(MotRow::new(dataset_name(&a.input.input), None, None, &mot));
    let out = a.out.unwrap_or_else(|| a.input.input.join("report.json"));
    report
        .write(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    print!("{}", report.render_tables());
    Ok(())
}

fn dataset_name(dir: &Path) -> String {
    dir.join(SCENARIO_FILE)
        .exists()
        .then(|| std::fs::read_to_string(dir.join(SCENARIO_FILE)).ok())
        .flatten()
        .and_then(|t| ScenarioConfig::from_json_str(&t).ok())
        .map(|s| s.kind.as_str().to_string())
        .unwrap_or_else(|| "dataset".into())
}

/// Tracks, obstacles and the run summary from one pipeline pass.
struct PipelineRun {
    tracks: Vec<TrackFrame>,
    obstacles: Vec<ObstacleFrame>,
    summary: RunSummary,
}

fn pipeline_pass<I>(scans: I, cfg: &AppConfig) -> Result<PipelineRun>
where
    I: IntoIterator<Item = lidartrack::Result<LidarScan>> + Send,
{
    let mut tracks = Vec::new();
    let mut obstacles = Vec::new();
    let summary = run_pipeline(
        scans,
        Box::new(ClusterDetector::new(cfg.cluster)),
        &cfg.detector,
        Tracker::new(cfg.tracker),
        &cfg.pipeline,
        |out: &FrameOutput| {
            tracks.push(TrackFrame {
                timestamp: out.timestamp,
                tracks: out.tracks.clone(),
            });
            obstacles.push(ObstacleFrame {
                timestamp: out.timestamp,
                obstacles: out.obstacles.clone(),
            });
        },
    )?;
    Ok(PipelineRun {
        tracks,
        obstacles,
        summary,
    })
}

fn offline(pipeline: PipelineConfig) -> PipelineConfig {
    PipelineConfig {
        paced: false,
        overflow: OverflowPolicy::Block,
        ..pipeline
    }
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(g) = a.velocity_gate {
        cfg.pipeline.velocity_gate = g;
    }
    cfg.pipeline.detector_delay_ms = a.detector_delay_ms;
    cfg.pipeline.tracker_delay_ms = a.tracker_delay_ms;
    if a.serial {
        cfg.pipeline.mode = ExecutionMode::Serial;
    }
    if !a.realtime {
        cfg.pipeline = offline(cfg.pipeline);
    }
    cfg.validate()?;

    let path = a.input.input.join(SCANS_FILE);
    let mut reader = DatasetReader::open(&path, a.input.mode())
        .with_context(|| format!("reading {}", path.display()))?;
    let scans = std::iter::from_fn(move || loop {
        match reader.next()? {
            Ok(DatasetRecord::Scan(s)) => return Some(Ok(s)),
            Ok(_) => continue,
            Err(e) => return Some(Err(e)),
        }
    });
    let run = pipeline_pass(scans, &cfg)?;
    if let Some(err) = &run.summary.error {
        bail!(
            "pipeline stopped after {} frames: {err}; no outputs written",
            run.summary.frames_processed
        );
    }

    let out = a.out.unwrap_or_else(|| a.input.input.clone());
    write_datasets(
        &out,
        vec![
            (
                TRACKS_FILE,
                run.tracks.into_iter().map(DatasetRecord::Track).collect(),
            ),
            (
                OBSTACLES_FILE,
                run.obstacles
                    .into_iter()
                    .map(DatasetRecord::Obstacle)
                    .collect(),
            ),
        ],
    )?;
    let mut report = ReportFile::new(RunMetadata {
        command: "pipeline".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        presets: vec![cfg.preset],
        threshold: cfg.evaluation.threshold,
        velocity_gate: Some(cfg.pipeline.velocity_gate),
        input: Some(a.input.input.display().to_string()),
        ..Default::default()
    });
    report.timing.push(TimingRow::new(
        dataset_name(&a.input.input),
        Some(cfg.preset),
        None,
        &run.summary,
    ));
    let report_path = out.join("pipeline_report.json");
    report.write(&report_path)?;
    print!("{}", report.render_tables());
    Ok(())
}

struct BenchInput {
    name: String,
    seed: Option<u64>,
    scans: Vec<LidarScan>,
    ground_truth: Vec<GroundTruthFrame>,
    eval: EvalConfig,
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let presets = if a.presets.is_empty() {
        Preset::ALL.to_vec()
    } else {
        a.presets.clone()
    };
    let kinds = if a.kinds.is_empty() {
        vec![ScenarioKind::Sr, ScenarioKind::Mr1, ScenarioKind::Mr2]
    } else {
        a.kinds.clone()
    };
    let configs = presets
        .iter()
        .map(|&p| {
            let mut cfg = match &a.config {
                Some(path) => AppConfig::load(path, p)
                    .with_context(|| format!("loading {}", path.display()))?,
                None => AppConfig::from_preset(p),
            };
            cfg.evaluation.threshold = a.threshold;
            cfg.pipeline = offline(cfg.pipeline);
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut inputs = Vec::new();
    match &a.input {
        Some(dir) => {
            let args = InputArgs {
                input: dir.clone(),
                strict: a.strict,
            };
            inputs.push(BenchInput {
                name: dataset_name(dir),
                seed: None,
                scans: args.read(SCANS_FILE)?.scans(),
                ground_truth: args.read(GROUND_TRUTH_FILE)?.ground_truth(),
                eval: scenario_fov(dir)?,
            });
        }
        None => {
            for &kind in &kinds {
                for &seed in &a.seeds {
                    let scenario = ScenarioConfig {
                        duration: a.duration,
                        ..ScenarioConfig::new(kind, seed)
                    };
                    let sim = simulate(&scenario)?;
                    inputs.push(BenchInput {
                        name: kind.as_str().into(),
                        seed: Some(seed),
                        scans: sim.scans,
                        ground_truth: sim.ground_truth,
                        eval: EvalConfig {
                            fov: scenario.scan.field_of_view(),
                            ..EvalConfig::default()
                        },
                    });
                }
            }
        }
    }

    let mut report = ReportFile::new(RunMetadata {
        command: "bench".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        presets: presets.clone(),
        scenarios: if a.input.is_some() {
            inputs.iter().map(|i| i.name.clone()).collect()
        } else {
            kinds.iter().map(|k| k.as_str().to_string()).collect()
        },
        seeds: if a.input.is_some() {
            Vec::new()
        } else {
            a.seeds.clone()
        },
        duration: a.input.is_none().then_some(a.duration),
        threshold: a.threshold,
        velocity_gate: None,
        input: a.input.as_ref().map(|p| p.display().to_string()),
    });
    for input in &inputs {
        for cfg in &configs {
            let run = pipeline_pass(input.scans.iter().cloned().map(Ok), cfg)?;
            if let Some(err) = run.summary.error {
                bail!("{} / {}: {err}", input.name, cfg.preset);
            }
            let eval = EvalConfig {
                threshold: a.threshold,
                ..input.eval
            };
            let mot = evaluate_sequence(&input.ground_truth, &hypotheses(&run.tracks), &eval)?;
            report
                .mot
                .push(MotRow::new(&input.name, Some(cfg.preset), input.seed, &mot));
            if a.with_timings {
                report.timing.push(TimingRow::new(
                    &input.name,
                    Some(cfg.preset),
                    input.seed,
                    &run.summary,
                ));
            }
        }
    }
    if let Some(out) = &a.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        report
            .write(out)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", report.render_tables());
    Ok(())
}
