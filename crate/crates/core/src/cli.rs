//! Command-line front end: `track`, `eval`, `synth` and `convert`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::association::Metric;
use crate::config::{Preset, TrackerConfig};
use crate::dataio::adapters::{kitti_to_detections, nuscenes_to_detections};
use crate::dataio::{
    build_sequences, read_calibration, read_detections, read_json_outputs, read_poses, write_json, write_kitti, DetectionSet, KittiLayout, PoseSet,
    Sequence, KITTI_CAMERA_ID,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_sequences, generate, read_gt, write_synth, Criterion, Scenario};
use crate::geometry::CameraModel;
use crate::tracker::{FrameOutput, FrameStats, Tracker};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fusetrack", version, about = "Camera/LiDAR fusion multi-object tracker")]
#[command(args_conflicts_with_subcommands = true, arg_required_else_help = true)]
pub struct Cli {
    /// Print the effective tracker configuration as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
    /// Preset printed by --dump-config.
    #[arg(long, default_value = "kitti", requires = "dump_config")]
    pub preset: Preset,
    /// Config file merged over the preset for --dump-config.
    #[arg(long, requires = "dump_config")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track every sequence of a detection file.
    Track(TrackArgs),
    /// Score tracker output against ground truth with CLEAR-MOT.
    Eval(EvalArgs),
    /// Generate detections and ground truth from a scenario file.
    Synth(SynthArgs),
    /// Convert KITTI or NuScenes detection dumps to JSON-lines.
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    /// KITTI tracking rows of confirmed tracks, 17 columns.
    Kitti,
    /// KITTI tracking rows of all reported tracks with a score column.
    KittiResults,
    /// One FrameOutput JSON document per line.
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Ignore image detections: no fusion and no second stage.
    #[value(name = "no-2d")]
    No2d,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// JSON-lines detections (3D and optionally 2D).
    #[arg(long)]
    pub dets3d: PathBuf,
    /// Additional JSON-lines file with image detections.
    #[arg(long)]
    pub dets2d: Option<PathBuf>,
    /// Rig JSON or KITTI calibration text.
    #[arg(long)]
    pub rig: PathBuf,
    /// JSON-lines ego poses; identity when absent.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// JSON config merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "kitti")]
    pub preset: Preset,
    /// Output directory; one file per sequence.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "kitti")]
    pub format: OutputFormat,
    #[arg(long, value_enum)]
    pub ablation: Vec<Ablation>,
    /// First-stage metric: scaled_distance, planar_distance or iou_3d.
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Sequences processed concurrently.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth JSON-lines file.
    #[arg(long)]
    pub gt: PathBuf,
    /// JSON tracker output: a file for a single sequence, or the output
    /// directory holding `<seq>.json` per sequence.
    #[arg(long)]
    pub hyp: PathBuf,
    /// Match rule: iou2d (image IoU ≥ 0.5) or dist3d (ground-plane distance ≤ 2 m).
    #[arg(long)]
    pub criterion: Criterion,
    /// Print the metrics as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for dets.jsonl, poses.jsonl, gt.jsonl and rig.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceFormat {
    Kitti,
    Nuscenes,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub from: SourceFormat,
    /// Detection dump: KITTI tracking rows or a NuScenes results JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Sample tokens in frame order, one per line (NuScenes).
    #[arg(long, required_if_eq("from", "nuscenes"))]
    pub tokens: Option<PathBuf>,
    /// Sequence name written on every line.
    #[arg(long)]
    pub seq: Option<String>,
    /// Camera of KITTI image-only rows.
    #[arg(long, default_value = KITTI_CAMERA_ID)]
    pub camera: String,
    /// Output JSON-lines file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything `track` needs, resolved from flags and files.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub rig: Vec<CameraModel>,
    pub sequences: Vec<Sequence>,
    pub out: PathBuf,
    pub format: OutputFormat,
    pub jobs: Option<usize>,
}

/// Result of tracking one sequence.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub name: String,
    pub outputs: Vec<FrameOutput>,
    pub stats: FrameStats,
    pub seconds: f64,
    pub path: PathBuf,
}

impl SequenceRun {
    pub fn frames_per_second(&self) -> f64 {
        self.outputs.len() as f64 / self.seconds.max(f64::MIN_POSITIVE)
    }
}

/// Parses `args` and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if cli.dump_config {
        let cfg = load_config(cli.config.as_deref(), cli.preset)?;
        println!("{}", cfg.to_json_pretty());
        return Ok(());
    }
    match cli.command {
        Some(Command::Track(a)) => cmd_track(&a).map(|_| ()),
        Some(Command::Eval(a)) => cmd_eval(&a),
        Some(Command::Synth(a)) => cmd_synth(&a),
        Some(Command::Convert(a)) => cmd_convert(&a),
        None => Ok(()),
    }
}

fn load_config(path: Option<&Path>, preset: Preset) -> Result<TrackerConfig> {
    match path {
        None => Ok(TrackerConfig::preset(preset)),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::from(e).in_file(p))?;
            TrackerConfig::from_json_str(&text, preset).map_err(|e| e.in_file(p))
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::from(e).in_file(path))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::from(e).in_file(path))
}

impl RunConfig {
    pub fn load(a: &TrackArgs) -> Result<RunConfig> {
        let mut tracker = load_config(a.config.as_deref(), a.preset)?;
        if let Some(m) = a.metric {
            tracker.metric = m;
        }
        if a.ablation.contains(&Ablation::No2d) {
            tracker.disable_2d = true;
        }
        let rig = read_calibration(&a.rig)?;
        let mut dets = DetectionSet::new();
        read_detections(&a.dets3d, &mut dets)?;
        if let Some(p) = &a.dets2d {
            read_detections(p, &mut dets)?;
        }
        let poses = match &a.poses {
            Some(p) => read_poses(p)?,
            None => PoseSet::new(),
        };
        let sequences = build_sequences(&dets, &poses, &rig)?;
        Ok(RunConfig { tracker, rig, sequences, out: a.out.clone(), format: a.format, jobs: a.jobs.map(usize::from) })
    }
}

/// Tracks one sequence on the calling thread; `seconds` covers tracking only.
pub fn track_sequence(cfg: &TrackerConfig, rig: &[CameraModel], seq: &Sequence) -> Result<(Vec<FrameOutput>, FrameStats, f64)> {
    let mut tracker = Tracker::new(cfg.clone(), rig.to_vec())?;
    let mut stats = FrameStats::default();
    let mut outputs = Vec::with_capacity(seq.frames.len());
    let start = Instant::now();
    for f in &seq.frames {
        outputs.push(tracker.step(f)?);
        stats += tracker.last_stats();
    }
    let seconds = start.elapsed().as_secs_f64();
    stats.live_tracks = tracker.tracks().len();
    Ok((outputs, stats, seconds))
}

fn write_outputs(outputs: &[FrameOutput], format: OutputFormat, path: &Path) -> Result<()> {
    let w = create(path)?;
    match format {
        OutputFormat::Kitti => write_kitti(outputs, KittiLayout::Label, w),
        OutputFormat::KittiResults => write_kitti(outputs, KittiLayout::Results, w),
        OutputFormat::Json => write_json(outputs, w),
    }
    .map_err(|e| e.in_file(path))
}

pub fn cmd_track(a: &TrackArgs) -> Result<Vec<SequenceRun>> {
    let run = RunConfig::load(a)?;
    fs::create_dir_all(&run.out).map_err(|e| Error::from(e).in_file(&run.out))?;
    let extension = match run.format {
        OutputFormat::Kitti | OutputFormat::KittiResults => "txt",
        OutputFormat::Json => "json",
    };
    let one = |seq: &Sequence| -> Result<SequenceRun> {
        let (outputs, stats, seconds) =
            track_sequence(&run.tracker, &run.rig, seq).map_err(|e| Error::Config(format!("sequence {}: {e}", seq.name)))?;
        let path = run.out.join(format!("{}.{extension}", seq.name));
        write_outputs(&outputs, run.format, &path)?;
        Ok(SequenceRun { name: seq.name.clone(), outputs, stats, seconds, path })
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(run.jobs.unwrap_or(0)).build().map_err(|e| Error::Config(e.to_string()))?;
    let runs: Vec<SequenceRun> = pool.install(|| run.sequences.par_iter().map(one).collect::<Result<_>>())?;

    for r in &runs {
        let s = &r.stats;
        log::info!(
            "sequence {}: instances {}, fused pairs {}, stage1 matches {}, stage2 matches {}, new tracks {}, terminated tracks {}",
            r.name,
            s.instances,
            s.fused_pairs,
            s.stage1_matches,
            s.stage2_matches,
            s.new_tracks,
            s.terminated_tracks
        );
        println!(
            "sequence {}: {} frames in {:.6} s ({:.1} frames/s) -> {}",
            r.name,
            r.outputs.len(),
            r.seconds,
            r.frames_per_second(),
            r.path.display()
        );
    }
    Ok(runs)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let gt = read_gt(open(&a.gt)?).map_err(|e| e.in_file(&a.gt))?;
    let mut pairs = Vec::with_capacity(gt.len());
    if a.hyp.is_dir() {
        for (seq, frames) in gt {
            let path = a.hyp.join(format!("{seq}.json"));
            let hyp = read_json_outputs(open(&path)?).map_err(|e| e.in_file(&path))?;
            pairs.push((frames, hyp));
        }
    } else {
        if gt.len() > 1 {
            return Err(Error::Config(format!("ground truth has {} sequences; pass the output directory to --hyp", gt.len())));
        }
        let hyp = read_json_outputs(open(&a.hyp)?).map_err(|e| e.in_file(&a.hyp))?;
        let frames = gt.into_iter().next().map(|(_, f)| f).unwrap_or_default();
        pairs.push((frames, hyp));
    }
    let metrics = evaluate_sequences(&pairs, a.criterion)?;
    if a.json {
        println!("{}", serde_json::to_string(&metrics)?);
    } else {
        println!("criterion  {}", a.criterion);
        print!("{}", metrics.to_text());
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&a.scenario).map_err(|e| Error::from(e).in_file(&a.scenario))?;
    let mut scenario = Scenario::from_json_str(&text).map_err(|e| e.in_file(&a.scenario))?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let g = generate(&scenario)?;
    write_synth(&g, &a.out)?;
    let dets3d: usize = g.frames.iter().map(|f| f.dets3d.len()).sum();
    let dets2d: usize = g.frames.iter().flat_map(|f| f.dets2d_by_camera.values()).map(Vec::len).sum();
    println!("sequence {}: {} frames, {} 3D and {} 2D detections -> {}", g.sequence, g.frames.len(), dets3d, dets2d, a.out.display());
    Ok(())
}

pub fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    let lines = match a.from {
        SourceFormat::Kitti => kitti_to_detections(open(&a.input)?, a.seq.as_deref(), &a.camera),
        SourceFormat::Nuscenes => {
            let tokens_path = a.tokens.as_ref().expect("clap requires --tokens for nuscenes");
            let tokens: Vec<String> = fs::read_to_string(tokens_path)
                .map_err(|e| Error::from(e).in_file(tokens_path))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            let text = fs::read_to_string(&a.input).map_err(|e| Error::from(e).in_file(&a.input))?;
            nuscenes_to_detections(&text, &tokens, a.seq.as_deref())
        }
    }
    .map_err(|e| e.in_file(&a.input))?;
    let mut w = create(&a.out)?;
    for l in &lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("{} detections -> {}", lines.len(), a.out.display());
    Ok(())
}
