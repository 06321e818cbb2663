//! Command-line front end.
//!
//! Every subcommand reads a sequence directory (or a container for
//! `export-png`), writes its artifacts under `--out` and appends one JSON
//! record per frame to `<out>/stats.jsonl`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::bev_view::{bev_image_of_cloud, build_t_p2b, BevIndexMap};
use crate::container::{export_png, read_flat, FlatArray, PngStyle};
use crate::cross_view::geometric_align;
use crate::dataset::{scan_numbers, SequenceDir};
use crate::error::{Error, Result};
use crate::metrics::{DistanceBins, EvalAccumulator};
use crate::pipeline::{
    prediction_is_moving, prediction_labels, project_rv, refine_frame, refine_specs,
    rv_residual_padded, FrameOutput, FramePipeline, FrameStats, PipelineConfig,
};
use crate::range_view::{strided_past_indices, RV_CHANNELS};
use crate::scam::argmax_rows;
use crate::scan_io::{self, Pose, ScanFrame};
use crate::synthetic::{generate_sequence, SceneSpec};
use crate::tensor::Tensor;
use crate::weights::{load_weights, save_weights, WeightSet};

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "LIDAR_MOS_CONFIG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Frames buffered between parallel compute and ordered writing.
const CHUNK: usize = 16;

#[derive(Debug, Parser)]
#[command(name = "lidar-mos", version, about = "LiDAR moving-object segmentation data pipeline")]
pub struct Cli {
    /// TOML config file; missing keys take the built-in defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override config-file values.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Past frames in the RV residual.
    #[arg(long, global = true)]
    pub rv_past_frames: Option<usize>,
    /// Comma-separated frame strides, e.g. `1,2,3`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub strides: Option<Vec<usize>>,
    /// BEV temporal window length N.
    #[arg(long, global = true)]
    pub window_len: Option<usize>,
    /// Weight manifest used by `refine`.
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence directory.
    Synth(SynthArgs),
    /// Range images and `T(R→P)`.
    ProjectRv(SeqArgs),
    /// RV residual maps.
    ResidualRv(SeqArgs),
    /// Per-frame BEV height-span images and `T(P→B)`.
    ProjectBev(SeqArgs),
    /// Streaming BEV residual maps.
    ResidualBev(SeqArgs),
    /// `T(B→R)` and the BEV residual resampled onto the range grid.
    Align(SeqArgs),
    /// Voxel-attention refinement; writes predicted `.label` files.
    Refine(SeqArgs),
    /// Moving-object IoU / recall / precision, overall and per distance bin.
    Eval(EvalArgs),
    /// Render a container as one PNG per channel.
    ExportPng(PngArgs),
    /// Print the effective configuration as TOML.
    PrintConfig,
}

#[derive(Debug, Args)]
pub struct SeqArgs {
    /// Sequence directory (`velodyne/`, `poses.txt`, `calib.txt`, optional `labels/`).
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenePreset {
    StaticWorld,
    DefaultMover,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "default-mover")]
    pub scene: ScenePreset,
    /// TOML scene description; replaces `--scene`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Sequence with ground-truth labels.
    #[arg(long)]
    pub seq: PathBuf,
    /// Directory of predicted `<frame>.label` files.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PngArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output prefix; files are `<prefix>_c<k>.png`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "grayscale")]
    pub style: PngStyle,
}

/// Parses `args` and runs; returns the process exit code. Diagnostics go to
/// stderr, reports to stdout.
pub fn main_with_args<I, T>(args: I) -> i32
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
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(_) => EXIT_INTERNAL,
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(path: Option<&Path>, o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.workers {
        cfg.workers = v;
    }
    if let Some(v) = o.rv_past_frames {
        cfg.rv_past_frames = v;
    }
    if let Some(v) = &o.strides {
        cfg.stride_options = v.clone();
    }
    if let Some(v) = o.window_len {
        cfg.bev.window_len = v;
    }
    if let Some(v) = &o.weights {
        cfg.weights = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(cli.config.as_deref(), &cli.overrides)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::ProjectRv(a) => cmd_project_rv(&cfg, a),
        Command::ResidualRv(a) => cmd_residual_rv(&cfg, a),
        Command::ProjectBev(a) => cmd_project_bev(&cfg, a),
        Command::ResidualBev(a) => cmd_streaming(&cfg, a, Streaming::ResidualBev),
        Command::Align(a) => cmd_streaming(&cfg, a, Streaming::Align),
        Command::Refine(a) => cmd_streaming(&cfg, a, Streaming::Refine),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::ExportPng(a) => cmd_export_png(a),
        Command::PrintConfig => {
            let text = toml::to_string(&cfg).map_err(|e| Error::Format(e.to_string()))?;
            print!("{text}");
            Ok(())
        }
    })
}

/// Files and the stats record produced for one frame.
struct FrameArtifacts {
    files: Vec<(String, Vec<u8>)>,
    stats: serde_json::Value,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes artifacts in frame order and appends their stats lines.
struct OrderedWriter {
    out: PathBuf,
    stats: fs::File,
}

impl OrderedWriter {
    fn new(out: &Path) -> Result<Self> {
        create_dir(out)?;
        let path = out.join("stats.jsonl");
        let stats = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            stats,
        })
    }

    fn commit(&mut self, batch: Vec<FrameArtifacts>) -> Result<()> {
        for a in batch {
            for (name, bytes) in a.files {
                let path = self.out.join(name);
                if let Some(dir) = path.parent() {
                    create_dir(dir)?;
                }
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            }
            let line = serde_json::to_string(&a.stats).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(self.stats, "{line}").map_err(|e| Error::io(self.out.join("stats.jsonl"), e))?;
        }
        Ok(())
    }
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("stats serialize to JSON")
}

fn container(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Vec<u8>> {
    Ok(FlatArray::new(h, w, c, data)?.to_bytes())
}

fn t_p2b_container(map: &BevIndexMap) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(2 * map.len());
    data.extend(map.coords.iter().map(|c| c[0] as f32));
    data.extend(map.coords.iter().map(|c| c[1] as f32));
    container(map.len(), 1, 2, data)
}

struct Sequence {
    dir: SequenceDir,
    indices: Vec<usize>,
    poses: Vec<Pose>,
}

fn open_sequence(path: &Path) -> Result<Sequence> {
    let dir = SequenceDir::new(path);
    let indices = dir.frame_indices()?;
    let poses = dir.read_poses()?;
    Ok(Sequence { dir, indices, poses })
}

impl Sequence {
    fn load(&self, idx: usize, cfg: &PipelineConfig) -> Result<ScanFrame> {
        self.dir.load_frame(idx, &self.poses, &cfg.moving_set())
    }
}

fn frame_name(prefix: &str, idx: usize) -> String {
    format!("{prefix}_{idx:06}.mosf")
}

/// Runs `work` over the sequence in parallel chunks and commits in order.
fn per_frame<F>(seq: &Sequence, out: &Path, work: F) -> Result<()>
where
    F: Fn(usize) -> Result<FrameArtifacts> + Sync,
{
    let mut writer = OrderedWriter::new(out)?;
    for chunk in seq.indices.chunks(CHUNK) {
        let batch = chunk.par_iter().map(|&i| work(i)).collect::<Result<Vec<_>>>()?;
        writer.commit(batch)?;
    }
    Ok(())
}

fn cmd_synth(cfg: &PipelineConfig, a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read scene {}: {e}", p.display())))?;
            toml::from_str::<SceneSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => match a.scene {
            ScenePreset::StaticWorld => SceneSpec::static_world(cfg.seed),
            ScenePreset::DefaultMover => SceneSpec::default_mover(cfg.seed),
        },
    };
    if let Some(n) = a.frames {
        spec.frames = n;
    }
    spec.validate()?;
    let seq = generate_sequence(&spec)?;
    let dir = SequenceDir::new(&a.out);
    dir.write(&seq.frames)?;
    let scene = toml::to_string(&spec).map_err(|e| Error::Format(e.to_string()))?;
    let scene_path = a.out.join("scene.toml");
    fs::write(&scene_path, scene).map_err(|e| Error::io(&scene_path, e))?;

    let path = a.out.join("stats.jsonl");
    let mut stats = String::new();
    for f in &seq.frames {
        let moving = f.labels.as_ref().map_or(0, |l| l.moving.iter().filter(|m| **m).count());
        stats.push_str(&serde_json::json!({"frame": f.index, "points": f.cloud.len(), "moving_points": moving}).to_string());
        stats.push('\n');
    }
    fs::write(&path, stats).map_err(|e| Error::io(&path, e))
}

fn cmd_project_rv(cfg: &PipelineConfig, a: &SeqArgs) -> Result<()> {
    let seq = open_sequence(&a.seq)?;
    let (h, w) = (cfg.rv.h, cfg.rv.w);
    per_frame(&seq, &a.out, |i| {
        let frame = seq.load(i, cfg)?;
        let proj = project_rv(&frame, &cfg.rv)?;
        let mut stats = FrameStats {
            frame: i,
            ..Default::default()
        };
        stats.record_rv(&proj);
        let idx: Vec<f32> = proj.t_r2p.idx.iter().map(|&v| v as f32).collect();
        Ok(FrameArtifacts {
            files: vec![
                (frame_name("rv", i), container(h, w, RV_CHANNELS, proj.image.data)?),
                (frame_name("t_r2p", i), container(h, w, 1, idx)?),
            ],
            stats: json(&stats),
        })
    })
}

fn cmd_residual_rv(cfg: &PipelineConfig, a: &SeqArgs) -> Result<()> {
    let seq = open_sequence(&a.seq)?;
    let present: std::collections::BTreeSet<usize> = seq.indices.iter().copied().collect();
    let (h, w, k) = (cfg.rv.h, cfg.rv.w, cfg.rv_past_frames);
    per_frame(&seq, &a.out, |i| {
        let frame = seq.load(i, cfg)?;
        let stride = cfg.stride_for(i)?;
        let past: Vec<ScanFrame> = strided_past_indices(i, stride, k)
            .into_iter()
            .filter(|j| present.contains(j))
            .map(|j| seq.load(j, cfg))
            .collect::<Result<_>>()?;
        let past_refs: Vec<&ScanFrame> = past.iter().collect();
        let proj = project_rv(&frame, &cfg.rv)?;
        let res = rv_residual_padded(&frame, &proj.image, &past_refs, k, &cfg.rv)?;
        let mut stats = FrameStats {
            frame: i,
            stride,
            past_frames: past.len(),
            ..Default::default()
        };
        stats.record_rv(&proj);
        stats.record_residual(&res);
        Ok(FrameArtifacts {
            files: vec![(frame_name("rv_residual", i), container(h, w, k, res.values)?)],
            stats: json(&stats),
        })
    })
}

fn cmd_project_bev(cfg: &PipelineConfig, a: &SeqArgs) -> Result<()> {
    let seq = open_sequence(&a.seq)?;
    per_frame(&seq, &a.out, |i| {
        let frame = seq.load(i, cfg)?;
        let img = bev_image_of_cloud(&frame.cloud, &cfg.bev)?;
        let t_p2b = build_t_p2b(&frame.cloud, &cfg.bev);
        let stats = serde_json::json!({
            "frame": i,
            "points": frame.cloud.len(),
            "bev_points": t_p2b.coords.iter().filter(|c| c[0] >= 0).count(),
            "occupied_cells": img.span.iter().filter(|v| **v > 0.0).count(),
        });
        Ok(FrameArtifacts {
            files: vec![
                (frame_name("bev", i), container(img.h, img.w, 1, img.span)?),
                (frame_name("t_p2b", i), t_p2b_container(&t_p2b)?),
            ],
            stats,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Streaming {
    ResidualBev,
    Align,
    Refine,
}

fn refine_weights(cfg: &PipelineConfig, out: &Path) -> Result<WeightSet> {
    let specs = refine_specs(cfg);
    let set = match &cfg.weights {
        Some(p) => load_weights(p)?,
        None => {
            let set = WeightSet::random(&specs, cfg.seed, 0.1);
            create_dir(out)?;
            save_weights(out.join("weights.json"), &set)?;
            set
        }
    };
    for (name, shape) in &specs {
        set.expect(name, shape)?;
    }
    Ok(set)
}

/// Commands that need the BEV window history: frames are pushed through
/// the streaming pipeline in order, then the per-frame tails run in
/// parallel.
fn cmd_streaming(cfg: &PipelineConfig, a: &SeqArgs, mode: Streaming) -> Result<()> {
    let seq = open_sequence(&a.seq)?;
    let weights = match mode {
        Streaming::Refine => Some(refine_weights(cfg, &a.out)?),
        _ => None,
    };
    let mut pipeline = FramePipeline::new(cfg.clone())?;
    let mut writer = OrderedWriter::new(&a.out)?;
    for chunk in seq.indices.chunks(CHUNK) {
        let mut staged: Vec<(ScanFrame, FrameOutput)> = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let frame = seq.load(i, cfg)?;
            let out = pipeline.process(frame.clone())?;
            staged.push((frame, out));
        }
        let batch = staged
            .par_iter()
            .map(|(frame, out)| streaming_tail(cfg, frame, out, mode, weights.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        writer.commit(batch)?;
    }
    Ok(())
}

fn streaming_tail(
    cfg: &PipelineConfig,
    frame: &ScanFrame,
    out: &FrameOutput,
    mode: Streaming,
    weights: Option<&WeightSet>,
) -> Result<FrameArtifacts> {
    let i = out.index;
    let bev = &out.bev_residual;
    let mut stats = json(&out.stats);
    let files = match mode {
        Streaming::ResidualBev => vec![(
            frame_name("bev_residual", i),
            container(bev.h, bev.w, bev.n, bev.channels.clone())?,
        )],
        Streaming::Align => {
            let m_b = Tensor::new(vec![bev.n, bev.h, bev.w], bev.channels.clone())?;
            let aligned = geometric_align(&m_b, &out.t_b2r, cfg.rv.h, cfg.rv.w)?;
            vec![
                (
                    frame_name("t_b2r", i),
                    container(cfg.rv.h, cfg.rv.w, 2, out.t_b2r.to_planes())?,
                ),
                (
                    frame_name("bev_to_rv", i),
                    container(cfg.rv.h, cfg.rv.w, bev.n, aligned.into_data())?,
                ),
            ]
        }
        Streaming::Refine => {
            let weights = weights.expect("refine loads weights");
            let scores = refine_frame(frame, out, weights, cfg)?;
            let classes = argmax_rows(&scores);
            let moving = classes.iter().filter(|c| **c == 1).count();
            stats["predicted_moving"] = moving.into();
            let raw = prediction_labels(&classes);
            let mut bytes = Vec::with_capacity(4 * raw.len());
            for v in raw {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            vec![(format!("predictions/{i:06}.label"), bytes)]
        }
    };
    Ok(FrameArtifacts { files, stats })
}

fn cmd_eval(cfg: &PipelineConfig, a: &EvalArgs) -> Result<()> {
    let seq = open_sequence(&a.seq)?;
    let moving = cfg.moving_set();
    let pred_frames: BTreeMap<usize, ()> = scan_numbers(&a.pred, "label")?.into_iter().map(|i| (i, ())).collect();
    let mut acc = EvalAccumulator::new(DistanceBins::default());
    let mut per_frame_stats = Vec::new();
    for &i in &seq.indices {
        if !pred_frames.contains_key(&i) {
            return Err(Error::Format(format!("no prediction for frame {i}")));
        }
        let frame = seq.load(i, cfg)?;
        let gt = frame
            .labels
            .as_ref()
            .ok_or_else(|| Error::Format(format!("frame {i} has no ground-truth labels")))?;
        let raw = scan_io::read_raw_labels(a.pred.join(format!("{i:06}.label")))?;
        let pred: Vec<bool> = raw.iter().map(|&r| prediction_is_moving(r, &moving)).collect();
        let mut one = EvalAccumulator::new(DistanceBins::default());
        one.add_frame(&pred, &gt.moving, &frame.cloud)?;
        per_frame_stats.push(serde_json::json!({"frame": i, "confusion": one.report().overall}));
        acc.merge(&one);
    }
    let report = acc.report();
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        create_dir(out)?;
        let write = |name: &str, text: String| {
            let p = out.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("report.csv", report.to_csv())?;
        write("report.txt", report.to_table())?;
        let mut lines = String::new();
        for s in per_frame_stats {
            lines.push_str(&s.to_string());
            lines.push('\n');
        }
        write("stats.jsonl", lines)?;
    }
    Ok(())
}

fn cmd_export_png(a: &PngArgs) -> Result<()> {
    let array = read_flat(&a.input)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    for p in export_png(&array, &a.out, a.style)? {
        println!("{}", p.display());
    }
    Ok(())
}
