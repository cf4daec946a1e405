//! `smokecascade`: fixtures, detection, matching, refiner training, cascade
//! runs, evaluation, overlays and architecture budgets.
//!
//! Exit status is 0 on success, 1 on validation or configuration errors
//! (including bad arguments) and 2 on I/O errors. Files created by a failed
//! command are removed.

mod outputs;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use smokecascade::annotations::{
    generate_fixture, load_segment_annotations, read_detection_stream, write_detection_stream, FixtureScript,
    ScenarioSpec, VideoSegments,
};
use smokecascade::arch::{build_yolov5n, build_yolov5tiny, compute_budget, ArchitectureSpec, OracleRole};
use smokecascade::cascade::{
    build_detector, collect_training_clips, open_video, read_verdicts, render_overlays, run_files, run_video,
    write_run, CascadeConfig, DETECTIONS_SUFFIX, VERDICTS_SUFFIX,
};
use smokecascade::evaluation::{
    evaluate_run, load_verdict_files, sweep_table, threshold_sweep, Aggregation, SweepRow,
};
use smokecascade::nn::StepSchedule;
use smokecascade::refiner::{
    build_head, read_clip_dataset, save_checkpoint, train_head, write_clip_dataset, ClipSample, HeadVariant,
    TemporalHeadSpec, TrainConfig,
};
use smokecascade::video::{write_fixture_dir, FrameDirSource, VideoSource, SEGMENTS_FILE};
use smokecascade::{Error, Result};

use outputs::Outputs;

#[derive(Parser, Debug)]
#[command(name = "smokecascade", version, about = "Coarse-to-fine smoky vehicle detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic fixture video: frames, segments, per-frame truth.
    Fixture(FixtureArgs),
    /// Run both detectors on every frame and write the detection stream.
    Detect(StageArgs),
    /// Run detection and smoke-vehicle matching; write verdicts and overlays
    /// of matched (green) and unmatched (yellow) smoke.
    Match(StageArgs),
    /// Collect labeled training clips from annotated videos.
    CollectClips(CollectArgs),
    /// Train a clip classifier on collected clips.
    TrainRefiner(TrainArgs),
    /// Run the full cascade and write verdict and detection files.
    Run(RunArgs),
    /// Score verdict files against segment annotations.
    Evaluate(EvalArgs),
    /// Draw cascade decisions onto frames.
    Render(RenderArgs),
    /// Print parameter count and FLOPs of a detector architecture.
    Budget(BudgetArgs),
}

/// Cascade settings shared by commands that run detectors.
#[derive(Args, Debug, Clone)]
struct CascadeFlags {
    /// Flat TOML cascade config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Smoke detector confidence threshold [default: 0.2].
    #[arg(long = "smoke-thresh")]
    smoke_thresh: Option<f64>,
    /// Smoke-vehicle distance bound in pixels [default: 50].
    #[arg(long = "l-dist")]
    l_dist: Option<f64>,
    /// Temporal extent K of refinement clips [default: 3].
    #[arg(long)]
    k: Option<usize>,
    /// Seed of noisy detectors [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

impl CascadeFlags {
    fn load(&self) -> Result<CascadeConfig> {
        let mut cfg = match &self.config {
            Some(p) => CascadeConfig::load(p)?,
            None => CascadeConfig::default(),
        };
        if let Some(v) = self.smoke_thresh {
            cfg.smoke_threshold = v;
        }
        if let Some(v) = self.l_dist {
            cfg.matching.l_dist = v;
        }
        if let Some(v) = self.k {
            cfg.clip.k = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct FixtureArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed of the layout and the rendering noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Event script (TOML); replaces the generated scenario.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 360)]
    height: u32,
    #[arg(long, default_value_t = 200)]
    frames: u64,
    /// Smoke-with-vehicle events.
    #[arg(long, default_value_t = 3)]
    smoky: usize,
    /// Smoke-without-vehicle events.
    #[arg(long = "smoke-only", default_value_t = 3)]
    smoke_only: usize,
    /// Shadow decoys below smoke-free vehicles.
    #[arg(long, default_value_t = 5)]
    decoys: usize,
    /// Video id [default: scenario_<seed>, or the script's].
    #[arg(long = "video-id")]
    video_id: Option<String>,
    /// Scene id written to the segment file.
    #[arg(long)]
    scene: Option<String>,
}

#[derive(Args, Debug)]
struct StageArgs {
    #[command(flatten)]
    cascade: CascadeFlags,
    /// Video directory of frame_NNNNNN.png files.
    #[arg(long)]
    video: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CollectArgs {
    #[command(flatten)]
    cascade: CascadeFlags,
    /// Annotated video directories; repeat for several.
    #[arg(long, required = true)]
    video: Vec<PathBuf>,
    /// Output clip dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cascade: CascadeFlags,
    /// Clip dataset directories; repeat for several.
    #[arg(long, required = true)]
    clips: Vec<PathBuf>,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    /// Classifier head [default: suffix3d, or the config's].
    #[arg(long, value_parser = parse_variant)]
    refiner: Option<HeadVariant>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 8)]
    batch_size: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Epochs between tenfold learning-rate drops.
    #[arg(long = "lr-step", default_value_t = 4)]
    lr_step: usize,
    /// Channels of the first residual stage.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Stop once training accuracy reaches this value.
    #[arg(long = "until-accuracy")]
    until_accuracy: Option<f64>,
    /// Disable random-crop augmentation.
    #[arg(long = "no-augment")]
    no_augment: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    cascade: CascadeFlags,
    /// Video directories; repeat for several.
    #[arg(long, required = true)]
    video: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Expected classifier head; must match the checkpoint [default: suffix3d].
    #[arg(long, value_parser = parse_variant)]
    refiner: Option<HeadVariant>,
    /// Refiner checkpoint, overriding the config's.
    #[arg(long = "refiner-checkpoint")]
    refiner_checkpoint: Option<PathBuf>,
    /// Skip smoke-vehicle matching.
    #[arg(long = "no-matching")]
    no_matching: bool,
    /// Skip clip refinement.
    #[arg(long = "no-refiner")]
    no_refiner: bool,
    /// Videos processed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Verdict files or directories holding <video>.verdicts.jsonl files.
    #[arg(long, required = true)]
    verdicts: Vec<PathBuf>,
    /// Segment annotation files.
    #[arg(long)]
    segments: Vec<PathBuf>,
    /// Video directories whose segments.jsonl holds the annotations.
    #[arg(long)]
    video: Vec<PathBuf>,
    /// Aggregation over scenes.
    #[arg(long, default_value = "pooled", value_parser = ["pooled", "scene"])]
    agg: String,
    /// Also sweep these smoke thresholds over the detection streams next to
    /// the verdict files.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    /// Machine-readable report file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Video directory.
    #[arg(long)]
    video: PathBuf,
    /// Verdict file of the video.
    #[arg(long)]
    verdicts: PathBuf,
    /// Detection stream [default: sibling <video>.detections.jsonl].
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Output directory for overlay images.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BudgetArgs {
    /// yolov5tiny, yolov5n, or an architecture TOML file.
    #[arg(long, default_value = "yolov5tiny")]
    arch: String,
    /// Square input side in pixels.
    #[arg(long, default_value_t = 640)]
    size: usize,
}

fn parse_variant(s: &str) -> std::result::Result<HeadVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut outputs = Outputs::default();
    match dispatch(cli.command, &mut outputs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            outputs.discard();
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn dispatch(cmd: Command, out: &mut Outputs) -> Result<()> {
    match cmd {
        Command::Fixture(a) => fixture(a, out),
        Command::Detect(a) => detect(a, out),
        Command::Match(a) => match_debug(a, out),
        Command::CollectClips(a) => collect(a, out),
        Command::TrainRefiner(a) => train(a, out),
        Command::Run(a) => run(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Render(a) => render(a, out),
        Command::Budget(a) => budget(a),
    }
}

fn create_dir(out: &mut Outputs, dir: &Path) -> Result<()> {
    out.claim(dir);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn fixture(a: FixtureArgs, out: &mut Outputs) -> Result<()> {
    let mut script = match &a.script {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<FixtureScript>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => FixtureScript::scenario(
            &ScenarioSpec {
                width: a.width,
                height: a.height,
                num_frames: a.frames,
                smoke_with_vehicle: a.smoky,
                smoke_without_vehicle: a.smoke_only,
                shadow_decoys: a.decoys,
            },
            a.seed,
        )?,
    };
    if let Some(id) = a.video_id {
        script.video_id = id;
    }
    if let Some(scene) = a.scene {
        script.scene_id = scene;
    }
    let fx = generate_fixture(&script, a.seed)?;
    create_dir(out, &a.out)?;
    write_fixture_dir(&fx, &a.out)?;
    println!(
        "{}: {} frames, {} smoky",
        fx.segments.video_id,
        fx.frames.len(),
        fx.segments.labels()?.positives()
    );
    Ok(())
}

fn detect(a: StageArgs, out: &mut Outputs) -> Result<()> {
    let cfg = a.cascade.load()?;
    let mut input = open_video(&a.video)?;
    let truth = input.truth.as_deref();
    let mut smoke = build_detector(&cfg, &cfg.smoke_detector, OracleRole::Smoke, truth)?;
    let mut vehicle = build_detector(&cfg, &cfg.vehicle_detector, OracleRole::Vehicle, truth)?;
    let mut dets = Vec::new();
    while let Some(frame) = input.source.next_frame()? {
        dets.extend(smoke.detect(&frame)?);
        dets.extend(vehicle.detect(&frame)?);
    }
    create_dir(out, &a.out)?;
    let path = out.claim(&a.out.join(format!("{}{DETECTIONS_SUFFIX}", input.video_id)));
    write_detection_stream(&dets, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn match_debug(a: StageArgs, out: &mut Outputs) -> Result<()> {
    let mut cfg = a.cascade.load()?;
    cfg.matching_enabled = true;
    cfg.refiner_enabled = false;
    let result = run_video(&cfg, &a.video)?;
    create_dir(out, &a.out)?;
    let files = run_files(&a.out, &result.video_id);
    out.claim(&files.verdicts);
    out.claim(&files.detections);
    write_run(&a.out, &result)?;
    let overlays = out.claim(&a.out.join("overlays"));
    let mut source = FrameDirSource::open(&a.video)?;
    let written = render_overlays(&mut source, &result.verdicts, &result.detections, &overlays)?;
    let matched: usize = result.verdicts.iter().map(|v| v.pairs.len()).sum();
    let unmatched: usize = result.verdicts.iter().map(|v| v.dropped_by_matching).sum();
    println!("{matched} matched, {unmatched} unmatched smoke detections; {} overlays", written.len());
    Ok(())
}

fn collect(a: CollectArgs, out: &mut Outputs) -> Result<()> {
    let cfg = a.cascade.load()?;
    let mut clips: Vec<ClipSample> = Vec::new();
    for v in &a.video {
        clips.extend(collect_training_clips(&cfg, v)?);
    }
    create_dir(out, &a.out)?;
    write_clip_dataset(&a.out, &clips)?;
    let smoke = clips.iter().filter(|c| c.label.map(|l| l.class_index()) == Some(1)).count();
    println!("{} clips ({smoke} smoke, {} non-smoke)", clips.len(), clips.len() - smoke);
    Ok(())
}

fn train(a: TrainArgs, out: &mut Outputs) -> Result<()> {
    let cfg = a.cascade.load()?;
    let mut clips = Vec::new();
    for dir in &a.clips {
        clips.extend(read_clip_dataset(dir)?);
    }
    let k = match (a.cascade.k, clips.first()) {
        (Some(k), _) => k,
        (None, Some(c)) => c.k(),
        (None, None) => cfg.clip.k,
    };
    let clip = cfg.clip.with_k(k);
    let variant = a.refiner.unwrap_or(cfg.refiner);
    let spec = TemporalHeadSpec::new(variant, k).with_base_width(a.width);
    spec.validate()?;
    let seed = a.cascade.seed.unwrap_or(cfg.seed);
    let mut model = build_head(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let train = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        schedule: StepSchedule {
            initial: a.lr,
            step_epochs: a.lr_step,
            ..StepSchedule::default()
        },
        seed,
        augment: !a.no_augment,
        target_accuracy: a.until_accuracy,
        ..TrainConfig::default()
    };
    let history = train_head(&mut model, &clips, &clip, &train)?;
    for e in &history.epochs {
        println!(
            "epoch {:>3}  lr {:.0e}  loss {:.4}  accuracy {:.4}",
            e.epoch, e.lr, e.loss, e.accuracy
        );
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(out, parent)?;
    }
    save_checkpoint(&mut model, &clip, &out.claim(&a.out))?;
    Ok(())
}

fn run(a: RunArgs, out: &mut Outputs) -> Result<()> {
    let mut cfg = a.cascade.load()?;
    if let Some(v) = a.refiner {
        cfg.refiner = v;
    }
    if let Some(p) = a.refiner_checkpoint {
        cfg.refiner_checkpoint = Some(p);
    }
    cfg.matching_enabled &= !a.no_matching;
    cfg.refiner_enabled &= !a.no_refiner;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let runs = pool.install(|| a.video.par_iter().map(|v| run_video(&cfg, v)).collect::<Result<Vec<_>>>())?;
    let mut ids = BTreeSet::new();
    for r in &runs {
        if !ids.insert(r.video_id.as_str()) {
            return Err(Error::Validation(format!("two videos share the id {:?}", r.video_id)));
        }
    }
    create_dir(out, &a.out)?;
    for r in &runs {
        let files = run_files(&a.out, &r.video_id);
        out.claim(&files.verdicts);
        out.claim(&files.detections);
        write_run(&a.out, r)?;
        let positives = r.verdicts.iter().filter(|v| v.verdict).count();
        println!("{}: {positives}/{} frames smoky", r.video_id, r.verdicts.len());
    }
    Ok(())
}

fn verdict_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.to_string_lossy().ends_with(VERDICTS_SUFFIX))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(p.clone());
        }
    }
    Ok(paths)
}

fn evaluate(a: EvalArgs, out: &mut Outputs) -> Result<()> {
    let mode: Aggregation = a.agg.parse()?;
    let paths = verdict_paths(&a.verdicts)?;
    let runs = load_verdict_files(&paths)?;
    let mut annotations: Vec<VideoSegments> = Vec::new();
    for p in &a.segments {
        annotations.extend(load_segment_annotations(p)?);
    }
    for v in &a.video {
        annotations.extend(load_segment_annotations(&v.join(SEGMENTS_FILE))?);
    }
    let report = evaluate_run(&runs, &annotations, mode)?;
    print!("{}", report.to_table());

    let mut sweep: Vec<SweepRow> = Vec::new();
    if !a.thresholds.is_empty() {
        let mut streams = Vec::new();
        for (path, run) in paths.iter().zip(&runs) {
            let det_path = path.with_file_name(format!("{}{DETECTIONS_SUFFIX}", run.video_id));
            let ann = annotations
                .iter()
                .find(|s| s.video_id == run.video_id)
                .expect("ids checked by evaluate_run");
            streams.push((read_detection_stream(&det_path)?, ann.labels()?));
        }
        let refs: Vec<_> = streams.iter().map(|(d, l)| (d.as_slice(), l)).collect();
        sweep = threshold_sweep(&refs, &a.thresholds)?;
        print!("\n{}", sweep_table(&sweep));
    }
    if let Some(path) = &a.out {
        let mut value = serde_json::to_value(&report).expect("report serializes");
        if !sweep.is_empty() {
            value["sweep"] = serde_json::to_value(&sweep).expect("sweep serializes");
        }
        let text = serde_json::to_string_pretty(&value).expect("json");
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(out, parent)?;
        }
        fs::write(out.claim(path), text + "\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn render(a: RenderArgs, out: &mut Outputs) -> Result<()> {
    let verdicts = read_verdicts(&a.verdicts)?;
    let det_path = match a.detections {
        Some(p) => p,
        None => {
            let name = a.verdicts.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let stem = name.strip_suffix(VERDICTS_SUFFIX).ok_or_else(|| {
                Error::Validation(format!("cannot infer the detection stream of {}", a.verdicts.display()))
            })?;
            a.verdicts.with_file_name(format!("{stem}{DETECTIONS_SUFFIX}"))
        }
    };
    let dets = read_detection_stream(&det_path)?;
    let mut source = FrameDirSource::open(&a.video)?;
    out.claim(&a.out);
    let written = render_overlays(&mut source, &verdicts, &dets, &a.out)?;
    println!("{} overlay images", written.len());
    Ok(())
}

fn budget(a: BudgetArgs) -> Result<()> {
    let spec: ArchitectureSpec = match a.arch.as_str() {
        "yolov5tiny" => build_yolov5tiny(),
        "yolov5n" => build_yolov5n(),
        path => {
            let p = Path::new(path);
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ArchitectureSpec::from_toml(&text)?
        }
    };
    let b = compute_budget(&spec, a.size)?;
    println!("architecture: {}", spec.name);
    println!("parameters:   {} ({:.3}M)", b.parameter_count, b.params_millions());
    println!("GFLOPs:       {:.3} at {}x{}", b.gflops(), a.size, a.size);
    Ok(())
}
