use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use garment_synth::annotation::{emit_dataset, parse_action_answer, write_manifest, DatasetStage, Prompts, Task};
use garment_synth::camera::Plane;
use garment_synth::config::{PipelineConfig, TemplateRanges};
use garment_synth::decoder::{decode_trajectory, validate_trajectory, DecoderParams, Primitive};
use garment_synth::mesh::obj::read_obj;
use garment_synth::metrics::{evaluate, ground_truth_from_frames, read_predictions, EvalReport, DEFAULT_THRESHOLDS};
use garment_synth::pipeline::{read_annotations, run_pipeline, write_json, SampleFile};
use garment_synth::raster::rasterize_depth;
use garment_synth::rng::derive_seed;
use garment_synth::scene::{export_scene, sample_scene, SceneDescriptor};
use garment_synth::GarmentType;

/// Synthetic garment keypoint data: generate, emit, evaluate and decode.
#[derive(Parser)]
#[command(name = "garment-synth", version)]
struct Cli {
    /// Pipeline configuration (TOML); the bundled defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Template-range file replacing the `templates` section.
    #[arg(long, global = true)]
    template_config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate annotated samples, the annotation file and the dataset.
    Generate(GenerateArgs),
    /// Emit a staged VQA dataset from an annotation file.
    Emit(EmitArgs),
    /// Score keypoint predictions against annotated frames.
    Evaluate(EvaluateArgs),
    /// Decode an `<action>` answer into per-arm trajectories.
    Decode(DecodeArgs),
    /// Write a 16-bit depth preview of a scene.
    Preview(PreviewArgs),
    /// Export a scene descriptor and mesh for one fold stage of a sample.
    ExportScene(ExportSceneArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    towel: Option<usize>,
    #[arg(long)]
    shorts: Option<usize>,
    #[arg(long)]
    tshirt: Option<usize>,
    /// Fold stages per sample.
    #[arg(long)]
    fold_stages: Option<u32>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Skip depth previews.
    #[arg(long)]
    no_previews: bool,
}

#[derive(Args)]
struct EmitArgs {
    /// Annotation file; defaults to `<out>/annotations.jsonl`.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: Option<u8>,
    #[arg(long)]
    kp_ratio: Option<f64>,
    /// Dataset file; defaults to `<out>/dataset_stage<N>.jsonl`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions, one `{frame_id, category, x, y, confidence}` per line.
    #[arg(long)]
    pred: PathBuf,
    /// Annotation file with the ground truth.
    #[arg(long)]
    gt: PathBuf,
    /// Pixel thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
    thresholds: Vec<f64>,
    /// Writes the full report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// The `<action> ...` answer.
    #[arg(long)]
    answer: String,
    /// Scene descriptor providing the camera.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value = "fold")]
    primitive: String,
    #[arg(long, default_value_t = 0.0)]
    table_height: f64,
    #[arg(long, default_value_t = DecoderParams::default().pregrasp_height)]
    pregrasp_height: f64,
    #[arg(long, default_value_t = DecoderParams::default().lift_height)]
    lift_height: f64,
    #[arg(long, default_value_t = DecoderParams::default().arc_coefficient)]
    arc_coefficient: f64,
    /// Trajectory file; printed to stdout otherwise.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PreviewArgs {
    /// Scene descriptor; its mesh file is resolved next to it.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ExportSceneArgs {
    /// Sample directory containing `sample.json`.
    #[arg(long)]
    sample: PathBuf,
    #[arg(long, default_value_t = 0)]
    stage: usize,
    /// Scene file to write; the mesh is written next to it.
    #[arg(long)]
    output: PathBuf,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &cli.template_config {
        cfg.ranges.templates = TemplateRanges::load(p).with_context(|| format!("loading {}", p.display()))?;
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.run.output_dir = out.clone();
    }
    Ok(cfg)
}

fn generate(mut cfg: PipelineConfig, args: &GenerateArgs) -> Result<ExitCode> {
    let c = &mut cfg.run.counts;
    c.towel = args.towel.unwrap_or(c.towel);
    c.shorts = args.shorts.unwrap_or(c.shorts);
    c.tshirt = args.tshirt.unwrap_or(c.tshirt);
    cfg.run.fold_stages = args.fold_stages.unwrap_or(cfg.run.fold_stages);
    cfg.run.workers = args.workers.unwrap_or(cfg.run.workers);
    cfg.run.previews &= !args.no_previews;
    cfg.validate()?;
    let summary = run_pipeline(&cfg)?;
    let m = &summary.manifest;
    println!(
        "{} samples ({} resumed), {} frames, {} dataset samples, {} failures in {:.1} s on {} workers",
        m.samples.len(),
        summary.timing.resumed,
        m.frame_count,
        m.dataset_samples,
        m.failures,
        summary.timing.total_seconds,
        summary.timing.workers
    );
    for e in m.samples.iter().filter(|e| e.error.is_some()) {
        eprintln!("sample {} failed: {}", e.spec.id, e.error.as_deref().unwrap_or_default());
    }
    Ok(if m.failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn emit(cfg: PipelineConfig, args: &EmitArgs) -> Result<()> {
    let out = &cfg.run.output_dir;
    let ann = args.annotations.clone().unwrap_or_else(|| out.join("annotations.jsonl"));
    let records = read_annotations(&ann)?;
    let stage = args.stage.unwrap_or(cfg.dataset.stage);
    let ratio = args.kp_ratio.unwrap_or(cfg.dataset.kp_ratio);
    let samples = emit_dataset(&records, DatasetStage::try_from(stage)?, ratio, cfg.run.seed, &Prompts::bundled())?;
    let path = args.output.clone().unwrap_or_else(|| out.join(format!("dataset_stage{stage}.jsonl")));
    let mut buf = Vec::new();
    write_manifest(&mut buf, &samples)?;
    fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
    let kp = samples.iter().filter(|s| s.task == Task::KeypointDetection).count();
    println!("{} samples ({kp} keypoint, {} action) -> {}", samples.len(), samples.len() - kp, path.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

fn print_row(name: &str, r: &EvalReport) {
    let aps: Vec<String> = r.ap_percent.iter().map(|a| format!("{:>7}", fmt_opt(*a, 1))).collect();
    println!(
        "{name:<8}{} {:>7} {:>7} {:>7}",
        aps.join(""),
        fmt_opt(r.map_percent, 1),
        fmt_opt(r.akd, 2),
        fmt_opt(r.detection_rate.map(|d| 100.0 * d), 1)
    );
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let file = fs::File::open(&args.pred).with_context(|| format!("opening {}", args.pred.display()))?;
    let preds = read_predictions(BufReader::new(file))?;
    let frames: Vec<_> = read_annotations(&args.gt)?.into_iter().map(|r| r.frame).collect();
    let overall = evaluate(&preds, &ground_truth_from_frames(&frames), &args.thresholds)?;

    let header: Vec<String> = args.thresholds.iter().map(|t| format!("{:>7}", format!("AP@{t}"))).collect();
    println!("{:<8}{} {:>7} {:>7} {:>7}", "garment", header.join(""), "mAP", "AKD", "det%");
    let mut per_kind = Vec::new();
    for kind in GarmentType::ALL {
        let kf: Vec<_> = frames.iter().filter(|f| f.garment == kind).cloned().collect();
        if kf.is_empty() {
            continue;
        }
        let ids: std::collections::BTreeSet<&str> = kf.iter().map(|f| f.frame_id.as_str()).collect();
        let kp: Vec<_> = preds.iter().filter(|p| ids.contains(p.frame_id.as_str())).cloned().collect();
        let r = evaluate(&kp, &ground_truth_from_frames(&kf), &args.thresholds)?;
        print_row(kind.as_str(), &r);
        per_kind.push((kind, r));
    }
    print_row("all", &overall);
    if let Some(path) = &args.report {
        let per_garment: std::collections::BTreeMap<String, EvalReport> =
            per_kind.into_iter().map(|(k, r)| (k.to_string(), r)).collect();
        write_json(path, &serde_json::json!({ "overall": overall, "per_garment": per_garment }))?;
    }
    Ok(())
}

fn decode_cmd(args: &DecodeArgs) -> Result<ExitCode> {
    let tuples = parse_action_answer(&args.answer).map_err(|e| anyhow::anyhow!("answer: {e}"))?;
    let scene = SceneDescriptor::read(&args.scene).with_context(|| format!("reading {}", args.scene.display()))?;
    let params = DecoderParams {
        pregrasp_height: args.pregrasp_height,
        lift_height: args.lift_height,
        arc_coefficient: args.arc_coefficient,
        table_plane: Plane::horizontal(args.table_height),
    };
    let primitive: Primitive = args.primitive.parse()?;
    let trajectory = decode_trajectory(&tuples, &scene.camera, &params, primitive)?;
    let report = validate_trajectory(&trajectory);
    let value = serde_json::json!({ "trajectory": trajectory, "validation": report });
    match &args.output {
        Some(p) => write_json(p, &value)?,
        None => println!("{}", serde_json::to_string_pretty(&value)?),
    }
    for v in &report.violations {
        eprintln!("violation: {v:?}");
    }
    Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn scene_mesh(scene_path: &Path, scene: &SceneDescriptor) -> Result<garment_synth::mesh::obj::ObjData> {
    let dir = scene_path.parent().unwrap_or(Path::new("."));
    let obj = dir.join(&scene.mesh_file);
    let file = fs::File::open(&obj).with_context(|| format!("opening {}", obj.display()))?;
    Ok(read_obj(BufReader::new(file))?)
}

fn preview(args: &PreviewArgs) -> Result<()> {
    let scene = SceneDescriptor::read(&args.scene).with_context(|| format!("reading {}", args.scene.display()))?;
    let mesh = scene_mesh(&args.scene, &scene)?;
    let depth = rasterize_depth(&scene.camera, &mesh.positions, &mesh.triangles);
    depth.write_png16(&args.output)?;
    println!("{} of {} pixels covered -> {}", depth.covered_pixels(), depth.depth.len(), args.output.display());
    Ok(())
}

fn export_scene_cmd(cfg: &PipelineConfig, seed: Option<u64>, args: &ExportSceneArgs) -> Result<()> {
    let path = args.sample.join("sample.json");
    let sample: SampleFile = serde_json::from_str(&fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?)?;
    let record = sample.records.get(args.stage).with_context(|| format!("sample has no stage {}", args.stage))?;
    let source_scene = args.sample.join(format!("stage_{}.scene.json", args.stage));
    let source = SceneDescriptor::read(&source_scene).with_context(|| format!("reading {}", source_scene.display()))?;
    let mesh = scene_mesh(&source_scene, &source)?;
    let mesh_file = format!(
        "{}.obj",
        args.output.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").trim_end_matches(".scene")
    );
    // a new seed redraws the scene dressing; otherwise the stored one is kept
    let descriptor = match seed {
        Some(s) => sample_scene(derive_seed(s, args.stage as u64), mesh_file, 0, record.frame.camera, source.garment_footprint, &cfg.ranges.scene)?,
        None => SceneDescriptor { mesh_file, frame: 0, keyframe_files: Vec::new(), ..source },
    };
    let obj = export_scene(&descriptor, &[mesh.positions], &mesh.uv, &mesh.triangles, &args.output)?;
    println!("{} + {}", args.output.display(), obj.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Generate(a) => generate(cfg, a),
        Command::Emit(a) => emit(cfg, a).map(|_| ExitCode::SUCCESS),
        Command::Evaluate(a) => evaluate_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Decode(a) => decode_cmd(a),
        Command::Preview(a) => preview(a).map(|_| ExitCode::SUCCESS),
        Command::ExportScene(a) => {
            if !a.sample.is_dir() {
                bail!("{} is not a sample directory", a.sample.display());
            }
            export_scene_cmd(&cfg, cli.seed, a).map(|_| ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
