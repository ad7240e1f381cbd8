//! The seeded end-to-end generator.
//!
//! Every sample is generated from its own seed, `derive_seed(run seed,
//! sample index)`: template, mesh, a random drop (and sometimes a lift and
//! twist), a camera, then the scripted folds. Each fold stage is annotated
//! and the fold that follows it yields the frame's action tuples. Samples
//! share nothing, so they run in parallel and any one of them can be
//! regenerated on its own.
//!
//! Output layout under the run directory:
//!
//! ```text
//! samples/<id>/sample.json          template, physics, camera, frames
//! samples/<id>/stage_<s>.obj        settled mesh after s folds
//! samples/<id>/stage_<s>.scene.json scene descriptor for that mesh
//! samples/<id>/stage_<s>_depth.png  16-bit depth preview (optional)
//! annotations.jsonl                 one FrameRecord per line
//! dataset.jsonl                     VQA samples
//! manifest.json                     samples, seeds, files and failures
//! timing.json                       wall-clock timings (not in the manifest,
//!                                   which must be reproducible byte for byte)
//! ```

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    annotate_frame, derive_action_tuples, emit_dataset, write_manifest, AnnotationError, DatasetStage, EmitError, FoldPlan,
    FrameInputs, FrameRecord, Prompts,
};
use crate::camera::{sample_camera, Aabb, CameraError, CameraModel};
use crate::config::PipelineConfig;
use crate::mesh::{bind_keypoints, triangulate_boundary, KeypointBinding, MeshError, TriMesh};
use crate::raster::rasterize_depth;
use crate::rng::{derive_seed, rng_for, stream};
use crate::scene::{export_scene, sample_scene, Footprint, SceneError};
use crate::sim::{apply_action, sample_physics_with, ActionSettings, DeformAction, Grasp, SimError, SimParams, SimState};
use crate::templates::{boundary_curve, keypoint_anchors, sample_template_with, TemplateError, TemplateParams};
use crate::GarmentType;

/// Number of scripted fold stages each garment kind supports.
pub const MAX_FOLD_STAGES: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error("preview: {0}")]
    Image(#[from] image::ImageError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Identity of one sample in a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub index: usize,
    pub kind: GarmentType,
    pub seed: u64,
    /// Directory name; contains the seed, so outputs are addressed by it.
    pub id: String,
}

impl SampleSpec {
    pub fn new(run_seed: u64, index: usize, kind: GarmentType) -> Self {
        let seed = derive_seed(run_seed, index as u64);
        SampleSpec { index, kind, seed, id: format!("{index:05}_{kind}_{seed:016x}") }
    }
}

/// Samples of a run: towels first, then shorts, then T-shirts.
pub fn sample_specs(config: &PipelineConfig) -> Vec<SampleSpec> {
    GarmentType::ALL
        .iter()
        .flat_map(|&k| std::iter::repeat_n(k, config.run.counts.get(k)))
        .enumerate()
        .map(|(i, k)| SampleSpec::new(config.run.seed, i, k))
        .collect()
}

/// Everything recorded about one generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFile {
    pub spec: SampleSpec,
    pub template: TemplateParams,
    pub physics: SimParams,
    pub binding: KeypointBinding,
    pub camera: CameraModel,
    /// The deformation script, initial actions first.
    pub actions: Vec<DeformAction>,
    /// One record per fold stage.
    pub records: Vec<FrameRecord>,
    /// Paths relative to the run directory.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub spec: SampleSpec,
    pub status: SampleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub frames: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub fold_stages: u32,
    pub samples: Vec<ManifestEntry>,
    pub frame_count: usize,
    pub dataset_samples: usize,
    pub failures: usize,
    /// Run-level artifacts, relative to the run directory.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub workers: usize,
    /// Seconds per sample, in manifest order; 0 for resumed samples.
    pub sample_seconds: Vec<f64>,
    pub resumed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub timing: Timing,
}

/// Stage-invariant products of a sample's seed.
struct Garment {
    template: TemplateParams,
    mesh: TriMesh,
    binding: KeypointBinding,
    physics: SimParams,
}

fn build_garment(spec: &SampleSpec, config: &PipelineConfig) -> Result<Garment, PipelineError> {
    let template = sample_template_with(spec.kind, spec.seed, &config.ranges.templates)?;
    let mesh = triangulate_boundary(&boundary_curve(&template)?, config.run.target_edge, config.run.curve_tolerance)?;
    let binding = bind_keypoints(&mesh, &keypoint_anchors(&template)?)?;
    let physics = sample_physics_with(spec.seed, &config.ranges.physics);
    Ok(Garment { template, mesh, binding, physics })
}

/// Random drop, plus a lift-and-twist with the configured probability.
fn initial_actions(spec: &SampleSpec, config: &PipelineConfig, binding: &KeypointBinding) -> Vec<DeformAction> {
    let d = &config.ranges.deform;
    let mut rng = rng_for(spec.seed, stream::DEFORM);
    let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let tilt = d.drop_tilt_deg.sample(&mut rng).to_radians();
    let axis = Unit::new_normalize(Vector3::new(heading.cos(), heading.sin(), 0.0));
    let orientation = Rotation3::from_axis_angle(&axis, tilt) * Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    let mut actions = vec![DeformAction::Drop { orientation, height: d.drop_height.sample(&mut rng) }];
    if rng.gen_bool(d.lift_rotate_probability) {
        let entry = &binding.entries[rng.gen_range(0..binding.entries.len())];
        actions.push(DeformAction::LiftRotate {
            grasp: vec![entry.vertex],
            lift_height: d.lift_height.sample(&mut rng),
            rotation: d.lift_rotation_deg.sample(&mut rng).to_radians(),
            duration: d.lift_duration,
        });
    }
    actions
}

/// The grasp-arc realizing `plan` on the current state. Place targets sit
/// one cloth thickness above the target keypoint's vertex.
fn fold_action(
    plan: &FoldPlan,
    binding: &KeypointBinding,
    state: &SimState,
    physics: &SimParams,
    rng: &mut impl Rng,
    config: &PipelineConfig,
) -> Result<DeformAction, PipelineError> {
    let vertex = |label: &str| binding.vertex(label).ok_or_else(|| AnnotationError::MissingLabel(label.to_string()));
    let mut grasps = Vec::new();
    for (_, pair) in plan.arms() {
        let place = state.positions[vertex(&pair.place)? as usize] + Vector3::new(0.0, 0.0, physics.thickness);
        grasps.push(Grasp { vertex: vertex(&pair.pick)?, place });
    }
    let d = &config.ranges.deform;
    Ok(DeformAction::GraspArc { grasps, arc_height: d.arc_height.sample(rng), duration: d.fold_duration.sample(rng) })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Generates one sample into `run_dir/samples/<id>`.
pub fn generate_sample(spec: &SampleSpec, config: &PipelineConfig, run_dir: &Path) -> Result<SampleFile, PipelineError> {
    let g = build_garment(spec, config)?;
    let settings = ActionSettings::from(&config.ranges.deform);
    let rel_dir = format!("samples/{}", spec.id);
    let dir = run_dir.join(&rel_dir);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let mut actions = initial_actions(spec, config, &g.binding);
    let mut state = SimState::at_rest(&g.mesh, 0.0);
    for a in &actions {
        state = apply_action(&state, &g.mesh, &g.physics, a, &settings)?.state;
    }
    let bbox = Aabb::of(&state.positions).expect("meshes are nonempty");
    let camera = sample_camera(spec.seed, &bbox, &config.ranges.camera)?;
    let footprint = Footprint::of(&bbox);

    let mut fold_rng = rng_for(spec.seed, stream::FOLD);
    let mut records = Vec::new();
    let mut files = Vec::new();
    let stages = config.run.fold_stages as usize;
    for stage in 0..=stages {
        let frame_id = format!("{}_s{stage}", spec.id);
        let obj_name = format!("stage_{stage}.obj");
        let scene_rel = format!("{rel_dir}/stage_{stage}.scene.json");
        let scene = sample_scene(derive_seed(spec.seed, stage as u64), obj_name.clone(), 0, camera, footprint, &config.ranges.scene)?;
        export_scene(&scene, std::slice::from_ref(&state.positions), g.mesh.uv(), g.mesh.triangles(), &run_dir.join(&scene_rel))?;
        files.push(format!("{rel_dir}/{obj_name}"));
        files.push(scene_rel);

        let image_ref = if config.run.previews {
            let rel = format!("{rel_dir}/stage_{stage}_depth.png");
            rasterize_depth(&camera, &state.positions, g.mesh.triangles()).write_png16(&run_dir.join(&rel))?;
            files.push(rel.clone());
            rel
        } else {
            format!("render://{frame_id}")
        };
        let frame = annotate_frame(&FrameInputs {
            frame_id: &frame_id,
            garment: spec.kind,
            fold_stage: stage as u32,
            image_ref: &image_ref,
            camera: &camera,
            positions: &state.positions,
            triangles: g.mesh.triangles(),
            binding: &g.binding,
        })?;

        let mut tuples = Vec::new();
        if stage < stages {
            let plan = FoldPlan::scripted(spec.kind, stage).expect("fold_stages is validated against MAX_FOLD_STAGES");
            tuples = derive_action_tuples(&frame, &plan)?;
            let fold = fold_action(&plan, &g.binding, &state, &g.physics, &mut fold_rng, config)?;
            let outcome = apply_action(&state, &g.mesh, &g.physics, &fold, &settings)?;
            if config.run.export_keyframes {
                for (k, kf) in outcome.keyframes.iter().enumerate() {
                    let rel = format!("{rel_dir}/keyframes/fold_{stage}_{k:03}.obj");
                    let path = run_dir.join(&rel);
                    fs::create_dir_all(path.parent().expect("has parent")).map_err(io_err(&path))?;
                    let mut w = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
                    crate::mesh::obj::write_obj(&mut w, &kf.positions, g.mesh.uv(), g.mesh.triangles()).map_err(io_err(&path))?;
                    files.push(rel);
                }
            }
            state = outcome.state;
            actions.push(fold);
        }
        records.push(FrameRecord { frame, actions: tuples });
    }

    let file = SampleFile {
        spec: spec.clone(),
        template: g.template,
        physics: g.physics,
        binding: g.binding,
        camera,
        actions,
        records,
        files,
    };
    let path = dir.join("sample.json");
    let json = serde_json::to_vec_pretty(&file).map_err(|source| PipelineError::Json { path: path.clone(), source })?;
    // written last, so its presence marks a complete sample
    write_atomic(&path, &json)?;
    Ok(file)
}

/// Loads a previously completed sample, if its record is present and
/// matches `spec`.
pub fn load_sample(spec: &SampleSpec, run_dir: &Path) -> Option<SampleFile> {
    let path = run_dir.join("samples").join(&spec.id).join("sample.json");
    let text = fs::read_to_string(path).ok()?;
    let file: SampleFile = serde_json::from_str(&text).ok()?;
    let complete = file.spec == *spec && file.files.iter().all(|f| run_dir.join(f).exists());
    complete.then_some(file)
}

/// Runs every sample of `config` into `config.run.output_dir`, reusing
/// completed samples already on disk, then writes the annotation file,
/// the dataset and the manifest. Sample failures are recorded in the
/// manifest and do not stop the run.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let started = Instant::now();
    let run_dir = &config.run.output_dir;
    fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let specs = sample_specs(config);
    let workers = if config.run.workers == 0 { rayon::current_num_threads() } else { config.run.workers };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| PipelineError::Pool(e.to_string()))?;
    let results: Vec<(Result<SampleFile, PipelineError>, f64, bool)> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                if let Some(done) = load_sample(spec, run_dir) {
                    return (Ok(done), 0.0, true);
                }
                let t = Instant::now();
                let r = generate_sample(spec, config, run_dir);
                (r, t.elapsed().as_secs_f64(), false)
            })
            .collect()
    });

    let mut entries = Vec::new();
    let mut records = Vec::new();
    for (spec, (result, _, _)) in specs.iter().zip(&results) {
        entries.push(match result {
            Ok(file) => {
                records.extend(file.records.iter().cloned());
                ManifestEntry {
                    spec: spec.clone(),
                    status: SampleStatus::Ok,
                    error: None,
                    frames: file.records.iter().map(|r| r.frame.frame_id.clone()).collect(),
                    files: file.files.clone(),
                }
            }
            Err(e) => ManifestEntry {
                spec: spec.clone(),
                status: SampleStatus::Failed,
                error: Some(e.to_string()),
                frames: Vec::new(),
                files: Vec::new(),
            },
        });
    }

    let ann_path = run_dir.join("annotations.jsonl");
    let mut ann = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut ann, r).map_err(|source| PipelineError::Json { path: ann_path.clone(), source })?;
        ann.push(b'\n');
    }
    write_atomic(&ann_path, &ann)?;

    let dataset = if records.is_empty() {
        Vec::new()
    } else {
        let stage = DatasetStage::try_from(config.dataset.stage)?;
        emit_dataset(&records, stage, config.dataset.kp_ratio, config.run.seed, &Prompts::bundled())?
    };
    let mut buf = Vec::new();
    write_manifest(&mut buf, &dataset).map_err(io_err(&run_dir.join("dataset.jsonl")))?;
    write_atomic(&run_dir.join("dataset.jsonl"), &buf)?;

    let failures = entries.iter().filter(|e| e.status == SampleStatus::Failed).count();
    let manifest = RunManifest {
        seed: config.run.seed,
        fold_stages: config.run.fold_stages,
        frame_count: records.len(),
        dataset_samples: dataset.len(),
        failures,
        samples: entries,
        files: vec!["annotations.jsonl".into(), "dataset.jsonl".into(), "manifest.json".into()],
    };
    let path = run_dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|source| PipelineError::Json { path: path.clone(), source })?;
    write_atomic(&path, &json)?;

    let timing = Timing {
        total_seconds: started.elapsed().as_secs_f64(),
        workers,
        sample_seconds: results.iter().map(|r| r.1).collect(),
        resumed: results.iter().filter(|r| r.2).count(),
    };
    let path = run_dir.join("timing.json");
    let json = serde_json::to_vec_pretty(&timing).map_err(|source| PipelineError::Json { path: path.clone(), source })?;
    write_atomic(&path, &json)?;
    Ok(RunSummary { manifest, timing })
}

/// Reads `annotations.jsonl`.
pub fn read_annotations(path: &Path) -> Result<Vec<FrameRecord>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|source| PipelineError::Json { path: path.to_path_buf(), source }))
        .collect()
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| PipelineError::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_follow_counts_and_seed() {
        let mut cfg = PipelineConfig::default();
        cfg.run.counts = crate::config::KindCounts { towel: 2, shorts: 1, tshirt: 3 };
        let specs = sample_specs(&cfg);
        let kinds: Vec<GarmentType> = specs.iter().map(|s| s.kind).collect();
        use GarmentType::*;
        assert_eq!(kinds, vec![Towel, Towel, Shorts, Tshirt, Tshirt, Tshirt]);
        assert_eq!(specs[3], SampleSpec::new(cfg.run.seed, 3, Tshirt));
        assert_ne!(specs[0].seed, specs[1].seed);
    }
}
