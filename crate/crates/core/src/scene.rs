//! Render-agnostic scene descriptors.
//!
//! A descriptor names a mesh frame, the camera, texture and distractor
//! asset references and light placeholders, so an external renderer can
//! reproduce the view. Assets are referenced by id only.

use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::{Point2, Point3, Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Aabb, CameraModel, Pose};
use crate::config::SceneRanges;
use crate::mesh::obj::write_obj;
use crate::rng::{rng_for, stream};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("distractor {index} ({asset}) overlaps the garment footprint")]
    DistractorOverlap { index: usize, asset: String },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("frame {frame} not available ({available} frames)")]
    MissingFrame { frame: usize, available: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed scene file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Axis-aligned rectangle on the table plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Footprint {
    pub fn of(bbox: &Aabb) -> Self {
        Footprint { min: [bbox.min.x, bbox.min.y], max: [bbox.max.x, bbox.max.y] }
    }

    fn overlaps(&self, other: &Footprint) -> bool {
        self.min[0] < other.max[0] && other.min[0] < self.max[0] && self.min[1] < other.max[1] && other.min[1] < self.max[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub asset_id: String,
    /// Object-to-world transform.
    pub pose: Pose,
    /// Uniform scale; the object is assumed to fit a cube of this half-size
    /// around its origin.
    pub scale: f64,
}

impl Distractor {
    fn footprint(&self) -> Footprint {
        let c = self.pose.translation;
        Footprint { min: [c.x - self.scale, c.y - self.scale], max: [c.x + self.scale, c.y + self.scale] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub position: [f64; 3],
    /// Watts, in the renderer's point-light units.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScene")]
pub struct SceneDescriptor {
    pub mesh_file: String,
    pub frame: usize,
    pub camera: CameraModel,
    pub surface_texture_ref: String,
    pub environment_texture_ref: String,
    /// Table-plane bounds of the garment; distractors must stay outside.
    pub garment_footprint: Footprint,
    pub distractors: Vec<Distractor>,
    pub lights: Vec<Light>,
    /// Optional per-keyframe OBJ files of the deformation leading to `frame`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keyframe_files: Vec<String>,
}

#[derive(Deserialize)]
struct RawScene {
    mesh_file: String,
    frame: usize,
    camera: CameraModel,
    surface_texture_ref: String,
    environment_texture_ref: String,
    garment_footprint: Footprint,
    distractors: Vec<Distractor>,
    lights: Vec<Light>,
    #[serde(default)]
    keyframe_files: Vec<String>,
}

impl TryFrom<RawScene> for SceneDescriptor {
    type Error = SceneError;

    fn try_from(r: RawScene) -> Result<Self, SceneError> {
        let s = SceneDescriptor {
            mesh_file: r.mesh_file,
            frame: r.frame,
            camera: r.camera,
            surface_texture_ref: r.surface_texture_ref,
            environment_texture_ref: r.environment_texture_ref,
            garment_footprint: r.garment_footprint,
            distractors: r.distractors,
            lights: r.lights,
            keyframe_files: r.keyframe_files,
        };
        s.validate()?;
        Ok(s)
    }
}

impl SceneDescriptor {
    /// Checks the footprint invariant and basic field sanity.
    pub fn validate(&self) -> Result<(), SceneError> {
        for (index, d) in self.distractors.iter().enumerate() {
            if !(d.scale > 0.0 && d.scale.is_finite()) {
                return Err(SceneError::Invalid(format!("distractor {index} has non-positive scale")));
            }
            if d.footprint().overlaps(&self.garment_footprint) {
                return Err(SceneError::DistractorOverlap { index, asset: d.asset_id.clone() });
            }
        }
        if self.lights.iter().any(|l| !(l.intensity >= 0.0)) {
            return Err(SceneError::Invalid("light intensity must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self, SceneError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Samples textures, distractors around the garment and lights above it.
/// Distractors are rejection-sampled on a ring outside the footprint.
pub fn sample_scene(
    seed: u64,
    mesh_file: String,
    frame: usize,
    camera: CameraModel,
    footprint: Footprint,
    ranges: &SceneRanges,
) -> Result<SceneDescriptor, SceneError> {
    let mut rng = rng_for(seed, stream::SCENE);
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, list: &[String]| list[rng.gen_range(0..list.len())].clone();
    let surface_texture_ref = pick(&mut rng, &ranges.surface_textures);
    let environment_texture_ref = pick(&mut rng, &ranges.environment_textures);

    let centre = Point2::new(
        0.5 * (footprint.min[0] + footprint.max[0]),
        0.5 * (footprint.min[1] + footprint.max[1]),
    );
    let half_diag = 0.5 * Vector3::new(footprint.max[0] - footprint.min[0], footprint.max[1] - footprint.min[1], 0.0).norm();
    let count = if ranges.distractor_assets.is_empty() { 0 } else { ranges.distractor_count.sample(&mut rng) };
    let mut distractors = Vec::new();
    for _ in 0..count {
        let scale = ranges.distractor_scale.sample(&mut rng);
        let asset_id = pick(&mut rng, &ranges.distractor_assets);
        // anywhere on this ring clears the footprint's circumscribed circle
        let r = rng.gen_range(half_diag + 1.5 * scale..=half_diag + 1.5 * scale + 0.15);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
        let pose = Pose {
            rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), yaw),
            translation: Vector3::new(centre.x + r * phi.cos(), centre.y + r * phi.sin(), 0.0),
        };
        let d = Distractor { asset_id, pose, scale };
        let taken = distractors.iter().any(|o: &Distractor| o.footprint().overlaps(&d.footprint()));
        if !taken {
            distractors.push(d);
        }
    }
    let lights = (0..ranges.light_count.sample(&mut rng))
        .map(|_| {
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(0.3..1.0);
            Light {
                position: [centre.x + r * phi.cos(), centre.y + r * phi.sin(), rng.gen_range(1.0..2.0)],
                intensity: ranges.light_intensity.sample(&mut rng),
            }
        })
        .collect();
    let s = SceneDescriptor {
        mesh_file,
        frame,
        camera,
        surface_texture_ref,
        environment_texture_ref,
        garment_footprint: footprint,
        distractors,
        lights,
        keyframe_files: Vec::new(),
    };
    s.validate()?;
    Ok(s)
}

/// Writes the descriptor's mesh frame as OBJ next to `scene_path`
/// (using `descriptor.mesh_file` as the file name) and the descriptor
/// itself as JSON. Returns the OBJ path.
pub fn export_scene(
    descriptor: &SceneDescriptor,
    frames: &[Vec<Point3<f64>>],
    uv: &[[f64; 2]],
    triangles: &[[u32; 3]],
    scene_path: &Path,
) -> Result<PathBuf, SceneError> {
    descriptor.validate()?;
    let positions = frames
        .get(descriptor.frame)
        .ok_or(SceneError::MissingFrame { frame: descriptor.frame, available: frames.len() })?;
    let dir = scene_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let obj_path = dir.join(&descriptor.mesh_file);
    let mut w = BufWriter::new(fs::File::create(&obj_path)?);
    write_obj(&mut w, positions, uv, triangles)?;
    fs::write(scene_path, descriptor.to_json())?;
    Ok(obj_path)
}
