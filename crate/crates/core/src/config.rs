//! Range and pipeline configuration.
//!
//! All sampled quantities (template dimensions, physics coefficients,
//! camera placement, scene dressing) are drawn from `[min, max]` ranges kept
//! in a TOML file. The default file is compiled in from
//! `resources/default.toml`; [`PipelineConfig::load`] reads a replacement.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::templates::GarmentType;

pub const DEFAULT_CONFIG: &str = include_str!("../resources/default.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Closed interval `[min, max]`, written as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn fixed(value: f64) -> Self {
        Self { min: value, max: value }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

impl TryFrom<[f64; 2]> for Range {
    type Error = String;

    fn try_from([min, max]: [f64; 2]) -> Result<Self, Self::Error> {
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(format!("invalid range [{min}, {max}]"));
        }
        Ok(Range { min, max })
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.min, r.max]
    }
}

/// Integer interval, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u32; 2]", into = "[u32; 2]")]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        rng.gen_range(self.min..=self.max)
    }
}

impl TryFrom<[u32; 2]> for CountRange {
    type Error = String;

    fn try_from([min, max]: [u32; 2]) -> Result<Self, Self::Error> {
        if min > max {
            return Err(format!("invalid range [{min}, {max}]"));
        }
        Ok(CountRange { min, max })
    }
}

impl From<CountRange> for [u32; 2] {
    fn from(r: CountRange) -> Self {
        [r.min, r.max]
    }
}

/// Ranges for one garment kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindRanges {
    pub skeleton: BTreeMap<String, Range>,
    pub bezier_offset: Range,
    pub corner_radius: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateRanges {
    pub towel: KindRanges,
    pub shorts: KindRanges,
    pub tshirt: KindRanges,
}

impl TemplateRanges {
    pub fn for_kind(&self, kind: GarmentType) -> &KindRanges {
        match kind {
            GarmentType::Towel => &self.towel,
            GarmentType::Shorts => &self.shorts,
            GarmentType::Tshirt => &self.tshirt,
        }
    }

    /// Template ranges from a standalone file holding only `[templates.*]`
    /// tables (the `--template-config` override).
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        #[derive(Deserialize)]
        struct Doc {
            templates: TemplateRanges,
        }
        let text = read(path)?;
        let doc: Doc = toml::from_str(&text)?;
        doc.templates.validate()?;
        Ok(doc.templates)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for kind in GarmentType::ALL {
            let ranges = self.for_kind(kind);
            let expected = kind.skeleton_names();
            let names: Vec<&str> = ranges.skeleton.keys().map(String::as_str).collect();
            let mut want: Vec<&str> = expected.to_vec();
            want.sort_unstable();
            if names != want {
                return Err(ConfigError::Invalid(format!(
                    "{kind} skeleton must define exactly {want:?}, found {names:?}"
                )));
            }
            for (name, r) in &ranges.skeleton {
                if r.min <= 0.0 {
                    return Err(ConfigError::Invalid(format!(
                        "{kind}.{name}: dimensions must be strictly positive"
                    )));
                }
            }
            if ranges.corner_radius.min < 0.0 {
                return Err(ConfigError::Invalid(format!("{kind}: negative corner radius")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsRanges {
    pub stretch_stiffness: Range,
    pub bend_stiffness: Range,
    pub friction: Range,
    pub drag: Range,
    pub thickness: Range,
    pub damping: Range,
    pub gravity: f64,
    pub dt: f64,
    pub solver_iterations: u32,
}

impl PhysicsRanges {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |name: &str, r: &Range| {
            if r.min < 0.0 || r.max > 1.0 {
                Err(ConfigError::Invalid(format!("physics.{name} must lie in [0, 1]")))
            } else {
                Ok(())
            }
        };
        unit("stretch_stiffness", &self.stretch_stiffness)?;
        unit("bend_stiffness", &self.bend_stiffness)?;
        unit("damping", &self.damping)?;
        if self.friction.min < 0.0 || self.drag.min < 0.0 {
            return Err(ConfigError::Invalid("physics friction/drag must be >= 0".into()));
        }
        if self.thickness.min <= 0.0 {
            return Err(ConfigError::Invalid("physics.thickness must be > 0".into()));
        }
        if !(self.dt > 0.0) || self.solver_iterations == 0 {
            return Err(ConfigError::Invalid("physics dt and solver_iterations must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformRanges {
    pub drop_height: Range,
    pub drop_tilt_deg: Range,
    pub lift_rotate_probability: f64,
    pub lift_height: Range,
    pub lift_rotation_deg: Range,
    pub lift_duration: f64,
    pub fold_duration: Range,
    pub arc_height: Range,
    pub settle_max_steps: usize,
    pub settle_velocity_epsilon: f64,
    pub keyframe_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRanges {
    pub width: u32,
    pub height: u32,
    pub focal: Range,
    pub radius: Range,
    pub elevation_deg: Range,
    pub target_jitter: f64,
    pub margin: f64,
    pub max_attempts: u32,
}

impl CameraRanges {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.width == 0 || self.height == 0 || self.focal.min <= 0.0 || self.radius.min <= 0.0 {
            return Err(ConfigError::Invalid("camera sizes must be positive".into()));
        }
        if self.elevation_deg.min < 0.0 || self.elevation_deg.max > 90.0 {
            return Err(ConfigError::Invalid("camera elevation must lie in [0, 90] degrees".into()));
        }
        if !(0.0..0.5).contains(&self.margin) {
            return Err(ConfigError::Invalid("camera margin must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRanges {
    pub surface_textures: Vec<String>,
    pub environment_textures: Vec<String>,
    pub distractor_assets: Vec<String>,
    pub distractor_count: CountRange,
    pub distractor_scale: Range,
    pub light_count: CountRange,
    pub light_intensity: Range,
}

/// All sampling ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeConfig {
    pub version: u32,
    pub templates: TemplateRanges,
    pub physics: PhysicsRanges,
    pub deform: DeformRanges,
    pub camera: CameraRanges,
    pub scene: SceneRanges,
}

impl RangeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != 1 {
            return Err(ConfigError::Invalid(format!("unsupported config version {}", self.version)));
        }
        self.templates.validate()?;
        self.physics.validate()?;
        self.camera.validate()?;
        if self.scene.surface_textures.is_empty()
            || self.scene.environment_textures.is_empty()
            || (self.scene.distractor_assets.is_empty() && self.scene.distractor_count.max > 0)
        {
            return Err(ConfigError::Invalid("scene asset lists must not be empty".into()));
        }
        Ok(())
    }
}

impl Default for RangeConfig {
    fn default() -> Self {
        PipelineConfig::default().ranges
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindCounts {
    pub towel: usize,
    pub shorts: usize,
    pub tshirt: usize,
}

impl KindCounts {
    pub fn total(&self) -> usize {
        self.towel + self.shorts + self.tshirt
    }

    pub fn get(&self, kind: GarmentType) -> usize {
        match kind {
            GarmentType::Towel => self.towel,
            GarmentType::Shorts => self.shorts,
            GarmentType::Tshirt => self.tshirt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub seed: u64,
    pub counts: KindCounts,
    pub fold_stages: u32,
    pub target_edge: f64,
    pub curve_tolerance: f64,
    pub workers: usize,
    pub previews: bool,
    pub export_keyframes: bool,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSettings {
    /// 1 = keypoint tasks only, 2 = keypoint/action mixture.
    pub stage: u8,
    pub kp_ratio: f64,
}

/// Full pipeline configuration: run settings plus every range section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub run: RunSettings,
    pub dataset: DatasetSettings,
    #[serde(flatten)]
    pub ranges: RangeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("bundled default config is valid")
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&read(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ranges.validate()?;
        if !(self.run.target_edge > 0.0) || !(self.run.curve_tolerance > 0.0) {
            return Err(ConfigError::Invalid("target_edge and curve_tolerance must be > 0".into()));
        }
        if self.run.fold_stages as usize > crate::pipeline::MAX_FOLD_STAGES {
            return Err(ConfigError::Invalid(format!(
                "fold_stages must be at most {}",
                crate::pipeline::MAX_FOLD_STAGES
            )));
        }
        if !matches!(self.dataset.stage, 1 | 2) || !(0.0..=1.0).contains(&self.dataset.kp_ratio) {
            return Err(ConfigError::Invalid("dataset.stage must be 1 or 2 and kp_ratio in [0, 1]".into()));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}
