//! Staged VQA datasets and their line-delimited JSON manifest.

use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::answer::{format_actions, format_keypoints, parse_answer, Answer};
use super::{ActionTuple, AnnotatedFrame, AnnotationError};
use crate::rng::{rng_for, stream};
use crate::GarmentType;

pub const PROMPTS: &str = include_str!("../../resources/prompts.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    KeypointDetection,
    ActionGeneration,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::KeypointDetection => "keypoint_detection",
            Task::ActionGeneration => "action_generation",
        }
    }
}

/// Stage 1 emits keypoint tasks only; stage 2 mixes in action tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetStage {
    Stage1,
    Stage2,
}

impl TryFrom<u8> for DatasetStage {
    type Error = EmitError;

    fn try_from(v: u8) -> Result<Self, EmitError> {
        match v {
            1 => Ok(DatasetStage::Stage1),
            2 => Ok(DatasetStage::Stage2),
            _ => Err(EmitError::InvalidStage(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaSample {
    pub task: Task,
    pub prompt: String,
    pub answer: String,
    pub image_ref: String,
    pub frame_id: String,
}

/// An annotated frame plus the action tuples of the fold that follows it
/// (empty when no fold follows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: AnnotatedFrame,
    pub actions: Vec<ActionTuple>,
}

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("no frames to emit")]
    EmptyInput,
    #[error("dataset stage must be 1 or 2, got {0}")]
    InvalidStage(u8),
    #[error("kp_ratio must be in [0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("frame {frame_id}: {source}")]
    Annotation { frame_id: String, source: AnnotationError },
    #[error("frame {frame_id}: answer does not round-trip: {answer}")]
    RoundTrip { frame_id: String, answer: String },
    #[error("malformed prompt templates: {0}")]
    Prompts(String),
}

/// Prompt templates keyed by task, with `[garment-type]` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub keypoint_detection: String,
    pub action_generation: String,
}

impl Prompts {
    pub const PLACEHOLDER: &'static str = "[garment-type]";

    pub fn bundled() -> Self {
        Self::parse(PROMPTS).expect("bundled prompts are valid")
    }

    /// Reads `task = template` lines; blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self, EmitError> {
        let (mut kp, mut act) = (None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line.split_once('=').ok_or_else(|| EmitError::Prompts(format!("no `=` in `{line}`")))?;
            let slot = match key.trim() {
                "keypoint_detection" => &mut kp,
                "action_generation" => &mut act,
                other => return Err(EmitError::Prompts(format!("unknown task `{other}`"))),
            };
            *slot = Some(value.trim().to_string());
        }
        match (kp, act) {
            (Some(keypoint_detection), Some(action_generation)) => Ok(Prompts { keypoint_detection, action_generation }),
            _ => Err(EmitError::Prompts("both tasks need a template".into())),
        }
    }

    pub fn render(&self, task: Task, garment: GarmentType) -> String {
        let template = match task {
            Task::KeypointDetection => &self.keypoint_detection,
            Task::ActionGeneration => &self.action_generation,
        };
        template.replace(Self::PLACEHOLDER, garment.display_name())
    }
}

/// Number of keypoint tasks a stage-2 emission over `records` produces:
/// `round(kp_ratio * n)`, raised to the number of frames without actions
/// when those alone exceed it.
pub fn stage2_keypoint_count(records: &[FrameRecord], kp_ratio: f64) -> usize {
    let forced = records.iter().filter(|r| r.actions.is_empty()).count();
    ((kp_ratio * records.len() as f64).round() as usize).max(forced)
}

/// Builds one sample per frame. Stage 2 assigns keypoint tasks to every
/// frame without actions, then to a seeded random choice of the others
/// until [`stage2_keypoint_count`] is reached; the rest get action tasks.
/// The sample order is a seeded shuffle.
pub fn emit_dataset(
    records: &[FrameRecord],
    stage: DatasetStage,
    kp_ratio: f64,
    seed: u64,
    prompts: &Prompts,
) -> Result<Vec<VqaSample>, EmitError> {
    if records.is_empty() {
        return Err(EmitError::EmptyInput);
    }
    if !(0.0..=1.0).contains(&kp_ratio) {
        return Err(EmitError::InvalidRatio(kp_ratio));
    }
    let mut rng = rng_for(seed, stream::DATASET);
    let mut tasks = vec![Task::KeypointDetection; records.len()];
    if stage == DatasetStage::Stage2 {
        let forced = records.iter().filter(|r| r.actions.is_empty()).count();
        let mut eligible: Vec<usize> = (0..records.len()).filter(|&i| !records[i].actions.is_empty()).collect();
        eligible.shuffle(&mut rng);
        let extra_kp = stage2_keypoint_count(records, kp_ratio) - forced;
        for &i in &eligible[extra_kp..] {
            tasks[i] = Task::ActionGeneration;
        }
    }
    let mut samples = records
        .iter()
        .zip(tasks)
        .map(|(r, task)| sample_for(r, task, prompts))
        .collect::<Result<Vec<_>, _>>()?;
    samples.shuffle(&mut rng);
    Ok(samples)
}

fn sample_for(record: &FrameRecord, task: Task, prompts: &Prompts) -> Result<VqaSample, EmitError> {
    let frame = &record.frame;
    let wrap = |source| EmitError::Annotation { frame_id: frame.frame_id.clone(), source };
    let (answer, round_trips) = match task {
        Task::KeypointDetection => {
            let kp = frame.keypoint_answer().map_err(wrap)?;
            let s = format_keypoints(&kp);
            let ok = parse_answer(&s, frame.garment) == Ok(Answer::Keypoints(kp));
            (s, ok)
        }
        Task::ActionGeneration => {
            let s = format_actions(&record.actions);
            let ok = parse_answer(&s, frame.garment) == Ok(Answer::Actions(record.actions.clone()));
            (s, ok)
        }
    };
    if !round_trips {
        return Err(EmitError::RoundTrip { frame_id: frame.frame_id.clone(), answer });
    }
    Ok(VqaSample {
        task,
        prompt: prompts.render(task, frame.garment),
        answer,
        image_ref: frame.image_ref.clone(),
        frame_id: frame.frame_id.clone(),
    })
}

/// One JSON object per line.
pub fn write_manifest<W: Write>(mut w: W, samples: &[VqaSample]) -> io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> io::Result<Vec<VqaSample>> {
    r.lines()
        .filter(|l| !l.as_ref().is_ok_and(|l| l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
