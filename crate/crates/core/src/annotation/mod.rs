//! Ground truth per frame, bi-arm action tuples and VQA datasets.
//!
//! An [`AnnotatedFrame`] records where each semantic keypoint lands in the
//! image and whether it is visible. Fold plans name keypoint pairs, which
//! [`derive_action_tuples`] turns into pixel-space pick/place tuples. The
//! [`answer`] submodule serializes both into `<kp>` / `<action>` answer
//! strings and parses them back, and [`dataset`] mixes them into staged
//! prompt/answer datasets.

pub mod answer;
pub mod dataset;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::mesh::KeypointBinding;
use crate::visibility::keypoint_visibility;
use crate::GarmentType;

pub use answer::{format_actions, format_keypoints, parse_action_answer, parse_answer, Answer, AnswerKeypoint, KeypointAnswer, ParseError};
pub use dataset::{emit_dataset, read_manifest, write_manifest, DatasetStage, EmitError, FrameRecord, Prompts, Task, VqaSample};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnnotationError {
    #[error("label `{0}` is not present")]
    MissingLabel(String),
    #[error("{arm} pick and place coincide at pixel {pixel:?}")]
    DegenerateAction { arm: Arm, pixel: [i64; 2] },
    #[error("{arm} action pixel {pixel:?} is outside the image")]
    ActionOutOfImage { arm: Arm, pixel: [i64; 2] },
    #[error("keypoint `{0}` is behind the camera")]
    BehindCamera(String),
    #[error("keypoint labels do not match the {garment} label set: {detail}")]
    LabelSet { garment: GarmentType, detail: String },
}

/// Which arm executes an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    LA,
    RA,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::LA => "LA",
            Arm::RA => "RA",
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One keypoint as seen in a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameKeypoint {
    pub label: String,
    /// Projection of the bound vertex (pixels, origin top-left).
    pub pixel: [f64; 2],
    pub visible: bool,
    /// False when the projection falls outside the image.
    pub in_frame: bool,
}

/// Ground truth for one image of a garment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedFrame {
    pub frame_id: String,
    pub garment: GarmentType,
    pub fold_stage: u32,
    /// In the garment kind's fixed label order.
    pub keypoints: Vec<FrameKeypoint>,
    /// Rendered image or preview path, or a placeholder for external renders.
    pub image_ref: String,
    pub camera: CameraModel,
}

impl AnnotatedFrame {
    pub fn keypoint(&self, label: &str) -> Option<&FrameKeypoint> {
        self.keypoints.iter().find(|k| k.label == label)
    }

    /// The frame's keypoints at integer pixels, as serialized in answers.
    pub fn keypoint_answer(&self) -> Result<KeypointAnswer, AnnotationError> {
        KeypointAnswer::new(
            self.garment,
            self.keypoints
                .iter()
                .map(|k| AnswerKeypoint { label: k.label.clone(), pixel: round_pixel(k.pixel), visible: k.visible })
                .collect(),
        )
    }
}

/// Rounds half-up to the integer pixel grid used in answers.
pub fn round_pixel(p: [f64; 2]) -> [i64; 2] {
    [(p[0] + 0.5).floor() as i64, (p[1] + 0.5).floor() as i64]
}

/// Everything [`annotate_frame`] needs about one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameInputs<'a> {
    pub frame_id: &'a str,
    pub garment: GarmentType,
    pub fold_stage: u32,
    pub image_ref: &'a str,
    pub camera: &'a CameraModel,
    pub positions: &'a [Point3<f64>],
    pub triangles: &'a [[u32; 3]],
    pub binding: &'a KeypointBinding,
}

/// Projects and visibility-tests every bound keypoint.
pub fn annotate_frame(inputs: &FrameInputs) -> Result<AnnotatedFrame, AnnotationError> {
    let views = keypoint_visibility(inputs.camera, inputs.positions, inputs.triangles, inputs.binding);
    let labels = inputs.garment.labels();
    if views.len() != labels.len() || !labels.iter().all(|l| views.iter().any(|v| v.label == *l)) {
        return Err(AnnotationError::LabelSet {
            garment: inputs.garment,
            detail: format!("binding has {:?}", views.iter().map(|v| v.label.as_str()).collect::<Vec<_>>()),
        });
    }
    let mut keypoints = Vec::with_capacity(labels.len());
    for label in labels {
        let view = views.iter().find(|v| v.label == *label).expect("checked above");
        let pixel = view.pixel.ok_or_else(|| AnnotationError::BehindCamera(view.label.clone()))?;
        keypoints.push(FrameKeypoint {
            label: view.label.clone(),
            pixel,
            visible: view.visible,
            in_frame: crate::visibility::in_image(inputs.camera, pixel.into()),
        });
    }
    Ok(AnnotatedFrame {
        frame_id: inputs.frame_id.to_string(),
        garment: inputs.garment,
        fold_stage: inputs.fold_stage,
        keypoints,
        image_ref: inputs.image_ref.to_string(),
        camera: *inputs.camera,
    })
}

/// Move keypoint `pick` onto keypoint `place`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPair {
    pub pick: String,
    pub place: String,
}

impl LabelPair {
    fn new(pick: &str, place: &str) -> Self {
        LabelPair { pick: pick.to_string(), place: place.to_string() }
    }
}

/// A fold expressed as up to one keypoint pair per arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub left: Option<LabelPair>,
    pub right: Option<LabelPair>,
}

impl FoldPlan {
    /// The scripted fold applied at `fold` (0 for the first fold), if the
    /// kind has one. Each kind is first folded in half along its mirror
    /// axis, left onto right, then folded bottom to top.
    pub fn scripted(kind: GarmentType, fold: usize) -> Option<FoldPlan> {
        let both = |l: (&str, &str), r: (&str, &str)| FoldPlan {
            left: Some(LabelPair::new(l.0, l.1)),
            right: Some(LabelPair::new(r.0, r.1)),
        };
        match (kind, fold) {
            (GarmentType::Towel, 0) => Some(both(("corner_tl", "corner_tr"), ("corner_bl", "corner_br"))),
            // after the first fold the left corners lie on the right ones
            (GarmentType::Towel, 1) => Some(both(("corner_bl", "corner_tl"), ("corner_br", "corner_tr"))),
            (GarmentType::Shorts, 0) => Some(both(("waist_left", "waist_right"), ("leg_outer_left", "leg_outer_right"))),
            (GarmentType::Shorts, 1) => Some(both(("leg_outer_left", "waist_left"), ("leg_outer_right", "waist_right"))),
            (GarmentType::Tshirt, 0) => Some(both(("shoulder_left", "shoulder_right"), ("waist_left", "waist_right"))),
            (GarmentType::Tshirt, 1) => Some(both(("waist_left", "shoulder_left"), ("waist_right", "shoulder_right"))),
            _ => None,
        }
    }

    pub fn arms(&self) -> impl Iterator<Item = (Arm, &LabelPair)> {
        [(Arm::LA, self.left.as_ref()), (Arm::RA, self.right.as_ref())]
            .into_iter()
            .filter_map(|(arm, pair)| pair.map(|p| (arm, p)))
    }
}

/// A pixel-space pick/place pair for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTuple {
    pub arm: Arm,
    pub pick: [i64; 2],
    pub place: [i64; 2],
}

/// Reads the plan's keypoints out of `frame`; one tuple per planned arm,
/// LA first.
pub fn derive_action_tuples(frame: &AnnotatedFrame, plan: &FoldPlan) -> Result<Vec<ActionTuple>, AnnotationError> {
    let pixel = |label: &str| {
        frame
            .keypoint(label)
            .map(|k| round_pixel(k.pixel))
            .ok_or_else(|| AnnotationError::MissingLabel(label.to_string()))
    };
    let inside = |p: [i64; 2]| p[0] >= 0 && p[1] >= 0 && p[0] < frame.camera.width as i64 && p[1] < frame.camera.height as i64;
    let mut tuples = Vec::new();
    for (arm, pair) in plan.arms() {
        let (pick, place) = (pixel(&pair.pick)?, pixel(&pair.place)?);
        if pick == place {
            return Err(AnnotationError::DegenerateAction { arm, pixel: pick });
        }
        for p in [pick, place] {
            if !inside(p) {
                return Err(AnnotationError::ActionOutOfImage { arm, pixel: p });
            }
        }
        tuples.push(ActionTuple { arm, pick, place });
    }
    Ok(tuples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;

    pub(crate) fn towel_frame(pixels: [[f64; 2]; 4]) -> AnnotatedFrame {
        let camera = CameraModel::centered(500.0, 512, 512, Pose::identity()).unwrap();
        AnnotatedFrame {
            frame_id: "f0".into(),
            garment: GarmentType::Towel,
            fold_stage: 0,
            keypoints: GarmentType::Towel
                .labels()
                .iter()
                .zip(pixels)
                .map(|(l, pixel)| FrameKeypoint { label: l.to_string(), pixel, visible: true, in_frame: true })
                .collect(),
            image_ref: "render://f0".into(),
            camera,
        }
    }

    #[test]
    fn towel_plan_reads_corner_pixels() {
        let frame = towel_frame([[100.2, 200.0], [300.0, 200.0], [100.0, 400.0], [300.0, 399.5]]);
        let plan = FoldPlan::scripted(GarmentType::Towel, 0).unwrap();
        let t = derive_action_tuples(&frame, &plan).unwrap();
        assert_eq!(
            t,
            vec![
                ActionTuple { arm: Arm::LA, pick: [100, 200], place: [300, 200] },
                ActionTuple { arm: Arm::RA, pick: [100, 400], place: [300, 400] },
            ]
        );
    }

    #[test]
    fn single_arm_plan_gives_one_tuple() {
        let frame = towel_frame([[100.0, 200.0], [300.0, 200.0], [100.0, 400.0], [300.0, 400.0]]);
        let plan = FoldPlan { left: Some(LabelPair::new("corner_tl", "corner_br")), right: None };
        let t = derive_action_tuples(&frame, &plan).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].arm, Arm::LA);
    }

    #[test]
    fn coincident_pick_and_place_is_degenerate() {
        let frame = towel_frame([[100.0, 200.0], [100.4, 200.0], [100.0, 400.0], [300.0, 400.0]]);
        let plan = FoldPlan::scripted(GarmentType::Towel, 0).unwrap();
        assert!(matches!(derive_action_tuples(&frame, &plan), Err(AnnotationError::DegenerateAction { arm: Arm::LA, .. })));
    }

    #[test]
    fn unknown_label_is_missing() {
        let frame = towel_frame([[100.0, 200.0], [300.0, 200.0], [100.0, 400.0], [300.0, 400.0]]);
        let plan = FoldPlan { left: Some(LabelPair::new("corner_tl", "collar")), right: None };
        assert_eq!(derive_action_tuples(&frame, &plan), Err(AnnotationError::MissingLabel("collar".into())));
    }

    #[test]
    fn scripted_plans_use_known_labels() {
        for kind in GarmentType::ALL {
            for fold in 0..crate::pipeline::MAX_FOLD_STAGES {
                let plan = FoldPlan::scripted(kind, fold).unwrap();
                for (_, pair) in plan.arms() {
                    assert!(kind.label_index(&pair.pick).is_some() && kind.label_index(&pair.place).is_some());
                }
            }
            assert!(FoldPlan::scripted(kind, crate::pipeline::MAX_FOLD_STAGES).is_none());
        }
    }

    #[test]
    fn half_pixels_round_up() {
        assert_eq!(round_pixel([10.5, -0.5]), [11, 0]);
        assert_eq!(round_pixel([10.49, -0.51]), [10, -1]);
    }
}
