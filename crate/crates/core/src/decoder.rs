//! Rule-based decoding of pixel action tuples into per-arm trajectories.
//!
//! Both pixels of a tuple are deprojected onto the table plane. Each arm
//! then gets seven waypoints: hover above the pick point, grasp, lift,
//! pass over an apex midway to the place point, hover above it, place and
//! back off with the gripper open. The apex height is
//! `max(lift_height, arc_coefficient * |place - pick|)`, the same rule the
//! simulator's grasp arc uses.

use nalgebra::{Point2, Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::annotation::{ActionTuple, Arm};
use crate::camera::{CameraError, CameraModel, Plane};

/// Tolerance for endpoint and on-axis checks (m).
pub const ENDPOINT_TOLERANCE: f64 = 1e-6;
/// Slack for comparing waypoint heights, which are recovered from
/// positions and so carry rounding error (equal heights are allowed).
pub const HEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pregrasp,
    Grasp,
    Lift,
    Transit,
    Preplace,
    Place,
    Release,
}

impl Phase {
    pub const SEQUENCE: [Phase; 7] =
        [Phase::Pregrasp, Phase::Grasp, Phase::Lift, Phase::Transit, Phase::Preplace, Phase::Place, Phase::Release];

    /// Gripper state the phase requires.
    pub fn gripper(self) -> Gripper {
        match self {
            Phase::Pregrasp | Phase::Release => Gripper::Open,
            _ => Gripper::Closed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gripper {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Fold,
}

impl std::str::FromStr for Primitive {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, DecodeError> {
        match s {
            "fold" => Ok(Primitive::Fold),
            other => Err(DecodeError::UnsupportedPrimitive(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWaypoint {
    pub arm: Arm,
    pub position: Point3<f64>,
    pub gripper: Gripper,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub pregrasp_height: f64,
    pub lift_height: f64,
    /// Apex height per meter of pick-to-place distance.
    pub arc_coefficient: f64,
    pub table_plane: Plane,
}

impl Default for DecoderParams {
    fn default() -> Self {
        DecoderParams { pregrasp_height: 0.10, lift_height: 0.15, arc_coefficient: 0.5, table_plane: Plane::horizontal(0.0) }
    }
}

impl DecoderParams {
    /// Heights must be positive and finite, and `lift_height` at least
    /// `pregrasp_height`, so the transit apex is never below the approach
    /// waypoints.
    pub fn validate(&self) -> Result<(), DecodeError> {
        let n = self.table_plane.normal.norm();
        let ok = self.pregrasp_height > 0.0
            && self.lift_height > 0.0
            && self.pregrasp_height.is_finite()
            && self.lift_height.is_finite()
            && self.lift_height >= self.pregrasp_height
            && self.arc_coefficient > 0.0
            && self.arc_coefficient <= 1.0
            && n > 0.0
            && n.is_finite()
            && self.table_plane.offset.is_finite();
        if ok {
            Ok(())
        } else {
            Err(DecodeError::InvalidParams)
        }
    }

    /// Unit table normal and the plane offset rescaled to match it.
    fn unit_plane(&self) -> (Unit<Vector3<f64>>, f64) {
        let len = self.table_plane.normal.norm();
        (Unit::new_unchecked(self.table_plane.normal / len), self.table_plane.offset / len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTrajectory {
    pub arm: Arm,
    pub waypoints: Vec<TrajectoryWaypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub primitive: Primitive,
    /// Plane the heights are measured from.
    pub table_plane: Plane,
    pub arms: Vec<ArmTrajectory>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("no action tuples to decode")]
    Empty,
    #[error("{arm} appears more than once")]
    DuplicateArm { arm: Arm },
    #[error("{arm}: cannot deproject pixel {pixel:?}: {source}")]
    Deprojection { arm: Arm, pixel: [i64; 2], source: CameraError },
    #[error("{arm}: pick and place deproject to the same point")]
    DegenerateAction { arm: Arm },
    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),
    #[error("decoder heights must be > 0, arc coefficient in (0, 1] and the table normal nonzero")]
    InvalidParams,
}

/// Height of the apex for a carry of `distance` meters.
pub fn apex_height(params: &DecoderParams, distance: f64) -> f64 {
    params.lift_height.max(params.arc_coefficient * distance)
}

pub fn decode_trajectory(
    tuples: &[ActionTuple],
    camera: &CameraModel,
    params: &DecoderParams,
    primitive: Primitive,
) -> Result<Trajectory, DecodeError> {
    params.validate()?;
    if tuples.is_empty() {
        return Err(DecodeError::Empty);
    }
    let Primitive::Fold = primitive;
    let (n, _) = params.unit_plane();
    let mut arms: Vec<ArmTrajectory> = Vec::new();
    for t in tuples {
        if arms.iter().any(|a| a.arm == t.arm) {
            return Err(DecodeError::DuplicateArm { arm: t.arm });
        }
        let lift = |pixel: [i64; 2]| {
            camera
                .deproject_to_plane(Point2::new(pixel[0] as f64, pixel[1] as f64), &params.table_plane)
                .map_err(|source| DecodeError::Deprojection { arm: t.arm, pixel, source })
        };
        let (pick, place) = (lift(t.pick)?, lift(t.place)?);
        let distance = (place - pick).norm();
        if distance == 0.0 {
            return Err(DecodeError::DegenerateAction { arm: t.arm });
        }
        let mid = nalgebra::center(&pick, &place);
        let up = |p: Point3<f64>, h: f64| p + n.into_inner() * h;
        let positions = [
            up(pick, params.pregrasp_height),
            pick,
            up(pick, params.lift_height),
            up(mid, apex_height(params, distance)),
            up(place, params.pregrasp_height),
            place,
            up(place, params.pregrasp_height),
        ];
        let waypoints = Phase::SEQUENCE
            .iter()
            .zip(positions)
            .map(|(&phase, position)| TrajectoryWaypoint { arm: t.arm, position, gripper: phase.gripper(), phase })
            .collect();
        arms.push(ArmTrajectory { arm: t.arm, waypoints });
    }
    arms.sort_by_key(|a| a.arm);
    Ok(Trajectory { primitive, table_plane: params.table_plane, arms })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub arm: Option<Arm>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks phase order, gripper states, that grasp and place lie on the
/// table with their hover waypoints straight above them, and that the
/// carried segment (grasp to place) rises to its maximum at transit and
/// falls after it, with transit the highest waypoint overall.
pub fn validate_trajectory(trajectory: &Trajectory) -> ValidationReport {
    let mut report = ValidationReport::default();
    if trajectory.arms.is_empty() {
        report.violations.push(Violation { arm: None, message: "missing phases: no arm trajectories".into() });
        return report;
    }
    let len = trajectory.table_plane.normal.norm();
    if !(len > 0.0 && len.is_finite()) {
        report.violations.push(Violation { arm: None, message: "table normal is degenerate".into() });
        return report;
    }
    let n = trajectory.table_plane.normal / len;
    let offset = trajectory.table_plane.offset / len;
    let height = |p: &Point3<f64>| n.dot(&p.coords) - offset;
    for arm in &trajectory.arms {
        let mut flag = |message: String| report.violations.push(Violation { arm: Some(arm.arm), message });
        let w = &arm.waypoints;
        let phases: Vec<Phase> = w.iter().map(|p| p.phase).collect();
        if phases != Phase::SEQUENCE {
            flag(format!("missing phases or wrong order: {phases:?}"));
            continue;
        }
        for p in w {
            if p.arm != arm.arm {
                flag(format!("{:?} waypoint belongs to {}", p.phase, p.arm));
            }
            if !p.position.coords.iter().all(|c| c.is_finite()) {
                flag(format!("{:?} position is not finite", p.phase));
            }
            if p.gripper != p.phase.gripper() {
                flag(format!("gripper {:?} during {:?}", p.gripper, p.phase));
            }
        }
        let [pregrasp, grasp, lift, transit, preplace, place, release] = [0, 1, 2, 3, 4, 5, 6].map(|i| w[i].position);
        for (name, p) in [("grasp", grasp), ("place", place)] {
            if height(&p).abs() > ENDPOINT_TOLERANCE {
                flag(format!("{name} is {:.3e} m off the table", height(&p)));
            }
        }
        for (name, p, base) in [("pregrasp", pregrasp, grasp), ("lift", lift, grasp), ("preplace", preplace, place), ("release", release, place)] {
            let d = p - base;
            let lateral = (d - n * n.dot(&d)).norm();
            if lateral > ENDPOINT_TOLERANCE || n.dot(&d) <= 0.0 {
                flag(format!("{name} is not straight above its endpoint"));
            }
        }
        let carried = [grasp, lift, transit, preplace, place].map(|p| height(&p));
        let rises = |s: &[f64]| s[1] > s[0] + HEIGHT_TOLERANCE;
        let falls = |s: &[f64]| s[1] < s[0] - HEIGHT_TOLERANCE;
        if carried.windows(2).take(2).any(falls) || carried.windows(2).skip(2).any(rises) {
            flag(format!("carried heights are not unimodal at transit: {carried:?}"));
        }
        let top = height(&transit);
        if w.iter().any(|p| height(&p.position) > top + HEIGHT_TOLERANCE) {
            flag("transit is not the highest waypoint".into());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;

    fn overhead() -> CameraModel {
        let pose = Pose::look_at(Point3::new(0.2, 0.2, 1.0), Point3::new(0.2, 0.2, 0.0), Vector3::y()).unwrap();
        CameraModel::centered(500.0, 512, 512, pose).unwrap()
    }

    fn pixel_of(cam: &CameraModel, p: Point3<f64>) -> [i64; 2] {
        let q = cam.project(&p).unwrap().pixel;
        [q.x.round() as i64, q.y.round() as i64]
    }

    #[test]
    fn apex_uses_lift_height_for_short_carries() {
        let cam = overhead();
        // 0.2 m apart and exactly on pixel coordinates: (0.1, 0.2) and (0.3, 0.2)
        let t = ActionTuple { arm: Arm::LA, pick: pixel_of(&cam, Point3::new(0.1, 0.2, 0.0)), place: pixel_of(&cam, Point3::new(0.3, 0.2, 0.0)) };
        let traj = decode_trajectory(&[t], &cam, &DecoderParams::default(), Primitive::Fold).unwrap();
        let w = &traj.arms[0].waypoints;
        assert!((w[1].position - Point3::new(0.1, 0.2, 0.0)).norm() < 1e-12);
        assert!((w[5].position - Point3::new(0.3, 0.2, 0.0)).norm() < 1e-12);
        assert!((w[3].position.z - 0.15).abs() < 1e-12);
        assert!(validate_trajectory(&traj).is_clean());
    }

    #[test]
    fn long_carries_raise_the_apex() {
        let cam = overhead();
        let t = ActionTuple { arm: Arm::RA, pick: pixel_of(&cam, Point3::new(0.0, 0.2, 0.0)), place: pixel_of(&cam, Point3::new(0.4, 0.2, 0.0)) };
        let traj = decode_trajectory(&[t], &cam, &DecoderParams::default(), Primitive::Fold).unwrap();
        assert!((traj.arms[0].waypoints[3].position.z - 0.2).abs() < 1e-12);
    }

    #[test]
    fn two_arms_decode_independently() {
        let cam = overhead();
        let tuples = [
            ActionTuple { arm: Arm::RA, pick: [100, 300], place: [400, 300] },
            ActionTuple { arm: Arm::LA, pick: [100, 100], place: [400, 100] },
        ];
        let traj = decode_trajectory(&tuples, &cam, &DecoderParams::default(), Primitive::Fold).unwrap();
        assert_eq!(traj.arms.len(), 2);
        assert_eq!(traj.arms[0].arm, Arm::LA);
        assert!(traj.arms.iter().all(|a| a.waypoints.len() == 7));
    }

    #[test]
    fn degenerate_and_empty_inputs_fail() {
        let cam = overhead();
        let same = ActionTuple { arm: Arm::LA, pick: [100, 100], place: [100, 100] };
        assert_eq!(
            decode_trajectory(&[same], &cam, &DecoderParams::default(), Primitive::Fold),
            Err(DecodeError::DegenerateAction { arm: Arm::LA })
        );
        assert_eq!(decode_trajectory(&[], &cam, &DecoderParams::default(), Primitive::Fold), Err(DecodeError::Empty));
        assert!(matches!("unfold".parse::<Primitive>(), Err(DecodeError::UnsupportedPrimitive(_))));
    }

    #[test]
    fn apex_tied_with_lift_validates_under_rounding() {
        // short carries, so the apex is exactly the lift height
        for i in 0..200 {
            let f = i as f64;
            let eye = Point3::new(0.3 * (f * 0.7).sin(), -0.5 + 0.1 * (f * 1.3).cos(), 0.9 + 0.01 * f.rem_euclid(7.0));
            let cam = CameraModel::centered(480.0, 512, 512, Pose::look_at(eye, Point3::origin(), Vector3::z()).unwrap()).unwrap();
            let params = DecoderParams {
                pregrasp_height: 0.05 + 0.0007 * f,
                lift_height: 0.2 + 0.0003 * f,
                arc_coefficient: 0.1,
                table_plane: Plane::horizontal(-0.05 + 0.0005 * f),
            };
            let t = ActionTuple { arm: Arm::LA, pick: [200 + i, 300], place: [260, 240 + i / 2] };
            let traj = decode_trajectory(&[t], &cam, &params, Primitive::Fold).unwrap();
            assert!(validate_trajectory(&traj).is_clean(), "case {i}: {:?}", validate_trajectory(&traj));
        }
    }

    #[test]
    fn lift_below_pregrasp_is_rejected() {
        let low = DecoderParams { lift_height: 0.05, ..DecoderParams::default() };
        let t = ActionTuple { arm: Arm::LA, pick: [100, 100], place: [200, 100] };
        assert_eq!(decode_trajectory(&[t], &overhead(), &low, Primitive::Fold), Err(DecodeError::InvalidParams));
    }

    #[test]
    fn open_gripper_in_transit_is_flagged() {
        let cam = overhead();
        let t = ActionTuple { arm: Arm::LA, pick: [100, 100], place: [400, 100] };
        let mut traj = decode_trajectory(&[t], &cam, &DecoderParams::default(), Primitive::Fold).unwrap();
        traj.arms[0].waypoints[3].gripper = Gripper::Open;
        let r = validate_trajectory(&traj);
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].message.contains("Transit"));
    }

    #[test]
    fn empty_trajectory_is_missing_phases() {
        let traj = Trajectory { primitive: Primitive::Fold, table_plane: Plane::horizontal(0.0), arms: Vec::new() };
        let r = validate_trajectory(&traj);
        assert!(r.violations[0].message.contains("missing phases"));
    }

    #[test]
    fn camera_looking_away_cannot_deproject() {
        let pose = Pose::look_at(Point3::new(0.0, 0.0, 1.0), Point3::new(0.0, 0.0, 2.0), Vector3::y()).unwrap();
        let cam = CameraModel::centered(500.0, 512, 512, pose).unwrap();
        let t = ActionTuple { arm: Arm::LA, pick: [256, 256], place: [300, 256] };
        assert!(matches!(
            decode_trajectory(&[t], &cam, &DecoderParams::default(), Primitive::Fold),
            Err(DecodeError::Deprojection { .. })
        ));
    }
}
