use std::f64::consts::PI;

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    masses, settle_in_place, step_in_place, strain_band, SettleReport, SimError, SimParams, SimState, STRAIN_LIMIT,
};
use crate::config::DeformRanges;
use crate::mesh::TriMesh;

/// One grasped vertex and where it should end up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grasp {
    pub vertex: u32,
    pub place: Point3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DeformAction {
    /// Rigidly rotate about the centroid, lift so the lowest vertex is
    /// `height` above ground, and let it fall.
    Drop { orientation: Rotation3<f64>, height: f64 },
    /// Carry each grasped vertex along a vertical half-ellipse to its place
    /// target, release and settle.
    GraspArc { grasps: Vec<Grasp>, arc_height: f64, duration: f64 },
    /// Raise the grasped vertices while turning them about the vertical
    /// axis through their centroid, release and settle.
    LiftRotate { grasp: Vec<u32>, lift_height: f64, rotation: f64, duration: f64 },
}

impl DeformAction {
    fn validate(&self, n: usize) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidAction(m.to_string()));
        let check_vertex = |v: u32| {
            if (v as usize) < n {
                Ok(())
            } else {
                Err(SimError::InvalidAction(format!("vertex {v} out of range")))
            }
        };
        match self {
            DeformAction::Drop { height, .. } => {
                if !height.is_finite() || *height < 0.0 {
                    return bad("drop height must be finite and >= 0");
                }
            }
            DeformAction::GraspArc { grasps, arc_height, duration } => {
                if grasps.is_empty() {
                    return bad("grasp_arc needs at least one grasp");
                }
                for g in grasps {
                    check_vertex(g.vertex)?;
                    if !g.place.coords.iter().all(|c| c.is_finite()) {
                        return bad("place target must be finite");
                    }
                }
                if !(*duration > 0.0) || !(*arc_height >= 0.0) {
                    return bad("grasp_arc duration must be > 0 and arc_height >= 0");
                }
            }
            DeformAction::LiftRotate { grasp, lift_height, rotation, duration } => {
                if grasp.is_empty() {
                    return bad("lift_rotate needs at least one vertex");
                }
                for &v in grasp {
                    check_vertex(v)?;
                }
                if !(*duration > 0.0) || !lift_height.is_finite() || !rotation.is_finite() {
                    return bad("lift_rotate duration must be > 0 and values finite");
                }
            }
        }
        Ok(())
    }
}

/// Knobs shared by every action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSettings {
    pub settle_max_steps: usize,
    pub settle_velocity_epsilon: f64,
    /// Record a keyframe every this many steps (0 records only the first
    /// and last frames).
    pub keyframe_interval: usize,
}

impl From<&DeformRanges> for ActionSettings {
    fn from(d: &DeformRanges) -> Self {
        ActionSettings {
            settle_max_steps: d.settle_max_steps,
            settle_velocity_epsilon: d.settle_velocity_epsilon,
            keyframe_interval: d.keyframe_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    /// Seconds since the action started.
    pub time: f64,
    pub positions: Vec<Point3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutcome {
    /// Starts with the state the action acts on, ends with `state`.
    pub keyframes: Vec<Keyframe>,
    pub state: SimState,
    pub settle: SettleReport,
    pub steps: usize,
}

struct Recorder {
    interval: usize,
    dt: f64,
    steps: usize,
    frames: Vec<Keyframe>,
}

impl Recorder {
    fn tick(&mut self, s: &SimState) {
        self.steps += 1;
        if self.interval > 0 && self.steps.is_multiple_of(self.interval) {
            self.push(s);
        }
    }

    fn push(&mut self, s: &SimState) {
        self.frames.push(Keyframe { time: self.steps as f64 * self.dt, positions: s.positions.clone() });
    }

    fn finish(mut self, s: &SimState) -> (Vec<Keyframe>, usize) {
        let last_time = self.steps as f64 * self.dt;
        if self.frames.last().is_none_or(|f| f.time != last_time) {
            self.push(s);
        }
        (self.frames, self.steps)
    }
}

/// Time a grasp-arc keeps holding at the place target before release, so
/// contacts around the gripper can resolve instead of popping on release.
pub const HOLD_SECONDS: f64 = 0.25;

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Grasped vertex plus its 1-ring, with each ring vertex's offset from the
/// grasped vertex. A vertex claimed by an earlier grasp stays with it.
fn grasp_patches(mesh: &TriMesh, state: &SimState, vertices: &[u32]) -> Vec<Vec<(u32, Vector3<f64>)>> {
    let mut claimed = std::collections::BTreeSet::new();
    vertices
        .iter()
        .map(|&g| {
            let origin = state.positions[g as usize];
            std::iter::once(g)
                .chain(mesh.neighbors(g).iter().copied())
                .filter(|&v| claimed.insert(v))
                .map(|v| (v, state.positions[v as usize] - origin))
                .collect()
        })
        .collect()
}

/// Runs `action` from `state` and returns the keyframes and settled result.
pub fn apply_action(
    state: &SimState,
    mesh: &TriMesh,
    params: &SimParams,
    action: &DeformAction,
    settings: &ActionSettings,
) -> Result<ActionOutcome, SimError> {
    let n = mesh.vertex_count();
    if state.positions.len() != n {
        return Err(SimError::SizeMismatch { state: state.positions.len(), mesh: n });
    }
    action.validate(n)?;
    let mass = masses(mesh);
    let mut s = state.clone();
    s.attachments.clear();
    let mut rec = Recorder { interval: settings.keyframe_interval, dt: params.dt, steps: 0, frames: Vec::new() };
    let up = Vector3::z();

    match action {
        DeformAction::Drop { orientation, height } => {
            let centroid = s.positions.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n as f64;
            if *orientation != Rotation3::identity() {
                for p in &mut s.positions {
                    *p = Point3::from(orientation * (*p - centroid) + centroid);
                }
            }
            let lift = s.ground_height + height - s.lowest_z();
            if lift != 0.0 {
                for p in &mut s.positions {
                    p.z += lift;
                }
            }
            s.velocities.iter_mut().for_each(|v| *v = Vector3::zeros());
            rec.push(&s);
        }
        DeformAction::GraspArc { grasps, arc_height, duration } => {
            rec.push(&s);
            let picks: Vec<u32> = grasps.iter().map(|g| g.vertex).collect();
            let patches = grasp_patches(mesh, &s, &picks);
            let paths: Vec<_> = grasps
                .iter()
                .map(|g| {
                    let pick = s.positions[g.vertex as usize];
                    let chord = g.place - pick;
                    let apex = arc_height.max(0.5 * chord.norm());
                    let horizontal = Vector3::new(chord.x, chord.y, 0.0);
                    let axis = if horizontal.norm() > 1e-9 {
                        Unit::new_normalize(up.cross(&horizontal))
                    } else {
                        Vector3::x_axis()
                    };
                    (pick, chord, apex, axis)
                })
                .collect();
            let count = ((duration / params.dt).round() as usize).max(1);
            let hold = (HOLD_SECONDS / params.dt).round() as usize;
            for k in 1..=count + hold {
                let u = smoothstep((k as f64 / count as f64).min(1.0));
                s.attachments.clear();
                for ((pick, chord, apex, axis), patch) in paths.iter().zip(&patches) {
                    let mid = pick + chord * 0.5;
                    let centre = mid - chord * (0.5 * (PI * u).cos()) + up * (apex * (PI * u).sin());
                    let turn = Rotation3::from_axis_angle(axis, PI * u);
                    for (v, offset) in patch {
                        s.attachments.insert(*v, centre + turn * offset);
                    }
                }
                // the flap is in place while holding, so the tight band applies
                let band = if k > count { STRAIN_LIMIT } else { strain_band(&s) };
                step_in_place(&mut s, mesh, params, &mass, band)?;
                rec.tick(&s);
            }
            s.attachments.clear();
        }
        DeformAction::LiftRotate { grasp, lift_height, rotation, duration } => {
            rec.push(&s);
            let patches = grasp_patches(mesh, &s, grasp);
            let centroid =
                grasp.iter().fold(Vector3::zeros(), |acc, &v| acc + s.positions[v as usize].coords) / grasp.len() as f64;
            let start: Vec<(u32, Vector3<f64>)> = patches
                .iter()
                .flatten()
                .map(|&(v, _)| (v, s.positions[v as usize].coords - centroid))
                .collect();
            let count = ((duration / params.dt).round() as usize).max(1);
            for k in 1..=count {
                let u = smoothstep(k as f64 / count as f64);
                let turn = Rotation3::from_axis_angle(&Vector3::z_axis(), rotation * u);
                s.attachments.clear();
                for (v, rel) in &start {
                    s.attachments.insert(*v, Point3::from(centroid + turn * rel + up * (lift_height * u)));
                }
                let band = strain_band(&s);
                step_in_place(&mut s, mesh, params, &mass, band)?;
                rec.tick(&s);
            }
            s.attachments.clear();
        }
    }

    let settle = settle_in_place(
        &mut s,
        mesh,
        params,
        settings.settle_max_steps,
        settings.settle_velocity_epsilon,
        &mut |_, st| rec.tick(st),
    )?;
    let (keyframes, steps) = rec.finish(&s);
    Ok(ActionOutcome { keyframes, state: s, settle, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(0.5), 0.5);
    }

    #[test]
    fn action_round_trips_through_json() {
        let a = DeformAction::GraspArc {
            grasps: vec![Grasp { vertex: 3, place: Point3::new(0.1, 0.2, 0.0) }],
            arc_height: 0.08,
            duration: 1.0,
        };
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<DeformAction>(&text).unwrap(), a);
    }
}
