//! Position-based cloth simulation.
//!
//! Each step predicts positions under gravity and drag, projects edge
//! (stretch) and across-edge (bend) distance constraints, vertex-vertex
//! repulsion and the ground plane for a fixed number of Gauss-Seidel
//! sweeps, then derives velocities from the position change. Sweeps
//! alternate direction so no vertex ordering is systematically favoured.
//! Kinematic attachments pin vertices to scripted targets.

mod actions;
mod hash;

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::{PhysicsRanges, RangeConfig};
use crate::mesh::TriMesh;
use crate::rng::{rng_for, stream};
pub use actions::{apply_action, ActionOutcome, ActionSettings, DeformAction, Grasp, Keyframe};
pub use hash::close_pairs;

/// Areal density used for lumped vertex masses (kg/m²).
pub const AREAL_DENSITY: f64 = 0.2;

/// Candidate radius for self-collision pairs, as a multiple of thickness.
const CANDIDATE_FACTOR: f64 = 1.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("simulation diverged: non-finite state at vertex {vertex}")]
    NumericalDivergence { vertex: usize },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("state has {state} vertices but mesh has {mesh}")]
    SizeMismatch { state: usize, mesh: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub stretch_stiffness: f64,
    pub bend_stiffness: f64,
    pub friction: f64,
    pub drag: f64,
    /// Minimum separation enforced between non-neighbouring vertices (m).
    pub thickness: f64,
    /// Gravitational acceleration magnitude, pointing along `-z` (m/s²).
    pub gravity: f64,
    pub dt: f64,
    pub solver_iterations: u32,
    /// Fraction of velocity removed per step.
    pub damping: f64,
}

impl SimParams {
    /// `true` when every field is inside its physical domain.
    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.stretch_stiffness)
            && unit(self.bend_stiffness)
            && unit(self.damping)
            && self.friction >= 0.0
            && self.drag >= 0.0
            && self.thickness > 0.0
            && self.gravity.is_finite()
            && self.dt > 0.0
            && self.solver_iterations > 0
    }
}

/// Physics parameters for `seed` drawn from the bundled default ranges.
pub fn sample_physics(seed: u64) -> SimParams {
    sample_physics_with(seed, &RangeConfig::default().physics)
}

pub fn sample_physics_with(seed: u64, ranges: &PhysicsRanges) -> SimParams {
    let mut rng = rng_for(seed, stream::PHYSICS);
    SimParams {
        stretch_stiffness: ranges.stretch_stiffness.sample(&mut rng),
        bend_stiffness: ranges.bend_stiffness.sample(&mut rng),
        friction: ranges.friction.sample(&mut rng),
        drag: ranges.drag.sample(&mut rng),
        thickness: ranges.thickness.sample(&mut rng),
        damping: ranges.damping.sample(&mut rng),
        gravity: ranges.gravity,
        dt: ranges.dt,
        solver_iterations: ranges.solver_iterations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub positions: Vec<Point3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    /// Kinematic grasps: vertex id to its target position.
    pub attachments: BTreeMap<u32, Point3<f64>>,
    pub ground_height: f64,
}

impl SimState {
    /// The flat rest mesh lying on the ground, at rest.
    pub fn at_rest(mesh: &TriMesh, ground_height: f64) -> Self {
        SimState {
            positions: mesh
                .rest_positions()
                .iter()
                .map(|p| Point3::new(p.x, p.y, p.z + ground_height))
                .collect(),
            velocities: vec![Vector3::zeros(); mesh.vertex_count()],
            attachments: BTreeMap::new(),
            ground_height,
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn lowest_z(&self) -> f64 {
        self.positions.iter().map(|p| p.z).fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|p| p.coords.iter().all(|c| c.is_finite()))
            && self.velocities.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }
}

fn masses(mesh: &TriMesh) -> Vec<f64> {
    mesh.vertex_areas().iter().map(|a| a * AREAL_DENSITY).collect()
}

/// Gravitational plus kinetic energy plus a stretch-energy proxy (J).
pub fn mechanical_energy(state: &SimState, mesh: &TriMesh, params: &SimParams) -> f64 {
    let m = masses(mesh);
    let mut e = 0.0;
    for ((p, v), mi) in state.positions.iter().zip(&state.velocities).zip(&m) {
        e += mi * params.gravity * (p.z - state.ground_height) + 0.5 * mi * v.norm_squared();
    }
    // the proxy stiffness only needs a fixed scale; 1 kN/m is a typical
    // tensile stiffness for a 1 cm strip of woven cotton
    let k = 1000.0 * params.stretch_stiffness;
    for (&[a, b], rest) in mesh.edges().iter().zip(mesh.edge_rest_lengths()) {
        let len = (state.positions[a as usize] - state.positions[b as usize]).norm();
        e += 0.5 * k * (len - rest).powi(2);
    }
    e
}

/// Stiffness that, applied once per iteration for `iters` iterations,
/// gives the same total correction as `k` applied once.
fn per_iteration(k: f64, iters: u32) -> f64 {
    1.0 - (1.0 - k).powf(1.0 / iters as f64)
}

#[inline]
fn project_distance(p: &mut [Point3<f64>], w: &[f64], a: usize, b: usize, rest: f64, k: f64) {
    let wsum = w[a] + w[b];
    if wsum == 0.0 {
        return;
    }
    let d = p[b] - p[a];
    let len = d.norm();
    if len < 1e-12 {
        return;
    }
    let corr = d * (k * (len - rest) / (wsum * len));
    p[a] += corr * w[a];
    p[b] -= corr * w[b];
}

/// Pushes `a` and `b` apart to `thickness`, without friction.
fn separate(p: &mut [Point3<f64>], w: &[f64], a: usize, b: usize, thickness: f64) {
    let d = p[b] - p[a];
    let dist = d.norm();
    let wsum = w[a] + w[b];
    if dist >= thickness || dist < 1e-12 || wsum == 0.0 {
        return;
    }
    let push = d * ((thickness - dist) / (dist * wsum));
    p[a] -= push * w[a];
    p[b] += push * w[b];
}

/// Pushes `a` and `b` apart to `thickness` and applies Coulomb friction to
/// their relative tangential motion over the step: below `mu` times the
/// normal correction accumulated this step (`pressed`) it is cancelled,
/// above it is reduced by that amount.
#[inline]
fn collide(
    p: &mut [Point3<f64>],
    x: &[Point3<f64>],
    w: &[f64],
    [a, b]: [usize; 2],
    thickness: f64,
    mu: f64,
    pressed: &mut f64,
) {
    let d = p[b] - p[a];
    let dist = d.norm();
    if dist >= thickness || dist < 1e-12 || w[a] + w[b] == 0.0 {
        return;
    }
    let normal = d / dist;
    let (wa, wb) = (w[a], w[b]);
    let wsum = wa + wb;
    let depth = thickness - dist;
    *pressed += depth;
    let push = normal * (depth / wsum);
    p[a] -= push * wa;
    p[b] += push * wb;

    let rel = (p[a] - x[a]) - (p[b] - x[b]);
    let tangential = rel - normal * rel.dot(&normal);
    let slide = tangential.norm();
    if slide < 1e-15 {
        return;
    }
    let limit = mu * *pressed;
    let corr = if slide <= limit { tangential } else { tangential * (limit / slide) };
    p[a] -= corr * (wa / wsum);
    p[b] += corr * (wb / wsum);
}

/// Edges are held within this relative strain after the solver sweeps.
pub const STRAIN_LIMIT: f64 = 0.02;
/// Looser band while a gripper carries the cloth. The tight band drags the
/// bottom layer along with the carried flap.
pub const GRASP_STRAIN_LIMIT: f64 = 0.06;
/// Sweeps per step. Cloth-wide tension converges over several steps rather
/// than within one.
const STRAIN_SWEEPS: usize = 8;
/// Relative overshoot of the band the limiter tolerates before another sweep.
const STRAIN_SLACK: f64 = 1e-4;

/// Visits `0..count` forwards or backwards; alternating the direction keeps
/// Gauss-Seidel sweeps from favouring one end of the mesh.
#[inline]
fn sweep(forward: bool, count: usize, f: impl FnMut(usize)) {
    if forward {
        (0..count).for_each(f)
    } else {
        (0..count).rev().for_each(f)
    }
}

fn clamp_to_ground(p: &mut [Point3<f64>], ground: f64, contact: &mut [f64]) {
    for (q, c) in p.iter_mut().zip(contact) {
        if q.z < ground {
            *c += ground - q.z;
            q.z = ground;
        }
    }
}

/// Strain limiting: projects only edges whose length is outside
/// `rest * (1 ± band)` back onto the band edge. Contacts can hold
/// short edges away from rest in a way the regular sweeps never resolve.
#[allow(clippy::too_many_arguments)]
fn limit_strain(
    p: &mut [Point3<f64>],
    w: &[f64],
    edges: &[[u32; 2]],
    rest: &[f64],
    band: f64,
    sweeps: usize,
    ground: f64,
    contact: &mut [f64],
) {
    for sweep in 0..sweeps {
        let mut clean = true;
        let mut fix = |e: usize| {
            let [a, b] = edges[e];
            let (a, b) = (a as usize, b as usize);
            let len = (p[b] - p[a]).norm();
            let (lo, hi) = (rest[e] * (1.0 - band), rest[e] * (1.0 + band));
            if len > hi {
                clean &= len <= hi + rest[e] * STRAIN_SLACK;
                project_distance(p, w, a, b, hi, 1.0);
            } else if len < lo {
                clean &= len >= lo - rest[e] * STRAIN_SLACK;
                project_distance(p, w, a, b, lo, 1.0);
            }
        };
        self::sweep(sweep % 2 == 0, edges.len(), &mut fix);
        clamp_to_ground(p, ground, contact);
        if clean {
            break;
        }
    }
}

/// Advances the simulation by one time step.
pub fn step(state: &SimState, mesh: &TriMesh, params: &SimParams) -> Result<SimState, SimError> {
    let mut next = state.clone();
    let band = strain_band(&next);
    step_in_place(&mut next, mesh, params, &masses(mesh), band)?;
    Ok(next)
}

/// Strain band for a step of `state`: loose while anything is held.
pub(crate) fn strain_band(state: &SimState) -> f64 {
    if state.attachments.is_empty() {
        STRAIN_LIMIT
    } else {
        GRASP_STRAIN_LIMIT
    }
}

pub(crate) fn step_in_place(
    state: &mut SimState,
    mesh: &TriMesh,
    params: &SimParams,
    mass: &[f64],
    band: f64,
) -> Result<(), SimError> {
    let n = mesh.vertex_count();
    if state.positions.len() != n || state.velocities.len() != n {
        return Err(SimError::SizeMismatch { state: state.positions.len(), mesh: n });
    }
    let dt = params.dt;
    let ground = state.ground_height;

    let mut w: Vec<f64> = mass.iter().map(|&m| if m > 0.0 { 1.0 / m } else { 0.0 }).collect();
    let gravity = Vector3::new(0.0, 0.0, -params.gravity);
    let drag = 1.0 / (1.0 + params.drag * dt);
    let mut p = state.positions.clone();
    for (q, v) in p.iter_mut().zip(&mut state.velocities) {
        *v = (*v + gravity * dt) * drag;
        *q += *v * dt;
    }
    for (&v, target) in &state.attachments {
        let v = v as usize;
        if v >= n {
            return Err(SimError::InvalidAction(format!("attachment vertex {v} out of range")));
        }
        p[v] = *target;
        w[v] = 0.0;
    }

    let rest = mesh.rest_positions();
    let min_rest = 2.0 * params.thickness;
    let candidates: Vec<[u32; 2]> = close_pairs(&p, CANDIDATE_FACTOR * params.thickness)
        .into_iter()
        .filter(|&[a, b]| (rest[a as usize] - rest[b as usize]).norm() >= min_rest)
        .collect();

    let iters = params.solver_iterations;
    let ks = per_iteration(params.stretch_stiffness, iters);
    let kb = per_iteration(params.bend_stiffness, iters);
    let edges = mesh.edges();
    let edge_rest = mesh.edge_rest_lengths();
    let bends = mesh.bend_pairs();
    let bend_rest = mesh.bend_rest_lengths();
    let mut contact = vec![0.0; n];
    let mut pressed = vec![0.0; candidates.len()];

    for it in 0..iters {
        let forward = it % 2 == 0;
        let x = &state.positions;
        sweep(forward, candidates.len(), |c| {
            let [a, b] = candidates[c];
            collide(&mut p, x, &w, [a as usize, b as usize], params.thickness, params.friction, &mut pressed[c]);
        });
        sweep(forward, edges.len(), |e| {
            let [a, b] = edges[e];
            project_distance(&mut p, &w, a as usize, b as usize, edge_rest[e], ks);
        });
        sweep(forward, bends.len(), |e| {
            let [a, b] = bends[e];
            project_distance(&mut p, &w, a as usize, b as usize, bend_rest[e], kb);
        });
        clamp_to_ground(&mut p, ground, &mut contact);
    }
    limit_strain(&mut p, &w, edges, edge_rest, band, STRAIN_SWEEPS, ground, &mut contact);
    // the limiter can pull layers into each other; leave the step separated
    // so the overlap does not come back as velocity next step
    for &[a, b] in &candidates {
        separate(&mut p, &w, a as usize, b as usize, params.thickness);
    }
    clamp_to_ground(&mut p, ground, &mut contact);
    limit_strain(&mut p, &w, edges, edge_rest, band, 1, ground, &mut contact);

    let keep = 1.0 - params.damping;
    for i in 0..n {
        let mut v = (p[i] - state.positions[i]) / dt * keep;
        if contact[i] > 0.0 {
            let vt = Vector3::new(v.x, v.y, 0.0);
            let speed = vt.norm();
            if speed > 0.0 {
                let reduced = (speed - params.friction * contact[i] / dt).max(0.0);
                v.x *= reduced / speed;
                v.y *= reduced / speed;
            }
        }
        if !(p[i].coords.iter().all(|c| c.is_finite()) && v.iter().all(|c| c.is_finite())) {
            return Err(SimError::NumericalDivergence { vertex: i });
        }
        state.velocities[i] = v;
    }
    state.positions = p;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettleReport {
    pub steps: usize,
    pub converged: bool,
    pub max_speed: f64,
}

/// Steps until the maximum vertex speed drops below `velocity_epsilon`
/// (at least one step), or `max_steps` steps have run.
pub fn settle(
    state: &SimState,
    mesh: &TriMesh,
    params: &SimParams,
    max_steps: usize,
    velocity_epsilon: f64,
) -> Result<(SimState, SettleReport), SimError> {
    let mut s = state.clone();
    let report = settle_in_place(&mut s, mesh, params, max_steps, velocity_epsilon, &mut |_, _| {})?;
    Ok((s, report))
}

pub(crate) fn settle_in_place(
    state: &mut SimState,
    mesh: &TriMesh,
    params: &SimParams,
    max_steps: usize,
    velocity_epsilon: f64,
    on_step: &mut dyn FnMut(usize, &SimState),
) -> Result<SettleReport, SimError> {
    let mass = masses(mesh);
    let mut steps = 0;
    loop {
        let band = strain_band(state);
        step_in_place(state, mesh, params, &mass, band)?;
        steps += 1;
        on_step(steps, state);
        let speed = state.max_speed();
        if speed < velocity_epsilon {
            return Ok(SettleReport { steps, converged: true, max_speed: speed });
        }
        if steps >= max_steps.max(1) {
            return Ok(SettleReport { steps, converged: false, max_speed: speed });
        }
    }
}
