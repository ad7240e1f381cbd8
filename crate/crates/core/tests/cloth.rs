use garment_synth::config::RangeConfig;
use garment_synth::mesh::{triangulate_boundary, TriMesh};
use garment_synth::sim::{
    apply_action, mechanical_energy, sample_physics, settle, step, ActionSettings, DeformAction, Grasp, SimParams,
    SimState,
};
use garment_synth::templates::{Boundary, Segment};
use nalgebra::{Point2, Point3, Rotation3, Vector3};

fn params() -> SimParams {
    SimParams {
        stretch_stiffness: 1.0,
        bend_stiffness: 0.2,
        friction: 0.5,
        drag: 0.1,
        thickness: 0.009,
        gravity: 9.81,
        dt: 1.0 / 240.0,
        solver_iterations: 20,
        damping: 0.02,
    }
}

fn settings() -> ActionSettings {
    ActionSettings { settle_max_steps: 480, settle_velocity_epsilon: 0.03, keyframe_interval: 24 }
}

fn rectangle(w: f64, h: f64) -> TriMesh {
    let c = [
        Point2::new(-w / 2.0, -h / 2.0),
        Point2::new(w / 2.0, -h / 2.0),
        Point2::new(w / 2.0, h / 2.0),
        Point2::new(-w / 2.0, h / 2.0),
    ];
    let b = Boundary { segments: (0..4).map(|i| Segment::line(c[i], c[(i + 1) % 4])).collect() };
    triangulate_boundary(&b, 0.01, 0.002).unwrap()
}

/// Square grid where every cell is split into four triangles around its
/// centre, so the mesh is mirror symmetric about both axes.
fn union_jack(cells: usize, spacing: f64) -> TriMesh {
    let n = cells + 1;
    let mut pts = Vec::new();
    for j in 0..n {
        for i in 0..n {
            pts.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let mut tris = Vec::new();
    for j in 0..cells {
        for i in 0..cells {
            let c = pts.len() as u32;
            pts.push(Point3::new((i as f64 + 0.5) * spacing, (j as f64 + 0.5) * spacing, 0.0));
            let a = (j * n + i) as u32;
            let (b, d, e) = (a + 1, a + n as u32 + 1, a + n as u32);
            tris.extend([[a, b, c], [b, d, c], [d, e, c], [e, a, c]]);
        }
    }
    TriMesh::from_parts(pts, tris, spacing).unwrap()
}

fn corner(mesh: &TriMesh, x: f64, y: f64) -> u32 {
    let target = Point3::new(x, y, 0.0);
    (0..mesh.vertex_count() as u32)
        .min_by(|&a, &b| {
            (mesh.rest_positions()[a as usize] - target)
                .norm()
                .total_cmp(&(mesh.rest_positions()[b as usize] - target).norm())
        })
        .unwrap()
}

#[test]
fn resting_cloth_stays_put_for_one_step() {
    let mesh = rectangle(0.2, 0.15);
    let s0 = SimState::at_rest(&mesh, 0.0);
    let s1 = step(&s0, &mesh, &params()).unwrap();
    for (a, b) in s0.positions.iter().zip(&s1.positions) {
        assert!((a - b).norm() <= 1e-5);
    }
}

#[test]
fn settled_cloth_settles_in_one_step() {
    let mesh = rectangle(0.2, 0.15);
    let s0 = SimState::at_rest(&mesh, 0.0);
    let (_, report) = settle(&s0, &mesh, &params(), 100, 0.03).unwrap();
    assert!(report.converged);
    assert_eq!(report.steps, 1);
}

#[test]
fn dropped_cloth_lands_flat_and_above_ground() {
    let mesh = rectangle(0.25, 0.2);
    let s0 = SimState::at_rest(&mesh, 0.1);
    let drop = DeformAction::Drop { orientation: Rotation3::identity(), height: 0.3 };
    let out = apply_action(&s0, &mesh, &params(), &drop, &settings()).unwrap();
    for frame in &out.keyframes {
        assert!(frame.positions.iter().all(|p| p.z >= 0.1 - 1e-4));
    }
    for p in &out.state.positions {
        assert!(p.z >= 0.1 - 1e-4 && p.z <= 0.1 + 0.05, "z = {}", p.z);
    }
}

#[test]
fn zero_height_identity_drop_is_a_plain_settle() {
    let mesh = rectangle(0.2, 0.15);
    let s0 = SimState::at_rest(&mesh, 0.0);
    let drop = DeformAction::Drop { orientation: Rotation3::identity(), height: 0.0 };
    let out = apply_action(&s0, &mesh, &params(), &drop, &settings()).unwrap();
    let (settled, _) = settle(&s0, &mesh, &params(), 480, 0.03).unwrap();
    assert_eq!(out.state.positions, settled.positions);
}

#[test]
fn runs_are_bitwise_reproducible() {
    let mesh = rectangle(0.2, 0.15);
    let s0 = SimState::at_rest(&mesh, 0.0);
    let p = sample_physics(11);
    let drop = DeformAction::Drop { orientation: Rotation3::from_euler_angles(0.4, 0.2, 0.0), height: 0.05 };
    let a = apply_action(&s0, &mesh, &p, &drop, &settings()).unwrap();
    let b = apply_action(&s0, &mesh, &p, &drop, &settings()).unwrap();
    let bits = |s: &SimState| s.positions.iter().flat_map(|q| q.coords.iter().map(|c| c.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    assert_eq!(bits(&a.state), bits(&b.state));
    assert_eq!(a.keyframes, b.keyframes);
}

#[test]
fn idle_lift_rotate_matches_settle() {
    let mesh = rectangle(0.2, 0.15);
    let s0 = SimState::at_rest(&mesh, 0.0);
    let v = corner(&mesh, -0.1, 0.075);
    let act = DeformAction::LiftRotate { grasp: vec![v], lift_height: 0.0, rotation: 0.0, duration: 0.25 };
    let out = apply_action(&s0, &mesh, &params(), &act, &settings()).unwrap();
    let (settled, _) = settle(&s0, &mesh, &params(), 480, 0.03).unwrap();
    for (a, b) in out.state.positions.iter().zip(&settled.positions) {
        assert!((a - b).norm() <= 1e-4);
    }
}

#[test]
fn pinned_sheet_sags_symmetrically() {
    let spacing = 0.02;
    let cells = 10;
    let mesh = union_jack(cells, spacing);
    let side = cells as f64 * spacing;
    // hang the sheet in the vertical x-z plane from its two top corners
    let mut s = SimState::at_rest(&mesh, 0.0);
    for p in &mut s.positions {
        *p = Point3::new(p.x, 0.0, 1.0 - p.y);
    }
    let (l, r) = (corner(&mesh, 0.0, 0.0), corner(&mesh, side, 0.0));
    s.attachments.insert(l, s.positions[l as usize]);
    s.attachments.insert(r, s.positions[r as usize]);
    // nudge it off the plane so it has to swing and settle
    for v in &mut s.velocities {
        *v = Vector3::new(0.0, 0.05, 0.0);
    }
    let (settled, report) = settle(&s, &mesh, &params(), 5000, 1e-4).unwrap();
    assert!(report.converged);
    let mut worst: f64 = 0.0;
    for (i, p) in mesh.rest_positions().iter().enumerate() {
        let mirror = corner(&mesh, side - p.x, p.y) as usize;
        let a = settled.positions[i];
        let b = settled.positions[mirror];
        // reflection about the plane x = side / 2
        let reflected = Point3::new(side - b.x, b.y, b.z);
        worst = worst.max((a - reflected).norm());
    }
    assert!(worst <= 1e-3, "asymmetry {worst}");
}

fn towel_fold(mesh: &TriMesh, p: &SimParams) -> (Vec<(u32, Point3<f64>)>, garment_synth::sim::ActionOutcome) {
    let (w, h) = (0.3, 0.24);
    let s0 = SimState::at_rest(mesh, 0.0);
    let tl = corner(mesh, -w / 2.0, h / 2.0);
    let tr = corner(mesh, w / 2.0, h / 2.0);
    let bl = corner(mesh, -w / 2.0, -h / 2.0);
    let br = corner(mesh, w / 2.0, -h / 2.0);
    let lift = Vector3::new(0.0, 0.0, p.thickness);
    let grasps = vec![
        Grasp { vertex: tl, place: s0.positions[tr as usize] + lift },
        Grasp { vertex: bl, place: s0.positions[br as usize] + lift },
    ];
    let act = DeformAction::GraspArc { grasps: grasps.clone(), arc_height: 0.08, duration: 1.0 };
    let out = apply_action(&s0, mesh, p, &act, &settings()).unwrap();
    (grasps.iter().map(|g| (g.vertex, g.place)).collect(), out)
}

#[test]
fn towel_half_fold_lands_on_target() {
    let mesh = rectangle(0.3, 0.24);
    let (targets, out) = towel_fold(&mesh, &params());
    for (v, place) in targets {
        let d = (out.state.positions[v as usize] - place).norm();
        assert!(d <= 0.02, "corner {v} is {d} m from its target");
    }
    for frame in &out.keyframes {
        assert!(frame.positions.iter().all(|p| p.z >= -1e-4));
    }
}

#[test]
fn stiff_cloth_keeps_edges_within_three_percent() {
    let mesh = rectangle(0.3, 0.24);
    let (_, out) = towel_fold(&mesh, &params());
    for (&[a, b], rest) in mesh.edges().iter().zip(mesh.edge_rest_lengths()) {
        let len = (out.state.positions[a as usize] - out.state.positions[b as usize]).norm();
        assert!((len - rest).abs() <= 0.03 * rest, "edge {a}-{b}: {len} vs {rest}");
    }
}

/// Energy after the grasp is released, stepping manually from the first
/// free step.
fn energy_trace(p: &SimParams, steps: usize) -> Vec<f64> {
    let mesh = rectangle(0.3, 0.24);
    let s0 = SimState::at_rest(&mesh, 0.0);
    let (w, h) = (0.3, 0.24);
    let tl = corner(&mesh, -w / 2.0, h / 2.0);
    let tr = corner(&mesh, w / 2.0, h / 2.0);
    let bl = corner(&mesh, -w / 2.0, -h / 2.0);
    let br = corner(&mesh, w / 2.0, -h / 2.0);
    let lift = Vector3::new(0.0, 0.0, p.thickness);
    let act = DeformAction::GraspArc {
        grasps: vec![
            Grasp { vertex: tl, place: s0.positions[tr as usize] + lift },
            Grasp { vertex: bl, place: s0.positions[br as usize] + lift },
        ],
        arc_height: 0.08,
        duration: 1.0,
    };
    let quick = ActionSettings { settle_max_steps: 1, ..settings() };
    let mut s = apply_action(&s0, &mesh, p, &act, &quick).unwrap().state;
    let mut trace = vec![mechanical_energy(&s, &mesh, p)];
    for _ in 0..steps {
        s = step(&s, &mesh, p).unwrap();
        trace.push(mechanical_energy(&s, &mesh, p));
    }
    trace
}

#[test]
fn energy_does_not_grow_after_release() {
    let p = params();
    let trace = energy_trace(&p, 240);
    for (i, pair) in trace.windows(2).enumerate() {
        assert!(pair[1] <= pair[0] + 1e-6, "step {i}: energy rose from {} to {}", pair[0], pair[1]);
    }
}

#[test]
fn physics_samples_cover_configured_ranges() {
    let r = RangeConfig::default().physics;
    let samples: Vec<SimParams> = (0..1000).map(sample_physics).collect();
    let span = r.stretch_stiffness.max - r.stretch_stiffness.min;
    let lo = samples.iter().map(|s| s.stretch_stiffness).fold(f64::MAX, f64::min);
    let hi = samples.iter().map(|s| s.stretch_stiffness).fold(f64::MIN, f64::max);
    assert!(lo >= r.stretch_stiffness.min && hi <= r.stretch_stiffness.max);
    // 1000 uniform draws leave a gap above 1% of the span with prob. < 1e-4
    assert!(lo - r.stretch_stiffness.min < 0.01 * span && r.stretch_stiffness.max - hi < 0.01 * span);
    for s in &samples {
        assert!(s.is_valid());
        assert!(r.bend_stiffness.contains(s.bend_stiffness));
        assert!(r.thickness.contains(s.thickness));
        assert!(r.friction.contains(s.friction));
    }
}
