//! Triangle meshes for single-layer garments.

mod binding;
pub mod obj;

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Point2, Point3};
use spade::{ConstrainedDelaunayTriangulation, Point2 as SpadePoint, Triangulation};

use crate::templates::boundary::{self, Boundary};
pub use binding::{bind_keypoints, BoundKeypoint, KeypointBinding};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MeshError {
    #[error("triangulation failed: {0}")]
    TriangulationFailure(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("keypoint `{label}` is {distance:.4} m from the nearest vertex")]
    AnchorOutOfMesh { label: String, distance: f64 },
}

/// Ratio between the hard edge-length bound and the requested target.
pub const EDGE_SLACK: f64 = 1.1;

/// An indexed triangle mesh with its flat rest state and cached topology.
///
/// Triangles are counter-clockwise when viewed from `+z` in the rest state.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    uv: Vec<[f64; 2]>,
    rest_positions: Vec<Point3<f64>>,
    target_edge: f64,
    edges: Vec<[u32; 2]>,
    edge_rest: Vec<f64>,
    bend_pairs: Vec<[u32; 2]>,
    bend_rest: Vec<f64>,
    adjacency: Vec<Vec<u32>>,
    vertex_area: Vec<f64>,
    on_boundary: Vec<bool>,
}

impl TriMesh {
    /// Builds a mesh from rest positions and triangles, computing UVs and
    /// topology. Fails on out-of-range or repeated triangle indices.
    pub fn from_parts(
        rest_positions: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
        target_edge: f64,
    ) -> Result<Self, MeshError> {
        let n = rest_positions.len();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v as usize >= n) {
                return Err(MeshError::InvalidMesh(format!("triangle {t} references a missing vertex")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::InvalidMesh(format!("triangle {t} repeats a vertex")));
            }
        }

        let mut edge_faces: BTreeMap<[u32; 2], Vec<usize>> = BTreeMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edge_faces.entry([a.min(b), a.max(b)]).or_default().push(t);
            }
        }
        if edge_faces.values().any(|f| f.len() > 2) {
            return Err(MeshError::InvalidMesh("non-manifold edge".into()));
        }

        let dist = |a: u32, b: u32| (rest_positions[a as usize] - rest_positions[b as usize]).norm();
        let mut edges = Vec::with_capacity(edge_faces.len());
        let mut edge_rest = Vec::with_capacity(edge_faces.len());
        let mut bend_pairs = Vec::new();
        let mut bend_rest = Vec::new();
        let mut adjacency = vec![Vec::new(); n];
        let mut on_boundary = vec![false; n];
        for (&[a, b], faces) in &edge_faces {
            edges.push([a, b]);
            edge_rest.push(dist(a, b));
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
            match faces.as_slice() {
                [f, g] => {
                    let opposite = |t: usize| {
                        *triangles[t].iter().find(|&&v| v != a && v != b).expect("triangle has a third vertex")
                    };
                    let (c, d) = (opposite(*f), opposite(*g));
                    bend_pairs.push([c.min(d), c.max(d)]);
                    bend_rest.push(dist(c, d));
                }
                _ => {
                    on_boundary[a as usize] = true;
                    on_boundary[b as usize] = true;
                }
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        let mut vertex_area = vec![0.0; n];
        for tri in &triangles {
            let [a, b, c] = tri.map(|v| rest_positions[v as usize]);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            for &v in tri {
                vertex_area[v as usize] += area / 3.0;
            }
        }

        let uv = uv_map(&rest_positions);
        Ok(TriMesh {
            vertices: rest_positions.clone(),
            triangles,
            uv,
            rest_positions,
            target_edge,
            edges,
            edge_rest,
            bend_pairs,
            bend_rest,
            adjacency,
            vertex_area,
            on_boundary,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn rest_positions(&self) -> &[Point3<f64>] {
        &self.rest_positions
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn uv(&self) -> &[[f64; 2]] {
        &self.uv
    }

    pub fn target_edge(&self) -> f64 {
        self.target_edge
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Unique undirected edges, each as `[low, high]`, sorted.
    pub fn edges(&self) -> &[[u32; 2]] {
        &self.edges
    }

    /// Rest length of each entry of [`Self::edges`].
    pub fn edge_rest_lengths(&self) -> &[f64] {
        &self.edge_rest
    }

    /// Opposite-vertex pairs across every interior edge.
    pub fn bend_pairs(&self) -> &[[u32; 2]] {
        &self.bend_pairs
    }

    pub fn bend_rest_lengths(&self) -> &[f64] {
        &self.bend_rest
    }

    /// Sorted 1-ring of `v`.
    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adjacency[v as usize]
    }

    /// Lumped rest area per vertex (a third of each incident triangle).
    pub fn vertex_areas(&self) -> &[f64] {
        &self.vertex_area
    }

    pub fn is_boundary_vertex(&self, v: u32) -> bool {
        self.on_boundary[v as usize]
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edge_rest.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edge_rest.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Number of connected components of the edge graph (isolated vertices
    /// count as components).
    pub fn component_count(&self) -> usize {
        let n = self.vertex_count();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut queue = VecDeque::from([s as u32]);
            while let Some(v) = queue.pop_front() {
                for &w in self.neighbors(v) {
                    if !seen[w as usize] {
                        seen[w as usize] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        count
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edges.len() as i64 + self.triangles.len() as i64
    }
}

/// Affine, aspect-preserving map of the rest `xy` footprint into `[0, 1]²`.
fn uv_map(rest: &[Point3<f64>]) -> Vec<[f64; 2]> {
    if rest.is_empty() {
        return Vec::new();
    }
    let (mut lo, mut hi) = (Point2::new(f64::MAX, f64::MAX), Point2::new(f64::MIN, f64::MIN));
    for p in rest {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let scale = (hi.x - lo.x).max(hi.y - lo.y);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    rest.iter()
        .map(|p| [((p.x - lo.x) / scale).clamp(0.0, 1.0), ((p.y - lo.y) / scale).clamp(0.0, 1.0)])
        .collect()
}

/// Marks faces enclosed by the constraint loop: everything reachable from
/// the outer face without crossing a constraint edge is outside.
fn inside_faces(cdt: &ConstrainedDelaunayTriangulation<SpadePoint<f64>>) -> Vec<bool> {
    let mut outside = vec![false; cdt.num_all_faces()];
    let outer = cdt.outer_face();
    outside[outer.fix().index()] = true;
    let mut queue = VecDeque::from([outer.fix()]);
    while let Some(f) = queue.pop_front() {
        let edges: Vec<_> = match cdt.face(f).as_inner() {
            Some(inner) => inner.adjacent_edges().to_vec(),
            None => cdt.convex_hull().map(|e| if e.face().is_outer() { e } else { e.rev() }).collect(),
        };
        for e in edges {
            if e.is_constraint_edge() {
                continue;
            }
            let g = e.rev().face().fix();
            if !outside[g.index()] {
                outside[g.index()] = true;
                queue.push_back(g);
            }
        }
    }
    outside.into_iter().map(|o| !o).collect()
}

/// Vertices at edge-graph distance `1..=k` from `vertex`, sorted. Empty for
/// `k = 0`.
pub fn k_ring(mesh: &TriMesh, vertex: u32, k: usize) -> Vec<u32> {
    let n = mesh.vertex_count();
    let mut depth = vec![usize::MAX; n];
    depth[vertex as usize] = 0;
    let mut queue = VecDeque::from([vertex]);
    let mut out = Vec::new();
    while let Some(v) = queue.pop_front() {
        let d = depth[v as usize];
        if d == k {
            continue;
        }
        for &w in mesh.neighbors(v) {
            if depth[w as usize] == usize::MAX {
                depth[w as usize] = d + 1;
                out.push(w);
                queue.push_back(w);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Triangulates the region enclosed by `boundary`.
///
/// The outline is flattened with chords no longer than `target_edge`, the
/// interior is seeded with an equilateral lattice of spacing `target_edge`
/// (symmetric about `x = 0`), a constrained Delaunay triangulation is built,
/// and every interior edge longer than `1.1 × target_edge` is split at its
/// midpoint until none remain. Rest positions lie in the `z = 0` plane.
/// Outline points closer than this fraction of the target edge are merged,
/// so tiny fillets and near-coincident segment ends do not leave slivers.
const MIN_SPACING: f64 = 0.3;

/// Interior lattice spacing relative to the target edge. A point inserted
/// anywhere in an equilateral lattice of spacing `s` connects to vertices at
/// most `2s/√3` away, so keeping that under the refinement limit stops a
/// boundary split from cascading through the whole lattice.
const LATTICE_SPACING: f64 = 0.9;

fn merge_close_points(outline: Vec<Point2<f64>>, min: f64, max: f64) -> Vec<Point2<f64>> {
    let mut kept: Vec<Point2<f64>> = Vec::with_capacity(outline.len());
    for p in outline {
        if kept.last().is_none_or(|q| (p - q).norm() >= min) {
            kept.push(p);
        }
    }
    while kept.len() > 3 && (kept[kept.len() - 1] - kept[0]).norm() < min {
        kept.pop();
    }
    // a merged segment is shorter than `min + max`, so halving one that
    // exceeds `max` gives halves longer than `max / 2`
    let n = kept.len();
    let mut out = Vec::with_capacity(n + 8);
    for i in 0..n {
        let (a, b) = (kept[i], kept[(i + 1) % n]);
        out.push(a);
        if (b - a).norm() > max {
            out.push(a + (b - a) * 0.5);
        }
    }
    out
}

pub fn triangulate_boundary(
    boundary: &Boundary,
    target_edge: f64,
    curve_tolerance: f64,
) -> Result<TriMesh, MeshError> {
    if !(target_edge > 0.0 && curve_tolerance > 0.0) {
        return Err(MeshError::TriangulationFailure("target_edge and tolerance must be > 0".into()));
    }
    let outline = merge_close_points(boundary.flatten(curve_tolerance, target_edge), MIN_SPACING * target_edge, target_edge);
    if !boundary::is_simple_loop(&outline) {
        return Err(MeshError::TriangulationFailure("boundary is not a simple closed curve".into()));
    }

    let mut points: Vec<SpadePoint<f64>> = outline.iter().map(|p| SpadePoint::new(p.x, p.y)).collect();
    let nb = outline.len();
    let constraints: Vec<[usize; 2]> = (0..nb).map(|i| [i, (i + 1) % nb]).collect();

    let (lo, hi) = outline.iter().fold(
        (Point2::new(f64::MAX, f64::MAX), Point2::new(f64::MIN, f64::MIN)),
        |(lo, hi), p| (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y))),
    );
    let h = LATTICE_SPACING * target_edge;
    let row = h * 3f64.sqrt() / 2.0;
    let clearance = 0.5 * h;
    let j0 = (lo.y / row).floor() as i64;
    let j1 = (hi.y / row).ceil() as i64;
    for j in j0..=j1 {
        let y = j as f64 * row;
        let shift = if j.rem_euclid(2) == 1 { 0.5 } else { 0.0 };
        let i0 = (lo.x / h).floor() as i64 - 1;
        let i1 = (hi.x / h).ceil() as i64 + 1;
        for i in i0..=i1 {
            let p = Point2::new((i as f64 + shift) * h, y);
            if !boundary::point_in_polygon(p, &outline) {
                continue;
            }
            let near = (0..nb).any(|s| {
                boundary::point_segment_distance(p, outline[s], outline[(s + 1) % nb]) < clearance
            });
            if !near {
                points.push(SpadePoint::new(p.x, p.y));
            }
        }
    }

    let mut cdt = ConstrainedDelaunayTriangulation::<SpadePoint<f64>>::bulk_load_cdt(points, constraints)
        .map_err(|e| MeshError::TriangulationFailure(format!("{e:?}")))?;

    // Split long interior edges at their midpoints. A split point is never
    // on a constraint, so every face around it stays inside; only edges of
    // those faces need another look after each insertion.
    let limit = EDGE_SLACK * target_edge;
    let long = |e: spade::handles::DirectedEdgeHandle<'_, SpadePoint<f64>, (), spade::CdtEdge<()>, ()>| {
        let [a, b] = e.positions();
        !e.is_constraint_edge() && ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() > limit
    };
    let inside = inside_faces(&cdt);
    let mut work: VecDeque<[spade::handles::FixedVertexHandle; 2]> = cdt
        .undirected_edges()
        .map(|e| e.as_directed())
        .filter(|&d| long(d) && (inside[d.face().fix().index()] || inside[d.rev().face().fix().index()]))
        .map(|d| [d.from().fix(), d.to().fix()])
        .collect();
    let budget = 20 * cdt.num_vertices() + 1000;
    let mut inserted = 0;
    while let Some([a, b]) = work.pop_front() {
        let Some(edge) = cdt.get_edge_from_neighbors(a, b) else { continue };
        if !long(edge) {
            continue;
        }
        let [pa, pb] = edge.positions();
        let mid = SpadePoint::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y));
        inserted += 1;
        if inserted > budget {
            return Err(MeshError::TriangulationFailure("edge refinement did not converge".into()));
        }
        let before = cdt.num_vertices();
        let v = cdt.insert(mid).map_err(|e| MeshError::TriangulationFailure(format!("{e:?}")))?;
        if cdt.num_vertices() == before {
            return Err(MeshError::TriangulationFailure("degenerate edge split".into()));
        }
        for e in cdt.vertex(v).out_edges() {
            for cand in [e, e.next()] {
                if long(cand) {
                    work.push_back([cand.from().fix(), cand.to().fix()]);
                }
            }
        }
    }

    let inside = inside_faces(&cdt);
    let triangles_raw: Vec<[usize; 3]> = cdt
        .inner_faces()
        .filter(|f| inside[f.fix().index()])
        .map(|f| f.vertices().map(|v| v.fix().index()))
        .collect();
    // drop any vertex that ended up only in outside faces
    let mut remap = vec![u32::MAX; cdt.num_vertices()];
    let mut rest = Vec::new();
    let mut used = vec![false; cdt.num_vertices()];
    for t in &triangles_raw {
        for &v in t {
            used[v] = true;
        }
    }
    for v in cdt.vertices() {
        let i = v.fix().index();
        if used[i] {
            remap[i] = rest.len() as u32;
            let p = v.position();
            rest.push(Point3::new(p.x, p.y, 0.0));
        }
    }
    let triangles: Vec<[u32; 3]> = triangles_raw.iter().map(|t| t.map(|v| remap[v])).collect();
    let mesh = TriMesh::from_parts(rest, triangles, target_edge)?;
    if mesh.component_count() != 1 {
        return Err(MeshError::TriangulationFailure("mesh is not a single component".into()));
    }
    Ok(mesh)
}
