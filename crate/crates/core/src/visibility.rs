//! Ray-cast occlusion tests.
//!
//! A vertex is visible when it is in front of the camera, projects inside
//! the image, and the segment from the camera centre to the vertex crosses
//! no triangle (other than those incident to the vertex) more than
//! [`DEPTH_EPSILON`] before reaching it. A keypoint is visible when its
//! bound vertex or any vertex of its 2-ring is.

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::mesh::KeypointBinding;

/// A hit must be at least this much closer than the vertex to occlude it (m).
pub const DEPTH_EPSILON: f64 = 1e-5;
/// Barycentric slack for ray-triangle hits, so rays through shared edges
/// and corners are never missed.
pub const BARYCENTRIC_EPSILON: f64 = 1e-9;

/// Möller–Trumbore intersection. Returns the ray parameter `t` of the hit
/// on `origin + t * dir`, if any.
pub fn ray_triangle(origin: &Point3<f64>, dir: &Vector3<f64>, tri: [&Point3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(-BARYCENTRIC_EPSILON..=1.0 + BARYCENTRIC_EPSILON).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -BARYCENTRIC_EPSILON || u + v > 1.0 + BARYCENTRIC_EPSILON {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    min: Point3<f64>,
    max: Point3<f64>,
}

impl Bounds {
    fn empty() -> Self {
        Bounds { min: Point3::from([f64::INFINITY; 3]), max: Point3::from([f64::NEG_INFINITY; 3]) }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    /// Slab test against the segment `origin + t * dir`, `t` in `[0, t_max]`.
    fn hit(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> bool {
        let (mut lo, mut hi) = (0.0f64, t_max);
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            // NaN (0 * inf) means the ray runs inside the slab plane
            if a.is_nan() || b.is_nan() {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return false;
                }
                continue;
            }
            lo = lo.max(a);
            hi = hi.min(b);
            if lo > hi {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Bounds, start: usize, end: usize },
    Inner { bounds: Bounds, left: usize, right: usize },
}

const LEAF_SIZE: usize = 4;

/// Bounding volume hierarchy over the triangles of one frame.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(positions: &[Point3<f64>], triangles: &[[u32; 3]]) -> Self {
        let centroids: Vec<Point3<f64>> = triangles
            .iter()
            .map(|t| Point3::from((positions[t[0] as usize].coords + positions[t[1] as usize].coords + positions[t[2] as usize].coords) / 3.0))
            .collect();
        let mut bvh = Bvh { nodes: Vec::new(), order: (0..triangles.len() as u32).collect() };
        if !triangles.is_empty() {
            bvh.split(positions, triangles, &centroids, 0, triangles.len());
        }
        bvh
    }

    fn split(
        &mut self,
        positions: &[Point3<f64>],
        triangles: &[[u32; 3]],
        centroids: &[Point3<f64>],
        start: usize,
        end: usize,
    ) -> usize {
        let mut bounds = Bounds::empty();
        let mut spread = Bounds::empty();
        for &t in &self.order[start..end] {
            for &v in &triangles[t as usize] {
                bounds.grow(&positions[v as usize]);
            }
            spread.grow(&centroids[t as usize]);
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let extent = spread.max - spread.min;
        let axis = extent.imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]).then(a.cmp(&b))
        });
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.split(positions, triangles, centroids, start, mid);
        let right = self.split(positions, triangles, centroids, mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    /// `true` if any triangle accepted by `keep` is hit by the segment
    /// `origin + t * dir` with `t` in `(0, t_max)`.
    pub fn any_hit(
        &self,
        positions: &[Point3<f64>],
        triangles: &[[u32; 3]],
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        t_max: f64,
        keep: impl Fn(u32) -> bool,
    ) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = dir.map(|c| 1.0 / c);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                Node::Inner { bounds, left, right } => {
                    if bounds.hit(origin, &inv, t_max) {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
                Node::Leaf { bounds, start, end } => {
                    if !bounds.hit(origin, &inv, t_max) {
                        continue;
                    }
                    for &t in &self.order[*start..*end] {
                        if !keep(t) {
                            continue;
                        }
                        let tri = triangles[t as usize].map(|v| &positions[v as usize]);
                        if ray_triangle(origin, dir, tri).is_some_and(|h| h > 0.0 && h < t_max) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// One frame prepared for visibility queries.
pub struct VisibilityScene<'a> {
    camera: &'a CameraModel,
    positions: &'a [Point3<f64>],
    triangles: &'a [[u32; 3]],
    bvh: Bvh,
}

impl<'a> VisibilityScene<'a> {
    pub fn new(camera: &'a CameraModel, positions: &'a [Point3<f64>], triangles: &'a [[u32; 3]]) -> Self {
        VisibilityScene { camera, positions, triangles, bvh: Bvh::build(positions, triangles) }
    }

    pub fn vertex_visible(&self, v: u32) -> bool {
        let p = &self.positions[v as usize];
        let Ok(proj) = self.camera.project(p) else { return false };
        if !in_image(self.camera, proj.pixel) {
            return false;
        }
        let origin = self.camera.center();
        let dir = p - origin;
        let dist = dir.norm();
        if dist <= DEPTH_EPSILON {
            return true;
        }
        let t_max = 1.0 - DEPTH_EPSILON / dist;
        let triangles = self.triangles;
        !self.bvh.any_hit(self.positions, triangles, &origin, &dir, t_max, |t| !triangles[t as usize].contains(&v))
    }
}

/// Pixel inside the image rectangle `[0, width) × [0, height)`.
pub fn in_image(camera: &CameraModel, pixel: Point2<f64>) -> bool {
    pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < camera.width as f64 && pixel.y < camera.height as f64
}

/// Visibility of one semantic keypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointView {
    pub label: String,
    pub vertex: u32,
    /// Projection of the bound vertex, absent when it is behind the camera.
    pub pixel: Option<[f64; 2]>,
    pub visible: bool,
    pub behind_camera: bool,
}

/// Keypoint visibility with the 2-ring rule, in binding order.
pub fn keypoint_visibility(
    camera: &CameraModel,
    positions: &[Point3<f64>],
    triangles: &[[u32; 3]],
    binding: &KeypointBinding,
) -> Vec<KeypointView> {
    let scene = VisibilityScene::new(camera, positions, triangles);
    binding
        .entries
        .iter()
        .map(|kp| {
            let proj = camera.project(&positions[kp.vertex as usize]);
            let behind_camera = proj.is_err();
            let visible = !behind_camera
                && std::iter::once(kp.vertex).chain(kp.ring.iter().copied()).any(|v| scene.vertex_visible(v));
            KeypointView {
                label: kp.label.clone(),
                vertex: kp.vertex,
                pixel: proj.ok().map(|p| [p.pixel.x, p.pixel.y]),
                visible,
                behind_camera,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;

    #[test]
    fn ray_hits_triangle_interior_and_shared_edge() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(1.0, 0.0, 0.0);
        let c = Point3::new(0.0, 1.0, 0.0);
        let o = Point3::new(0.2, 0.2, 1.0);
        let down = -Vector3::z();
        assert!((ray_triangle(&o, &down, [&a, &b, &c]).unwrap() - 1.0).abs() < 1e-12);
        // exactly on the hypotenuse
        let edge = Point3::new(0.5, 0.5, 2.0);
        assert!(ray_triangle(&edge, &(down * 2.0), [&a, &b, &c]).is_some());
        let miss = Point3::new(0.8, 0.8, 1.0);
        assert!(ray_triangle(&miss, &down, [&a, &b, &c]).is_none());
    }

    #[test]
    fn bvh_agrees_with_linear_scan() {
        // a wavy strip of triangles and rays from a fixed origin
        let mut pos = Vec::new();
        for i in 0..40 {
            let x = i as f64 * 0.05;
            pos.push(Point3::new(x, 0.0, (x * 3.0).sin() * 0.2));
            pos.push(Point3::new(x, 0.5, (x * 2.0).cos() * 0.2));
        }
        let tris: Vec<[u32; 3]> =
            (0..39u32).flat_map(|i| [[2 * i, 2 * i + 2, 2 * i + 1], [2 * i + 1, 2 * i + 2, 2 * i + 3]]).collect();
        let bvh = Bvh::build(&pos, &tris);
        let origin = Point3::new(1.0, 0.25, 2.0);
        for k in 0..200 {
            let target = Point3::new(k as f64 * 0.01, 0.05 + (k % 9) as f64 * 0.05, -0.5);
            let dir = target - origin;
            let linear = tris.iter().any(|t| {
                ray_triangle(&origin, &dir, t.map(|v| &pos[v as usize])).is_some_and(|h| h > 0.0 && h < 1.0)
            });
            assert_eq!(bvh.any_hit(&pos, &tris, &origin, &dir, 1.0, |_| true), linear, "ray {k}");
        }
    }

    #[test]
    fn covered_vertex_is_hidden() {
        // a big square above a lone triangle
        let pos = vec![
            Point3::new(-0.3, -0.3, 0.5),
            Point3::new(0.3, -0.3, 0.5),
            Point3::new(0.3, 0.3, 0.5),
            Point3::new(-0.3, 0.3, 0.5),
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.1, 0.0, 0.0),
            Point3::new(0.0, 0.1, 0.0),
        ];
        let tris = vec![[0, 1, 2], [0, 2, 3], [4, 5, 6]];
        let pose = Pose::look_at(Point3::new(0.0, 0.0, 2.0), Point3::origin(), Vector3::y()).unwrap();
        let cam = CameraModel::centered(300.0, 200, 200, pose).unwrap();
        let scene = VisibilityScene::new(&cam, &pos, &tris);
        assert!(!scene.vertex_visible(4));
        assert!(scene.vertex_visible(0));
        let open = VisibilityScene::new(&cam, &pos, &tris[2..]);
        assert!(open.vertex_visible(4));
    }
}
