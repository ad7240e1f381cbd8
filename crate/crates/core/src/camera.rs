//! Pinhole cameras.
//!
//! Camera frame follows the usual computer-vision convention: `x` right,
//! `y` down, `z` along the optical axis. Image coordinates have their origin
//! at the top-left corner of the image, so the centre of pixel `(i, j)` is
//! at `(i + 0.5, j + 0.5)`.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Matrix4, Point2, Point3, Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::CameraRanges;
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum CameraError {
    #[error("point is not in front of the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("viewing ray is parallel to the plane")]
    RayParallelToPlane,
    #[error("no camera framed the garment after {attempts} attempts")]
    FramingFailure { attempts: u32 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Rigid transform `x' = rotation * x + translation`. A camera pose maps
/// world to camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.inverse() * self.translation))
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4×4 matrix, the form used in scene files.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    /// Inverse of [`Pose::to_rows`]. The upper-left block must be a rotation
    /// (orthonormal, determinant 1) to within `1e-6` and the last row must
    /// be `[0, 0, 0, 1]`.
    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self, CameraError> {
        let r = Matrix3::from_fn(|i, j| rows[i][j]);
        let orthonormal = (r.transpose() * r - Matrix3::identity()).abs().max() <= 1e-6;
        if !orthonormal || (r.determinant() - 1.0).abs() > 1e-6 || rows[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(CameraError::InvalidCamera("pose is not a rigid transform".into()));
        }
        Ok(Pose {
            rotation: Rotation3::from_matrix_unchecked(r),
            translation: Vector3::new(rows[0][3], rows[1][3], rows[2][3]),
        })
    }

    /// Camera at `eye` looking at `target`. `up` is the world direction that
    /// should appear upward in the image; it must not be parallel to the
    /// viewing direction.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Result<Self, CameraError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(CameraError::InvalidCamera("eye and target coincide".into()));
        }
        let z = forward.normalize();
        let down = -(up - z * up.dot(&z));
        if down.norm() < 1e-12 {
            return Err(CameraError::InvalidCamera("up vector is parallel to the viewing direction".into()));
        }
        let y = down.normalize();
        let x = y.cross(&z);
        let rotation = Rotation3::from_matrix_unchecked(Matrix3::from_rows(&[
            x.transpose(),
            y.transpose(),
            z.transpose(),
        ]));
        Ok(Pose { rotation, translation: -(rotation * eye.coords) })
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 4]; 4]>::deserialize(d)?;
        Pose::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCamera")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub pose: Pose,
}

#[derive(Deserialize)]
struct RawCamera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    pose: Pose,
}

impl TryFrom<RawCamera> for CameraModel {
    type Error = CameraError;

    fn try_from(r: RawCamera) -> Result<Self, CameraError> {
        CameraModel::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, r.pose)
    }
}

/// Projection of a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Point2<f64>,
    /// Distance along the optical axis (m).
    pub depth: f64,
}

/// The plane `normal · x = offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    /// Horizontal plane at height `z`.
    pub fn horizontal(z: f64) -> Self {
        Plane { normal: Vector3::z(), offset: z }
    }
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, pose: Pose) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(CameraError::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(CameraError::InvalidCamera("principal point outside the image".into()));
        }
        Ok(CameraModel { fx, fy, cx, cy, width, height, pose })
    }

    /// Camera with square pixels and the principal point at the image centre.
    pub fn centered(focal: f64, width: u32, height: u32, pose: Pose) -> Result<Self, CameraError> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height, pose)
    }

    pub fn center(&self) -> Point3<f64> {
        self.pose.center()
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.pose.rotation.inverse() * Vector3::z()
    }

    pub fn project(&self, point: &Point3<f64>) -> Result<Projection, CameraError> {
        let c = self.pose.transform_point(point);
        if !(c.z > 0.0) {
            return Err(CameraError::BehindCamera { depth: c.z });
        }
        Ok(Projection {
            pixel: Point2::new(self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy),
            depth: c.z,
        })
    }

    /// World-space direction of the ray through `pixel` (not normalised;
    /// its camera-frame `z` component is 1).
    pub fn ray_direction(&self, pixel: Point2<f64>) -> Vector3<f64> {
        let d = Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0);
        self.pose.rotation.inverse() * d
    }

    /// Where the ray through `pixel` meets `plane`.
    pub fn deproject_to_plane(&self, pixel: Point2<f64>, plane: &Plane) -> Result<Point3<f64>, CameraError> {
        let origin = self.center();
        let dir = self.ray_direction(pixel);
        let denom = plane.normal.dot(&dir);
        if denom.abs() <= 1e-12 * plane.normal.norm() * dir.norm() {
            return Err(CameraError::RayParallelToPlane);
        }
        let t = (plane.offset - plane.normal.dot(&origin.coords)) / denom;
        if !(t > 0.0) {
            return Err(CameraError::BehindCamera { depth: t });
        }
        Ok(origin + dir * t)
    }

    /// `true` if `pixel` lies inside the image shrunk by `margin` times its
    /// size on every side.
    pub fn in_frame(&self, pixel: Point2<f64>, margin: f64) -> bool {
        let (w, h) = (self.width as f64, self.height as f64);
        pixel.x >= margin * w && pixel.x <= (1.0 - margin) * w && pixel.y >= margin * h && pixel.y <= (1.0 - margin) * h
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    /// Bounding box of `points`, `None` when empty.
    pub fn of(points: &[Point3<f64>]) -> Option<Self> {
        let first = *points.first()?;
        Some(points.iter().fold(Aabb { min: first, max: first }, |b, p| Aabb {
            min: b.min.inf(p),
            max: b.max.sup(p),
        }))
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn corners(&self) -> [Point3<f64>; 8] {
        std::array::from_fn(|i| {
            Point3::new(
                if i & 1 == 0 { self.min.x } else { self.max.x },
                if i & 2 == 0 { self.min.y } else { self.max.y },
                if i & 4 == 0 { self.min.z } else { self.max.z },
            )
        })
    }
}

/// Samples a camera on the upper hemisphere around `bbox`, looking at its
/// jittered centre, such that the whole box projects inside the image with
/// the configured margin. The perspective image of a convex set seen from
/// outside is convex, so checking the eight corners covers every point.
pub fn sample_camera(seed: u64, bbox: &Aabb, ranges: &CameraRanges) -> Result<CameraModel, CameraError> {
    let mut rng = rng_for(seed, stream::CAMERA);
    for _ in 0..ranges.max_attempts {
        let azimuth = rng.gen_range(0.0..TAU);
        let elevation = ranges.elevation_deg.sample(&mut rng).to_radians();
        let radius = ranges.radius.sample(&mut rng);
        let focal = ranges.focal.sample(&mut rng);
        let j = ranges.target_jitter;
        let jitter = if j > 0.0 {
            Vector3::new(rng.gen_range(-j..=j), rng.gen_range(-j..=j), 0.0)
        } else {
            Vector3::zeros()
        };
        let target = bbox.center() + jitter;
        let heading = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0);
        let eye = target + (heading * elevation.cos() + Vector3::z() * elevation.sin()) * radius;
        // straight down the world up vector is degenerate; the horizontal
        // heading is its limit as the elevation approaches 90 degrees
        let up = if elevation.cos() < 1e-9 { -heading } else { Vector3::z() };
        let pose = Pose::look_at(eye, target, up)?;
        let camera = CameraModel::centered(focal, ranges.width, ranges.height, pose)?;
        let framed = bbox
            .corners()
            .iter()
            .all(|c| camera.project(c).is_ok_and(|p| camera.in_frame(p.pixel, ranges.margin)));
        if framed {
            return Ok(camera);
        }
    }
    Err(CameraError::FramingFailure { attempts: ranges.max_attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RangeConfig;

    fn overhead(height: f64) -> CameraModel {
        let pose = Pose::look_at(Point3::new(0.0, 0.0, height), Point3::origin(), Vector3::y()).unwrap();
        CameraModel::centered(500.0, 640, 480, pose).unwrap()
    }

    #[test]
    fn axis_point_projects_to_principal_point() {
        let cam = overhead(1.0);
        let p = cam.project(&Point3::new(0.0, 0.0, 0.25)).unwrap();
        assert!((p.pixel - Point2::new(320.0, 240.0)).norm() < 1e-12);
        assert!((p.depth - 0.75).abs() < 1e-12);
    }

    #[test]
    fn overhead_image_axes() {
        // looking down with +y up in the image: world +x is image right,
        // world +y is image up
        let cam = overhead(1.0);
        let right = cam.project(&Point3::new(0.1, 0.0, 0.0)).unwrap().pixel;
        let up = cam.project(&Point3::new(0.0, 0.1, 0.0)).unwrap().pixel;
        assert!(right.x > 320.0 && (right.y - 240.0).abs() < 1e-9);
        assert!(up.y < 240.0 && (up.x - 320.0).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = overhead(1.0);
        assert!(matches!(cam.project(&Point3::new(0.0, 0.0, 2.0)), Err(CameraError::BehindCamera { .. })));
        assert!(matches!(cam.project(&Point3::new(0.0, 0.0, 1.0)), Err(CameraError::BehindCamera { .. })));
    }

    #[test]
    fn deproject_principal_point_hits_table_below() {
        let cam = overhead(1.0);
        let p = cam.deproject_to_plane(Point2::new(cam.cx, cam.cy), &Plane::horizontal(0.0)).unwrap();
        assert!((p - Point3::origin()).norm() < 1e-12);
    }

    #[test]
    fn parallel_plane_is_rejected() {
        let cam = overhead(1.0);
        let wall = Plane { normal: Vector3::x(), offset: 0.3 };
        assert_eq!(
            cam.deproject_to_plane(Point2::new(cam.cx, cam.cy), &wall),
            Err(CameraError::RayParallelToPlane)
        );
    }

    #[test]
    fn pose_rows_round_trip() {
        let pose = Pose::look_at(Point3::new(0.4, -0.9, 1.1), Point3::new(0.02, 0.01, 0.0), Vector3::z()).unwrap();
        assert_eq!(Pose::from_rows(pose.to_rows()).unwrap(), pose);
        let mut bad = pose.to_rows();
        bad[0][0] *= 2.0;
        assert!(Pose::from_rows(bad).is_err());
    }

    #[test]
    fn invalid_intrinsics_are_rejected() {
        let pose = Pose::identity();
        assert!(CameraModel::new(0.0, 1.0, 1.0, 1.0, 4, 4, pose).is_err());
        assert!(CameraModel::new(1.0, 1.0, 4.0, 1.0, 4, 4, pose).is_err());
        let text = r#"{"fx":1.0,"fy":1.0,"cx":9.0,"cy":1.0,"width":4,"height":4,"pose":[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}"#;
        assert!(serde_json::from_str::<CameraModel>(text).is_err());
    }

    #[test]
    fn top_down_range_looks_straight_down() {
        let mut ranges = RangeConfig::default().camera;
        ranges.elevation_deg = crate::config::Range::fixed(90.0);
        let bbox = Aabb { min: Point3::new(-0.2, -0.15, 0.0), max: Point3::new(0.2, 0.15, 0.01) };
        for seed in 0..10 {
            let cam = sample_camera(seed, &bbox, &ranges).unwrap();
            let angle = cam.forward().angle(&-Vector3::z());
            assert!(angle <= 1e-6, "seed {seed}: {angle}");
        }
    }

    #[test]
    fn impossible_framing_fails() {
        let mut ranges = RangeConfig::default().camera;
        ranges.radius = crate::config::Range::fixed(0.2);
        let bbox = Aabb { min: Point3::new(-1.0, -1.0, 0.0), max: Point3::new(1.0, 1.0, 0.0) };
        assert_eq!(
            sample_camera(3, &bbox, &ranges),
            Err(CameraError::FramingFailure { attempts: ranges.max_attempts })
        );
    }
}
