//! Z-buffered depth rasterization, used for previews and as an independent
//! check on ray-cast visibility.

use std::path::Path;

use image::{ImageBuffer, Luma};
use nalgebra::{Point2, Point3};

use crate::camera::CameraModel;

/// Tolerance of the z-buffer visibility test (m). A vertex at a pixel centre
/// lies on the surface that wrote the buffer, but the pixel centre is up to
/// half a pixel away from the vertex, so the buffer holds the depth of a
/// slightly different surface point. Stacked cloth layers are at least one
/// thickness (8 mm) apart, well above this.
pub const ZBUFFER_EPSILON: f64 = 2e-3;

/// Depth below which a point is treated as on the camera plane (m).
const NEAR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    /// Row-major depth along the optical axis (m); infinite for background.
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub fn background(width: u32, height: u32) -> Self {
        DepthImage { width, height, depth: vec![f64::INFINITY; width as usize * height as usize] }
    }

    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.depth[y as usize * self.width as usize + x as usize]
    }

    /// Depth of the pixel containing the continuous image point `p`.
    pub fn sample(&self, p: Point2<f64>) -> Option<f64> {
        if p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let (x, y) = (p.x.floor() as u64, p.y.floor() as u64);
        (x < self.width as u64 && y < self.height as u64).then(|| self.at(x as u32, y as u32))
    }

    pub fn covered_pixels(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }

    /// 16-bit grayscale image with depth in millimetres and 0 for
    /// background. Depths beyond 65.535 m saturate.
    pub fn to_png16(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        ImageBuffer::from_fn(self.width, self.height, |x, y| {
            let d = self.at(x, y);
            Luma([if d.is_finite() { (d * 1000.0).round().clamp(1.0, u16::MAX as f64) as u16 } else { 0 }])
        })
    }

    pub fn write_png16(&self, path: &Path) -> image::ImageResult<()> {
        self.to_png16().save_with_format(path, image::ImageFormat::Png)
    }

    /// 8-bit mask: 255 where any surface was drawn.
    pub fn silhouette(&self) -> ImageBuffer<Luma<u8>, Vec<u8>> {
        ImageBuffer::from_fn(self.width, self.height, |x, y| Luma([if self.at(x, y).is_finite() { 255 } else { 0 }]))
    }
}

/// Rasterizes `triangles` at the camera's resolution, sampling at pixel
/// centres. Depth is interpolated perspective-correctly (linear in `1/z`).
/// Triangles with a vertex on or behind the camera plane are skipped.
pub fn rasterize_depth(camera: &CameraModel, positions: &[Point3<f64>], triangles: &[[u32; 3]]) -> DepthImage {
    let mut img = DepthImage::background(camera.width, camera.height);
    let (w, h) = (camera.width as i64, camera.height as i64);
    for tri in triangles {
        let mut s = [(0.0f64, 0.0f64, 0.0f64); 3];
        let mut ok = true;
        for (k, &v) in tri.iter().enumerate() {
            let c = camera.pose.transform_point(&positions[v as usize]);
            if c.z <= NEAR {
                ok = false;
                break;
            }
            s[k] = (camera.fx * c.x / c.z + camera.cx, camera.fy * c.y / c.z + camera.cy, 1.0 / c.z);
        }
        if !ok {
            continue;
        }
        let area = (s[1].0 - s[0].0) * (s[2].1 - s[0].1) - (s[1].1 - s[0].1) * (s[2].0 - s[0].0);
        if area.abs() < 1e-18 {
            continue;
        }
        let min_x = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        // pixel i has its centre at i + 0.5
        let x0 = ((min_x - 0.5).ceil() as i64).max(0);
        let x1 = ((max_x - 0.5).floor() as i64).min(w - 1);
        let y0 = ((min_y - 0.5).ceil() as i64).max(0);
        let y1 = ((max_y - 0.5).floor() as i64).min(h - 1);
        for y in y0..=y1 {
            let py = y as f64 + 0.5;
            for x in x0..=x1 {
                let px = x as f64 + 0.5;
                let edge = |a: (f64, f64, f64), b: (f64, f64, f64)| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
                let b0 = edge(s[1], s[2]) / area;
                let b1 = edge(s[2], s[0]) / area;
                let b2 = edge(s[0], s[1]) / area;
                if b0 < -1e-12 || b1 < -1e-12 || b2 < -1e-12 {
                    continue;
                }
                let depth = 1.0 / (b0 * s[0].2 + b1 * s[1].2 + b2 * s[2].2);
                let slot = &mut img.depth[y as usize * w as usize + x as usize];
                if depth < *slot {
                    *slot = depth;
                }
            }
        }
    }
    img
}

/// Z-buffer visibility of a world point: it projects into the image and is
/// no deeper than the buffer at its pixel plus [`ZBUFFER_EPSILON`].
pub fn zbuffer_visible(camera: &CameraModel, image: &DepthImage, point: &Point3<f64>) -> bool {
    let Ok(p) = camera.project(point) else { return false };
    image.sample(p.pixel).is_some_and(|d| p.depth <= d + ZBUFFER_EPSILON)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use nalgebra::Vector3;

    fn camera() -> CameraModel {
        let pose = Pose::look_at(Point3::new(0.0, 0.0, 1.0), Point3::origin(), Vector3::y()).unwrap();
        CameraModel::centered(200.0, 64, 48, pose).unwrap()
    }

    #[test]
    fn empty_mesh_is_background() {
        let img = rasterize_depth(&camera(), &[], &[]);
        assert!(img.depth.iter().all(|d| d.is_infinite()));
        assert_eq!(img.covered_pixels(), 0);
    }

    #[test]
    fn triangle_over_principal_point() {
        let pos = [Point3::new(-0.1, -0.1, 0.0), Point3::new(0.1, -0.1, 0.0), Point3::new(0.0, 0.1, 0.0)];
        let cam = camera();
        let img = rasterize_depth(&cam, &pos, &[[0, 1, 2]]);
        let d = img.sample(Point2::new(cam.cx, cam.cy)).unwrap();
        assert!((d - 1.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn tilted_triangle_depth_is_perspective_correct() {
        // plane z = 0.2 x, so the ray through each pixel meets it at a
        // depth that can be solved for directly
        let pos = [Point3::new(-0.3, -0.3, -0.06), Point3::new(0.3, -0.3, 0.06), Point3::new(0.0, 0.3, 0.0)];
        let cam = camera();
        let img = rasterize_depth(&cam, &pos, &[[0, 1, 2]]);
        let mut checked = 0;
        for y in 0..img.height {
            for x in 0..img.width {
                let d = img.at(x, y);
                if !d.is_finite() {
                    continue;
                }
                let dir = cam.ray_direction(Point2::new(x as f64 + 0.5, y as f64 + 0.5));
                let o = cam.center();
                let t = (0.2 * o.x - o.z) / (dir.z - 0.2 * dir.x);
                assert!((d - t).abs() < 1e-9, "pixel ({x}, {y}): {d} vs {t}");
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn png_encodes_millimetres() {
        let mut img = DepthImage::background(2, 1);
        img.depth[1] = 1.2345;
        let png = img.to_png16();
        assert_eq!(png.get_pixel(0, 0).0[0], 0);
        assert_eq!(png.get_pixel(1, 0).0[0], 1235);
    }
}
