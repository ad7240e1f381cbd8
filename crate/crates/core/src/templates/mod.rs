//! Parametric garment templates.
//!
//! A template is a closed outline around a small skeleton of named
//! dimensions. Each outline edge is a cubic Bézier whose control points can
//! be pushed along the outward normal, and selected corners are rounded
//! with circular fillets. Semantic keypoints sit on outline corners (or on
//! the fillet midpoint when the corner is rounded).
//!
//! The template plane is `x` right, `y` up, with the garment's mirror axis
//! on `x = 0`. "Left" labels are on the `-x` side.

pub mod boundary;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::config::{KindRanges, TemplateRanges};
use crate::rng::{rng_for, stream};
pub use boundary::{Boundary, Segment};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TemplateError {
    #[error("invalid template parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate boundary: {0}")]
    DegenerateBoundary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GarmentType {
    Tshirt,
    Shorts,
    Towel,
}

const TOWEL_LABELS: [&str; 4] = ["corner_tl", "corner_tr", "corner_bl", "corner_br"];
const SHORTS_LABELS: [&str; 6] = [
    "waist_left",
    "waist_right",
    "leg_outer_left",
    "leg_outer_right",
    "leg_inner_left",
    "leg_inner_right",
];
const TSHIRT_LABELS: [&str; 12] = [
    "neck_left",
    "neck_right",
    "shoulder_left",
    "shoulder_right",
    "sleeve_top_left",
    "sleeve_bottom_left",
    "sleeve_top_right",
    "sleeve_bottom_right",
    "armpit_left",
    "armpit_right",
    "waist_left",
    "waist_right",
];

impl GarmentType {
    pub const ALL: [GarmentType; 3] = [GarmentType::Towel, GarmentType::Shorts, GarmentType::Tshirt];

    /// Keypoint labels in their fixed serialization order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            GarmentType::Towel => &TOWEL_LABELS,
            GarmentType::Shorts => &SHORTS_LABELS,
            GarmentType::Tshirt => &TSHIRT_LABELS,
        }
    }

    pub fn label_index(self, label: &str) -> Option<usize> {
        self.labels().iter().position(|l| *l == label)
    }

    /// Skeleton dimension names in sampling order.
    pub fn skeleton_names(self) -> &'static [&'static str] {
        match self {
            GarmentType::Towel => &["width", "height"],
            GarmentType::Shorts => &["waist_width", "leg_length", "leg_opening", "crotch_depth"],
            GarmentType::Tshirt => &[
                "chest_width",
                "torso_length",
                "sleeve_length",
                "sleeve_width",
                "neck_width",
                "neck_depth",
            ],
        }
    }

    /// Name used in natural-language prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            GarmentType::Tshirt => "T-shirt",
            GarmentType::Shorts => "shorts",
            GarmentType::Towel => "towel",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GarmentType::Tshirt => "tshirt",
            GarmentType::Shorts => "shorts",
            GarmentType::Towel => "towel",
        }
    }
}

impl fmt::Display for GarmentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GarmentType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tshirt" => Ok(GarmentType::Tshirt),
            "shorts" => Ok(GarmentType::Shorts),
            "towel" => Ok(GarmentType::Towel),
            other => Err(format!("unknown garment kind `{other}`")),
        }
    }
}

/// Sampled template parameters. Lengths in meters.
///
/// `bezier_offsets[i]` displaces the inner control points of outline edge
/// `i` along its outward normal; `corner_radii[i]` rounds outline corner
/// `i`. Both follow the template's counter-clockwise corner order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateParams {
    pub kind: GarmentType,
    pub skeleton: BTreeMap<String, f64>,
    pub bezier_offsets: Vec<f64>,
    pub corner_radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticKeypoint {
    pub label: String,
    pub anchor: Point2<f64>,
}

#[derive(Debug, Clone, Copy)]
enum EdgeShape {
    Straight,
    /// Neckline-style scoop of the given depth towards the interior.
    Dip(f64),
}

#[derive(Debug, Clone)]
struct Corner {
    pos: Point2<f64>,
    label: Option<&'static str>,
    roundable: bool,
}

/// Corner polygon of a template before offsets and rounding are applied.
#[derive(Debug, Clone)]
struct Outline {
    corners: Vec<Corner>,
    /// Edge `i` joins corner `i` to corner `i + 1`.
    edges: Vec<EdgeShape>,
}

const SHORTS_LEG_FLARE: f64 = 0.06;
const TSHIRT_SHOULDER_DROP: f64 = 0.045;
const TSHIRT_SLEEVE_ANGLE: f64 = std::f64::consts::PI / 6.0;
const NECK_TANGENT_PULL: f64 = 0.15;
/// Fillet trims may use at most this fraction of an adjacent edge.
const MAX_TRIM_FRACTION: f64 = 0.45;

fn corner(x: f64, y: f64, label: Option<&'static str>, roundable: bool) -> Corner {
    Corner {
        pos: Point2::new(x, y),
        label,
        roundable,
    }
}

fn outline(kind: GarmentType, dims: &BTreeMap<String, f64>) -> Result<Outline, TemplateError> {
    let d = |name: &str| -> Result<f64, TemplateError> {
        dims.get(name)
            .copied()
            .ok_or_else(|| TemplateError::InvalidParams(format!("missing dimension `{name}`")))
    };
    let out = match kind {
        GarmentType::Towel => {
            let (w, h) = (d("width")? / 2.0, d("height")? / 2.0);
            Outline {
                corners: vec![
                    corner(-w, -h, Some("corner_bl"), true),
                    corner(w, -h, Some("corner_br"), true),
                    corner(w, h, Some("corner_tr"), true),
                    corner(-w, h, Some("corner_tl"), true),
                ],
                edges: vec![EdgeShape::Straight; 4],
            }
        }
        GarmentType::Shorts => {
            let hw = d("waist_width")? / 2.0;
            let len = d("leg_length")?;
            let open = d("leg_opening")?;
            let crotch = d("crotch_depth")?;
            let flare = SHORTS_LEG_FLARE * len;
            if crotch >= len {
                return Err(TemplateError::InvalidParams("crotch_depth must be below leg_length".into()));
            }
            if open >= hw + flare {
                return Err(TemplateError::InvalidParams("leg openings overlap".into()));
            }
            Outline {
                corners: vec![
                    corner(hw, 0.0, Some("waist_right"), true),
                    corner(-hw, 0.0, Some("waist_left"), true),
                    corner(-hw - flare, -len, Some("leg_outer_left"), true),
                    corner(-hw - flare + open, -len, Some("leg_inner_left"), true),
                    corner(0.0, -crotch, None, false),
                    corner(hw + flare - open, -len, Some("leg_inner_right"), true),
                    corner(hw + flare, -len, Some("leg_outer_right"), true),
                ],
                edges: vec![EdgeShape::Straight; 7],
            }
        }
        GarmentType::Tshirt => {
            let hc = d("chest_width")? / 2.0;
            let torso = d("torso_length")?;
            let sl = d("sleeve_length")?;
            let sw = d("sleeve_width")?;
            let hn = d("neck_width")? / 2.0;
            let nd = d("neck_depth")?;
            let (s, c) = TSHIRT_SLEEVE_ANGLE.sin_cos();
            let sd = TSHIRT_SHOULDER_DROP;
            if hn >= hc {
                return Err(TemplateError::InvalidParams("neck wider than chest".into()));
            }
            if sl <= sw * s / c {
                return Err(TemplateError::InvalidParams("sleeve shorter than its width allows".into()));
            }
            let armpit_y = -sd - sw / c;
            if armpit_y <= -torso {
                return Err(TemplateError::InvalidParams("armpit below hem".into()));
            }
            if nd >= torso + armpit_y {
                return Err(TemplateError::InvalidParams("neckline deeper than the torso".into()));
            }
            let top = Point2::new(hc + sl * c, -sd - sl * s);
            let bottom = top + Vector2::new(-s, -c) * sw;
            Outline {
                corners: vec![
                    corner(hc, -torso, Some("waist_right"), true),
                    corner(hc, armpit_y, Some("armpit_right"), false),
                    corner(bottom.x, bottom.y, Some("sleeve_bottom_right"), true),
                    corner(top.x, top.y, Some("sleeve_top_right"), true),
                    corner(hc, -sd, Some("shoulder_right"), false),
                    corner(hn, 0.0, Some("neck_right"), false),
                    corner(-hn, 0.0, Some("neck_left"), false),
                    corner(-hc, -sd, Some("shoulder_left"), false),
                    corner(-top.x, top.y, Some("sleeve_top_left"), true),
                    corner(-bottom.x, bottom.y, Some("sleeve_bottom_left"), true),
                    corner(-hc, armpit_y, Some("armpit_left"), false),
                    corner(-hc, -torso, Some("waist_left"), true),
                ],
                edges: {
                    let mut e = vec![EdgeShape::Straight; 12];
                    e[5] = EdgeShape::Dip(nd);
                    e
                },
            }
        }
    };
    Ok(out)
}

/// Fillet geometry at one corner.
struct Fillet {
    trim_in: Point2<f64>,
    trim_out: Point2<f64>,
    center: Point2<f64>,
    radius: f64,
    midpoint: Point2<f64>,
}

fn unit(v: Vector2<f64>) -> Vector2<f64> {
    v / v.norm()
}

/// Interior angle at corner `i` and the unit chord directions around it.
fn corner_frame(o: &Outline, i: usize) -> (Vector2<f64>, Vector2<f64>, f64, f64, f64) {
    let n = o.corners.len();
    let prev = o.corners[(i + n - 1) % n].pos;
    let here = o.corners[i].pos;
    let next = o.corners[(i + 1) % n].pos;
    let len_in = (here - prev).norm();
    let len_out = (next - here).norm();
    let a = unit(here - prev);
    let b = unit(next - here);
    let phi = (-a).dot(&b).clamp(-1.0, 1.0).acos();
    (a, b, phi, len_in, len_out)
}

fn max_radius(o: &Outline, i: usize) -> f64 {
    let (_, _, phi, len_in, len_out) = corner_frame(o, i);
    let shorter = len_in.min(len_out);
    (0.5 * shorter).min(MAX_TRIM_FRACTION * shorter * (phi / 2.0).tan())
}

fn fillet(o: &Outline, i: usize, r: f64) -> Fillet {
    let (a, b, phi, _, _) = corner_frame(o, i);
    let p = o.corners[i].pos;
    let trim = r / (phi / 2.0).tan();
    let bis = unit(b - a);
    let center = p + bis * (r / (phi / 2.0).sin());
    Fillet {
        trim_in: p - a * trim,
        trim_out: p + b * trim,
        center,
        radius: r,
        midpoint: center - bis * r,
    }
}

impl TemplateParams {
    fn outline(&self) -> Result<Outline, TemplateError> {
        outline(self.kind, &self.skeleton)
    }

    /// Checks every structural invariant. Ranges are checked as well when
    /// `ranges` is given.
    pub fn validate(&self, ranges: Option<&KindRanges>) -> Result<(), TemplateError> {
        let bad = |m: String| Err(TemplateError::InvalidParams(m));
        let names: Vec<&str> = self.skeleton.keys().map(String::as_str).collect();
        let mut want = self.kind.skeleton_names().to_vec();
        want.sort_unstable();
        if names != want {
            return bad(format!("{} needs dimensions {want:?}", self.kind));
        }
        for (name, v) in &self.skeleton {
            if !(v.is_finite() && *v > 0.0) {
                return bad(format!("{name} must be strictly positive"));
            }
        }
        let o = self.outline()?;
        if self.bezier_offsets.len() != o.edges.len() || self.corner_radii.len() != o.corners.len() {
            return bad(format!(
                "{} expects {} offsets and {} radii",
                self.kind,
                o.edges.len(),
                o.corners.len()
            ));
        }
        for (i, (&r, c)) in self.corner_radii.iter().zip(&o.corners).enumerate() {
            if !(r.is_finite() && r >= 0.0) {
                return bad(format!("corner {i}: radius must be >= 0"));
            }
            if r > 0.0 && !c.roundable {
                return bad(format!("corner {i} cannot be rounded"));
            }
            if r > max_radius(&o, i) + 1e-12 {
                return bad(format!("corner {i}: radius {r} too large for adjacent edges"));
            }
        }
        if self.bezier_offsets.iter().any(|v| !v.is_finite()) {
            return bad("non-finite Bézier offset".into());
        }
        if let Some(ranges) = ranges {
            for (name, v) in &self.skeleton {
                if !ranges.skeleton[name].contains(*v) {
                    return bad(format!("{name} = {v} outside its range"));
                }
            }
            if self.bezier_offsets.iter().any(|v| !ranges.bezier_offset.contains(*v)) {
                return bad("Bézier offset outside its range".into());
            }
            if self.corner_radii.iter().any(|v| !ranges.corner_radius.contains(*v)) {
                return bad("corner radius outside its range".into());
            }
        }
        Ok(())
    }

    pub fn dim(&self, name: &str) -> f64 {
        self.skeleton[name]
    }

    /// Copy whose offsets and radii are mirror-symmetric about `x = 0`;
    /// for each mirrored pair the value of the lower-indexed element wins.
    pub fn symmetrized(&self) -> Result<Self, TemplateError> {
        let o = self.outline()?;
        let n = o.corners.len();
        let mirror: Vec<usize> = o
            .corners
            .iter()
            .map(|c| {
                let m = Point2::new(-c.pos.x, c.pos.y);
                (0..n)
                    .min_by(|&a, &b| {
                        (o.corners[a].pos - m).norm().total_cmp(&(o.corners[b].pos - m).norm())
                    })
                    .expect("non-empty outline")
            })
            .collect();
        let mut out = self.clone();
        for i in 0..n {
            let j = mirror[i];
            out.corner_radii[i] = self.corner_radii[i.min(j)];
            // edge i (i -> i+1) mirrors onto the edge leaving mirror(i+1)
            let e = mirror[(i + 1) % n];
            out.bezier_offsets[i] = self.bezier_offsets[i.min(e)];
        }
        Ok(out)
    }
}

/// Samples template parameters from the bundled default ranges.
pub fn sample_template(kind: GarmentType, seed: u64) -> TemplateParams {
    sample_template_with(kind, seed, &crate::config::RangeConfig::default().templates)
        .expect("default template ranges produce valid templates")
}

/// Samples template parameters from `ranges`. Deterministic for a fixed
/// `(kind, seed)`. Corner radii are clamped down to what the adjacent
/// edges allow, which keeps them inside their (zero-based) range.
pub fn sample_template_with(
    kind: GarmentType,
    seed: u64,
    ranges: &TemplateRanges,
) -> Result<TemplateParams, TemplateError> {
    let r = ranges.for_kind(kind);
    let mut rng = rng_for(seed, stream::TEMPLATE);
    let mut skeleton = BTreeMap::new();
    for name in kind.skeleton_names() {
        let range = r
            .skeleton
            .get(*name)
            .ok_or_else(|| TemplateError::InvalidParams(format!("no range for `{name}`")))?;
        skeleton.insert((*name).to_string(), range.sample(&mut rng));
    }
    let o = outline(kind, &skeleton)?;
    let bezier_offsets = o.edges.iter().map(|_| r.bezier_offset.sample(&mut rng)).collect();
    let corner_radii = o
        .corners
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let v = r.corner_radius.sample(&mut rng);
            if c.roundable {
                v.min(max_radius(&o, i)).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let params = TemplateParams {
        kind,
        skeleton,
        bezier_offsets,
        corner_radii,
    };
    params.validate(None)?;
    Ok(params)
}

/// Builds the closed counter-clockwise outline.
pub fn boundary_curve(params: &TemplateParams) -> Result<Boundary, TemplateError> {
    params.validate(None)?;
    let o = params.outline()?;
    let n = o.corners.len();
    let fillets: Vec<Option<Fillet>> = (0..n)
        .map(|i| (params.corner_radii[i] > 0.0).then(|| fillet(&o, i, params.corner_radii[i])))
        .collect();

    let mut segments = Vec::with_capacity(2 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        let start = fillets[i].as_ref().map_or(o.corners[i].pos, |f| f.trim_out);
        let end = fillets[j].as_ref().map_or(o.corners[j].pos, |f| f.trim_in);
        let chord = end - start;
        let len = chord.norm();
        let outward = Vector2::new(chord.y, -chord.x) / len;
        let offset = outward * params.bezier_offsets[i];
        let (c1, c2) = match o.edges[i] {
            EdgeShape::Straight => (start + chord / 3.0 + offset, start + chord * (2.0 / 3.0) + offset),
            EdgeShape::Dip(depth) => {
                let down = -outward * (depth * 4.0 / 3.0);
                (
                    start + chord * NECK_TANGENT_PULL + down + offset,
                    end - chord * NECK_TANGENT_PULL + down + offset,
                )
            }
        };
        segments.push(Segment::Bezier([start, c1, c2, end]));
        if let Some(f) = &fillets[j] {
            let v0 = f.trim_in - f.center;
            let v1 = f.trim_out - f.center;
            let sweep = (v0.x * v1.y - v0.y * v1.x).atan2(v0.dot(&v1));
            segments.push(Segment::Arc {
                center: f.center,
                radius: f.radius,
                start_angle: v0.y.atan2(v0.x),
                sweep,
            });
        }
    }
    let boundary = Boundary { segments };
    let poly = boundary.flatten(1e-3, 0.01);
    if boundary::signed_area(&poly) <= 0.0 {
        return Err(TemplateError::DegenerateBoundary("outline is not counter-clockwise".into()));
    }
    if !boundary::is_simple_loop(&poly) {
        return Err(TemplateError::DegenerateBoundary("outline self-intersects".into()));
    }
    Ok(boundary)
}

/// Semantic keypoints in the kind's fixed label order.
pub fn keypoint_anchors(params: &TemplateParams) -> Result<Vec<SemanticKeypoint>, TemplateError> {
    params.validate(None)?;
    let o = params.outline()?;
    let mut by_label = BTreeMap::new();
    for (i, c) in o.corners.iter().enumerate() {
        if let Some(label) = c.label {
            let r = params.corner_radii[i];
            let anchor = if r > 0.0 { fillet(&o, i, r).midpoint } else { c.pos };
            by_label.insert(label, anchor);
        }
    }
    Ok(params
        .kind
        .labels()
        .iter()
        .map(|l| SemanticKeypoint {
            label: (*l).to_string(),
            anchor: by_label[l],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn towel(w: f64, h: f64) -> TemplateParams {
        TemplateParams {
            kind: GarmentType::Towel,
            skeleton: BTreeMap::from([("width".into(), w), ("height".into(), h)]),
            bezier_offsets: vec![0.0; 4],
            corner_radii: vec![0.0; 4],
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        for kind in GarmentType::ALL {
            assert_eq!(sample_template(kind, 7), sample_template(kind, 7));
        }
        assert_ne!(sample_template(GarmentType::Towel, 7), sample_template(GarmentType::Towel, 8));
    }

    #[test]
    fn towel_dimensions_in_range() {
        let ranges = crate::config::RangeConfig::default().templates;
        for seed in 0..50 {
            let p = sample_template(GarmentType::Towel, seed);
            assert!(ranges.towel.skeleton["width"].contains(p.dim("width")));
            assert!(ranges.towel.skeleton["height"].contains(p.dim("height")));
            p.validate(Some(&ranges.towel)).unwrap();
        }
    }

    #[test]
    fn zero_offset_towel_is_a_rectangle() {
        let b = boundary_curve(&towel(0.5, 0.3)).unwrap();
        assert!((b.perimeter() - 1.6).abs() < 1e-12);
        let poly = b.flatten(0.002, 0.01);
        for p in &poly {
            let on_x = (p.x.abs() - 0.25).abs() < 1e-12 && p.y.abs() <= 0.15 + 1e-12;
            let on_y = (p.y.abs() - 0.15).abs() < 1e-12 && p.x.abs() <= 0.25 + 1e-12;
            assert!(on_x || on_y, "{p:?} is off the rectangle");
        }
        assert!((boundary::signed_area(&poly) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn towel_anchor_labels_and_positions() {
        let kps = keypoint_anchors(&towel(0.5, 0.3)).unwrap();
        let labels: Vec<_> = kps.iter().map(|k| k.label.as_str()).collect();
        assert_eq!(labels, ["corner_tl", "corner_tr", "corner_bl", "corner_br"]);
        let expect = [(-0.25, 0.15), (0.25, 0.15), (-0.25, -0.15), (0.25, -0.15)];
        for (k, (x, y)) in kps.iter().zip(expect) {
            assert_eq!(k.anchor, Point2::new(x, y));
        }
    }

    #[test]
    fn rounded_corner_anchor_sits_on_the_arc() {
        let mut p = towel(0.5, 0.3);
        p.corner_radii = vec![0.02; 4];
        let b = boundary_curve(&p).unwrap();
        let poly = b.flatten(0.002, 0.01);
        for k in keypoint_anchors(&p).unwrap() {
            let nearest = poly.iter().map(|q| (q - k.anchor).norm()).fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-12, "{} is {nearest} from the outline", k.label);
        }
        // quarter arcs replace the corners: 4 (2r - πr/2) shorter
        let expect = 1.6 - 4.0 * (2.0 * 0.02 - std::f64::consts::PI * 0.02 / 2.0);
        assert!((b.perimeter() - expect).abs() < 1e-12);
    }

    #[test]
    fn oversize_radius_rejected() {
        let mut p = towel(0.5, 0.3);
        p.corner_radii[0] = 0.2;
        assert!(matches!(boundary_curve(&p), Err(TemplateError::InvalidParams(_))));
    }

    #[test]
    fn huge_offset_is_degenerate() {
        let mut p = towel(0.5, 0.3);
        // bottom edge pushed far up through the top edge
        p.bezier_offsets[0] = -0.8;
        assert!(matches!(boundary_curve(&p), Err(TemplateError::DegenerateBoundary(_))));
    }

    #[test]
    fn label_sets_are_fixed() {
        assert_eq!(GarmentType::Towel.labels().len(), 4);
        assert_eq!(GarmentType::Shorts.labels().len(), 6);
        assert_eq!(GarmentType::Tshirt.labels().len(), 12);
        for kind in GarmentType::ALL {
            let p = sample_template(kind, 3);
            let kps = keypoint_anchors(&p).unwrap();
            let labels: Vec<_> = kps.iter().map(|k| k.label.as_str()).collect();
            assert_eq!(labels, kind.labels());
        }
    }

    #[test]
    fn tshirt_neckline_is_curved() {
        let p = sample_template(GarmentType::Tshirt, 11);
        let b = boundary_curve(&p).unwrap();
        let nd = p.dim("neck_depth");
        // the lowest point of the neckline is near the requested depth
        let neck = b
            .segments
            .iter()
            .find_map(|s| match s {
                Segment::Bezier(c) if c[0].y == 0.0 && c[3].y == 0.0 => Some(s.clone()),
                _ => None,
            })
            .expect("neckline segment");
        let mid = neck.point_at(0.5);
        assert!((mid.y + nd).abs() < 0.011, "neck dip {} vs depth {nd}", -mid.y);
    }
}
