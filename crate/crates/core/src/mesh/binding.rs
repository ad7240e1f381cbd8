use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use super::{k_ring, MeshError, TriMesh};
use crate::templates::SemanticKeypoint;

/// A semantic keypoint attached to a mesh vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundKeypoint {
    pub label: String,
    pub vertex: u32,
    /// Vertices within two edges of `vertex`, sorted, excluding `vertex`.
    pub ring: Vec<u32>,
}

/// Keypoint-to-vertex map, in the order the anchors were given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeypointBinding {
    pub entries: Vec<BoundKeypoint>,
}

impl KeypointBinding {
    pub fn get(&self, label: &str) -> Option<&BoundKeypoint> {
        self.entries.iter().find(|e| e.label == label)
    }

    pub fn vertex(&self, label: &str) -> Option<u32> {
        self.get(label).map(|e| e.vertex)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }
}

/// Binds every anchor to its nearest rest vertex. Ties go to the lowest
/// vertex id. Anchors farther than one target edge from any vertex are
/// rejected.
pub fn bind_keypoints(mesh: &TriMesh, anchors: &[SemanticKeypoint]) -> Result<KeypointBinding, MeshError> {
    let rest = mesh.rest_positions();
    let mut entries = Vec::with_capacity(anchors.len());
    for kp in anchors {
        let mut best: Option<(u32, f64)> = None;
        for (i, p) in rest.iter().enumerate() {
            let d = (Point2::new(p.x, p.y) - kp.anchor).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i as u32, d));
            }
        }
        let Some((vertex, distance)) = best else {
            return Err(MeshError::AnchorOutOfMesh { label: kp.label.clone(), distance: f64::INFINITY });
        };
        if distance > mesh.target_edge() {
            return Err(MeshError::AnchorOutOfMesh { label: kp.label.clone(), distance });
        }
        entries.push(BoundKeypoint { label: kp.label.clone(), vertex, ring: k_ring(mesh, vertex, 2) });
    }
    Ok(KeypointBinding { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn strip() -> TriMesh {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
        ];
        TriMesh::from_parts(pts, vec![[0, 1, 2], [1, 3, 2]], 1.0).unwrap()
    }

    #[test]
    fn ties_pick_lowest_id() {
        let m = strip();
        let kp = SemanticKeypoint { label: "a".into(), anchor: Point2::new(0.5, 0.0) };
        let b = bind_keypoints(&m, &[kp]).unwrap();
        assert_eq!(b.entries[0].vertex, 0);
    }

    #[test]
    fn far_anchor_is_rejected() {
        let m = strip();
        let kp = SemanticKeypoint { label: "far".into(), anchor: Point2::new(3.0, 3.0) };
        assert!(matches!(bind_keypoints(&m, &[kp]), Err(MeshError::AnchorOutOfMesh { .. })));
    }
}
