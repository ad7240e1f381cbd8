use garment_synth::mesh::{bind_keypoints, k_ring, triangulate_boundary};
use garment_synth::templates::{boundary_curve, keypoint_anchors, sample_template};
use garment_synth::GarmentType;
use nalgebra::Point2;
use proptest::prelude::*;

const TARGET: f64 = 0.01;

fn check(kind: GarmentType, seed: u64) {
    let params = sample_template(kind, seed);
    let boundary = boundary_curve(&params).unwrap();
    let mesh = triangulate_boundary(&boundary, TARGET, 0.002).unwrap();
    assert!(mesh.max_edge_length() <= 1.1 * TARGET, "{kind} seed {seed}: {}", mesh.max_edge_length());
    assert!(mesh.min_edge_length() >= 0.2 * TARGET, "{kind} seed {seed}: short edge {}", mesh.min_edge_length());
    assert_eq!(mesh.euler_characteristic(), 1, "{kind} seed {seed}");
    assert_eq!(mesh.component_count(), 1);

    let anchors = keypoint_anchors(&params).unwrap();
    let binding = bind_keypoints(&mesh, &anchors).unwrap();
    assert_eq!(binding.entries.len(), kind.labels().len());
    for (kp, bound) in anchors.iter().zip(&binding.entries) {
        let p = mesh.rest_positions()[bound.vertex as usize];
        let d = (Point2::new(p.x, p.y) - kp.anchor).norm();
        assert!(d <= 0.5 * TARGET, "{kind} {} is {d} from its vertex", kp.label);
        assert_eq!(bound.ring, k_ring(&mesh, bound.vertex, 2));
    }
}

#[test]
fn first_seeds_of_every_kind_mesh_cleanly() {
    for kind in GarmentType::ALL {
        for seed in 0..5 {
            check(kind, seed);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_templates_mesh_and_bind(seed in any::<u64>(), k in 0usize..3) {
        check(GarmentType::ALL[k], seed);
    }
}
