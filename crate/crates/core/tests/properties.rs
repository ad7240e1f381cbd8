use garment_synth::annotation::{
    emit_dataset, format_actions, format_keypoints, parse_action_answer, parse_answer, ActionTuple, Answer, AnswerKeypoint,
    AnnotatedFrame, Arm, DatasetStage, FrameKeypoint, FrameRecord, KeypointAnswer, Prompts, Task,
};
use garment_synth::camera::{CameraModel, Plane, Pose};
use garment_synth::decoder::{decode_trajectory, validate_trajectory, DecoderParams, Primitive};
use garment_synth::metrics::{evaluate, GroundTruth, Prediction, DEFAULT_THRESHOLDS};
use garment_synth::GarmentType;
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = GarmentType> {
    prop::sample::select(GarmentType::ALL.to_vec())
}

fn keypoint_answer() -> impl Strategy<Value = KeypointAnswer> {
    kind().prop_flat_map(|k| {
        prop::collection::vec((any::<i64>(), any::<i64>(), any::<bool>()), k.labels().len()).prop_map(move |v| {
            let kps = k
                .labels()
                .iter()
                .zip(v)
                .map(|(l, (x, y, visible))| AnswerKeypoint { label: l.to_string(), pixel: [x, y], visible })
                .collect();
            KeypointAnswer::new(k, kps).unwrap()
        })
    })
}

fn tuples(range: std::ops::Range<i64>) -> impl Strategy<Value = Vec<ActionTuple>> {
    let pixel = move || (range.clone(), range.clone()).prop_map(|(x, y)| [x, y]);
    let tuple = move |arm| (pixel(), pixel()).prop_filter("distinct", |(a, b)| a != b).prop_map(move |(pick, place)| ActionTuple { arm, pick, place });
    prop_oneof![
        tuple(Arm::LA).prop_map(|t| vec![t]),
        tuple(Arm::RA).prop_map(|t| vec![t]),
        (tuple(Arm::LA), tuple(Arm::RA)).prop_map(|(a, b)| vec![a, b]),
    ]
}

fn camera_over(origin: Vector3<f64>) -> CameraModel {
    let eye = Point3::new(0.2, -0.4, 1.2) + origin;
    let pose = Pose::look_at(eye, Point3::from(origin), Vector3::z()).unwrap();
    CameraModel::centered(480.0, 512, 512, pose).unwrap()
}

fn frame(id: usize, garment: GarmentType) -> AnnotatedFrame {
    let keypoints = garment
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| FrameKeypoint { label: l.to_string(), pixel: [10.0 * i as f64, 20.0], visible: true, in_frame: true })
        .collect();
    AnnotatedFrame {
        frame_id: format!("f{id:04}"),
        garment,
        fold_stage: 0,
        keypoints,
        image_ref: String::new(),
        camera: camera_over(Vector3::zeros()),
    }
}

fn predictions() -> impl Strategy<Value = (Vec<GroundTruth>, Vec<Prediction>)> {
    let gt = (0usize..4, 0usize..3, 0i32..64, 0i32..64);
    let pred = (0usize..4, 0usize..3, 0i32..64, 0i32..64, 0u32..=100);
    (prop::collection::vec(gt, 0..12), prop::collection::vec(pred, 0..16)).prop_map(|(g, p)| {
        let gts = g
            .into_iter()
            .map(|(f, c, x, y)| GroundTruth { frame_id: format!("f{f}"), category: format!("c{c}"), x: x as f64, y: y as f64 })
            .collect();
        let preds = p
            .into_iter()
            .map(|(f, c, x, y, conf)| Prediction {
                frame_id: format!("f{f}"),
                category: format!("c{c}"),
                x: x as f64,
                y: y as f64,
                confidence: conf as f64 / 100.0,
            })
            .collect();
        (gts, preds)
    })
}

proptest! {
    #[test]
    fn keypoint_answers_round_trip(a in keypoint_answer()) {
        let text = format_keypoints(&a);
        prop_assert_eq!(parse_answer(&text, a.garment()), Ok(Answer::Keypoints(a)));
    }

    #[test]
    fn action_answers_round_trip(t in tuples(i64::MIN..i64::MAX)) {
        let text = format_actions(&t);
        prop_assert_eq!(parse_action_answer(&text), Ok(t.clone()));
        prop_assert_eq!(parse_answer(&text, GarmentType::Towel), Ok(Answer::Actions(t)));
    }

    #[test]
    fn decoded_trajectories_validate(t in tuples(0..512), lift in 0.1f64..0.3, alpha in 0.05f64..=1.0, table in -0.1f64..0.1) {
        let params = DecoderParams { lift_height: lift, arc_coefficient: alpha, table_plane: Plane::horizontal(table), ..DecoderParams::default() };
        let traj = decode_trajectory(&t, &camera_over(Vector3::zeros()), &params, Primitive::Fold).unwrap();
        let report = validate_trajectory(&traj);
        prop_assert!(report.is_clean(), "{:?}", report.violations);
    }

    #[test]
    fn decoding_commutes_with_translation(t in tuples(0..512), dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in -0.2f64..0.2) {
        let shift = Vector3::new(dx, dy, dz);
        let base = DecoderParams::default();
        let moved = DecoderParams { table_plane: Plane::horizontal(dz), ..base };
        let a = decode_trajectory(&t, &camera_over(Vector3::zeros()), &base, Primitive::Fold).unwrap();
        let b = decode_trajectory(&t, &camera_over(shift), &moved, Primitive::Fold).unwrap();
        for (x, y) in a.arms.iter().flat_map(|a| &a.waypoints).zip(b.arms.iter().flat_map(|a| &a.waypoints)) {
            prop_assert!(((x.position + shift) - y.position).norm() < 1e-9);
            prop_assert_eq!(x.phase, y.phase);
        }
    }

    #[test]
    fn evaluation_ignores_prediction_order((gts, preds) in predictions(), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut shuffled = preds.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(evaluate(&preds, &gts, &DEFAULT_THRESHOLDS).unwrap(), evaluate(&shuffled, &gts, &DEFAULT_THRESHOLDS).unwrap());
    }

    #[test]
    fn evaluation_is_translation_invariant((gts, preds) in predictions(), dx in -50i32..50, dy in -50i32..50) {
        let (dx, dy) = (dx as f64, dy as f64);
        let g2: Vec<_> = gts.iter().map(|g| GroundTruth { x: g.x + dx, y: g.y + dy, ..g.clone() }).collect();
        let p2: Vec<_> = preds.iter().map(|p| Prediction { x: p.x + dx, y: p.y + dy, ..p.clone() }).collect();
        let (a, b) = (evaluate(&preds, &gts, &DEFAULT_THRESHOLDS).unwrap(), evaluate(&p2, &g2, &DEFAULT_THRESHOLDS).unwrap());
        prop_assert_eq!(&a.ap_percent, &b.ap_percent);
        prop_assert_eq!(a.matched_gt, b.matched_gt);
        match (a.akd, b.akd) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn ap_grows_with_threshold((gts, preds) in predictions()) {
        let r = evaluate(&preds, &gts, &[1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        for c in &r.categories {
            for w in c.ap.windows(2) {
                if let (Some(lo), Some(hi)) = (w[0], w[1]) {
                    prop_assert!(lo <= hi + 1e-12, "{:?}", c.ap);
                }
            }
        }
    }

    #[test]
    fn stage_two_split_tracks_the_ratio(n in 1usize..80, ratio in 0.0f64..=1.0, seed in any::<u64>()) {
        let records: Vec<FrameRecord> = (0..n)
            .map(|i| {
                let f = frame(i, GarmentType::ALL[i % 3]);
                let actions = vec![ActionTuple { arm: Arm::LA, pick: [1, 2], place: [30, 40] }];
                FrameRecord { frame: f, actions }
            })
            .collect();
        let samples = emit_dataset(&records, DatasetStage::Stage2, ratio, seed, &Prompts::bundled()).unwrap();
        prop_assert_eq!(samples.len(), n);
        let kp = samples.iter().filter(|s| s.task == Task::KeypointDetection).count();
        prop_assert!((kp as f64 - ratio * n as f64).abs() <= 1.0, "{} of {}", kp, n);
    }
}
