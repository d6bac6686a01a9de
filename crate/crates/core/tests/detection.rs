use avdnet::boxes::{shape_iou, BBox};
use avdnet::detection::{
    decode, encode_box, kmeans_anchors, kmeans_objective, kmeans_trace, nms, parse_detections,
    format_detections, AnchorSet, Detection, HeadLayout,
};
use avdnet::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn anchors() -> AnchorSet {
    AnchorSet::new(vec![(0.03, 0.05), (0.08, 0.04), (0.1, 0.12), (0.25, 0.2)]).unwrap()
}

fn random_head(grid: usize, classes: usize, seed: u64, spread: f64) -> Tensor<f32> {
    let layout = HeadLayout { grid, num_anchors: 4, num_classes: classes };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..layout.channels() * grid * grid)
        .map(|_| rng.gen_range(-spread..spread) as f32)
        .collect();
    Tensor::from_vec(&[layout.channels(), grid, grid], data).unwrap()
}

#[test]
fn zero_logits_decode_to_anchor_at_cell_center() {
    let set = AnchorSet::new(vec![(0.1, 0.1)]).unwrap();
    let s = 4;
    let raw = Tensor::<f64>::zeros(&[7, s, s]);
    let dets = decode(&raw, &set, 2, 0.0).unwrap();
    assert_eq!(dets.len(), s * s);
    let first = dets
        .iter()
        .find(|d| d.bbox.cx < 1.0 / s as f64 && d.bbox.cy < 1.0 / s as f64)
        .unwrap();
    assert!((first.bbox.cx - 0.5 / s as f64).abs() < 1e-15);
    assert!((first.bbox.cy - 0.5 / s as f64).abs() < 1e-15);
    assert!((first.bbox.w - 0.1).abs() < 1e-15 && (first.bbox.h - 0.1).abs() < 1e-15);
    assert!((first.score - 0.25).abs() < 1e-15);
}

#[test]
fn unit_threshold_yields_nothing() {
    let raw = random_head(5, 3, 1, 30.0);
    assert!(decode(&raw, &anchors(), 3, 1.0).unwrap().is_empty());
}

#[test]
fn channel_mismatch_rejected() {
    let raw = random_head(5, 3, 1, 1.0);
    assert!(decode(&raw, &anchors(), 2, 0.1).is_err());
}

#[test]
fn encode_decode_round_trip_many_boxes() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let set = anchors();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let b = BBox::new(
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.001..1.0),
            rng.gen_range(0.001..1.0),
        );
        let grid = rng.gen_range(1..80);
        let anchor = set.as_slice()[rng.gen_range(0..4)];
        let enc = encode_box(&b, anchor, grid);
        let d = avdnet::detection::decode_box(enc.logits(), enc.row, enc.col, anchor, grid);
        for (x, y) in [(d.cx, b.cx), (d.cy, b.cy), (d.w, b.w), (d.h, b.h)] {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst < 1e-6, "worst coordinate error {worst}");
}

#[test]
fn detections_text_round_trip() {
    let dets = vec![
        Detection { class_id: 2, score: 0.5, bbox: BBox::new(0.25, 0.125, 0.5, 0.0625) },
        Detection { class_id: 0, score: 1.0, bbox: BBox::new(1.1, -0.05, 0.2, 0.3) },
    ];
    let text = format_detections(&dets);
    assert_eq!(text.lines().next().unwrap(), "2 0.500000 0.250000 0.125000 0.500000 0.062500");
    assert_eq!(parse_detections(&text).unwrap(), dets);
    assert!(parse_detections("1 0.5 0.5 0.5").is_err());
}

#[test]
fn nms_examples() {
    let a = Detection { class_id: 0, score: 0.9, bbox: BBox::new(0.5, 0.5, 0.2, 0.2) };
    assert_eq!(nms(&[a], 0.45), vec![a]);
    let b = Detection { score: 0.8, ..a };
    assert_eq!(nms(&[b, a], 0.45), vec![a]);
    let c = Detection { bbox: BBox::new(0.1, 0.1, 0.05, 0.05), ..b };
    assert_eq!(nms(&[a, c], 0.45).len(), 2);
    let other_class = Detection { class_id: 1, ..b };
    assert_eq!(nms(&[a, other_class], 0.45).len(), 2);
}

#[test]
fn kmeans_two_shapes_against_brute_force() {
    // with two distinct shapes, every 2-partition of the shapes is tried and
    // the best clustering keeps each shape in its own cluster
    let mut boxes = vec![(0.05, 0.02); 6];
    boxes.extend(vec![(0.04, 0.09); 5]);
    let shapes = [(0.05, 0.02), (0.04, 0.09)];
    let split = kmeans_objective(&boxes, &shapes);
    let merged_w = (6.0 * 0.05 + 5.0 * 0.04) / 11.0;
    let merged_h = (6.0 * 0.02 + 5.0 * 0.09) / 11.0;
    let merged = kmeans_objective(&boxes, &[(merged_w, merged_h)]);
    assert_eq!(split, 0.0);
    assert!(merged > split);
    let set = kmeans_anchors(&boxes, 2, 3).unwrap();
    let mut got = set.as_slice().to_vec();
    got.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert_eq!(got, vec![shapes[1], shapes[0]]);
}

#[test]
fn kmeans_errors() {
    assert!(kmeans_anchors(&[(0.1, 0.1)], 2, 0).is_err());
    let err = kmeans_anchors(&[(0.1, 0.1); 5], 2, 0).unwrap_err().to_string();
    assert!(err.contains("distinct"), "{err}");
}

fn det_strategy() -> impl Strategy<Value = Detection> {
    (0usize..3, 0.0f64..1.0, 0.1f64..0.9, 0.1f64..0.9, 0.02f64..0.4, 0.02f64..0.4).prop_map(
        |(class_id, score, cx, cy, w, h)| Detection { class_id, score, bbox: BBox::new(cx, cy, w, h) },
    )
}

proptest! {
    #[test]
    fn nms_invariants(dets in prop::collection::vec(det_strategy(), 0..40), thresh in 0.05f64..1.0) {
        let kept = nms(&dets, thresh);
        for k in &kept {
            prop_assert!(dets.contains(k));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                if a.class_id == b.class_id {
                    prop_assert!(a.bbox.iou(&b.bbox) < thresh);
                }
            }
        }
        prop_assert_eq!(nms(&kept, thresh).len(), kept.len());
    }

    #[test]
    fn decode_monotone_in_threshold(seed in any::<u64>(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let raw = random_head(6, 2, seed, 6.0);
        let loose = decode(&raw, &anchors(), 2, lo).unwrap();
        let strict = decode(&raw, &anchors(), 2, hi).unwrap();
        prop_assert!(strict.len() <= loose.len());
        for d in &strict {
            prop_assert!(loose.contains(d));
        }
        prop_assert!(loose.len() <= 4 * 6 * 6);
        for d in &loose {
            prop_assert!((0.0..=1.0).contains(&d.score) && d.bbox.w > 0.0 && d.bbox.h > 0.0);
        }
    }

    #[test]
    fn kmeans_objective_never_increases(
        boxes in prop::collection::vec((0.005f64..0.5, 0.005f64..0.5), 8..80),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let (set, trace) = kmeans_trace(&boxes, k, seed).unwrap();
        for pair in trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12, "objective rose: {:?}", trace);
        }
        prop_assert_eq!(set.len(), k);
        prop_assert_eq!(kmeans_anchors(&boxes, k, seed).unwrap(), set);
    }

    #[test]
    fn shape_iou_symmetric_and_bounded(a in (0.001f64..1.0, 0.001f64..1.0), b in (0.001f64..1.0, 0.001f64..1.0)) {
        let v = shape_iou(a, b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, shape_iou(b, a));
    }
}
