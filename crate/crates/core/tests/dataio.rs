use std::path::Path;

use avdnet::boxes::{BBox, GroundTruthBox};
use avdnet::dataio::{
    decode_ppm, encode_ppm, format_annotations, letterbox, load_manifest, load_ppm, parse_annotations,
    parse_annotations_str, save_annotations, save_ppm, synth_scene, write_synthetic_dataset, LetterboxTransform,
    SynthConfig,
};
use avdnet::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn annotation_examples() {
    let boxes = parse_annotations_str("0 0.5 0.5 0.1 0.2\n").unwrap();
    assert_eq!(boxes, vec![GroundTruthBox::new(0, 0.5, 0.5, 0.1, 0.2)]);
    assert!(parse_annotations_str("").unwrap().is_empty());
    match parse_annotations_str("0 1.5 0.5 0.1 0.1") {
        Err(e @ Error::OutOfRange { .. }) => assert!(e.to_string().contains("cx"), "{e}"),
        other => panic!("{other:?}"),
    }
    match parse_annotations_str("0 0.5 0.5 0.1 0.1\n1 0.5 0.5 0.1\n") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(parse_annotations_str("0 0.5 0.5 0.0 0.1").is_err());
}

#[test]
fn annotation_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.txt");
    let boxes = vec![GroundTruthBox::new(3, 0.125, 0.5, 0.25, 1.0), GroundTruthBox::new(0, 0.0, 1.0, 0.001, 0.5)];
    save_annotations(&path, &boxes).unwrap();
    assert_eq!(parse_annotations(&path).unwrap(), boxes);
    assert!(parse_annotations(dir.path().join("missing.txt")).is_err());
}

#[test]
fn ppm_examples() {
    let white = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
    assert_eq!(white.shape(), &[3, 1, 1]);
    assert!(white.data().iter().all(|&v| v == 1.0));
    assert!(matches!(decode_ppm(b"P3\n1 1\n255\n255 255 255\n"), Err(Error::UnsupportedFormat(_))));
    assert!(matches!(decode_ppm(b"XX\n1 1\n255\n"), Err(Error::ImageMagic { .. })));
    assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\x00\x01"), Err(Error::ImageTruncated { .. })));
    let commented = decode_ppm(b"P6 # comment\n1 # w\n1\n255\n\x00\x80\xff").unwrap();
    assert_eq!(commented.data(), &[0.0, 128.0 / 255.0, 1.0]);
}

#[test]
fn ppm_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bytes: Vec<u8> = (0..3 * 7 * 5).map(|_| rng.gen()).collect();
    let mut file = b"P6\n5 7\n255\n".to_vec();
    file.extend(&bytes);
    let img = decode_ppm(&file).unwrap();
    assert_eq!(encode_ppm(&img).unwrap(), file);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ppm");
    save_ppm(&img, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), file);
    assert_eq!(load_ppm(&path).unwrap(), img);
}

#[test]
fn letterbox_examples() {
    let tr = LetterboxTransform::new(200, 100, 608);
    assert!((tr.scale - 3.04).abs() < 1e-12);
    assert_eq!((tr.pad_x, tr.pad_y), (0, 152));
    let img = Tensor::full(&[3, 10, 10], 0.25f32);
    let (out, tr) = letterbox(&img, 40).unwrap();
    assert_eq!((tr.pad_x, tr.pad_y, tr.scale), (0, 0, 4.0));
    assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    assert!(letterbox(&img, 4).is_err());
}

#[test]
fn synth_examples() {
    let empty = SynthConfig { min_objects: 0, max_objects: 0, ..SynthConfig::default() };
    assert!(synth_scene(&empty, 0).unwrap().1.is_empty());
    let cfg = SynthConfig::default();
    assert_eq!(synth_scene(&cfg, 7).unwrap(), synth_scene(&cfg, 7).unwrap());
    let too_big = SynthConfig { max_size_px: 200, ..SynthConfig::default() };
    assert!(synth_scene(&too_big, 0).is_err());
}

#[test]
fn synth_boxes_valid_over_many_scenes() {
    let cfg = SynthConfig::default();
    let min = 2.0 / cfg.image_size as f64;
    let mut total = 0;
    for i in 0..1000 {
        let (img, boxes) = synth_scene(&cfg, i).unwrap();
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(boxes.len() <= cfg.max_objects);
        for b in &boxes {
            let (x0, y0, x1, y1) = b.bbox.corners();
            assert!(x0 >= -1e-12 && y0 >= -1e-12 && x1 <= 1.0 + 1e-12 && y1 <= 1.0 + 1e-12, "scene {i}: {b:?}");
            assert!(b.bbox.w >= min && b.bbox.h >= min, "scene {i}: {b:?}");
            assert!(b.class_id < cfg.num_classes);
        }
        total += boxes.len();
    }
    assert!(total >= 1000 * cfg.min_objects / 2);
}

fn write(dir: &Path, name: &str, contents: &[u8]) {
    std::fs::write(dir.join(name), contents).unwrap();
}

#[test]
fn manifest_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["c", "a", "b"] {
        write(d, &format!("{name}.ppm"), b"P6\n1 1\n255\n\x00\x00\x00");
        write(d, &format!("{name}.txt"), b"0 0.5 0.5 0.2 0.2\n");
    }
    write(d, "list.txt", b"# three scenes\nc.ppm\na.ppm\n\nb.ppm\n");
    let m = load_manifest(d.join("list.txt")).unwrap();
    let names: Vec<_> = m.entries.iter().map(|e| e.image.file_name().unwrap().to_owned()).collect();
    assert_eq!(names, ["c.ppm", "a.ppm", "b.ppm"]);

    std::fs::remove_file(d.join("a.txt")).unwrap();
    write(d, "list2.txt", b"c.ppm\na.ppm\nzz.ppm\n");
    let msg = load_manifest(d.join("list2.txt")).unwrap_err().to_string();
    let full = format!("{msg} {:?}", load_manifest(d.join("list2.txt")).unwrap_err());
    assert!(full.contains("a.txt") && full.contains("zz.ppm") && full.contains("zz.txt"), "{full}");

    write(d, "empty.txt", b"# nothing\n");
    assert!(load_manifest(d.join("empty.txt")).is_err());
}

#[test]
fn synthetic_dataset_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { seed: 4, ..SynthConfig::default() };
    let manifest = write_synthetic_dataset(&cfg, 3, dir.path()).unwrap();
    let m = load_manifest(&manifest).unwrap();
    assert_eq!(m.len(), 3);
    assert_eq!(m.classes, cfg.class_names());
    for i in 0..3 {
        let (image, boxes) = synth_scene(&cfg, i).unwrap();
        let (sample, tr) = m.load_sample(i, 152).unwrap();
        assert_eq!((tr.scale, tr.pad_x, tr.pad_y), (1.0, 0, 0));
        // pixel values survive 8-bit storage to within half a level
        for (a, b) in sample.image.data().iter().zip(image.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        for (a, b) in sample.boxes.iter().zip(&boxes) {
            assert_eq!(a.class_id, b.class_id);
            assert!((a.bbox.cx - b.bbox.cx).abs() < 1e-6 && (a.bbox.w - b.bbox.w).abs() < 1e-6);
        }
    }
}

proptest! {
    #[test]
    fn annotation_text_round_trip(raw in prop::collection::vec((0usize..20, 0u32..=1_000_000, 0u32..=1_000_000, 1u32..=1_000_000, 1u32..=1_000_000), 0..20)) {
        let boxes: Vec<GroundTruthBox> = raw
            .iter()
            .map(|&(c, x, y, w, h)| GroundTruthBox::new(c, x as f64 / 1e6, y as f64 / 1e6, w as f64 / 1e6, h as f64 / 1e6))
            .collect();
        prop_assert_eq!(parse_annotations_str(&format_annotations(&boxes)).unwrap(), boxes);
    }

    #[test]
    fn letterbox_inverse_on_centers(w in 8usize..400, h in 8usize..400, target in 8usize..640, fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
        let tr = LetterboxTransform::new(w, h, target);
        let b = BBox::new(fx, fy, 0.1, 0.1);
        let back = tr.box_to_source(&tr.box_to_network(&b));
        prop_assert!(((back.cx - b.cx) * w as f64).abs() <= 0.5);
        prop_assert!(((back.cy - b.cy) * h as f64).abs() <= 0.5);
        let (x0, y0) = tr.to_source(tr.pad_x as f64, tr.pad_y as f64);
        prop_assert!(x0.abs() <= 0.51 && y0.abs() <= 0.51);
    }

    #[test]
    fn synthesis_is_pure(seed in any::<u64>(), index in 0usize..10_000) {
        let cfg = SynthConfig { image_size: 64, max_size_px: 20, seed, ..SynthConfig::default() };
        prop_assert_eq!(synth_scene(&cfg, index).unwrap(), synth_scene(&cfg, index).unwrap());
    }
}
