use avdnet::dataio::{decode_pgm, synth_scene, SynthConfig};
use avdnet::network::LAYER_TAPS;
use avdnet::rfav::{quantize_maps, rfav, rfav_layer, QuantizedStack};
use avdnet::{Network, NetworkSpec, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-pixel mode by counting every level, smallest level on ties.
fn oracle(stack: &QuantizedStack) -> Vec<u8> {
    let plane = stack.height * stack.width;
    (0..plane)
        .map(|p| {
            let column: Vec<u8> = (0..stack.depth).map(|k| stack.map(k)[p]).collect();
            let count = |z: u8| column.iter().filter(|&&v| v == z).count();
            let best = (0..=255u8).map(count).max().unwrap();
            (0..=255u8).find(|&z| count(z) == best).unwrap()
        })
        .collect()
}

fn stack(depth: usize, values: Vec<u8>) -> QuantizedStack {
    QuantizedStack::new("test", depth, 1, values.len() / depth, values).unwrap()
}

#[test]
fn pixel_examples() {
    assert_eq!(rfav(&stack(3, vec![5, 5, 200])).pixels, vec![5]);
    assert_eq!(rfav(&stack(2, vec![7, 3])).pixels, vec![3]);
    assert_eq!(rfav(&stack(1, vec![9, 0, 255])).pixels, vec![9, 0, 255]);
}

#[test]
fn quantization_examples() {
    let levels = Tensor::from_vec(&[2, 16, 8], (0..256).map(|v| v as f64).collect()).unwrap();
    let q = quantize_maps(&levels, "x").unwrap();
    assert_eq!(q.values, (0..=255u8).collect::<Vec<_>>());

    let flat = Tensor::full(&[3, 2, 2], 4.2f32);
    assert!(quantize_maps(&flat, "x").unwrap().values.iter().all(|&v| v == 0));

    let ends = Tensor::from_vec(&[2, 1, 1], vec![0.0f32, 1.0]).unwrap();
    assert_eq!(quantize_maps(&ends, "x").unwrap().values, vec![0, 255]);

    let bad = Tensor::from_vec(&[2, 1, 1], vec![0.0f32, f32::NAN]).unwrap();
    assert!(quantize_maps(&bad, "x").is_err());
}

#[test]
fn every_tap_gives_a_pgm_of_layer_extent() {
    let spec = NetworkSpec::tiny(4);
    let mut net = Network::<f32>::new(&spec).unwrap();
    net.init_weights(5);
    let (image, _) = synth_scene(&SynthConfig::default(), 0).unwrap();
    for layer in LAYER_TAPS {
        let feature = net.feature_map(&image, layer).unwrap();
        let img = rfav_layer(&net, &image, layer).unwrap();
        let (_, h, w) = (feature.shape()[0], feature.shape()[1], feature.shape()[2]);
        assert_eq!((img.height, img.width), (h, w), "{layer}");
        let (pw, ph, px) = decode_pgm(&img.to_pgm()).unwrap();
        assert_eq!((pw, ph), (w, h));
        assert_eq!(px, img.pixels);
    }
    assert!(rfav_layer(&net, &image, "convres9").is_err());
}

fn stack_strategy() -> impl Strategy<Value = (usize, usize, Vec<u8>)> {
    (1usize..40, 1usize..20).prop_flat_map(|(d, plane)| {
        // few distinct levels make ties and repeats common
        let level = prop_oneof![0u8..4, any::<u8>()];
        (Just(d), Just(plane), prop::collection::vec(level, d * plane))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_counting_oracle((d, plane, values) in stack_strategy()) {
        let s = QuantizedStack::new("p", d, 1, plane, values).unwrap();
        let out = rfav(&s);
        prop_assert_eq!(&out.pixels, &oracle(&s));
        for (p, &v) in out.pixels.iter().enumerate() {
            let n = (0..d).filter(|&k| s.map(k)[p] == v).count();
            prop_assert!(n >= d.div_ceil(256));
        }
    }

    #[test]
    fn depth_permutation_invariant((d, plane, values) in stack_strategy(), seed in any::<u64>()) {
        let s = QuantizedStack::new("p", d, 1, plane, values).unwrap();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<u8> = order.iter().flat_map(|&k| s.map(k).to_vec()).collect();
        let p = QuantizedStack::new("p", d, 1, plane, permuted).unwrap();
        prop_assert_eq!(rfav(&p), rfav(&s));
    }

    #[test]
    fn identical_maps_reproduce_the_map(map in prop::collection::vec(any::<u8>(), 1..30), d in 1usize..300) {
        let values: Vec<u8> = (0..d).flat_map(|_| map.clone()).collect();
        let s = QuantizedStack::new("p", d, 1, map.len(), values).unwrap();
        prop_assert_eq!(rfav(&s).pixels, map);
    }
}
