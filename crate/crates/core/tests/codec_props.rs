use ivbench_core::codec::*;
use ivbench_core::image::RgbImage;
use ivbench_core::scenegen::{generate, SceneKind, SceneSpec};
use proptest::prelude::*;

fn image(wb: usize, hb: usize, data: &[u8]) -> RgbImage {
    let (w, h) = (wb * 8, hb * 8);
    RgbImage::from_raw(w, h, (0..w * h * 3).map(|i| data[i % data.len()]).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lossless_is_bit_exact(wb in 1usize..6, hb in 1usize..6, data in prop::collection::vec(any::<u8>(), 1..2000)) {
        let img = image(wb, hb, &data);
        let coded = encode(&img, RatePoint::Rp0).unwrap();
        prop_assert_eq!(decode(&coded).unwrap(), img);
    }

    #[test]
    fn lossy_decodes_to_same_dims(wb in 1usize..5, hb in 1usize..5, rp in 1u8..=4, data in prop::collection::vec(any::<u8>(), 1..500)) {
        let img = image(wb, hb, &data);
        let rp = RatePoint::from_index(rp).unwrap();
        let dec = decode(&encode(&img, rp).unwrap()).unwrap();
        prop_assert_eq!(dec.dims(), img.dims());
        let r = spectral_report(&img, &dec).unwrap();
        prop_assert!(r.is_finite() && r >= 0.0);
    }

    #[test]
    fn garbage_payloads_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let _ = decode_payload(&bytes);
    }

    #[test]
    fn mutated_payloads_never_panic(pos in any::<prop::sample::Index>(), val: u8, rp in 0u8..=4) {
        let img = image(3, 2, &[10, 200, 33, 90, 7, 140, 255, 0]);
        let mut p = encode(&img, RatePoint::from_index(rp).unwrap()).unwrap().payload;
        let i = pos.index(p.len());
        p[i] = val;
        let _ = decode_payload(&p);
    }
}

#[test]
fn scene_ladder_sizes_and_spectral_ratios() {
    for kind in [SceneKind::TexturedPlane, SceneKind::NoiseAugmented] {
        let d = generate(&SceneSpec {
            kind,
            splat_count: 20_000,
            resolution: (160, 96),
            noise_sigma: 0.05,
            ..Default::default()
        })
        .unwrap();
        let img = &d.views[1];
        let mut prev_size = usize::MAX;
        let mut prev_ratio = f64::INFINITY;
        for rp in RatePoint::ALL {
            let coded = encode(img, rp).unwrap();
            let dec = decode(&coded).unwrap();
            if rp == RatePoint::Rp0 {
                assert_eq!(&dec, img);
                continue;
            }
            assert!(coded.size_bytes() < prev_size, "{kind:?} {rp}");
            let r = spectral_report(img, &dec).unwrap();
            assert!(r <= 1.0 && r <= prev_ratio, "{kind:?} {rp}: {r}");
            prev_size = coded.size_bytes();
            prev_ratio = r;
        }
    }
}
