use ivbench_core::image::RgbImage;
use ivbench_core::metrics::*;
use proptest::prelude::*;

fn image(w: usize, h: usize) -> impl Strategy<Value = RgbImage> {
    prop::collection::vec(any::<u8>(), w * h * 3).prop_map(move |d| RgbImage::from_raw(w, h, d).unwrap())
}

fn pair() -> impl Strategy<Value = (RgbImage, RgbImage)> {
    (11usize..28, 11usize..28).prop_flat_map(|(w, h)| (image(w, h), image(w, h)))
}

fn curve() -> impl Strategy<Value = Vec<(f64, f64)>> {
    (1e3f64..1e5, prop::collection::vec((1.2f64..3.0, 0.2f64..3.0), 4..6)).prop_map(|(start, steps)| {
        let mut r = start;
        let mut q = 20.0;
        steps
            .into_iter()
            .map(|(f, dq)| {
                r *= f;
                q += dq;
                (r, q)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_and_ssim_are_symmetric((a, b) in pair()) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!(s1 <= 1.0 + 1e-12 && s1 >= -1.0 - 1e-12);
    }

    #[test]
    fn self_comparison_is_perfect((a, _) in pair()) {
        prop_assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bd_quality_is_antisymmetric(a in curve(), b in curve()) {
        let (ca, cb) = (RdCurve::new("a", a).unwrap(), RdCurve::new("b", b).unwrap());
        match (bd_quality(&ca, &cb), bd_quality(&cb, &ca)) {
            (Ok(x), Ok(y)) => prop_assert!((x + y).abs() < 1e-9, "{} {}", x, y),
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "asymmetric outcome {:?}", other),
        }
    }

    #[test]
    fn bd_of_shifted_curve_is_the_shift(a in curve(), dq in -3.0f64..3.0, k in 0.5f64..2.0) {
        let ca = RdCurve::new("a", a.clone()).unwrap();
        let up = RdCurve::new("q", a.iter().map(|&(r, q)| (r, q + dq)).collect()).unwrap();
        prop_assert!((bd_quality(&ca, &up).unwrap() - dq).abs() < 1e-9);
        let scaled = RdCurve::new("r", a.iter().map(|&(r, q)| (r * k, q)).collect()).unwrap();
        prop_assert!((bd_rate(&ca, &scaled).unwrap() - (k - 1.0) * 100.0).abs() < 1e-6);
    }
}
