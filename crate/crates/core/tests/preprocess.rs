use brighteye::detection::{parse_detections, select_roi, RoiPlan};
use brighteye::preprocess::{
    augment, crop_roi, prepare_image, remove_background, resize_bilinear_to, rotate, AugmentParams,
    PreprocessConfig, RgbImage, RoiBox,
};
use brighteye::synth::{generate, SynthConfig};
use brighteye::DiscDetection;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn det(cx: f64, cy: f64, w: f64, h: f64, confidence: f64) -> DiscDetection {
    DiscDetection { cx, cy, w, h, confidence }
}

fn noise_image(w: u32, h: u32, seed: u32) -> RgbImage {
    let data = (0..w * h * 3)
        .map(|i| (i.wrapping_mul(2_654_435_761).wrapping_add(seed.wrapping_mul(40_503)) >> 24) as u8)
        .collect();
    RgbImage::from_raw(w, h, data).unwrap()
}

#[test]
fn documented_crop_window_is_exact() {
    let d = det(500.0, 400.0, 100.0, 120.0, 1.0);
    let roi = RoiBox::from_detection(&d).unwrap();
    assert_eq!(roi.side, 330);
    assert_eq!(roi.span(), (335, 664, 235, 564));
    let img = noise_image(1000, 800, 1);
    let crop = crop_roi(&img, &d).unwrap();
    assert_eq!(crop.dimensions(), (330, 330));
    assert_eq!(crop.get_pixel(0, 0), img.get_pixel(335, 235));
    assert_eq!(crop.get_pixel(329, 329), img.get_pixel(664, 564));
}

#[test]
fn synthetic_detections_frame_the_disc() {
    let samples = generate(&SynthConfig {
        n: 60,
        seed: 3,
        ..SynthConfig::default()
    });
    for s in &samples {
        let Some(d) = s.sample.detections.first() else { continue };
        let (x0, x1, y0, y1) = RoiBox::from_detection(d).unwrap().span();
        let t = s.disc;
        assert!(x0 as f64 <= t.cx - t.radius && x1 as f64 >= t.cx + t.radius);
        assert!(y0 as f64 <= t.cy - t.radius && y1 as f64 >= t.cy + t.radius);
        // the disc sits away from the image centre
        let (w, h) = s.sample.image.dimensions();
        assert!(((t.cx - w as f64 / 2.0).powi(2) + (t.cy - h as f64 / 2.0).powi(2)).sqrt() > 0.2 * w as f64);
    }
}

#[test]
fn centered_full_image_detection_equals_fallback() {
    let img = noise_image(90, 90, 5);
    let full = det(45.0, 45.0, 30.0, 30.0, 0.9);
    let cfg = PreprocessConfig::default();
    let (a, plan_a) = prepare_image(&img, &[full], &cfg, 32, 32).unwrap();
    let (b, plan_b) = prepare_image(&img, &[], &cfg, 32, 32).unwrap();
    assert!(matches!(plan_a, RoiPlan::CropDisc(_)));
    assert_eq!(plan_b, RoiPlan::FullImage);
    assert_eq!(a, b);
}

#[test]
fn low_confidence_boxes_fall_back() {
    let text = "0 0.5 0.5 0.1 0.1 0.2\n0 0.3 0.3 0.1 0.1 0.1\n";
    let dets = parse_detections(text, 100, 100, "t").unwrap();
    assert_eq!(select_roi(&dets, 0.25), RoiPlan::FullImage);
    assert!(matches!(select_roi(&dets, 0.15), RoiPlan::CropDisc(d) if d.confidence == 0.2));
}

#[test]
fn augmentation_is_seeded() {
    let img = noise_image(40, 40, 9);
    let params = AugmentParams::default();
    let run = |seed| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        augment(&img, &params.draw(&mut r))
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

proptest! {
    #[test]
    fn crop_side_follows_detection(w in 1.0f64..400.0, h in 1.0f64..400.0, cx in -50.0f64..600.0, cy in -50.0f64..600.0) {
        let d = det(cx, cy, w, h, 1.0);
        let roi = RoiBox::from_detection(&d).unwrap();
        prop_assert_eq!(roi.side as f64, ((w + h) / 2.0 * 3.0).round());
        let (x0, x1, y0, y1) = roi.span();
        prop_assert_eq!(x1 - x0 + 1, roi.side as i64);
        prop_assert_eq!(y1 - y0 + 1, roi.side as i64);
        prop_assert!(((x0 + x1) as f64 / 2.0 - cx).abs() <= 1.0);
    }

    #[test]
    fn background_removal_is_idempotent(seed in 0u32..500, tau in 1u8..60) {
        let img = noise_image(24, 18, seed);
        let once = remove_background(&img, tau);
        prop_assert_eq!(remove_background(&once, tau), once.clone());
        // only pixels darker than the threshold are touched
        for (a, b) in img.pixels().zip(once.pixels()) {
            if a != b {
                prop_assert!(a.0.iter().all(|&c| c < tau));
                prop_assert_eq!(b.0, [0, 0, 0]);
            }
        }
    }

    #[test]
    fn resize_stays_within_source_range(seed in 0u32..500, tw in 1u32..50, th in 1u32..50) {
        let img = noise_image(13, 17, seed);
        let out = resize_bilinear_to(&img, tw, th).unwrap();
        prop_assert_eq!(out.dimensions(), (tw, th));
        for c in 0..3 {
            let lo = img.pixels().map(|p| p.0[c]).min().unwrap();
            let hi = img.pixels().map(|p| p.0[c]).max().unwrap();
            prop_assert!(out.pixels().all(|p| p.0[c] >= lo && p.0[c] <= hi));
        }
    }

    #[test]
    fn full_turn_rotation_is_identity(seed in 0u32..100) {
        let img = noise_image(16, 16, seed);
        prop_assert_eq!(rotate(&img, 360.0), img.clone());
        prop_assert_eq!(rotate(&img, 0.0), img);
    }
}
