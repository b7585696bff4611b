//! Seeded synthetic fundus images for tests and desk-scale experiments.
//!
//! Each image is a black surround with a circular reddish field of view and
//! a bright optic disc placed away from the image center. Referable samples
//! get a large cup; feature `k` darkens a wedge of the rim at angle `36k°`.
//! The disc box is written as the detector output, with a few samples left
//! without a detection and some carrying an extra low-confidence box.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::Rgb;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, DatasetManifest, ManifestRow, Sample, NUM_FEATURES};
use crate::detection::DiscDetection;
use crate::preprocess::{write_ppm, RgbImage};

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Share of referable samples; the count is rounded and exact.
    pub rg_fraction: f64,
    /// Share of samples carrying each feature; exact per feature.
    pub feature_fraction: f64,
    /// Share of samples written without a detection.
    pub missing_detection_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 20,
            seed: 0,
            width: 256,
            height: 256,
            rg_fraction: 0.5,
            feature_fraction: 0.3,
            missing_detection_fraction: 0.05,
        }
    }
}

/// Geometry of the rendered disc, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscTruth {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub cup_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub sample: Sample,
    pub disc: DiscTruth,
}

fn exact_subset(rng: &mut ChaCha8Rng, n: usize, fraction: f64) -> Vec<bool> {
    let k = ((n as f64 * fraction.clamp(0.0, 1.0)).round() as usize).min(n);
    let mut flags: Vec<bool> = (0..n).map(|i| i < k).collect();
    flags.shuffle(rng);
    flags
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn render(
    rng: &mut ChaCha8Rng,
    width: u32,
    height: u32,
    disc: &DiscTruth,
    features: &[bool; NUM_FEATURES],
) -> RgbImage {
    let s = width.min(height) as f64;
    let (fx, fy) = (width as f64 / 2.0, height as f64 / 2.0);
    let fov = 0.46 * s;
    let tint = [rng.random_range(150.0..190.0), rng.random_range(55.0..85.0), rng.random_range(20.0..40.0)];
    let shade = [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)];
    let vessel_phase = rng.random_range(0.0..2.0 * PI);
    let noise: Vec<f64> = (0..(width * height) as usize).map(|_| rng.random_range(-6.0..6.0)).collect();
    let notch_half = 15f64.to_radians();
    let cup_r = disc.radius * disc.cup_ratio;

    RgbImage::from_fn(width, height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let rf = ((px - fx).powi(2) + (py - fy).powi(2)).sqrt();
        if rf > fov {
            return Rgb([0, 0, 0]);
        }
        let (dx, dy) = (px - disc.cx, py - disc.cy);
        let rd = (dx * dx + dy * dy).sqrt();
        let vignette = 1.0 - 0.35 * (rf / fov).powi(2) + shade[0] * (px - fx) / s + shade[1] * (py - fy) / s;
        let mut c = tint.map(|v| v * vignette);
        // faint vessels radiating from the disc
        let theta = dy.atan2(dx);
        let vessel = (4.0 * theta + vessel_phase).cos().powi(16) * smoothstep(disc.radius, 1.6 * disc.radius, rd);
        c = mix(c, [90.0, 20.0, 15.0], 0.5 * vessel);

        let rim = [235.0, 190.0, 110.0];
        let mut inside = rim;
        // screen-space angle measured counter-clockwise from +x
        let screen = (-dy).atan2(dx);
        if rd > cup_r {
            for (k, _) in features.iter().enumerate().filter(|(_, &on)| on) {
                let at = (36.0 * (k as f64 + 1.0)).to_radians();
                let w = 1.0 - smoothstep(notch_half * 0.7, notch_half, angle_diff(screen, at));
                inside = mix(inside, [120.0, 60.0, 35.0], w);
            }
        }
        let cup = 1.0 - smoothstep(cup_r - 1.0, cup_r + 1.0, rd);
        inside = mix(inside, [255.0, 245.0, 215.0], cup);
        let disc_w = 1.0 - smoothstep(disc.radius - 1.0, disc.radius + 1.0, rd);
        c = mix(c, inside, disc_w);

        let edge = smoothstep(fov - 1.5, fov, rf);
        let n = noise[(y * width + x) as usize];
        Rgb(c.map(|v| (((v + n) * (1.0 - edge)).round()).clamp(0.0, 255.0) as u8))
    })
}

/// Generates `cfg.n` samples in memory. Ids are `s0000`, `s0001`, ...
pub fn generate(cfg: &SynthConfig) -> Vec<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let rg = exact_subset(&mut rng, n, cfg.rg_fraction);
    let mut feature_cols = Vec::with_capacity(NUM_FEATURES);
    for _ in 0..NUM_FEATURES {
        feature_cols.push(exact_subset(&mut rng, n, cfg.feature_fraction));
    }
    let missing = exact_subset(&mut rng, n, cfg.missing_detection_fraction);
    let s = cfg.width.min(cfg.height) as f64;
    let (fx, fy) = (cfg.width as f64 / 2.0, cfg.height as f64 / 2.0);

    (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xD15C_0000 + i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let radius = r.random_range(0.045..0.06) * s;
            let offset = r.random_range(0.22..0.32) * s;
            let phi = r.random_range(0.0..2.0 * PI);
            let cup_ratio = if rg[i] {
                r.random_range(0.65..0.78)
            } else {
                r.random_range(0.25..0.4)
            };
            let disc = DiscTruth {
                cx: fx + offset * phi.cos(),
                cy: fy + offset * phi.sin(),
                radius,
                cup_ratio,
            };
            let features: [bool; NUM_FEATURES] = std::array::from_fn(|k| feature_cols[k][i]);
            let image = render(&mut r, cfg.width, cfg.height, &disc, &features);

            let mut detections = Vec::new();
            if !missing[i] {
                let jitter = |r: &mut ChaCha8Rng, v: f64, amount: f64| v + r.random_range(-amount..amount);
                let d = 2.0 * radius;
                detections.push(DiscDetection {
                    cx: jitter(&mut r, disc.cx, 0.05 * d),
                    cy: jitter(&mut r, disc.cy, 0.05 * d),
                    w: jitter(&mut r, d, 0.05 * d),
                    h: jitter(&mut r, d, 0.05 * d),
                    confidence: r.random_range(0.6..0.99),
                });
                if r.random::<f64>() < 0.2 {
                    detections.push(DiscDetection {
                        cx: r.random_range(0.2..0.8) * cfg.width as f64,
                        cy: r.random_range(0.2..0.8) * cfg.height as f64,
                        w: d,
                        h: d,
                        confidence: r.random_range(0.05..0.2),
                    });
                }
            }
            SynthSample {
                sample: Sample {
                    id: format!("s{i:04}"),
                    image,
                    rg: rg[i],
                    features,
                    detections,
                },
                disc,
            }
        })
        .collect()
}

/// Writes images (PPM), detection files and the manifest under `dir`.
pub fn write_dataset(dir: &Path, samples: &[SynthSample]) -> Result<DatasetManifest, DatasetError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| DatasetError::Invalid {
            row: 0,
            reason: format!("{}: {e}", p.display()),
        }
    };
    let images = dir.join("images");
    let dets = dir.join("detections");
    fs::create_dir_all(&images).map_err(io(&images))?;
    fs::create_dir_all(&dets).map_err(io(&dets))?;
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let s = &s.sample;
        let (w, h) = s.image.dimensions();
        let rel_img = PathBuf::from("images").join(format!("{}.ppm", s.id));
        write_ppm(&dir.join(&rel_img), &s.image)?;
        let detection = if s.detections.is_empty() {
            None
        } else {
            let rel = PathBuf::from("detections").join(format!("{}.txt", s.id));
            let text: String = s.detections.iter().map(|d| d.to_normalized_line(w, h) + "\n").collect();
            let p = dir.join(&rel);
            fs::write(&p, text).map_err(io(&p))?;
            Some(rel)
        };
        let mut row = ManifestRow {
            id: s.id.clone(),
            path: rel_img,
            width: w,
            height: h,
            rg: s.rg as u8,
            f1: 0,
            f2: 0,
            f3: 0,
            f4: 0,
            f5: 0,
            f6: 0,
            f7: 0,
            f8: 0,
            f9: 0,
            f10: 0,
            detection,
        };
        row.set_features(&s.features);
        rows.push(row);
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        rows,
    };
    manifest.write(&dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::RoiBox;

    #[test]
    fn exact_label_counts() {
        let cfg = SynthConfig {
            n: 40,
            rg_fraction: 0.25,
            feature_fraction: 0.5,
            width: 64,
            height: 64,
            ..SynthConfig::default()
        };
        let s = generate(&cfg);
        assert_eq!(s.iter().filter(|s| s.sample.rg).count(), 10);
        for k in 0..NUM_FEATURES {
            assert_eq!(s.iter().filter(|s| s.sample.features[k]).count(), 20);
        }
        assert_eq!(s.iter().filter(|s| s.sample.detections.is_empty()).count(), 2);
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig {
            n: 4,
            width: 48,
            height: 48,
            ..SynthConfig::default()
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.sample.image, y.sample.image);
            assert_eq!(x.sample.detections, y.sample.detections);
        }
        let c = generate(&SynthConfig { seed: 1, ..cfg });
        assert_ne!(a[0].sample.image, c[0].sample.image);
    }

    #[test]
    fn surround_is_black_and_disc_is_bright() {
        let s = &generate(&SynthConfig {
            n: 1,
            ..SynthConfig::default()
        })[0];
        assert_eq!(s.sample.image.get_pixel(0, 0).0, [0, 0, 0]);
        let p = s.sample.image.get_pixel(s.disc.cx as u32, s.disc.cy as u32).0;
        assert!(p[0] > 200 && p[1] > 170, "{p:?}");
    }

    #[test]
    fn detection_crop_contains_disc() {
        for s in generate(&SynthConfig {
            n: 30,
            ..SynthConfig::default()
        }) {
            let Some(det) = s.sample.detections.first() else { continue };
            let (x0, x1, y0, y1) = RoiBox::from_detection(det).unwrap().span();
            let d = s.disc;
            assert!((x0 as f64) <= d.cx - d.radius && (x1 as f64) >= d.cx + d.radius);
            assert!((y0 as f64) <= d.cy - d.radius && (y1 as f64) >= d.cy + d.radius);
        }
    }
}
