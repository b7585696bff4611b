//! Image preprocessing: disc-centred ROI cropping, background removal,
//! bilinear resizing, augmentation, and image file IO.
//!
//! Pixel coordinates use half-pixel centres: pixel `(x, y)` covers
//! `[x, x+1) × [y, y+1)` and its centre is `(x + 0.5, y + 0.5)`.

use std::collections::VecDeque;
use std::path::Path;

use image::{ImageFormat, Rgb};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{select_roi, DiscDetection, RoiPlan};
use crate::tensor::Scalar;

pub use image::RgbImage;

/// Default near-black threshold for background removal (≈ 10/255).
pub const DEFAULT_BG_THRESHOLD: u8 = 10;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid detection: width {w} and height {h} must be positive")]
    InvalidDetection { w: f64, h: f64 },
    #[error("resize target must be positive")]
    ZeroTarget,
    #[error("image {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Square crop window centred on the disc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiBox {
    pub cx: f64,
    pub cy: f64,
    pub side: u32,
}

impl RoiBox {
    /// Side is three times the mean disc extent, rounded half away from zero.
    pub fn from_detection(det: &DiscDetection) -> Result<Self, PreprocessError> {
        if !(det.w > 0.0 && det.h > 0.0) {
            return Err(PreprocessError::InvalidDetection { w: det.w, h: det.h });
        }
        let side = ((det.w + det.h) / 2.0 * 3.0).round().max(1.0) as u32;
        Ok(Self {
            cx: det.cx,
            cy: det.cy,
            side,
        })
    }

    /// Top-left pixel of the window (may be negative).
    pub fn origin(&self) -> (i64, i64) {
        let half = self.side as f64 / 2.0;
        ((self.cx - half).round() as i64, (self.cy - half).round() as i64)
    }

    /// Inclusive pixel span `(x0, x1, y0, y1)`.
    pub fn span(&self) -> (i64, i64, i64, i64) {
        let (x0, y0) = self.origin();
        let s = self.side as i64;
        (x0, x0 + s - 1, y0, y0 + s - 1)
    }
}

/// Square crop around the detected disc centre. Regions outside the source
/// image are zero; the window is never shifted to stay inside.
pub fn crop_roi(image: &RgbImage, det: &DiscDetection) -> Result<RgbImage, PreprocessError> {
    let roi = RoiBox::from_detection(det)?;
    let (x0, y0) = roi.origin();
    let (w, h) = (image.width() as i64, image.height() as i64);
    let mut out = RgbImage::new(roi.side, roi.side);
    let s = roi.side as i64;
    // copy the overlapping rectangle row by row
    let (ox0, ox1) = (x0.max(0), (x0 + s).min(w));
    let (oy0, oy1) = (y0.max(0), (y0 + s).min(h));
    if ox0 < ox1 && oy0 < oy1 {
        let src = image.as_raw();
        let dst_stride = roi.side as usize * 3;
        let run = (ox1 - ox0) as usize * 3;
        let dst: &mut [u8] = &mut out;
        for y in oy0..oy1 {
            let s_off = ((y * w + ox0) * 3) as usize;
            let d_off = (y - y0) as usize * dst_stride + (ox0 - x0) as usize * 3;
            dst[d_off..d_off + run].copy_from_slice(&src[s_off..s_off + run]);
        }
    }
    Ok(out)
}

/// Zeroes the near-black region connected (4-neighbourhood) to the image
/// border, where near-black means `max(R, G, B) < tau`.
pub fn remove_background(image: &RgbImage, tau: u8) -> RgbImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let dark = |x: usize, y: usize| {
        let p = image.get_pixel(x as u32, y as u32).0;
        p[0].max(p[1]).max(p[2]) < tau
    };
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, seen: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
        if !seen[y * w + x] && dark(x, y) {
            seen[y * w + x] = true;
            queue.push_back((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut seen, &mut queue);
        seed(x, h - 1, &mut seen, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut seen, &mut queue);
        seed(w - 1, y, &mut seen, &mut queue);
    }
    let mut out = image.clone();
    while let Some((x, y)) = queue.pop_front() {
        out.put_pixel(x as u32, y as u32, Rgb([0, 0, 0]));
        if x > 0 {
            seed(x - 1, y, &mut seen, &mut queue);
        }
        if x + 1 < w {
            seed(x + 1, y, &mut seen, &mut queue);
        }
        if y > 0 {
            seed(x, y - 1, &mut seen, &mut queue);
        }
        if y + 1 < h {
            seed(x, y + 1, &mut seen, &mut queue);
        }
    }
    out
}

fn sample_axis(dst: u32, scale: f64, src_len: u32) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len as usize - 1);
    (i0, i1, pos - i0 as f64)
}

/// Bilinear resize to `target × target` with half-pixel centres and edge
/// clamping.
pub fn resize_bilinear(image: &RgbImage, target: u32) -> Result<RgbImage, PreprocessError> {
    resize_bilinear_to(image, target, target)
}

/// Bilinear resize to `width × height`.
pub fn resize_bilinear_to(image: &RgbImage, width: u32, height: u32) -> Result<RgbImage, PreprocessError> {
    if width == 0 || height == 0 {
        return Err(PreprocessError::ZeroTarget);
    }
    let (sw, sh) = image.dimensions();
    let sx = sw as f64 / width as f64;
    let sy = sh as f64 / height as f64;
    let cols: Vec<_> = (0..width).map(|x| sample_axis(x, sx, sw)).collect();
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        let (y0, y1, fy) = sample_axis(y, sy, sh);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let px = |xx: usize, yy: usize| image.get_pixel(xx as u32, yy as u32).0;
            let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
            let mut v = [0u8; 3];
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bot = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                v[ch] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x as u32, y, Rgb(v));
        }
    }
    Ok(out)
}

/// Ranges for random augmentation. Factor ranges are multiplicative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub p_flip_h: f64,
    pub p_flip_v: f64,
    pub rot_range: (f64, f64),
    pub sat_range: (f64, f64),
    pub bright_range: (f64, f64),
    pub hue_range: (f64, f64),
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            p_flip_h: 0.5,
            p_flip_v: 0.5,
            rot_range: (-10.0, 10.0),
            sat_range: (0.95, 1.05),
            bright_range: (0.95, 1.05),
            hue_range: (0.95, 1.05),
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

impl AugmentParams {
    /// Draws one set of augmentation choices. The number and order of draws
    /// is fixed so a seeded generator replays exactly.
    pub fn draw(&self, rng: &mut impl Rng) -> AugmentDraw {
        let flip_h = rng.random::<f64>() < self.p_flip_h;
        let flip_v = rng.random::<f64>() < self.p_flip_v;
        AugmentDraw {
            flip_h,
            flip_v,
            angle_deg: uniform(rng, self.rot_range),
            saturation: uniform(rng, self.sat_range),
            brightness: uniform(rng, self.bright_range),
            hue: uniform(rng, self.hue_range),
        }
    }
}

/// Concrete augmentation choices for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip_h: bool,
    pub flip_v: bool,
    pub angle_deg: f64,
    pub saturation: f64,
    pub brightness: f64,
    pub hue: f64,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self {
            flip_h: false,
            flip_v: false,
            angle_deg: 0.0,
            saturation: 1.0,
            brightness: 1.0,
            hue: 1.0,
        }
    }
}

pub fn flip_horizontal(image: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(image)
}

pub fn flip_vertical(image: &RgbImage) -> RgbImage {
    image::imageops::flip_vertical(image)
}

/// Rotates counter-clockwise (as displayed) by `angle_deg` about the image
/// centre. Samples falling outside the source read as zero.
pub fn rotate(image: &RgbImage, angle_deg: f64) -> RgbImage {
    let (w, h) = image.dimensions();
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let fetch = |x: i64, y: i64| -> [f64; 3] {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            [0.0; 3]
        } else {
            let p = image.get_pixel(x as u32, y as u32).0;
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    };
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            // inverse rotation; y grows downward, so a visual
            // counter-clockwise turn uses the transposed matrix here
            let sx = cos * dx - sin * dy + cx - 0.5;
            let sy = sin * dx + cos * dy + cy - 0.5;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let (a, b) = (fetch(x0, y0), fetch(x0 + 1, y0));
            let (c, d) = (fetch(x0, y0 + 1), fetch(x0 + 1, y0 + 1));
            let mut v = [0u8; 3];
            for ch in 0..3 {
                let top = a[ch] * (1.0 - fx) + b[ch] * fx;
                let bot = c[ch] * (1.0 - fx) + d[ch] * fx;
                v[ch] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x, y, Rgb(v));
        }
    }
    out
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    [hue, sat, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let c = v * s;
    let hp = h.rem_euclid(1.0) * 6.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Scales saturation and value (clamped to `[0, 1]`) and hue (modulo 1).
pub fn adjust_color(image: &RgbImage, saturation: f64, brightness: f64, hue: f64) -> RgbImage {
    let mut out = image.clone();
    for p in out.pixels_mut() {
        let rgb = [p.0[0] as f64 / 255.0, p.0[1] as f64 / 255.0, p.0[2] as f64 / 255.0];
        let [h, s, v] = rgb_to_hsv(rgb);
        let hsv = [
            (h * hue).rem_euclid(1.0),
            (s * saturation).clamp(0.0, 1.0),
            (v * brightness).clamp(0.0, 1.0),
        ];
        let rgb = hsv_to_rgb(hsv);
        for ch in 0..3 {
            p.0[ch] = (rgb[ch] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Applies flips, then rotation, then colour scaling.
pub fn augment(image: &RgbImage, draw: &AugmentDraw) -> RgbImage {
    let mut img = image.clone();
    if draw.flip_h {
        img = flip_horizontal(&img);
    }
    if draw.flip_v {
        img = flip_vertical(&img);
    }
    if draw.angle_deg != 0.0 {
        img = rotate(&img, draw.angle_deg);
    }
    if draw.saturation != 1.0 || draw.brightness != 1.0 || draw.hue != 1.0 {
        img = adjust_color(&img, draw.saturation, draw.brightness, draw.hue);
    }
    img
}

/// Pixel values scaled to `[0, 1]`, row-major with interleaved channels.
pub fn to_unit_pixels<T: Scalar>(image: &RgbImage) -> Vec<T> {
    let inv = 1.0 / 255.0;
    image.as_raw().iter().map(|&v| T::of(v as f64 * inv)).collect()
}

/// Reads any supported image (P6 PPM or PNG) as 8-bit RGB.
pub fn read_image(path: &Path) -> Result<RgbImage, PreprocessError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| PreprocessError::Image {
            path: path.display().to_string(),
            source,
        })
}

/// Writes a binary PPM (P6).
pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<(), PreprocessError> {
    image
        .save_with_format(path, ImageFormat::Pnm)
        .map_err(|source| PreprocessError::Image {
            path: path.display().to_string(),
            source,
        })
}

/// Preprocessing toggles and sizes shared by training and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub od_crop: bool,
    pub bg_removal: bool,
    pub bg_threshold: u8,
    pub confidence_floor: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            od_crop: true,
            bg_removal: true,
            bg_threshold: DEFAULT_BG_THRESHOLD,
            confidence_floor: crate::detection::DEFAULT_CONFIDENCE_FLOOR,
        }
    }
}

/// Crop plan → crop → background removal → resize, the deterministic part
/// of input preparation shared by training, evaluation and inference.
pub fn prepare_image(
    image: &RgbImage,
    detections: &[DiscDetection],
    config: &PreprocessConfig,
    width: u32,
    height: u32,
) -> Result<(RgbImage, RoiPlan), PreprocessError> {
    let plan = if config.od_crop {
        select_roi(detections, config.confidence_floor)
    } else {
        RoiPlan::FullImage
    };
    let mut img = match &plan {
        RoiPlan::CropDisc(det) => crop_roi(image, det)?,
        RoiPlan::FullImage => image.clone(),
    };
    if config.bg_removal {
        img = remove_background(&img, config.bg_threshold);
    }
    Ok((resize_bilinear_to(&img, width, height)?, plan))
}
