//! Optic-disc detector output: parsing the normalized box text format and
//! choosing a crop plan per image.
//!
//! Each image `<id>` may have a file `<id>.txt` with one detection per line:
//! `class cx cy w h confidence`, geometry normalized to `[0, 1]` against the
//! image extents.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::{self, MetricsError};

/// Detections below this confidence are ignored.
pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.25;

/// Disc box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscDetection {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl DiscDetection {
    /// One line of the normalized box format (class 0).
    pub fn to_normalized_line(&self, width: u32, height: u32) -> String {
        format!(
            "0 {:.6} {:.6} {:.6} {:.6} {:.6}",
            self.cx / width as f64,
            self.cy / height as f64,
            self.w / width as f64,
            self.h / height as f64,
            self.confidence
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoiPlan {
    CropDisc(DiscDetection),
    FullImage,
}

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("detections for unknown image id {0}")]
    UnknownImage(String),
}

/// Parses one detection file. Results are ordered by confidence, highest
/// first; equal confidences keep file order.
pub fn parse_detections(
    text: &str,
    width: u32,
    height: u32,
    source: &str,
) -> Result<Vec<DiscDetection>, DetectionError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| DetectionError::Malformed {
            path: source.to_string(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", fields.len())));
        }
        fields[0]
            .parse::<u32>()
            .map_err(|_| bad(format!("class `{}` is not an integer", fields[0])))?;
        let mut vals = [0.0f64; 5];
        for (slot, f) in vals.iter_mut().zip(&fields[1..]) {
            let v: f64 = f.parse().map_err(|_| bad(format!("`{f}` is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("value {v} outside [0, 1]")));
            }
            *slot = v;
        }
        let [cx, cy, w, h, confidence] = vals;
        if w <= 0.0 || h <= 0.0 {
            return Err(bad("box width and height must be positive".into()));
        }
        out.push(DiscDetection {
            cx: cx * width as f64,
            cy: cy * height as f64,
            w: w * width as f64,
            h: h * height as f64,
            confidence,
        });
    }
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(out)
}

pub fn load_detection_file(path: &Path, width: u32, height: u32) -> Result<Vec<DiscDetection>, DetectionError> {
    let text = fs::read_to_string(path).map_err(|source| DetectionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_detections(&text, width, height, &path.display().to_string())
}

/// Loads every `<id>.txt` in `dir`. `extents` maps image ids to
/// `(width, height)`; files for ids not listed there are rejected. Images
/// whose file is missing or empty get no entry.
pub fn load_detections(
    dir: &Path,
    extents: &BTreeMap<String, (u32, u32)>,
) -> Result<BTreeMap<String, Vec<DiscDetection>>, DetectionError> {
    let entries = fs::read_dir(dir).map_err(|source| DetectionError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| DetectionError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "txt") {
            files.push(path);
        }
    }
    files.sort();
    let mut out = BTreeMap::new();
    for path in files {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let &(w, h) = extents
            .get(&id)
            .ok_or_else(|| DetectionError::UnknownImage(id.clone()))?;
        let dets = load_detection_file(&path, w, h)?;
        if !dets.is_empty() {
            out.insert(id, dets);
        }
    }
    Ok(out)
}

/// Crops around the most confident detection at or above `floor`; falls
/// back to the full image otherwise.
pub fn select_roi(detections: &[DiscDetection], floor: f64) -> RoiPlan {
    detections
        .iter()
        .filter(|d| d.confidence >= floor)
        .fold(None::<&DiscDetection>, |best, d| match best {
            Some(b) if b.confidence >= d.confidence => Some(b),
            _ => Some(d),
        })
        .map_or(RoiPlan::FullImage, |d| RoiPlan::CropDisc(*d))
}

/// ROC AUC of per-image maximum detector confidence against disc-present
/// flags.
pub fn detector_auc(scores: &[f64], disc_present: &[bool]) -> Result<f64, MetricsError> {
    let curve = metrics::roc_curve(scores, disc_present)?;
    Ok(metrics::auc(&curve))
}
