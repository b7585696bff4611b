//! Dataset manifest (comma-separated with a header row) and in-memory
//! samples.
//!
//! Columns: `id,path,width,height,rg,f1,...,f10,detection`. Paths are
//! relative to the manifest's directory; `detection` may be empty.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{self, DetectionError, DiscDetection};
use crate::preprocess::{self, PreprocessError, RgbImage};

pub const NUM_FEATURES: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing input {0}")]
    Missing(PathBuf),
    #[error("manifest {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("manifest row {row}: {reason}")]
    Invalid { row: usize, reason: String },
    #[error(transparent)]
    Image(#[from] PreprocessError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
}

/// Binary classification target: the glaucoma referral label or one of the
/// ten feature flags (numbered from 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Glaucoma,
    Feature(u8),
}

impl Task {
    /// Glaucoma followed by features 1 to 10.
    pub fn all() -> Vec<Task> {
        std::iter::once(Task::Glaucoma)
            .chain((1..=NUM_FEATURES as u8).map(Task::Feature))
            .collect()
    }

    pub fn label(&self, sample: &Sample) -> bool {
        match *self {
            Task::Glaucoma => sample.rg,
            Task::Feature(k) => sample.features[k as usize - 1],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Glaucoma => write!(f, "glaucoma"),
            Task::Feature(k) => write!(f, "feature{k}"),
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "glaucoma" {
            return Ok(Task::Glaucoma);
        }
        s.strip_prefix("feature")
            .and_then(|k| k.parse::<u8>().ok())
            .filter(|k| (1..=NUM_FEATURES as u8).contains(k))
            .map(Task::Feature)
            .ok_or_else(|| format!("unknown task `{s}` (expected glaucoma or feature1..feature10)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub rg: u8,
    pub f1: u8,
    pub f2: u8,
    pub f3: u8,
    pub f4: u8,
    pub f5: u8,
    pub f6: u8,
    pub f7: u8,
    pub f8: u8,
    pub f9: u8,
    pub f10: u8,
    #[serde(default, deserialize_with = "empty_path")]
    pub detection: Option<PathBuf>,
}

fn empty_path<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<PathBuf>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.trim().is_empty()).map(PathBuf::from))
}

impl ManifestRow {
    pub fn features(&self) -> [u8; NUM_FEATURES] {
        [
            self.f1, self.f2, self.f3, self.f4, self.f5, self.f6, self.f7, self.f8, self.f9, self.f10,
        ]
    }

    pub fn set_features(&mut self, flags: &[bool; NUM_FEATURES]) {
        let f = flags.map(u8::from);
        [
            self.f1, self.f2, self.f3, self.f4, self.f5, self.f6, self.f7, self.f8, self.f9, self.f10,
        ] = f;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

/// One labelled fundus image with its detector output.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub rg: bool,
    pub features: [bool; NUM_FEATURES],
    pub detections: Vec<DiscDetection>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        if !path.is_file() {
            return Err(DatasetError::Missing(path.to_path_buf()));
        }
        let csv_err = |source| DatasetError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (i, rec) in reader.deserialize::<ManifestRow>().enumerate() {
            let row = rec.map_err(csv_err)?;
            let line = i + 1;
            let bad = |reason: String| DatasetError::Invalid { row: line, reason };
            if !seen.insert(row.id.clone()) {
                return Err(bad(format!("duplicate image id {}", row.id)));
            }
            if row.rg > 1 || row.features().iter().any(|&f| f > 1) {
                return Err(bad("labels must be 0 or 1".into()));
            }
            if row.width == 0 || row.height == 0 {
                return Err(bad("image extents must be positive".into()));
            }
            rows.push(row);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, rows })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let csv_err = |source| DatasetError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| csv_err(e.into()))?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// `(width, height)` per image id.
    pub fn extents(&self) -> BTreeMap<String, (u32, u32)> {
        self.rows
            .iter()
            .map(|r| (r.id.clone(), (r.width, r.height)))
            .collect()
    }

    /// Checks that every referenced file exists.
    pub fn check_paths(&self) -> Result<(), DatasetError> {
        for row in &self.rows {
            let img = self.resolve(&row.path);
            if !img.is_file() {
                return Err(DatasetError::Missing(img));
            }
            if let Some(d) = &row.detection {
                let d = self.resolve(d);
                if !d.is_file() {
                    return Err(DatasetError::Missing(d));
                }
            }
        }
        Ok(())
    }

    pub fn load_sample(&self, row_index: usize) -> Result<Sample, DatasetError> {
        let row = &self.rows[row_index];
        let img_path = self.resolve(&row.path);
        if !img_path.is_file() {
            return Err(DatasetError::Missing(img_path));
        }
        let image = preprocess::read_image(&img_path)?;
        if image.dimensions() != (row.width, row.height) {
            return Err(DatasetError::Invalid {
                row: row_index + 1,
                reason: format!(
                    "{} is {}x{}, manifest says {}x{}",
                    img_path.display(),
                    image.width(),
                    image.height(),
                    row.width,
                    row.height
                ),
            });
        }
        let detections = match &row.detection {
            Some(p) => {
                let p = self.resolve(p);
                if !p.is_file() {
                    return Err(DatasetError::Missing(p));
                }
                detection::load_detection_file(&p, row.width, row.height)?
            }
            None => Vec::new(),
        };
        Ok(Sample {
            id: row.id.clone(),
            image,
            rg: row.rg == 1,
            features: row.features().map(|f| f == 1),
            detections,
        })
    }

    pub fn load_samples(&self) -> Result<Vec<Sample>, DatasetError> {
        (0..self.rows.len()).map(|i| self.load_sample(i)).collect()
    }
}
