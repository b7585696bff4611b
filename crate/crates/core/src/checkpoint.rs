//! Checkpoint files: a text header (format version, task, model and
//! preprocessing settings, one line per parameter tensor) followed by the
//! raw little-endian `f32` values in header order.
//!
//! A classifier bank is a directory holding one checkpoint per trained task
//! plus `bank.txt` listing the members and any skipped tasks.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::Task;
use crate::model::{BrighteyeModel, ModelConfig};
use crate::params::ParamSet;
use crate::preprocess::PreprocessConfig;
use crate::tensor::Tensor;
use crate::train::{ClassifierBank, SkipRecord};

const MAGIC: &str = "brighteye-checkpoint 1";
const BANK_MAGIC: &str = "brighteye-bank 1";
pub const BANK_INDEX: &str = "bank.txt";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("missing checkpoint {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed checkpoint: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: incompatible checkpoint: {reason}")]
    Incompatible { path: PathBuf, reason: String },
}

/// A trained classifier together with the settings it was trained under.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub task: Task,
    pub preprocess: PreprocessConfig,
    pub model: BrighteyeModel<f32>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        header.push_str(&format!("task {}\n", self.task));
        let cfg = serde_json::to_string(self.model.config()).expect("config serializes");
        header.push_str(&format!("model {cfg}\n"));
        let pre = serde_json::to_string(&self.preprocess).expect("config serializes");
        header.push_str(&format!("preprocess {pre}\n"));
        for p in self.model.params.iter() {
            let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
            header.push_str(&format!("param {} {}\n", p.name, dims.join("x")));
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        for p in self.model.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let fmt = |reason: String| CheckpointError::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut reader = BufReader::new(bytes);
        let mut next_line = || -> Result<String, CheckpointError> {
            let mut line = String::new();
            let n = reader.read_line(&mut line).map_err(io_err(path))?;
            if n == 0 {
                return Err(fmt("unexpected end of header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        let magic = next_line()?;
        if magic != MAGIC {
            return Err(CheckpointError::Incompatible {
                path: path.to_path_buf(),
                reason: format!("unsupported header `{magic}`"),
            });
        }
        let field = |line: String, key: &str| -> Result<String, CheckpointError> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| fmt(format!("expected `{key}` line, found `{line}`")))
        };
        let task: Task = field(next_line()?, "task")?.parse().map_err(fmt)?;
        let config: ModelConfig =
            serde_json::from_str(&field(next_line()?, "model")?).map_err(|e| fmt(format!("model settings: {e}")))?;
        let preprocess: PreprocessConfig = serde_json::from_str(&field(next_line()?, "preprocess")?)
            .map_err(|e| fmt(format!("preprocess settings: {e}")))?;
        let mut shapes = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let rest = field(line, "param")?;
            let (name, dims) = rest
                .split_once(' ')
                .ok_or_else(|| fmt(format!("bad parameter line `{rest}`")))?;
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| fmt(format!("bad shape `{dims}`: {e}")))?;
            shapes.push((name.to_string(), shape));
        }
        drop(next_line);
        let header_len = bytes.len() - reader.get_ref().len() - reader.buffer().len();
        let mut body = &bytes[header_len..];
        let mut params = ParamSet::new();
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            if body.len() < 4 * n {
                return Err(fmt(format!("truncated data for {name}")));
            }
            let mut buf = vec![0u8; 4 * n];
            body.read_exact(&mut buf).map_err(io_err(path))?;
            let data = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(name, Tensor::new(shape, data).map_err(|e| fmt(e.to_string()))?);
        }
        if !body.is_empty() {
            return Err(fmt(format!("{} trailing bytes", body.len())));
        }
        let model = BrighteyeModel::from_params(config, params).map_err(|e| CheckpointError::Incompatible {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            task,
            preprocess,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        if !path.is_file() {
            return Err(CheckpointError::Missing(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn checkpoint_file_name(task: Task) -> String {
    format!("{task}.ckpt")
}

impl ClassifierBank {
    /// Writes every member checkpoint and the index into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), CheckpointError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut index = format!("{BANK_MAGIC}\n");
        for (task, model) in &self.models {
            let name = checkpoint_file_name(*task);
            Checkpoint {
                task: *task,
                preprocess: self.preprocess.clone(),
                model: model.clone(),
            }
            .save(&dir.join(&name))?;
            index.push_str(&format!("model {task} {name}\n"));
        }
        for s in &self.skipped {
            index.push_str(&format!("skipped {} {}\n", s.task, s.reason));
        }
        let p = dir.join(BANK_INDEX);
        fs::write(&p, index).map_err(io_err(&p))
    }

    /// Loads a bank directory. Members must share model and preprocessing
    /// settings.
    pub fn load(dir: &Path) -> Result<Self, CheckpointError> {
        let index_path = dir.join(BANK_INDEX);
        if !index_path.is_file() {
            return Err(CheckpointError::Missing(index_path));
        }
        let fmt = |reason: String| CheckpointError::Format {
            path: index_path.clone(),
            reason,
        };
        let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
        let mut lines = text.lines();
        if lines.next() != Some(BANK_MAGIC) {
            return Err(CheckpointError::Incompatible {
                path: index_path.clone(),
                reason: "unsupported bank header".into(),
            });
        }
        let mut members: Vec<Checkpoint> = Vec::new();
        let mut skipped = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut parts = line.splitn(3, ' ');
            let (kind, task, rest) = (parts.next(), parts.next(), parts.next().unwrap_or(""));
            let task: Task = task.ok_or_else(|| fmt(format!("bad line `{line}`")))?.parse().map_err(fmt)?;
            match kind {
                Some("model") => {
                    let ck = Checkpoint::load(&dir.join(rest))?;
                    if ck.task != task {
                        return Err(CheckpointError::Incompatible {
                            path: dir.join(rest),
                            reason: format!("index lists {task}, file holds {}", ck.task),
                        });
                    }
                    members.push(ck);
                }
                Some("skipped") => skipped.push(SkipRecord {
                    task,
                    reason: rest.to_string(),
                }),
                _ => return Err(fmt(format!("bad line `{line}`"))),
            }
        }
        let first = members.first().ok_or_else(|| fmt("bank has no members".into()))?;
        let (config, preprocess) = (first.model.config().clone(), first.preprocess.clone());
        let mut models = std::collections::BTreeMap::new();
        for ck in members {
            if *ck.model.config() != config || ck.preprocess != preprocess {
                return Err(CheckpointError::Incompatible {
                    path: dir.join(checkpoint_file_name(ck.task)),
                    reason: "bank members disagree on model or preprocessing settings".into(),
                });
            }
            models.insert(ck.task, ck.model);
        }
        Ok(Self {
            config,
            preprocess,
            models,
            skipped,
        })
    }
}
