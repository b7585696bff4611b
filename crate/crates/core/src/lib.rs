//! Glaucoma screening pipeline: optic-disc ROI preprocessing, a vision
//! transformer with a patch-feature aggregation head, dual-head training and
//! screening metrics.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod detection;
pub mod evaluate;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod preprocess;
pub mod split;
pub mod synth;
pub mod tensor;
pub mod train;

pub use detection::{DiscDetection, RoiPlan};
pub use metrics::{EvalReport, RocCurve};
pub use model::{BrighteyeModel, HeadOutputs, ModelConfig};
pub use tensor::{Activation, Scalar, Tape, Tensor, TensorError, Var};
