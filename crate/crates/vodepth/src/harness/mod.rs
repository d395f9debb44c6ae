//! Training, evaluation and inference around the model: configuration,
//! optimizer, augmentation, checkpoints and metrics.

pub mod adam;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod train;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{Ablation, Precision, TrainConfig};
pub use evaluate::evaluate;
pub use infer::{infer, InferOutcome};
pub use metrics::MetricsReport;
pub use model::Model;
pub use train::{train, EpochLog};
