//! Spiking networks whose weights are generated per task by an LSTM
//! regulator and masked by learned per-task pathways.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod harness;
pub mod model;
pub mod objective;
pub mod optim;
pub mod pathway;
pub mod regulator;
pub mod seed;
pub mod spiking;
pub mod tensor;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use harness::data::{TaskData, TaskSequence};
pub use harness::metrics::{AccuracyMatrix, RunMetrics};
pub use model::{LossGraph, Model, ModelConfig, SorModel, TrainScope};
pub use objective::{LossBreakdown, LossConfig};
pub use pathway::{AvailabilityMap, PathwayMask, SelectionSet};
pub use regulator::{GeneratedWeights, Regulator, TaskId};
pub use spiking::{Architecture, LayerSpec, LifConfig};
pub use tensor::Tensor;
