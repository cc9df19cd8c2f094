//! Fair unsupervised graph anomaly detection with a disentangled variational
//! graph autoencoder.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod training;

pub use autodiff::{AdamState, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use graph::{AttributedGraph, SparseMatrix};
pub use losses::{LossReport, LossWeights, Reduction};
pub use metrics::EvalReport;
pub use model::{ModelConfig, ModelParams};
pub use synth::{generate_graph, GeneratorConfig, InjectionReport};
pub use training::{BaselineConfig, Regularizer, TrainConfig, TrainedModel, Variant};
