//! Coherence-aware aspect-category sentiment analysis.

pub mod config;
pub mod corpus;
pub mod disentangle;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod model;
pub mod numerics;
pub mod syntax;
pub mod trainer;

pub use config::TrainConfig;
pub use corpus::{Label, Polarity, ReviewDoc, SentenceRec, Vocab};
pub use error::{Error, Result};
pub use heads::{evaluate, LossWeights, Metrics};
pub use numerics::{ModelParams, Tensor};
pub use trainer::{train, train_step, TrainState};
