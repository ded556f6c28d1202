//! Siamese LSTM metric learning for person re-identification.
//!
//! Each image is a sequence of row feature vectors. A single-layer LSTM reads
//! the rows top to bottom, a learned linear map combines the hidden states
//! into an embedding, and a contrastive loss on pairs pulls matching
//! identities together while pushing hard negatives beyond a margin.
//! Evaluation follows the usual cross-camera CMC / mAP protocol.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod inspect;
mod io_util;
pub mod lstm;
pub mod model;
pub mod numerics;
pub mod training;

pub use dataset::{FeatureSet, Item, RowSequence};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, ScoreMatrix};
pub use lstm::{LstmParams, LstmTrace};
pub use model::{BaselineParams, EmbeddingModel, Label, PairExample, SiameseParams};
pub use numerics::{Matrix, SeededRng};
pub use training::TrainConfig;
