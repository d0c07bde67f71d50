//! A minimal recurrent network engine: stacked LSTM layers followed by a
//! dense read-out, analytic backpropagation through time, an Adam trainer
//! with gradient clipping and validation checkpointing, and a versioned
//! little-endian model file format.
//!
//! Everything runs single-threaded and is bit-for-bit deterministic for a
//! fixed seed.

mod error;
mod io;
mod lstm;
mod norm;
mod train;

pub use error::NnError;
pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use lstm::{ForwardCache, LossSpan, LstmParams, LstmShape};
pub use norm::Normalizer;
pub use train::{fit_model, train, EpochStats, LstmModel, Sample, TrainConfig, TrainReport};

pub type Result<T> = std::result::Result<T, NnError>;
