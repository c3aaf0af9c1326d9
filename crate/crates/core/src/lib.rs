pub mod analysis;
pub mod config;
pub mod data;
pub mod decoder;
pub mod embeddings;
pub mod error;
pub mod exec;
pub mod fixture;
pub mod global_encoder;
pub mod gradcheck;
pub mod layers;
pub mod local_encoder;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{LgcmConfig, Model, Variant};
pub use tensor::{Gradients, Tape, Tensor, Var};
