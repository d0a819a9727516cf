pub mod cli;
pub mod data;
pub mod error;
pub mod hebbian;
pub mod network;
pub mod persistence;
pub mod retrieval;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Real, Tensor};
