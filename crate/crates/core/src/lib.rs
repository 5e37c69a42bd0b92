mod binio;
pub mod error;
pub mod evaluate;
pub mod gait;
pub mod network;
pub mod perturbation;
pub mod relevance;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
