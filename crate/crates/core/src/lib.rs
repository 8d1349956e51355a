pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
