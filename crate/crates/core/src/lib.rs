pub mod analysis;
pub mod codebook;
pub mod corpus;
pub mod error;
pub mod parser;
pub mod pipeline;
pub mod gateway;
pub mod metrics;
pub mod prompt;
pub mod review;
pub mod rundir;

pub use error::{Error, Result};
