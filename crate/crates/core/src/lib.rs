pub mod conversion;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod generator;
pub mod nn;
pub mod recognizer;

pub use error::{Error, Result};
