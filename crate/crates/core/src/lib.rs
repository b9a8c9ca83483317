pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod math;
pub mod models;
pub mod pipeline;
pub mod separation;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
