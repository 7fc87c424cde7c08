pub mod agents;
pub mod curriculum;
pub mod datasets;
pub mod error;
pub mod federation;
pub mod nn;
pub mod runner;

pub use error::{FlstError, Result};
