pub mod annotations;
pub mod arch;
pub mod cascade;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod nn;
pub mod refiner;
pub mod video;

pub use error::{Error, Result};
