pub mod dynamics;
pub mod error;
pub mod field;
pub mod integrate;
pub mod noise;
pub mod params;
pub mod slowflow;
pub mod spectral;

pub use error::{Error, Result};
