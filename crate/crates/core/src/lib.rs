//! Letter-crowding experiments on a small convolutional classifier.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod foveation;
pub mod imaging;
pub mod nn;
pub mod sweep;

pub use error::{Error, Result};
