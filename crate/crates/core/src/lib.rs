pub mod autodiff;
pub mod data;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod model;
pub mod structured;
pub mod train;

pub use error::{Error, Result};
