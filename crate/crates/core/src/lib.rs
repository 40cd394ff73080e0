pub mod autodiff;
pub mod data;
pub mod engine;
pub mod error;
pub mod features;
pub mod gbt;
pub mod metrics;
pub mod net;
pub mod stats;

pub use error::{Error, Result};
