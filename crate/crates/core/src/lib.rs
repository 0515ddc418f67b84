//! Multi-domain, multi-definition facial landmark localization.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod schema;
pub mod tensor;
pub mod train;

pub use error::{MdmdError, Result};
