mod angle;
pub mod bev_view;
pub mod cli;
pub mod container;
pub mod cross_view;
pub mod dataset;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod range_view;
pub mod scam;
pub mod scan_io;
pub mod synthetic;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
