//! File formats, training loop, benchmarking and evaluation around
//! [`lffd_core`].

pub mod annotations;
pub mod bench;
pub mod config;
pub mod dataset;
pub mod detections;
pub mod error;
pub mod eval;
pub mod exec;
pub mod image_io;
pub mod inspect;
pub mod model_io;
pub mod train_loop;

pub use error::{Error, Result};
