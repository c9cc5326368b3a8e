pub mod batching;
pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
