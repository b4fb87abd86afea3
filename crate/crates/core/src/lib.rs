pub mod arch;
pub mod cli;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod features;
pub mod losses;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
