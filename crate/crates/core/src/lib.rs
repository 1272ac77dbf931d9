pub mod classify;
pub mod cli;
pub mod cohort;
pub mod config;
pub mod convert;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod gp;
pub mod preprocess;
pub mod survival;
pub mod synth;

pub use error::{Error, Result};
